#include "grad_suite.hpp"

#include "soar/errors.hpp"
#include "soar/model.hpp"
#include "soar/params.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

using namespace soar;
using namespace soar::model;

namespace {

std::vector<gradsuite::Case> const & composites()
{
  static auto const cases = gradsuite::composite_cases();
  return cases;
}

class CompositeGradient : public ::testing::TestWithParam<std::size_t> {};

TEST_P(CompositeGradient, MatchesCentralDifferences)
{
  auto const & c = composites()[GetParam()];
  EXPECT_LT(c.run(), 1e-5) << c.name;
}

INSTANTIATE_TEST_SUITE_P(Blocks, CompositeGradient, ::testing::Range<std::size_t>(0, composites().size()),
                         [](auto const & info) { return composites()[info.param].name; });

StreamImages micro_images(ModelConfig const & mc, std::size_t n)
{
  SynthConfig sc;
  sc.n_classes = 2;
  sc.samples_per_class = n;
  sc.frames = 8;
  sc.joints = 6;
  auto const ds = synth_dataset(sc);
  std::vector<encoding::EncodedSample> enc;
  for (std::size_t i = 0; i < n; ++i)
    enc.push_back(encoding::encode(ds.samples[i], ds.topology, mc.height, mc.width, mc.patch));
  return batch_images(enc);
}

}  // namespace

TEST(ParamCount, PresetsWithinTolerance)
{
  double const base = static_cast<double>(param_count(ModelConfig::base()));
  double const small = static_cast<double>(param_count(ModelConfig::small()));
  EXPECT_NEAR(base, 43.8e6, 0.15 * 43.8e6);
  EXPECT_NEAR(small, 23.1e6, 0.15 * 23.1e6);
}

TEST(ParamCount, HandCountedLinear)
{
  ParamStore store(0);
  Linear l(store, "l", 5, 3);
  LinearBN lb(store, "lb", 5, 3);
  EXPECT_EQ(store.count({"l."}), 5u * 3u + 3u);
  EXPECT_EQ(store.count({"lb."}), 5u * 3u + 3u + 3u);  // weight, gain, bias; running stats excluded
}

TEST(ParamCount, DryRunMatchesAllocatedModel)
{
  auto const mc = ModelConfig::micro(4);
  Trans4Soar net(mc, 0);
  EXPECT_EQ(param_count(mc), net.inference_param_count());
  EXPECT_LT(net.inference_param_count(), net.total_param_count());
}

TEST(Init, FusionEqualsStreamAverageInEval)
{
  auto const mc = ModelConfig::micro(4);
  Trans4Soar net(mc, 3);
  ad::NoGradGuard guard;
  auto const s = net.patch_embed(micro_images(mc, 2), ad::Mode::eval);
  auto const mixed = net.mafm(s, ad::Mode::eval);
  auto const avg = ad::scale(ad::add(ad::add(s.joints, s.velocities), s.bones), 1.0 / 3.0);
  ASSERT_EQ(mixed.shape(), avg.shape());
  for (std::size_t i = 0; i < avg.numel(); ++i)
    EXPECT_EQ(mixed.values()[i], avg.values()[i]);
}

TEST(Init, AttentionBlocksStartAsIdentity)
{
  auto const mc = ModelConfig::micro(4);
  Trans4Soar net(mc, 3);
  auto x = gradsuite::leaf({2, 16, 8}, 1);
  std::mt19937_64 rng(0);
  auto y = net.main_stages[0].blocks[0](x, ad::Mode::eval, 0.0, rng);
  for (std::size_t i = 0; i < x.numel(); ++i)
    EXPECT_EQ(y.values()[i], x.values()[i]);
}

TEST(Model, OutputShapes)
{
  auto const mc = ModelConfig::micro(5);
  Trans4Soar net(mc, 0);
  ad::NoGradGuard guard;
  auto const out = net.forward(micro_images(mc, 3), ad::Mode::eval);
  EXPECT_EQ(out.embedding.shape(), (ad::Shape{3, 8}));
  EXPECT_EQ(out.logits.shape(), (ad::Shape{3, 5}));
  EXPECT_EQ(out.pooled_mid.shape(), (ad::Shape{3, 12}));
  auto const mixed = net.mafm(net.patch_embed(micro_images(mc, 3), ad::Mode::eval), ad::Mode::eval);
  auto const aux = net.forward_aux(mixed, {}, Phase::warmup, ad::Mode::eval);
  EXPECT_EQ(aux.shape(), (ad::Shape{3, 8}));
  EXPECT_THROW(net.forward_aux(mixed, {}, Phase::prototype, ad::Mode::eval), StateError);
}

TEST(Model, EvalForwardIsBatchIndependent)
{
  auto const mc = ModelConfig::micro(4);
  Trans4Soar net(mc, 2);
  ad::NoGradGuard guard;
  SynthConfig sc;
  sc.n_classes = 2;
  sc.samples_per_class = 2;
  sc.frames = 8;
  sc.joints = 6;
  auto const ds = synth_dataset(sc);
  std::vector<encoding::EncodedSample> enc;
  for (auto const & s : ds.samples)
    enc.push_back(encoding::encode(s, ds.topology, mc.height, mc.width, mc.patch));
  auto const all = net.forward(batch_images(enc), ad::Mode::eval).embedding;
  for (std::size_t i = 0; i < enc.size(); ++i)
  {
    auto const one = net.forward(batch_images(std::span(enc).subspan(i, 1)), ad::Mode::eval).embedding;
    for (std::size_t k = 0; k < 8; ++k)
      EXPECT_EQ(one.values()[k], all.values()[i * 8 + k]);
  }
}

TEST(Config, JsonRoundTripAndValidation)
{
  auto const mc = ModelConfig::toy(7);
  auto const back = ModelConfig::from_json(mc.to_json());
  EXPECT_EQ(back.to_json(), mc.to_json());
  EXPECT_EQ(ModelConfig::from_json(R"({"preset": "small"})").key_dim, 1u);
  EXPECT_THROW(ModelConfig::from_json(R"({"patch": 6})"), ConfigError);
  EXPECT_THROW(ModelConfig::from_json("{not json"), ConfigError);
}

TEST(Checkpoint, RoundTripRestoresEveryValue)
{
  auto const dir = std::filesystem::temp_directory_path() / "soar_ckpt";
  std::filesystem::remove_all(dir);
  auto const mc = ModelConfig::micro(3);
  Trans4Soar a(mc, 1);
  save_checkpoint(dir, a.params(), R"({"note": 1})");
  Trans4Soar b(mc, 2);
  EXPECT_EQ(load_checkpoint(dir, b.params()), R"({"note":1})");
  auto const & ea = a.params().entries();
  auto const & eb = b.params().entries();
  for (std::size_t i = 0; i < ea.size(); ++i)
    for (std::size_t k = 0; k < ea[i].tensor.numel(); ++k)
      EXPECT_EQ(eb[i].tensor.values()[k], static_cast<double>(static_cast<float>(ea[i].tensor.values()[k])));
}

TEST(Checkpoint, CorruptionAndMismatchAreDetected)
{
  auto const dir = std::filesystem::temp_directory_path() / "soar_ckpt_bad";
  std::filesystem::remove_all(dir);
  Trans4Soar a(ModelConfig::micro(3), 1);
  save_checkpoint(dir, a.params(), "{}");
  Trans4Soar other(ModelConfig::micro(4), 1);
  EXPECT_THROW(load_checkpoint(dir, other.params()), FormatError);
  {
    std::fstream f(dir / "params.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(16);
    char const c = 0x7f;
    f.write(&c, 1);
  }
  EXPECT_THROW(load_checkpoint(dir, a.params()), ChecksumError);
  Trans4Soar dry(ModelConfig::micro(3), 1, true);
  EXPECT_THROW(load_checkpoint(dir, dry.params()), StateError);
}
