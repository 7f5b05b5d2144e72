#include "soar/encoding.hpp"
#include "soar/model.hpp"
#include "soar/skeleton.hpp"
#include "soar/training.hpp"

#include <benchmark/benchmark.h>

#include <vector>

using namespace soar;

namespace {

std::vector<encoding::EncodedSample> encoded_batch(model::ModelConfig const & mc, std::size_t batch)
{
  SynthConfig sc;
  sc.n_classes = 2;
  sc.samples_per_class = batch;
  auto const ds = synth_dataset(sc);
  std::vector<SkeletonSequence> samples(ds.samples.begin(), ds.samples.begin() + static_cast<std::ptrdiff_t>(batch));
  return training::encode_all(samples, ds.topology, mc);
}

void BM_Encode(benchmark::State & state)
{
  SynthConfig sc;
  sc.n_classes = 2;
  sc.samples_per_class = 1;
  auto const ds = synth_dataset(sc);
  for (auto _ : state)
    benchmark::DoNotOptimize(encoding::encode(ds.samples[0], ds.topology, 224, 224, 16));
}
BENCHMARK(BM_Encode)->Unit(benchmark::kMillisecond);

void BM_ForwardEval(benchmark::State & state)
{
  auto const mc = state.range(0) == 0 ? model::ModelConfig::micro(6) : model::ModelConfig::toy(6);
  model::Trans4Soar net(mc, 0);
  auto const images = model::batch_images(encoded_batch(mc, 8));
  ad::NoGradGuard guard;
  for (auto _ : state)
    benchmark::DoNotOptimize(net.forward(images, ad::Mode::eval));
  state.SetLabel(state.range(0) == 0 ? "micro B=8" : "toy B=8");
}
BENCHMARK(BM_ForwardEval)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State & state)
{
  auto const mc = model::ModelConfig::micro(2);
  model::Trans4Soar net(mc, 0);
  auto const batch = encoded_batch(mc, 8);
  std::vector<std::uint32_t> labels;
  std::vector<std::size_t> heads;
  for (std::size_t i = 0; i < batch.size(); ++i)
  {
    labels.push_back(static_cast<std::uint32_t>(i % 2));
    heads.push_back(i % 2);
  }
  training::TrainConfig tc;
  training::PrototypeMemoryBank bank;
  std::mt19937_64 rng(0);
  for (auto _ : state)
  {
    auto parts = training::batch_losses(net, batch, labels, heads, model::Phase::warmup, 0, bank, tc, rng);
    net.params().zero_grad();
    ad::backward(parts.total);
  }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

}  // namespace
