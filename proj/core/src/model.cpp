#include "soar/model.hpp"

#include "soar/errors.hpp"

#include <json.hpp>

#include <bit>
#include <cmath>

namespace soar::model {

using nlohmann::json;

void ModelConfig::validate() const
{
  auto fail = [](std::string const & what) { throw ConfigError("model config: " + what); };
  if (key_dim == 0 || patch == 0 || height == 0 || width == 0 || embedding_dim == 0 || num_classes == 0 ||
      attn_ratio == 0 || mlp_ratio == 0)
    fail("sizes must be positive");
  for (std::size_t i = 0; i < 3; ++i)
    if (heads[i] == 0 || depth[i] == 0 || dims[i] == 0)
      fail("heads, depth and dims must be positive");
  if (dims[0] > dims[1] || dims[1] > dims[2])
    fail("dims must be non-decreasing");
  if (patch < 2 || !std::has_single_bit(patch))
    fail("patch must be a power of two >= 2");
  if (height % patch != 0 || width % patch != 0)
    fail("image size must be a multiple of the patch size");
  if (dims[0] % (patch / 2) != 0)
    fail("dims[0] must be divisible by patch / 2");
  if (dims[0] % key_dim != 0 || dims[1] % key_dim != 0)
    fail("dims[0] and dims[1] must be multiples of key_dim");
  if (in_channels != 2 && in_channels != 3)
    fail("in_channels must be 2 or 3");
  if (!(drop_path >= 0.0 && drop_path < 1.0))
    fail("drop_path must lie in [0, 1)");
}

ModelConfig ModelConfig::small(std::size_t num_classes)
{
  ModelConfig c;
  c.key_dim = 1;
  c.heads = {2, 2, 2};
  c.depth = {2, 4, 4};
  c.dims = {384, 512, 512};
  c.num_classes = num_classes;
  return c;
}

ModelConfig ModelConfig::base(std::size_t num_classes)
{
  ModelConfig c;
  c.num_classes = num_classes;
  return c;
}

ModelConfig ModelConfig::micro(std::size_t num_classes)
{
  ModelConfig c;
  c.key_dim = 4;
  c.heads = {2, 2, 2};
  c.depth = {1, 1, 1};
  c.dims = {8, 12, 16};
  c.patch = 4;
  c.height = 16;
  c.width = 16;
  c.embedding_dim = 8;
  c.num_classes = num_classes;
  c.drop_path = 0.0;
  return c;
}

ModelConfig ModelConfig::toy(std::size_t num_classes)
{
  ModelConfig c;
  c.key_dim = 8;
  c.heads = {2, 3, 4};
  c.depth = {1, 1, 1};
  c.dims = {16, 24, 32};
  c.patch = 8;
  c.height = 32;
  c.width = 32;
  c.embedding_dim = 32;
  c.num_classes = num_classes;
  c.drop_path = 0.0;
  return c;
}

std::string ModelConfig::to_json() const
{
  json j{
    {"key_dim", key_dim},   {"heads", heads},
    {"depth", depth},       {"dims", dims},
    {"patch", patch},       {"height", height},
    {"width", width},       {"in_channels", in_channels},
    {"embedding_dim", embedding_dim}, {"num_classes", num_classes},
    {"drop_path", drop_path}, {"attn_ratio", attn_ratio},
    {"mlp_ratio", mlp_ratio},
  };
  return j.dump(2);
}

ModelConfig ModelConfig::from_json(std::string const & text)
{
  ModelConfig c;
  try
  {
    json const j = json::parse(text);
    if (j.contains("preset"))
    {
      auto const name = j.at("preset").get<std::string>();
      if (name == "small")
        c = small();
      else if (name == "base")
        c = base();
      else if (name == "micro")
        c = micro();
      else if (name == "toy")
        c = toy();
      else
        throw ConfigError("unknown model preset '" + name + "'");
    }
    auto read = [&](char const * key, auto & field) {
      if (j.contains(key))
        j.at(key).get_to(field);
    };
    read("key_dim", c.key_dim);
    read("heads", c.heads);
    read("depth", c.depth);
    read("dims", c.dims);
    read("patch", c.patch);
    read("height", c.height);
    read("width", c.width);
    read("in_channels", c.in_channels);
    read("embedding_dim", c.embedding_dim);
    read("num_classes", c.num_classes);
    read("drop_path", c.drop_path);
    read("attn_ratio", c.attn_ratio);
    read("mlp_ratio", c.mlp_ratio);
  }
  catch (json::exception const & e)
  {
    throw ConfigError(std::string("model config JSON: ") + e.what());
  }
  c.validate();
  return c;
}

std::string to_string(Phase phase)
{
  switch (phase)
  {
    case Phase::warmup:
      return "warmup";
    case Phase::decenter:
      return "decenter";
    case Phase::prototype:
      return "prototype";
  }
  return "?";
}

StreamImages batch_images(std::span<encoding::EncodedSample const> samples)
{
  if (samples.empty())
    throw ConfigError("cannot batch an empty sample list");
  auto const & first = samples.front().joints;
  ad::Shape const shape{samples.size(), first.rows, first.cols, first.channels};
  std::vector<double> j, v, b;
  std::size_t const per = first.values.size();
  j.reserve(per * samples.size());
  v.reserve(per * samples.size());
  b.reserve(per * samples.size());
  for (auto const & s : samples)
  {
    for (auto const * g : {&s.joints, &s.velocities, &s.bones})
      if (g->rows != first.rows || g->cols != first.cols || g->channels != first.channels)
        throw ConfigError("encoded samples in a batch must share their image shape");
    j.insert(j.end(), s.joints.values.begin(), s.joints.values.end());
    v.insert(v.end(), s.velocities.values.begin(), s.velocities.values.end());
    b.insert(b.end(), s.bones.values.begin(), s.bones.values.end());
  }
  return {Tensor::from(shape, std::move(j)), Tensor::from(shape, std::move(v)), Tensor::from(shape, std::move(b))};
}

Tensor sca(Tensor const & a, Tensor const & b)
{
  if (a.shape() != b.shape())
    throw ConfigError("sca operands must share their shape");
  std::size_t const feat = a.rank() - 1;
  Tensor const ab = ad::mul(ad::softmax(a, feat), b);
  Tensor const ba = ad::mul(ad::softmax(b, feat), a);
  return ad::scale(ad::add(ab, ba), 0.5);
}

MixedAttentionFusion::MixedAttentionFusion(ParamStore & store, std::string const & name, std::size_t d) : dim(d)
{
  norm_j = LayerNorm(store, name + ".norm_j", d);
  norm_v = LayerNorm(store, name + ".norm_v", d);
  norm_b = LayerNorm(store, name + ".norm_b", d);
  q_jv = Linear(store, name + ".q_jv", d, d);
  q_bj = Linear(store, name + ".q_bj", d, d);
  k_jv = Linear(store, name + ".k_jv", 2 * d, d);
  v_jv = Linear(store, name + ".v_jv", 2 * d, d);
  k_bj = Linear(store, name + ".k_bj", 2 * d, d);
  v_bj = Linear(store, name + ".v_bj", 2 * d, d);
  out = Linear(store, name + ".out", d, d, true);
  norm_mlp = LayerNorm(store, name + ".norm_mlp", d);
  mlp = Mlp(store, name + ".mlp", d, 2 * d);
}

Tensor MixedAttentionFusion::mixed_fusion(Tensor const & ej, Tensor const & ev, Tensor const & eb) const
{
  if (ej.shape() != ev.shape() || ej.shape() != eb.shape() || ej.rank() != 3)
    throw ConfigError("mixed fusion expects three [B, N, d] streams of equal shape");
  Tensor const jv = ad::concat({ej, ev}, 2);
  Tensor const bj = ad::concat({eb, ej}, 2);
  Tensor const q = sca(q_jv(ej), q_bj(ej));
  Tensor const k = sca(k_jv(jv), k_bj(bj));
  Tensor const v = sca(v_jv(jv), v_bj(bj));
  Tensor const scores = ad::scale(ad::bmm(q, ad::permute(k, {0, 2, 1})), 1.0 / std::sqrt(static_cast<double>(dim)));
  return out(ad::bmm(ad::softmax(scores, 2), v));
}

Tensor MixedAttentionFusion::operator()(StreamTokens const & s, Mode mode, double drop_path,
                                        std::mt19937_64 & rng) const
{
  Tensor const att = mixed_fusion(norm_j(s.joints), norm_v(s.velocities), norm_b(s.bones));
  Tensor const avg = ad::scale(ad::add(ad::add(s.joints, s.velocities), s.bones), 1.0 / 3.0);
  Tensor const asn = ad::add(avg, ad::drop_path(att, drop_path, mode, rng));
  return ad::add(ad::drop_path(mlp(norm_mlp(asn)), drop_path, mode, rng), asn);
}

PrototypeAugment::PrototypeAugment(ParamStore & store, std::string const & name, std::size_t d)
{
  g1 = Linear(store, name + ".g1", d, d);
  g2 = Linear(store, name + ".g2", d, d);
  g3_in = Linear(store, name + ".g3.in", 2 * d, d);
  g3_out = Linear(store, name + ".g3.out", d, d, true);
}

Tensor PrototypeAugment::operator()(Tensor const & tokens, Tensor const & prototypes) const
{
  if (tokens.rank() != 3 || prototypes.rank() != 2 || prototypes.dim(0) != tokens.dim(0) ||
      prototypes.dim(1) != tokens.dim(2))
    throw ConfigError("feature augmentation expects tokens [B, N, d] and prototypes [B, d]");
  std::size_t const n = tokens.dim(1);
  auto const d = static_cast<double>(tokens.dim(2));
  Tensor const gate = ad::expand(ad::softmax(prototypes, 1), 1, n);
  Tensor const er = g2(ad::mul(gate, tokens));
  Tensor const el = g1(tokens);
  Tensor const w = ad::softmax(ad::scale(ad::bmm(el, ad::permute(er, {0, 2, 1})), 1.0 / std::sqrt(d)), 2);
  Tensor const agg = g3_out(ad::relu(g3_in(ad::concat({ad::bmm(w, er), el}, 2))));
  return ad::relu(ad::add(tokens, agg));
}

Trans4Soar::Trans4Soar(ModelConfig config, std::uint64_t seed, bool dry_run)
  : config_(std::move(config)), store_(seed, dry_run), rng_(seed ^ 0x9e3779b97f4a7c15ULL)
{
  config_.validate();
  auto const & c = config_;
  char const * stream_names[3] = {"joints", "velocities", "bones"};
  for (std::size_t i = 0; i < 3; ++i)
    stems[i] = PatchStem(store_, std::string("stem.") + stream_names[i], c.in_channels, c.dims[0], c.patch);
  fusion = MixedAttentionFusion(store_, "mafm", c.dims[0]);

  for (auto const * branch : {"main", "aux"})
  {
    auto & stages = std::string(branch) == "main" ? main_stages : aux_stages;
    Grid2 grid = c.token_grid();
    for (std::size_t k = 0; k < 3; ++k)
    {
      StageSpec spec;
      spec.in = k == 0 ? c.dims[0] : c.dims[k - 1];
      spec.dim = c.dims[k];
      spec.heads = c.heads[k];
      spec.key_dim = c.key_dim;
      spec.depth = c.depth[k];
      spec.attn_ratio = c.attn_ratio;
      spec.mlp_ratio = c.mlp_ratio;
      spec.subsample = k > 0;
      spec.grid = grid;
      stages[k] = Stage(store_, std::string(branch) + ".stage" + std::to_string(k), spec);
      grid = stages[k].out_grid();
    }
    if (std::string(branch) == "aux")
      augment = PrototypeAugment(store_, "aux.augment", c.dims[1]);
  }

  emb_in = Linear(store_, "emb.in", c.dims[2], c.dims[2]);
  emb_out = Linear(store_, "emb.out", c.dims[2], c.embedding_dim);
  head = Linear(store_, "head", c.embedding_dim, c.num_classes);
}

StreamTokens Trans4Soar::patch_embed(StreamImages const & images, Mode mode)
{
  for (auto const * t : {&images.joints, &images.velocities, &images.bones})
    if (t->rank() != 4 || t->dim(1) != config_.height || t->dim(2) != config_.width ||
        t->dim(3) != config_.in_channels)
      throw ConfigError("stream image shape " + ad::to_string(t->shape()) + " does not match the model config");
  return {stems[0](images.joints, mode), stems[1](images.velocities, mode), stems[2](images.bones, mode)};
}

Tensor Trans4Soar::mafm(StreamTokens const & streams, Mode mode)
{
  return fusion(streams, mode, config_.drop_path, rng_);
}

Tensor Trans4Soar::embed_pooled(Tensor const & pooled) const { return emb_out(ad::relu(emb_in(pooled))); }

MainOutput Trans4Soar::forward_main(Tensor const & mixed, Mode mode)
{
  double const dp = config_.drop_path;
  MainOutput out;
  out.tokens_mid = main_stages[1](main_stages[0](mixed, mode, dp, rng_), mode, dp, rng_);
  out.pooled_mid = ad::mean(out.tokens_mid, 1);
  Tensor const last = main_stages[2](out.tokens_mid, mode, dp, rng_);
  out.embedding = embed_pooled(ad::mean(last, 1));
  out.logits = head(out.embedding);
  return out;
}

Tensor Trans4Soar::forward_aux(Tensor const & mixed, Tensor const & prototypes, Phase phase, Mode mode)
{
  double const dp = config_.drop_path;
  Tensor const mid = aux_stages[1](aux_stages[0](mixed, mode, dp, rng_), mode, dp, rng_);
  std::size_t const batch = mid.dim(0);
  std::size_t const width = mid.dim(2);
  Tensor p;
  switch (phase)
  {
    case Phase::warmup:
      p = ad::mean(mid, 1);
      break;
    case Phase::decenter:
      p = Tensor::zeros({batch, width});
      break;
    case Phase::prototype:
      if (!prototypes.defined())
        throw StateError("prototype phase needs prototype rows");
      if (prototypes.shape() != ad::Shape{batch, width})
        throw ConfigError("prototype rows must be [B, d'], got " + ad::to_string(prototypes.shape()));
      p = prototypes;
      break;
  }
  Tensor const last = aux_stages[2](augment(mid, p), mode, dp, rng_);
  return embed_pooled(ad::mean(last, 1));
}

MainOutput Trans4Soar::forward(StreamImages const & images, Mode mode)
{
  return forward_main(mafm(patch_embed(images, mode), mode), mode);
}

std::size_t Trans4Soar::inference_param_count() const
{
  return store_.count({"stem.", "mafm.", "main.", "emb.", "head."});
}

std::size_t param_count(ModelConfig const & config) { return Trans4Soar(config, 0, true).inference_param_count(); }

}  // namespace soar::model
