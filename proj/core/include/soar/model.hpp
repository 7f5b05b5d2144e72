#pragma once

#include "soar/encoding.hpp"
#include "soar/layers.hpp"
#include "soar/params.hpp"

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <string>

namespace soar::model {

struct ModelConfig {
  std::size_t key_dim = 32;
  std::array<std::size_t, 3> heads{6, 9, 12};
  std::array<std::size_t, 3> depth{4, 4, 4};
  std::array<std::size_t, 3> dims{384, 512, 768};
  std::size_t patch = 16;
  std::size_t height = 224;
  std::size_t width = 224;
  std::size_t in_channels = 3;
  std::size_t embedding_dim = 256;
  std::size_t num_classes = 100;
  double drop_path = 0.1;
  std::size_t attn_ratio = 2;
  std::size_t mlp_ratio = 2;

  // Throws ConfigError.
  void validate() const;
  Grid2 token_grid() const { return {height / patch, width / patch}; }

  static ModelConfig small(std::size_t num_classes = 100);
  static ModelConfig base(std::size_t num_classes = 100);
  // 16x16 input, 4x4 patches, widths 8/12/16: for gradient checks.
  static ModelConfig micro(std::size_t num_classes = 4);
  // 32x32 input, 8x8 patches, widths 16/24/32: for smoke training runs.
  static ModelConfig toy(std::size_t num_classes = 6);

  std::string to_json() const;
  // Missing keys keep the base-preset defaults.
  static ModelConfig from_json(std::string const & text);
};

enum class Phase { warmup, decenter, prototype };
std::string to_string(Phase phase);

// NHWC image batches, one per stream.
struct StreamImages {
  Tensor joints;
  Tensor velocities;
  Tensor bones;
};

StreamImages batch_images(std::span<encoding::EncodedSample const> samples);

// Patch embeddings, [B, N, dims[0]] each.
struct StreamTokens {
  Tensor joints;
  Tensor velocities;
  Tensor bones;
};

// (softmax_feat(a) * b + softmax_feat(b) * a) / 2, elementwise.
Tensor sca(Tensor const & a, Tensor const & b);

class MixedAttentionFusion {
public:
  MixedAttentionFusion() = default;
  MixedAttentionFusion(ParamStore & store, std::string const & name, std::size_t dim);

  // Cross-stream attention on normalised streams; returns E_att.
  Tensor mixed_fusion(Tensor const & ej, Tensor const & ev, Tensor const & eb) const;
  // E_asn = AVG + DP(E_att); E_mixed = DP(MLP(LN(E_asn))) + E_asn.
  Tensor operator()(StreamTokens const & streams, Mode mode, double drop_path, std::mt19937_64 & rng) const;

  LayerNorm norm_j, norm_v, norm_b, norm_mlp;
  Linear q_jv, q_bj, k_jv, v_jv, k_bj, v_bj, out;
  Mlp mlp;
  std::size_t dim = 0;
};

// Pooled feature augmentation applied between the auxiliary branch's last
// two stages.
class PrototypeAugment {
public:
  PrototypeAugment() = default;
  PrototypeAugment(ParamStore & store, std::string const & name, std::size_t dim);

  // tokens [B, N, d], prototypes [B, d] (one row per sample).
  Tensor operator()(Tensor const & tokens, Tensor const & prototypes) const;

  Linear g1, g2, g3_in, g3_out;
};

struct MainOutput {
  Tensor tokens_mid;  // after stage N-1, [B, N', d']
  Tensor pooled_mid;  // token mean of tokens_mid, [B, d']
  Tensor embedding;   // [B, embedding_dim]
  Tensor logits;      // [B, num_classes]
};

class Trans4Soar {
public:
  explicit Trans4Soar(ModelConfig config, std::uint64_t seed = 0, bool dry_run = false);

  ModelConfig const & config() const { return config_; }
  ParamStore & params() { return store_; }
  ParamStore const & params() const { return store_; }

  StreamTokens patch_embed(StreamImages const & images, Mode mode);
  Tensor mafm(StreamTokens const & streams, Mode mode);
  MainOutput forward_main(Tensor const & mixed, Mode mode);
  // prototypes: [B, d'] rows, only read in the prototype phase.
  Tensor forward_aux(Tensor const & mixed, Tensor const & prototypes, Phase phase, Mode mode);

  // Stems, fusion and main branch in one call.
  MainOutput forward(StreamImages const & images, Mode mode);

  // Learned scalars used at inference (stems, fusion, main branch, EMB,
  // head); the auxiliary branch is excluded.
  std::size_t inference_param_count() const;
  std::size_t total_param_count() const { return store_.count(); }

  std::array<PatchStem, 3> stems;
  MixedAttentionFusion fusion;
  std::array<Stage, 3> main_stages;
  std::array<Stage, 3> aux_stages;
  PrototypeAugment augment;
  Linear emb_in, emb_out, head;

  Tensor embed_pooled(Tensor const & pooled) const;

private:
  ModelConfig config_;
  ParamStore store_;
  std::mt19937_64 rng_;
};

// Inference parameter count of a configuration, computed without
// allocating weights.
std::size_t param_count(ModelConfig const & config);

}  // namespace soar::model
