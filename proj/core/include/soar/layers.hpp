#pragma once

#include "soar/params.hpp"
#include "soar/tensor.hpp"

#include <cstddef>
#include <random>
#include <string>
#include <vector>

// Building blocks shared by the model. Token tensors are [batch, tokens,
// channels]; images are NHWC.
namespace soar::model {

using ad::Mode;
using ad::Tensor;

// Affine map over the last axis. Weight is [in, out].
class Linear {
public:
  Linear() = default;
  Linear(ParamStore & store, std::string const & name, std::size_t in, std::size_t out, bool zero_init = false);
  Tensor operator()(Tensor const & x) const;

  Tensor weight;
  Tensor bias;
  std::size_t in = 0;
  std::size_t out = 0;
};

// Bias-free linear map followed by batch norm (a 1x1 conv over tokens).
class LinearBN {
public:
  LinearBN() = default;
  LinearBN(ParamStore & store, std::string const & name, std::size_t in, std::size_t out, double gain_init = 1.0);
  Tensor operator()(Tensor const & x, Mode mode);

  Tensor weight;
  Tensor gain;
  Tensor bias;
  ad::BatchNormStats stats;
  std::size_t in = 0;
  std::size_t out = 0;
};

class ConvBN {
public:
  ConvBN() = default;
  ConvBN(ParamStore & store, std::string const & name, std::size_t in, std::size_t out, std::size_t kernel,
         std::size_t stride);
  Tensor operator()(Tensor const & x, Mode mode);

  Tensor kernels;
  Tensor gain;
  Tensor bias;
  ad::BatchNormStats stats;
  std::size_t stride = 1;
};

class LayerNorm {
public:
  LayerNorm() = default;
  LayerNorm(ParamStore & store, std::string const & name, std::size_t dim);
  Tensor operator()(Tensor const & x) const;

  Tensor gain;
  Tensor bias;
};

struct Grid2 {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t size() const { return rows * cols; }
  // Stride-2 subsampling keeps positions 0, 2, 4, ...
  Grid2 halved() const { return {(rows - 1) / 2 + 1, (cols - 1) / 2 + 1}; }
};

// Multi-head attention core with a learned per-head bias indexed by the
// absolute row/column offset between query and key positions. The bias is
// added after the softmax. Inputs are already projected:
// q, k [B, Nq|Nk, heads * key_dim], v [B, Nk, heads * value_dim].
Tensor biased_attention(Tensor const & q, Tensor const & k, Tensor const & v, std::size_t heads,
                        std::size_t key_dim, Tensor const & bias_table, std::vector<std::size_t> const & bias_index);

// Offsets table index for every (query, key) pair; queries sit at
// (stride * r, stride * c) of the key grid.
std::vector<std::size_t> bias_offsets(Grid2 keys, Grid2 queries, std::size_t stride);

// x + Proj(hardswish(attention)), then x + MLP(x), with zero-initialised
// output norms so the block starts as the identity.
class AttentionBlock {
public:
  AttentionBlock() = default;
  AttentionBlock(ParamStore & store, std::string const & name, std::size_t dim, std::size_t heads,
                 std::size_t key_dim, std::size_t attn_ratio, std::size_t mlp_ratio, Grid2 grid);
  Tensor operator()(Tensor const & x, Mode mode, double drop_path, std::mt19937_64 & rng);

  // Attention branch only, before the residual add.
  Tensor attend(Tensor const & x, Mode mode);

  LinearBN q, k, v, proj;
  LinearBN mlp_up, mlp_down;
  Tensor bias_table;
  std::size_t heads = 0;
  std::size_t key_dim = 0;
  std::vector<std::size_t> bias_index;
};

// Stride-2 query subsampling attention between stages (heads = in / key_dim,
// value dim 4 * key_dim), followed by a residual MLP at the new width.
class AttentionSubsample {
public:
  AttentionSubsample() = default;
  AttentionSubsample(ParamStore & store, std::string const & name, std::size_t in, std::size_t out,
                     std::size_t key_dim, std::size_t mlp_ratio, Grid2 grid);
  Tensor operator()(Tensor const & x, Mode mode, double drop_path, std::mt19937_64 & rng);

  LinearBN q, k, v, proj;
  LinearBN mlp_up, mlp_down;
  Tensor bias_table;
  std::size_t heads = 0;
  std::size_t key_dim = 0;
  std::vector<std::size_t> query_index;
  std::vector<std::size_t> bias_index;
  Grid2 out_grid;
};

struct StageSpec {
  std::size_t in = 0;  // width entering the stage
  std::size_t dim = 0;
  std::size_t heads = 0;
  std::size_t key_dim = 0;
  std::size_t depth = 0;
  std::size_t attn_ratio = 2;
  std::size_t mlp_ratio = 2;
  bool subsample = false;
  Grid2 grid;  // grid entering the stage
};

class Stage {
public:
  Stage() = default;
  Stage(ParamStore & store, std::string const & name, StageSpec const & spec);
  Tensor operator()(Tensor const & x, Mode mode, double drop_path, std::mt19937_64 & rng);

  Grid2 out_grid() const { return out_grid_; }

  bool has_subsample = false;
  AttentionSubsample subsample;
  std::vector<AttentionBlock> blocks;

private:
  Grid2 out_grid_;
};

// log2(patch) stride-2 3x3 ConvBN layers with hardswish in between; the
// channel count doubles up to `dim`. Output is flattened to tokens.
class PatchStem {
public:
  PatchStem() = default;
  PatchStem(ParamStore & store, std::string const & name, std::size_t in_channels, std::size_t dim,
            std::size_t patch);
  Tensor operator()(Tensor const & image, Mode mode);

  std::vector<ConvBN> layers;
};

// Two-layer perceptron with hardswish; the second layer starts at zero.
class Mlp {
public:
  Mlp() = default;
  Mlp(ParamStore & store, std::string const & name, std::size_t dim, std::size_t hidden);
  Tensor operator()(Tensor const & x) const;

  Linear up, down;
};

}  // namespace soar::model
