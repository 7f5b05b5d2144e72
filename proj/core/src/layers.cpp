#include "soar/layers.hpp"

#include "soar/errors.hpp"

#include <bit>
#include <cmath>
#include <cstdlib>

namespace soar::model {

namespace {

Tensor flatten_rows(Tensor const & x, std::size_t width)
{
  if (x.rank() == 0 || x.shape().back() != width)
    throw ConfigError("expected last axis of size " + std::to_string(width) + ", got " + ad::to_string(x.shape()));
  return ad::reshape(x, {x.numel() / width, width});
}

ad::Shape with_last(ad::Shape shape, std::size_t last)
{
  shape.back() = last;
  return shape;
}

void register_stats(ParamStore & store, std::string const & name, ad::BatchNormStats const & stats)
{
  store.add_buffer(name + ".running_mean", stats.running_mean);
  store.add_buffer(name + ".running_var", stats.running_var);
}

}  // namespace

Linear::Linear(ParamStore & store, std::string const & name, std::size_t in_dim, std::size_t out_dim,
               bool zero_init)
  : in(in_dim), out(out_dim)
{
  weight = zero_init ? store.constant(name + ".weight", {in, out}, 0.0) : store.normal(name + ".weight", {in, out});
  bias = store.constant(name + ".bias", {out}, 0.0);
}

Tensor Linear::operator()(Tensor const & x) const
{
  Tensor y = ad::add_trailing(ad::matmul(flatten_rows(x, in), weight), bias);
  return ad::reshape(y, with_last(x.shape(), out));
}

LinearBN::LinearBN(ParamStore & store, std::string const & name, std::size_t in_dim, std::size_t out_dim,
                   double gain_init)
  : stats(out_dim), in(in_dim), out(out_dim)
{
  weight = store.normal(name + ".weight", {in, out});
  gain = store.constant(name + ".bn.gain", {out}, gain_init);
  bias = store.constant(name + ".bn.bias", {out}, 0.0);
  register_stats(store, name + ".bn", stats);
}

Tensor LinearBN::operator()(Tensor const & x, Mode mode)
{
  Tensor y = ad::batch_norm(ad::matmul(flatten_rows(x, in), weight), gain, bias, stats, mode);
  return ad::reshape(y, with_last(x.shape(), out));
}

ConvBN::ConvBN(ParamStore & store, std::string const & name, std::size_t in, std::size_t out, std::size_t kernel,
               std::size_t stride_)
  : stats(out), stride(stride_)
{
  kernels = store.normal(name + ".kernels", {kernel, kernel, in, out});
  gain = store.constant(name + ".bn.gain", {out}, 1.0);
  bias = store.constant(name + ".bn.bias", {out}, 0.0);
  register_stats(store, name + ".bn", stats);
}

Tensor ConvBN::operator()(Tensor const & x, Mode mode)
{
  return ad::batch_norm(ad::conv2d(x, kernels, stride), gain, bias, stats, mode);
}

LayerNorm::LayerNorm(ParamStore & store, std::string const & name, std::size_t dim)
{
  gain = store.constant(name + ".gain", {dim}, 1.0);
  bias = store.constant(name + ".bias", {dim}, 0.0);
}

Tensor LayerNorm::operator()(Tensor const & x) const { return ad::layer_norm(x, gain, bias); }

std::vector<std::size_t> bias_offsets(Grid2 keys, Grid2 queries, std::size_t stride)
{
  std::vector<std::size_t> index;
  index.reserve(queries.size() * keys.size());
  for (std::size_t qr = 0; qr < queries.rows; ++qr)
    for (std::size_t qc = 0; qc < queries.cols; ++qc)
      for (std::size_t kr = 0; kr < keys.rows; ++kr)
        for (std::size_t kc = 0; kc < keys.cols; ++kc)
        {
          auto const dr = static_cast<std::size_t>(std::abs(static_cast<long>(qr * stride) - static_cast<long>(kr)));
          auto const dc = static_cast<std::size_t>(std::abs(static_cast<long>(qc * stride) - static_cast<long>(kc)));
          index.push_back(dr * keys.cols + dc);
        }
  return index;
}

Tensor biased_attention(Tensor const & q, Tensor const & k, Tensor const & v, std::size_t heads,
                        std::size_t key_dim, Tensor const & bias_table, std::vector<std::size_t> const & bias_index)
{
  std::size_t const batch = q.dim(0);
  std::size_t const nq = q.dim(1);
  std::size_t const nk = k.dim(1);
  std::size_t const value_dim = v.dim(2) / heads;
  if (q.dim(2) != heads * key_dim || k.dim(2) != heads * key_dim || v.dim(2) != heads * value_dim ||
      bias_index.size() != nq * nk)
    throw ConfigError("attention operand shapes do not match heads/key_dim");

  Tensor qh = ad::reshape(ad::permute(ad::reshape(q, {batch, nq, heads, key_dim}), {0, 2, 1, 3}),
                          {batch * heads, nq, key_dim});
  Tensor kt = ad::reshape(ad::permute(ad::reshape(k, {batch, nk, heads, key_dim}), {0, 2, 3, 1}),
                          {batch * heads, key_dim, nk});
  Tensor vh = ad::reshape(ad::permute(ad::reshape(v, {batch, nk, heads, value_dim}), {0, 2, 1, 3}),
                          {batch * heads, nk, value_dim});

  Tensor scores = ad::scale(ad::bmm(qh, kt), 1.0 / std::sqrt(static_cast<double>(key_dim)));
  Tensor weights = ad::reshape(ad::softmax(scores, 2), {batch, heads, nq, nk});
  Tensor bias = ad::reshape(ad::index_select(bias_table, 1, bias_index), {heads, nq, nk});
  weights = ad::reshape(ad::add(weights, ad::expand(bias, 0, batch)), {batch * heads, nq, nk});

  Tensor out = ad::reshape(ad::bmm(weights, vh), {batch, heads, nq, value_dim});
  return ad::reshape(ad::permute(out, {0, 2, 1, 3}), {batch, nq, heads * value_dim});
}

AttentionBlock::AttentionBlock(ParamStore & store, std::string const & name, std::size_t dim, std::size_t heads_,
                               std::size_t key_dim_, std::size_t attn_ratio, std::size_t mlp_ratio, Grid2 grid)
  : heads(heads_), key_dim(key_dim_)
{
  std::size_t const value_dim = attn_ratio * key_dim;
  q = LinearBN(store, name + ".q", dim, heads * key_dim);
  k = LinearBN(store, name + ".k", dim, heads * key_dim);
  v = LinearBN(store, name + ".v", dim, heads * value_dim);
  proj = LinearBN(store, name + ".proj", heads * value_dim, dim, 0.0);
  bias_table = store.constant(name + ".bias_table", {heads, grid.size()}, 0.0);
  mlp_up = LinearBN(store, name + ".mlp.up", dim, mlp_ratio * dim);
  mlp_down = LinearBN(store, name + ".mlp.down", mlp_ratio * dim, dim, 0.0);
  bias_index = bias_offsets(grid, grid, 1);
}

Tensor AttentionBlock::attend(Tensor const & x, Mode mode)
{
  Tensor a = biased_attention(q(x, mode), k(x, mode), v(x, mode), heads, key_dim, bias_table, bias_index);
  return proj(ad::hardswish(a), mode);
}

Tensor AttentionBlock::operator()(Tensor const & x, Mode mode, double drop_path, std::mt19937_64 & rng)
{
  Tensor y = ad::add(x, ad::drop_path(attend(x, mode), drop_path, mode, rng));
  Tensor m = mlp_down(ad::hardswish(mlp_up(y, mode)), mode);
  return ad::add(y, ad::drop_path(m, drop_path, mode, rng));
}

AttentionSubsample::AttentionSubsample(ParamStore & store, std::string const & name, std::size_t in,
                                       std::size_t out, std::size_t key_dim_, std::size_t mlp_ratio, Grid2 grid)
  : key_dim(key_dim_), out_grid(grid.halved())
{
  if (in % key_dim != 0)
    throw ConfigError("subsample width " + std::to_string(in) + " is not a multiple of key_dim");
  heads = in / key_dim;
  std::size_t const value_dim = 4 * key_dim;
  q = LinearBN(store, name + ".q", in, heads * key_dim);
  k = LinearBN(store, name + ".k", in, heads * key_dim);
  v = LinearBN(store, name + ".v", in, heads * value_dim);
  proj = LinearBN(store, name + ".proj", heads * value_dim, out);
  bias_table = store.constant(name + ".bias_table", {heads, grid.size()}, 0.0);
  mlp_up = LinearBN(store, name + ".mlp.up", out, mlp_ratio * out);
  mlp_down = LinearBN(store, name + ".mlp.down", mlp_ratio * out, out, 0.0);
  for (std::size_t r = 0; r < out_grid.rows; ++r)
    for (std::size_t c = 0; c < out_grid.cols; ++c)
      query_index.push_back(2 * r * grid.cols + 2 * c);
  bias_index = bias_offsets(grid, out_grid, 2);
}

Tensor AttentionSubsample::operator()(Tensor const & x, Mode mode, double drop_path, std::mt19937_64 & rng)
{
  Tensor queries = ad::index_select(x, 1, query_index);
  Tensor a = biased_attention(q(queries, mode), k(x, mode), v(x, mode), heads, key_dim, bias_table, bias_index);
  Tensor y = proj(ad::hardswish(a), mode);
  Tensor m = mlp_down(ad::hardswish(mlp_up(y, mode)), mode);
  return ad::add(y, ad::drop_path(m, drop_path, mode, rng));
}

Stage::Stage(ParamStore & store, std::string const & name, StageSpec const & spec)
  : has_subsample(spec.subsample), out_grid_(spec.grid)
{
  if (spec.subsample)
  {
    subsample = AttentionSubsample(store, name + ".down", spec.in, spec.dim, spec.key_dim, spec.mlp_ratio, spec.grid);
    out_grid_ = subsample.out_grid;
  }
  else if (spec.in != spec.dim)
    throw ConfigError("a stage without subsampling must keep its width");
  for (std::size_t i = 0; i < spec.depth; ++i)
    blocks.emplace_back(store, name + ".block" + std::to_string(i), spec.dim, spec.heads, spec.key_dim,
                        spec.attn_ratio, spec.mlp_ratio, out_grid_);
}

Tensor Stage::operator()(Tensor const & x, Mode mode, double drop_path, std::mt19937_64 & rng)
{
  Tensor y = has_subsample ? subsample(x, mode, drop_path, rng) : x;
  for (auto & b : blocks)
    y = b(y, mode, drop_path, rng);
  return y;
}

PatchStem::PatchStem(ParamStore & store, std::string const & name, std::size_t in_channels, std::size_t dim,
                     std::size_t patch)
{
  if (patch < 2 || !std::has_single_bit(patch))
    throw ConfigError("patch size must be a power of two >= 2");
  auto const n = static_cast<std::size_t>(std::countr_zero(patch));
  if (dim % (std::size_t{1} << (n - 1)) != 0)
    throw ConfigError("stem width must be divisible by 2^(log2(patch) - 1)");
  std::size_t in = in_channels;
  for (std::size_t i = 0; i < n; ++i)
  {
    std::size_t const out = dim >> (n - 1 - i);
    layers.emplace_back(store, name + ".conv" + std::to_string(i), in, out, 3, 2);
    in = out;
  }
}

Tensor PatchStem::operator()(Tensor const & image, Mode mode)
{
  Tensor x = image;
  for (std::size_t i = 0; i < layers.size(); ++i)
  {
    if (i > 0)
      x = ad::hardswish(x);
    x = layers[i](x, mode);
  }
  return ad::reshape(x, {x.dim(0), x.dim(1) * x.dim(2), x.dim(3)});
}

Mlp::Mlp(ParamStore & store, std::string const & name, std::size_t dim, std::size_t hidden)
{
  up = Linear(store, name + ".up", dim, hidden);
  down = Linear(store, name + ".down", hidden, dim, true);
}

Tensor Mlp::operator()(Tensor const & x) const { return down(ad::hardswish(up(x))); }

}  // namespace soar::model
