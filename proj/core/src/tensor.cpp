#include "soar/tensor.hpp"

#include "soar/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

namespace soar::ad {

namespace {

thread_local bool g_grad_enabled = true;
thread_local bool g_check_finite = false;

using NodePtr = std::shared_ptr<Node>;

void check_finite(std::vector<double> const & v, char const * op, char const * what)
{
  if (!g_check_finite)
    return;
  for (double x : v)
    if (!std::isfinite(x))
      throw NumericError(std::string("non-finite ") + what + " produced by op '" + op + "'");
}

template <class Backward>
Tensor make_result(char const * op, Shape shape, std::vector<double> value, std::vector<Tensor> const & inputs,
                   Backward && backward_fn)
{
  check_finite(value, op, "value");
  auto node = std::make_shared<Node>();
  node->op = op;
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (g_grad_enabled)
  {
    bool const any = std::any_of(inputs.begin(), inputs.end(), [](Tensor const & t) { return t.requires_grad(); });
    if (any)
    {
      node->requires_grad = true;
      for (auto const & t : inputs)
        node->parents.push_back(t.node_ptr());
      node->backward = std::forward<Backward>(backward_fn);
    }
  }
  return Tensor(std::move(node));
}

// Gradient buffer of parent i, or nullptr when it does not need one.
std::vector<double> * parent_grad(Node & self, std::size_t i)
{
  Node & p = *self.parents[i];
  return p.requires_grad ? &p.ensure_grad() : nullptr;
}

std::vector<double> const & parent_value(Node & self, std::size_t i) { return self.parents[i]->value; }

void require_same_shape(Tensor const & a, Tensor const & b, char const * op)
{
  if (a.shape() != b.shape())
    throw ConfigError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

struct AxisSplit {
  std::size_t outer;
  std::size_t dim;
  std::size_t inner;
};

AxisSplit split_at(Shape const & shape, std::size_t axis, char const * op)
{
  if (axis >= shape.size())
    throw ConfigError(std::string(op) + ": axis out of range for shape " + to_string(shape));
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i)
    s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i)
    s.inner *= shape[i];
  return s;
}

template <class Fwd, class Deriv>
Tensor unary(char const * op, Tensor const & a, Fwd fwd, Deriv deriv)
{
  std::vector<double> out(a.numel());
  auto const av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = fwd(av[i]);
  return make_result(op, a.shape(), std::move(out), {a}, [deriv](Node & self) {
    auto * ga = parent_grad(self, 0);
    if (!ga)
      return;
    auto const & x = parent_value(self, 0);
    for (std::size_t i = 0; i < x.size(); ++i)
      (*ga)[i] += self.grad[i] * deriv(x[i], self.value[i]);
  });
}

std::size_t trailing_outer(Tensor const & a, Tensor const & b, char const * op)
{
  auto const & as = a.shape();
  auto const & bs = b.shape();
  if (bs.size() > as.size() || !std::equal(bs.begin(), bs.end(), as.end() - static_cast<std::ptrdiff_t>(bs.size())))
    throw ConfigError(std::string(op) + ": " + to_string(bs) + " is not a trailing shape of " + to_string(as));
  return a.numel() / std::max<std::size_t>(b.numel(), 1);
}

}  // namespace

std::size_t numel(Shape const & shape)
{
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(Shape const & shape)
{
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i)
    s += (i ? "," : "") + std::to_string(shape[i]);
  return s + "]";
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad)
{
  auto n = std::make_shared<Node>();
  n->value.assign(ad::numel(shape), value);
  n->shape = std::move(shape);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad)
{
  if (ad::numel(shape) != values.size())
    throw ConfigError("tensor storage does not match shape " + to_string(shape));
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

double Tensor::item() const
{
  if (numel() != 1)
    throw StateError("item() on a tensor with " + std::to_string(numel()) + " elements");
  return node_->value[0];
}

Tensor Tensor::detach() const { return from(shape(), node_->value, false); }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

FiniteCheckGuard::FiniteCheckGuard(bool enabled) : previous_(g_check_finite) { g_check_finite = enabled; }
FiniteCheckGuard::~FiniteCheckGuard() { g_check_finite = previous_; }

// ---- elementwise ---------------------------------------------------------

Tensor add(Tensor const & a, Tensor const & b)
{
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  auto const av = a.values();
  auto const bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = av[i] + bv[i];
  return make_result("add", a.shape(), std::move(out), {a, b}, [](Node & self) {
    for (std::size_t p = 0; p < 2; ++p)
      if (auto * g = parent_grad(self, p))
        for (std::size_t i = 0; i < g->size(); ++i)
          (*g)[i] += self.grad[i];
  });
}

Tensor sub(Tensor const & a, Tensor const & b)
{
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  auto const av = a.values();
  auto const bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = av[i] - bv[i];
  return make_result("sub", a.shape(), std::move(out), {a, b}, [](Node & self) {
    if (auto * g = parent_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i)
        (*g)[i] += self.grad[i];
    if (auto * g = parent_grad(self, 1))
      for (std::size_t i = 0; i < g->size(); ++i)
        (*g)[i] -= self.grad[i];
  });
}

Tensor mul(Tensor const & a, Tensor const & b)
{
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  auto const av = a.values();
  auto const bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = av[i] * bv[i];
  return make_result("mul", a.shape(), std::move(out), {a, b}, [](Node & self) {
    auto const & x = parent_value(self, 0);
    auto const & y = parent_value(self, 1);
    if (auto * g = parent_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i)
        (*g)[i] += self.grad[i] * y[i];
    if (auto * g = parent_grad(self, 1))
      for (std::size_t i = 0; i < g->size(); ++i)
        (*g)[i] += self.grad[i] * x[i];
  });
}

Tensor scale(Tensor const & a, double s)
{
  return unary("scale", a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor add_scalar(Tensor const & a, double s)
{
  return unary("add_scalar", a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor relu(Tensor const & a)
{
  return unary("relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor exp(Tensor const & a)
{
  return unary("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(Tensor const & a)
{
  return unary("log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(Tensor const & a)
{
  return unary("sqrt", a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Tensor hardswish(Tensor const & a)
{
  return unary(
    "hardswish", a, [](double x) { return x * std::clamp(x + 3.0, 0.0, 6.0) / 6.0; },
    [](double x, double) {
      if (x <= -3.0)
        return 0.0;
      if (x >= 3.0)
        return 1.0;
      return (2.0 * x + 3.0) / 6.0;
    });
}

Tensor add_trailing(Tensor const & a, Tensor const & b)
{
  std::size_t const outer = trailing_outer(a, b, "add_trailing");
  std::size_t const inner = b.numel();
  std::vector<double> out(a.numel());
  auto const av = a.values();
  auto const bv = b.values();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i)
      out[o * inner + i] = av[o * inner + i] + bv[i];
  return make_result("add_trailing", a.shape(), std::move(out), {a, b}, [outer, inner](Node & self) {
    if (auto * g = parent_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i)
        (*g)[i] += self.grad[i];
    if (auto * g = parent_grad(self, 1))
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i)
          (*g)[i] += self.grad[o * inner + i];
  });
}

Tensor mul_trailing(Tensor const & a, Tensor const & b)
{
  std::size_t const outer = trailing_outer(a, b, "mul_trailing");
  std::size_t const inner = b.numel();
  std::vector<double> out(a.numel());
  auto const av = a.values();
  auto const bv = b.values();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i)
      out[o * inner + i] = av[o * inner + i] * bv[i];
  return make_result("mul_trailing", a.shape(), std::move(out), {a, b}, [outer, inner](Node & self) {
    auto const & x = parent_value(self, 0);
    auto const & y = parent_value(self, 1);
    if (auto * g = parent_grad(self, 0))
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i)
          (*g)[o * inner + i] += self.grad[o * inner + i] * y[i];
    if (auto * g = parent_grad(self, 1))
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i)
          (*g)[i] += self.grad[o * inner + i] * x[o * inner + i];
  });
}

// ---- linear algebra and layout ---------------------------------------------

namespace {

// c[m,n] += a[m,k] b[k,n]; row i of c depends only on row i of a, with a
// fixed summation order over k.
void gemm_acc(double const * a, double const * b, double * c, std::size_t m, std::size_t k, std::size_t n)
{
  for (std::size_t i = 0; i < m; ++i)
  {
    double * ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p)
    {
      double const aip = a[i * k + p];
      double const * bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j)
        ci[j] += aip * bp[j];
    }
  }
}

// ga[m,k] += g[m,n] b[k,n]^T
void gemm_grad_a(double const * g, double const * b, double * ga, std::size_t m, std::size_t k, std::size_t n)
{
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p)
    {
      double s = 0.0;
      double const * gi = g + i * n;
      double const * bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j)
        s += gi[j] * bp[j];
      ga[i * k + p] += s;
    }
}

// gb[k,n] += a[m,k]^T g[m,n]
void gemm_grad_b(double const * a, double const * g, double * gb, std::size_t m, std::size_t k, std::size_t n)
{
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p)
    {
      double const aip = a[i * k + p];
      double const * gi = g + i * n;
      double * gbp = gb + p * n;
      for (std::size_t j = 0; j < n; ++j)
        gbp[j] += aip * gi[j];
    }
}

}  // namespace

Tensor matmul(Tensor const & a, Tensor const & b)
{
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ConfigError("matmul: incompatible shapes " + to_string(a.shape()) + " x " + to_string(b.shape()));
  std::size_t const m = a.dim(0);
  std::size_t const k = a.dim(1);
  std::size_t const n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  gemm_acc(a.values().data(), b.values().data(), out.data(), m, k, n);
  return make_result("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](Node & self) {
    if (auto * g = parent_grad(self, 0))
      gemm_grad_a(self.grad.data(), parent_value(self, 1).data(), g->data(), m, k, n);
    if (auto * g = parent_grad(self, 1))
      gemm_grad_b(parent_value(self, 0).data(), self.grad.data(), g->data(), m, k, n);
  });
}

Tensor bmm(Tensor const & a, Tensor const & b)
{
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
    throw ConfigError("bmm: incompatible shapes " + to_string(a.shape()) + " x " + to_string(b.shape()));
  std::size_t const groups = a.dim(0);
  std::size_t const m = a.dim(1);
  std::size_t const k = a.dim(2);
  std::size_t const n = b.dim(2);
  std::vector<double> out(groups * m * n, 0.0);
  for (std::size_t g = 0; g < groups; ++g)
    gemm_acc(a.values().data() + g * m * k, b.values().data() + g * k * n, out.data() + g * m * n, m, k, n);
  return make_result("bmm", {groups, m, n}, std::move(out), {a, b}, [groups, m, k, n](Node & self) {
    auto * ga = parent_grad(self, 0);
    auto * gb = parent_grad(self, 1);
    auto const & av = parent_value(self, 0);
    auto const & bv = parent_value(self, 1);
    for (std::size_t g = 0; g < groups; ++g)
    {
      if (ga)
        gemm_grad_a(self.grad.data() + g * m * n, bv.data() + g * k * n, ga->data() + g * m * k, m, k, n);
      if (gb)
        gemm_grad_b(av.data() + g * m * k, self.grad.data() + g * m * n, gb->data() + g * k * n, m, k, n);
    }
  });
}

Tensor transpose(Tensor const & a)
{
  if (a.rank() != 2)
    throw ConfigError("transpose expects a 2-D tensor");
  return permute(a, {1, 0});
}

Tensor permute(Tensor const & a, std::vector<std::size_t> const & axes)
{
  std::size_t const r = a.rank();
  if (axes.size() != r)
    throw ConfigError("permute: axis list does not match rank");
  std::vector<bool> seen(r, false);
  for (auto ax : axes)
  {
    if (ax >= r || seen[ax])
      throw ConfigError("permute: invalid axis permutation");
    seen[ax] = true;
  }
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i)
    out_shape[i] = a.dim(axes[i]);
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;)
    in_stride[i - 1] = in_stride[i] * a.dim(i);
  // Source offset of every output element.
  std::vector<std::size_t> source(a.numel());
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t o = 0; o < source.size(); ++o)
  {
    std::size_t off = 0;
    for (std::size_t i = 0; i < r; ++i)
      off += idx[i] * in_stride[axes[i]];
    source[o] = off;
    for (std::size_t i = r; i-- > 0;)
    {
      if (++idx[i] < out_shape[i])
        break;
      idx[i] = 0;
    }
  }
  std::vector<double> out(a.numel());
  auto const av = a.values();
  for (std::size_t o = 0; o < out.size(); ++o)
    out[o] = av[source[o]];
  return make_result("permute", std::move(out_shape), std::move(out), {a},
                     [source = std::move(source)](Node & self) {
                       if (auto * g = parent_grad(self, 0))
                         for (std::size_t o = 0; o < source.size(); ++o)
                           (*g)[source[o]] += self.grad[o];
                     });
}

Tensor reshape(Tensor const & a, Shape shape)
{
  if (numel(shape) != a.numel())
    throw ConfigError("reshape: " + to_string(a.shape()) + " cannot become " + to_string(shape));
  std::vector<double> out(a.values().begin(), a.values().end());
  return make_result("reshape", std::move(shape), std::move(out), {a}, [](Node & self) {
    if (auto * g = parent_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i)
        (*g)[i] += self.grad[i];
  });
}

Tensor concat(std::vector<Tensor> const & parts, std::size_t axis)
{
  if (parts.empty())
    throw ConfigError("concat needs at least one tensor");
  Shape shape = parts.front().shape();
  if (axis >= shape.size())
    throw ConfigError("concat: axis out of range");
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (auto const & p : parts)
  {
    Shape s = p.shape();
    if (s.size() != shape.size())
      throw ConfigError("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i)
      if (i != axis && s[i] != shape[i])
        throw ConfigError("concat: shape mismatch " + to_string(s) + " vs " + to_string(shape));
    widths.push_back(s[axis]);
    total += s[axis];
  }
  auto const split = split_at(shape, axis, "concat");
  shape[axis] = total;
  std::vector<double> out(numel(shape));
  std::size_t const row = total * split.inner;
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k)
  {
    std::size_t const chunk = widths[k] * split.inner;
    auto const v = parts[k].values();
    for (std::size_t o = 0; o < split.outer; ++o)
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(o * chunk), chunk,
                  out.begin() + static_cast<std::ptrdiff_t>(o * row + offset));
    offset += chunk;
  }
  return make_result("concat", std::move(shape), std::move(out), parts,
                     [widths, outer = split.outer, inner = split.inner, row](Node & self) {
                       std::size_t off = 0;
                       for (std::size_t k = 0; k < widths.size(); ++k)
                       {
                         std::size_t const chunk = widths[k] * inner;
                         if (auto * g = parent_grad(self, k))
                           for (std::size_t o = 0; o < outer; ++o)
                             for (std::size_t i = 0; i < chunk; ++i)
                               (*g)[o * chunk + i] += self.grad[o * row + off + i];
                         off += chunk;
                       }
                     });
}

Tensor expand(Tensor const & a, std::size_t axis, std::size_t n)
{
  if (axis > a.rank())
    throw ConfigError("expand: axis out of range");
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i)
    outer *= a.dim(i);
  std::size_t const inner = a.numel() / std::max<std::size_t>(outer, 1);
  Shape shape = a.shape();
  shape.insert(shape.begin() + static_cast<std::ptrdiff_t>(axis), n);
  std::vector<double> out(outer * n * inner);
  auto const av = a.values();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t r = 0; r < n; ++r)
      std::copy_n(av.begin() + static_cast<std::ptrdiff_t>(o * inner), inner,
                  out.begin() + static_cast<std::ptrdiff_t>((o * n + r) * inner));
  return make_result("expand", std::move(shape), std::move(out), {a}, [outer, n, inner](Node & self) {
    if (auto * g = parent_grad(self, 0))
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t i = 0; i < inner; ++i)
            (*g)[o * inner + i] += self.grad[(o * n + r) * inner + i];
  });
}

Tensor index_select(Tensor const & a, std::size_t axis, std::vector<std::size_t> const & index)
{
  auto const s = split_at(a.shape(), axis, "index_select");
  for (auto i : index)
    if (i >= s.dim)
      throw ConfigError("index_select: index out of range");
  Shape shape = a.shape();
  shape[axis] = index.size();
  std::vector<double> out(s.outer * index.size() * s.inner);
  auto const av = a.values();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t k = 0; k < index.size(); ++k)
      std::copy_n(av.begin() + static_cast<std::ptrdiff_t>((o * s.dim + index[k]) * s.inner), s.inner,
                  out.begin() + static_cast<std::ptrdiff_t>((o * index.size() + k) * s.inner));
  return make_result("index_select", std::move(shape), std::move(out), {a}, [s, index](Node & self) {
    if (auto * g = parent_grad(self, 0))
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t k = 0; k < index.size(); ++k)
          for (std::size_t i = 0; i < s.inner; ++i)
            (*g)[(o * s.dim + index[k]) * s.inner + i] += self.grad[(o * index.size() + k) * s.inner + i];
  });
}

Tensor pick(Tensor const & a, std::vector<std::size_t> const & index)
{
  if (a.rank() != 2 || index.size() != a.dim(0))
    throw ConfigError("pick expects [n, c] and n indices");
  std::size_t const c = a.dim(1);
  std::vector<double> out(index.size());
  for (std::size_t i = 0; i < index.size(); ++i)
  {
    if (index[i] >= c)
      throw ConfigError("pick: index out of range");
    out[i] = a.values()[i * c + index[i]];
  }
  return make_result("pick", {index.size()}, std::move(out), {a}, [index, c](Node & self) {
    if (auto * g = parent_grad(self, 0))
      for (std::size_t i = 0; i < index.size(); ++i)
        (*g)[i * c + index[i]] += self.grad[i];
  });
}

// ---- reductions ---------------------------------------------------------------

namespace {

Tensor reduce_axis(Tensor const & a, std::size_t axis, bool average)
{
  auto const s = split_at(a.shape(), axis, average ? "mean" : "sum");
  Shape shape = a.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (shape.empty())
    shape.push_back(1);
  std::vector<double> out(s.outer * s.inner, 0.0);
  auto const av = a.values();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t d = 0; d < s.dim; ++d)
      for (std::size_t i = 0; i < s.inner; ++i)
        out[o * s.inner + i] += av[(o * s.dim + d) * s.inner + i];
  double const n = static_cast<double>(s.dim);
  if (average)
    for (auto & v : out)
      v /= n;
  double const factor = average ? 1.0 / n : 1.0;
  return make_result(average ? "mean" : "sum", std::move(shape), std::move(out), {a}, [s, factor](Node & self) {
    if (auto * g = parent_grad(self, 0))
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t d = 0; d < s.dim; ++d)
          for (std::size_t i = 0; i < s.inner; ++i)
            (*g)[(o * s.dim + d) * s.inner + i] += factor * self.grad[o * s.inner + i];
  });
}

}  // namespace

Tensor sum(Tensor const & a, std::size_t axis) { return reduce_axis(a, axis, false); }
Tensor mean(Tensor const & a, std::size_t axis) { return reduce_axis(a, axis, true); }

Tensor sum_all(Tensor const & a) { return reduce_axis(reshape(a, {a.numel()}), 0, false); }
Tensor mean_all(Tensor const & a) { return reduce_axis(reshape(a, {a.numel()}), 0, true); }

// ---- softmax family ---------------------------------------------------------------

Tensor softmax(Tensor const & a, std::size_t axis)
{
  auto const s = split_at(a.shape(), axis, "softmax");
  std::vector<double> out(a.numel());
  auto const av = a.values();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i)
    {
      auto at = [&](std::size_t d) { return (o * s.dim + d) * s.inner + i; };
      double mx = -INFINITY;
      for (std::size_t d = 0; d < s.dim; ++d)
        mx = std::max(mx, av[at(d)]);
      double total = 0.0;
      for (std::size_t d = 0; d < s.dim; ++d)
        total += out[at(d)] = std::exp(av[at(d)] - mx);
      for (std::size_t d = 0; d < s.dim; ++d)
        out[at(d)] /= total;
    }
  return make_result("softmax", a.shape(), std::move(out), {a}, [s](Node & self) {
    auto * g = parent_grad(self, 0);
    if (!g)
      return;
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.inner; ++i)
      {
        auto at = [&](std::size_t d) { return (o * s.dim + d) * s.inner + i; };
        double dot = 0.0;
        for (std::size_t d = 0; d < s.dim; ++d)
          dot += self.grad[at(d)] * self.value[at(d)];
        for (std::size_t d = 0; d < s.dim; ++d)
          (*g)[at(d)] += self.value[at(d)] * (self.grad[at(d)] - dot);
      }
  });
}

Tensor log_softmax(Tensor const & a, std::size_t axis)
{
  auto const s = split_at(a.shape(), axis, "log_softmax");
  std::vector<double> out(a.numel());
  auto const av = a.values();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i)
    {
      auto at = [&](std::size_t d) { return (o * s.dim + d) * s.inner + i; };
      double mx = -INFINITY;
      for (std::size_t d = 0; d < s.dim; ++d)
        mx = std::max(mx, av[at(d)]);
      double total = 0.0;
      for (std::size_t d = 0; d < s.dim; ++d)
        total += std::exp(av[at(d)] - mx);
      double const lse = mx + std::log(total);
      for (std::size_t d = 0; d < s.dim; ++d)
        out[at(d)] = av[at(d)] - lse;
    }
  return make_result("log_softmax", a.shape(), std::move(out), {a}, [s](Node & self) {
    auto * g = parent_grad(self, 0);
    if (!g)
      return;
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.inner; ++i)
      {
        auto at = [&](std::size_t d) { return (o * s.dim + d) * s.inner + i; };
        double total = 0.0;
        for (std::size_t d = 0; d < s.dim; ++d)
          total += self.grad[at(d)];
        for (std::size_t d = 0; d < s.dim; ++d)
          (*g)[at(d)] += self.grad[at(d)] - std::exp(self.value[at(d)]) * total;
      }
  });
}

// ---- normalisation ---------------------------------------------------------------

namespace {

void check_affine(Tensor const & x, Tensor const & gain, Tensor const & bias, char const * op)
{
  if (x.rank() < 1 || gain.rank() != 1 || bias.rank() != 1 || gain.dim(0) != x.shape().back() ||
      bias.dim(0) != x.shape().back())
    throw ConfigError(std::string(op) + ": gain/bias must match the last axis of " + to_string(x.shape()));
}

}  // namespace

Tensor layer_norm(Tensor const & x, Tensor const & gain, Tensor const & bias, double eps)
{
  check_affine(x, gain, bias, "layer_norm");
  std::size_t const c = x.shape().back();
  std::size_t const rows = x.numel() / c;
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(rows);
  std::vector<double> out(x.numel());
  auto const xv = x.values();
  auto const gv = gain.values();
  auto const bv = bias.values();
  for (std::size_t r = 0; r < rows; ++r)
  {
    double mu = 0.0;
    for (std::size_t k = 0; k < c; ++k)
      mu += xv[r * c + k];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t k = 0; k < c; ++k)
    {
      double const d = xv[r * c + k] - mu;
      var += d * d;
    }
    var /= static_cast<double>(c);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t k = 0; k < c; ++k)
    {
      xhat[r * c + k] = (xv[r * c + k] - mu) * inv_std[r];
      out[r * c + k] = xhat[r * c + k] * gv[k] + bv[k];
    }
  }
  return make_result("layer_norm", x.shape(), std::move(out), {x, gain, bias},
                     [c, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node & self) {
                       auto const & gv = parent_value(self, 1);
                       auto * gx = parent_grad(self, 0);
                       auto * gg = parent_grad(self, 1);
                       auto * gb = parent_grad(self, 2);
                       for (std::size_t r = 0; r < rows; ++r)
                       {
                         double m1 = 0.0;
                         double m2 = 0.0;
                         for (std::size_t k = 0; k < c; ++k)
                         {
                           double const dxh = self.grad[r * c + k] * gv[k];
                           m1 += dxh;
                           m2 += dxh * xhat[r * c + k];
                           if (gg)
                             (*gg)[k] += self.grad[r * c + k] * xhat[r * c + k];
                           if (gb)
                             (*gb)[k] += self.grad[r * c + k];
                         }
                         if (!gx)
                           continue;
                         m1 /= static_cast<double>(c);
                         m2 /= static_cast<double>(c);
                         for (std::size_t k = 0; k < c; ++k)
                         {
                           double const dxh = self.grad[r * c + k] * gv[k];
                           (*gx)[r * c + k] += inv_std[r] * (dxh - m1 - xhat[r * c + k] * m2);
                         }
                       }
                     });
}

Tensor batch_norm(Tensor const & x, Tensor const & gain, Tensor const & bias, BatchNormStats & stats, Mode mode)
{
  check_affine(x, gain, bias, "batch_norm");
  std::size_t const c = x.shape().back();
  std::size_t const rows = x.numel() / c;
  if (stats.running_mean.numel() != c || stats.running_var.numel() != c)
    throw ConfigError("batch_norm: running statistics do not match the channel count");
  auto running_mean = stats.running_mean.mutable_values();
  auto running_var = stats.running_var.mutable_values();
  auto const xv = x.values();
  auto const gv = gain.values();
  auto const bv = bias.values();

  std::vector<double> mean(c, 0.0);
  std::vector<double> inv_std(c, 0.0);
  if (mode == Mode::train)
  {
    std::vector<double> var(c, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t k = 0; k < c; ++k)
        mean[k] += xv[r * c + k];
    for (auto & m : mean)
      m /= static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t k = 0; k < c; ++k)
      {
        double const d = xv[r * c + k] - mean[k];
        var[k] += d * d;
      }
    for (std::size_t k = 0; k < c; ++k)
    {
      double const biased = var[k] / static_cast<double>(rows);
      inv_std[k] = 1.0 / std::sqrt(biased + stats.eps);
      double const unbiased = rows > 1 ? var[k] / static_cast<double>(rows - 1) : biased;
      running_mean[k] = stats.momentum * running_mean[k] + (1.0 - stats.momentum) * mean[k];
      running_var[k] = stats.momentum * running_var[k] + (1.0 - stats.momentum) * unbiased;
    }
  }
  else
  {
    mean.assign(running_mean.begin(), running_mean.end());
    for (std::size_t k = 0; k < c; ++k)
      inv_std[k] = 1.0 / std::sqrt(running_var[k] + stats.eps);
  }

  std::vector<double> xhat(x.numel());
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < c; ++k)
    {
      xhat[r * c + k] = (xv[r * c + k] - mean[k]) * inv_std[k];
      out[r * c + k] = xhat[r * c + k] * gv[k] + bv[k];
    }

  bool const batch_stats = mode == Mode::train;
  return make_result("batch_norm", x.shape(), std::move(out), {x, gain, bias},
                     [c, rows, batch_stats, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node & self) {
                       auto const & gv = parent_value(self, 1);
                       auto * gx = parent_grad(self, 0);
                       auto * gg = parent_grad(self, 1);
                       auto * gb = parent_grad(self, 2);
                       std::vector<double> m1(c, 0.0);
                       std::vector<double> m2(c, 0.0);
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t k = 0; k < c; ++k)
                         {
                           double const g = self.grad[r * c + k];
                           m1[k] += g * gv[k];
                           m2[k] += g * gv[k] * xhat[r * c + k];
                           if (gg)
                             (*gg)[k] += g * xhat[r * c + k];
                           if (gb)
                             (*gb)[k] += g;
                         }
                       if (!gx)
                         return;
                       double const n = static_cast<double>(rows);
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t k = 0; k < c; ++k)
                         {
                           double const dxh = self.grad[r * c + k] * gv[k];
                           if (batch_stats)
                             (*gx)[r * c + k] += inv_std[k] * (dxh - m1[k] / n - xhat[r * c + k] * m2[k] / n);
                           else
                             (*gx)[r * c + k] += inv_std[k] * dxh;
                         }
                     });
}

Tensor conv2d(Tensor const & x, Tensor const & kernels, std::size_t stride)
{
  if (x.rank() != 4 || kernels.rank() != 4 || kernels.dim(2) != x.dim(3) || stride == 0)
    throw ConfigError("conv2d: expected NHWC input and [kh,kw,cin,cout] kernels, got " + to_string(x.shape()) +
                      " and " + to_string(kernels.shape()));
  std::size_t const batch = x.dim(0);
  std::size_t const h = x.dim(1);
  std::size_t const w = x.dim(2);
  std::size_t const cin = x.dim(3);
  std::size_t const kh = kernels.dim(0);
  std::size_t const kw = kernels.dim(1);
  std::size_t const cout = kernels.dim(3);
  std::size_t const pad_y = (kh - 1) / 2;
  std::size_t const pad_x = (kw - 1) / 2;
  std::size_t const oh = (h - 1) / stride + 1;
  std::size_t const ow = (w - 1) / stride + 1;

  // Visits every (output, input, kernel) offset triple with a valid input.
  auto for_each_tap = [=](auto && fn) {
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox)
        {
          std::size_t const obase = ((b * oh + oy) * ow + ox) * cout;
          for (std::size_t ky = 0; ky < kh; ++ky)
          {
            std::ptrdiff_t const iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad_y);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h))
              continue;
            for (std::size_t kx = 0; kx < kw; ++kx)
            {
              std::ptrdiff_t const ix =
                static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad_x);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w))
                continue;
              std::size_t const ibase = ((b * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)) * cin;
              std::size_t const kbase = (ky * kw + kx) * cin * cout;
              fn(obase, ibase, kbase);
            }
          }
        }
  };

  std::vector<double> out(batch * oh * ow * cout, 0.0);
  auto const xv = x.values();
  auto const kv = kernels.values();
  for_each_tap([&](std::size_t obase, std::size_t ibase, std::size_t kbase) {
    for (std::size_t ci = 0; ci < cin; ++ci)
    {
      double const xval = xv[ibase + ci];
      double const * krow = kv.data() + kbase + ci * cout;
      for (std::size_t co = 0; co < cout; ++co)
        out[obase + co] += xval * krow[co];
    }
  });
  return make_result("conv2d", {batch, oh, ow, cout}, std::move(out), {x, kernels},
                     [for_each_tap, cin, cout](Node & self) {
                       auto const & xv = parent_value(self, 0);
                       auto const & kv = parent_value(self, 1);
                       auto * gx = parent_grad(self, 0);
                       auto * gk = parent_grad(self, 1);
                       for_each_tap([&](std::size_t obase, std::size_t ibase, std::size_t kbase) {
                         double const * g = self.grad.data() + obase;
                         for (std::size_t ci = 0; ci < cin; ++ci)
                         {
                           double const * krow = kv.data() + kbase + ci * cout;
                           if (gx)
                           {
                             double s = 0.0;
                             for (std::size_t co = 0; co < cout; ++co)
                               s += g[co] * krow[co];
                             (*gx)[ibase + ci] += s;
                           }
                           if (gk)
                           {
                             double const xval = xv[ibase + ci];
                             double * gkrow = gk->data() + kbase + ci * cout;
                             for (std::size_t co = 0; co < cout; ++co)
                               gkrow[co] += xval * g[co];
                           }
                         }
                       });
                     });
}

Tensor drop_path(Tensor const & x, double rate, Mode mode, std::mt19937_64 & rng)
{
  if (!(rate >= 0.0 && rate < 1.0))
    throw ConfigError("drop_path rate must lie in [0, 1)");
  if (mode == Mode::eval || rate == 0.0)
    return x;
  std::size_t const batch = x.dim(0);
  std::size_t const inner = x.numel() / batch;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> keep(batch);
  for (auto & k : keep)
    k = u(rng) < rate ? 0.0 : 1.0 / (1.0 - rate);
  std::vector<double> out(x.numel());
  auto const xv = x.values();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < inner; ++i)
      out[b * inner + i] = xv[b * inner + i] * keep[b];
  return make_result("drop_path", x.shape(), std::move(out), {x}, [keep, inner](Node & self) {
    if (auto * g = parent_grad(self, 0))
      for (std::size_t b = 0; b < keep.size(); ++b)
        for (std::size_t i = 0; i < inner; ++i)
          (*g)[b * inner + i] += self.grad[b * inner + i] * keep[b];
  });
}

Tensor cosine_similarity(Tensor const & u, Tensor const & v)
{
  require_same_shape(u, v, "cosine_similarity");
  if (u.rank() != 2)
    throw ConfigError("cosine_similarity expects [n, d] inputs");
  constexpr double kEps = 1e-8;
  std::size_t const n = u.dim(0);
  std::size_t const d = u.dim(1);
  auto const uv = u.values();
  auto const vv = v.values();
  std::vector<double> dots(n), nu(n), nv(n), out(n);
  for (std::size_t r = 0; r < n; ++r)
  {
    double dot = 0.0, su = 0.0, sv = 0.0;
    for (std::size_t k = 0; k < d; ++k)
    {
      dot += uv[r * d + k] * vv[r * d + k];
      su += uv[r * d + k] * uv[r * d + k];
      sv += vv[r * d + k] * vv[r * d + k];
    }
    dots[r] = dot;
    nu[r] = std::sqrt(su);
    nv[r] = std::sqrt(sv);
    out[r] = dot / (nu[r] * nv[r] + kEps);
  }
  return make_result("cosine_similarity", {n}, std::move(out), {u, v},
                     [n, d, dots = std::move(dots), nu = std::move(nu), nv = std::move(nv)](Node & self) {
                       auto const & uv = parent_value(self, 0);
                       auto const & vv = parent_value(self, 1);
                       auto * gu = parent_grad(self, 0);
                       auto * gv = parent_grad(self, 1);
                       for (std::size_t r = 0; r < n; ++r)
                       {
                         double const den = nu[r] * nv[r] + kEps;
                         double const g = self.grad[r];
                         // d/du of dot / (|u||v| + eps)
                         for (std::size_t k = 0; k < d; ++k)
                         {
                           double const ui = uv[r * d + k];
                           double const vi = vv[r * d + k];
                           if (gu)
                           {
                             double dn = nu[r] > 0.0 ? nv[r] * ui / nu[r] : 0.0;
                             (*gu)[r * d + k] += g * (vi / den - dots[r] * dn / (den * den));
                           }
                           if (gv)
                           {
                             double dn = nv[r] > 0.0 ? nu[r] * vi / nv[r] : 0.0;
                             (*gv)[r * d + k] += g * (ui / den - dots[r] * dn / (den * den));
                           }
                         }
                       }
                     });
}

// ---- differentiation ---------------------------------------------------------

void backward(Tensor const & root)
{
  if (!root.defined() || root.numel() != 1)
    throw StateError("backward() needs a scalar root");
  if (!root.requires_grad())
    return;

  // Iterative post-order DFS: parents precede children in `order`.
  std::vector<Node *> order;
  std::unordered_set<Node *> visited;
  std::vector<std::pair<Node *, std::size_t>> stack{{root.node(), 0}};
  visited.insert(root.node());
  while (!stack.empty())
  {
    auto & [node, next] = stack.back();
    if (next < node->parents.size())
    {
      Node * p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second)
        stack.emplace_back(p, 0);
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  root.node()->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
  {
    Node * n = *it;
    if (!n->backward || n->grad.empty())
      continue;
    n->backward(*n);
    if (g_check_finite)
      for (auto const & p : n->parents)
        check_finite(p->grad, n->op, "gradient");
  }
}

}  // namespace soar::ad
