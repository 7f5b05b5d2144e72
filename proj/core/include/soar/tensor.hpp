#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

// Dense float64 tensors with reverse-mode automatic differentiation.
//
// Every op returns a new tensor. When gradient recording is enabled and at
// least one input requires a gradient, the result keeps links to its inputs
// and an adjoint rule; backward() walks that graph in reverse topological
// order. Broadcasting is limited to scalars and to "trailing" operands whose
// shape equals a suffix of the other operand's shape.
namespace soar::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(Shape const & shape);
std::string to_string(Shape const & shape);

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Accumulates this node's grad into its parents' grads.
  std::function<void(Node &)> backward;
  char const * op = "leaf";

  std::vector<double> & ensure_grad()
  {
    if (grad.empty())
      grad.assign(value.size(), 0.0);
    return grad;
  }
};

class Tensor {
public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return static_cast<bool>(node_); }
  Shape const & shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<double const> values() const { return node_->value; }
  // Direct write access, meant for parameters and optimizers. Writing into a
  // tensor that is already part of a recorded graph invalidates that graph.
  std::span<double> mutable_values() { return node_->value; }
  std::span<double const> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->ensure_grad(); }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad.clear(); }
  double item() const;

  // Copy of the values as a new leaf.
  Tensor detach() const;

  Node * node() const { return node_.get(); }
  std::shared_ptr<Node> const & node_ptr() const { return node_; }

private:
  std::shared_ptr<Node> node_;
};

// ---- recording switches -------------------------------------------------

bool grad_enabled();

// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(NoGradGuard const &) = delete;
  NoGradGuard & operator=(NoGradGuard const &) = delete;

private:
  bool previous_;
};

// While active, every op and every backward step throws NumericError if it
// produces a NaN or infinity.
class FiniteCheckGuard {
public:
  explicit FiniteCheckGuard(bool enabled = true);
  ~FiniteCheckGuard();
  FiniteCheckGuard(FiniteCheckGuard const &) = delete;
  FiniteCheckGuard & operator=(FiniteCheckGuard const &) = delete;

private:
  bool previous_;
};

// ---- elementwise ---------------------------------------------------------

Tensor add(Tensor const & a, Tensor const & b);
Tensor sub(Tensor const & a, Tensor const & b);
Tensor mul(Tensor const & a, Tensor const & b);
Tensor scale(Tensor const & a, double s);
Tensor add_scalar(Tensor const & a, double s);
Tensor relu(Tensor const & a);
Tensor exp(Tensor const & a);
Tensor log(Tensor const & a);
Tensor sqrt(Tensor const & a);
// x * clamp(x + 3, 0, 6) / 6
Tensor hardswish(Tensor const & a);

// b.shape() must equal the trailing dims of a.shape(); b is repeated over
// the leading dims.
Tensor add_trailing(Tensor const & a, Tensor const & b);
Tensor mul_trailing(Tensor const & a, Tensor const & b);

// ---- linear algebra and layout ---------------------------------------------

Tensor matmul(Tensor const & a, Tensor const & b);  // [m,k] x [k,n]
Tensor bmm(Tensor const & a, Tensor const & b);     // [g,m,k] x [g,k,n]
Tensor transpose(Tensor const & a);                 // 2-D
Tensor permute(Tensor const & a, std::vector<std::size_t> const & axes);
Tensor reshape(Tensor const & a, Shape shape);
Tensor concat(std::vector<Tensor> const & parts, std::size_t axis);
// Inserts a new axis of size n at `axis` by repetition.
Tensor expand(Tensor const & a, std::size_t axis, std::size_t n);
Tensor index_select(Tensor const & a, std::size_t axis, std::vector<std::size_t> const & index);
// out[i] = a[i, index[i]] for a 2-D tensor.
Tensor pick(Tensor const & a, std::vector<std::size_t> const & index);

// ---- reductions ---------------------------------------------------------------

Tensor sum(Tensor const & a, std::size_t axis);
Tensor mean(Tensor const & a, std::size_t axis);
Tensor sum_all(Tensor const & a);
Tensor mean_all(Tensor const & a);

// ---- normalisation and activations over an axis ------------------------------

// Max-subtracted, rows along `axis` sum to one.
Tensor softmax(Tensor const & a, std::size_t axis);
Tensor log_softmax(Tensor const & a, std::size_t axis);

// Standardises over the last axis (biased variance), then gain/bias.
Tensor layer_norm(Tensor const & x, Tensor const & gain, Tensor const & bias, double eps = 1e-5);

enum class Mode { train, eval };

// Running statistics live in plain leaf tensors so they can be registered
// and checkpointed alongside the parameters. Copies share storage.
struct BatchNormStats {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.9;  // running = momentum * running + (1 - momentum) * batch
  double eps = 1e-5;

  explicit BatchNormStats(std::size_t channels = 0)
    : running_mean(Tensor::zeros({channels})), running_var(Tensor::full({channels}, 1.0))
  {
  }
};

// Normalises every channel (last axis) over all leading positions. Train
// mode uses batch statistics and updates `stats`; eval mode uses the running
// statistics.
Tensor batch_norm(Tensor const & x, Tensor const & gain, Tensor const & bias, BatchNormStats & stats, Mode mode);

// NHWC cross-correlation with kernels [kh, kw, cin, cout]. Zero padding of
// (k - 1) / 2 before and k - 1 - (k - 1) / 2 after each spatial axis, then
// stride; output side is (side - 1) / stride + 1.
Tensor conv2d(Tensor const & x, Tensor const & kernels, std::size_t stride);

// Per leading-axis sample: in train mode the whole slice is zeroed with
// probability `rate` and survivors scaled by 1 / (1 - rate). Identity in eval
// mode or at rate 0.
Tensor drop_path(Tensor const & x, double rate, Mode mode, std::mt19937_64 & rng);

// Row-wise u.v / (|u| |v| + 1e-8) for [n, d] inputs; returns [n].
Tensor cosine_similarity(Tensor const & u, Tensor const & v);

// ---- differentiation ---------------------------------------------------------

// Seeds d(root)/d(root) = 1 and accumulates gradients into every node that
// requires them. Throws StateError for non-scalar roots.
void backward(Tensor const & root);

struct GradCheckOptions {
  double eps = 1e-5;
  // Coordinates checked per input; 0 checks all of them. Larger inputs are
  // sampled at evenly spaced positions.
  std::size_t max_coords = 0;
  // Lower bound on the per-input gradient scale used for normalisation.
  double scale_floor = 1e-4;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_coord = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Compares backward() against central differences at float64. For each
// input the error is max_i |analytic_i - numeric_i| divided by
// max(max_i |analytic_i|, max_i |numeric_i|, scale_floor); the report
// carries the largest value over inputs. `inputs` must be leaves with
// requires_grad set; `f` must return a scalar.
GradCheckReport grad_check(std::function<Tensor(std::vector<Tensor> const &)> const & f,
                           std::vector<Tensor> const & inputs, GradCheckOptions const & options = {});

}  // namespace soar::ad
