#include "soar/errors.hpp"
#include "soar/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace soar::ad {

GradCheckReport grad_check(std::function<Tensor(std::vector<Tensor> const &)> const & f,
                           std::vector<Tensor> const & inputs, GradCheckOptions const & options)
{
  if (!(options.eps > 0.0))
    throw ConfigError("grad_check eps must be positive");
  for (auto const & t : inputs)
    if (!t.requires_grad() || t.node()->backward)
      throw ConfigError("grad_check inputs must be leaves with requires_grad");

  std::vector<std::vector<double>> analytic;
  {
    auto inputs_copy = inputs;
    for (auto & t : inputs_copy)
      t.zero_grad();
    Tensor const out = f(inputs);
    if (out.numel() != 1)
      throw ConfigError("grad_check function must return a scalar");
    backward(out);
    for (auto const & t : inputs)
    {
      auto g = t.grad();
      analytic.emplace_back(t.has_grad() ? std::vector<double>(g.begin(), g.end())
                                         : std::vector<double>(t.numel(), 0.0));
    }
  }

  NoGradGuard no_grad;
  GradCheckReport report;
  report.max_relative_error = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k)
  {
    Tensor x = inputs[k];
    std::size_t const n = x.numel();
    std::size_t const count = options.max_coords == 0 ? n : std::min(n, options.max_coords);
    std::vector<std::size_t> coords(count);
    for (std::size_t c = 0; c < count; ++c)
      coords[c] = count == n ? c : c * n / count;

    std::vector<double> numeric(count);
    double scale = options.scale_floor;
    for (std::size_t c = 0; c < count; ++c)
    {
      double & v = x.mutable_values()[coords[c]];
      double const saved = v;
      v = saved + options.eps;
      double const plus = f(inputs).item();
      v = saved - options.eps;
      double const minus = f(inputs).item();
      v = saved;
      numeric[c] = (plus - minus) / (2.0 * options.eps);
      scale = std::max({scale, std::abs(numeric[c]), std::abs(analytic[k][coords[c]])});
    }
    for (std::size_t c = 0; c < count; ++c)
    {
      double const err = std::abs(analytic[k][coords[c]] - numeric[c]) / scale;
      if (err >= report.max_relative_error)
      {
        report.max_relative_error = err;
        report.worst_input = k;
        report.worst_coord = coords[c];
        report.analytic = analytic[k][coords[c]];
        report.numeric = numeric[c];
      }
    }
  }
  return report;
}

}  // namespace soar::ad
