// tests/gradcheck.h

// Central finite-difference checking shared by the unit and acceptance suites.

#ifndef CTXLM_TESTS_GRADCHECK_H_
#define CTXLM_TESTS_GRADCHECK_H_

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "ctxlm/graph.h"

namespace ctxlm::testing {

struct GradCheckResult {
  double max_relative_error = 0.0;
  int checked = 0;
};

/// Relative error with a floor on the denominator so that gradients that are
/// zero up to rounding compare by absolute difference.
inline double RelativeError(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares the gradient of `loss_fn` w.r.t. `params` with central
/// differences.  At most `max_per_tensor` entries of each tensor are probed
/// (chosen by `rng`); 0 probes every entry.
///
/// A central difference cannot resolve gradients below about
/// u * |loss| / eps (u the unit roundoff), so the relative-error floor is
/// raised to where four times that resolution counts as 1e-4.
inline GradCheckResult CheckGradients(std::vector<ag::Tensor> params,
                                      const std::function<ag::Tensor()>& loss_fn,
                                      double eps = 1e-5, int max_per_tensor = 0,
                                      std::mt19937_64* rng = nullptr) {
  for (auto& p : params) p.ZeroGrad();
  ag::Tensor loss = loss_fn();
  const double resolution = std::numeric_limits<double>::epsilon() / 2 *
                            std::max(1.0, std::abs(loss.item())) / eps;
  const double floor = std::max(1e-6, 4 * resolution / 1e-4);
  ag::Backward(loss);
  std::vector<std::vector<double>> analytic;
  for (auto& p : params) analytic.push_back(p.grad());

  GradCheckResult result;
  ag::NoGradGuard no_grad;
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto values = params[t].mutable_values();
    std::vector<std::size_t> idx(values.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (max_per_tensor > 0 && int(idx.size()) > max_per_tensor && rng != nullptr) {
      std::shuffle(idx.begin(), idx.end(), *rng);
      idx.resize(max_per_tensor);
    }
    for (std::size_t i : idx) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = loss_fn().item();
      values[i] = saved - eps;
      const double down = loss_fn().item();
      values[i] = saved;
      const double numeric = (up - down) / (2 * eps);
      result.max_relative_error =
          std::max(result.max_relative_error, RelativeError(analytic[t][i], numeric, floor));
      ++result.checked;
    }
  }
  return result;
}

inline ag::Tensor RandomParameter(int rows, int cols, std::mt19937_64& rng, double bound = 1.0) {
  std::uniform_real_distribution<double> u(-bound, bound);
  std::vector<double> v(std::size_t(rows) * cols);
  for (double& x : v) x = u(rng);
  return ag::Tensor::Parameter(rows, cols, std::move(v));
}

inline ag::Tensor RandomConstant(int rows, int cols, std::mt19937_64& rng, double bound = 1.0) {
  std::uniform_real_distribution<double> u(-bound, bound);
  std::vector<double> v(std::size_t(rows) * cols);
  for (double& x : v) x = u(rng);
  return ag::Tensor::Constant(rows, cols, std::move(v));
}

/// sum(out * w) with fixed random weights; weights are zeroed on masked
/// attention entries so the probe stays well conditioned.
inline ag::Tensor WeightedSum(const ag::Tensor& out, const ag::Tensor& weights) {
  std::vector<double> w(weights.values().begin(), weights.values().end());
  auto v = out.values();
  for (std::size_t i = 0; i < w.size(); ++i)
    if (v[i] == ag::kMaskedScore) w[i] = 0.0;
  return ag::Sum(ag::Multiply(out, ag::Tensor::Constant(out.rows(), out.cols(), std::move(w))));
}

}  // namespace ctxlm::testing

#endif  // CTXLM_TESTS_GRADCHECK_H_
