#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "dpl/common.hpp"
#include "dpl/encoder.hpp"
#include "dpl/losses.hpp"
#include "dpl/prototypes.hpp"

namespace dpl::test {

inline Matrix gaussian(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * standard_normal(rng);
  return m;
}

inline Matrix unit_rows(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix m = gaussian(rows, cols, rng);
  m.rowwise().normalize();
  return m;
}

// Central differences of f at x, step h.
inline Matrix numeric_gradient(const std::function<double(const Matrix&)>& f, const Matrix& x,
                               double h = 1e-5) {
  Matrix g(x.rows(), x.cols());
  Matrix probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = probe.data()[i];
    probe.data()[i] = keep + h;
    const double up = f(probe);
    probe.data()[i] = keep - h;
    const double down = f(probe);
    probe.data()[i] = keep;
    g.data()[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// Norm-wise relative error against the larger of the two gradients.
inline double relative_error(const Matrix& a, const Matrix& b) {
  const double denom = std::max({a.norm(), b.norm(), 1e-12});
  return (a - b).norm() / denom;
}

// Finite differences through the whole network: perturbs every parameter
// entry and compares against backward(). loss must be deterministic in the model
// (fixed dropout stream) and, when grads is non-null, fill the output gradients.
using NetworkLoss = std::function<double(const EncoderModel&, OutputGrads*)>;

inline double network_gradient_error(const EncoderModel& model, const Matrix& x,
                                     std::uint64_t rng_state, const NetworkLoss& loss,
                                     double h = 1e-5) {
  OutputGrads out;
  loss(model, &out);
  const auto record = forward(model, x, rng_state, true);
  const Parameters analytic = backward(model, record, out);
  Parameters numeric = model.parameters().zeros_like();
  EncoderModel probe = model;
  // Visit tensors by name so the numeric and analytic sets line up.
  numeric.visit([&](std::string_view name, auto& target) {
    for (Eigen::Index k = 0; k < target.size(); ++k) {
      double* slot = nullptr;
      probe.mutable_parameters().visit([&](std::string_view n, auto& t) {
        if (n == name) slot = t.data() + k;
      });
      const double keep = *slot;
      *slot = keep + h;
      const double up = loss(probe, nullptr);
      *slot = keep - h;
      const double down = loss(probe, nullptr);
      *slot = keep;
      target.data()[k] = (up - down) / (2.0 * h);
    }
  });
  double diff = 0.0;
  analytic.visit([&](std::string_view name, const auto& a) {
    numeric.visit([&](std::string_view n, const auto& b) {
      if (n == name) diff += (a - b).squaredNorm();
    });
  });
  double total_a = 0.0;
  double total_b = 0.0;
  analytic.visit([&](std::string_view, const auto& a) { total_a += a.squaredNorm(); });
  numeric.visit([&](std::string_view, const auto& b) { total_b += b.squaredNorm(); });
  return std::sqrt(diff) / std::max({std::sqrt(total_a), std::sqrt(total_b), 1e-12});
}

}  // namespace dpl::test
