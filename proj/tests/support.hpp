#pragma once

#include "bex/common.hpp"
#include "bex/mlp.hpp"
#include "bex/replay.hpp"

#include <cmath>
#include <vector>

namespace bex::testing {

inline Mat random_mat(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

inline Vec random_vec(Eigen::Index n, Rng& rng, double lo, double hi) {
  Vec v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

// Relative error with a small absolute floor so that gradients that are
// numerically zero on both sides do not divide by zero.
inline double relative_error(double analytic, double numeric, double floor = 1e-8) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct GradientCheck {
  double worst = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;
};

// Pre-activations of every hidden layer, computed directly from the weights.
inline std::vector<Mat> hidden_preactivations(const Mlp& net, const Mat& x) {
  std::vector<Mat> out;
  Mat a = x;
  for (std::size_t l = 0; l + 1 < net.num_layers(); ++l) {
    Mat z = a * net.layer(l).weight.transpose();
    z.rowwise() += net.layer(l).bias.transpose();
    out.push_back(z);
    a = net.hidden_activation() == Activation::Relu ? Mat(z.cwiseMax(0.0)) : Mat(z.array().tanh().matrix());
  }
  return out;
}

inline bool same_signs(const std::vector<Mat>& a, const std::vector<Mat>& b) {
  for (std::size_t l = 0; l < a.size(); ++l)
    for (Eigen::Index i = 0; i < a[l].size(); ++i)
      if ((a[l].data()[i] > 0) != (b[l].data()[i] > 0)) return false;
  return true;
}

// Central differences of L = sum(w . net(x)) against the analytic parameter gradient.
// For ReLU networks a parameter whose +-eps perturbation flips a unit's sign is
// skipped, since the loss is not differentiable there.
inline GradientCheck check_parameter_gradients(Mlp net, const Mat& x, const Mat& w, double eps = 1e-5,
                                              double floor = 1e-8) {
  GradientCheck out;
  ForwardTrace trace;
  net.forward(x, trace);
  const auto analytic = net.backward(trace, w).flat();
  auto params = net.parameters();
  const bool relu = net.hidden_activation() == Activation::Relu;
  const auto base = relu ? hidden_preactivations(net, x) : std::vector<Mat>{};
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double keep = params[k];
    params[k] = keep + eps;
    net.set_parameters(params);
    const double up = net.forward(x).cwiseProduct(w).sum();
    const bool up_ok = !relu || same_signs(base, hidden_preactivations(net, x));
    params[k] = keep - eps;
    net.set_parameters(params);
    const double down = net.forward(x).cwiseProduct(w).sum();
    const bool down_ok = !relu || same_signs(base, hidden_preactivations(net, x));
    params[k] = keep;
    if (!up_ok || !down_ok) {
      ++out.skipped_kinks;
      continue;
    }
    out.worst = std::max(out.worst, relative_error(analytic[k], (up - down) / (2.0 * eps), floor));
    ++out.checked;
  }
  return out;
}

// Same check for the gradient with respect to the input batch.
inline double check_input_gradient(const Mlp& net, Mat x, const Mat& w, double eps = 1e-5, double floor = 1e-8) {
  ForwardTrace trace;
  net.forward(x, trace);
  const Mat analytic = net.input_gradient(trace, w);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = x.data()[i];
    x.data()[i] = keep + eps;
    const double up = net.forward(x).cwiseProduct(w).sum();
    x.data()[i] = keep - eps;
    const double down = net.forward(x).cwiseProduct(w).sum();
    x.data()[i] = keep;
    worst = std::max(worst, relative_error(analytic.data()[i], (up - down) / (2.0 * eps), floor));
  }
  return worst;
}

inline Transition make_transition(const Vec& s, const Vec& a, double r, const Vec& s2, bool terminal = false) {
  return {s, a, r, s2, terminal};
}

}  // namespace bex::testing
