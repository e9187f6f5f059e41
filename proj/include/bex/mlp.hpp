#pragma once

// Fully connected networks with hand-written backpropagation.
//
// A batch is a row-major matrix whose rows are samples. Hidden layers use a
// single activation; the output layer is always affine.

#include "bex/common.hpp"
#include "bex/container.hpp"

#include <span>

namespace bex {

enum class Activation { Relu, Tanh };

inline std::string to_string(Activation a) { return a == Activation::Relu ? "relu" : "tanh"; }

inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::Relu;
  if (s == "tanh") return Activation::Tanh;
  throw ConfigError("unknown activation '" + s + "' (expected relu|tanh)");
}

struct Layer {
  Mat weight;  // out x in
  Vec bias;    // out
};

/// Per-parameter gradient accumulators mirroring an Mlp.
struct GradientTape {
  std::vector<Mat> weight;
  std::vector<Vec> bias;

  void zero() {
    for (auto& w : weight) w.setZero();
    for (auto& b : bias) b.setZero();
  }

  bool all_finite() const {
    for (const auto& w : weight)
      if (!w.allFinite()) return false;
    for (const auto& b : bias)
      if (!b.allFinite()) return false;
    return true;
  }

  GradientTape& operator+=(const GradientTape& other) {
    if (other.weight.size() != weight.size()) throw ConfigError("GradientTape: shape mismatch");
    for (std::size_t l = 0; l < weight.size(); ++l) {
      weight[l] += other.weight[l];
      bias[l] += other.bias[l];
    }
    return *this;
  }

  GradientTape& operator*=(double s) {
    for (auto& w : weight) w *= s;
    for (auto& b : bias) b *= s;
    return *this;
  }

  /// Same ordering as Mlp::parameters().
  std::vector<double> flat() const {
    std::vector<double> out;
    for (std::size_t l = 0; l < weight.size(); ++l) {
      out.insert(out.end(), weight[l].data(), weight[l].data() + weight[l].size());
      out.insert(out.end(), bias[l].data(), bias[l].data() + bias[l].size());
    }
    return out;
  }
};

/// Activations recorded by a forward pass, consumed by backward().
struct ForwardTrace {
  Mat input;
  std::vector<Mat> outputs;  // post-activation output of layer l; the input of layer l+1
  bool empty() const { return outputs.empty(); }
  const Mat& layer_input(std::size_t l) const { return l == 0 ? input : outputs[l - 1]; }
};

class Mlp {
 public:
  Mlp() = default;

  /// Fan-in uniform initialization: every weight and bias ~ U(-1/sqrt(in), 1/sqrt(in)).
  Mlp(std::vector<int> sizes, Activation hidden, Rng& rng) : Mlp(std::move(sizes), hidden) {
    for (auto& layer : layers_) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(layer.weight.cols()));
      for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = rng.uniform(-bound, bound);
      for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias[i] = rng.uniform(-bound, bound);
    }
  }

  /// All-zero parameters.
  Mlp(std::vector<int> sizes, Activation hidden) : sizes_(std::move(sizes)), hidden_(hidden) {
    if (sizes_.size() < 2) throw ConfigError("Mlp needs at least input and output sizes");
    for (int s : sizes_)
      if (s <= 0) throw ConfigError("Mlp layer sizes must be positive");
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l)
      layers_.push_back({Mat::Zero(sizes_[l + 1], sizes_[l]), Vec::Zero(sizes_[l + 1])});
  }

  const std::vector<int>& sizes() const { return sizes_; }
  Activation hidden_activation() const { return hidden_; }
  int input_dim() const { return sizes_.front(); }
  int output_dim() const { return sizes_.back(); }
  std::size_t num_layers() const { return layers_.size(); }
  Layer& layer(std::size_t l) { return layers_.at(l); }
  const Layer& layer(std::size_t l) const { return layers_.at(l); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& layer : layers_) n += layer.weight.size() + layer.bias.size();
    return n;
  }

  Mat forward(const Mat& x) const {
    check_input(x);
    Mat a = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      Mat z = affine(l, a);
      if (l + 1 < layers_.size()) activate(z);
      a = std::move(z);
    }
    return a;
  }

  Mat forward(const Mat& x, ForwardTrace& trace) const {
    check_input(x);
    trace.input = x;
    trace.outputs.clear();
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      Mat z = affine(l, trace.layer_input(l));
      if (l + 1 < layers_.size()) activate(z);
      trace.outputs.push_back(std::move(z));
    }
    return trace.outputs.back();
  }

  GradientTape zero_tape() const {
    GradientTape tape;
    for (const auto& layer : layers_) {
      tape.weight.push_back(Mat::Zero(layer.weight.rows(), layer.weight.cols()));
      tape.bias.push_back(Vec::Zero(layer.bias.size()));
    }
    return tape;
  }

  /// Accumulates d(sum over batch of upstream . output)/d(parameters) into `tape`.
  /// If `input_grad` is given it receives the gradient with respect to the input batch.
  void backward(const ForwardTrace& trace, const Mat& upstream, GradientTape& tape, Mat* input_grad = nullptr) const {
    if (trace.empty() || trace.outputs.size() != layers_.size())
      throw UsageError("Mlp::backward called without a matching forward pass");
    const auto batch = trace.input.rows();
    if (upstream.rows() != batch || upstream.cols() != output_dim())
      throw ConfigError("Mlp::backward: upstream gradient shape mismatch");
    if (tape.weight.size() != layers_.size()) throw ConfigError("Mlp::backward: tape shape mismatch");

    Mat delta = upstream;
    for (std::size_t l = layers_.size(); l-- > 0;) {
      if (l + 1 < layers_.size()) apply_activation_derivative(trace.outputs[l], delta);
      tape.weight[l].noalias() += delta.transpose() * trace.layer_input(l);
      tape.bias[l] += delta.colwise().sum().transpose();
      if (l > 0 || input_grad != nullptr) {
        Mat next = delta * layers_[l].weight;
        delta = std::move(next);
      }
    }
    if (input_grad != nullptr) *input_grad = std::move(delta);
  }

  GradientTape backward(const ForwardTrace& trace, const Mat& upstream, Mat* input_grad = nullptr) const {
    auto tape = zero_tape();
    backward(trace, upstream, tape, input_grad);
    return tape;
  }

  /// Gradient with respect to the input only; parameters are treated as constants.
  Mat input_gradient(const ForwardTrace& trace, const Mat& upstream) const {
    if (trace.empty() || trace.outputs.size() != layers_.size())
      throw UsageError("Mlp::input_gradient called without a matching forward pass");
    Mat delta = upstream;
    for (std::size_t l = layers_.size(); l-- > 0;) {
      if (l + 1 < layers_.size()) apply_activation_derivative(trace.outputs[l], delta);
      Mat next = delta * layers_[l].weight;
      delta = std::move(next);
    }
    return delta;
  }

  std::vector<double> parameters() const {
    std::vector<double> out;
    out.reserve(parameter_count());
    for (const auto& layer : layers_) {
      out.insert(out.end(), layer.weight.data(), layer.weight.data() + layer.weight.size());
      out.insert(out.end(), layer.bias.data(), layer.bias.data() + layer.bias.size());
    }
    return out;
  }

  void set_parameters(std::span<const double> values) {
    if (values.size() != parameter_count()) throw ConfigError("Mlp::set_parameters: wrong parameter count");
    std::size_t k = 0;
    for (auto& layer : layers_) {
      for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = values[k++];
      for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias[i] = values[k++];
    }
  }

  bool all_finite() const {
    for (const auto& layer : layers_)
      if (!layer.weight.allFinite() || !layer.bias.allFinite()) return false;
    return true;
  }

  bool same_shape(const Mlp& other) const { return sizes_ == other.sizes_; }

  void save(BinaryWriter& w) const {
    w.tag("mlp");
    w.u64(sizes_.size());
    for (int s : sizes_) w.u64(static_cast<std::uint64_t>(s));
    w.str(to_string(hidden_));
    const auto params = parameters();
    w.reals(params);
  }

  static Mlp load(BinaryReader& r) {
    r.expect_tag("mlp");
    const auto n = r.u64();
    if (n < 2 || n > 64) throw FormatError("mlp record: implausible layer count");
    std::vector<int> sizes;
    for (std::uint64_t i = 0; i < n; ++i) sizes.push_back(static_cast<int>(r.u64()));
    Mlp net(std::move(sizes), activation_from_string(r.str()));
    const auto params = r.reals();
    net.set_parameters(params);
    return net;
  }

  friend bool operator==(const Mlp& a, const Mlp& b) {
    return a.sizes_ == b.sizes_ && a.hidden_ == b.hidden_ && a.parameters() == b.parameters();
  }

 private:
  void check_input(const Mat& x) const {
    if (x.cols() != input_dim())
      throw ConfigError("Mlp::forward: input dimension " + std::to_string(x.cols()) + " != " +
                        std::to_string(input_dim()));
  }

  Mat affine(std::size_t l, const Mat& a) const {
    Mat z(a.rows(), layers_[l].weight.rows());
    z.noalias() = a * layers_[l].weight.transpose();
    z.rowwise() += layers_[l].bias.transpose();
    return z;
  }

  void activate(Mat& z) const {
    if (hidden_ == Activation::Relu)
      z = z.cwiseMax(0.0);
    else  // tanh through the vectorized exp; absolute error stays below 1e-15
      z = (1.0 - 2.0 / ((2.0 * z.array()).exp() + 1.0)).matrix();
  }

  void apply_activation_derivative(const Mat& out, Mat& delta) const {
    if (hidden_ == Activation::Relu)
      delta = (out.array() > 0.0).select(delta, 0.0);
    else
      delta.array() *= 1.0 - out.array().square();
  }

  std::vector<int> sizes_;
  Activation hidden_ = Activation::Tanh;
  std::vector<Layer> layers_;
};

struct AdamConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam optimizer state for one network.
class Adam {
 public:
  Adam() = default;
  Adam(const Mlp& net, AdamConfig cfg) : cfg_(cfg), m_(net.zero_tape()), v_(net.zero_tape()) {
    if (!(cfg.learning_rate >= 0.0)) throw ConfigError("Adam: learning rate must be non-negative");
  }

  std::uint64_t steps() const { return steps_; }
  const AdamConfig& config() const { return cfg_; }

  /// Descends along `grad`. Throws NumericalError (leaving `net` untouched) on a non-finite gradient.
  void step(Mlp& net, const GradientTape& grad) {
    if (grad.weight.size() != net.num_layers() || m_.weight.size() != net.num_layers())
      throw ConfigError("Adam::step: tape does not match network");
    if (!grad.all_finite()) throw NumericalError("Adam::step: non-finite gradient");
    ++steps_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
      auto& layer = net.layer(l);
      update(layer.weight.array(), grad.weight[l].array(), m_.weight[l].array(), v_.weight[l].array(), c1, c2);
      update(layer.bias.array(), grad.bias[l].array(), m_.bias[l].array(), v_.bias[l].array(), c1, c2);
    }
  }

  void save(BinaryWriter& w) const {
    w.tag("adam");
    w.f64(cfg_.learning_rate);
    w.f64(cfg_.beta1);
    w.f64(cfg_.beta2);
    w.f64(cfg_.epsilon);
    w.u64(steps_);
    w.reals(m_.flat());
    w.reals(v_.flat());
  }

  void load(BinaryReader& r, const Mlp& net) {
    r.expect_tag("adam");
    cfg_.learning_rate = r.f64();
    cfg_.beta1 = r.f64();
    cfg_.beta2 = r.f64();
    cfg_.epsilon = r.f64();
    steps_ = r.u64();
    m_ = net.zero_tape();
    v_ = net.zero_tape();
    unflatten(r.reals(), m_);
    unflatten(r.reals(), v_);
  }

 private:
  template <typename P, typename G, typename M, typename V>
  void update(P&& p, const G& g, M&& m, V&& v, double c1, double c2) const {
    m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
    v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g.square();
    p -= cfg_.learning_rate * (m / c1) / ((v / c2).sqrt() + cfg_.epsilon);
  }

  static void unflatten(const std::vector<double>& flat, GradientTape& tape) {
    std::size_t k = 0;
    for (std::size_t l = 0; l < tape.weight.size(); ++l) {
      for (Eigen::Index i = 0; i < tape.weight[l].size(); ++i) tape.weight[l].data()[i] = flat.at(k++);
      for (Eigen::Index i = 0; i < tape.bias[l].size(); ++i) tape.bias[l][i] = flat.at(k++);
    }
    if (k != flat.size()) throw FormatError("adam record: moment size mismatch");
  }

  AdamConfig cfg_;
  GradientTape m_, v_;
  std::uint64_t steps_ = 0;
};

/// Adam for a single scalar parameter (the log-temperature).
class ScalarAdam {
 public:
  ScalarAdam() = default;
  explicit ScalarAdam(AdamConfig cfg) : cfg_(cfg) {}

  void step(double& param, double grad) {
    if (!std::isfinite(grad)) throw NumericalError("ScalarAdam::step: non-finite gradient");
    ++steps_;
    m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * grad;
    v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * grad * grad;
    const double mh = m_ / (1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_)));
    const double vh = v_ / (1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_)));
    param -= cfg_.learning_rate * mh / (std::sqrt(vh) + cfg_.epsilon);
  }

  std::uint64_t steps() const { return steps_; }

  void save(BinaryWriter& w) const {
    w.tag("scalar_adam");
    w.f64(cfg_.learning_rate);
    w.f64(m_);
    w.f64(v_);
    w.u64(steps_);
  }
  void load(BinaryReader& r) {
    r.expect_tag("scalar_adam");
    cfg_.learning_rate = r.f64();
    m_ = r.f64();
    v_ = r.f64();
    steps_ = r.u64();
  }

 private:
  AdamConfig cfg_;
  double m_ = 0.0, v_ = 0.0;
  std::uint64_t steps_ = 0;
};

/// target <- (1 - tau) * target + tau * source, elementwise.
inline void soft_update(Mlp& target, const Mlp& source, double tau) {
  if (!target.same_shape(source)) throw ConfigError("soft_update: shape mismatch");
  if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("soft_update: tau must lie in (0, 1]");
  for (std::size_t l = 0; l < target.num_layers(); ++l) {
    auto& t = target.layer(l);
    const auto& s = source.layer(l);
    if (tau == 1.0) {
      t = s;
      continue;
    }
    t.weight = (1.0 - tau) * t.weight + tau * s.weight;
    t.bias = (1.0 - tau) * t.bias + tau * s.bias;
  }
}

}  // namespace bex
