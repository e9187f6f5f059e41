#pragma once

// Desk-scale continuous-control environments.
//
//   pendulum      D=3 (cos th, sin th, th_dot)  A=1 torque in [-2, 2]
//                 th=0 is upright. dt=0.05, g=10, m=l=1, |th_dot| <= 8.
//                 r = -(th^2 + 0.1 th_dot^2 + 0.001 u^2), th wrapped to [-pi, pi).
//                 Spawn th ~ U(-pi, pi), th_dot ~ U(-1, 1). Horizon 200, never terminal.
//
//   mountain_car  D=2 (x, 10 v)  A=1 force in [-1, 1]
//                 v += 0.0015 f - 0.0025 cos(3x), |v| <= 0.07; x += v, x in [-1.2, 0.6].
//                 r = 10 (x' - x) - 0.1 f^2, plus 10 on reaching x >= 0.45 (terminal).
//                 Spawn x ~ U(-0.6, -0.4), v = 0. Horizon 300.
//
//   point_mass    D=4 (x, y, vx, vy)  A=2 force in [-1, 1]^2, goal at the origin
//                 v += (f - 0.5 v) dt; p += v dt; dt=0.1; positions clipped to [-5, 5].
//                 r = 10 (d - d') - 0.05 |f|^2 where d is the distance to the goal.
//                 Spawn p ~ U([-2, 2]^2), v = 0. Horizon 100, never terminal.
//
// All integrators are semi-implicit Euler: velocity first, then position with the new velocity.

#include "bex/common.hpp"

#include <functional>
#include <memory>

namespace bex {

struct EnvSpec {
  std::string name;
  int state_dim = 0;
  int action_dim = 0;
  Vec action_low;
  Vec action_high;
  int max_steps = 0;

  void validate() const {
    if (state_dim < 1 || action_dim < 1) throw ConfigError("EnvSpec: dimensions must be >= 1");
    if (action_low.size() != action_dim || action_high.size() != action_dim)
      throw ConfigError("EnvSpec: bound vectors must match action_dim");
    if (!(action_low.array() < action_high.array()).all()) throw ConfigError("EnvSpec: need low < high");
    if (max_steps < 1) throw ConfigError("EnvSpec: max_steps must be positive");
  }

  Vec clamp(const Vec& a) const { return a.cwiseMax(action_low).cwiseMin(action_high); }
  Vec center() const { return 0.5 * (action_low + action_high); }
  Vec half_range() const { return 0.5 * (action_high - action_low); }
};

struct StepResult {
  Vec next_state;
  double reward = 0.0;
  bool terminal = false;   // absorbing state reached
  bool truncated = false;  // time limit hit; the state is not absorbing
};

/// Episode bookkeeping shared by every environment; subclasses supply the dynamics.
class Env {
 public:
  explicit Env(EnvSpec spec) : spec_(std::move(spec)) { spec_.validate(); }
  virtual ~Env() = default;

  const EnvSpec& spec() const { return spec_; }
  int steps_taken() const { return steps_; }
  bool active() const { return active_; }

  Vec reset(std::uint64_t seed) {
    Rng rng(seed);
    do_reset(rng);
    steps_ = 0;
    active_ = true;
    return observe();
  }

  /// Start an episode from a given observation-space state (tests, probes).
  Vec reset_to(const Vec& state) {
    if (state.size() != spec_.state_dim) throw ConfigError("reset_to: state dimension mismatch");
    do_set_state(state);
    steps_ = 0;
    active_ = true;
    return observe();
  }

  /// Out-of-bounds actions are clamped, never rejected.
  StepResult step(const Vec& action) {
    if (!active_) throw UsageError("Env::step on an inactive episode (call reset first)");
    if (action.size() != spec_.action_dim) throw ConfigError("Env::step: action dimension mismatch");
    StepResult r = do_step(spec_.clamp(action));
    ++steps_;
    r.truncated = !r.terminal && steps_ >= spec_.max_steps;
    if (r.terminal || r.truncated) active_ = false;
    return r;
  }

  virtual Vec observe() const = 0;

 protected:
  virtual void do_reset(Rng& rng) = 0;
  virtual void do_set_state(const Vec& state) = 0;
  virtual StepResult do_step(const Vec& action) = 0;

 private:
  EnvSpec spec_;
  int steps_ = 0;
  bool active_ = false;
};

inline Vec make_vec(std::initializer_list<double> v) {
  Vec out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

class Pendulum final : public Env {
 public:
  static constexpr double kDt = 0.05;
  static constexpr double kGravity = 10.0;
  static constexpr double kMass = 1.0;
  static constexpr double kLength = 1.0;
  static constexpr double kMaxSpeed = 8.0;
  static constexpr double kMaxTorque = 2.0;

  Pendulum() : Env({"pendulum", 3, 1, make_vec({-kMaxTorque}), make_vec({kMaxTorque}), 200}) {}

  static double wrap_angle(double th) {
    return std::fmod(std::fmod(th + std::numbers::pi, 2 * std::numbers::pi) + 2 * std::numbers::pi,
                     2 * std::numbers::pi) -
           std::numbers::pi;
  }

  Vec observe() const override { return make_vec({std::cos(theta_), std::sin(theta_), theta_dot_}); }
  double theta() const { return theta_; }
  double theta_dot() const { return theta_dot_; }

 protected:
  void do_reset(Rng& rng) override {
    theta_ = rng.uniform(-std::numbers::pi, std::numbers::pi);
    theta_dot_ = rng.uniform(-1.0, 1.0);
  }

  void do_set_state(const Vec& s) override {
    theta_ = std::atan2(s[1], s[0]);
    theta_dot_ = s[2];
  }

  StepResult do_step(const Vec& a) override {
    const double u = a[0];
    const double th = wrap_angle(theta_);
    const double reward = -(th * th + 0.1 * theta_dot_ * theta_dot_ + 0.001 * u * u);
    theta_dot_ += (3.0 * kGravity / (2.0 * kLength) * std::sin(theta_) + 3.0 / (kMass * kLength * kLength) * u) * kDt;
    theta_dot_ = std::clamp(theta_dot_, -kMaxSpeed, kMaxSpeed);
    theta_ += theta_dot_ * kDt;
    return {observe(), reward, false, false};
  }

 private:
  double theta_ = 0.0;
  double theta_dot_ = 0.0;
};

class MountainCar final : public Env {
 public:
  static constexpr double kMinPosition = -1.2;
  static constexpr double kMaxPosition = 0.6;
  static constexpr double kMaxSpeed = 0.07;
  static constexpr double kGoalPosition = 0.45;
  static constexpr double kPower = 0.0015;
  static constexpr double kVelocityScale = 10.0;
  static constexpr double kProgressGain = 10.0;
  static constexpr double kGoalBonus = 10.0;

  MountainCar() : Env({"mountain_car", 2, 1, make_vec({-1.0}), make_vec({1.0}), 300}) {}

  Vec observe() const override { return make_vec({position_, kVelocityScale * velocity_}); }

 protected:
  void do_reset(Rng& rng) override {
    position_ = rng.uniform(-0.6, -0.4);
    velocity_ = 0.0;
  }

  void do_set_state(const Vec& s) override {
    position_ = std::clamp(s[0], kMinPosition, kMaxPosition);
    velocity_ = std::clamp(s[1] / kVelocityScale, -kMaxSpeed, kMaxSpeed);
  }

  StepResult do_step(const Vec& a) override {
    const double force = a[0];
    const double before = position_;
    velocity_ += force * kPower - 0.0025 * std::cos(3.0 * position_);
    velocity_ = std::clamp(velocity_, -kMaxSpeed, kMaxSpeed);
    position_ = std::clamp(position_ + velocity_, kMinPosition, kMaxPosition);
    if (position_ == kMinPosition && velocity_ < 0) velocity_ = 0.0;
    const bool goal = position_ >= kGoalPosition;
    double reward = kProgressGain * (position_ - before) - 0.1 * force * force;
    if (goal) reward += kGoalBonus;
    return {observe(), reward, goal, false};
  }

 private:
  double position_ = -0.5;
  double velocity_ = 0.0;
};

class PointMass final : public Env {
 public:
  static constexpr double kDt = 0.1;
  static constexpr double kDamping = 0.5;
  static constexpr double kArena = 5.0;
  static constexpr double kSpawn = 2.0;
  static constexpr double kProgressGain = 10.0;

  PointMass() : Env({"point_mass", 4, 2, make_vec({-1.0, -1.0}), make_vec({1.0, 1.0}), 100}) {}

  Vec observe() const override { return state_; }
  double distance() const { return state_.head<2>().norm(); }

 protected:
  void do_reset(Rng& rng) override {
    state_ = make_vec({rng.uniform(-kSpawn, kSpawn), rng.uniform(-kSpawn, kSpawn), 0.0, 0.0});
  }

  void do_set_state(const Vec& s) override { state_ = s; }

  StepResult do_step(const Vec& a) override {
    const double before = distance();
    for (int i = 0; i < 2; ++i) {
      state_[2 + i] += (a[i] - kDamping * state_[2 + i]) * kDt;
      state_[i] = std::clamp(state_[i] + state_[2 + i] * kDt, -kArena, kArena);
    }
    const double reward = kProgressGain * (before - distance()) - 0.05 * a.squaredNorm();
    return {observe(), reward, false, false};
  }

 private:
  Vec state_ = Vec::Zero(4);
};

inline const std::vector<std::string>& env_names() {
  static const std::vector<std::string> names{"pendulum", "mountain_car", "point_mass"};
  return names;
}

inline std::unique_ptr<Env> make_env(const std::string& name) {
  if (name == "pendulum") return std::make_unique<Pendulum>();
  if (name == "mountain_car") return std::make_unique<MountainCar>();
  if (name == "point_mass") return std::make_unique<PointMass>();
  throw ConfigError("unknown environment '" + name + "' (expected pendulum|mountain_car|point_mass)");
}

using PolicyFn = std::function<Vec(const Vec& state)>;

struct EvalResult {
  double mean_return = 0.0;
  double return_variance = 0.0;  // population variance across episodes
  std::vector<double> returns;
};

/// Undiscounted returns of `policy` over `episodes` episodes; episode e resets with derive_seed(seed, e).
inline EvalResult evaluate_policy(Env& env, const PolicyFn& policy, int episodes, std::uint64_t seed) {
  if (episodes < 1) throw ConfigError("evaluate_policy: episodes must be >= 1");
  EvalResult out;
  for (int e = 0; e < episodes; ++e) {
    Vec s = env.reset(derive_seed(seed, static_cast<std::uint64_t>(e)));
    double total = 0.0;
    while (true) {
      const auto r = env.step(policy(s));
      total += r.reward;
      s = r.next_state;
      if (r.terminal || r.truncated) break;
    }
    out.returns.push_back(total);
  }
  double sum = 0.0;
  for (double g : out.returns) sum += g;
  out.mean_return = sum / episodes;
  double sq = 0.0;
  for (double g : out.returns) sq += (g - out.mean_return) * (g - out.mean_return);
  out.return_variance = sq / episodes;
  return out;
}

}  // namespace bex
