#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "dynslam/core.hpp"
#include "dynslam/geometry.hpp"

namespace dynslam
{

struct AdamConfig
{
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const
  {
    if (!(lr > 0) || !(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1) || !(eps > 0))
      throw usage_error("adam: invalid hyperparameters");
  }
};

/// Dense Adam over a flat parameter vector.
class Adam
{
public:
  Adam() = default;
  Adam(size_t n, const AdamConfig &cfg) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) { cfg.validate(); }

  size_t size() const noexcept { return m_.size(); }
  int steps() const noexcept { return t_; }

  /// Writes the step direction (to be added) into `delta`.
  void direction(std::span<const double> grad, std::span<double> delta)
  {
    if (grad.size() != m_.size() || delta.size() != m_.size())
      throw usage_error("adam: size mismatch");
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double c2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (size_t i = 0; i < m_.size(); ++i)
    {
      m_[i] = cfg_.beta1 * m_[i] + (1 - cfg_.beta1) * grad[i];
      v_[i] = cfg_.beta2 * v_[i] + (1 - cfg_.beta2) * grad[i] * grad[i];
      delta[i] = -cfg_.lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + cfg_.eps);
    }
  }

  void step(std::span<double> params, std::span<const double> grad)
  {
    scratch_.resize(params.size());
    direction(grad, scratch_);
    for (size_t i = 0; i < params.size(); ++i)
      params[i] += scratch_[i];
  }

private:
  AdamConfig cfg_;
  std::vector<double> m_, v_, scratch_;
  int t_ = 0;
};

/// Adam on the left-perturbation tangent of a pose: T <- exp(delta) T.
class PoseAdam
{
public:
  explicit PoseAdam(const AdamConfig &cfg = {}) : adam_(6, cfg) {}

  void step(PoseSE3 &pose, const Vector6d &grad)
  {
    Vector6d delta;
    adam_.direction(std::span<const double>(grad.data(), 6), std::span<double>(delta.data(), 6));
    pose.left_update(delta);
    pose.orthonormalize();
  }

private:
  Adam adam_;
};

} // namespace dynslam
