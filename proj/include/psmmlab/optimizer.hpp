#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "psmmlab/parameters.hpp"

namespace psmmlab {

struct AdamConfig {
  double lr = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<int> decay_epochs = {15, 20};
  double decay_factor = 0.1;
};

// Per-parameter moments plus the step counter and learning-rate schedule.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(std::move(cfg)), lr_(cfg_.lr) {}

  const AdamConfig& config() const noexcept { return cfg_; }
  double learning_rate() const noexcept { return lr_; }
  std::uint64_t step_count() const noexcept { return step_; }

  // `completed_epochs` epochs are done; the rate is the initial one times the
  // decay factor once per boundary already passed.
  void set_epoch(int completed_epochs) {
    lr_ = cfg_.lr;
    for (int e : cfg_.decay_epochs)
      if (completed_epochs >= e) lr_ *= cfg_.decay_factor;
  }

  void step(ParameterSet& params) {
    ++step_;
    const double t = static_cast<double>(step_);
    const double c1 = 1.0 - std::pow(cfg_.beta1, t);
    const double c2 = 1.0 - std::pow(cfg_.beta2, t);
    for (auto& p : params) {
      if (!p.trainable) continue;
      auto& [m, v] = moments_[p.name];
      if (m.size() != p.value.size()) {
        m.assign(p.value.size(), 0.0);
        v.assign(p.value.size(), 0.0);
      }
      auto w = p.value.data();
      auto g = p.value.grad();
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        w[i] -= lr_ * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

  const std::vector<double>& first_moment(const std::string& name) const { return moments_.at(name).first; }
  const std::vector<double>& second_moment(const std::string& name) const { return moments_.at(name).second; }

 private:
  AdamConfig cfg_;
  double lr_;
  std::uint64_t step_ = 0;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments_;
};

}  // namespace psmmlab
