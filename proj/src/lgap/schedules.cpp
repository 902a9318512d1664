#include "lgap/schedules.hpp"

#include "lgap/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace lgap {

VarianceSchedule::VarianceSchedule(std::string type, std::vector<double> betas)
    : type_(std::move(type)), betas_(std::move(betas)) {
  if (betas_.empty()) throw DomainError("schedule needs at least one step");
  alpha_bars_.reserve(betas_.size() + 1);
  alpha_bars_.push_back(1.0);
  for (double b : betas_) {
    if (!(b > 0.0 && b < 1.0)) {
      throw DomainError("schedule beta " + std::to_string(b) + " outside (0,1)");
    }
    alpha_bars_.push_back(alpha_bars_.back() * (1.0 - b));
  }
  if (!(alpha_bars_.back() > 0.0)) {
    throw DomainError("schedule cumulative product underflows to zero");
  }
}

double VarianceSchedule::beta(std::size_t k) const {
  if (k < 1 || k > betas_.size()) throw DomainError("schedule step out of range");
  return betas_[k - 1];
}

double VarianceSchedule::alpha_bar(std::size_t k) const {
  if (k > betas_.size()) throw DomainError("schedule step out of range");
  return alpha_bars_[k];
}

VarianceSchedule make_linear_schedule(std::size_t T, double beta_start, double beta_end) {
  if (T < 1) throw DomainError("schedule length T must be >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw DomainError("linear schedule requires 0 < beta_start <= beta_end < 1");
  }
  std::vector<double> betas(T);
  if (T == 1) {
    betas[0] = beta_start;
  } else {
    for (std::size_t k = 0; k < T; ++k) {
      const double w = static_cast<double>(k) / static_cast<double>(T - 1);
      betas[k] = beta_start + (beta_end - beta_start) * w;
    }
  }
  return VarianceSchedule("linear", std::move(betas));
}

VarianceSchedule make_cosine_schedule(std::size_t T, double s, double max_beta) {
  if (T < 1) throw DomainError("schedule length T must be >= 1");
  if (!(s >= 0.0) || !(max_beta > 0.0 && max_beta < 1.0)) {
    throw DomainError("invalid cosine schedule parameters");
  }
  auto f = [&](double t) {
    const double c = std::cos((t / static_cast<double>(T) + s) / (1.0 + s) * std::numbers::pi / 2.0);
    return c * c;
  };
  std::vector<double> betas(T);
  for (std::size_t k = 1; k <= T; ++k) {
    const double b = 1.0 - f(static_cast<double>(k)) / f(static_cast<double>(k - 1));
    betas[k - 1] = std::clamp(b, 1e-12, max_beta);
  }
  return VarianceSchedule("cosine", std::move(betas));
}

std::size_t fraction_to_step(double t_frac, std::size_t T) {
  if (!(t_frac >= 0.0 && t_frac <= 1.0)) {
    throw DomainError("noise fraction must lie in [0,1]");
  }
  if (T < 1) throw DomainError("schedule length T must be >= 1");
  return static_cast<std::size_t>(std::llround(t_frac * static_cast<double>(T)));
}

}  // namespace lgap
