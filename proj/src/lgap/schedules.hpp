#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace lgap {

// Diffusion variance schedule. Steps are numbered 1..T; alpha_bar(0) = 1 and
// alpha_bar(k) = alpha_bar(k-1) * (1 - beta(k)).
class VarianceSchedule {
 public:
  // Throws DomainError unless every beta lies strictly in (0,1).
  VarianceSchedule(std::string type, std::vector<double> betas);

  std::size_t steps() const { return betas_.size(); }
  double beta(std::size_t k) const;
  double alpha_bar(std::size_t k) const;

  const std::vector<double>& betas() const { return betas_; }
  const std::vector<double>& alpha_bars() const { return alpha_bars_; }
  const std::string& type() const { return type_; }

  bool operator==(const VarianceSchedule& other) const {
    return type_ == other.type_ && betas_ == other.betas_;
  }

 private:
  std::string type_;
  std::vector<double> betas_;
  std::vector<double> alpha_bars_;
};

VarianceSchedule make_linear_schedule(std::size_t T, double beta_start, double beta_end);

// Squared-cosine cumulative schedule with offset s, betas capped at max_beta.
VarianceSchedule make_cosine_schedule(std::size_t T, double s = 0.008, double max_beta = 0.999);

// round(t_frac * T), ties away from zero. 0 means no diffusion.
std::size_t fraction_to_step(double t_frac, std::size_t T);

}  // namespace lgap
