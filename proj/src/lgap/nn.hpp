#pragma once

#include "lgap/tensor.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace lgap::nn {

// View of one trainable tensor and its gradient buffer.
struct ParamRef {
  double* value;
  double* grad;
  std::size_t size;
};

// y = x W^T + b, with W of shape (out, in).
struct Dense {
  Matrix weight;
  RowVector bias;
  Matrix grad_weight;
  RowVector grad_bias;

  Dense() = default;
  Dense(std::size_t in, std::size_t out);

  std::size_t in() const { return static_cast<std::size_t>(weight.cols()); }
  std::size_t out() const { return static_cast<std::size_t>(weight.rows()); }

  // Uniform(-a, a) with a = sqrt(6 / (in + out)); bias zero.
  void init_glorot(std::mt19937_64& rng);

  Matrix forward(const Matrix& x) const;
  // Accumulates parameter gradients and returns dL/dx.
  Matrix backward(const Matrix& x, const Matrix& grad_out);
  Matrix backward_input(const Matrix& grad_out) const;
  // Parameter gradients only.
  void accumulate(const Matrix& x, const Matrix& grad_out);

  void zero_grad();
  void collect(std::vector<ParamRef>& out);
};

Matrix tanh(const Matrix& a);
// d tanh given the activation output h = tanh(a).
Matrix tanh_backward(const Matrix& h, const Matrix& grad_out);
Matrix silu(const Matrix& a);
Matrix silu_backward(const Matrix& a, const Matrix& grad_out);

// Sum over the batch of per-sample softmax cross-entropy. `grad` receives
// dL/dlogits for that sum; `per_sample` (if non-null) the individual losses.
double softmax_cross_entropy(const Matrix& logits, const Labels& labels, Matrix* grad,
                             std::vector<double>* per_sample = nullptr);

Matrix softmax(const Matrix& logits);
std::vector<std::int64_t> argmax_rows(const Matrix& m);

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step(const std::vector<ParamRef>& params) = 0;
};

class Adam final : public Optimizer {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(const std::vector<ParamRef>& params) override;

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

class Sgd final : public Optimizer {
 public:
  explicit Sgd(double lr) : lr_(lr) {}
  void step(const std::vector<ParamRef>& params) override;

 private:
  double lr_;
};

}  // namespace lgap::nn
