#include "lgap/nn.hpp"

#include "lgap/error.hpp"

#include <cmath>

namespace lgap::nn {

Dense::Dense(std::size_t in, std::size_t out)
    : weight(Matrix::Zero(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in))),
      bias(RowVector::Zero(static_cast<Eigen::Index>(out))),
      grad_weight(Matrix::Zero(weight.rows(), weight.cols())),
      grad_bias(RowVector::Zero(bias.size())) {}

void Dense::init_glorot(std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(in() + out()));
  std::uniform_real_distribution<double> u(-a, a);
  for (Eigen::Index i = 0; i < weight.size(); ++i) weight.data()[i] = u(rng);
  bias.setZero();
}

Matrix Dense::forward(const Matrix& x) const {
  if (x.cols() != weight.cols()) throw ShapeError("dense layer input width mismatch");
  Matrix y = x * weight.transpose();
  y.rowwise() += bias;
  return y;
}

Matrix Dense::backward(const Matrix& x, const Matrix& grad_out) {
  accumulate(x, grad_out);
  return backward_input(grad_out);
}

void Dense::accumulate(const Matrix& x, const Matrix& grad_out) {
  grad_weight.noalias() += grad_out.transpose() * x;
  grad_bias += grad_out.colwise().sum();
}

Matrix Dense::backward_input(const Matrix& grad_out) const { return grad_out * weight; }

void Dense::zero_grad() {
  grad_weight.setZero();
  grad_bias.setZero();
}

void Dense::collect(std::vector<ParamRef>& out) {
  out.push_back({weight.data(), grad_weight.data(), static_cast<std::size_t>(weight.size())});
  out.push_back({bias.data(), grad_bias.data(), static_cast<std::size_t>(bias.size())});
}

Matrix tanh(const Matrix& a) { return a.array().tanh().matrix(); }

Matrix tanh_backward(const Matrix& h, const Matrix& grad_out) {
  return (grad_out.array() * (1.0 - h.array().square())).matrix();
}

Matrix silu(const Matrix& a) {
  return (a.array() / (1.0 + (-a.array()).exp())).matrix();
}

Matrix silu_backward(const Matrix& a, const Matrix& grad_out) {
  const auto s = 1.0 / (1.0 + (-a.array()).exp());
  return (grad_out.array() * (s * (1.0 + a.array() * (1.0 - s)))).matrix();
}

Matrix softmax(const Matrix& logits) {
  Matrix p = logits;
  for (Eigen::Index n = 0; n < p.rows(); ++n) {
    const double m = p.row(n).maxCoeff();
    p.row(n) = (p.row(n).array() - m).exp().matrix();
    p.row(n) /= p.row(n).sum();
  }
  return p;
}

double softmax_cross_entropy(const Matrix& logits, const Labels& labels, Matrix* grad,
                             std::vector<double>* per_sample) {
  if (static_cast<std::size_t>(logits.rows()) != labels.size()) {
    throw ShapeError("logit rows do not match label count");
  }
  double total = 0.0;
  if (grad) grad->resize(logits.rows(), logits.cols());
  if (per_sample) per_sample->assign(labels.size(), 0.0);
  for (Eigen::Index n = 0; n < logits.rows(); ++n) {
    const auto y = labels[static_cast<std::size_t>(n)];
    if (y < 0 || y >= logits.cols()) throw DomainError("label outside classifier range");
    const double m = logits.row(n).maxCoeff();
    const RowVector e = (logits.row(n).array() - m).exp().matrix();
    const double z = e.sum();
    const double loss = std::log(z) + m - logits(n, y);
    total += loss;
    if (per_sample) (*per_sample)[static_cast<std::size_t>(n)] = loss;
    if (grad) {
      grad->row(n) = e / z;
      (*grad)(n, y) -= 1.0;
    }
  }
  return total;
}

std::vector<std::int64_t> argmax_rows(const Matrix& m) {
  std::vector<std::int64_t> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index n = 0; n < m.rows(); ++n) {
    Eigen::Index arg = 0;
    m.row(n).maxCoeff(&arg);
    out[static_cast<std::size_t>(n)] = arg;
  }
  return out;
}

void Adam::step(const std::vector<ParamRef>& params) {
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.size, 0.0);
      v_.emplace_back(p.size, 0.0);
    }
  }
  if (m_.size() != params.size()) throw Error(ErrorCode::kRuntime, "optimizer parameter set changed");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = m_[i];
    auto& v = v_[i];
    const auto& p = params[i];
    for (std::size_t j = 0; j < p.size; ++j) {
      const double g = p.grad[j];
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g;
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g * g;
      p.value[j] -= lr_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
    }
  }
}

void Sgd::step(const std::vector<ParamRef>& params) {
  for (const auto& p : params) {
    for (std::size_t j = 0; j < p.size; ++j) p.value[j] -= lr_ * p.grad[j];
  }
}

}  // namespace lgap::nn
