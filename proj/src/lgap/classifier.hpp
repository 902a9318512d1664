#pragma once

#include "lgap/nn.hpp"
#include "lgap/tensor.hpp"

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace lgap {

struct InputGradient {
  Matrix grad;               // d(sum of per-sample CE)/dx, same shape as x
  std::vector<double> loss;  // per-sample CE
};

// Target network f. Inputs are raw [0,1] pixels; any normalisation lives
// inside the implementation so that attack budgets stay in pixel units.
class Classifier {
 public:
  virtual ~Classifier() = default;

  virtual std::string kind() const = 0;
  virtual SampleShape input_shape() const = 0;
  virtual std::size_t num_classes() const = 0;

  virtual Matrix logits(const Matrix& x) const = 0;
  virtual InputGradient input_gradient(const Matrix& x, const Labels& y) const = 0;
  virtual std::unique_ptr<Classifier> clone() const = 0;

  // Training surface. Non-trainable classifiers throw.
  virtual std::vector<nn::ParamRef> parameters();
  virtual void zero_grad();
  // Adds gradients of the summed CE to the parameter buffers; returns the sum.
  virtual double accumulate_gradients(const Matrix& x, const Labels& y);
  // Flat copy of every parameter, for snapshots and equality checks.
  std::vector<double> parameter_snapshot() const;

  virtual void save(const std::filesystem::path& path) const;
};

Matrix classify_logits(const Classifier& f, const ImageBatch& x);
Labels predict(const Classifier& f, const ImageBatch& x);

enum class Activation { kTanh, kRelu };

// Fully connected network with per-channel input standardisation. No hidden
// layers gives multinomial logistic regression.
class MlpClassifier final : public Classifier {
 public:
  MlpClassifier(SampleShape input, std::vector<std::size_t> hidden, std::size_t num_classes,
                Activation activation = Activation::kTanh);

  // Glorot-uniform weights from `seed`.
  void initialize(std::uint64_t seed);
  void set_normalization(std::vector<double> mean, std::vector<double> std);

  std::string kind() const override { return "mlp"; }
  SampleShape input_shape() const override { return input_; }
  std::size_t num_classes() const override { return classes_; }

  Matrix logits(const Matrix& x) const override;
  InputGradient input_gradient(const Matrix& x, const Labels& y) const override;
  std::unique_ptr<Classifier> clone() const override;

  std::vector<nn::ParamRef> parameters() override;
  void zero_grad() override;
  double accumulate_gradients(const Matrix& x, const Labels& y) override;

  void save(const std::filesystem::path& path) const override;
  static std::unique_ptr<MlpClassifier> load(const std::filesystem::path& path);

  std::vector<nn::Dense>& layers() { return layers_; }
  const std::vector<nn::Dense>& layers() const { return layers_; }

 private:
  struct Trace {
    Matrix input;                     // normalised input
    std::vector<Matrix> activations;  // post-activation of each hidden layer
    Matrix logits;
  };
  Matrix normalize(const Matrix& x) const;
  Trace forward(const Matrix& x) const;
  Matrix activate(const Matrix& a) const;
  Matrix activate_backward(const Matrix& pre, const Matrix& post, const Matrix& g) const;
  // Backprop of dL/dlogits; parameter grads go to `accumulate` when non-null.
  Matrix backward(const Trace& trace, const Matrix& grad_logits,
                  std::vector<nn::Dense>* accumulate) const;

  SampleShape input_;
  std::size_t classes_;
  Activation activation_;
  std::vector<double> mean_;
  std::vector<double> std_;
  std::vector<nn::Dense> layers_;
};

// Emits the same logits for every input (e.g. a majority-class baseline).
class ConstantClassifier final : public Classifier {
 public:
  ConstantClassifier(SampleShape input, RowVector logits);

  std::string kind() const override { return "constant"; }
  SampleShape input_shape() const override { return input_; }
  std::size_t num_classes() const override { return static_cast<std::size_t>(logits_.size()); }
  Matrix logits(const Matrix& x) const override;
  InputGradient input_gradient(const Matrix& x, const Labels& y) const override;
  std::unique_ptr<Classifier> clone() const override;

 private:
  SampleShape input_;
  RowVector logits_;
};

std::unique_ptr<Classifier> load_classifier(const std::filesystem::path& path);

}  // namespace lgap
