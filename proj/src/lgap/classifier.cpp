#include "lgap/classifier.hpp"

#include "lgap/error.hpp"
#include "lgap/safetensors.hpp"

#include <random>

namespace lgap {

std::vector<nn::ParamRef> Classifier::parameters() {
  throw DomainError(kind() + " classifier is not trainable");
}

void Classifier::zero_grad() { throw DomainError(kind() + " classifier is not trainable"); }

double Classifier::accumulate_gradients(const Matrix&, const Labels&) {
  throw DomainError(kind() + " classifier is not trainable");
}

std::vector<double> Classifier::parameter_snapshot() const {
  auto copy = clone();
  std::vector<double> flat;
  for (const auto& p : copy->parameters()) flat.insert(flat.end(), p.value, p.value + p.size);
  return flat;
}

void Classifier::save(const std::filesystem::path&) const {
  throw DomainError(kind() + " classifier has no checkpoint format");
}

Matrix classify_logits(const Classifier& f, const ImageBatch& x) {
  if (!(x.shape == f.input_shape())) {
    throw ShapeError("classifier expects " + f.input_shape().str() + ", got " + x.shape.str());
  }
  Matrix out = f.logits(x.data);
  if (out.rows() != x.data.rows()) throw ShapeError("classifier returned wrong number of rows");
  return out;
}

Labels predict(const Classifier& f, const ImageBatch& x) {
  return nn::argmax_rows(classify_logits(f, x));
}

MlpClassifier::MlpClassifier(SampleShape input, std::vector<std::size_t> hidden,
                             std::size_t num_classes, Activation activation)
    : input_(input),
      classes_(num_classes),
      activation_(activation),
      mean_(input.channels, 0.0),
      std_(input.channels, 1.0) {
  if (input_.size() == 0 || classes_ < 2) throw DomainError("classifier needs inputs and >= 2 classes");
  std::size_t width = input_.size();
  for (auto h : hidden) {
    if (h == 0) throw DomainError("hidden layer width must be positive");
    layers_.emplace_back(width, h);
    width = h;
  }
  layers_.emplace_back(width, classes_);
}

void MlpClassifier::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& l : layers_) l.init_glorot(rng);
}

void MlpClassifier::set_normalization(std::vector<double> mean, std::vector<double> std) {
  if (mean.size() != input_.channels || std.size() != input_.channels) {
    throw ShapeError("normalisation needs one mean/std per channel");
  }
  for (double s : std) {
    if (!(s > 0.0)) throw DomainError("normalisation std must be positive");
  }
  mean_ = std::move(mean);
  std_ = std::move(std);
}

Matrix MlpClassifier::normalize(const Matrix& x) const {
  if (static_cast<std::size_t>(x.cols()) != input_.size()) throw ShapeError("classifier input width mismatch");
  Matrix out(x.rows(), x.cols());
  const auto plane = static_cast<Eigen::Index>(input_.height * input_.width);
  for (std::size_t c = 0; c < input_.channels; ++c) {
    const auto off = static_cast<Eigen::Index>(c) * plane;
    out.middleCols(off, plane) = (x.middleCols(off, plane).array() - mean_[c]) / std_[c];
  }
  return out;
}

Matrix MlpClassifier::activate(const Matrix& a) const {
  return activation_ == Activation::kTanh ? nn::tanh(a) : Matrix(a.cwiseMax(0.0));
}

Matrix MlpClassifier::activate_backward(const Matrix& pre, const Matrix& post, const Matrix& g) const {
  if (activation_ == Activation::kTanh) return nn::tanh_backward(post, g);
  return (g.array() * (pre.array() > 0.0).cast<double>()).matrix();
}

MlpClassifier::Trace MlpClassifier::forward(const Matrix& x) const {
  Trace t;
  t.input = normalize(x);
  const Matrix* cur = &t.input;
  for (std::size_t i = 0; i + 1 < layers_.size(); ++i) {
    t.activations.push_back(activate(layers_[i].forward(*cur)));
    cur = &t.activations.back();
  }
  t.logits = layers_.back().forward(*cur);
  return t;
}

Matrix MlpClassifier::backward(const Trace& trace, const Matrix& grad_logits,
                               std::vector<nn::Dense>* accumulate) const {
  Matrix g = grad_logits;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    const Matrix& in = i == 0 ? trace.input : trace.activations[i - 1];
    g = accumulate ? (*accumulate)[i].backward(in, g) : layers_[i].backward_input(g);
    if (i > 0) {
      const Matrix& post = trace.activations[i - 1];
      // ReLU only needs the sign of the pre-activation, which equals post > 0.
      g = activate_backward(post, post, g);
    }
  }
  // Undo the per-channel standardisation.
  const auto plane = static_cast<Eigen::Index>(input_.height * input_.width);
  for (std::size_t c = 0; c < input_.channels; ++c) {
    g.middleCols(static_cast<Eigen::Index>(c) * plane, plane) /= std_[c];
  }
  return g;
}

Matrix MlpClassifier::logits(const Matrix& x) const { return forward(x).logits; }

InputGradient MlpClassifier::input_gradient(const Matrix& x, const Labels& y) const {
  const Trace t = forward(x);
  Matrix grad_logits;
  InputGradient out;
  nn::softmax_cross_entropy(t.logits, y, &grad_logits, &out.loss);
  out.grad = backward(t, grad_logits, nullptr);
  return out;
}

std::unique_ptr<Classifier> MlpClassifier::clone() const {
  return std::make_unique<MlpClassifier>(*this);
}

std::vector<nn::ParamRef> MlpClassifier::parameters() {
  std::vector<nn::ParamRef> out;
  for (auto& l : layers_) l.collect(out);
  return out;
}

void MlpClassifier::zero_grad() {
  for (auto& l : layers_) l.zero_grad();
}

double MlpClassifier::accumulate_gradients(const Matrix& x, const Labels& y) {
  const Trace t = forward(x);
  Matrix grad_logits;
  const double loss = nn::softmax_cross_entropy(t.logits, y, &grad_logits);
  backward(t, grad_logits, &layers_);
  return loss;
}

namespace {

std::vector<std::int64_t> shape_vector(const SampleShape& s) {
  return {static_cast<std::int64_t>(s.channels), static_cast<std::int64_t>(s.height),
          static_cast<std::int64_t>(s.width)};
}

SampleShape shape_from(const std::vector<std::int64_t>& v) {
  if (v.size() != 3) throw IoError("checkpoint shape must have 3 entries");
  return {static_cast<std::size_t>(v[0]), static_cast<std::size_t>(v[1]), static_cast<std::size_t>(v[2])};
}

}  // namespace

void MlpClassifier::save(const std::filesystem::path& path) const {
  SafeTensors st;
  st.metadata()["kind"] = "mlp_classifier";
  st.metadata()["activation"] = activation_ == Activation::kTanh ? "tanh" : "relu";
  st.metadata()["layers"] = std::to_string(layers_.size());
  st.put_integers("input_shape", {3}, shape_vector(input_));
  st.put("norm_mean", {static_cast<std::int64_t>(mean_.size())}, mean_);
  st.put("norm_std", {static_cast<std::int64_t>(std_.size())}, std_);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    st.put("layer" + std::to_string(i) + ".weight", layers_[i].weight);
    st.put("layer" + std::to_string(i) + ".bias", Vector(layers_[i].bias.transpose()));
  }
  st.save(path);
}

std::unique_ptr<MlpClassifier> MlpClassifier::load(const std::filesystem::path& path) {
  const SafeTensors st = SafeTensors::load(path);
  if (st.metadata().count("kind") == 0 || st.meta("kind") != "mlp_classifier") {
    throw IoError(path.string() + " is not an mlp classifier checkpoint");
  }
  const auto n = std::stoul(st.meta("layers"));
  if (n == 0) throw IoError("classifier checkpoint has no layers");
  std::vector<std::size_t> hidden;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    hidden.push_back(static_cast<std::size_t>(st.matrix("layer" + std::to_string(i) + ".weight").rows()));
  }
  const auto classes = static_cast<std::size_t>(st.matrix("layer" + std::to_string(n - 1) + ".weight").rows());
  const Activation act = st.meta("activation") == "relu" ? Activation::kRelu : Activation::kTanh;
  auto f = std::make_unique<MlpClassifier>(shape_from(st.integers("input_shape")), hidden, classes, act);
  const Vector mean = st.vector("norm_mean");
  const Vector sd = st.vector("norm_std");
  f->set_normalization(std::vector<double>(mean.data(), mean.data() + mean.size()),
                       std::vector<double>(sd.data(), sd.data() + sd.size()));
  for (std::size_t i = 0; i < n; ++i) {
    auto& l = f->layers_[i];
    const Matrix w = st.matrix("layer" + std::to_string(i) + ".weight");
    const Vector b = st.vector("layer" + std::to_string(i) + ".bias");
    if (w.rows() != l.weight.rows() || w.cols() != l.weight.cols() || b.size() != l.bias.size()) {
      throw IoError("classifier layer " + std::to_string(i) + " has inconsistent shape");
    }
    l.weight = w;
    l.bias = b.transpose();
  }
  return f;
}

ConstantClassifier::ConstantClassifier(SampleShape input, RowVector logits)
    : input_(input), logits_(std::move(logits)) {
  if (logits_.size() < 2) throw DomainError("classifier needs >= 2 classes");
}

Matrix ConstantClassifier::logits(const Matrix& x) const {
  return logits_.replicate(x.rows(), 1);
}

InputGradient ConstantClassifier::input_gradient(const Matrix& x, const Labels& y) const {
  InputGradient out;
  nn::softmax_cross_entropy(logits(x), y, nullptr, &out.loss);
  out.grad = Matrix::Zero(x.rows(), x.cols());
  return out;
}

std::unique_ptr<Classifier> ConstantClassifier::clone() const {
  return std::make_unique<ConstantClassifier>(*this);
}

std::unique_ptr<Classifier> load_classifier(const std::filesystem::path& path) {
  return MlpClassifier::load(path);
}

}  // namespace lgap
