#pragma once

#include "lgap/tensor.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace lgap {

// An empty `text` is the null caption and encodes to the unconditional embedding.
struct Caption {
  std::string text;
  std::string provider_id;

  bool operator==(const Caption&) const = default;
};

// Per-token conditioning vectors, (N, L, d) stored as an (N, L*d) matrix.
struct TextCondition {
  std::size_t tokens = 0;  // L
  std::size_t dim = 0;     // d
  Matrix embedding;
  std::vector<std::size_t> token_counts;  // non-padding tokens per row
  std::vector<Caption> captions;

  std::size_t size() const { return static_cast<std::size_t>(embedding.rows()); }
  // Mean over the non-padding tokens of each row; zero for null captions.
  Matrix pooled() const;
};

class CaptionProvider {
 public:
  virtual ~CaptionProvider() = default;
  virtual std::string id() const = 0;
  virtual std::vector<Caption> generate(const ImageBatch& x) const = 0;
  // True when captions are derived from ground-truth labels (test only).
  virtual bool uses_ground_truth() const { return false; }
  virtual nlohmann::json describe() const = 0;
};

class ConstantCaptionProvider final : public CaptionProvider {
 public:
  explicit ConstantCaptionProvider(std::string text) : text_(std::move(text)) {}
  std::string id() const override { return "constant"; }
  std::vector<Caption> generate(const ImageBatch& x) const override;
  nlohmann::json describe() const override;

 private:
  std::string text_;
};

// Replaces every "{label}" in the template with the class name of the image's
// ground-truth label.
class LabelTemplateCaptionProvider final : public CaptionProvider {
 public:
  LabelTemplateCaptionProvider(std::string templ, std::vector<std::string> class_names);
  std::string id() const override { return "label_template"; }
  std::vector<Caption> generate(const ImageBatch& x) const override;
  bool uses_ground_truth() const override { return true; }
  nlohmann::json describe() const override;

 private:
  std::string template_;
  std::vector<std::string> class_names_;
};

// Adapter for an external pretrained captioner. The command is run as
// `<command> <images.safetensors>` and must print exactly one caption per image
// on stdout and exit with status 0; anything else is an AdapterError.
class ExternalCaptionProvider final : public CaptionProvider {
 public:
  explicit ExternalCaptionProvider(std::string command);
  std::string id() const override { return "pretrained"; }
  std::vector<Caption> generate(const ImageBatch& x) const override;
  nlohmann::json describe() const override;

 private:
  std::string command_;
};

std::vector<Caption> generate_captions(const CaptionProvider& provider, const ImageBatch& x);

// Lower-cased alphanumeric runs.
std::vector<std::string> tokenize(const std::string& text);

class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual std::string id() const = 0;
  virtual std::size_t max_tokens() const = 0;
  virtual std::size_t dim() const = 0;
  virtual TextCondition encode(const std::vector<Caption>& captions) const = 0;
};

// Desk-scale encoder: each token maps to a fixed pseudo-random vector in
// [-1,1]^d derived from its FNV-1a hash; captions longer than `max_tokens`
// are truncated, shorter ones are zero padded.
class HashTextEncoder final : public TextEncoder {
 public:
  HashTextEncoder(std::size_t max_tokens, std::size_t dim, std::uint64_t salt = 0);

  std::string id() const override { return "hash"; }
  std::size_t max_tokens() const override { return max_tokens_; }
  std::size_t dim() const override { return dim_; }
  TextCondition encode(const std::vector<Caption>& captions) const override;

  void token_vector(const std::string& token, double* out) const;

 private:
  std::size_t max_tokens_;
  std::size_t dim_;
  std::uint64_t salt_;
};

TextCondition encode_text(const TextEncoder& encoder, const std::vector<Caption>& captions);

std::uint64_t fnv1a64(const std::string& s);

}  // namespace lgap
