#include "lgap/conditioning.hpp"

#include "lgap/error.hpp"
#include "lgap/random.hpp"
#include "lgap/safetensors.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <atomic>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <sstream>

namespace lgap {

Matrix TextCondition::pooled() const {
  Matrix out = Matrix::Zero(embedding.rows(), static_cast<Eigen::Index>(dim));
  for (Eigen::Index n = 0; n < embedding.rows(); ++n) {
    const auto count = token_counts.at(static_cast<std::size_t>(n));
    if (count == 0) continue;
    for (std::size_t t = 0; t < count; ++t) {
      out.row(n) += embedding.row(n).segment(static_cast<Eigen::Index>(t * dim),
                                            static_cast<Eigen::Index>(dim));
    }
    out.row(n) /= static_cast<double>(count);
  }
  return out;
}

std::vector<Caption> ConstantCaptionProvider::generate(const ImageBatch& x) const {
  return std::vector<Caption>(x.size(), Caption{text_, id()});
}

nlohmann::json ConstantCaptionProvider::describe() const {
  return {{"provider", id()}, {"text", text_}};
}

LabelTemplateCaptionProvider::LabelTemplateCaptionProvider(std::string templ,
                                                           std::vector<std::string> class_names)
    : template_(std::move(templ)), class_names_(std::move(class_names)) {
  if (class_names_.empty()) throw ConfigError("label_template captions need class names");
}

std::vector<Caption> LabelTemplateCaptionProvider::generate(const ImageBatch& x) const {
  const Labels& labels = x.require_labels();
  static const std::string kSlot = "{label}";
  std::vector<Caption> out;
  out.reserve(labels.size());
  for (auto y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= class_names_.size()) {
      throw DomainError("label " + std::to_string(y) + " has no class name");
    }
    std::string text = template_;
    for (auto pos = text.find(kSlot); pos != std::string::npos;
         pos = text.find(kSlot, pos + class_names_[static_cast<std::size_t>(y)].size())) {
      text.replace(pos, kSlot.size(), class_names_[static_cast<std::size_t>(y)]);
    }
    out.push_back({std::move(text), id()});
  }
  return out;
}

nlohmann::json LabelTemplateCaptionProvider::describe() const {
  return {{"provider", id()}, {"template", template_}, {"uses_ground_truth", true},
          {"class_names", class_names_}};
}

ExternalCaptionProvider::ExternalCaptionProvider(std::string command)
    : command_(std::move(command)) {
  if (command_.empty()) {
    throw AdapterError("pretrained caption provider selected but caption.command is empty");
  }
}

namespace {

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') out += "'\\''";
    else out.push_back(c);
  }
  return out + "'";
}

std::filesystem::path unique_temp_path(const std::string& stem) {
  static std::atomic<unsigned> counter{0};
  return std::filesystem::temp_directory_path() /
         (stem + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++) + ".safetensors");
}

}  // namespace

std::vector<Caption> ExternalCaptionProvider::generate(const ImageBatch& x) const {
  const auto path = unique_temp_path("lgap-caption");
  {
    SafeTensors st;
    st.put("images",
           {static_cast<std::int64_t>(x.size()), static_cast<std::int64_t>(x.shape.channels),
            static_cast<std::int64_t>(x.shape.height), static_cast<std::int64_t>(x.shape.width)},
           std::vector<double>(x.data.data(), x.data.data() + x.data.size()));
    st.save(path);
  }
  const std::string cmd = command_ + " " + shell_quote(path.string());
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) {
    std::filesystem::remove(path);
    throw AdapterError("cannot launch caption command: " + command_);
  }
  std::string output;
  std::array<char, 4096> buf{};
  std::size_t got;
  while ((got = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) output.append(buf.data(), got);
  const int status = ::pclose(pipe);
  std::error_code ec;
  std::filesystem::remove(path, ec);
  if (status == -1 || !WIFEXITED(status) || WEXITSTATUS(status) != 0) {
    throw AdapterError("caption command failed: " + command_);
  }
  std::vector<Caption> captions;
  std::istringstream lines(output);
  for (std::string line; std::getline(lines, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    captions.push_back({line, id()});
  }
  if (captions.size() != x.size()) {
    throw AdapterError("caption command returned " + std::to_string(captions.size()) +
                       " captions for " + std::to_string(x.size()) + " images");
  }
  return captions;
}

nlohmann::json ExternalCaptionProvider::describe() const {
  return {{"provider", id()}, {"command", command_},
          {"decoding", "adapter defaults"}};
}

std::vector<Caption> generate_captions(const CaptionProvider& provider, const ImageBatch& x) {
  auto captions = provider.generate(x);
  if (captions.size() != x.size()) {
    throw AdapterError(provider.id() + " produced the wrong number of captions");
  }
  for (auto& c : captions) c.provider_id = provider.id();
  return captions;
}

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

HashTextEncoder::HashTextEncoder(std::size_t max_tokens, std::size_t dim, std::uint64_t salt)
    : max_tokens_(max_tokens), dim_(dim), salt_(salt) {
  if (max_tokens_ == 0 || dim_ == 0) throw ConfigError("text encoder needs positive L and d");
}

void HashTextEncoder::token_vector(const std::string& token, double* out) const {
  // Component j is the j-th output of a SplitMix64 stream seeded by the hash.
  const std::uint64_t base = fnv1a64(token) ^ salt_;
  for (std::size_t j = 0; j < dim_; ++j) {
    const std::uint64_t r = mix64(base + j * 0x9E3779B97F4A7C15ULL);
    out[j] = 2.0 * (static_cast<double>(r >> 11) * 0x1.0p-53) - 1.0;
  }
}

TextCondition HashTextEncoder::encode(const std::vector<Caption>& captions) const {
  TextCondition cond;
  cond.tokens = max_tokens_;
  cond.dim = dim_;
  cond.embedding = Matrix::Zero(static_cast<Eigen::Index>(captions.size()),
                                static_cast<Eigen::Index>(max_tokens_ * dim_));
  cond.captions = captions;
  for (std::size_t n = 0; n < captions.size(); ++n) {
    auto tokens = tokenize(captions[n].text);
    if (tokens.size() > max_tokens_) tokens.resize(max_tokens_);
    cond.token_counts.push_back(tokens.size());
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      token_vector(tokens[t], &cond.embedding(static_cast<Eigen::Index>(n),
                                              static_cast<Eigen::Index>(t * dim_)));
    }
  }
  return cond;
}

TextCondition encode_text(const TextEncoder& encoder, const std::vector<Caption>& captions) {
  if (captions.empty()) throw DomainError("encode_text needs at least one caption");
  return encoder.encode(captions);
}

}  // namespace lgap
