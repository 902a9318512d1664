#include "lgap/conditioning.hpp"
#include "lgap/error.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

#include <unistd.h>

using namespace lgap;

namespace {

// Reference hash encoder written from the algorithm description: FNV-1a over
// the token bytes, XOR salt, then successive SplitMix64 outputs mapped to [-1,1].
struct ReferenceSplitMix {
  std::uint64_t state;
  std::uint64_t next() {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }
};

std::vector<double> reference_embedding(const std::string& text, std::size_t L, std::size_t d, std::uint64_t salt) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char ch : text + " ") {
    if ((ch >= 'a' && ch <= 'z') || (ch >= '0' && ch <= '9')) {
      cur += ch;
    } else if (ch >= 'A' && ch <= 'Z') {
      cur += static_cast<char>(ch - 'A' + 'a');
    } else if (!cur.empty()) {
      tokens.push_back(cur);
      cur.clear();
    }
  }
  std::vector<double> out(L * d, 0.0);
  for (std::size_t t = 0; t < std::min(L, tokens.size()); ++t) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : tokens[t]) h = (h ^ c) * 1099511628211ULL;
    ReferenceSplitMix rng{h ^ salt};
    for (std::size_t j = 0; j < d; ++j) {
      out[t * d + j] = static_cast<double>(rng.next() >> 11) / 9007199254740992.0 * 2.0 - 1.0;
    }
  }
  return out;
}

ImageBatch labelled(std::initializer_list<std::int64_t> labels) {
  const Labels y(labels);
  return ImageBatch({1, 1, 1}, Matrix::Constant(static_cast<Eigen::Index>(y.size()), 1, 0.5), y);
}

}  // namespace

TEST_CASE("label template provider") {
  LabelTemplateCaptionProvider p("a photo of a {label}", {"cat", "dog"});
  const auto caps = generate_captions(p, labelled({1, 0}));
  REQUIRE(caps.size() == 2);
  CHECK(caps[0].text == "a photo of a dog");
  CHECK(caps[1].text == "a photo of a cat");
  CHECK(caps[0].provider_id == "label_template");
  CHECK(p.uses_ground_truth());
  CHECK_THROWS_AS(generate_captions(p, ImageBatch({1, 1, 1}, Matrix::Constant(1, 1, 0.5))), DomainError);
  CHECK_THROWS_AS(generate_captions(p, labelled({2})), DomainError);
}

TEST_CASE("constant provider") {
  ConstantCaptionProvider p("striped texture");
  for (const auto& c : generate_captions(p, labelled({0, 1, 1}))) CHECK(c.text == "striped texture");
  CHECK_FALSE(p.uses_ground_truth());
}

TEST_CASE("hash encoder matches the reference implementation") {
  for (std::uint64_t salt : {0ULL, 12345ULL}) {
    HashTextEncoder enc(6, 10, salt);
    const std::vector<std::string> texts = {"a photo of a truck", "Horizontal STRIPES!", "x1 y2 z3 w4 v5 u6 t7 s8",
                                            "", "   ", "a-b_c"};
    std::vector<Caption> caps;
    for (const auto& t : texts) caps.push_back({t, "test"});
    const TextCondition c = encode_text(enc, caps);
    CHECK(c.tokens == 6);
    CHECK(c.dim == 10);
    for (std::size_t n = 0; n < texts.size(); ++n) {
      const auto ref = reference_embedding(texts[n], 6, 10, salt);
      for (std::size_t k = 0; k < ref.size(); ++k) {
        CHECK(c.embedding(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k)) == ref[k]);
      }
    }
    CHECK(c.token_counts == std::vector<std::size_t>{5, 2, 6, 0, 0, 3});
  }
}

TEST_CASE("null caption encodes to zeros; identical captions give identical rows") {
  HashTextEncoder enc(4, 8);
  const TextCondition c = encode_text(enc, {{"", "x"}, {"dog", "x"}, {"dog", "x"}});
  CHECK(c.embedding.row(0).isZero(0.0));
  CHECK(c.pooled().row(0).isZero(0.0));
  CHECK(c.embedding.row(1) == c.embedding.row(2));
  CHECK_THROWS_AS(encode_text(enc, {}), DomainError);
}

TEST_CASE("encoding is batch-order equivariant") {
  HashTextEncoder enc(5, 7);
  const std::vector<Caption> caps = {{"one", ""}, {"two words", ""}, {"three little words", ""}, {"", ""}};
  const TextCondition a = encode_text(enc, caps);
  const std::vector<std::size_t> perm = {2, 0, 3, 1};
  std::vector<Caption> permuted;
  for (auto i : perm) permuted.push_back(caps[i]);
  const TextCondition b = encode_text(enc, permuted);
  for (std::size_t i = 0; i < perm.size(); ++i) {
    CHECK(b.embedding.row(static_cast<Eigen::Index>(i)) == a.embedding.row(static_cast<Eigen::Index>(perm[i])));
  }
}

TEST_CASE("captions longer than the budget are truncated") {
  HashTextEncoder enc(2, 4);
  const TextCondition a = encode_text(enc, {{"alpha beta gamma delta", ""}, {"alpha beta", ""}});
  CHECK(a.token_counts[0] == 2);
  CHECK(a.embedding.row(0) == a.embedding.row(1));
}

TEST_CASE("pooled embedding averages non-padding tokens") {
  HashTextEncoder enc(3, 4);
  const TextCondition c = encode_text(enc, {{"red blue", ""}});
  const Matrix p = c.pooled();
  for (int j = 0; j < 4; ++j) CHECK(p(0, j) == doctest::Approx((c.embedding(0, j) + c.embedding(0, 4 + j)) / 2.0));
}

TEST_CASE("external caption command") {
  const auto dir = std::filesystem::temp_directory_path() / ("lgap-cap-" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  const auto script = dir / "captioner.sh";
  {
    std::ofstream out(script);
    out << "#!/bin/sh\ntest -f \"$1\" || exit 3\necho 'a truck on a road'\necho 'a small truck'\n";
  }
  std::filesystem::permissions(script, std::filesystem::perms::owner_all);
  ExternalCaptionProvider p(script.string());
  const auto caps = generate_captions(p, labelled({0, 1}));
  REQUIRE(caps.size() == 2);
  CHECK(caps[0].text == "a truck on a road");
  CHECK(caps[0].provider_id == "pretrained");
  CHECK_THROWS_AS(generate_captions(p, labelled({0, 1, 0})), AdapterError);
  ExternalCaptionProvider failing("false");
  CHECK_THROWS_AS(generate_captions(failing, labelled({0})), AdapterError);
  CHECK_THROWS_AS(ExternalCaptionProvider(""), AdapterError);
  std::filesystem::remove_all(dir);
}
