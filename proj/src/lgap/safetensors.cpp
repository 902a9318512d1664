#include "lgap/safetensors.hpp"

#include "lgap/error.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

static_assert(std::endian::native == std::endian::little,
              "safetensors I/O assumes a little-endian host");

namespace lgap {
namespace {

std::int64_t element_count(const std::vector<std::int64_t>& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw IoError("negative tensor dimension");
    n *= d;
  }
  return n;
}

template <typename T>
void append_raw(std::string& out, const std::vector<T>& v) {
  const auto* p = reinterpret_cast<const char*>(v.data());
  out.append(p, p + v.size() * sizeof(T));
}

}  // namespace

void SafeTensors::put(const std::string& name, std::vector<std::int64_t> shape,
                      std::vector<double> values) {
  if (element_count(shape) != static_cast<std::int64_t>(values.size())) {
    throw ShapeError("tensor '" + name + "' shape does not match its value count");
  }
  entries_[name] = Entry{std::move(shape), std::move(values), {}, false};
}

void SafeTensors::put(const std::string& name, const Matrix& m) {
  put(name, {m.rows(), m.cols()}, std::vector<double>(m.data(), m.data() + m.size()));
}

void SafeTensors::put(const std::string& name, const Vector& v) {
  put(name, {v.size()}, std::vector<double>(v.data(), v.data() + v.size()));
}

void SafeTensors::put_integers(const std::string& name, std::vector<std::int64_t> shape,
                               std::vector<std::int64_t> values) {
  if (element_count(shape) != static_cast<std::int64_t>(values.size())) {
    throw ShapeError("tensor '" + name + "' shape does not match its value count");
  }
  entries_[name] = Entry{std::move(shape), {}, std::move(values), true};
}

const SafeTensors::Entry& SafeTensors::entry(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw IoError("missing tensor '" + name + "'");
  return it->second;
}

Matrix SafeTensors::matrix(const std::string& name) const {
  const auto& e = entry(name);
  if (e.is_integer) throw IoError("tensor '" + name + "' is not floating point");
  Eigen::Index rows = 1;
  Eigen::Index cols = static_cast<Eigen::Index>(e.reals.size());
  if (e.shape.size() >= 2) {
    rows = e.shape[0];
    cols = rows == 0 ? 0 : static_cast<Eigen::Index>(e.reals.size()) / rows;
  }
  Matrix m(rows, cols);
  if (!e.reals.empty()) std::memcpy(m.data(), e.reals.data(), e.reals.size() * sizeof(double));
  return m;
}

Vector SafeTensors::vector(const std::string& name) const {
  const auto& e = entry(name);
  if (e.is_integer) throw IoError("tensor '" + name + "' is not floating point");
  return Eigen::Map<const Vector>(e.reals.data(), static_cast<Eigen::Index>(e.reals.size()));
}

const std::vector<std::int64_t>& SafeTensors::integers(const std::string& name) const {
  const auto& e = entry(name);
  if (!e.is_integer) throw IoError("tensor '" + name + "' is not integer");
  return e.integers;
}

const std::string& SafeTensors::meta(const std::string& key) const {
  auto it = metadata_.find(key);
  if (it == metadata_.end()) throw IoError("missing metadata '" + key + "'");
  return it->second;
}

std::string SafeTensors::serialize() const {
  nlohmann::json header = nlohmann::json::object();
  std::string payload;
  for (const auto& [name, e] : entries_) {
    const auto begin = payload.size();
    if (e.is_integer) {
      append_raw(payload, e.integers);
    } else {
      append_raw(payload, e.reals);
    }
    header[name] = {{"dtype", e.is_integer ? "I64" : "F64"},
                    {"shape", e.shape},
                    {"data_offsets", {begin, payload.size()}}};
  }
  if (!metadata_.empty()) header["__metadata__"] = metadata_;
  std::string text = header.dump();
  while (text.size() % 8 != 0) text.push_back(' ');
  const std::uint64_t n = text.size();
  std::string out(reinterpret_cast<const char*>(&n), sizeof(n));
  out += text;
  out += payload;
  return out;
}

SafeTensors SafeTensors::deserialize(const std::string& bytes) {
  if (bytes.size() < 8) throw IoError("safetensors file truncated");
  std::uint64_t n = 0;
  std::memcpy(&n, bytes.data(), sizeof(n));
  if (n > bytes.size() - 8) throw IoError("safetensors header length out of range");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(8, n));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("bad safetensors header: ") + e.what());
  }
  const std::size_t base = 8 + n;
  SafeTensors out;
  for (auto it = header.begin(); it != header.end(); ++it) {
    if (it.key() == "__metadata__") {
      for (auto m = it->begin(); m != it->end(); ++m) out.metadata_[m.key()] = m->get<std::string>();
      continue;
    }
    const auto dtype = it->at("dtype").get<std::string>();
    auto shape = it->at("shape").get<std::vector<std::int64_t>>();
    const auto offsets = it->at("data_offsets").get<std::vector<std::size_t>>();
    if (offsets.size() != 2 || offsets[0] > offsets[1] || base + offsets[1] > bytes.size()) {
      throw IoError("tensor '" + it.key() + "' has invalid offsets");
    }
    const char* src = bytes.data() + base + offsets[0];
    const std::size_t len = offsets[1] - offsets[0];
    const auto count = static_cast<std::size_t>(element_count(shape));
    if (dtype == "F64" || dtype == "I64") {
      if (len != count * 8) throw IoError("tensor '" + it.key() + "' byte length mismatch");
      if (dtype == "F64") {
        std::vector<double> v(count);
        if (count) std::memcpy(v.data(), src, len);
        out.entries_[it.key()] = Entry{std::move(shape), std::move(v), {}, false};
      } else {
        std::vector<std::int64_t> v(count);
        if (count) std::memcpy(v.data(), src, len);
        out.entries_[it.key()] = Entry{std::move(shape), {}, std::move(v), true};
      }
    } else if (dtype == "F32") {
      if (len != count * 4) throw IoError("tensor '" + it.key() + "' byte length mismatch");
      std::vector<float> f(count);
      if (count) std::memcpy(f.data(), src, len);
      out.entries_[it.key()] = Entry{std::move(shape), std::vector<double>(f.begin(), f.end()), {}, false};
    } else {
      throw IoError("unsupported dtype " + dtype + " for tensor '" + it.key() + "'");
    }
  }
  return out;
}

void SafeTensors::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  const auto bytes = serialize();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

SafeTensors SafeTensors::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str());
}

}  // namespace lgap
