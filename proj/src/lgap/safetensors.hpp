#pragma once

#include "lgap/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace lgap {

// Minimal reader/writer for the safetensors container: an 8-byte little-endian
// header length, a JSON header, then raw little-endian tensor bytes. Tensors
// are written in name order so equal contents give byte-identical files.
// F64, F32 and I64 are understood; F32 is widened to double on read.
class SafeTensors {
 public:
  struct Entry {
    std::vector<std::int64_t> shape;
    std::vector<double> reals;          // F64/F32 payload
    std::vector<std::int64_t> integers;  // I64 payload
    bool is_integer = false;
  };

  void put(const std::string& name, std::vector<std::int64_t> shape, std::vector<double> values);
  void put(const std::string& name, const Matrix& m);
  void put(const std::string& name, const Vector& v);
  void put_integers(const std::string& name, std::vector<std::int64_t> shape,
                    std::vector<std::int64_t> values);

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  const Entry& entry(const std::string& name) const;
  // Reshaped to (shape[0], product of the rest); a rank-1 tensor becomes one row.
  Matrix matrix(const std::string& name) const;
  Vector vector(const std::string& name) const;
  const std::vector<std::int64_t>& integers(const std::string& name) const;

  std::map<std::string, std::string>& metadata() { return metadata_; }
  const std::map<std::string, std::string>& metadata() const { return metadata_; }
  const std::string& meta(const std::string& key) const;

  std::string serialize() const;
  static SafeTensors deserialize(const std::string& bytes);

  void save(const std::filesystem::path& path) const;
  static SafeTensors load(const std::filesystem::path& path);

 private:
  std::map<std::string, Entry> entries_;
  std::map<std::string, std::string> metadata_;
};

}  // namespace lgap
