#pragma once

#include <filesystem>
#include <span>
#include <string>

namespace lgap {

std::string sha256_hex(std::span<const unsigned char> bytes);
std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace lgap
