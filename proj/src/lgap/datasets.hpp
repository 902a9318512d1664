#pragma once

#include "lgap/tensor.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace lgap {

struct Dataset {
  ImageBatch images;                     // labelled
  std::vector<std::string> class_names;  // index = label
  std::vector<std::string> names;        // per-sample file names, may be empty
  std::string source;                    // how it was loaded
  std::string split;
  std::string format;                    // loader that produced it

  std::size_t size() const { return images.size(); }
  Dataset select(const std::vector<std::size_t>& indices) const;
};

// Two-class stripe textures. Each image is a uniform brightness in
// [brightness_low, brightness_high] plus a +/-amplitude square-wave stripe
// pattern (period 4) that is horizontal for class 0 and vertical for class 1,
// plus i.i.d. Gaussian pixel noise, clamped to [0,1]. Labels alternate, so
// any even-sized prefix is exactly balanced.
struct ToyStripesOptions {
  std::size_t samples = 1024;
  std::size_t size = 16;
  std::size_t channels = 1;
  double amplitude = 0.015;
  double noise = 0.03;
  double brightness_low = 0.3;
  double brightness_high = 0.7;
  std::uint64_t seed = 0;
};

Dataset make_toy_stripes(const ToyStripesOptions& options);

// The clean class pattern in {-1,+1} for the given label, one row.
RowVector toy_stripe_pattern(std::int64_t label, const SampleShape& shape);

// Sources:
//   toy://stripes?n=1024&seed=0&size=16&channels=1&amplitude=0.015&noise=0.03
//   a directory holding images.safetensors, or a .safetensors file ("tensor")
//   a directory with index.csv (file,label) of PGM/PPM images ("images")
//   CIFAR-10/100 binary batches: a .bin file or a directory of them ("cifar10"/"cifar100")
// `format` is one of auto, toy, tensor, images, cifar10, cifar100.
Dataset load_dataset(const std::string& source, const std::string& format = "auto",
                     bool require_labels = true);

// images.safetensors (images F64 (N,C,H,W), labels I64) + manifest.json.
// Returns the sha256 of images.safetensors.
std::string save_tensor_dataset(const std::filesystem::path& dir, const Dataset& data,
                                nlohmann::json manifest);

// One PGM/PPM per sample, plus index.csv and classes.txt.
void save_image_directory(const std::filesystem::path& dir, const Dataset& data);

std::vector<std::size_t> label_counts(const Labels& labels, std::size_t num_classes);

}  // namespace lgap
