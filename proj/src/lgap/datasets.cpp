#include "lgap/datasets.hpp"

#include "lgap/checksum.hpp"
#include "lgap/error.hpp"
#include "lgap/netpbm.hpp"
#include "lgap/random.hpp"
#include "lgap/safetensors.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

namespace lgap {

namespace fs = std::filesystem;

Dataset Dataset::select(const std::vector<std::size_t>& indices) const {
  Dataset out{images.select(indices), class_names, {}, source, split, format};
  if (!names.empty()) {
    for (auto i : indices) out.names.push_back(names.at(i));
  }
  return out;
}

RowVector toy_stripe_pattern(std::int64_t label, const SampleShape& shape) {
  RowVector p(static_cast<Eigen::Index>(shape.size()));
  for (std::size_t c = 0; c < shape.channels; ++c) {
    for (std::size_t i = 0; i < shape.height; ++i) {
      for (std::size_t j = 0; j < shape.width; ++j) {
        const std::size_t coord = label == 0 ? i : j;
        p(static_cast<Eigen::Index>((c * shape.height + i) * shape.width + j)) = (coord % 4) < 2 ? 1.0 : -1.0;
      }
    }
  }
  return p;
}

Dataset make_toy_stripes(const ToyStripesOptions& o) {
  if (o.samples == 0 || o.size == 0 || o.channels == 0) throw DomainError("toy dataset needs positive sizes");
  if (!(o.brightness_low <= o.brightness_high) || !(o.noise >= 0.0) || !(o.amplitude >= 0.0)) {
    throw DomainError("invalid toy dataset parameters");
  }
  const SampleShape shape{o.channels, o.size, o.size};
  const RowVector patterns[2] = {toy_stripe_pattern(0, shape), toy_stripe_pattern(1, shape)};
  Matrix data(static_cast<Eigen::Index>(o.samples), static_cast<Eigen::Index>(shape.size()));
  Labels labels(o.samples);
  for (std::size_t n = 0; n < o.samples; ++n) {
    std::mt19937_64 rng(derive_seed(o.seed, n));
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto y = static_cast<std::int64_t>(n % 2);
    labels[n] = y;
    const double b = o.brightness_low + (o.brightness_high - o.brightness_low) * uniform_unit(rng);
    for (Eigen::Index k = 0; k < data.cols(); ++k) {
      const double v = b + o.amplitude * patterns[y](k) + o.noise * normal(rng);
      data(static_cast<Eigen::Index>(n), k) = std::clamp(v, 0.0, 1.0);
    }
  }
  std::ostringstream src;
  src << "toy://stripes?n=" << o.samples << "&seed=" << o.seed << "&size=" << o.size
      << "&channels=" << o.channels << "&amplitude=" << o.amplitude << "&noise=" << o.noise;
  return Dataset{ImageBatch(shape, std::move(data), std::move(labels)), {"horizontal", "vertical"}, {},
                 src.str(), "synthetic", "toy"};
}

namespace {

Dataset load_toy(const std::string& source) {
  static const std::string kPrefix = "toy://stripes";
  if (source.rfind(kPrefix, 0) != 0) throw ConfigError("unknown toy dataset '" + source + "'");
  ToyStripesOptions o;
  std::string query = source.substr(kPrefix.size());
  if (!query.empty()) {
    if (query[0] != '?') throw ConfigError("malformed toy dataset source '" + source + "'");
    std::istringstream in(query.substr(1));
    for (std::string kv; std::getline(in, kv, '&');) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("malformed toy dataset parameter '" + kv + "'");
      const std::string k = kv.substr(0, eq);
      const std::string v = kv.substr(eq + 1);
      try {
        if (k == "n") o.samples = std::stoul(v);
        else if (k == "seed") o.seed = std::stoull(v);
        else if (k == "size") o.size = std::stoul(v);
        else if (k == "channels") o.channels = std::stoul(v);
        else if (k == "amplitude") o.amplitude = std::stod(v);
        else if (k == "noise") o.noise = std::stod(v);
        else throw ConfigError("unknown toy dataset parameter '" + k + "'");
      } catch (const std::logic_error&) {
        throw ConfigError("bad value for toy dataset parameter '" + k + "'");
      }
    }
  }
  return make_toy_stripes(o);
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

std::vector<std::string> default_class_names(const Labels& labels) {
  std::int64_t max_label = -1;
  for (auto y : labels) max_label = std::max(max_label, y);
  std::vector<std::string> names;
  for (std::int64_t i = 0; i <= max_label; ++i) names.push_back(std::to_string(i));
  return names;
}

Dataset load_tensor(const fs::path& path) {
  const fs::path file = fs::is_directory(path) ? path / "images.safetensors" : path;
  const SafeTensors st = SafeTensors::load(file);
  const auto& e = st.entry("images");
  if (e.shape.size() != 4) throw IoError("images tensor must be rank 4 (N,C,H,W)");
  const SampleShape shape{static_cast<std::size_t>(e.shape[1]), static_cast<std::size_t>(e.shape[2]),
                          static_cast<std::size_t>(e.shape[3])};
  Matrix data = st.matrix("images");
  data.resize(e.shape[0], static_cast<Eigen::Index>(shape.size()));
  std::optional<Labels> labels;
  if (st.contains("labels")) labels = st.integers("labels");
  Dataset d{ImageBatch(shape, std::move(data), std::move(labels)), {}, {}, file.string(), "", "tensor"};
  if (st.metadata().count("class_names")) {
    d.class_names = nlohmann::json::parse(st.meta("class_names")).get<std::vector<std::string>>();
  } else if (d.images.labels) {
    d.class_names = default_class_names(*d.images.labels);
  }
  if (st.metadata().count("names")) {
    d.names = nlohmann::json::parse(st.meta("names")).get<std::vector<std::string>>();
  }
  if (st.metadata().count("split")) d.split = st.meta("split");
  return d;
}

Dataset load_image_directory(const fs::path& dir) {
  const auto index = read_lines(dir / "index.csv");
  std::vector<std::string> files;
  Labels labels;
  for (std::size_t i = 0; i < index.size(); ++i) {
    const auto comma = index[i].rfind(',');
    if (comma == std::string::npos) throw IoError("index.csv line " + std::to_string(i + 1) + " lacks a label");
    const std::string file = index[i].substr(0, comma);
    const std::string label = index[i].substr(comma + 1);
    std::int64_t y;
    try {
      std::size_t pos = 0;
      y = std::stoll(label, &pos);
      if (pos != label.size()) throw std::invalid_argument(label);
    } catch (const std::logic_error&) {
      if (i == 0) continue;  // header row
      throw IoError("index.csv line " + std::to_string(i + 1) + " has a non-integer label");
    }
    if (y < 0) throw IoError("negative label in index.csv");
    files.push_back(file);
    labels.push_back(y);
  }
  if (files.empty()) throw IoError(dir.string() + "/index.csv lists no images");
  SampleShape shape;
  Matrix data;
  for (std::size_t n = 0; n < files.size(); ++n) {
    const PixelImage img = read_netpbm(dir / files[n]);
    if (n == 0) {
      shape = img.shape;
      data.resize(static_cast<Eigen::Index>(files.size()), static_cast<Eigen::Index>(shape.size()));
    } else if (!(img.shape == shape)) {
      throw ShapeError(files[n] + " has shape " + img.shape.str() + ", expected " + shape.str());
    }
    data.row(static_cast<Eigen::Index>(n)) =
        Eigen::Map<const RowVector>(img.values.data(), static_cast<Eigen::Index>(img.values.size()));
  }
  Dataset d{ImageBatch(shape, std::move(data), labels), {}, files, dir.string(), "", "images"};
  if (fs::exists(dir / "classes.txt")) {
    d.class_names = read_lines(dir / "classes.txt");
  } else {
    d.class_names = default_class_names(labels);
  }
  d.images.validate(d.class_names.size());
  return d;
}

Dataset load_cifar(const fs::path& path, bool hundred) {
  std::vector<fs::path> files;
  if (fs::is_directory(path)) {
    for (const auto& entry : fs::directory_iterator(path)) {
      if (entry.path().extension() == ".bin") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(path);
  }
  if (files.empty()) throw IoError("no CIFAR .bin batches under " + path.string());
  const std::size_t label_bytes = hundred ? 2 : 1;
  const std::size_t record = label_bytes + 3072;
  const SampleShape shape{3, 32, 32};
  std::vector<double> values;
  Labels labels;
  for (const auto& f : files) {
    std::ifstream in(f, std::ios::binary);
    if (!in) throw IoError("cannot open " + f.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() % record != 0) {
      throw IoError(f.string() + " is not a CIFAR-" + (hundred ? "100" : "10") + " batch");
    }
    for (std::size_t off = 0; off < bytes.size(); off += record) {
      labels.push_back(static_cast<unsigned char>(bytes[off + label_bytes - 1]));
      for (std::size_t k = 0; k < 3072; ++k) {
        values.push_back(static_cast<unsigned char>(bytes[off + label_bytes + k]) / 255.0);
      }
    }
  }
  Matrix data = Eigen::Map<Matrix>(values.data(), static_cast<Eigen::Index>(labels.size()), 3072);
  Dataset d{ImageBatch(shape, std::move(data), labels), {}, {}, path.string(), "", hundred ? "cifar100" : "cifar10"};
  const fs::path dir = fs::is_directory(path) ? path : path.parent_path();
  const fs::path meta = dir / (hundred ? "fine_label_names.txt" : "batches.meta.txt");
  d.class_names = fs::exists(meta) ? read_lines(meta) : default_class_names(labels);
  if (d.class_names.size() < (hundred ? 100u : 10u)) d.class_names = default_class_names(labels);
  return d;
}

std::string detect_format(const std::string& source) {
  if (source.rfind("toy://", 0) == 0) return "toy";
  const fs::path p(source);
  if (!fs::exists(p)) throw IoError("dataset source does not exist: " + source);
  if (fs::is_directory(p)) {
    if (fs::exists(p / "images.safetensors")) return "tensor";
    if (fs::exists(p / "index.csv")) return "images";
    for (const auto& entry : fs::directory_iterator(p)) {
      if (entry.path().extension() == ".bin") {
        return fs::file_size(entry.path()) % 3073 == 0 ? "cifar10" : "cifar100";
      }
    }
    throw IoError("cannot tell the dataset format of " + source);
  }
  if (p.extension() == ".safetensors") return "tensor";
  if (p.extension() == ".bin") return fs::file_size(p) % 3073 == 0 ? "cifar10" : "cifar100";
  throw IoError("cannot tell the dataset format of " + source);
}

}  // namespace

Dataset load_dataset(const std::string& source, const std::string& format, bool require_labels) {
  if (source.empty()) throw ConfigError("no dataset source configured");
  static const std::set<std::string> kFormats{"auto", "toy", "tensor", "images", "cifar10", "cifar100"};
  if (!kFormats.count(format)) throw ConfigError("unknown dataset format '" + format + "'");
  const std::string f = format == "auto" ? detect_format(source) : format;
  if (f != "toy" && !fs::exists(source)) throw IoError("dataset source does not exist: " + source);
  Dataset d;
  if (f == "toy") d = load_toy(source);
  else if (f == "tensor") d = load_tensor(source);
  else if (f == "images") d = load_image_directory(source);
  else if (f == "cifar10") d = load_cifar(source, false);
  else if (f == "cifar100") d = load_cifar(source, true);
  else throw ConfigError("unknown dataset format '" + format + "'");
  d.format = f;
  if (require_labels && !d.images.labels) throw IoError("dataset " + source + " has no labels");
  if (d.images.labels) d.images.validate(d.class_names.size());
  else d.images.validate();
  return d;
}

std::string save_tensor_dataset(const fs::path& dir, const Dataset& data, nlohmann::json manifest) {
  fs::create_directories(dir);
  SafeTensors st;
  const auto& s = data.images.shape;
  st.put("images",
         {static_cast<std::int64_t>(data.size()), static_cast<std::int64_t>(s.channels),
          static_cast<std::int64_t>(s.height), static_cast<std::int64_t>(s.width)},
         std::vector<double>(data.images.data.data(), data.images.data.data() + data.images.data.size()));
  if (data.images.labels) {
    st.put_integers("labels", {static_cast<std::int64_t>(data.size())}, *data.images.labels);
  }
  st.metadata()["class_names"] = nlohmann::json(data.class_names).dump();
  if (!data.names.empty()) st.metadata()["names"] = nlohmann::json(data.names).dump();
  if (!data.split.empty()) st.metadata()["split"] = data.split;
  st.save(dir / "images.safetensors");
  const std::string checksum = sha256_file(dir / "images.safetensors");
  manifest["sample_count"] = data.size();
  manifest["image_shape"] = {s.channels, s.height, s.width};
  manifest["checksum"] = {{"images.safetensors", checksum}};
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(2) << "\n";
  if (!out) throw IoError("cannot write manifest in " + dir.string());
  return checksum;
}

void save_image_directory(const fs::path& dir, const Dataset& data) {
  fs::create_directories(dir);
  std::ofstream index(dir / "index.csv");
  const std::string ext = data.images.shape.channels == 1 ? ".pgm" : ".ppm";
  for (std::size_t n = 0; n < data.size(); ++n) {
    std::string name = data.names.empty() ? ("img" + std::to_string(n) + ext) : data.names[n];
    write_netpbm(dir / name, data.images.shape, &data.images.data(static_cast<Eigen::Index>(n), 0));
    index << name << "," << (data.images.labels ? (*data.images.labels)[n] : 0) << "\n";
  }
  std::ofstream classes(dir / "classes.txt");
  for (const auto& c : data.class_names) classes << c << "\n";
  if (!index || !classes) throw IoError("cannot write image directory " + dir.string());
}

std::vector<std::size_t> label_counts(const Labels& labels, std::size_t num_classes) {
  std::vector<std::size_t> counts(num_classes, 0);
  for (auto y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) throw DomainError("label out of range");
    ++counts[static_cast<std::size_t>(y)];
  }
  return counts;
}

}  // namespace lgap
