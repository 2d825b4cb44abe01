// Dataset ingestion: big-endian IDX image/label files, delimited text tables,
// the paired-image combined dataset, and in-memory transforms (subsampling,
// standardization, block downsampling).

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ked/model.hpp"

namespace ked {

struct Dataset {
  std::size_t feature_count = 0;  // d
  std::size_t class_count = 0;    // C
  std::vector<double> features;   // sample_count x d, row-major
  std::vector<int> labels;
  // Normalization metadata (identity when shift 0 / scale 1).
  std::vector<double> shift;
  std::vector<double> scale;
  std::vector<std::string> label_names;  // original labels for mapped datasets

  std::size_t sample_count() const { return labels.size(); }

  const double* row(std::size_t i) const { return features.data() + i * feature_count; }

  std::vector<double> row_copy(std::size_t i) const {
    return {features.begin() + i * feature_count, features.begin() + (i + 1) * feature_count};
  }

  void validate() const {
    if (feature_count == 0) throw std::invalid_argument("dataset: zero feature count");
    if (features.size() != labels.size() * feature_count) {
      throw std::invalid_argument("dataset: feature buffer does not match label count");
    }
    for (int y : labels) {
      if (y < 0 || static_cast<std::size_t>(y) >= class_count) {
        throw std::invalid_argument("dataset: label outside [0, C)");
      }
    }
    for (double v : features) {
      if (std::isnan(v)) throw std::invalid_argument("dataset: NaN feature value");
    }
  }

  Tensor batch(const std::vector<std::size_t>& indices) const {
    std::vector<double> buf(indices.size() * feature_count);
    for (std::size_t r = 0; r < indices.size(); ++r) {
      std::copy_n(row(indices[r]), feature_count, buf.begin() + r * feature_count);
    }
    return Tensor::matrix(indices.size(), feature_count, std::move(buf));
  }

  std::vector<int> label_subset(const std::vector<std::size_t>& indices) const {
    std::vector<int> out(indices.size());
    for (std::size_t r = 0; r < indices.size(); ++r) out[r] = labels[indices[r]];
    return out;
  }
};

namespace detail {

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  in.seekg(0, std::ios::end);
  const auto len = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<unsigned char> bytes(len);
  if (len > 0) in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error("failed reading " + path);
  return bytes;
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t off,
                               const std::string& path) {
  if (off + 4 > b.size()) {
    throw std::runtime_error(path + ": truncated at byte " + std::to_string(off) + " (need " +
                             std::to_string(off + 4) + " bytes, file has " +
                             std::to_string(b.size()) + ")");
  }
  return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) |
         (std::uint32_t(b[off + 2]) << 8) | std::uint32_t(b[off + 3]);
}

}  // namespace detail

// Parses the classic big-endian IDX pair: images with magic 0x00000803,
// labels with magic 0x00000801. Pixels are scaled to [0,1].
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  using detail::read_be32;
  const auto img = detail::read_file_bytes(images_path);
  const auto lab = detail::read_file_bytes(labels_path);

  const std::uint32_t img_magic = read_be32(img, 0, images_path);
  if (img_magic != 0x00000803u) {
    std::ostringstream os;
    os << images_path << ": bad image magic 0x" << std::hex << img_magic
       << " at byte 0 (expected 0x803)";
    throw std::runtime_error(os.str());
  }
  const std::uint32_t n_img = read_be32(img, 4, images_path);
  const std::uint32_t rows = read_be32(img, 8, images_path);
  const std::uint32_t cols = read_be32(img, 12, images_path);
  const std::size_t pixels = std::size_t(n_img) * rows * cols;
  if (img.size() != 16 + pixels) {
    throw std::runtime_error(images_path + ": expected " + std::to_string(16 + pixels) +
                             " bytes for " + std::to_string(n_img) + " images, file has " +
                             std::to_string(img.size()));
  }

  const std::uint32_t lab_magic = read_be32(lab, 0, labels_path);
  if (lab_magic != 0x00000801u) {
    std::ostringstream os;
    os << labels_path << ": bad label magic 0x" << std::hex << lab_magic
       << " at byte 0 (expected 0x801)";
    throw std::runtime_error(os.str());
  }
  const std::uint32_t n_lab = read_be32(lab, 4, labels_path);
  if (lab.size() != 8 + n_lab) {
    throw std::runtime_error(labels_path + ": expected " + std::to_string(8 + n_lab) +
                             " bytes for " + std::to_string(n_lab) + " labels, file has " +
                             std::to_string(lab.size()));
  }
  if (n_img != n_lab) {
    throw std::runtime_error("image/label count mismatch: " + std::to_string(n_img) + " images in " +
                             images_path + " vs " + std::to_string(n_lab) + " labels in " +
                             labels_path);
  }

  Dataset ds;
  ds.feature_count = std::size_t(rows) * cols;
  ds.features.resize(pixels);
  for (std::size_t i = 0; i < pixels; ++i) ds.features[i] = img[16 + i] / 255.0;
  ds.labels.resize(n_lab);
  int max_label = 0;
  for (std::size_t i = 0; i < n_lab; ++i) {
    ds.labels[i] = lab[8 + i];
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.class_count = static_cast<std::size_t>(max_label) + 1;
  ds.shift.assign(ds.feature_count, 0.0);
  ds.scale.assign(ds.feature_count, 1.0);
  ds.validate();
  return ds;
}

// Per-feature affine normalization fitted on one split and applied to others.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> stddev;  // constant columns fall back to 1

  static Standardizer fit(const Dataset& ds) {
    Standardizer s;
    const std::size_t d = ds.feature_count, k = ds.sample_count();
    if (k == 0) throw std::invalid_argument("standardizer: empty dataset");
    s.mean.assign(d, 0.0);
    s.stddev.assign(d, 0.0);
    for (std::size_t i = 0; i < k; ++i) {
      const double* r = ds.row(i);
      for (std::size_t j = 0; j < d; ++j) s.mean[j] += r[j];
    }
    for (double& m : s.mean) m /= static_cast<double>(k);
    for (std::size_t i = 0; i < k; ++i) {
      const double* r = ds.row(i);
      for (std::size_t j = 0; j < d; ++j) {
        const double dv = r[j] - s.mean[j];
        s.stddev[j] += dv * dv;
      }
    }
    for (double& v : s.stddev) {
      v = std::sqrt(v / static_cast<double>(k));
      if (v == 0.0) v = 1.0;
    }
    return s;
  }

  void apply(Dataset& ds) const {
    if (ds.feature_count != mean.size()) {
      throw std::invalid_argument("standardizer: dimension mismatch");
    }
    for (std::size_t i = 0; i < ds.sample_count(); ++i) {
      double* r = ds.features.data() + i * ds.feature_count;
      for (std::size_t j = 0; j < ds.feature_count; ++j) r[j] = (r[j] - mean[j]) / stddev[j];
    }
    ds.shift = mean;
    ds.scale = stddev;
  }
};

struct CsvSchema {
  char delimiter = ',';
  // Feature columns by header name; empty means every non-label column.
  std::vector<std::string> feature_columns;
  bool standardize = true;
};

// Loads a delimited table with a header row. Feature cells must be numeric;
// the label column may hold arbitrary strings, mapped to contiguous ids in
// first-appearance order (the mapping is kept in label_names).
inline Dataset load_csv(const std::string& path, const std::string& label_column,
                        const CsvSchema& schema = {}) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path + ": missing header row");
  auto split = [&](const std::string& s) {
    std::vector<std::string> out;
    std::string cell;
    std::stringstream ss(s);
    while (std::getline(ss, cell, schema.delimiter)) out.push_back(cell);
    if (!s.empty() && s.back() == schema.delimiter) out.emplace_back();
    return out;
  };
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split(line);
  std::size_t label_idx = header.size();
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == label_column) label_idx = i;
  }
  if (label_idx == header.size()) {
    throw std::runtime_error(path + ": label column '" + label_column + "' not in header");
  }
  std::vector<std::size_t> feature_idx;
  if (schema.feature_columns.empty()) {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (i != label_idx) feature_idx.push_back(i);
    }
  } else {
    for (const std::string& name : schema.feature_columns) {
      auto it = std::find(header.begin(), header.end(), name);
      if (it == header.end()) {
        throw std::runtime_error(path + ": feature column '" + name + "' not in header");
      }
      feature_idx.push_back(static_cast<std::size_t>(it - header.begin()));
    }
  }

  Dataset ds;
  ds.feature_count = feature_idx.size();
  std::map<std::string, int> label_ids;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != header.size()) {
      throw std::runtime_error(path + ": row " + std::to_string(line_no) + " has " +
                               std::to_string(cells.size()) + " cells, header has " +
                               std::to_string(header.size()));
    }
    for (std::size_t j : feature_idx) {
      const std::string& cell = cells[j];
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str() || *end != '\0') {
        throw std::runtime_error(path + ": non-numeric feature cell at row " +
                                 std::to_string(line_no) + ", column '" + header[j] + "'");
      }
      ds.features.push_back(v);
    }
    const std::string& lab = cells[label_idx];
    auto [it, inserted] = label_ids.try_emplace(lab, static_cast<int>(ds.label_names.size()));
    if (inserted) ds.label_names.push_back(lab);
    ds.labels.push_back(it->second);
  }
  if (ds.labels.empty()) throw std::runtime_error(path + ": no data rows");
  ds.class_count = ds.label_names.size();
  ds.shift.assign(ds.feature_count, 0.0);
  ds.scale.assign(ds.feature_count, 1.0);
  if (schema.standardize) Standardizer::fit(ds).apply(ds);
  ds.validate();
  return ds;
}

// Seeded uniform subset without replacement, preserving relative order.
inline Dataset subsample(const Dataset& ds, std::size_t n, std::uint64_t seed) {
  if (n > ds.sample_count()) {
    throw std::invalid_argument("subsample: requested " + std::to_string(n) + " of " +
                                std::to_string(ds.sample_count()) + " samples");
  }
  std::vector<std::size_t> idx(ds.sample_count());
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  Dataset out;
  out.feature_count = ds.feature_count;
  out.class_count = ds.class_count;
  out.shift = ds.shift;
  out.scale = ds.scale;
  out.label_names = ds.label_names;
  out.features.reserve(n * ds.feature_count);
  out.labels.reserve(n);
  for (std::size_t i : idx) {
    out.features.insert(out.features.end(), ds.row(i), ds.row(i) + ds.feature_count);
    out.labels.push_back(ds.labels[i]);
  }
  return out;
}

// Seeded train/holdout split by fraction (holdout gets round(fraction * K)).
inline std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double holdout_fraction,
                                                 std::uint64_t seed) {
  if (holdout_fraction < 0.0 || holdout_fraction >= 1.0) {
    throw std::invalid_argument("split: holdout fraction must lie in [0,1)");
  }
  const std::size_t k = ds.sample_count();
  const auto n_hold = static_cast<std::size_t>(std::llround(holdout_fraction * k));
  std::vector<std::size_t> idx(k);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  auto take = [&](std::size_t begin, std::size_t end) {
    Dataset out;
    out.feature_count = ds.feature_count;
    out.class_count = ds.class_count;
    out.shift = ds.shift;
    out.scale = ds.scale;
    out.label_names = ds.label_names;
    for (std::size_t i = begin; i < end; ++i) {
      out.features.insert(out.features.end(), ds.row(idx[i]), ds.row(idx[i]) + ds.feature_count);
      out.labels.push_back(ds.labels[idx[i]]);
    }
    return out;
  };
  return {take(n_hold, k), take(0, n_hold)};
}

// Concatenates one sample from each source (second source order shuffled by
// the seed) into a single wide sample; labels combine positionally as
// 10 * first + second. Returns the ground-truth two-group partition.
inline std::pair<Dataset, SuperfeaturePartition> combine_mnist_fashion(const Dataset& first,
                                                                       const Dataset& second,
                                                                       std::uint64_t seed) {
  if (first.sample_count() != second.sample_count()) {
    throw std::invalid_argument("combine: sample counts differ");
  }
  if (first.class_count != 10 || second.class_count != 10) {
    throw std::invalid_argument("combine: both sources must have 10 classes");
  }
  const std::size_t k = first.sample_count();
  const std::size_t d1 = first.feature_count, d2 = second.feature_count;
  std::vector<std::size_t> perm(k);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);

  Dataset out;
  out.feature_count = d1 + d2;
  out.class_count = 100;
  out.features.resize(k * (d1 + d2));
  out.labels.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    double* dst = out.features.data() + i * (d1 + d2);
    std::copy_n(first.row(i), d1, dst);
    std::copy_n(second.row(perm[i]), d2, dst + d1);
    out.labels[i] = first.labels[i] * 10 + second.labels[perm[i]];
  }
  out.shift.assign(out.feature_count, 0.0);
  out.scale.assign(out.feature_count, 1.0);

  SuperfeaturePartition actual;
  actual.groups.resize(2);
  actual.groups[0].resize(d1);
  actual.groups[1].resize(d2);
  std::iota(actual.groups[0].begin(), actual.groups[0].end(), 0);
  std::iota(actual.groups[1].begin(), actual.groups[1].end(), d1);
  return {std::move(out), std::move(actual)};
}

// Mean-pools square images by an integer factor (28x28 -> 14x14 at factor 2).
inline Dataset downsample_images(const Dataset& ds, std::size_t rows, std::size_t cols,
                                 std::size_t factor) {
  if (rows * cols != ds.feature_count || factor == 0 || rows % factor || cols % factor) {
    throw std::invalid_argument("downsample: geometry does not divide evenly");
  }
  const std::size_t nr = rows / factor, nc = cols / factor;
  Dataset out;
  out.feature_count = nr * nc;
  out.class_count = ds.class_count;
  out.labels = ds.labels;
  out.label_names = ds.label_names;
  out.features.resize(ds.sample_count() * nr * nc);
  const double inv = 1.0 / static_cast<double>(factor * factor);
  for (std::size_t i = 0; i < ds.sample_count(); ++i) {
    const double* src = ds.row(i);
    double* dst = out.features.data() + i * nr * nc;
    for (std::size_t r = 0; r < nr; ++r) {
      for (std::size_t c = 0; c < nc; ++c) {
        double acc = 0.0;
        for (std::size_t dr = 0; dr < factor; ++dr) {
          for (std::size_t dc = 0; dc < factor; ++dc) {
            acc += src[(r * factor + dr) * cols + (c * factor + dc)];
          }
        }
        dst[r * nc + c] = acc * inv;
      }
    }
  }
  out.shift.assign(out.feature_count, 0.0);
  out.scale.assign(out.feature_count, 1.0);
  return out;
}

}  // namespace ked
