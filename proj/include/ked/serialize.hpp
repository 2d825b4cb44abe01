// Flat binary persistence for models and dataset caches. One container
// framing for both: magic, format version, an embedded config hash, a sized
// payload, and a trailing FNV-1a checksum of the payload. All integers and
// IEEE-754 doubles are little-endian; round trips are byte-exact.

#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ked/dataset.hpp"
#include "ked/model.hpp"

namespace ked {
namespace io {

inline std::uint64_t fnv1a64(const unsigned char* data, std::size_t len,
                             std::uint64_t seed = 0xcbf29ce484222325ull) {
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s) {
  return fnv1a64(reinterpret_cast<const unsigned char*>(s.data()), s.size());
}

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void f64_array(const std::vector<double>& vs) {
    for (double v : vs) f64(v);
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  const std::vector<unsigned char>& bytes() const { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

class Reader {
 public:
  Reader(const unsigned char* data, std::size_t len, std::string name, std::size_t base_offset = 0)
      : data_(data), len_(len), name_(std::move(name)), base_(base_offset) {}

  std::uint32_t u32() {
    need(4, "u32");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(data_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8, "u64");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(data_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::vector<double> f64_array(std::size_t n) {
    std::vector<double> out(n);
    for (double& v : out) v = f64();
    return out;
  }
  std::string str() {
    const std::uint32_t n = u32();
    need(n, "string body");
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t offset() const { return base_ + pos_; }
  bool exhausted() const { return pos_ == len_; }

  [[noreturn]] void fail(const std::string& what) const {
    throw std::runtime_error(name_ + ": " + what + " at byte " + std::to_string(offset()));
  }

 private:
  void need(std::size_t n, const char* what) {
    if (pos_ + n > len_) {
      throw std::runtime_error(name_ + ": truncated " + what + " at byte " +
                               std::to_string(base_ + pos_) + " (need " + std::to_string(n) +
                               " more bytes, " + std::to_string(len_ - pos_) + " left)");
    }
  }

  const unsigned char* data_;
  std::size_t len_;
  std::string name_;
  std::size_t base_;
  std::size_t pos_ = 0;
};

// Container framing shared by every binary artifact.
inline void write_container(const std::string& path, const char magic[4], std::uint32_t version,
                            std::uint64_t config_hash, const Writer& payload) {
  Writer head;
  head.u32(std::bit_cast<std::uint32_t>(std::array<char, 4>{magic[0], magic[1], magic[2], magic[3]}));
  head.u32(version);
  head.u64(config_hash);
  head.u64(payload.bytes().size());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  auto put = [&](const std::vector<unsigned char>& b) {
    out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  };
  put(head.bytes());
  put(payload.bytes());
  Writer tail;
  tail.u64(fnv1a64(payload.bytes().data(), payload.bytes().size()));
  put(tail.bytes());
  if (!out) throw std::runtime_error("failed writing " + path);
}

struct Container {
  std::uint32_t version = 0;
  std::uint64_t config_hash = 0;
  std::vector<unsigned char> payload;
};

inline Container read_container(const std::string& path, const char magic[4]) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  Reader r(bytes.data(), bytes.size(), path);
  const std::uint32_t found = r.u32();
  const auto expect = std::bit_cast<std::uint32_t>(
      std::array<char, 4>{magic[0], magic[1], magic[2], magic[3]});
  if (found != expect) {
    throw std::runtime_error(path + ": bad magic at byte 0 (not a " + std::string(magic, 4) +
                             " file)");
  }
  Container c;
  c.version = r.u32();
  if (c.version != 1) throw std::runtime_error(path + ": unsupported format version");
  c.config_hash = r.u64();
  const std::uint64_t payload_len = r.u64();
  if (bytes.size() != 24 + payload_len + 8) {
    throw std::runtime_error(path + ": expected " + std::to_string(24 + payload_len + 8) +
                             " bytes, file has " + std::to_string(bytes.size()));
  }
  c.payload.assign(bytes.begin() + 24, bytes.begin() + 24 + static_cast<std::ptrdiff_t>(payload_len));
  Reader tail(bytes.data() + 24 + payload_len, 8, path, 24 + payload_len);
  const std::uint64_t stored = tail.u64();
  const std::uint64_t actual = fnv1a64(c.payload.data(), c.payload.size());
  if (stored != actual) {
    throw std::runtime_error(path + ": checksum mismatch over payload bytes 24.." +
                             std::to_string(24 + payload_len - 1) + " (file is corrupted)");
  }
  return c;
}

}  // namespace io

// ---------------------------------------------------------------------------
// Models
// ---------------------------------------------------------------------------

inline void save_model(const TypeMModel& model, const std::string& path,
                       std::uint64_t config_hash = 0) {
  io::Writer w;
  w.u32(static_cast<std::uint32_t>(model.input_dim()));
  w.u32(static_cast<std::uint32_t>(model.num_classes()));
  w.u32(static_cast<std::uint32_t>(model.group_count()));
  for (const auto& group : model.partition().groups) {
    w.u64(group.size());
    for (std::size_t i : group) w.u64(i);
  }
  w.f64_array(model.prior());
  for (std::size_t m = 0; m < model.group_count(); ++m) {
    const Mlp& net = model.subnet(m);
    w.u32(static_cast<std::uint32_t>(net.layer_count()));
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
      const Tensor& weight = net.weight(l);
      w.u64(weight.rows());
      w.u64(weight.cols());
      w.f64_array(weight.values());
      w.f64_array(net.bias(l).values());
    }
  }
  io::write_container(path, "KEDM", 1, config_hash, w);
}

struct LoadedModel {
  TypeMModel model;
  std::uint64_t config_hash = 0;
};

inline LoadedModel load_model(const std::string& path) {
  io::Container c = io::read_container(path, "KEDM");
  io::Reader r(c.payload.data(), c.payload.size(), path, 24);
  const std::uint32_t dim = r.u32();
  const std::uint32_t classes = r.u32();
  const std::uint32_t m_count = r.u32();
  if (dim == 0 || classes == 0 || m_count == 0) r.fail("zero model dimension");
  SuperfeaturePartition partition;
  partition.groups.resize(m_count);
  for (auto& group : partition.groups) {
    const std::uint64_t n = r.u64();
    if (n == 0 || n > dim) r.fail("implausible group size");
    group.resize(n);
    for (auto& idx : group) idx = r.u64();
  }
  std::vector<double> prior = r.f64_array(classes);
  std::vector<Mlp> subnets;
  for (std::uint32_t m = 0; m < m_count; ++m) {
    const std::uint32_t layers = r.u32();
    if (layers < 2) r.fail("subnet needs at least one hidden and one output layer");
    std::vector<Tensor> weights, biases;
    MLPSpec spec;
    spec.input_dim = partition.groups[m].size();
    spec.num_classes = classes;
    for (std::uint32_t l = 0; l < layers; ++l) {
      const std::uint64_t rows = r.u64();
      const std::uint64_t cols = r.u64();
      if (rows == 0 || cols == 0) r.fail("zero layer extent");
      weights.push_back(Tensor::matrix(rows, cols, r.f64_array(rows * cols)));
      biases.push_back(Tensor::matrix(1, cols, r.f64_array(cols)));
      if (l + 1 < layers) spec.hidden_widths.push_back(cols);
    }
    subnets.push_back(Mlp::from_parameters(spec, std::move(weights), std::move(biases)));
  }
  if (!r.exhausted()) r.fail("trailing bytes after model payload");
  LoadedModel out{TypeMModel::from_parts(std::move(partition), std::move(subnets), std::move(prior)),
                  c.config_hash};
  if (out.model.input_dim() != dim) {
    throw std::runtime_error(path + ": partition does not cover the declared input width");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset cache
// ---------------------------------------------------------------------------

inline void save_dataset(const Dataset& ds, const std::string& path,
                         std::uint64_t config_hash = 0) {
  ds.validate();
  io::Writer w;
  w.u32(static_cast<std::uint32_t>(ds.feature_count));
  w.u32(static_cast<std::uint32_t>(ds.class_count));
  w.u64(ds.sample_count());
  for (int y : ds.labels) w.i32(y);
  w.f64_array(ds.features);
  w.f64_array(ds.shift);
  w.f64_array(ds.scale);
  w.u32(static_cast<std::uint32_t>(ds.label_names.size()));
  for (const std::string& name : ds.label_names) w.str(name);
  io::write_container(path, "KEDD", 1, config_hash, w);
}

inline Dataset load_dataset(const std::string& path) {
  io::Container c = io::read_container(path, "KEDD");
  io::Reader r(c.payload.data(), c.payload.size(), path, 24);
  Dataset ds;
  ds.feature_count = r.u32();
  ds.class_count = r.u32();
  const std::uint64_t k = r.u64();
  ds.labels.resize(k);
  for (int& y : ds.labels) y = r.i32();
  ds.features = r.f64_array(k * ds.feature_count);
  ds.shift = r.f64_array(ds.feature_count);
  ds.scale = r.f64_array(ds.feature_count);
  const std::uint32_t names = r.u32();
  for (std::uint32_t i = 0; i < names; ++i) ds.label_names.push_back(r.str());
  if (!r.exhausted()) r.fail("trailing bytes after dataset payload");
  ds.validate();
  return ds;
}

}  // namespace ked
