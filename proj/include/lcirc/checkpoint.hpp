#pragma once

#include <bit>
#include <cstring>
#include <string>
#include <vector>

#include <json.hpp>

#include "lcirc/compressor.hpp"
#include "lcirc/config.hpp"
#include "lcirc/layers.hpp"

namespace lcirc {

static_assert(std::endian::native == std::endian::little, "checkpoint payloads are written little-endian");

/// One named tensor as stored on disk.
struct TensorRecord {
  std::string name;
  std::string dtype;  // "f32" | "f64"
  Shape shape;
  std::vector<char> bytes;
};

/// Parsed container: JSON header plus raw tensor payloads.
struct Container {
  nlohmann::json header;
  std::vector<TensorRecord> tensors;

  const TensorRecord* find(const std::string& name) const;
};

/// Layout: 5-byte magic, u64 LE header length, UTF-8 JSON header, payloads.
/// The header's "tensors" list carries {name, dtype, shape, byte_offset,
/// byte_len} with offsets relative to the start of the payload area.
void write_container(const std::string& path, const std::string& magic, nlohmann::json header,
                     const std::vector<TensorRecord>& tensors);
Container read_container(const std::string& path, const std::string& magic);

template <typename Scalar>
constexpr const char* dtype_name() {
  static_assert(std::is_same_v<Scalar, float> || std::is_same_v<Scalar, double>);
  return std::is_same_v<Scalar, float> ? "f32" : "f64";
}

template <typename Scalar>
TensorRecord to_record(const std::string& name, const Tensor<Scalar>& t) {
  TensorRecord r{name, dtype_name<Scalar>(), t.shape(), {}};
  r.bytes.resize(static_cast<std::size_t>(t.numel()) * sizeof(Scalar));
  if (!r.bytes.empty()) std::memcpy(r.bytes.data(), t.value().data(), r.bytes.size());
  return r;
}

/// Decodes a record into a matrix of `Scalar`, converting between f32 and f64
/// when the stored type differs.
template <typename Scalar>
Matrix<Scalar> record_matrix(const TensorRecord& r) {
  const auto rows = detail::leading_rows(r.shape);
  const auto cols = detail::last_dim(r.shape);
  const auto n = static_cast<std::size_t>(rows * cols);
  Matrix<Scalar> m(rows, cols);
  auto decode = [&](auto tag) {
    using Stored = decltype(tag);
    if (r.bytes.size() != n * sizeof(Stored)) throw FormatError("tensor '" + r.name + "' payload has wrong size");
    std::vector<Stored> tmp(n);
    if (n) std::memcpy(tmp.data(), r.bytes.data(), r.bytes.size());
    for (std::size_t i = 0; i < n; ++i) m.data()[i] = static_cast<Scalar>(tmp[i]);
  };
  if (r.dtype == "f32") {
    decode(float{});
  } else if (r.dtype == "f64") {
    decode(double{});
  } else {
    throw FormatError("tensor '" + r.name + "' has unknown dtype " + r.dtype);
  }
  return m;
}

template <typename Scalar>
void save_checkpoint(const std::string& path, const ModelConfig& cfg, const ParamList<Scalar>& params) {
  std::vector<TensorRecord> recs;
  recs.reserve(params.size());
  for (const auto& [name, t] : params) recs.push_back(to_record(name, t));
  write_container(path, "LCKP1", nlohmann::json{{"config", cfg.to_json()}}, recs);
}

inline Container load_checkpoint(const std::string& path) { return read_container(path, "LCKP1"); }

inline ModelConfig checkpoint_config(const Container& c) {
  if (!c.header.contains("config")) throw FormatError("checkpoint header has no config");
  return ModelConfig::from_json(c.header.at("config"));
}

/// Copies stored values into `params` in place. Every parameter must be
/// present unless its name starts with one of `optional_prefixes`.
template <typename Scalar>
void assign_parameters(const Container& c, ParamList<Scalar>& params,
                       const std::vector<std::string>& optional_prefixes = {}) {
  for (auto& [name, t] : params) {
    const auto* r = c.find(name);
    if (r == nullptr) {
      bool optional = false;
      for (const auto& p : optional_prefixes) optional = optional || name.rfind(p, 0) == 0;
      if (optional) continue;
      throw FormatError("checkpoint is missing tensor '" + name + "'");
    }
    if (r->shape != t.shape()) {
      throw FormatError("tensor '" + name + "' has shape " + shape_to_string(r->shape) + " on disk, " +
                        shape_to_string(t.shape()) + " in the model");
    }
    t.mutable_value() = record_matrix<Scalar>(*r);
  }
}

/// Compressed-state snapshot: h blocks, step index, architecture hash.
template <typename Scalar>
void save_state(const std::string& path, const ModelConfig& cfg, const CompressorState<Scalar>& s) {
  std::vector<TensorRecord> recs;
  for (std::size_t i = 0; i < s.blocks.size(); ++i) recs.push_back(to_record("h." + std::to_string(i), s.blocks[i]));
  recs.push_back(to_record("h.current", s.current));
  nlohmann::json header{{"step", s.step()},
                        {"config_hash", cfg.architecture_hash()},
                        {"n_queries", cfg.n_queries},
                        {"d_compress", cfg.d_compress}};
  write_container(path, "LCST1", header, recs);
}

/// Restores a snapshot as constants (no gradient history). Throws FormatError
/// if it was written by a model with a different architecture.
template <typename Scalar>
CompressorState<Scalar> load_state(const std::string& path, const ModelConfig& cfg) {
  const auto c = read_container(path, "LCST1");
  if (c.header.value("config_hash", std::uint64_t{0}) != cfg.architecture_hash()) {
    throw FormatError("compressed state " + path + " was written for a different architecture");
  }
  const auto step = c.header.at("step").get<std::size_t>();
  CompressorState<Scalar> s;
  for (std::size_t i = 0; i < step; ++i) {
    const auto* r = c.find("h." + std::to_string(i));
    if (r == nullptr) throw FormatError("compressed state is missing block " + std::to_string(i));
    s.blocks.emplace_back(r->shape, record_matrix<Scalar>(*r));
    s.grad_enabled.push_back(false);
  }
  const auto* cur = c.find("h.current");
  if (cur == nullptr) throw FormatError("compressed state is missing h.current");
  s.current = Tensor<Scalar>(cur->shape, record_matrix<Scalar>(*cur));
  return s;
}

}  // namespace lcirc
