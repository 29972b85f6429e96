#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "nls/core/binary_io.hpp"
#include "nls/nn/layers.hpp"

namespace nls::nn {

inline constexpr char kParamMagic[] = "NLCK";
inline constexpr std::uint16_t kParamVersion = 1;

/// Named float32 tensors: magic, version, count, then (name, 4 dims, values).
inline std::string encode_params(const ParamList<float>& params) {
  io::ByteWriter w;
  w.magic(kParamMagic);
  w.u16(kParamVersion);
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto* p : params) {
    w.str(p->name);
    for (int d : p->value.shape) w.u32(static_cast<std::uint32_t>(d));
    w.f32s(p->value.data);
  }
  return w.bytes();
}

inline std::map<std::string, Tensor<float>> decode_params(std::string_view bytes, const std::string& context) {
  io::ByteReader r(bytes, context);
  r.expect_magic(kParamMagic);
  const auto version = r.u16("version");
  if (version != kParamVersion) throw FormatError(context + ": unsupported version " + std::to_string(version));
  const auto count = r.u32("count");
  std::map<std::string, Tensor<float>> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    auto name = r.str("name");
    Tensor<float> t;
    std::uint64_t size = 1;
    for (auto& d : t.shape) {
      d = static_cast<int>(r.u32("shape"));
      size *= static_cast<std::uint64_t>(d);
    }
    if (size * 4 > r.remaining()) throw FormatError(context + ": tensor '" + name + "' is truncated");
    t.data.resize(size);
    for (auto& v : t.data) {
      v = r.f32("values");
      if (!std::isfinite(v)) throw ValidationError(context + ": non-finite value in '" + name + "'");
    }
    if (!out.emplace(name, std::move(t)).second) throw FormatError(context + ": duplicate tensor '" + name + "'");
  }
  r.expect_end();
  return out;
}

/// Fills every parameter by name; extra or missing entries are errors.
inline void assign_params(const ParamList<float>& params, const std::map<std::string, Tensor<float>>& blob,
                          const std::string& context) {
  if (blob.size() != params.size()) {
    throw ConsistencyError(context + ": holds " + std::to_string(blob.size()) + " tensors, model has " +
                           std::to_string(params.size()));
  }
  for (auto* p : params) {
    auto it = blob.find(p->name);
    if (it == blob.end()) throw ConsistencyError(context + ": missing tensor '" + p->name + "'");
    if (!it->second.same_shape(p->value)) {
      throw ConsistencyError(context + ": tensor '" + p->name + "' has shape " + shape_string(it->second.shape) +
                             ", model expects " + shape_string(p->value.shape));
    }
    p->value = it->second;
  }
}

inline void save_params(const ParamList<float>& params, const std::filesystem::path& path) {
  io::write_file(path, encode_params(params));
}

inline void load_params(const ParamList<float>& params, const std::filesystem::path& path) {
  assign_params(params, decode_params(io::read_file(path), path.string()), path.string());
}

}  // namespace nls::nn
