#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "nls/core/binary_io.hpp"
#include "nls/core/error.hpp"

namespace nls::features {

/// Per-patch feature grid. `values` is row-major (h, w, c).
struct DenseFeatureMap {
  int height_patches = 0;
  int width_patches = 0;
  int channels = 0;
  int stride_px = 1;
  std::vector<float> values;
  std::string source_id;

  DenseFeatureMap() = default;
  DenseFeatureMap(int h, int w, int c, int stride, std::string source = {})
      : height_patches(h),
        width_patches(w),
        channels(c),
        stride_px(stride),
        values(static_cast<std::size_t>(h) * w * c, 0.0f),
        source_id(std::move(source)) {}

  std::size_t cell_index(int y, int x) const { return (static_cast<std::size_t>(y) * width_patches + x) * channels; }
  std::span<float> cell(int y, int x) { return {values.data() + cell_index(y, x), static_cast<std::size_t>(channels)}; }
  std::span<const float> cell(int y, int x) const {
    return {values.data() + cell_index(y, x), static_cast<std::size_t>(channels)};
  }
  int cell_count() const { return height_patches * width_patches; }
  int image_height() const { return height_patches * stride_px; }
  int image_width() const { return width_patches * stride_px; }

  friend bool operator==(const DenseFeatureMap&, const DenseFeatureMap&) = default;
};

inline constexpr char kFeatureMagic[] = "NLFM";
inline constexpr std::uint16_t kFeatureVersion = 1;

inline std::string encode_features(const DenseFeatureMap& map) {
  io::ByteWriter w;
  w.magic(kFeatureMagic);
  w.u16(kFeatureVersion);
  w.u32(static_cast<std::uint32_t>(map.height_patches));
  w.u32(static_cast<std::uint32_t>(map.width_patches));
  w.u32(static_cast<std::uint32_t>(map.channels));
  w.u32(static_cast<std::uint32_t>(map.stride_px));
  w.str(map.source_id);
  w.f32s(map.values);
  return w.bytes();
}

/// Parses an NLFM blob. Never returns a partially filled map.
inline DenseFeatureMap decode_features(std::string_view bytes, const std::string& context = "feature file") {
  io::ByteReader r(bytes, context);
  r.expect_magic(kFeatureMagic);
  const auto version = r.u16("version");
  if (version != kFeatureVersion) {
    throw FormatError(context + ": unsupported version " + std::to_string(version));
  }
  const auto h = r.u32("height_patches");
  const auto w = r.u32("width_patches");
  const auto c = r.u32("channels");
  const auto stride = r.u32("stride_px");
  if (h == 0 || w == 0 || c == 0 || stride == 0) {
    throw FormatError(context + ": zero dimension in header");
  }
  std::string source = r.str("source_id");
  const std::uint64_t count = std::uint64_t{h} * w * c;
  if (r.remaining() != count * 4) {
    throw FormatError(context + ": expected " + std::to_string(count * 4) + " value bytes, found " +
                      std::to_string(r.remaining()));
  }
  DenseFeatureMap map(static_cast<int>(h), static_cast<int>(w), static_cast<int>(c), static_cast<int>(stride),
                      std::move(source));
  for (std::uint64_t i = 0; i < count; ++i) {
    const float v = r.f32("values");
    if (!std::isfinite(v)) {
      const auto cell = i / c;
      throw ValidationError(context + ": non-finite value at cell (" + std::to_string(cell / w) + ", " +
                            std::to_string(cell % w) + ") channel " + std::to_string(i % c) + " (flat index " +
                            std::to_string(i) + ")");
    }
    map.values[i] = v;
  }
  r.expect_end();
  return map;
}

inline void export_features(const DenseFeatureMap& map, const std::filesystem::path& path) {
  io::write_file(path, encode_features(map));
}

inline DenseFeatureMap import_features(const std::filesystem::path& path) {
  return decode_features(io::read_file(path), path.string());
}

}  // namespace nls::features
