#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "nls/core/binary_io.hpp"
#include "nls/core/error.hpp"
#include "nls/core/image.hpp"
#include "nls/features/extraction.hpp"
#include "nls/pca/projector.hpp"

namespace nls::layout {

/// Raw (un-normalized) H x W x N grid, row-major.
struct LayoutGrid {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> values;

  LayoutGrid() = default;
  LayoutGrid(int h, int w, int c) : height(h), width(w), channels(c), values(static_cast<std::size_t>(h) * w * c) {}

  double& at(int y, int x, int c) { return values[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  double at(int y, int x, int c) const { return values[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
};

struct ChannelStats {
  float shift = 0.0f;
  float scale = 1.0f;

  friend bool operator==(const ChannelStats&, const ChannelStats&) = default;
};

struct NeuralLayout {
  int height_px = 0;
  int width_px = 0;
  int n_components = 0;
  std::vector<float> values;  // H x W x N, each in [-1, 1]
  std::vector<ChannelStats> normalization;
  std::string projector_id;

  float at(int y, int x, int c) const {
    return values[(static_cast<std::size_t>(y) * width_px + x) * n_components + c];
  }

  friend bool operator==(const NeuralLayout&, const NeuralLayout&) = default;
};

/// Pixel (y, x) copies cell (floor(y h_p / H), floor(x w_p / W)).
inline LayoutGrid upsample_nearest(const pca::CoefficientMap& coeffs, int height_px, int width_px) {
  if (height_px <= 0 || width_px <= 0) {
    throw ParameterError("upsample target must be non-empty, got " + std::to_string(height_px) + "x" +
                         std::to_string(width_px));
  }
  if (height_px < coeffs.height_patches || width_px < coeffs.width_patches) {
    throw ParameterError("upsample target " + std::to_string(height_px) + "x" + std::to_string(width_px) +
                         " is smaller than the source grid " + std::to_string(coeffs.height_patches) + "x" +
                         std::to_string(coeffs.width_patches));
  }
  LayoutGrid out(height_px, width_px, coeffs.n_components);
  for (int y = 0; y < height_px; ++y) {
    const int sy = static_cast<int>(static_cast<std::int64_t>(y) * coeffs.height_patches / height_px);
    for (int x = 0; x < width_px; ++x) {
      const int sx = static_cast<int>(static_cast<std::int64_t>(x) * coeffs.width_patches / width_px);
      const auto src = coeffs.cell(sy, sx);
      std::copy(src.begin(), src.end(), &out.at(y, x, 0));
    }
  }
  return out;
}

namespace detail {

// Linear interpolation between order statistics at rank q (n - 1).
inline double percentile(std::vector<double>& v, double q) {
  const double rank = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const auto hi = std::min(lo + 1, v.size() - 1);
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(lo), v.end());
  const double a = v[lo];
  double b = a;
  if (hi != lo) b = *std::min_element(v.begin() + static_cast<std::ptrdiff_t>(hi), v.end());
  return a + (rank - static_cast<double>(lo)) * (b - a);
}

}  // namespace detail

inline constexpr double kLowPercentile = 0.01;
inline constexpr double kHighPercentile = 0.99;

/// Per-channel shift = midpoint and scale = half-range of the 1st/99th
/// percentiles over every pixel of the corpus. A zero range gets scale 1.
inline std::vector<ChannelStats> compute_layout_stats(std::span<const LayoutGrid> corpus) {
  if (corpus.empty()) throw ParameterError("cannot compute layout statistics from an empty corpus");
  const int channels = corpus.front().channels;
  std::vector<ChannelStats> stats(static_cast<std::size_t>(channels));
  std::vector<double> column;
  for (int c = 0; c < channels; ++c) {
    column.clear();
    for (const auto& grid : corpus) {
      if (grid.channels != channels) throw ConsistencyError("layout grids disagree on channel count");
      for (std::size_t i = static_cast<std::size_t>(c); i < grid.values.size(); i += static_cast<std::size_t>(channels)) {
        column.push_back(grid.values[i]);
      }
    }
    if (column.empty()) throw ParameterError("layout corpus has no pixels");
    const double lo = detail::percentile(column, kLowPercentile);
    const double hi = detail::percentile(column, kHighPercentile);
    const double half = 0.5 * (hi - lo);
    stats[static_cast<std::size_t>(c)] = {static_cast<float>(0.5 * (hi + lo)), half > 0 ? static_cast<float>(half) : 1.0f};
  }
  return stats;
}

/// clamp((raw - shift) / scale, -1, 1) per channel.
inline LayoutGrid normalize_layout(const LayoutGrid& raw, std::span<const ChannelStats> stats) {
  if (static_cast<int>(stats.size()) != raw.channels) {
    throw ShapeError("got " + std::to_string(stats.size()) + " normalization pairs for " +
                     std::to_string(raw.channels) + " channels");
  }
  for (std::size_t c = 0; c < stats.size(); ++c) {
    if (!(stats[c].scale > 0)) throw ParameterError("channel " + std::to_string(c) + " has non-positive scale");
  }
  LayoutGrid out = raw;
  const auto channels = static_cast<std::size_t>(raw.channels);
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    const auto& s = stats[i % channels];
    out.values[i] = std::clamp((raw.values[i] - s.shift) / s.scale, -1.0, 1.0);
  }
  return out;
}

inline NeuralLayout make_layout(const LayoutGrid& normalized, std::vector<ChannelStats> stats, std::string projector_id) {
  NeuralLayout layout;
  layout.height_px = normalized.height;
  layout.width_px = normalized.width;
  layout.n_components = normalized.channels;
  layout.values.resize(normalized.values.size());
  std::transform(normalized.values.begin(), normalized.values.end(), layout.values.begin(),
                 [](double v) { return static_cast<float>(v); });
  layout.normalization = std::move(stats);
  layout.projector_id = std::move(projector_id);
  return layout;
}

/// Coefficients at image resolution, before normalization.
template <features::FeatureBackend Backend>
LayoutGrid raw_layout(const Image& image, const features::BackboneConvention& convention, const Backend& backend,
                      const pca::PcaProjector& projector, int height_px, int width_px) {
  const std::string source = features::convention_source_id(backend.source_id(), convention);
  if (source != projector.source_id) {
    throw ConsistencyError("projector was fitted on '" + projector.source_id + "' but the backbone produces '" +
                           source + "'");
  }
  const auto features = features::extract_dense_features(image, convention, backend);
  return upsample_nearest(pca::project(features, projector), height_px, width_px);
}

/// extract -> project -> upsample -> normalize.
template <features::FeatureBackend Backend>
NeuralLayout build_neural_layout(const Image& image, const features::BackboneConvention& convention,
                                 const Backend& backend, const pca::PcaProjector& projector,
                                 std::span<const ChannelStats> stats, int height_px, int width_px) {
  const auto raw = raw_layout(image, convention, backend, projector, height_px, width_px);
  return make_layout(normalize_layout(raw, stats), {stats.begin(), stats.end()}, projector.id());
}

/// Channels 0-2 min-max scaled to [0, 255] independently (constant channels
/// become 128); grayscale of channel 0 when N < 3.
inline Image layout_to_rgb(const NeuralLayout& layout) {
  Image out(layout.width_px, layout.height_px);
  const int shown = layout.n_components >= 3 ? 3 : 1;
  for (int c = 0; c < shown; ++c) {
    float lo = 0, hi = 0;
    bool first = true;
    for (int y = 0; y < layout.height_px; ++y) {
      for (int x = 0; x < layout.width_px; ++x) {
        const float v = layout.at(y, x, c);
        lo = first ? v : std::min(lo, v);
        hi = first ? v : std::max(hi, v);
        first = false;
      }
    }
    for (int y = 0; y < layout.height_px; ++y) {
      for (int x = 0; x < layout.width_px; ++x) {
        std::uint8_t byte = 128;
        if (hi > lo) byte = static_cast<std::uint8_t>(std::lround(255.0 * (layout.at(y, x, c) - lo) / (hi - lo)));
        auto* px = out.pixel(y, x);
        if (shown == 1) {
          px[0] = px[1] = px[2] = byte;
        } else {
          px[c] = byte;
        }
      }
    }
  }
  return out;
}

inline constexpr char kLayoutMagic[] = "NLLO";
inline constexpr std::uint16_t kLayoutVersion = 1;

inline std::string encode_layout(const NeuralLayout& layout) {
  io::ByteWriter w;
  w.magic(kLayoutMagic);
  w.u16(kLayoutVersion);
  w.u32(static_cast<std::uint32_t>(layout.height_px));
  w.u32(static_cast<std::uint32_t>(layout.width_px));
  w.u32(static_cast<std::uint32_t>(layout.n_components));
  w.str(layout.projector_id);
  for (const auto& s : layout.normalization) {
    w.f32(s.shift);
    w.f32(s.scale);
  }
  w.f32s(layout.values);
  return w.bytes();
}

inline NeuralLayout decode_layout(std::string_view bytes, const std::string& context = "layout file") {
  io::ByteReader r(bytes, context);
  r.expect_magic(kLayoutMagic);
  const auto version = r.u16("version");
  if (version != kLayoutVersion) throw FormatError(context + ": unsupported version " + std::to_string(version));
  NeuralLayout layout;
  layout.height_px = static_cast<int>(r.u32("H"));
  layout.width_px = static_cast<int>(r.u32("W"));
  layout.n_components = static_cast<int>(r.u32("N"));
  if (layout.height_px <= 0 || layout.width_px <= 0 || layout.n_components <= 0) {
    throw FormatError(context + ": empty layout dimensions");
  }
  layout.projector_id = r.str("projector_id");
  const std::uint64_t count = std::uint64_t(layout.height_px) * layout.width_px * layout.n_components;
  if (r.remaining() != (2 * std::uint64_t(layout.n_components) + count) * 4) {
    throw FormatError(context + ": payload size does not match header");
  }
  layout.normalization.resize(static_cast<std::size_t>(layout.n_components));
  for (auto& s : layout.normalization) {
    s.shift = r.f32("shift");
    s.scale = r.f32("scale");
    if (!std::isfinite(s.shift) || !(s.scale > 0) || !std::isfinite(s.scale)) {
      throw ValidationError(context + ": invalid normalization pair");
    }
  }
  layout.values.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const float v = r.f32("values");
    if (!std::isfinite(v) || v < -1.0f || v > 1.0f) {
      const auto cell = i / static_cast<std::size_t>(layout.n_components);
      throw ValidationError(context + ": value out of range at pixel (" + std::to_string(cell / layout.width_px) +
                            ", " + std::to_string(cell % layout.width_px) + ") channel " +
                            std::to_string(i % layout.n_components));
    }
    layout.values[i] = v;
  }
  r.expect_end();
  return layout;
}

inline void save_layout(const NeuralLayout& layout, const std::filesystem::path& path) {
  io::write_file(path, encode_layout(layout));
}

inline NeuralLayout load_layout(const std::filesystem::path& path) { return decode_layout(io::read_file(path), path.string()); }

}  // namespace nls::layout
