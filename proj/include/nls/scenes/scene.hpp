#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "nls/core/error.hpp"
#include "nls/core/image.hpp"
#include "nls/core/random.hpp"

// Procedural scenes with free ground truth: flat shapes over a vertical
// gradient, rasterised with a hard coverage test shared by the RGB, class and
// depth passes.
namespace nls::scenes {

enum class ShapeClass : std::uint8_t { kCircle = 1, kSquare = 2, kTriangle = 3 };

/// Background plus the three shape classes.
inline constexpr int kNumClasses = 4;

inline std::string_view class_name(ShapeClass c) {
  switch (c) {
    case ShapeClass::kCircle: return "circle";
    case ShapeClass::kSquare: return "square";
    case ShapeClass::kTriangle: return "triangle";
  }
  return "?";
}

struct NamedColor {
  std::string_view name;
  std::array<std::uint8_t, 3> rgb;
};

inline constexpr std::array<NamedColor, 8> kPalette{{
    {"red", {220, 40, 40}},
    {"green", {40, 190, 60}},
    {"blue", {60, 100, 240}},
    {"yellow", {235, 215, 40}},
    {"magenta", {210, 60, 210}},
    {"cyan", {40, 210, 220}},
    {"orange", {245, 145, 30}},
    {"white", {240, 240, 240}},
}};

/// Colours used for indexed semantic-map PNGs.
inline constexpr std::array<std::array<std::uint8_t, 3>, kNumClasses> kClassPalette{{
    {0, 0, 0}, {230, 25, 75}, {60, 180, 75}, {0, 130, 200}}};

enum class StyleTag { kPlain, kFoggy, kNight, kWinter };

inline constexpr std::array<StyleTag, 4> kAllStyles{StyleTag::kPlain, StyleTag::kFoggy, StyleTag::kNight,
                                                    StyleTag::kWinter};

inline std::string_view style_name(StyleTag s) {
  switch (s) {
    case StyleTag::kPlain: return "plain";
    case StyleTag::kFoggy: return "foggy";
    case StyleTag::kNight: return "night";
    case StyleTag::kWinter: return "winter";
  }
  return "?";
}

inline StyleTag parse_style(std::string_view name) {
  for (auto s : kAllStyles) {
    if (style_name(s) == name) return s;
  }
  throw ParameterError("unknown style tag '" + std::string(name) + "'");
}

struct SceneObject {
  ShapeClass shape = ShapeClass::kCircle;
  int color = 0;  // index into kPalette
  double center_x = 0;
  double center_y = 0;
  double size = 0;  // circle diameter, square side, triangle side
  double orientation_deg = 0;
  double depth = 0.5;  // (0, 1); smaller is nearer

  friend bool operator==(const SceneObject&, const SceneObject&) = default;
};

struct Background {
  std::string style_id = "gradient";
  std::array<std::uint8_t, 3> top{};
  std::array<std::uint8_t, 3> bottom{};

  friend bool operator==(const Background&, const Background&) = default;
};

/// Objects are stored far-to-near, i.e. in painter's order.
struct SceneSpec {
  int canvas_px = 32;
  Background background;
  std::vector<SceneObject> objects;

  friend bool operator==(const SceneSpec&, const SceneSpec&) = default;
};

struct SceneConfig {
  int canvas_px = 32;
  int min_objects = 1;
  int max_objects = 3;
  double min_size = 9;
  double max_size = 16;
  int max_attempts = 1000;

  void validate() const {
    if (canvas_px < 1) throw ConfigurationError("canvas_px must be positive");
    if (min_objects < 1 || max_objects > 5 || min_objects > max_objects) {
      throw ConfigurationError("object count bounds must satisfy 1 <= min <= max <= 5, got [" +
                               std::to_string(min_objects) + ", " + std::to_string(max_objects) + "]");
    }
    if (!(min_size > 0) || min_size > max_size) {
      throw ConfigurationError("object size bounds must satisfy 0 < min <= max");
    }
    if (min_size > canvas_px) {
      throw ConfigurationError("object min size " + std::to_string(min_size) + " exceeds canvas " +
                               std::to_string(canvas_px));
    }
  }
};

struct SceneSample {
  Image image;
  ClassMap semantic_map;
  DepthMap depth_map;
  std::string caption;
  StyleTag style_tag = StyleTag::kPlain;
};

namespace detail {

struct Vec2 {
  double x, y;
};

inline std::array<Vec2, 3> triangle_vertices(double side) {
  const double circum = side / std::sqrt(3.0);
  return {{{0.0, -circum}, {-side / 2, circum / 2}, {side / 2, circum / 2}}};
}

inline Vec2 to_object_frame(const SceneObject& o, double px, double py) {
  const double th = o.orientation_deg * std::numbers::pi / 180.0;
  const double dx = px - o.center_x;
  const double dy = py - o.center_y;
  const double c = std::cos(th), s = std::sin(th);
  return {c * dx + s * dy, -s * dx + c * dy};
}

inline double edge(Vec2 a, Vec2 b, Vec2 p) { return (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x); }

// Half extents of the axis-aligned bounding box around the centre.
inline Vec2 half_extent(const SceneObject& o) {
  const double th = o.orientation_deg * std::numbers::pi / 180.0;
  const double c = std::cos(th), s = std::sin(th);
  switch (o.shape) {
    case ShapeClass::kCircle: return {o.size / 2, o.size / 2};
    case ShapeClass::kSquare: {
      const double h = o.size / 2 * (std::abs(c) + std::abs(s));
      return {h, h};
    }
    case ShapeClass::kTriangle: {
      Vec2 ext{0, 0};
      for (auto v : triangle_vertices(o.size)) {
        // object frame -> canvas frame is rotation by +th
        const double x = c * v.x - s * v.y;
        const double y = s * v.x + c * v.y;
        ext.x = std::max(ext.x, std::abs(x));
        ext.y = std::max(ext.y, std::abs(y));
      }
      return ext;
    }
  }
  return {0, 0};
}

inline std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

}  // namespace detail

/// Hard coverage test in canvas coordinates. Squares use half-open bounds so an
/// axis-aligned square of integer side on the pixel grid covers exactly side^2
/// pixel centres.
inline bool covers(const SceneObject& o, double px, double py) {
  const auto p = detail::to_object_frame(o, px, py);
  switch (o.shape) {
    case ShapeClass::kCircle: {
      const double r = o.size / 2;
      return p.x * p.x + p.y * p.y < r * r;
    }
    case ShapeClass::kSquare: {
      const double h = o.size / 2;
      return p.x >= -h && p.x < h && p.y >= -h && p.y < h;
    }
    case ShapeClass::kTriangle: {
      const auto v = detail::triangle_vertices(o.size);
      const double e0 = detail::edge(v[0], v[1], p);
      const double e1 = detail::edge(v[1], v[2], p);
      const double e2 = detail::edge(v[2], v[0], p);
      return (e0 <= 0 && e1 <= 0 && e2 <= 0) || (e0 >= 0 && e1 >= 0 && e2 >= 0);
    }
  }
  return false;
}

inline bool inside_canvas(const SceneObject& o, int canvas_px) {
  const auto h = detail::half_extent(o);
  constexpr double kEps = 1e-9;
  return o.center_x - h.x >= -kEps && o.center_x + h.x <= canvas_px + kEps && o.center_y - h.y >= -kEps &&
         o.center_y + h.y <= canvas_px + kEps;
}

/// Deterministic in (seed, config). Depth follows apparent size (larger objects
/// are nearer) with a small jitter, and objects are returned far-to-near.
inline SceneSpec generate_scene(std::uint64_t seed, const SceneConfig& config) {
  config.validate();
  Rng rng(derive_seed({seed, 0x5ce7e5ULL}));
  auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  auto uniform_int = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

  SceneSpec spec;
  spec.canvas_px = config.canvas_px;
  for (int c = 0; c < 3; ++c) {
    spec.background.top[c] = static_cast<std::uint8_t>(uniform_int(20, 95));
    spec.background.bottom[c] = static_cast<std::uint8_t>(uniform_int(20, 95));
  }

  const int count = uniform_int(config.min_objects, config.max_objects);
  for (int i = 0; i < count; ++i) {
    SceneObject o;
    bool placed = false;
    for (int attempt = 0; attempt < config.max_attempts && !placed; ++attempt) {
      o.shape = static_cast<ShapeClass>(uniform_int(1, 3));
      o.color = uniform_int(0, static_cast<int>(kPalette.size()) - 1);
      o.size = uniform(config.min_size, config.max_size);
      o.orientation_deg = o.shape == ShapeClass::kCircle ? 0.0 : uniform(0.0, 360.0);
      const auto h = detail::half_extent(o);
      if (2 * h.x > config.canvas_px || 2 * h.y > config.canvas_px) continue;
      o.center_x = uniform(h.x, config.canvas_px - h.x);
      o.center_y = uniform(h.y, config.canvas_px - h.y);
      placed = inside_canvas(o, config.canvas_px);
    }
    if (!placed) {
      throw ConfigurationError("could not place object " + std::to_string(i) + " inside a " +
                               std::to_string(config.canvas_px) + " px canvas");
    }
    const double span = config.max_size - config.min_size;
    const double t = span > 0 ? (config.max_size - o.size) / span : 0.5;
    o.depth = std::clamp(0.2 + 0.7 * t + uniform(-0.03, 0.03), 0.05, 0.95);
    spec.objects.push_back(o);
  }

  std::stable_sort(spec.objects.begin(), spec.objects.end(),
                   [](const SceneObject& a, const SceneObject& b) { return a.depth > b.depth; });
  for (std::size_t i = 1; i < spec.objects.size(); ++i) {
    if (spec.objects[i].depth >= spec.objects[i - 1].depth) {
      spec.objects[i].depth = spec.objects[i - 1].depth - 1e-3;
    }
  }
  return spec;
}

/// Object albedo darkened with distance.
inline std::array<double, 3> shaded_color(const SceneObject& o) {
  const double shade = 1.0 - 0.45 * o.depth;
  const auto& base = kPalette[static_cast<std::size_t>(o.color)].rgb;
  return {base[0] * shade, base[1] * shade, base[2] * shade};
}

/// "a {color} {class}[, a {color} {class}...] on a {background} background[, {style}]"
inline std::string caption_scene(const SceneSpec& spec, StyleTag style) {
  std::string caption;
  for (std::size_t i = 0; i < spec.objects.size(); ++i) {
    const auto& o = spec.objects[i];
    if (i > 0) caption += ", ";
    caption += "a ";
    caption += kPalette[static_cast<std::size_t>(o.color)].name;
    caption += ' ';
    caption += class_name(o.shape);
  }
  caption += caption.empty() ? "a " : " on a ";
  caption += spec.background.style_id + " background";
  if (style != StyleTag::kPlain) {
    caption += ", ";
    caption += style_name(style);
  }
  return caption;
}

/// Painter's-algorithm rasterisation. Class and depth maps come from the same
/// coverage test as the colour pass; the style only changes appearance.
inline SceneSample render_scene(const SceneSpec& spec, int resolution, StyleTag style) {
  if (resolution < 16) throw ParameterError("resolution must be >= 16, got " + std::to_string(resolution));
  SceneSample out;
  out.style_tag = style;
  out.image = Image(resolution, resolution);
  out.semantic_map = ClassMap(resolution, resolution, 0);
  out.depth_map = DepthMap(resolution, resolution, 1.0f);
  const double scale = static_cast<double>(spec.canvas_px) / resolution;

  std::vector<std::array<double, 3>> color(static_cast<std::size_t>(resolution) * resolution);
  for (int y = 0; y < resolution; ++y) {
    const double t = (y + 0.5) / resolution;
    for (int x = 0; x < resolution; ++x) {
      auto& c = color[static_cast<std::size_t>(y) * resolution + x];
      for (int k = 0; k < 3; ++k) c[k] = spec.background.top[k] * (1 - t) + spec.background.bottom[k] * t;
    }
  }
  for (const auto& o : spec.objects) {
    const auto rgb = shaded_color(o);
    for (int y = 0; y < resolution; ++y) {
      for (int x = 0; x < resolution; ++x) {
        if (!covers(o, (x + 0.5) * scale, (y + 0.5) * scale)) continue;
        color[static_cast<std::size_t>(y) * resolution + x] = rgb;
        out.semantic_map.at(y, x) = static_cast<std::uint8_t>(o.shape);
        out.depth_map.at(y, x) = static_cast<float>(o.depth);
      }
    }
  }

  for (int y = 0; y < resolution; ++y) {
    for (int x = 0; x < resolution; ++x) {
      auto c = color[static_cast<std::size_t>(y) * resolution + x];
      const double depth = out.depth_map.at(y, x);
      switch (style) {
        case StyleTag::kPlain: break;
        case StyleTag::kFoggy:
          for (auto& v : c) v = v + (190.0 - v) * 0.75 * depth;
          break;
        case StyleTag::kNight:
          for (auto& v : c) v *= 0.3;
          c[2] += 35.0;
          break;
        case StyleTag::kWinter: {
          const double lum = 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2];
          for (auto& v : c) v = v + (lum - v) * 0.6;
          if (out.semantic_map.at(y, x) == 0 && y >= resolution * 3 / 4) c = {235.0, 235.0, 240.0};
          break;
        }
      }
      auto* px = out.image.pixel(y, x);
      for (int k = 0; k < 3; ++k) px[k] = detail::to_byte(c[k]);
    }
  }
  out.caption = caption_scene(spec, style);
  return out;
}

}  // namespace nls::scenes
