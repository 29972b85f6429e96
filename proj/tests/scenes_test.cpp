#include <gtest/gtest.h>

#include <map>
#include <set>

#include "nls/scenes/scene.hpp"

namespace nls::scenes {
namespace {

SceneSpec single_object(ShapeClass shape, int color, double cx, double cy, double size, double angle = 0.0) {
  SceneSpec spec;
  spec.canvas_px = 32;
  spec.background.top = {10, 20, 30};
  spec.background.bottom = {60, 50, 40};
  spec.objects.push_back(SceneObject{shape, color, cx, cy, size, angle, 0.4});
  return spec;
}

TEST(GenerateScene, SameSeedSameSpec) {
  SceneConfig config;
  EXPECT_EQ(generate_scene(42, config), generate_scene(42, config));
  EXPECT_NE(generate_scene(42, config), generate_scene(43, config));
}

TEST(GenerateScene, MaxObjectsOneGivesExactlyOne) {
  SceneConfig config;
  config.max_objects = 1;
  for (std::uint64_t seed = 0; seed < 50; ++seed) EXPECT_EQ(generate_scene(seed, config).objects.size(), 1u);
}

TEST(GenerateScene, InvariantsHoldOverManySeeds) {
  SceneConfig config;
  config.max_objects = 5;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const auto spec = generate_scene(seed, config);
    ASSERT_GE(spec.objects.size(), 1u);
    ASSERT_LE(spec.objects.size(), 5u);
    for (std::size_t i = 0; i < spec.objects.size(); ++i) {
      const auto& o = spec.objects[i];
      EXPECT_TRUE(inside_canvas(o, spec.canvas_px)) << "seed " << seed << " object " << i;
      EXPECT_GT(o.depth, 0.0);
      EXPECT_LE(o.depth, 1.0);
      if (i > 0) {
        EXPECT_LT(o.depth, spec.objects[i - 1].depth) << "seed " << seed;
      }
    }
  }
}

TEST(GenerateScene, UnsatisfiableConfigIsRejected) {
  SceneConfig config;
  config.min_size = 40;
  config.max_size = 50;
  EXPECT_THROW(generate_scene(1, config), ConfigurationError);
  config = SceneConfig{};
  config.max_objects = 6;
  EXPECT_THROW(generate_scene(1, config), ConfigurationError);
}

TEST(RenderScene, EmptySceneIsBackgroundOnly) {
  SceneSpec spec;
  spec.background.top = {30, 30, 30};
  spec.background.bottom = {90, 90, 90};
  const auto sample = render_scene(spec, 32, StyleTag::kPlain);
  for (auto v : sample.semantic_map.values) EXPECT_EQ(v, 0);
  for (auto v : sample.depth_map.values) EXPECT_EQ(v, 1.0f);
}

TEST(RenderScene, AxisAlignedSquareCoversItsArea) {
  for (int side : {4, 7, 10, 16}) {
    // Left edge on a pixel boundary.
    const double cx = 8 + side / 2.0, cy = 5 + side / 2.0;
    const auto sample = render_scene(single_object(ShapeClass::kSquare, 0, cx, cy, side), 32, StyleTag::kPlain);
    int covered = 0;
    for (auto v : sample.semantic_map.values) covered += v != 0;
    EXPECT_EQ(covered, side * side) << "side " << side;
  }
}

TEST(RenderScene, UpscaledRenderScalesArea) {
  const auto sample = render_scene(single_object(ShapeClass::kSquare, 0, 16, 16, 10), 64, StyleTag::kPlain);
  int covered = 0;
  for (auto v : sample.semantic_map.values) covered += v != 0;
  EXPECT_EQ(covered, 400);
}

TEST(RenderScene, StyleChangesAppearanceOnly) {
  SceneConfig config;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto spec = generate_scene(seed, config);
    const auto plain = render_scene(spec, 32, StyleTag::kPlain);
    for (auto style : {StyleTag::kFoggy, StyleTag::kNight, StyleTag::kWinter}) {
      const auto styled = render_scene(spec, 32, style);
      EXPECT_EQ(styled.semantic_map, plain.semantic_map);
      EXPECT_EQ(styled.depth_map, plain.depth_map);
      EXPECT_NE(styled.image, plain.image);
    }
  }
}

TEST(RenderScene, LabelsAndDepthAgree) {
  SceneConfig config;
  config.max_objects = 5;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto spec = generate_scene(seed, config);
    const auto sample = render_scene(spec, 32, StyleTag::kPlain);
    for (std::size_t i = 0; i < sample.semantic_map.size(); ++i) {
      EXPECT_EQ(sample.semantic_map.values[i] != 0, sample.depth_map.values[i] < 1.0f);
    }
  }
}

TEST(RenderScene, FrontMostObjectOwnsThePixel) {
  SceneSpec spec = single_object(ShapeClass::kSquare, 0, 16, 16, 12);
  spec.objects.front().depth = 0.8;
  spec.objects.push_back(SceneObject{ShapeClass::kCircle, 1, 16, 16, 6, 0, 0.3});
  const auto sample = render_scene(spec, 32, StyleTag::kPlain);
  EXPECT_EQ(sample.semantic_map.at(16, 16), static_cast<int>(ShapeClass::kCircle));
  EXPECT_FLOAT_EQ(sample.depth_map.at(16, 16), 0.3f);
  EXPECT_EQ(sample.semantic_map.at(11, 11), static_cast<int>(ShapeClass::kSquare));
  EXPECT_FLOAT_EQ(sample.depth_map.at(11, 11), 0.8f);
}

TEST(RenderScene, DeterministicAndValidatesResolution) {
  const auto spec = generate_scene(7, SceneConfig{});
  const auto a = render_scene(spec, 32, StyleTag::kFoggy);
  const auto b = render_scene(spec, 32, StyleTag::kFoggy);
  EXPECT_EQ(a.image, b.image);
  EXPECT_EQ(a.caption, b.caption);
  EXPECT_THROW(render_scene(spec, 15, StyleTag::kPlain), ParameterError);
}

TEST(CaptionScene, Template) {
  const auto spec = single_object(ShapeClass::kCircle, 0, 16, 16, 10);
  EXPECT_EQ(caption_scene(spec, StyleTag::kPlain), "a red circle on a gradient background");
  EXPECT_EQ(caption_scene(spec, StyleTag::kNight), "a red circle on a gradient background, night");
  auto two = spec;
  two.objects.push_back(SceneObject{ShapeClass::kTriangle, 2, 10, 10, 8, 30, 0.2});
  EXPECT_EQ(caption_scene(two, StyleTag::kPlain), "a red circle, a blue triangle on a gradient background");
}

TEST(CaptionScene, DifferentObjectListsNeverCollide) {
  SceneConfig config;
  std::map<std::string, std::vector<std::pair<int, int>>> seen;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const auto spec = generate_scene(seed, config);
    std::vector<std::pair<int, int>> objects;
    for (const auto& o : spec.objects) objects.emplace_back(static_cast<int>(o.shape), o.color);
    const auto caption = caption_scene(spec, StyleTag::kPlain);
    auto [it, inserted] = seen.emplace(caption, objects);
    if (!inserted) {
      EXPECT_EQ(it->second, objects) << caption;
    }
  }
}

}  // namespace
}  // namespace nls::scenes
