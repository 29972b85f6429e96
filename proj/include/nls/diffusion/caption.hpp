#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "nls/core/random.hpp"
#include "nls/scenes/scene.hpp"

namespace nls::diffusion {

using CaptionEmbedding = std::vector<float>;

/// Lower-cased alphanumeric runs.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  for (char ch : text) {
    if (std::isalnum(static_cast<unsigned char>(ch))) {
      current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    } else if (!current.empty()) {
      words.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

/// Every word the scene captioner can emit.
inline std::vector<std::string> scene_vocabulary() {
  std::vector<std::string> words{"a", "on", "gradient", "background"};
  for (const auto& color : scenes::kPalette) words.emplace_back(color.name);
  for (int c = 1; c < scenes::kNumClasses; ++c) words.emplace_back(scenes::class_name(static_cast<scenes::ShapeClass>(c)));
  for (auto style : scenes::kAllStyles) {
    if (style != scenes::StyleTag::kPlain) words.emplace_back(scenes::style_name(style));
  }
  return words;
}

/// Bag-of-words caption encoder: the sum of one fixed random vector per
/// token, with a single shared vector for out-of-vocabulary words.
class CaptionEncoder {
 public:
  CaptionEncoder(int dim, std::uint64_t seed, std::vector<std::string> vocabulary = scene_vocabulary())
      : dim_(dim), seed_(seed), vocabulary_(std::move(vocabulary)) {
    if (dim <= 0) throw ConfigurationError("caption dimension must be positive");
    Rng rng(derive_seed({seed, 0xc4b710eULL}));
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
    auto draw = [&] {
      std::vector<float> v(static_cast<std::size_t>(dim));
      for (auto& x : v) x = static_cast<float>(normal(rng));
      return v;
    };
    for (const auto& word : vocabulary_) {
      if (!table_.emplace(word, draw()).second) throw ConfigurationError("duplicate vocabulary word '" + word + "'");
    }
    oov_ = draw();
  }

  int dim() const { return dim_; }
  std::uint64_t seed() const { return seed_; }
  const std::vector<std::string>& vocabulary() const { return vocabulary_; }

  CaptionEmbedding encode(std::string_view text) const {
    // Sorted tokens and a double accumulator make the sum exactly order-free.
    auto words = tokenize(text);
    std::sort(words.begin(), words.end());
    std::vector<double> sum(static_cast<std::size_t>(dim_), 0.0);
    for (const auto& word : words) {
      auto it = table_.find(word);
      const auto& v = it == table_.end() ? oov_ : it->second;
      for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += v[i];
    }
    return CaptionEmbedding(sum.begin(), sum.end());
  }

 private:
  int dim_;
  std::uint64_t seed_;
  std::vector<std::string> vocabulary_;
  std::map<std::string, std::vector<float>> table_;
  std::vector<float> oov_;
};

inline CaptionEmbedding encode_caption(std::string_view text, const CaptionEncoder& encoder) {
  return encoder.encode(text);
}

}  // namespace nls::diffusion
