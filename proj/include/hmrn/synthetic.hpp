#pragma once

#include "hmrn/dataset.hpp"

#include <array>
#include <cstdio>
#include <random>

namespace hmrn {

// Scenes of K attributed regions. Region i carries (color, object, position);
// its feature row is the concatenation of three fixed random basis vectors,
// one per attribute, plus i.i.d. Gaussian noise. Query j describes region j.
struct SyntheticConfig {
  std::size_t num_scenes = 100;
  std::size_t K = 8;
  std::size_t N = 8;
  std::size_t X = 48;  // divisible by 3: one block per attribute
  std::size_t num_colors = 5;
  std::size_t num_objects = 8;
  std::size_t num_positions = 4;
  double noise_sigma = 0.1;
  std::uint64_t seed = 1;
  // Seeds the attribute basis; splits that should share a feature space
  // must share this value.
  std::uint64_t basis_seed = 0x5eed;
  Split split = Split::Train;
  std::string id_prefix = "img";

  void validate() const {
    require(num_scenes >= 1, "num_scenes must be >= 1");
    require(K >= 1, "K must be >= 1");
    require(N >= 1, "N must be >= 1");
    require(N <= K, "N must not exceed K (each query describes a distinct region)");
    require(X >= 3 && X % 3 == 0, "X must be a positive multiple of 3");
    require(noise_sigma >= 0.0, "noise sigma must be >= 0");
    require(num_colors >= 1 && num_objects >= 1 && num_positions >= 1,
            "attribute counts must be >= 1");
  }
};

namespace synthetic_words {
inline constexpr std::array<const char*, 10> kColors{
    "red", "green", "blue", "yellow", "white", "black", "orange", "purple", "brown", "gray"};
inline constexpr std::array<const char*, 16> kObjects{
    "mouse", "desk", "cup", "lamp", "chair", "book", "phone", "bottle",
    "clock", "plant", "shoe", "bag", "ball", "hat", "vase", "pillow"};
inline constexpr std::array<const char*, 8> kPositions{
    "left", "right", "top", "bottom", "center", "corner", "edge", "middle"};
// Box centers (fractions of a 640x480 frame) for each position word.
inline constexpr std::array<std::array<double, 2>, 8> kPositionCenters{{
    {0.2, 0.5}, {0.8, 0.5}, {0.5, 0.2}, {0.5, 0.8}, {0.5, 0.5}, {0.15, 0.15}, {0.85, 0.85}, {0.5, 0.6}}};
}  // namespace synthetic_words

struct SceneRegion {
  std::size_t color = 0, object = 0, position = 0;
};

inline std::string synthetic_caption(const SceneRegion& r) {
  using namespace synthetic_words;
  return std::string(kColors[r.color]) + " " + kObjects[r.object] + " at " + kPositions[r.position];
}

// Vocabulary covering every caption the generator can produce for `cfg`.
inline Vocabulary synthetic_vocabulary(const SyntheticConfig& cfg) {
  std::vector<std::string> corpus;
  for (std::size_t c = 0; c < cfg.num_colors; ++c)
    for (std::size_t o = 0; o < cfg.num_objects; ++o)
      for (std::size_t p = 0; p < cfg.num_positions; ++p) corpus.push_back(synthetic_caption({c, o, p}));
  return build_vocabulary(corpus, 1);
}

struct SyntheticData {
  Dataset dataset;
  Vocabulary vocab;
  std::vector<std::vector<SceneRegion>> scenes;  // ground-truth attributes
};

inline SyntheticData generate_synthetic_dataset(const SyntheticConfig& cfg) {
  using namespace synthetic_words;
  cfg.validate();
  require(cfg.num_colors <= kColors.size() && cfg.num_objects <= kObjects.size() &&
              cfg.num_positions <= kPositions.size(),
          "attribute counts exceed the synthetic word lists");

  const Index block = static_cast<Index>(cfg.X / 3);
  std::mt19937_64 basis_rng(cfg.basis_seed);
  std::normal_distribution<double> basis_dist(0.0, 1.0 / std::sqrt(static_cast<double>(block)));
  auto make_basis = [&](std::size_t count) {
    Matrix b(static_cast<Index>(count), block);
    for (Index i = 0; i < b.rows(); ++i)
      for (Index j = 0; j < b.cols(); ++j) b(i, j) = basis_dist(basis_rng);
    return b;
  };
  // Always draw the full word lists so that the basis for a given word does
  // not depend on how many attribute values are enabled.
  const Matrix color_basis = make_basis(kColors.size());
  const Matrix object_basis = make_basis(kObjects.size());
  const Matrix position_basis = make_basis(kPositions.size());

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> jitter(-0.05, 0.05);
  auto pick = [&](std::size_t n) { return static_cast<std::size_t>(rng() % n); };

  SyntheticData out;
  out.vocab = synthetic_vocabulary(cfg);
  out.dataset.split = cfg.split;
  const int width = std::max<int>(6, static_cast<int>(std::to_string(cfg.num_scenes - 1).size()));
  for (std::size_t s = 0; s < cfg.num_scenes; ++s) {
    std::vector<SceneRegion> scene(cfg.K);
    for (auto& r : scene) r = {pick(cfg.num_colors), pick(cfg.num_objects), pick(cfg.num_positions)};

    Record rec;
    char idbuf[64];
    std::snprintf(idbuf, sizeof(idbuf), "%s_%0*zu", cfg.id_prefix.c_str(), width, s);
    rec.regions.image_id = idbuf;
    rec.queries.image_id = idbuf;
    rec.regions.features.resize(static_cast<Index>(cfg.K), static_cast<Index>(cfg.X));
    for (std::size_t i = 0; i < cfg.K; ++i) {
      const auto row = static_cast<Index>(i);
      auto& f = rec.regions.features;
      f.row(row).segment(0, block) = color_basis.row(static_cast<Index>(scene[i].color));
      f.row(row).segment(block, block) = object_basis.row(static_cast<Index>(scene[i].object));
      f.row(row).segment(2 * block, block) = position_basis.row(static_cast<Index>(scene[i].position));
      for (Index j = 0; j < f.cols(); ++j) {
        double v = f(row, j);
        if (cfg.noise_sigma > 0.0) v += cfg.noise_sigma * noise(rng);
        // Stored at blob precision so in-memory and on-disk datasets agree.
        f(row, j) = static_cast<double>(static_cast<float>(v));
      }
      const auto& c = kPositionCenters[scene[i].position];
      const double w = 640.0 * (0.12 + 0.01 * static_cast<double>(scene[i].object % 5));
      const double h = 480.0 * (0.12 + 0.01 * static_cast<double>(scene[i].object % 3));
      const double cx = 640.0 * (c[0] + jitter(rng));
      const double cy = 480.0 * (c[1] + jitter(rng));
      rec.regions.boxes.push_back({std::round(cx - w / 2), std::round(cy - h / 2), std::round(w), std::round(h)});
    }
    for (std::size_t j = 0; j < cfg.N; ++j) {
      auto caption = synthetic_caption(scene[j]);
      rec.queries.queries.push_back(tokenize_query(caption, out.vocab).ids);
      rec.queries.captions.push_back(std::move(caption));
    }
    out.dataset.records.push_back(std::move(rec));
    out.scenes.push_back(std::move(scene));
  }
  return out;
}

}  // namespace hmrn
