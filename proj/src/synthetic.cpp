#include <algorithm>
#include <cmath>
#include <sstream>

#include "multiassign/errors.hpp"
#include "multiassign/harness.hpp"

namespace multiassign {

void DataConfig::validate(std::size_t d_model, std::size_t num_classes, std::size_t n_queries) const {
  if (grid == 0) throw ConfigError("data.grid must be positive");
  if (min_objects == 0 || min_objects > max_objects)
    throw ConfigError("data.min_objects must satisfy 1 <= min_objects <= max_objects");
  if (max_objects > n_queries) throw ConfigError("data.max_objects exceeds model.n_queries");
  if (max_objects > grid * grid) throw ConfigError("data.max_objects exceeds the number of grid cells");
  if (!(noise >= 0.0)) throw ConfigError("data.noise must be nonnegative");
  if (!(onehot_scale > 0.0)) throw ConfigError("data.onehot_scale must be positive");
  if (!(min_size > 0.0 && min_size <= max_size && max_size <= 1.0))
    throw ConfigError("data.min_size/max_size must satisfy 0 < min_size <= max_size <= 1");
  if (!(max_pair_iou >= 0.0 && max_pair_iou <= 1.0)) throw ConfigError("data.max_pair_iou must lie in [0,1]");
  if (val_scenes == 0) throw ConfigError("data.val_scenes must be positive");
  if (d_model < num_classes + 4 + 2 * grid) {
    std::ostringstream os;
    os << "model.d_model=" << d_model << " is too small for the scene encoding (needs num_classes + 4 + 2*grid = "
       << num_classes + 4 + 2 * grid << ")";
    throw ConfigError(os.str());
  }
}

SyntheticScene gen_scene(Rng& rng, std::size_t n_objects, std::size_t num_classes, double noise_level,
                         const DataConfig& data, std::size_t d_model) {
  if (n_objects == 0) throw GenerationError("gen_scene: need at least one object");
  const std::size_t g = data.grid;
  if (d_model < num_classes + 4 + 2 * g) throw GenerationError("gen_scene: d_model too small for the token layout");
  constexpr int kMaxTries = 1000;

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<BoxCXCYWH> boxes;
  std::vector<std::size_t> cells;
  for (std::size_t o = 0; o < n_objects; ++o) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxTries && !placed; ++attempt) {
      BoxCXCYWH b;
      b.w = data.min_size + (data.max_size - data.min_size) * unit(rng);
      b.h = data.min_size + (data.max_size - data.min_size) * unit(rng);
      b.cx = 0.5 * b.w + (1.0 - b.w) * unit(rng);
      b.cy = 0.5 * b.h + (1.0 - b.h) * unit(rng);
      const std::size_t col = std::min(g - 1, static_cast<std::size_t>(b.cx * static_cast<double>(g)));
      const std::size_t row = std::min(g - 1, static_cast<std::size_t>(b.cy * static_cast<double>(g)));
      const std::size_t cell = row * g + col;
      if (std::find(cells.begin(), cells.end(), cell) != cells.end()) continue;
      const BoxXYXY bx = to_xyxy(b);
      const bool overlaps = std::any_of(boxes.begin(), boxes.end(), [&](const BoxCXCYWH& other) {
        return iou(bx, to_xyxy(other)) > data.max_pair_iou;
      });
      if (overlaps) continue;
      boxes.push_back(b);
      cells.push_back(cell);
      placed = true;
    }
    if (!placed) {
      std::ostringstream os;
      os << "gen_scene: could not place object " << o + 1 << " of " << n_objects << " after " << kMaxTries
         << " tries";
      throw GenerationError(os.str());
    }
  }

  std::uniform_int_distribution<std::size_t> class_dist(0, num_classes - 1);
  SyntheticScene scene;
  for (const BoxCXCYWH& b : boxes) scene.gts.push_back({class_dist(rng), b});

  scene.features = Tensor2D(g * g, d_model);
  if (noise_level > 0.0) {
    std::normal_distribution<double> noise(0.0, noise_level);
    for (double& v : scene.features.data()) v = noise(rng);
  }
  const double gd = static_cast<double>(g);
  for (std::size_t o = 0; o < boxes.size(); ++o) {
    const BoxCXCYWH& b = boxes[o];
    const std::size_t col = cells[o] % g, row = cells[o] / g;
    auto token = scene.features.row(cells[o]);
    token[scene.gts[o].class_index] += data.onehot_scale;
    token[num_classes + 0] += b.cx * gd - static_cast<double>(col);
    token[num_classes + 1] += b.cy * gd - static_cast<double>(row);
    token[num_classes + 2] += b.w;
    token[num_classes + 3] += b.h;
    token[num_classes + 4 + col] += data.onehot_scale;
    token[num_classes + 4 + g + row] += data.onehot_scale;
  }
  return scene;
}

BoxCXCYWH decode_object_token(std::span<const double> token, std::size_t num_classes, std::size_t grid) {
  const double gd = static_cast<double>(grid);
  auto argmax = [&](std::size_t begin) {
    const auto first = token.begin() + static_cast<std::ptrdiff_t>(begin);
    return static_cast<double>(std::max_element(first, first + static_cast<std::ptrdiff_t>(grid)) - first);
  };
  const double col = argmax(num_classes + 4);
  const double row = argmax(num_classes + 4 + grid);
  return {(col + token[num_classes + 0]) / gd, (row + token[num_classes + 1]) / gd, token[num_classes + 2],
          token[num_classes + 3]};
}

SyntheticScene sample_scene(Rng& rng, const DataConfig& data, std::size_t num_classes, std::size_t d_model) {
  std::uniform_int_distribution<std::size_t> count(data.min_objects, data.max_objects);
  const std::size_t n = count(rng);
  return gen_scene(rng, n, num_classes, data.noise, data, d_model);
}

std::vector<SyntheticScene> make_validation_set(const DataConfig& data, std::size_t num_classes,
                                                std::size_t d_model) {
  Rng rng(data.val_seed);
  std::vector<SyntheticScene> scenes;
  scenes.reserve(data.val_scenes);
  for (std::size_t i = 0; i < data.val_scenes; ++i) scenes.push_back(sample_scene(rng, data, num_classes, d_model));
  return scenes;
}

}  // namespace multiassign
