#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "viewsketch/data.hpp"
#include "viewsketch/networks.hpp"
#include "viewsketch/training.hpp"

namespace toy {

namespace vs = viewsketch;

inline vs::NetworkConfig tiny_network(int image_size = 32) {
  vs::NetworkConfig c;
  c.image_size = image_size;
  c.stem_pool = 1;
  c.conv_channels = {8, 16, 16};
  c.feature_dim = 32;
  c.view_dim = 8;
  c.shape_dim = 32;
  c.view_hidden = {32};
  c.decoder_hidden = {64};
  c.shape_disc_hidden = {16};
  c.domain_disc_hidden = {16};
  c.template_subdivision = 1;
  return c;
}

inline vs::TrainingConfig tiny_training(int image_size = 32) {
  vs::TrainingConfig c;
  c.network = tiny_network(image_size);
  c.learning_rate = 1e-3f;
  c.batch_size = 4;
  c.epochs = 2;
  c.pyramid_levels = 2;
  c.view_reconstruction_batch = 8;
  c.checkpoint_every = 1;
  return c;
}

// Records of `objects` toy chairs with `views` views each, rendered in memory.
// Meshes are written under `mesh_dir` when given.
inline std::vector<vs::SampleRecord> chair_records(int objects, int views, int size, int levels, std::uint64_t seed,
                                                   const std::filesystem::path& mesh_dir = {}) {
  vs::Rng rng(seed);
  vs::RenderOptions opts;
  opts.image_size = opts.silhouette_size = size;
  const auto sampler = vs::ViewSampler::uniform_range(opts.view_range);
  std::vector<vs::SampleRecord> out;
  for (int o = 0; o < objects; ++o) {
    const auto mesh = vs::make_toy_chair(rng);
    const std::string id = "obj" + std::to_string(o);
    std::filesystem::path mp;
    if (!mesh_dir.empty()) {
      std::filesystem::create_directories(mesh_dir);
      mp = mesh_dir / (id + ".obj");
      vs::export_mesh(mesh, mp);
    }
    for (int v = 0; v < views; ++v) {
      vs::SampleRecord r;
      r.view = sampler.sample(rng);
      const auto rv = vs::render_training_view(mesh, r.view, opts);
      r.sketch = rv.sketch;
      r.pyramid = vs::build_pyramid(rv.silhouette, levels);
      r.class_label = "chair";
      r.object_id = id;
      r.view_index = v;
      if (!mp.empty()) r.mesh_path = mp;
      out.push_back(std::move(r));
    }
  }
  return out;
}

inline std::filesystem::path scratch(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("vs_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace toy
