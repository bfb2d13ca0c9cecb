#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "viewsketch/geometry.hpp"
#include "viewsketch/image.hpp"
#include "viewsketch/nn.hpp"

namespace viewsketch {

struct NetworkConfig {
  int image_size = 224;
  int stem_pool = 2;                              // average-pool factor applied to the sketch first
  std::vector<int> conv_channels = {32, 64, 128, 256, 256};  // 3x3 stride-2 convolutions
  int feature_dim = 512;                          // d_z
  int view_dim = 64;                              // d_v
  int shape_dim = 512;                            // d_s
  std::vector<int> view_hidden = {128, 128};      // E_v and D_v hidden widths
  std::vector<int> decoder_hidden = {1024, 2048};
  std::vector<int> shape_disc_hidden = {256, 128};
  std::vector<int> domain_disc_hidden = {256, 128};
  double max_offset = 1.0;
  double decoder_init_gain = 0.01;  // scale of the last decoder layer at init
  int template_subdivision = 3;
  double template_radius = 0.5;

  void validate() const;
};

nlohmann::json to_json(const NetworkConfig& c);
NetworkConfig network_config_from_json(const nlohmann::json& j);

// The icosphere template scaled to `template_radius`.
TriangleMesh make_template(const NetworkConfig& c);

struct LatentCodes {
  nn::Matrix z;    // 1 x d_z
  nn::Matrix z_v;  // 1 x d_v
  nn::Matrix z_s;  // 1 x d_s
};

// Batch of sketches (white background, dark strokes) as a B x size^2 matrix.
// Throws std::invalid_argument if any sketch is not image_size square.
nn::Matrix sketch_batch(std::span<const Image* const> sketches, int image_size);
// [sin el, cos el, sin az, cos az] per row.
nn::Matrix view_features(std::span<const Viewpoint> views);

class SketchModel {
 public:
  struct EncoderOut {
    nn::Var z, z_v, z_s;
  };
  struct ViewOut {
    nn::Var elevation, azimuth;  // B x 1 each, radians
  };

  SketchModel() = default;
  SketchModel(const NetworkConfig& config, std::uint64_t seed);

  SketchModel(const SketchModel&) = delete;
  SketchModel& operator=(const SketchModel&) = delete;
  SketchModel(SketchModel&&) = default;
  SketchModel& operator=(SketchModel&&) = default;

  const NetworkConfig& config() const { return config_; }
  const TriangleMesh& template_mesh() const { return template_; }
  int num_vertices() const { return template_.num_vertices(); }

  // Graph builders.
  EncoderOut encode(nn::Graph& g, nn::Var images);
  nn::Var view_encode(nn::Graph& g, nn::Var view_feats);
  ViewOut view_decode(nn::Graph& g, nn::Var code);
  nn::Var decode(nn::Graph& g, nn::Var z_s, nn::Var view_code);  // B x 3V offsets
  nn::Var shape_logits(nn::Graph& g, nn::Var offsets);
  nn::Var domain_logits(nn::Graph& g, nn::Var z);

  // Evaluation helpers (one sample, no gradient bookkeeping kept).
  LatentCodes encode(const Image& sketch);
  nn::Matrix view_encode(const Viewpoint& v);
  Viewpoint view_decode(const nn::Matrix& code);
  TriangleMesh decode(const nn::Matrix& z_s, const nn::Matrix& view_code);
  double shape_discriminate(const TriangleMesh& mesh);
  double domain_discriminate(const nn::Matrix& z);

  TriangleMesh mesh_from_offsets(const nn::Matrix& offsets, Eigen::Index row) const;

  nn::ParameterList parameters();
  nn::ParameterList encoder_parameters();
  nn::ParameterList view_autoencoder_parameters();
  nn::ParameterList decoder_parameters();
  nn::ParameterList shape_discriminator_parameters();
  nn::ParameterList domain_discriminator_parameters();

 private:
  NetworkConfig config_;
  TriangleMesh template_;
  std::vector<nn::Conv2d> convs_;
  nn::Shape conv_out_;
  nn::Linear feature_;
  nn::Linear head_v_;
  nn::Linear head_s_;
  nn::Mlp view_encoder_;
  nn::Mlp view_decoder_;
  nn::Mlp decoder_;
  nn::Mlp shape_disc_;
  nn::Mlp domain_disc_;
};

// ----------------------------------------------------------------- bundle

struct BundleInfo {
  std::string class_label;
  std::string config_hash;
  std::int64_t training_step = 0;
  nlohmann::json extra = nlohmann::json::object();
};

// Directory with `parameters.bin` and `manifest.json`.
void save_bundle(SketchModel& model, const BundleInfo& info, const std::filesystem::path& dir);
struct LoadedBundle {
  SketchModel model;
  BundleInfo info;
};
LoadedBundle load_bundle(const std::filesystem::path& dir);

}  // namespace viewsketch
