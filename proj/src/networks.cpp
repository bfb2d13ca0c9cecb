#include "viewsketch/networks.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "viewsketch/hash.hpp"

namespace viewsketch {

using nn::Matrix;
using nn::Var;

void NetworkConfig::validate() const {
  auto positive = [](int v, const char* what) {
    if (v <= 0) throw std::invalid_argument(std::string("network config: ") + what + " must be positive");
  };
  positive(image_size, "image_size");
  positive(stem_pool, "stem_pool");
  positive(feature_dim, "feature_dim");
  positive(view_dim, "view_dim");
  positive(shape_dim, "shape_dim");
  if (image_size % stem_pool != 0) throw std::invalid_argument("network config: stem_pool must divide image_size");
  if (conv_channels.empty()) throw std::invalid_argument("network config: need at least one conv layer");
  if (!(max_offset > 0)) throw std::invalid_argument("network config: max_offset must be positive");
  if (template_subdivision < 0) throw std::invalid_argument("network config: template_subdivision must be >= 0");
  if (!(template_radius > 0)) throw std::invalid_argument("network config: template_radius must be positive");
}

nlohmann::json to_json(const NetworkConfig& c) {
  return {{"image_size", c.image_size},
          {"stem_pool", c.stem_pool},
          {"conv_channels", c.conv_channels},
          {"feature_dim", c.feature_dim},
          {"view_dim", c.view_dim},
          {"shape_dim", c.shape_dim},
          {"view_hidden", c.view_hidden},
          {"decoder_hidden", c.decoder_hidden},
          {"shape_disc_hidden", c.shape_disc_hidden},
          {"domain_disc_hidden", c.domain_disc_hidden},
          {"max_offset", c.max_offset},
          {"decoder_init_gain", c.decoder_init_gain},
          {"template_subdivision", c.template_subdivision},
          {"template_radius", c.template_radius}};
}

NetworkConfig network_config_from_json(const nlohmann::json& j) {
  NetworkConfig c;
  auto get = [&j](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("image_size", c.image_size);
  get("stem_pool", c.stem_pool);
  get("conv_channels", c.conv_channels);
  get("feature_dim", c.feature_dim);
  get("view_dim", c.view_dim);
  get("shape_dim", c.shape_dim);
  get("view_hidden", c.view_hidden);
  get("decoder_hidden", c.decoder_hidden);
  get("shape_disc_hidden", c.shape_disc_hidden);
  get("domain_disc_hidden", c.domain_disc_hidden);
  get("max_offset", c.max_offset);
  get("decoder_init_gain", c.decoder_init_gain);
  get("template_subdivision", c.template_subdivision);
  get("template_radius", c.template_radius);
  c.validate();
  return c;
}

TriangleMesh make_template(const NetworkConfig& c) {
  TriangleMesh t = load_template(c.template_subdivision);
  t.vertices *= c.template_radius;
  return t;
}

Matrix sketch_batch(std::span<const Image* const> sketches, int image_size) {
  Matrix m(static_cast<Eigen::Index>(sketches.size()), static_cast<Eigen::Index>(image_size) * image_size);
  for (std::size_t i = 0; i < sketches.size(); ++i) {
    const Image& s = *sketches[i];
    if (s.height() != image_size || s.width() != image_size) {
      throw std::invalid_argument("sketch must be " + std::to_string(image_size) + "x" + std::to_string(image_size) +
                                  ", got " + std::to_string(s.height()) + "x" + std::to_string(s.width()));
    }
    const auto px = s.pixels();
    std::copy(px.begin(), px.end(), m.row(static_cast<Eigen::Index>(i)).data());
  }
  return m;
}

Matrix view_features(std::span<const Viewpoint> views) {
  Matrix m(static_cast<Eigen::Index>(views.size()), 4);
  for (std::size_t i = 0; i < views.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    m(r, 0) = static_cast<float>(std::sin(views[i].elevation));
    m(r, 1) = static_cast<float>(std::cos(views[i].elevation));
    m(r, 2) = static_cast<float>(std::sin(views[i].azimuth));
    m(r, 3) = static_cast<float>(std::cos(views[i].azimuth));
  }
  return m;
}

namespace {

std::vector<int> layer_sizes(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> s{in};
  s.insert(s.end(), hidden.begin(), hidden.end());
  s.push_back(out);
  return s;
}

}  // namespace

SketchModel::SketchModel(const NetworkConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  template_ = make_template(config_);
  Rng rng(seed);

  nn::Shape shape{1, config_.image_size / config_.stem_pool, config_.image_size / config_.stem_pool};
  int in_c = 1;
  for (std::size_t i = 0; i < config_.conv_channels.size(); ++i) {
    convs_.emplace_back("encoder.conv" + std::to_string(i), in_c, config_.conv_channels[i], 3, 2, 1, rng);
    shape = convs_.back().output_shape(shape);
    in_c = config_.conv_channels[i];
  }
  conv_out_ = shape;
  feature_ = nn::Linear("encoder.feature", conv_out_.size(), config_.feature_dim, rng, std::sqrt(3.0f));
  head_v_ = nn::Linear("encoder.head_v", config_.feature_dim, config_.view_dim, rng);
  head_s_ = nn::Linear("encoder.head_s", config_.feature_dim, config_.shape_dim, rng);

  view_encoder_ = nn::Mlp("view_encoder", layer_sizes(4, config_.view_hidden, config_.view_dim), rng);
  view_decoder_ = nn::Mlp("view_decoder", layer_sizes(config_.view_dim, config_.view_hidden, 3), rng);

  const int nv3 = 3 * template_.num_vertices();
  decoder_ = nn::Mlp("decoder", layer_sizes(config_.shape_dim + config_.view_dim, config_.decoder_hidden, nv3), rng);
  decoder_.last().weight.value *= static_cast<float>(config_.decoder_init_gain);

  shape_disc_ = nn::Mlp("shape_disc", layer_sizes(nv3, config_.shape_disc_hidden, 1), rng);
  domain_disc_ = nn::Mlp("domain_disc", layer_sizes(config_.feature_dim, config_.domain_disc_hidden, 1), rng);
}

SketchModel::EncoderOut SketchModel::encode(nn::Graph& g, Var images) {
  const int size = config_.image_size;
  if (images.cols() != static_cast<Eigen::Index>(size) * size) {
    throw std::invalid_argument("encode: expected " + std::to_string(size) + "x" + std::to_string(size) + " sketches");
  }
  // Strokes become positive activations on a zero background.
  Var x = g.affine(images, -1.0f, 1.0f);
  nn::Shape shape{1, size, size};
  if (config_.stem_pool > 1) x = g.avg_pool(x, shape, config_.stem_pool, &shape);
  for (auto& conv : convs_) {
    x = conv(g, x, shape, &shape);
    x = g.leaky_relu(x, nn::kLeakySlope);
  }
  Var z = g.leaky_relu(feature_(g, x), nn::kLeakySlope);
  return {z, head_v_(g, z), head_s_(g, z)};
}

Var SketchModel::view_encode(nn::Graph& g, Var view_feats) {
  if (view_feats.cols() != 4) throw std::invalid_argument("view_encode: expected 4 view features per row");
  return view_encoder_(g, view_feats);
}

SketchModel::ViewOut SketchModel::view_decode(nn::Graph& g, Var code) {
  if (code.cols() != config_.view_dim) throw std::invalid_argument("view_decode: view code dimension mismatch");
  Var o = view_decoder_(g, code);
  Var el = g.affine(g.tanh(g.slice_cols(o, 0, 1)), static_cast<float>(std::numbers::pi / 2));
  Var az = g.atan2(g.slice_cols(o, 1, 1), g.slice_cols(o, 2, 1));
  return {el, az};
}

Var SketchModel::decode(nn::Graph& g, Var z_s, Var view_code) {
  if (z_s.cols() != config_.shape_dim || view_code.cols() != config_.view_dim || z_s.rows() != view_code.rows()) {
    throw std::invalid_argument("decode: code dimension mismatch");
  }
  Var h = decoder_(g, g.concat_cols({z_s, view_code}));
  return g.affine(g.tanh(h), static_cast<float>(config_.max_offset));
}

Var SketchModel::shape_logits(nn::Graph& g, Var offsets) {
  if (offsets.cols() != 3 * num_vertices()) throw std::invalid_argument("shape_discriminate: topology mismatch");
  return shape_disc_(g, offsets);
}

Var SketchModel::domain_logits(nn::Graph& g, Var z) {
  if (z.cols() != config_.feature_dim) throw std::invalid_argument("domain_discriminate: feature dimension mismatch");
  return domain_disc_(g, z);
}

LatentCodes SketchModel::encode(const Image& sketch) {
  nn::Graph g;
  const Image* one[] = {&sketch};
  EncoderOut e = encode(g, g.constant(sketch_batch(one, config_.image_size)));
  return {e.z.value(), e.z_v.value(), e.z_s.value()};
}

Matrix SketchModel::view_encode(const Viewpoint& v) {
  nn::Graph g;
  return view_encode(g, g.constant(view_features(std::span(&v, 1)))).value();
}

Viewpoint SketchModel::view_decode(const Matrix& code) {
  nn::Graph g;
  ViewOut o = view_decode(g, g.constant(code));
  Viewpoint v;
  v.elevation = o.elevation.item();
  v.azimuth = wrap_angle(o.azimuth.item());
  return v;
}

TriangleMesh SketchModel::decode(const Matrix& z_s, const Matrix& view_code) {
  nn::Graph g;
  Var off = decode(g, g.constant(z_s), g.constant(view_code));
  return mesh_from_offsets(off.value(), 0);
}

double SketchModel::shape_discriminate(const TriangleMesh& mesh) {
  if (!mesh.same_topology(template_)) throw std::invalid_argument("shape_discriminate: topology mismatch");
  Matrix off(1, 3 * num_vertices());
  for (int i = 0; i < num_vertices(); ++i)
    for (int k = 0; k < 3; ++k)
      off(0, 3 * i + k) = static_cast<float>(mesh.vertices(i, k) - template_.vertices(i, k));
  nn::Graph g;
  Var s = g.sigmoid(shape_logits(g, g.constant(off)));
  return s.item();
}

double SketchModel::domain_discriminate(const Matrix& z) {
  nn::Graph g;
  return g.sigmoid(domain_logits(g, g.constant(z))).item();
}

TriangleMesh SketchModel::mesh_from_offsets(const Matrix& offsets, Eigen::Index row) const {
  const auto n = static_cast<std::size_t>(3 * num_vertices());
  return deform(template_, std::span<const float>(offsets.row(row).data(), n));
}

nn::ParameterList SketchModel::encoder_parameters() {
  nn::ParameterList p;
  for (auto& c : convs_) c.collect(p);
  feature_.collect(p);
  head_v_.collect(p);
  head_s_.collect(p);
  return p;
}

nn::ParameterList SketchModel::view_autoencoder_parameters() {
  nn::ParameterList p;
  view_encoder_.collect(p);
  view_decoder_.collect(p);
  return p;
}

nn::ParameterList SketchModel::decoder_parameters() {
  nn::ParameterList p;
  decoder_.collect(p);
  return p;
}

nn::ParameterList SketchModel::shape_discriminator_parameters() {
  nn::ParameterList p;
  shape_disc_.collect(p);
  return p;
}

nn::ParameterList SketchModel::domain_discriminator_parameters() {
  nn::ParameterList p;
  domain_disc_.collect(p);
  return p;
}

nn::ParameterList SketchModel::parameters() {
  nn::ParameterList p = encoder_parameters();
  for (auto* list : {&view_encoder_, &view_decoder_, &decoder_, &shape_disc_, &domain_disc_}) list->collect(p);
  return p;
}

// ----------------------------------------------------------------- bundle

void save_bundle(SketchModel& model, const BundleInfo& info, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const nn::ParameterList params = model.parameters();
  nn::save_parameters(params, dir / "parameters.bin");
  nlohmann::json m = {{"class", info.class_label},
                      {"network", to_json(model.config())},
                      {"template",
                       {{"kind", "icosphere"},
                        {"subdivision", model.config().template_subdivision},
                        {"radius", model.config().template_radius},
                        {"vertices", model.num_vertices()},
                        {"faces", model.template_mesh().num_faces()}}},
                      {"config_hash", info.config_hash},
                      {"training_step", info.training_step},
                      {"parameter_count", nn::parameter_count(params)},
                      {"parameter_hash", to_hex(nn::parameter_hash(params))},
                      {"extra", info.extra}};
  std::ofstream out(dir / "manifest.json");
  if (!out) throw std::runtime_error("save_bundle: cannot write " + (dir / "manifest.json").string());
  out << m.dump(2) << '\n';
}

LoadedBundle load_bundle(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("load_bundle: no manifest.json in " + dir.string());
  nlohmann::json m = nlohmann::json::parse(in);
  LoadedBundle b;
  b.model = SketchModel(network_config_from_json(m.at("network")), 0);
  nn::load_parameters(b.model.parameters(), dir / "parameters.bin");
  b.info.class_label = m.at("class").get<std::string>();
  b.info.config_hash = m.value("config_hash", std::string());
  b.info.training_step = m.value("training_step", std::int64_t{0});
  if (m.contains("extra")) b.info.extra = m.at("extra");
  const std::string expected = m.value("parameter_hash", std::string());
  if (!expected.empty() && expected != to_hex(nn::parameter_hash(b.model.parameters()))) {
    throw std::runtime_error("load_bundle: parameter hash mismatch in " + dir.string());
  }
  return b;
}

}  // namespace viewsketch
