#include "viewsketch/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <numbers>
#include <sstream>

#include "viewsketch/hash.hpp"

namespace viewsketch {

using nn::Matrix;
using nn::Var;

// ------------------------------------------------------------------ config

void TrainingConfig::validate() const {
  network.validate();
  weights.validate();
  if (!(learning_rate > 0)) throw std::invalid_argument("training config: learning_rate must be positive");
  if (batch_size < 1) throw std::invalid_argument("training config: batch_size must be >= 1");
  if (epochs < 0 || domain_adaptation_epochs < 0) throw std::invalid_argument("training config: negative epochs");
  if (pyramid_levels < 1) throw std::invalid_argument("training config: pyramid_levels must be >= 1");
  if (!level_start_epochs.empty() && static_cast<int>(level_start_epochs.size()) != pyramid_levels) {
    throw std::invalid_argument("training config: level_start_epochs needs one entry per pyramid level");
  }
  if (random_view_strategy != "dataset" && random_view_strategy != "uniform") {
    throw std::invalid_argument("training config: random_view_strategy must be 'dataset' or 'uniform'");
  }
  if (!(raster_sigma > 0)) throw std::invalid_argument("training config: raster_sigma must be positive");
  if (view_reconstruction_batch < 1) throw std::invalid_argument("training config: view_reconstruction_batch must be >= 1");
  if (validation_objects < 0 || checkpoint_every < 0 || view_pretrain_steps < 0) {
    throw std::invalid_argument("training config: negative count");
  }
}

std::vector<double> TrainingConfig::level_weights(int epoch) const {
  std::vector<double> w(static_cast<std::size_t>(pyramid_levels), 0.0);
  for (int i = 0; i < pyramid_levels; ++i) {
    const int start = level_start_epochs.empty() ? i * epochs / pyramid_levels
                                                 : level_start_epochs[static_cast<std::size_t>(i)];
    if (start >= 0 && epoch >= start) w[static_cast<std::size_t>(i)] = 1.0;
  }
  if (std::none_of(w.begin(), w.end(), [](double x) { return x > 0; })) w.back() = 1.0;
  return w;
}

nlohmann::json to_json(const LossWeights& w) {
  return {{"random_view", w.random_view},
          {"view", w.view},
          {"view_reconstruction", w.view_reconstruction},
          {"shape_discriminator", w.shape_discriminator},
          {"domain_discriminator", w.domain_discriminator},
          {"regularizer", w.regularizer},
          {"laplacian", w.laplacian},
          {"flatten", w.flatten}};
}

LossWeights loss_weights_from_json(const nlohmann::json& j) {
  LossWeights w;
  auto get = [&j](const char* key, double& field) {
    if (j.contains(key)) field = j.at(key).get<double>();
  };
  get("random_view", w.random_view);
  get("view", w.view);
  get("view_reconstruction", w.view_reconstruction);
  get("shape_discriminator", w.shape_discriminator);
  get("domain_discriminator", w.domain_discriminator);
  get("regularizer", w.regularizer);
  get("laplacian", w.laplacian);
  get("flatten", w.flatten);
  w.validate();
  return w;
}

nlohmann::json to_json(const TrainingConfig& c) {
  return {{"class", c.class_label},
          {"network", to_json(c.network)},
          {"weights", to_json(c.weights)},
          {"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"pyramid_levels", c.pyramid_levels},
          {"level_start_epochs", c.level_start_epochs},
          {"raster_sigma", c.raster_sigma},
          {"random_view_strategy", c.random_view_strategy},
          {"random_view_range",
           {{"elevation_min_deg", rad_to_deg(c.random_view_range.elevation_min)},
            {"elevation_max_deg", rad_to_deg(c.random_view_range.elevation_max)},
            {"azimuth_min_deg", rad_to_deg(c.random_view_range.azimuth_min)},
            {"azimuth_max_deg", rad_to_deg(c.random_view_range.azimuth_max)}}},
          {"view_reconstruction_batch", c.view_reconstruction_batch},
          {"view_pretrain_steps", c.view_pretrain_steps},
          {"domain_adaptation", c.domain_adaptation},
          {"unlabeled_pool", c.unlabeled_pool},
          {"domain_adaptation_epochs", c.domain_adaptation_epochs},
          {"validation_objects", c.validation_objects},
          {"checkpoint_every", c.checkpoint_every},
          {"seed", c.seed}};
}

TrainingConfig training_config_from_json(const nlohmann::json& j) {
  TrainingConfig c;
  auto get = [&j](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("class", c.class_label);
  if (j.contains("network")) c.network = network_config_from_json(j.at("network"));
  if (j.contains("weights")) c.weights = loss_weights_from_json(j.at("weights"));
  get("learning_rate", c.learning_rate);
  get("batch_size", c.batch_size);
  get("epochs", c.epochs);
  get("pyramid_levels", c.pyramid_levels);
  get("level_start_epochs", c.level_start_epochs);
  get("raster_sigma", c.raster_sigma);
  get("random_view_strategy", c.random_view_strategy);
  if (j.contains("random_view_range")) {
    const auto& r = j.at("random_view_range");
    auto deg = [&r](const char* key, double& field) {
      if (r.contains(key)) field = deg_to_rad(r.at(key).get<double>());
    };
    deg("elevation_min_deg", c.random_view_range.elevation_min);
    deg("elevation_max_deg", c.random_view_range.elevation_max);
    deg("azimuth_min_deg", c.random_view_range.azimuth_min);
    deg("azimuth_max_deg", c.random_view_range.azimuth_max);
  }
  get("view_reconstruction_batch", c.view_reconstruction_batch);
  get("view_pretrain_steps", c.view_pretrain_steps);
  get("domain_adaptation", c.domain_adaptation);
  get("unlabeled_pool", c.unlabeled_pool);
  get("domain_adaptation_epochs", c.domain_adaptation_epochs);
  get("validation_objects", c.validation_objects);
  get("checkpoint_every", c.checkpoint_every);
  get("seed", c.seed);
  c.validate();
  return c;
}

TrainingConfig load_training_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("config " + path.string() + ": " + e.what());
  }
  return training_config_from_json(j);
}

std::string config_hash(const TrainingConfig& c) { return to_hex(fnv1a(to_json(c).dump())); }

std::vector<Viewpoint> view_pool(std::span<const SampleRecord> records) {
  std::vector<Viewpoint> pool;
  pool.reserve(records.size());
  for (const auto& r : records) pool.push_back(r.view);
  return pool;
}

ViewSampler make_random_view_sampler(const TrainingConfig& c, std::span<const SampleRecord> records) {
  if (c.random_view_strategy == "uniform") return ViewSampler::uniform_range(c.random_view_range);
  return ViewSampler::dataset_views(view_pool(records));
}

// -------------------------------------------------------------------- step

namespace {

const ViewRange kFullSphere{-std::numbers::pi / 2, std::numbers::pi / 2, -std::numbers::pi, std::numbers::pi};

std::string breakdown(const LossComponents& c) {
  std::ostringstream s;
  auto item = [&s](const char* name, const std::optional<double>& v) {
    s << ' ' << name << '=';
    if (v) {
      s << *v;
    } else {
      s << "n/a";
    }
  };
  item("silhouette", c.progressive_silhouette);
  item("regularizer", c.regularizer);
  item("view", c.view);
  item("view_reconstruction", c.view_reconstruction);
  item("shape_discriminator", c.shape_discriminator);
  item("domain_discriminator", c.domain_discriminator);
  return s.str();
}

void add_vertex_grad(Matrix& g, Eigen::Index row, const Vertices& grad, double scale) {
  for (Eigen::Index i = 0; i < grad.rows(); ++i)
    for (int k = 0; k < 3; ++k) g(row, 3 * i + k) += static_cast<float>(scale * grad(i, k));
}

// Shared view-code round trip used by L_vr and the autoencoder warm start.
Var view_roundtrip_loss(nn::Graph& g, SketchModel& model, std::span<const Viewpoint> views) {
  Var code = model.view_encode(g, g.constant(view_features(views)));
  SketchModel::ViewOut out = model.view_decode(g, code);
  return view_loss(g, out.elevation, out.azimuth, views);
}

}  // namespace

StepResult train_step(SketchModel& model, nn::Adam& optimizer, const StepInputs& in, const TrainingConfig& config,
                      const ViewSampler& random_views) {
  const auto n = static_cast<Eigen::Index>(in.batch.size());
  if (n == 0) throw std::invalid_argument("train_step: empty batch");
  if (static_cast<int>(in.level_weights.size()) != config.pyramid_levels) {
    throw std::invalid_argument("train_step: level weights do not match pyramid_levels");
  }
  const LossWeights& w = config.weights;
  Rng rng(in.seed);

  std::vector<const Image*> sketches;
  std::vector<Viewpoint> views;
  for (const auto* r : in.batch) {
    if (r->pyramid.num_levels() != config.pyramid_levels) {
      throw std::invalid_argument("train_step: record pyramid has " + std::to_string(r->pyramid.num_levels()) +
                                  " levels, config expects " + std::to_string(config.pyramid_levels));
    }
    sketches.push_back(&r->sketch);
    views.push_back(r->view);
  }

  nn::Graph g;
  SketchModel::EncoderOut enc = model.encode(g, g.constant(sketch_batch(sketches, model.config().image_size)));
  SketchModel::ViewOut predicted = model.view_decode(g, enc.z_v);
  Var l_view = view_loss(g, predicted.elevation, predicted.azimuth, views);

  Var offsets = model.decode(g, enc.z_s, model.view_encode(g, g.constant(view_features(views))));
  const bool random_branch = w.random_view > 0.0;
  Var offsets_r;
  std::vector<Viewpoint> random;
  if (random_branch) {
    for (Eigen::Index b = 0; b < n; ++b) random.push_back(random_views.sample(rng));
    offsets_r = model.decode(g, enc.z_s, model.view_encode(g, g.constant(view_features(random))));
  }

  // Rendered silhouette term and mesh regularizers, with gradients from the
  // rasterizer injected into the tape.
  SoftRasterSettings raster;
  raster.sigma = config.raster_sigma;
  const TriangleMesh& tmpl = model.template_mesh();
  const UniformLaplacian laplacian(tmpl.faces, tmpl.num_vertices());
  const FlattenLoss flatten(tmpl.faces);
  const Eigen::Index cols = 3 * tmpl.num_vertices();
  Matrix g_sil = Matrix::Zero(n, cols), g_sil_r = Matrix::Zero(n, cols);
  Matrix g_reg = Matrix::Zero(n, cols), g_reg_r = Matrix::Zero(n, cols);
  double sil = 0.0, reg = 0.0;
  StepResult result;
  result.level_losses.assign(in.level_weights.size(), 0.0);
  const double inv_n = 1.0 / static_cast<double>(n);
  const double reg_lap = w.regularizer * w.laplacian, reg_flat = w.regularizer * w.flatten;
  auto regularize = [&](const TriangleMesh& mesh, Matrix& grad, Eigen::Index b) {
    Vertices gl, gf;
    double r = 0.0;
    if (reg_lap > 0) {
      r += reg_lap * laplacian.loss(mesh.vertices, &gl);
      add_vertex_grad(grad, b, gl, reg_lap * inv_n);
    }
    if (reg_flat > 0) {
      r += reg_flat * flatten.loss(mesh.vertices, &gf);
      add_vertex_grad(grad, b, gf, reg_flat * inv_n);
    }
    return r;
  };
  for (Eigen::Index b = 0; b < n; ++b) {
    const TriangleMesh mesh = model.mesh_from_offsets(offsets.value(), b);
    const TriangleMesh mesh_r = random_branch ? model.mesh_from_offsets(offsets_r.value(), b) : mesh;
    const Viewpoint vr = random_branch ? random[static_cast<std::size_t>(b)] : views[static_cast<std::size_t>(b)];
    const RenderedLoss r = progressive_silhouette_loss(in.batch[static_cast<std::size_t>(b)]->pyramid, mesh, mesh_r,
                                                       views[static_cast<std::size_t>(b)], vr, w.random_view,
                                                       in.level_weights, raster);
    sil += r.loss * inv_n;
    result.render_calls += r.render_calls;
    for (std::size_t i = 0; i < r.level_losses.size(); ++i) result.level_losses[i] += r.level_losses[i] * inv_n;
    add_vertex_grad(g_sil, b, r.grad_mesh, inv_n);
    if (random_branch) add_vertex_grad(g_sil_r, b, r.grad_random_mesh, inv_n);
    reg += regularize(mesh, g_reg, b) * inv_n;
    if (random_branch) reg += regularize(mesh_r, g_reg_r, b) * inv_n;
  }
  auto injected = [&](double value, const Matrix& grad, const Matrix& grad_r) {
    Matrix v(1, 1);
    v(0, 0) = static_cast<float>(value);
    std::vector<Var> inputs{offsets};
    if (random_branch) inputs.push_back(offsets_r);
    return g.custom(inputs, std::move(v), [grad, grad_r](const Matrix& gout, std::span<Matrix*> gin) {
      if (gin[0]) *gin[0] += gout(0, 0) * grad;
      if (gin.size() > 1 && gin[1]) *gin[1] += gout(0, 0) * grad_r;
    });
  };
  Var l_sil = injected(sil, g_sil, g_sil_r);
  Var l_reg = injected(reg, g_reg, g_reg_r);

  // View autoencoder on fresh views over the whole sphere.
  const ViewSampler sphere = ViewSampler::uniform_range(kFullSphere);
  std::vector<Viewpoint> fresh;
  for (int i = 0; i < config.view_reconstruction_batch; ++i) fresh.push_back(sphere.sample(rng));
  Var l_vr = view_roundtrip_loss(g, model, fresh);

  Var total = g.add(g.add(l_sil, l_reg), g.add(g.affine(l_view, static_cast<float>(w.view)),
                                              g.affine(l_vr, static_cast<float>(w.view_reconstruction))));
  LossComponents& c = result.components;
  c.progressive_silhouette = sil;
  c.regularizer = reg;
  c.view = l_view.item();
  c.view_reconstruction = l_vr.item();
  c.shape_discriminator = 0.0;
  if (random_branch && w.shape_discriminator > 0.0) {
    Var real = model.shape_logits(g, g.grad_reverse(offsets));
    Var fake = model.shape_logits(g, g.grad_reverse(offsets_r));
    Var l_sd = binary_cross_entropy(g, real, fake);
    c.shape_discriminator = l_sd.item();
    total = g.add(total, g.affine(l_sd, static_cast<float>(w.shape_discriminator)));
  }
  const bool domain = config.domain_adaptation && !in.hand_drawn.empty();
  if (domain) {
    SketchModel::EncoderOut hand = model.encode(g, g.constant(sketch_batch(in.hand_drawn, model.config().image_size)));
    Var synth_logits = model.domain_logits(g, g.grad_reverse(enc.z));
    Var hand_logits = model.domain_logits(g, g.grad_reverse(hand.z));
    Var l_dd = binary_cross_entropy(g, synth_logits, hand_logits);
    c.domain_discriminator = l_dd.item();
    total = g.add(total, g.affine(l_dd, static_cast<float>(w.domain_discriminator)));
  }
  result.total = total_loss(c, w, domain);
  if (!std::isfinite(result.total) || !std::isfinite(total.item())) {
    throw NonFiniteLoss("train_step: non-finite loss;" + breakdown(c), c);
  }

  optimizer.zero_grad();
  g.backward(total);
  optimizer.step();
  return result;
}

double pretrain_view_autoencoder(SketchModel& model, int steps, int batch, float learning_rate, std::uint64_t seed) {
  if (steps < 0 || batch < 1) throw std::invalid_argument("pretrain_view_autoencoder: bad step or batch count");
  nn::Adam opt(model.view_autoencoder_parameters(), {learning_rate});
  const ViewSampler sphere = ViewSampler::uniform_range(kFullSphere);
  Rng rng(seed);
  double last = 0.0;
  std::vector<Viewpoint> views(static_cast<std::size_t>(batch));
  for (int s = 0; s < steps; ++s) {
    for (auto& v : views) v = sphere.sample(rng);
    nn::Graph g;
    Var loss = view_roundtrip_loss(g, model, views);
    last = loss.item();
    opt.zero_grad();
    g.backward(loss);
    opt.step();
  }
  return last;
}

// ---------------------------------------------------------------- training

double mean_silhouette_iou(SketchModel& model, std::span<const SampleRecord> records) {
  if (records.empty()) return 0.0;
  double total = 0.0;
  for (const auto& r : records) {
    const LatentCodes codes = model.encode(r.sketch);
    const TriangleMesh mesh = model.decode(codes.z_s, model.view_encode(r.view));
    const Silhouette& target = r.pyramid.finest();
    const IouResult iou = iou_loss(hard_silhouette(mesh, r.view, target.height()), target);
    total += 1.0 - iou.loss;
  }
  return total / static_cast<double>(records.size());
}

namespace {

std::vector<Matrix> snapshot(const nn::ParameterList& params) {
  std::vector<Matrix> s;
  for (const auto* p : params) s.push_back(p->value);
  return s;
}

void restore(const nn::ParameterList& params, const std::vector<Matrix>& s) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = s[i];
}

std::vector<int> active_levels(std::span<const double> w) {
  std::vector<int> a;
  for (std::size_t i = 0; i < w.size(); ++i)
    if (w[i] > 0) a.push_back(static_cast<int>(i) + 1);
  return a;
}

nlohmann::json log_entry(std::int64_t step, int epoch, const char* phase, const StepResult& r, float lr,
                         std::span<const double> level_weights) {
  const auto& c = r.components;
  nlohmann::json j = {{"step", step},
                      {"epoch", epoch},
                      {"phase", phase},
                      {"total", r.total},
                      {"silhouette", *c.progressive_silhouette},
                      {"regularizer", *c.regularizer},
                      {"view", *c.view},
                      {"view_reconstruction", *c.view_reconstruction},
                      {"shape_discriminator", *c.shape_discriminator},
                      {"level_losses", r.level_losses},
                      {"render_calls", r.render_calls},
                      {"lr", lr},
                      {"active_levels", active_levels(level_weights)}};
  if (c.domain_discriminator) j["domain_discriminator"] = *c.domain_discriminator;
  return j;
}

std::vector<std::vector<const SampleRecord*>> make_batches(std::span<const SampleRecord> records, int batch_size,
                                                           std::uint64_t seed) {
  std::vector<const SampleRecord*> order;
  for (const auto& r : records) order.push_back(&r);
  Rng rng(seed);
  rng.shuffle(order.begin(), order.end());
  std::vector<std::vector<const SampleRecord*>> batches;
  for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(batch_size)) {
    const auto end = std::min(order.size(), i + static_cast<std::size_t>(batch_size));
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

struct Checkpoint {
  int next_epoch = 0;
  std::int64_t step = 0;
  double best_validation = -1.0;
};

void save_checkpoint(SketchModel& model, const nn::Adam& opt, const Checkpoint& ck, const TrainingConfig& config,
                     const std::filesystem::path& dir) {
  const auto tmp = dir.string() + ".tmp";
  std::filesystem::remove_all(tmp);
  save_bundle(model, {config.class_label, config_hash(config), ck.step, {{"epoch", ck.next_epoch}}}, tmp);
  opt.save_state(std::filesystem::path(tmp) / "adam.bin");
  std::ofstream(std::filesystem::path(tmp) / "state.json")
      << nlohmann::json{{"next_epoch", ck.next_epoch}, {"step", ck.step}, {"best_validation", ck.best_validation}}
             .dump()
      << '\n';
  std::filesystem::remove_all(dir);
  std::filesystem::rename(tmp, dir);
}

std::optional<Checkpoint> load_checkpoint(SketchModel& model, nn::Adam& opt, const TrainingConfig& config,
                                          const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "state.json")) return std::nullopt;
  LoadedBundle b = load_bundle(dir);
  if (b.info.config_hash != config_hash(config)) {
    throw std::runtime_error("checkpoint in " + dir.string() + " was written with a different config");
  }
  restore(model.parameters(), snapshot(b.model.parameters()));
  opt.load_state(dir / "adam.bin");
  std::ifstream in(dir / "state.json");
  const nlohmann::json j = nlohmann::json::parse(in);
  return Checkpoint{j.at("next_epoch").get<int>(), j.at("step").get<std::int64_t>(),
                    j.at("best_validation").get<double>()};
}

std::vector<const Image*> hand_batch(std::span<const Image> pool, std::vector<std::size_t>& order, std::size_t& cursor,
                                     int size, Rng& rng) {
  std::vector<const Image*> out;
  for (int i = 0; i < size; ++i) {
    if (cursor >= order.size()) {
      rng.shuffle(order.begin(), order.end());
      cursor = 0;
    }
    out.push_back(&pool[order[cursor++]]);
  }
  return out;
}

}  // namespace

void fine_tune_domain(SketchModel& model, nn::Adam& optimizer, std::span<const SampleRecord> records,
                      std::span<const Image> hand_drawn, const TrainingConfig& config, int epochs,
                      std::int64_t* step_counter, std::vector<nlohmann::json>* log) {
  if (hand_drawn.empty()) throw std::invalid_argument("fine_tune_domain: no hand-drawn sketches");
  if (records.empty()) throw std::invalid_argument("fine_tune_domain: no synthetic records");
  TrainingConfig c = config;
  c.domain_adaptation = true;
  const ViewSampler sampler = make_random_view_sampler(c, records);
  const std::vector<double> levels = c.level_weights(std::max(c.epochs - 1, 0));
  std::int64_t step = step_counter ? *step_counter : 0;
  Rng hand_rng(mix_seed(c.seed, 0xda));
  std::vector<std::size_t> order(hand_drawn.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t cursor = order.size();
  for (int e = 0; e < epochs; ++e) {
    for (const auto& batch : make_batches(records, c.batch_size, mix_seed(c.seed, 0xda00 + static_cast<std::uint64_t>(e)))) {
      const auto hand = hand_batch(hand_drawn, order, cursor, static_cast<int>(batch.size()), hand_rng);
      const StepResult r = train_step(model, optimizer, {batch, hand, levels, mix_seed(c.seed, static_cast<std::uint64_t>(step))},
                                      c, sampler);
      if (log) log->push_back(log_entry(step, c.epochs + e, "domain", r, optimizer.options().learning_rate, levels));
      ++step;
    }
  }
  if (step_counter) *step_counter = step;
}

TrainOutcome train_on_records(std::span<const SampleRecord> records, const TrainingConfig& config,
                              const std::optional<std::filesystem::path>& out_dir, std::span<const Image> hand_drawn,
                              const TrainControl& control) {
  config.validate();
  if (records.empty()) throw std::invalid_argument("train_on_records: no training records");
  for (const auto& r : records) {
    if (r.class_label != config.class_label) {
      throw std::invalid_argument("train_on_records: record of class '" + r.class_label + "' in a '" +
                                  config.class_label + "' run");
    }
  }

  // Hold out the last `validation_objects` object ids.
  std::vector<std::string> ids;
  for (const auto& r : records)
    if (std::find(ids.begin(), ids.end(), r.object_id) == ids.end()) ids.push_back(r.object_id);
  std::sort(ids.begin(), ids.end());
  if (config.validation_objects >= static_cast<int>(ids.size()) && config.validation_objects > 0) {
    throw std::invalid_argument("train_on_records: validation_objects leaves no training objects");
  }
  const std::vector<std::string> held(ids.end() - config.validation_objects, ids.end());
  std::vector<SampleRecord> train, val;
  for (const auto& r : records) {
    (std::find(held.begin(), held.end(), r.object_id) != held.end() ? val : train).push_back(r);
  }
  std::vector<SampleRecord> val_subset = val.empty() ? train : val;
  if (val_subset.size() > 100) {
    Rng rng(mix_seed(config.seed, 0x7a1));
    rng.shuffle(val_subset.begin(), val_subset.end());
    val_subset.resize(100);
  }

  TrainOutcome out;
  out.model = SketchModel(config.network, mix_seed(config.seed, 1));
  nn::ParameterList params = out.model.parameters();
  nn::Adam opt(params, {config.learning_rate});
  const ViewSampler sampler = make_random_view_sampler(config, train);

  std::optional<std::filesystem::path> log_path, ck_dir;
  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    log_path = *out_dir / "train_log.jsonl";
    ck_dir = *out_dir / "checkpoint";
  }
  Checkpoint ck;
  if (ck_dir) {
    if (auto loaded = load_checkpoint(out.model, opt, config, *ck_dir)) {
      ck = *loaded;
      std::cerr << "resuming from " << ck_dir->string() << " at epoch " << ck.next_epoch << '\n';
    }
  }
  if (ck.next_epoch == 0 && ck.step == 0 && config.view_pretrain_steps > 0) {
    pretrain_view_autoencoder(out.model, config.view_pretrain_steps, config.view_reconstruction_batch,
                              std::max(config.learning_rate, 1e-3f), mix_seed(config.seed, 2));
  }

  std::ofstream log_file;
  if (log_path) log_file.open(*log_path, ck.step > 0 ? std::ios::app : std::ios::trunc);
  std::size_t logged = 0;
  auto flush_log = [&] {
    if (!log_path) return;
    for (; logged < out.log.size(); ++logged) log_file << out.log[logged].dump() << '\n';
    log_file.flush();
  };

  std::vector<Matrix> best = snapshot(params);
  std::int64_t best_step = ck.step;
  if (ck.best_validation >= 0.0 && out_dir && std::filesystem::exists(*out_dir / "best" / "manifest.json")) {
    best = snapshot(load_bundle(*out_dir / "best").model.parameters());
  }
  const bool domain = config.domain_adaptation && config.domain_adaptation_epochs > 0;
  std::vector<Image> pool_storage;
  if (domain && hand_drawn.empty()) {
    if (config.unlabeled_pool.empty()) throw std::invalid_argument("domain adaptation needs an unlabeled_pool");
    pool_storage = load_unlabeled_sketches(config.unlabeled_pool, config.network.image_size);
    hand_drawn = pool_storage;
  }
  const int total_epochs = config.epochs + (domain ? config.domain_adaptation_epochs : 0);
  int run_epochs = 0;
  for (int e = ck.next_epoch; e < total_epochs; ++e) {
    if (control.stop_after_epochs >= 0 && run_epochs++ >= control.stop_after_epochs) {
      out.steps = ck.step;
      return out;
    }
    if (e < config.epochs) {
      const std::vector<double> levels = config.level_weights(e);
      for (const auto& batch : make_batches(train, config.batch_size, mix_seed(config.seed, 100 + static_cast<std::uint64_t>(e)))) {
        const StepResult r = train_step(out.model, opt, {batch, {}, levels, mix_seed(config.seed, static_cast<std::uint64_t>(ck.step))},
                                        config, sampler);
        out.log.push_back(log_entry(ck.step, e, "synthetic", r, config.learning_rate, levels));
        ++ck.step;
      }
    } else {
      if (e == config.epochs && config.epochs > 0) restore(params, best);
      TrainingConfig c = config;
      c.seed = mix_seed(config.seed, static_cast<std::uint64_t>(e));
      fine_tune_domain(out.model, opt, train, hand_drawn, c, 1, &ck.step, &out.log);
    }
    flush_log();
    ck.next_epoch = e + 1;
    const bool last = e + 1 == total_epochs;
    const bool periodic = config.checkpoint_every > 0 && (e + 1) % config.checkpoint_every == 0;
    if (periodic || last) {
      const double v = mean_silhouette_iou(out.model, val_subset);
      // Domain fine-tuning does not take part in model selection.
      if (e < config.epochs && v > ck.best_validation) {
        ck.best_validation = v;
        best = snapshot(params);
        best_step = ck.step;
        if (out_dir) save_bundle(out.model, {config.class_label, config_hash(config), ck.step, {{"validation_iou", v}}}, *out_dir / "best");
      }
      if (ck_dir) save_checkpoint(out.model, opt, ck, config, *ck_dir);
    }
  }
  if (!domain && config.epochs > 0) restore(params, best);
  if (domain) best_step = ck.step;
  out.steps = ck.step;
  out.best_validation = config.epochs > 0 ? ck.best_validation : mean_silhouette_iou(out.model, val_subset);
  out.info = {config.class_label, config_hash(config), best_step,
              {{"validation_iou", out.best_validation}, {"training", to_json(config)}}};
  if (out_dir) save_bundle(out.model, out.info, *out_dir / "bundle");
  return out;
}

TrainOutcome train_model(const DatasetManifest& manifest, const TrainingConfig& config,
                         const std::filesystem::path& out_dir) {
  LoadOptions opts;
  opts.pyramid_levels = config.pyramid_levels;
  const std::vector<SampleRecord> records = load_dataset(manifest, "train", config.class_label, opts);
  return train_on_records(records, config, out_dir);
}

// -------------------------------------------------------------- direct fit

OverfitResult overfit_single_object(std::span<const Silhouette> silhouettes, std::span<const Viewpoint> views,
                                    const OverfitConfig& config) {
  if (silhouettes.size() != views.size()) throw std::invalid_argument("overfit_single_object: view count mismatch");
  if (views.size() < 8) throw std::invalid_argument("overfit_single_object: need at least 8 views");
  for (const auto& s : silhouettes) {
    if (!s.same_shape(silhouettes[0])) throw std::invalid_argument("overfit_single_object: mixed resolutions");
  }
  TriangleMesh tmpl = load_template(config.template_subdivision);
  tmpl.vertices *= config.template_radius;
  const UniformLaplacian laplacian(tmpl.faces, tmpl.num_vertices());
  const FlattenLoss flatten(tmpl.faces);
  SoftRasterSettings raster;
  raster.sigma = config.raster_sigma;
  raster.height = silhouettes[0].height();
  raster.width = silhouettes[0].width();

  nn::Parameter offsets("offsets", tmpl.num_vertices(), 3);
  nn::Adam opt({&offsets}, {config.learning_rate});
  const double inv = 1.0 / static_cast<double>(views.size());
  double initial = 0.0;
  int above = 0;
  OverfitResult out;
  for (int step = 0; step < config.steps; ++step) {
    const TriangleMesh mesh = deform(tmpl, Vertices(offsets.value.cast<double>()));
    Vertices grad = Vertices::Zero(tmpl.num_vertices(), 3);
    double sil = 0.0;
    for (std::size_t i = 0; i < views.size(); ++i) {
      const RenderedLoss r = silhouette_loss(silhouettes[i], mesh, mesh, views[i], views[i], 0.0, raster);
      sil += r.loss * inv;
      grad += inv * r.grad_mesh;
    }
    Vertices gl, gf;
    const double lap = laplacian.loss(mesh.vertices, &gl);
    const double flat = flatten.loss(mesh.vertices, &gf);
    grad += config.laplacian_weight * gl + config.flatten_weight * gf;
    const double total = sil + config.laplacian_weight * lap + config.flatten_weight * flat;
    if (!std::isfinite(total)) {
      throw std::runtime_error("overfit_single_object: non-finite loss at step " + std::to_string(step));
    }
    if (step == 0) initial = total;
    above = total > initial ? above + 1 : 0;
    if (above >= config.divergence_window) {
      std::ostringstream s;
      s << "overfit_single_object: diverged at step " << step << " (loss " << total << " > initial " << initial
        << " for " << above << " steps; silhouette " << sil << ", laplacian " << lap << ", flatten " << flat << ")";
      throw std::runtime_error(s.str());
    }
    out.final_silhouette_loss = sil;
    out.final_laplacian = lap;
    out.final_flatten = flat;
    offsets.grad = grad.cast<float>();
    opt.step();
    out.steps = step + 1;
  }
  out.mesh = deform(tmpl, Vertices(offsets.value.cast<double>()));
  double sum = 0.0;
  for (std::size_t i = 0; i < views.size(); ++i) {
    const Silhouette hard = hard_silhouette(out.mesh, views[i], raster);
    out.view_iou.push_back(1.0 - iou_loss(hard, silhouettes[i]).loss);
    sum += out.view_iou.back();
  }
  out.mean_iou = sum / static_cast<double>(views.size());
  return out;
}

}  // namespace viewsketch
