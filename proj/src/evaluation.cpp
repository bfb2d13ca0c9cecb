#include "viewsketch/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "viewsketch/hash.hpp"

namespace viewsketch {

using nn::Matrix;
using nn::Var;

// ---------------------------------------------------------------- metrics

VoxelIou voxel_iou(const TriangleMesh& a, const TriangleMesh& b, int resolution) {
  if (resolution < 1) throw std::invalid_argument("voxel_iou: resolution must be positive");
  const bool ea = a.empty(), eb = b.empty();
  if (ea && eb) return {1.0, true};
  Bounds box = ea ? bounding_box(b) : bounding_box(a);
  if (!ea && !eb) {
    const Bounds other = bounding_box(b);
    box.min = box.min.cwiseMin(other.min);
    box.max = box.max.cwiseMax(other.max);
  }
  // Cubic grid around the joint box with a small margin so no cell center
  // lands exactly on a bounding face.
  const double extent = std::max(box.extent().maxCoeff(), 1e-9) * 1.02;
  GridFrame frame;
  frame.extent = extent;
  frame.origin = box.center() - Vec3::Constant(extent / 2);
  const VoxelGrid va = ea ? VoxelGrid{} : voxelize(a, resolution, frame);
  const VoxelGrid vb = eb ? VoxelGrid{} : voxelize(b, resolution, frame);
  std::size_t inter = 0, uni = 0;
  const std::size_t cells = static_cast<std::size_t>(resolution) * resolution * resolution;
  for (std::size_t i = 0; i < cells; ++i) {
    const bool oa = !ea && va.occupancy[i], ob = !eb && vb.occupancy[i];
    inter += oa && ob;
    uni += oa || ob;
  }
  if (uni == 0) return {1.0, true};
  return {static_cast<double>(inter) / static_cast<double>(uni), false};
}

double chamfer_distance(std::span<const Vec3> a, std::span<const Vec3> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("chamfer_distance: empty point set");
  auto directed = [](std::span<const Vec3> from, std::span<const Vec3> to) {
    double sum = 0.0;
    for (const auto& p : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : to) best = std::min(best, (p - q).squaredNorm());
      sum += best;
    }
    return sum / static_cast<double>(from.size());
  };
  return 0.5 * (directed(a, b) + directed(b, a)) * kChamferScale;
}

double chamfer_distance(const TriangleMesh& a, const TriangleMesh& b, int n_points, std::uint64_t seed_a,
                        std::uint64_t seed_b) {
  if (n_points < 256) throw std::invalid_argument("chamfer_distance: need at least 256 points");
  const auto pa = sample_surface(a, n_points, seed_a);
  const auto pb = sample_surface(b, n_points, seed_b);
  return chamfer_distance(pa, pb);
}

double silhouette_iou_2d(const TriangleMesh& mesh, const Viewpoint& view, const Silhouette& target) {
  SoftRasterSettings s;
  s.height = target.height();
  s.width = target.width();
  const Silhouette render = mesh.empty() ? Silhouette(s.height, s.width) : hard_silhouette(mesh, view, s);
  const IouResult r = iou_loss(binarize(target), render);
  return r.degenerate ? 1.0 : 1.0 - r.loss;
}

double mean_view_error(SketchModel& model, std::span<const SampleRecord> records) {
  if (records.empty()) throw std::invalid_argument("mean_view_error: no records");
  double sum = 0.0;
  for (const auto& r : records) sum += angular_distance(model.view_decode(model.encode(r.sketch).z_v), r.view);
  return sum / static_cast<double>(records.size());
}

double random_view_error(std::span<const Viewpoint> pool) {
  if (pool.empty()) throw std::invalid_argument("random_view_error: empty pool");
  double sum = 0.0;
  for (const auto& a : pool)
    for (const auto& b : pool) sum += angular_distance(a, b);
  return sum / (static_cast<double>(pool.size()) * static_cast<double>(pool.size()));
}

// ------------------------------------------------------------- prediction

std::string to_string(ViewMode m) {
  switch (m) {
    case ViewMode::kPredicted:
      return "pred-view";
    case ViewMode::kGroundTruth:
      return "gt-view";
    case ViewMode::kSpecified:
      return "specified-view";
  }
  return "?";
}

ViewMode view_mode_from_string(const std::string& s) {
  if (s == "pred-view") return ViewMode::kPredicted;
  if (s == "gt-view") return ViewMode::kGroundTruth;
  if (s == "specified-view") return ViewMode::kSpecified;
  throw std::invalid_argument("unknown view mode '" + s + "' (pred-view, gt-view, specified-view)");
}

Prediction predict(SketchModel& model, const Image& sketch, ViewMode mode, const std::optional<Viewpoint>& view) {
  const LatentCodes codes = model.encode(sketch);
  Prediction p;
  p.predicted_view = model.view_decode(codes.z_v);
  if (mode == ViewMode::kPredicted) {
    p.used_view = p.predicted_view;
  } else {
    if (!view) throw std::invalid_argument("predict: " + to_string(mode) + " needs a viewpoint");
    p.used_view = view->normalized();
  }
  p.mesh = model.decode(codes.z_s, model.view_encode(p.used_view));
  return p;
}

// ----------------------------------------------------------------- report

nlohmann::json to_json(const EvalReport& r) {
  auto metrics = [](const ClassMetrics& m) {
    return nlohmann::json{{"voxel_iou", m.voxel_iou},
                          {"chamfer", m.chamfer},
                          {"silhouette_iou", m.silhouette_iou},
                          {"view_error_deg", rad_to_deg(m.view_error)},
                          {"count", m.count}};
  };
  nlohmann::json j = {{"mode", r.mode},
                      {"config_hash", r.config_hash},
                      {"dataset_id", r.dataset_id},
                      {"chamfer_scale", r.chamfer_scale},
                      {"voxel_resolution", r.voxel_resolution},
                      {"mean", metrics(r.mean)}};
  j["per_class"] = nlohmann::json::object();
  for (const auto& [name, m] : r.per_class) j["per_class"][name] = metrics(m);
  return j;
}

std::string to_csv(const EvalReport& r) {
  std::ostringstream s;
  s << "class,mode,voxel_iou,chamfer_x" << r.chamfer_scale << ",silhouette_iou,view_error_deg,count\n";
  auto row = [&](const std::string& name, const ClassMetrics& m) {
    s << name << ',' << r.mode << ',' << m.voxel_iou << ',' << m.chamfer << ',' << m.silhouette_iou << ','
      << rad_to_deg(m.view_error) << ',' << m.count << '\n';
  };
  for (const auto& [name, m] : r.per_class) row(name, m);
  row("mean", r.mean);
  return s.str();
}

std::string dataset_id(const DatasetManifest& m) { return to_hex(fnv1a(to_json(m).dump())); }

namespace {

void finish_report(EvalReport& report) {
  ClassMetrics mean;
  for (auto& [name, m] : report.per_class) {
    const auto n = static_cast<double>(m.count);
    m.voxel_iou /= n;
    m.chamfer /= n;
    m.silhouette_iou /= n;
    m.view_error /= n;
    mean.voxel_iou += m.voxel_iou;
    mean.chamfer += m.chamfer;
    mean.silhouette_iou += m.silhouette_iou;
    mean.view_error += m.view_error;
    mean.count += m.count;
  }
  const auto k = static_cast<double>(std::max<std::size_t>(report.per_class.size(), 1));
  mean.voxel_iou /= k;
  mean.chamfer /= k;
  mean.silhouette_iou /= k;
  mean.view_error /= k;
  report.mean = mean;
}

class MeshCache {
 public:
  const TriangleMesh& get(const SampleRecord& r) {
    if (!r.mesh_path) throw std::invalid_argument("evaluate: record " + r.object_id + " has no ground-truth mesh");
    const std::string key = r.mesh_path->string();
    auto it = cache_.find(key);
    if (it == cache_.end()) it = cache_.emplace(key, import_mesh(*r.mesh_path)).first;
    return it->second;
  }

 private:
  std::map<std::string, TriangleMesh> cache_;
};

void accumulate(ClassMetrics& m, const TriangleMesh& predicted, const TriangleMesh& truth, const SampleRecord& r,
                const Viewpoint& predicted_view, const EvalOptions& options) {
  m.voxel_iou += voxel_iou(predicted, truth, options.voxel_resolution).value;
  if (options.compute_chamfer) m.chamfer += chamfer_distance(predicted, truth, options.chamfer_points);
  m.silhouette_iou += silhouette_iou_2d(predicted, r.view, r.pyramid.finest());
  m.view_error += angular_distance(predicted_view, r.view);
  ++m.count;
}

std::span<const SampleRecord> limited(std::span<const SampleRecord> records, std::size_t max_records) {
  if (max_records > 0 && records.size() > max_records) return records.first(max_records);
  return records;
}

}  // namespace

EvalReport evaluate(SketchModel& model, std::span<const SampleRecord> records, ViewMode mode,
                    const EvalOptions& options, const std::string& config_hash, const std::string& dataset) {
  if (mode == ViewMode::kSpecified) {
    throw std::invalid_argument("evaluate: specified-view needs explicit views; use specified_view_silhouette_iou");
  }
  if (records.empty()) throw std::invalid_argument("evaluate: no records");
  EvalReport report;
  report.mode = to_string(mode);
  report.config_hash = config_hash;
  report.dataset_id = dataset;
  report.voxel_resolution = options.voxel_resolution;
  MeshCache meshes;
  for (const auto& r : limited(records, options.max_records)) {
    const Prediction p = predict(model, r.sketch, mode, r.view);
    accumulate(report.per_class[r.class_label], p.mesh, meshes.get(r), r, p.predicted_view, options);
  }
  finish_report(report);
  return report;
}

double specified_view_silhouette_iou(SketchModel& model, std::span<const SampleRecord> records,
                                     const ViewSampler& sampler, int per_record, std::uint64_t seed) {
  if (records.empty() || per_record < 1) throw std::invalid_argument("specified_view_silhouette_iou: nothing to do");
  Rng rng(seed);
  double sum = 0.0;
  for (const auto& r : records) {
    const LatentCodes codes = model.encode(r.sketch);
    for (int k = 0; k < per_record; ++k) {
      const Viewpoint v = sampler.sample(rng);
      sum += silhouette_iou_2d(model.decode(codes.z_s, model.view_encode(v)), v, r.pyramid.finest());
    }
  }
  return sum / (static_cast<double>(records.size()) * per_record);
}

// -------------------------------------------------------------- retrieval

struct RetrievalBaseline::Net {
  ClassifierConfig config;
  std::vector<nn::Conv2d> convs;
  nn::Linear feature;
  nn::Linear head;

  Net(const ClassifierConfig& c, int classes, Rng& rng) : config(c) {
    nn::Shape shape{1, c.image_size / c.stem_pool, c.image_size / c.stem_pool};
    int in = 1;
    for (std::size_t i = 0; i < c.conv_channels.size(); ++i) {
      convs.emplace_back("cls.conv" + std::to_string(i), in, c.conv_channels[i], 3, 2, 1, rng);
      shape = convs.back().output_shape(shape);
      in = c.conv_channels[i];
    }
    feature = nn::Linear("cls.feature", shape.size(), c.feature_dim, rng, std::sqrt(3.0f));
    head = nn::Linear("cls.head", c.feature_dim, classes, rng);
  }

  nn::ParameterList parameters() {
    nn::ParameterList p;
    for (auto& c : convs) c.collect(p);
    feature.collect(p);
    head.collect(p);
    return p;
  }

  Var features(nn::Graph& g, Var images) {
    Var x = g.affine(images, -1.0f, 1.0f);
    nn::Shape shape{1, config.image_size, config.image_size};
    if (config.stem_pool > 1) x = g.avg_pool(x, shape, config.stem_pool, &shape);
    for (auto& c : convs) x = g.leaky_relu(c(g, x, shape, &shape), nn::kLeakySlope);
    return g.leaky_relu(feature(g, x), nn::kLeakySlope);
  }
};

namespace {

// Mean softmax cross-entropy of logits (N x K) against integer labels.
Var softmax_cross_entropy(nn::Graph& g, Var logits, std::span<const int> labels, int* correct) {
  const Matrix& z = logits.value();
  const auto n = z.rows();
  Matrix grad(n, z.cols());
  double loss = 0.0;
  int hits = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const float m = z.row(i).maxCoeff();
    Eigen::RowVectorXf e = (z.row(i).array() - m).exp();
    const float s = e.sum();
    const int y = labels[static_cast<std::size_t>(i)];
    loss += std::log(s) - (z(i, y) - m);
    grad.row(i) = e / s;
    grad(i, y) -= 1.0f;
    Eigen::Index arg;
    z.row(i).maxCoeff(&arg);
    hits += arg == y;
  }
  grad /= static_cast<float>(n);
  if (correct) *correct = hits;
  Matrix v(1, 1);
  v(0, 0) = static_cast<float>(loss / static_cast<double>(n));
  return g.custom({logits}, std::move(v), [grad](const Matrix& gout, std::span<Matrix*> gin) {
    if (gin[0]) *gin[0] += gout(0, 0) * grad;
  });
}

}  // namespace

RetrievalBaseline::RetrievalBaseline(std::span<const SampleRecord> gallery, const ClassifierConfig& config,
                                     std::uint64_t seed) {
  if (gallery.empty()) throw std::invalid_argument("RetrievalBaseline: empty gallery");
  std::vector<std::string> classes, objects;
  for (const auto& r : gallery) {
    if (std::find(classes.begin(), classes.end(), r.class_label) == classes.end()) classes.push_back(r.class_label);
    if (std::find(objects.begin(), objects.end(), r.object_id) == objects.end()) objects.push_back(r.object_id);
    if (!r.mesh_path) throw std::invalid_argument("RetrievalBaseline: gallery record without a mesh");
  }
  std::sort(classes.begin(), classes.end());
  std::sort(objects.begin(), objects.end());
  const bool by_class = classes.size() > 1;
  const auto& names = by_class ? classes : objects;
  std::vector<int> labels;
  for (const auto& r : gallery) {
    const std::string& key = by_class ? r.class_label : r.object_id;
    labels.push_back(static_cast<int>(std::lower_bound(names.begin(), names.end(), key) - names.begin()));
    ids_.push_back(r.object_id);
    meshes_.push_back(*r.mesh_path);
  }

  Rng rng(seed);
  net_ = std::make_shared<Net>(config, static_cast<int>(names.size()), rng);
  nn::Adam opt(net_->parameters(), {config.learning_rate});
  std::vector<std::size_t> order(gallery.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  int hits = 0;
  for (int e = 0; e < config.epochs; ++e) {
    rng.shuffle(order.begin(), order.end());
    hits = 0;
    for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(config.batch_size)) {
      std::vector<const Image*> batch;
      std::vector<int> y;
      for (std::size_t k = i; k < std::min(order.size(), i + static_cast<std::size_t>(config.batch_size)); ++k) {
        batch.push_back(&gallery[order[k]].sketch);
        y.push_back(labels[order[k]]);
      }
      nn::Graph g;
      Var logits = net_->head(g, net_->features(g, g.constant(sketch_batch(batch, config.image_size))));
      int correct = 0;
      Var loss = softmax_cross_entropy(g, logits, y, &correct);
      hits += correct;
      opt.zero_grad();
      g.backward(loss);
      opt.step();
    }
  }
  training_accuracy_ = static_cast<double>(hits) / static_cast<double>(gallery.size());
  gallery_.resize(static_cast<Eigen::Index>(gallery.size()), config.feature_dim);
  for (std::size_t i = 0; i < gallery.size(); ++i) gallery_.row(static_cast<Eigen::Index>(i)) = features(gallery[i].sketch);
}

Matrix RetrievalBaseline::features(const Image& sketch) {
  nn::Graph g;
  const Image* one[] = {&sketch};
  return net_->features(g, g.constant(sketch_batch(one, net_->config.image_size))).value();
}

RetrievalBaseline::Match RetrievalBaseline::nearest(const Image& sketch) {
  const Matrix f = features(sketch);
  Match best;
  best.distance = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < gallery_.rows(); ++i) {
    const double d = (gallery_.row(i) - f.row(0)).cast<double>().norm();
    const auto idx = static_cast<std::size_t>(i);
    if (d < best.distance || (d == best.distance && ids_[idx] < best.object_id)) {
      best = {ids_[idx], idx, d};
    }
  }
  return best;
}

TriangleMesh RetrievalBaseline::retrieve(const Image& sketch) { return import_mesh(meshes_[nearest(sketch).index]); }

EvalReport evaluate_retrieval(RetrievalBaseline& baseline, std::span<const SampleRecord> records,
                              const EvalOptions& options) {
  if (records.empty()) throw std::invalid_argument("evaluate_retrieval: no records");
  EvalReport report;
  report.mode = "retrieval";
  report.voxel_resolution = options.voxel_resolution;
  MeshCache meshes;
  for (const auto& r : limited(records, options.max_records)) {
    const TriangleMesh m = baseline.retrieve(r.sketch);
    accumulate(report.per_class[r.class_label], m, meshes.get(r), r, r.view, options);
  }
  finish_report(report);
  return report;
}

// --------------------------------------------------------------- ablation

std::vector<AblationVariant> standard_ablation_variants() {
  return {{"full", true, true, true},
          {"no-RVR", false, false, true},
          {"no-SD", true, false, true},
          {"no-MS", true, true, false}};
}

TrainingConfig apply_variant(const TrainingConfig& base, const AblationVariant& v) {
  TrainingConfig c = base;
  if (!v.random_view) c.weights.random_view = 0.0;
  if (!v.shape_discriminator) c.weights.shape_discriminator = 0.0;
  if (!v.multi_scale) {
    c.level_start_epochs.assign(static_cast<std::size_t>(c.pyramid_levels), -1);
    c.level_start_epochs.back() = 0;
  }
  c.validate();
  return c;
}

std::vector<AblationResult> run_ablation(std::span<const SampleRecord> train, std::span<const SampleRecord> test,
                                         const TrainingConfig& base, std::span<const AblationVariant> variants,
                                         const EvalOptions& options,
                                         const std::optional<std::filesystem::path>& out_dir) {
  std::vector<AblationResult> results;
  for (const auto& v : variants) {
    const TrainingConfig c = apply_variant(base, v);
    std::optional<std::filesystem::path> dir;
    if (out_dir) dir = *out_dir / v.name;
    TrainOutcome trained = train_on_records(train, c, dir);
    AblationResult r;
    r.variant = v;
    r.config_hash = config_hash(c);
    r.gt_view = evaluate(trained.model, test, ViewMode::kGroundTruth, options, r.config_hash);
    r.pred_view = evaluate(trained.model, test, ViewMode::kPredicted, options, r.config_hash);
    results.push_back(std::move(r));
  }
  return results;
}

nlohmann::json to_json(const AblationResult& r) {
  return {{"variant",
           {{"name", r.variant.name},
            {"rvr", r.variant.random_view},
            {"sd", r.variant.shape_discriminator},
            {"ms", r.variant.multi_scale}}},
          {"config_hash", r.config_hash},
          {"gt_view", to_json(r.gt_view)},
          {"pred_view", to_json(r.pred_view)}};
}

// ------------------------------------------------------- domain probe

namespace {

Matrix encode_features(SketchModel& model, std::span<const Image* const> images) {
  Matrix out(static_cast<Eigen::Index>(images.size()), model.config().feature_dim);
  const std::size_t chunk = 32;
  for (std::size_t i = 0; i < images.size(); i += chunk) {
    const auto n = std::min(chunk, images.size() - i);
    nn::Graph g;
    Var z = model.encode(g, g.constant(sketch_batch(images.subspan(i, n), model.config().image_size))).z;
    out.middleRows(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(n)) = z.value();
  }
  return out;
}

}  // namespace

double domain_accuracy(SketchModel& model, std::span<const Image* const> synthetic, std::span<const Image* const> hand) {
  if (synthetic.empty() || hand.empty()) throw std::invalid_argument("domain_accuracy: empty set");
  double sum = 0.0;
  for (int domain = 0; domain < 2; ++domain) {
    const Matrix z = encode_features(model, domain == 0 ? synthetic : hand);
    nn::Graph g;
    const Matrix logits = model.domain_logits(g, g.constant(z)).value();
    std::size_t correct = 0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) correct += (logits(i, 0) > 0) == (domain == 0);
    sum += static_cast<double>(correct) / static_cast<double>(logits.rows());
  }
  return sum / 2.0;
}

double fit_domain_discriminator(SketchModel& model, std::span<const Image* const> synth_train,
                                std::span<const Image* const> hand_train, std::span<const Image* const> synth_test,
                                std::span<const Image* const> hand_test, int steps, float learning_rate,
                                std::uint64_t seed) {
  if (synth_train.empty() || hand_train.empty()) throw std::invalid_argument("fit_domain_discriminator: empty set");
  const Matrix zs = encode_features(model, synth_train);
  const Matrix zh = encode_features(model, hand_train);
  nn::Adam opt(model.domain_discriminator_parameters(), {learning_rate});
  Rng rng(seed);
  const int batch = 32;
  for (int s = 0; s < steps; ++s) {
    Matrix bs(batch, zs.cols()), bh(batch, zh.cols());
    for (int i = 0; i < batch; ++i) {
      bs.row(i) = zs.row(static_cast<Eigen::Index>(rng.index(static_cast<std::uint64_t>(zs.rows()))));
      bh.row(i) = zh.row(static_cast<Eigen::Index>(rng.index(static_cast<std::uint64_t>(zh.rows()))));
    }
    nn::Graph g;
    Var loss = binary_cross_entropy(g, model.domain_logits(g, g.constant(bs)), model.domain_logits(g, g.constant(bh)));
    opt.zero_grad();
    g.backward(loss);
    opt.step();
  }
  return domain_accuracy(model, synth_test, hand_test);
}

}  // namespace viewsketch
