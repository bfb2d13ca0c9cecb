#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "viewsketch/data.hpp"
#include "viewsketch/networks.hpp"
#include "viewsketch/training.hpp"

namespace viewsketch {

// ---------------------------------------------------------------- metrics

struct VoxelIou {
  double value = 0.0;
  bool degenerate = false;  // both meshes voxelize to nothing; value is 1
};

// Both meshes are voxelized on one cubic grid spanning their joint bounding box.
VoxelIou voxel_iou(const TriangleMesh& a, const TriangleMesh& b, int resolution = 32);

inline constexpr double kChamferScale = 1000.0;

// 0.5 * (mean_a min_b |a-b|^2 + mean_b min_a |a-b|^2) * kChamferScale over
// sample_surface point sets. Throws for n < 256 or a zero-area mesh.
double chamfer_distance(const TriangleMesh& a, const TriangleMesh& b, int n_points = 2048, std::uint64_t seed_a = 1,
                        std::uint64_t seed_b = 2);
// Brute-force Chamfer between explicit point sets (same scaling).
double chamfer_distance(std::span<const Vec3> a, std::span<const Vec3> b);

// 1 - iou_loss(S, hard silhouette of the mesh at `view`), at S's resolution.
double silhouette_iou_2d(const TriangleMesh& mesh, const Viewpoint& view, const Silhouette& target);

// Angle between view directions, averaged over records.
double mean_view_error(SketchModel& model, std::span<const SampleRecord> records);
// Expected error of a predictor drawing uniformly from `pool` against targets
// drawn uniformly from `pool`: the mean over all ordered pairs.
double random_view_error(std::span<const Viewpoint> pool);

// ------------------------------------------------------------- prediction

enum class ViewMode { kPredicted, kGroundTruth, kSpecified };
std::string to_string(ViewMode m);
ViewMode view_mode_from_string(const std::string& s);

struct Prediction {
  TriangleMesh mesh;
  Viewpoint predicted_view;  // always filled
  Viewpoint used_view;
};

// M = D(z_s, E_v(V)) with V = V_hat, the given ground truth, or the specified view.
Prediction predict(SketchModel& model, const Image& sketch, ViewMode mode,
                   const std::optional<Viewpoint>& view = std::nullopt);

// ----------------------------------------------------------------- report

struct ClassMetrics {
  double voxel_iou = 0.0;
  double chamfer = 0.0;
  double silhouette_iou = 0.0;
  double view_error = 0.0;  // radians
  std::size_t count = 0;
};

struct EvalReport {
  std::string mode;
  std::string config_hash;
  std::string dataset_id;
  std::map<std::string, ClassMetrics> per_class;
  ClassMetrics mean;  // unweighted over classes
  double chamfer_scale = kChamferScale;
  int voxel_resolution = 32;
};

nlohmann::json to_json(const EvalReport& r);
// Header row then one row per class and a final "mean" row.
std::string to_csv(const EvalReport& r);

struct EvalOptions {
  int voxel_resolution = 32;
  int chamfer_points = 2048;
  bool compute_chamfer = true;
  std::size_t max_records = 0;  // 0: all
};

std::string dataset_id(const DatasetManifest& m);

// Meshes of records are read from their mesh_path (cached per object).
EvalReport evaluate(SketchModel& model, std::span<const SampleRecord> records, ViewMode mode,
                    const EvalOptions& options = {}, const std::string& config_hash = {},
                    const std::string& dataset = {});

// 2D IoU of D(z_s, E_v(V~)) rendered at V~ against the record's silhouette,
// for `per_record` views V~ drawn from `sampler`.
double specified_view_silhouette_iou(SketchModel& model, std::span<const SampleRecord> records,
                                     const ViewSampler& sampler, int per_record, std::uint64_t seed);

// -------------------------------------------------------------- retrieval

struct ClassifierConfig {
  int image_size = 224;
  int stem_pool = 2;
  std::vector<int> conv_channels = {16, 32, 64, 64};
  int feature_dim = 128;
  int epochs = 10;
  int batch_size = 16;
  float learning_rate = 1e-3f;
};

// Nearest neighbour in the feature space of a sketch classifier trained on
// the gallery; labels are object ids (or classes when there are several).
class RetrievalBaseline {
 public:
  RetrievalBaseline(std::span<const SampleRecord> gallery, const ClassifierConfig& config, std::uint64_t seed);

  struct Match {
    std::string object_id;
    std::size_t index = 0;  // into the gallery
    double distance = 0.0;
  };
  Match nearest(const Image& sketch);
  TriangleMesh retrieve(const Image& sketch);
  nn::Matrix features(const Image& sketch);
  double training_accuracy() const { return training_accuracy_; }

 private:
  struct Net;
  std::shared_ptr<Net> net_;
  std::vector<std::string> ids_;
  std::vector<std::filesystem::path> meshes_;
  nn::Matrix gallery_;  // one feature row per gallery sketch
  double training_accuracy_ = 0.0;
};

EvalReport evaluate_retrieval(RetrievalBaseline& baseline, std::span<const SampleRecord> records,
                              const EvalOptions& options = {});

// --------------------------------------------------------------- ablation

struct AblationVariant {
  std::string name;
  bool random_view = true;     // RVR
  bool shape_discriminator = true;  // SD
  bool multi_scale = true;     // MS
};

std::vector<AblationVariant> standard_ablation_variants();
// Applies the variant switches to a base config.
TrainingConfig apply_variant(const TrainingConfig& base, const AblationVariant& v);

struct AblationResult {
  AblationVariant variant;
  std::string config_hash;
  EvalReport gt_view;
  EvalReport pred_view;
};

// Trains and evaluates each variant with the same seed and data.
std::vector<AblationResult> run_ablation(std::span<const SampleRecord> train, std::span<const SampleRecord> test,
                                         const TrainingConfig& base, std::span<const AblationVariant> variants,
                                         const EvalOptions& options = {},
                                         const std::optional<std::filesystem::path>& out_dir = std::nullopt);
nlohmann::json to_json(const AblationResult& r);

// ------------------------------------------------------- domain probe

// Held-out accuracy of the model's domain discriminator at separating
// synthetic (label 1) from hand-drawn (label 0) features, averaged over the
// two domains so a constant prediction scores 0.5.
double domain_accuracy(SketchModel& model, std::span<const Image* const> synthetic, std::span<const Image* const> hand);

// Trains only the domain discriminator on frozen encoder features, then
// reports its accuracy on the held-out sets.
double fit_domain_discriminator(SketchModel& model, std::span<const Image* const> synth_train,
                                std::span<const Image* const> hand_train, std::span<const Image* const> synth_test,
                                std::span<const Image* const> hand_test, int steps, float learning_rate,
                                std::uint64_t seed);

}  // namespace viewsketch
