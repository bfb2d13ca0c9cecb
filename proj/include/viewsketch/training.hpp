#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "viewsketch/data.hpp"
#include "viewsketch/losses.hpp"
#include "viewsketch/networks.hpp"

namespace viewsketch {

struct TrainingConfig {
  std::string class_label = "chair";
  NetworkConfig network;
  LossWeights weights;
  float learning_rate = 1e-4f;
  int batch_size = 8;
  int epochs = 30;
  int pyramid_levels = 3;
  // Epoch from which pyramid level i (coarsest first) is active; -1 = never.
  // Empty: level i starts at i * epochs / levels.
  std::vector<int> level_start_epochs;
  double raster_sigma = 1e-4;
  // Random views V_r: "dataset" (views present in the training records) or "uniform".
  std::string random_view_strategy = "dataset";
  ViewRange random_view_range;
  int view_reconstruction_batch = 64;  // fresh uniform views per step for L_vr
  int view_pretrain_steps = 0;         // view-autoencoder warm start before training
  bool domain_adaptation = false;
  std::string unlabeled_pool;          // directory of hand-drawn sketches
  int domain_adaptation_epochs = 0;    // fine-tuning epochs after synthetic training
  int validation_objects = 0;          // training objects held out for model selection
  int checkpoint_every = 5;            // epochs; 0 disables periodic checkpoints
  std::uint64_t seed = 0;

  void validate() const;
  // Level weights for one epoch; always at least one active level.
  std::vector<double> level_weights(int epoch) const;
};

nlohmann::json to_json(const TrainingConfig& c);
TrainingConfig training_config_from_json(const nlohmann::json& j);
TrainingConfig load_training_config(const std::filesystem::path& path);
std::string config_hash(const TrainingConfig& c);
nlohmann::json to_json(const LossWeights& w);
LossWeights loss_weights_from_json(const nlohmann::json& j);

// Every view that appears in the records, in record order.
std::vector<Viewpoint> view_pool(std::span<const SampleRecord> records);
ViewSampler make_random_view_sampler(const TrainingConfig& c, std::span<const SampleRecord> records);

// Thrown when the total loss is not finite; parameters are left untouched.
class NonFiniteLoss : public std::runtime_error {
 public:
  NonFiniteLoss(const std::string& what, LossComponents components)
      : std::runtime_error(what), components_(components) {}
  const LossComponents& components() const { return components_; }

 private:
  LossComponents components_;
};

struct StepResult {
  LossComponents components;
  double total = 0.0;
  int render_calls = 0;
  std::vector<double> level_losses;  // batch means
};

struct StepInputs {
  std::span<const SampleRecord* const> batch;
  std::span<const Image* const> hand_drawn;  // used when domain adaptation is on
  std::span<const double> level_weights;
  std::uint64_t seed = 0;                    // drives V_r and the L_vr views
};

// One forward pass, one backward pass of the weighted total and one Adam
// update of every parameter.
StepResult train_step(SketchModel& model, nn::Adam& optimizer, const StepInputs& inputs, const TrainingConfig& config,
                      const ViewSampler& random_views);

// Fits the view autoencoder alone on uniform views over the full sphere.
// Returns the mean round-trip loss of the last step.
double pretrain_view_autoencoder(SketchModel& model, int steps, int batch, float learning_rate, std::uint64_t seed);

struct TrainOutcome {
  SketchModel model;
  BundleInfo info;
  std::vector<nlohmann::json> log;
  double best_validation = 0.0;  // mean silhouette IoU on held-out objects (or training records)
  std::int64_t steps = 0;
};

struct TrainControl {
  int stop_after_epochs = -1;  // stop early (as if interrupted) after this many epochs of this run
};

// Trains one class. With `out_dir`, writes train_log.jsonl, periodic
// checkpoints (resumed from if present) and the best bundle under best/.
TrainOutcome train_on_records(std::span<const SampleRecord> records, const TrainingConfig& config,
                              const std::optional<std::filesystem::path>& out_dir,
                              std::span<const Image> hand_drawn = {}, const TrainControl& control = {});
TrainOutcome train_model(const DatasetManifest& manifest, const TrainingConfig& config,
                         const std::filesystem::path& out_dir);

// Domain-adaptation fine-tuning: each step pairs one synthetic batch with one
// batch of unlabeled hand-drawn sketches.
void fine_tune_domain(SketchModel& model, nn::Adam& optimizer, std::span<const SampleRecord> records,
                      std::span<const Image> hand_drawn, const TrainingConfig& config, int epochs,
                      std::int64_t* step_counter, std::vector<nlohmann::json>* log);

// Mean 2D silhouette IoU of D(z_s, E_v(V)) rendered at the record's view V
// against the finest pyramid level.
double mean_silhouette_iou(SketchModel& model, std::span<const SampleRecord> records);

// ------------------------------------------------------------ direct fit

struct OverfitConfig {
  int template_subdivision = 3;
  double template_radius = 0.5;
  int steps = 2000;
  float learning_rate = 0.01f;
  double laplacian_weight = 3.0;
  double flatten_weight = 0.1;
  double raster_sigma = 1e-4;
  int divergence_window = 100;
};

struct OverfitResult {
  TriangleMesh mesh;
  std::vector<double> view_iou;  // hard-silhouette IoU per view
  double mean_iou = 0.0;
  double final_silhouette_loss = 0.0;
  double final_laplacian = 0.0;
  double final_flatten = 0.0;
  int steps = 0;
};

// Optimizes per-vertex template offsets directly so the soft renderings match
// the silhouettes. Needs at least 8 views; throws on divergence.
OverfitResult overfit_single_object(std::span<const Silhouette> silhouettes, std::span<const Viewpoint> views,
                                    const OverfitConfig& config);

}  // namespace viewsketch
