#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>

#include "toy_fixtures.hpp"
#include "viewsketch/hash.hpp"
#include "viewsketch/rasterizer.hpp"
#include "viewsketch/training.hpp"

namespace vs = viewsketch;
namespace nn = viewsketch::nn;

namespace {

struct StepFixture {
  vs::TrainingConfig config = toy::tiny_training();
  std::vector<vs::SampleRecord> records = toy::chair_records(2, 2, 32, 2, 21);
  std::vector<const vs::SampleRecord*> batch;
  std::vector<double> levels{1.0, 1.0};

  StepFixture() {
    for (const auto& r : records) batch.push_back(&r);
  }
  vs::StepInputs inputs(std::uint64_t seed = 5) const { return {batch, {}, levels, seed}; }
  vs::ViewSampler sampler() const { return vs::make_random_view_sampler(config, records); }
};

vs::StepResult one_step(StepFixture& f, vs::SketchModel& model) {
  nn::Adam opt(model.parameters(), {f.config.learning_rate});
  return vs::train_step(model, opt, f.inputs(), f.config, f.sampler());
}

std::string model_hash(vs::SketchModel& m) { return std::to_string(nn::parameter_hash(m.parameters())); }

}  // namespace

TEST(Schedule, DefaultThirds) {
  vs::TrainingConfig c;
  c.epochs = 300;
  EXPECT_EQ(c.level_weights(0), (std::vector<double>{1, 0, 0}));
  EXPECT_EQ(c.level_weights(99), (std::vector<double>{1, 0, 0}));
  EXPECT_EQ(c.level_weights(100), (std::vector<double>{1, 1, 0}));
  EXPECT_EQ(c.level_weights(199), (std::vector<double>{1, 1, 0}));
  EXPECT_EQ(c.level_weights(200), (std::vector<double>{1, 1, 1}));
}

TEST(Schedule, ExplicitStarts) {
  vs::TrainingConfig c;
  c.level_start_epochs = {0, 5, 7};
  EXPECT_EQ(c.level_weights(6), (std::vector<double>{1, 1, 0}));
  EXPECT_EQ(c.level_weights(7), (std::vector<double>{1, 1, 1}));
}

TEST(Schedule, SingleScaleUsesFinestOnly) {
  vs::TrainingConfig c;
  c.level_start_epochs = {-1, -1, 0};
  for (int e : {0, 15, 29}) EXPECT_EQ(c.level_weights(e), (std::vector<double>{0, 0, 1}));
}

TEST(Schedule, NeverEmpty) {
  vs::TrainingConfig c;
  c.level_start_epochs = {-1, -1, -1};
  EXPECT_EQ(c.level_weights(3), (std::vector<double>{0, 0, 1}));
}

TEST(TrainingConfig, JsonRoundTripKeepsHash) {
  vs::TrainingConfig c = toy::tiny_training();
  c.weights.random_view = 0.7;
  c.level_start_epochs = {0, 3};
  const auto back = vs::training_config_from_json(vs::to_json(c));
  EXPECT_EQ(vs::config_hash(back), vs::config_hash(c));
  c.seed = 1;
  EXPECT_NE(vs::config_hash(back), vs::config_hash(c));
}

TEST(TrainingConfig, RejectsInvalid) {
  vs::TrainingConfig c = toy::tiny_training();
  c.level_start_epochs = {0};
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = toy::tiny_training();
  c.random_view_strategy = "sphere";
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = toy::tiny_training();
  c.weights.view = -1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(TrainStep, RenderCallsFollowActiveLevels) {
  StepFixture f;
  vs::SketchModel m(f.config.network, 1);
  // Two renders per active level when the random branch is on.
  EXPECT_EQ(one_step(f, m).render_calls, 4 * 2 * 2);
  f.levels = {0.0, 1.0};
  vs::SketchModel m2(f.config.network, 1);
  EXPECT_EQ(one_step(f, m2).render_calls, 4 * 1 * 2);
  f.config.weights.random_view = 0.0;
  vs::SketchModel m3(f.config.network, 1);
  const auto r = one_step(f, m3);
  EXPECT_EQ(r.render_calls, 4);
  EXPECT_EQ(r.components.shape_discriminator.value(), 0.0);
}

TEST(TrainStep, TotalIsTheWeightedSum) {
  StepFixture f;
  vs::SketchModel m(f.config.network, 2);
  const auto r = one_step(f, m);
  const auto& c = r.components;
  const auto& w = f.config.weights;
  const double expected = *c.progressive_silhouette + *c.regularizer + w.view * *c.view +
                          w.view_reconstruction * *c.view_reconstruction +
                          w.shape_discriminator * *c.shape_discriminator;
  EXPECT_NEAR(r.total, expected, 1e-6);
  EXPECT_GT(*c.shape_discriminator, 0.0);
  EXPECT_FALSE(c.domain_discriminator.has_value());
}

TEST(TrainStep, DomainTermOnlyWithHandDrawnInput) {
  StepFixture f;
  f.config.domain_adaptation = true;
  const vs::Image hand(32, 32, 1.0f);
  std::vector<const vs::Image*> hb{&hand, &hand};
  vs::SketchModel m(f.config.network, 3);
  nn::Adam opt(m.parameters(), {f.config.learning_rate});
  vs::StepInputs in = f.inputs();
  in.hand_drawn = hb;
  const auto r = vs::train_step(m, opt, in, f.config, f.sampler());
  ASSERT_TRUE(r.components.domain_discriminator.has_value());
  EXPECT_NEAR(r.total,
              vs::total_loss(r.components, f.config.weights, true), 1e-9);
}

TEST(TrainStep, Deterministic) {
  StepFixture f;
  vs::SketchModel a(f.config.network, 4), b(f.config.network, 4);
  const auto ra = one_step(f, a);
  const auto rb = one_step(f, b);
  EXPECT_EQ(ra.total, rb.total);
  EXPECT_EQ(model_hash(a), model_hash(b));
}

TEST(TrainStep, NonFiniteLossLeavesParametersUntouched) {
  StepFixture f;
  f.config.weights.view = std::numeric_limits<double>::quiet_NaN();
  vs::SketchModel m(f.config.network, 6);
  const std::string before = model_hash(m);
  try {
    one_step(f, m);
    FAIL() << "expected NonFiniteLoss";
  } catch (const vs::NonFiniteLoss& e) {
    EXPECT_TRUE(e.components().view.has_value());
    EXPECT_NE(std::string(e.what()).find("view"), std::string::npos);
  }
  EXPECT_EQ(model_hash(m), before);
}

TEST(TrainStep, RejectsMismatchedLevels) {
  StepFixture f;
  f.levels = {1.0};
  vs::SketchModel m(f.config.network, 7);
  EXPECT_THROW(one_step(f, m), std::invalid_argument);
}

TEST(GradientReversal, FlipsOnlyWhatFlowsBelowIt) {
  vs::SketchModel m(toy::tiny_network(), 8);
  nn::Matrix off = nn::Matrix::Constant(1, 3 * m.num_vertices(), 0.01f);
  auto grads = [&](bool reverse) {
    for (auto* p : m.parameters()) p->zero_grad();
    nn::Graph g;
    nn::Var x = g.input(off);
    g.backward(m.shape_logits(g, reverse ? g.grad_reverse(x) : x));
    return std::pair{nn::Matrix(x.grad()), nn::Matrix(m.shape_discriminator_parameters()[0]->grad)};
  };
  const auto [x_plain, d_plain] = grads(false);
  const auto [x_rev, d_rev] = grads(true);
  EXPECT_GT(x_plain.cwiseAbs().maxCoeff(), 0.0f);
  EXPECT_TRUE(x_rev.isApprox(-x_plain));
  EXPECT_TRUE(d_rev.isApprox(d_plain));
}

TEST(TrainStep, SilhouetteLossDecreases) {
  StepFixture f;
  f.config.learning_rate = 3e-3f;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    vs::SketchModel m(f.config.network, seed);
    nn::Adam opt(m.parameters(), {f.config.learning_rate});
    const auto sampler = f.sampler();
    std::vector<double> l;
    for (int s = 0; s < 60; ++s) {
      l.push_back(*vs::train_step(m, opt, f.inputs(seed * 100 + s), f.config, sampler).components.progressive_silhouette);
    }
    const double head = (l[0] + l[1] + l[2]) / 3, tail = (l[57] + l[58] + l[59]) / 3;
    EXPECT_LT(tail, head - 0.05) << "seed " << seed;
  }
}

TEST(ViewPretrain, ReducesRoundTripLoss) {
  vs::SketchModel m(toy::tiny_network(), 9);
  const double first = vs::pretrain_view_autoencoder(m, 1, 32, 1e-3f, 1);
  const double later = vs::pretrain_view_autoencoder(m, 300, 32, 1e-3f, 2);
  EXPECT_LT(later, first * 0.5);
}

TEST(TrainOnRecords, ZeroEpochsKeepsInitialParameters) {
  vs::TrainingConfig c = toy::tiny_training();
  c.epochs = 0;
  c.seed = 3;
  const auto records = toy::chair_records(2, 2, 32, 2, 22);
  auto outcome = vs::train_on_records(records, c, std::nullopt);
  vs::SketchModel fresh(c.network, vs::mix_seed(3, 1));
  EXPECT_EQ(model_hash(outcome.model), model_hash(fresh));
  EXPECT_EQ(outcome.steps, 0);
}

TEST(TrainOnRecords, ResumeMatchesUninterruptedRun) {
  vs::TrainingConfig c = toy::tiny_training();
  c.epochs = 3;
  const auto records = toy::chair_records(3, 2, 32, 2, 23);
  const auto full_dir = toy::scratch("train_full");
  const auto resumed_dir = toy::scratch("train_resumed");
  auto full = vs::train_on_records(records, c, full_dir);
  vs::TrainControl stop;
  stop.stop_after_epochs = 1;
  auto partial = vs::train_on_records(records, c, resumed_dir, {}, stop);
  EXPECT_EQ(partial.steps, 2);
  auto resumed = vs::train_on_records(records, c, resumed_dir);
  EXPECT_EQ(resumed.steps, full.steps);
  EXPECT_EQ(model_hash(resumed.model), model_hash(full.model));

  std::ifstream log(full_dir / "train_log.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_TRUE(j.contains("total"));
    EXPECT_TRUE(j.contains("active_levels"));
    ++lines;
  }
  EXPECT_EQ(lines, 6);

  // The written bundle reproduces the in-memory model exactly.
  auto bundle = vs::load_bundle(full_dir / "bundle");
  EXPECT_EQ(model_hash(bundle.model), model_hash(full.model));
  EXPECT_EQ(bundle.info.config_hash, vs::config_hash(c));
}

TEST(TrainOnRecords, ResumeRefusesADifferentConfig) {
  vs::TrainingConfig c = toy::tiny_training();
  const auto records = toy::chair_records(2, 2, 32, 2, 24);
  const auto dir = toy::scratch("train_mismatch");
  vs::TrainControl stop;
  stop.stop_after_epochs = 1;
  vs::train_on_records(records, c, dir, {}, stop);
  c.learning_rate = 5e-4f;
  EXPECT_THROW(vs::train_on_records(records, c, dir), std::runtime_error);
}

TEST(Overfit, SphereFromEightViews) {
  vs::TriangleMesh target = vs::load_template(3);
  target.vertices *= 0.4;
  std::vector<vs::Viewpoint> views;
  std::vector<vs::Silhouette> sils;
  for (int k = 0; k < 8; ++k) {
    views.push_back(vs::Viewpoint::from_degrees(k % 2 ? 30 : -10, 45.0 * k));
    sils.push_back(vs::hard_silhouette(target, views.back(), 32));
  }
  vs::OverfitConfig c;
  c.template_subdivision = 2;
  c.steps = 300;
  const auto r = vs::overfit_single_object(sils, views, c);
  EXPECT_GT(r.mean_iou, 0.95);
  EXPECT_EQ(r.steps, 300);

  c.laplacian_weight *= 100;
  c.flatten_weight *= 100;
  const auto smooth = vs::overfit_single_object(sils, views, c);
  EXPECT_LT(smooth.final_laplacian, r.final_laplacian);
}

TEST(Overfit, NeedsEightViews) {
  std::vector<vs::Viewpoint> views(7);
  std::vector<vs::Silhouette> sils(7, vs::Silhouette(16, 16, 0.0f));
  EXPECT_THROW(vs::overfit_single_object(sils, views, {}), std::invalid_argument);
}

TEST(Overfit, ReportsDivergence) {
  std::vector<vs::Viewpoint> views;
  std::vector<vs::Silhouette> sils;
  const vs::TriangleMesh target = vs::load_template(1);
  for (int k = 0; k < 8; ++k) {
    views.push_back(vs::Viewpoint::from_degrees(0, 45.0 * k));
    sils.push_back(vs::hard_silhouette(target, views.back(), 16));
  }
  vs::OverfitConfig c;
  c.template_subdivision = 1;
  c.learning_rate = 5.0f;
  c.steps = 200;
  c.divergence_window = 10;
  EXPECT_THROW(vs::overfit_single_object(sils, views, c), std::runtime_error);
}
