#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <set>
#include <sstream>

#include "toy_fixtures.hpp"
#include "viewsketch/evaluation.hpp"
#include "viewsketch/rasterizer.hpp"

namespace vs = viewsketch;
namespace nn = viewsketch::nn;

namespace {

// Fraction of cell centers of an n^3 grid over the padded joint box that lie
// in both boxes versus either.
double box_iou_oracle(const vs::Vec3& a0, const vs::Vec3& a1, const vs::Vec3& b0, const vs::Vec3& b1, int n) {
  const vs::Vec3 lo = a0.cwiseMin(b0), hi = a1.cwiseMax(b1);
  const double extent = (hi - lo).maxCoeff() * 1.02;
  const vs::Vec3 origin = 0.5 * (lo + hi) - vs::Vec3::Constant(extent / 2);
  auto inside = [](const vs::Vec3& p, const vs::Vec3& lo, const vs::Vec3& hi) {
    return (p.array() > lo.array()).all() && (p.array() < hi.array()).all();
  };
  int inter = 0, uni = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) {
        const vs::Vec3 p = origin + extent / n * vs::Vec3(i + 0.5, j + 0.5, k + 0.5);
        const bool ia = inside(p, a0, a1), ib = inside(p, b0, b1);
        inter += ia && ib;
        uni += ia || ib;
      }
  return static_cast<double>(inter) / uni;
}

vs::TriangleMesh square_at(double z) {
  vs::TriangleMesh m;
  m.vertices.resize(4, 3);
  m.vertices << 0, 0, z, 1, 0, z, 1, 1, z, 0, 1, z;
  m.faces.resize(2, 3);
  m.faces << 0, 1, 2, 0, 2, 3;
  return m;
}

std::vector<const vs::Image*> pointers(const std::vector<vs::Image>& v) {
  std::vector<const vs::Image*> out;
  for (const auto& i : v) out.push_back(&i);
  return out;
}

vs::ClassifierConfig tiny_classifier() {
  vs::ClassifierConfig c;
  c.image_size = 32;
  c.stem_pool = 1;
  c.conv_channels = {8, 16};
  c.feature_dim = 16;
  c.epochs = 3;
  c.batch_size = 4;
  return c;
}

}  // namespace

TEST(VoxelIou, IdenticalAndDisjoint) {
  const auto a = vs::make_box({0, 0, 0}, {1, 1, 1});
  EXPECT_DOUBLE_EQ(vs::voxel_iou(a, a).value, 1.0);
  const auto far = vs::make_box({2, 0, 0}, {3, 1, 1});
  EXPECT_DOUBLE_EQ(vs::voxel_iou(a, far).value, 0.0);
}

TEST(VoxelIou, HalfShiftedCubesMatchCellCenterOracle) {
  const vs::Vec3 a0(0, 0, 0), a1(1, 1, 1), b0(0.5, 0, 0), b1(1.5, 1, 1);
  const double got = vs::voxel_iou(vs::make_box(a0, a1), vs::make_box(b0, b1), 32).value;
  EXPECT_NEAR(got, box_iou_oracle(a0, a1, b0, b1, 32), 0.02);
  EXPECT_NEAR(got, 1.0 / 3.0, 0.05);
}

TEST(VoxelIou, SymmetricAndDegenerate) {
  const auto a = vs::make_box({0, 0, 0}, {1, 1, 1});
  const auto b = vs::make_box({0.2, 0.3, 0.1}, {0.9, 1.4, 0.6});
  EXPECT_DOUBLE_EQ(vs::voxel_iou(a, b).value, vs::voxel_iou(b, a).value);
  const auto none = vs::voxel_iou(vs::TriangleMesh{}, vs::TriangleMesh{});
  EXPECT_TRUE(none.degenerate);
  EXPECT_DOUBLE_EQ(none.value, 1.0);
  EXPECT_DOUBLE_EQ(vs::voxel_iou(a, vs::TriangleMesh{}).value, 0.0);
}

TEST(Chamfer, ParallelPointGridsGiveSquaredOffset) {
  std::vector<vs::Vec3> a, b;
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 10; ++j) {
      a.emplace_back(i * 0.1, j * 0.1, 0.0);
      b.emplace_back(i * 0.1, j * 0.1, 0.05);
    }
  EXPECT_NEAR(vs::chamfer_distance(a, b), 0.05 * 0.05 * vs::kChamferScale, 1e-9);
  EXPECT_DOUBLE_EQ(vs::chamfer_distance(a, a), 0.0);
}

TEST(Chamfer, ParallelSquares) {
  const double d = 0.1;
  const double c = vs::chamfer_distance(square_at(0), square_at(d), 4096);
  EXPECT_GE(c, d * d * vs::kChamferScale);
  EXPECT_LT(c, d * d * vs::kChamferScale * 1.05);
  EXPECT_NEAR(vs::chamfer_distance(square_at(d), square_at(0), 4096, 2, 1), c, 1e-9);
}

TEST(Chamfer, Errors) {
  EXPECT_THROW(vs::chamfer_distance(square_at(0), square_at(0), 100), std::invalid_argument);
  EXPECT_THROW(vs::chamfer_distance(std::vector<vs::Vec3>{}, std::vector<vs::Vec3>{{0, 0, 0}}),
               std::invalid_argument);
}

TEST(SilhouetteIou, SelfAndEmpty) {
  vs::TriangleMesh s = vs::load_template(2);
  s.vertices *= 0.4;
  const auto v = vs::Viewpoint::from_degrees(20, 30);
  const auto target = vs::hard_silhouette(s, v, 32);
  EXPECT_GT(vs::silhouette_iou_2d(s, v, target), 0.98);
  EXPECT_DOUBLE_EQ(vs::silhouette_iou_2d(vs::TriangleMesh{}, v, target), 0.0);
}

TEST(RandomViewError, TwoViewsAverageHalfTheirDistance) {
  const std::vector<vs::Viewpoint> pool{vs::Viewpoint::from_degrees(0, 0), vs::Viewpoint::from_degrees(0, 90)};
  EXPECT_NEAR(vs::random_view_error(pool), std::numbers::pi / 4, 1e-9);
  EXPECT_THROW(vs::random_view_error(std::vector<vs::Viewpoint>{}), std::invalid_argument);
}

TEST(ViewMode, StringRoundTrip) {
  for (auto m : {vs::ViewMode::kPredicted, vs::ViewMode::kGroundTruth, vs::ViewMode::kSpecified}) {
    EXPECT_EQ(vs::view_mode_from_string(vs::to_string(m)), m);
  }
  EXPECT_THROW(vs::view_mode_from_string("best-view"), std::invalid_argument);
}

TEST(Predict, ModesChooseTheDecoderView) {
  vs::SketchModel m(toy::tiny_network(), 1);
  const vs::Image s(32, 32, 1.0f);
  const auto v = vs::Viewpoint::from_degrees(10, 40);
  const auto pred = vs::predict(m, s, vs::ViewMode::kPredicted);
  EXPECT_EQ(pred.used_view.elevation, pred.predicted_view.elevation);
  const auto gt = vs::predict(m, s, vs::ViewMode::kGroundTruth, v);
  EXPECT_EQ(gt.used_view.azimuth, v.azimuth);
  EXPECT_THROW(vs::predict(m, s, vs::ViewMode::kSpecified), std::invalid_argument);
}

TEST(Evaluate, UnweightedClassMeanAndCsv) {
  const auto dir = toy::scratch("eval_report");
  auto records = toy::chair_records(3, 1, 32, 2, 31, dir);
  records[0].class_label = "table";
  vs::SketchModel m(toy::tiny_network(), 2);
  vs::EvalOptions opts;
  opts.chamfer_points = 512;
  const auto r = vs::evaluate(m, records, vs::ViewMode::kGroundTruth, opts, "h", "d");
  ASSERT_EQ(r.per_class.size(), 2u);
  EXPECT_EQ(r.per_class.at("chair").count, 2u);
  EXPECT_EQ(r.per_class.at("table").count, 1u);
  const double expected = 0.5 * (r.per_class.at("chair").voxel_iou + r.per_class.at("table").voxel_iou);
  EXPECT_NEAR(r.mean.voxel_iou, expected, 1e-12);
  EXPECT_EQ(r.mode, "gt-view");

  std::istringstream csv(vs::to_csv(r));
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(csv, line)) lines.push_back(line);
  ASSERT_EQ(lines.size(), 4u);
  EXPECT_EQ(lines.back().rfind("mean,", 0), 0u);
  EXPECT_EQ(vs::to_json(r)["config_hash"], "h");
  EXPECT_THROW(vs::evaluate(m, records, vs::ViewMode::kSpecified), std::invalid_argument);
}

TEST(Evaluate, TrainedModelBeatsUntrained) {
  auto records = toy::chair_records(2, 3, 32, 2, 32);
  vs::TrainingConfig c = toy::tiny_training();
  c.epochs = 12;
  c.checkpoint_every = 0;
  c.learning_rate = 3e-3f;
  vs::SketchModel untrained(c.network, vs::mix_seed(c.seed, 1));
  const double before = vs::mean_silhouette_iou(untrained, records);
  auto outcome = vs::train_on_records(records, c, std::nullopt);
  EXPECT_GT(vs::mean_silhouette_iou(outcome.model, records), before + 0.05);
}

TEST(Retrieval, SelfQueryFindsItself) {
  const auto dir = toy::scratch("retrieval");
  const auto gallery = toy::chair_records(3, 2, 32, 1, 33, dir);
  vs::RetrievalBaseline a(gallery, tiny_classifier(), 4);
  for (std::size_t i = 0; i < gallery.size(); ++i) {
    const auto match = a.nearest(gallery[i].sketch);
    EXPECT_EQ(match.object_id, gallery[i].object_id);
    EXPECT_DOUBLE_EQ(match.distance, 0.0);
  }
  vs::RetrievalBaseline b(gallery, tiny_classifier(), 4);
  EXPECT_TRUE((a.features(gallery[0].sketch).array() == b.features(gallery[0].sketch).array()).all());
  const auto report = vs::evaluate_retrieval(a, gallery);
  EXPECT_NEAR(report.mean.voxel_iou, 1.0, 1e-12);
}

TEST(Retrieval, EmptyGalleryThrows) {
  EXPECT_THROW(vs::RetrievalBaseline({}, tiny_classifier(), 1), std::invalid_argument);
}

TEST(Ablation, VariantsChangeTheConfig) {
  const vs::TrainingConfig base = toy::tiny_training();
  std::set<std::string> hashes;
  for (const auto& v : vs::standard_ablation_variants()) hashes.insert(vs::config_hash(vs::apply_variant(base, v)));
  EXPECT_EQ(hashes.size(), 4u);
  vs::AblationVariant no_ms{"no-MS", true, true, false};
  const auto c = vs::apply_variant(base, no_ms);
  EXPECT_EQ(c.level_weights(0), (std::vector<double>{0, 1}));
  vs::AblationVariant no_rvr{"no-RVR", false, false, true};
  EXPECT_EQ(vs::apply_variant(base, no_rvr).weights.random_view, 0.0);
}

TEST(DomainProbe, SeparatesDistinctDomains) {
  vs::SketchModel m(toy::tiny_network(), 5);
  vs::Rng rng(6);
  std::vector<vs::Image> synth, hand;
  for (int i = 0; i < 40; ++i) {
    vs::Image a(32, 32, 1.0f), b(32, 32, 1.0f);
    for (int k = 0; k < 60; ++k) {
      b(static_cast<int>(rng.index(32)), static_cast<int>(rng.index(32))) = 0.0f;
      const int r = static_cast<int>(rng.index(32));
      a(r, r) = 0.0f;
    }
    synth.push_back(std::move(a));
    hand.push_back(std::move(b));
  }
  const auto s = pointers(synth), h = pointers(hand);
  const std::span<const vs::Image* const> st(s.data(), 30), sv(s.data() + 30, 10);
  const std::span<const vs::Image* const> ht(h.data(), 30), hv(h.data() + 30, 10);
  EXPECT_GT(vs::fit_domain_discriminator(m, st, ht, sv, hv, 200, 3e-3f, 7), 0.9);
  EXPECT_GT(vs::domain_accuracy(m, sv, hv), 0.9);
}

TEST(DomainProbe, ConstantDiscriminatorScoresHalfOnUnbalancedSets) {
  vs::SketchModel m(toy::tiny_network(), 5);
  for (auto* p : m.domain_discriminator_parameters()) p->value.setZero();  // every logit 0: "hand"
  std::vector<vs::Image> synth(9, vs::Image(32, 32, 1.0f)), hand(3, vs::Image(32, 32, 1.0f));
  EXPECT_DOUBLE_EQ(vs::domain_accuracy(m, pointers(synth), pointers(hand)), 0.5);
}
