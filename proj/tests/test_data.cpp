#include <gtest/gtest.h>

#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>

#include "viewsketch/data.hpp"

namespace vs = viewsketch;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("vs_data_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Number of connected components of pixels where `pred` holds.
template <class Pred>
int components(const vs::Image& img, bool eight, Pred pred) {
  const int H = img.height(), W = img.width();
  std::vector<int> label(static_cast<std::size_t>(H) * W, -1);
  int n = 0;
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) {
      if (!pred(img(r, c)) || label[static_cast<std::size_t>(r) * W + c] >= 0) continue;
      std::deque<std::pair<int, int>> q{{r, c}};
      label[static_cast<std::size_t>(r) * W + c] = n;
      while (!q.empty()) {
        auto [y, x] = q.front();
        q.pop_front();
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            if ((dy == 0 && dx == 0) || (!eight && dy != 0 && dx != 0)) continue;
            const int yy = y + dy, xx = x + dx;
            if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
            auto& l = label[static_cast<std::size_t>(yy) * W + xx];
            if (l < 0 && pred(img(yy, xx))) {
              l = n;
              q.emplace_back(yy, xx);
            }
          }
      }
      ++n;
    }
  return n;
}

vs::Image disk(int size, double radius, float inside = 0.0f, float outside = 1.0f) {
  vs::Image img(size, size, outside);
  const double c = (size - 1) / 2.0;
  for (int r = 0; r < size; ++r)
    for (int col = 0; col < size; ++col)
      if (std::hypot(r - c, col - c) <= radius) img(r, col) = inside;
  return img;
}

std::size_t stroke_count(const vs::Image& sketch) {
  std::size_t n = 0;
  for (float p : sketch.pixels()) n += p < 0.5f;
  return n;
}

vs::RgbaImage rgba(int h, int w, std::uint8_t alpha) {
  vs::RgbaImage img(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      auto* p = img.pixel(r, c);
      p[0] = p[1] = p[2] = 100;
      p[3] = alpha;
    }
  return img;
}

std::vector<vs::SyntheticObject> toy_objects(int n, std::uint64_t seed) {
  vs::Rng rng(seed);
  std::vector<vs::SyntheticObject> out;
  for (int i = 0; i < n; ++i) {
    out.push_back({"obj" + std::to_string(i), vs::make_toy_chair(rng), i % 2 == 0 ? "train" : "test"});
  }
  return out;
}

vs::RenderOptions small_render() {
  vs::RenderOptions o;
  o.image_size = 64;
  o.silhouette_size = 64;
  o.views_per_object = 3;
  return o;
}

}  // namespace

// ------------------------------------------------------------------ canny

TEST(Canny, DiskGivesOneClosedRing) {
  const vs::Image edges = vs::canny_edges(disk(64, 20.0));
  auto stroke = [](float p) { return p < 0.5f; };
  auto page = [](float p) { return p >= 0.5f; };
  EXPECT_EQ(components(edges, true, stroke), 1);
  // A closed curve splits the background into inside and outside.
  EXPECT_EQ(components(edges, false, page), 2);
}

TEST(Canny, RingSitsOnTheDiskBoundary) {
  const vs::Image edges = vs::canny_edges(disk(64, 20.0));
  for (int r = 0; r < 64; ++r)
    for (int c = 0; c < 64; ++c)
      if (edges(r, c) < 0.5f) EXPECT_NEAR(std::hypot(r - 31.5, c - 31.5), 20.0, 2.0);
}

TEST(Canny, ConstantImageHasNoEdges) {
  bool blank = false;
  const vs::Image edges = vs::canny_edges(vs::Image(32, 32, 0.3f), {}, &blank);
  EXPECT_TRUE(blank);
  EXPECT_EQ(stroke_count(edges), 0u);
  EXPECT_FLOAT_EQ(edges.min_value(), 1.0f);
}

TEST(Canny, EdgeCountNonIncreasingInThresholds) {
  vs::Rng rng(3);
  vs::Image img(64, 64);
  for (auto& p : img.pixels()) p = static_cast<float>(rng.uniform());
  const vs::Image base = disk(64, 18.0, 0.2f, 0.9f);
  for (std::size_t i = 0; i < img.size(); ++i) img.pixels()[i] = 0.7f * base.pixels()[i] + 0.3f * img.pixels()[i];
  const auto low = stroke_count(vs::canny_edges(img, {0.1, 0.2, 1.0}));
  const auto high = stroke_count(vs::canny_edges(img, {0.3, 0.6, 1.0}));
  EXPECT_GT(low, 0u);
  EXPECT_LE(high, low);
}

TEST(Canny, RejectsInvertedThresholds) {
  EXPECT_THROW(vs::canny_edges(vs::Image(8, 8), {0.5, 0.2, 1.0}), std::invalid_argument);
}

TEST(EdgeSketch, BlankRenderingGivesBlankSketch) {
  bool blank = false;
  const vs::Image s = vs::edge_sketch(rgba(16, 16, 0), {}, &blank);
  EXPECT_TRUE(blank);
  EXPECT_EQ(stroke_count(s), 0u);
}

TEST(EdgeSketch, Deterministic) {
  vs::Rng rng(1);
  const auto chair = vs::make_toy_chair(rng);
  vs::SoftRasterSettings s;
  s.height = s.width = 96;
  const auto render = vs::render_shaded(chair, vs::Viewpoint::from_degrees(20, 45), s);
  EXPECT_EQ(vs::edge_sketch(render), vs::edge_sketch(render));
}

// ------------------------------------------------------------- silhouette

TEST(SilhouetteFromRendering, OpaqueIsAllOnes) {
  const auto s = vs::silhouette_from_rendering(rgba(8, 8, 255));
  EXPECT_DOUBLE_EQ(s.sum(), 64.0);
}

TEST(SilhouetteFromRendering, EmptyAlphaIsAllZeros) {
  EXPECT_DOUBLE_EQ(vs::silhouette_from_rendering(rgba(8, 8, 0)).sum(), 0.0);
}

TEST(SilhouetteFromRendering, AreaIsAlphaAboveHalfCount) {
  vs::Rng rng(4);
  auto img = rgba(16, 16, 0);
  int expected = 0;
  for (int r = 0; r < 16; ++r)
    for (int c = 0; c < 16; ++c) {
      const auto a = static_cast<std::uint8_t>(rng.index(256));
      img.pixel(r, c)[3] = a;
      expected += a / 255.0 > 0.5;
    }
  EXPECT_DOUBLE_EQ(vs::silhouette_from_rendering(img).sum(), expected);
}

TEST(SilhouetteFromRendering, BackgroundColorWithoutAlpha) {
  auto img = rgba(4, 4, 255);
  img.has_alpha = false;
  img.pixel(1, 2)[0] = 7;
  EXPECT_THROW(vs::silhouette_from_rendering(img), std::invalid_argument);
  const auto s = vs::silhouette_from_rendering(img, std::array<std::uint8_t, 3>{100, 100, 100});
  EXPECT_DOUBLE_EQ(s.sum(), 1.0);
  EXPECT_EQ(s(1, 2), 1.0f);
}

// ---------------------------------------------------------------- pyramid

TEST(Pyramid, SingleLevelIsInput) {
  vs::Silhouette s = vs::binarize(disk(16, 5.0, 1.0f, 0.0f));
  const auto p = vs::build_pyramid(s, 1);
  ASSERT_EQ(p.num_levels(), 1);
  EXPECT_EQ(p.finest(), s);
}

TEST(Pyramid, AllOnesStaysAllOnes) {
  const auto p = vs::build_pyramid(vs::Silhouette(128, 128, 1.0f), 3);
  ASSERT_EQ(p.num_levels(), 3);
  EXPECT_EQ(p.levels[0].height(), 32);
  EXPECT_EQ(p.levels[1].height(), 64);
  for (const auto& l : p.levels) EXPECT_DOUBLE_EQ(l.sum(), static_cast<double>(l.size()));
}

TEST(Pyramid, CheckerboardTiesRoundUp) {
  vs::Silhouette s(8, 8);
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c) s(r, c) = static_cast<float>((r + c) % 2);
  const auto p = vs::build_pyramid(s, 2);
  EXPECT_DOUBLE_EQ(p.levels[0].sum(), 16.0);
}

TEST(Pyramid, CoarseLevelsAreDownsampledFinerLevels) {
  const auto p = vs::build_pyramid(vs::binarize(disk(64, 17.3, 1.0f, 0.0f)), 3);
  for (int i = 0; i + 1 < p.num_levels(); ++i) {
    const auto& fine = p.levels[static_cast<std::size_t>(i) + 1];
    const auto& coarse = p.levels[static_cast<std::size_t>(i)];
    for (int r = 0; r < coarse.height(); ++r)
      for (int c = 0; c < coarse.width(); ++c) {
        const double mean = (fine(2 * r, 2 * c) + fine(2 * r + 1, 2 * c) + fine(2 * r, 2 * c + 1) +
                             fine(2 * r + 1, 2 * c + 1)) / 4.0;
        EXPECT_EQ(coarse(r, c), mean >= 0.5 ? 1.0f : 0.0f);
      }
  }
}

TEST(Pyramid, NonDivisibleResolutionThrows) {
  EXPECT_THROW(vs::build_pyramid(vs::Silhouette(36, 36), 4), std::invalid_argument);
  EXPECT_THROW(vs::build_pyramid(vs::Silhouette(8, 8), 0), std::invalid_argument);
}

// ---------------------------------------------------------------- sampler

TEST(ViewSampler, FixedSeedReproduces) {
  const auto s = vs::ViewSampler::uniform_range({});
  vs::Rng a(9), b(9);
  for (int i = 0; i < 20; ++i) {
    const auto va = s.sample(a), vb = s.sample(b);
    EXPECT_EQ(va.elevation, vb.elevation);
    EXPECT_EQ(va.azimuth, vb.azimuth);
  }
  EXPECT_EQ(vs::sample_random_view(s, 5).azimuth, vs::sample_random_view(s, 5).azimuth);
}

TEST(ViewSampler, DatasetViewsMatchPoolFrequencies) {
  // The pool holds one view twice, so its expected share doubles.
  std::vector<vs::Viewpoint> pool;
  for (int i = 0; i < 9; ++i) pool.push_back(vs::Viewpoint::from_degrees(5.0 * i, 30.0 * i - 120.0));
  pool.push_back(pool[0]);
  const auto s = vs::ViewSampler::dataset_views(pool);
  vs::Rng rng(11);
  const int n = 10000;
  std::map<double, int> counts;
  for (int i = 0; i < n; ++i) ++counts[s.sample(rng).azimuth];
  ASSERT_EQ(counts.size(), 9u);
  double chi2 = 0;
  for (int i = 0; i < 9; ++i) {
    const double expected = n * (i == 0 ? 2.0 : 1.0) / 10.0;
    const double d = counts[pool[static_cast<std::size_t>(i)].azimuth] - expected;
    chi2 += d * d / expected;
  }
  // 8 degrees of freedom: mean 8, sd 4; accept within mean + 3 sd.
  EXPECT_LT(chi2, 8.0 + 3.0 * 4.0);
}

TEST(ViewSampler, UniformRangeStaysInside) {
  vs::ViewRange range;
  range.elevation_min = -std::numbers::pi / 6;
  range.elevation_max = std::numbers::pi / 6;
  const auto s = vs::ViewSampler::uniform_range(range);
  vs::Rng rng(12);
  for (int i = 0; i < 5000; ++i) {
    const auto v = s.sample(rng);
    EXPECT_GE(v.elevation, range.elevation_min);
    EXPECT_LE(v.elevation, range.elevation_max);
    EXPECT_GE(v.azimuth, -std::numbers::pi);
    EXPECT_LT(v.azimuth, std::numbers::pi);
  }
}

TEST(ViewSampler, EmptyPoolThrows) {
  EXPECT_THROW(vs::ViewSampler::dataset_views({}), std::invalid_argument);
}

// ---------------------------------------------------------------- dataset

TEST(Dataset, EmptyDirectoryThrows) {
  const auto dir = scratch_dir("empty");
  EXPECT_THROW(vs::load_manifest(dir), std::runtime_error);
}

TEST(Dataset, RecordCountAndRoundTrip) {
  const auto dir = scratch_dir("roundtrip");
  auto opts = small_render();
  opts.views_per_object = 20;
  const auto objects = toy_objects(2, 21);
  vs::write_synthetic_dataset(dir, "chair", objects, opts, 5, "toy chairs");

  const auto m = vs::load_manifest(dir);
  EXPECT_EQ(m.provenance, "toy chairs");
  EXPECT_EQ(m.record_count("train", "chair"), 20u);
  vs::LoadReport report;
  const auto records = vs::load_dataset(m, "train", "chair", {1, std::nullopt}, &report);
  ASSERT_EQ(records.size(), 20u);
  EXPECT_EQ(report.skipped_corrupt, 0u);

  // Re-render the first view and compare with what was stored.
  const auto& r = records.front();
  EXPECT_EQ(r.object_id, "obj0");
  ASSERT_TRUE(r.mesh_path.has_value());
  const auto mesh = vs::import_mesh(*r.mesh_path);
  const auto fresh = vs::render_training_view(mesh, r.view, opts);
  const auto sil = r.pyramid.finest();
  double sil_diff = 0;
  for (std::size_t i = 0; i < sil.size(); ++i) sil_diff += std::abs(sil.pixels()[i] - fresh.silhouette.pixels()[i]);
  EXPECT_LE(sil_diff, 2.0);  // OBJ text and view.json round to ~1e-6
  EXPECT_TRUE(r.view.is_normalized());

  // Stored PNG pixels come back bit-for-bit.
  const auto again = vs::load_dataset(m, "train", "chair", {1, std::nullopt});
  for (std::size_t i = 0; i < records.size(); ++i) EXPECT_EQ(records[i].sketch, again[i].sketch);
}

TEST(Dataset, ShuffleIsReproducible) {
  const auto dir = scratch_dir("shuffle");
  vs::write_synthetic_dataset(dir, "chair", toy_objects(2, 22), small_render(), 5, "toy");
  const auto m = vs::load_manifest(dir);
  const auto a = vs::load_dataset(m, "train", "chair", {1, 77});
  const auto b = vs::load_dataset(m, "train", "chair", {1, 77});
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].object_id, b[i].object_id);
    EXPECT_EQ(a[i].view_index, b[i].view_index);
  }
}

TEST(Dataset, SplitsAreDisjoint) {
  const auto dir = scratch_dir("splits");
  const auto m = vs::write_synthetic_dataset(dir, "chair", toy_objects(4, 23), small_render(), 5, "toy");
  for (const auto& id : m.object_ids("train", "chair")) {
    const auto test = m.object_ids("test", "chair");
    EXPECT_EQ(std::find(test.begin(), test.end(), id), test.end());
  }
}

TEST(Dataset, MissingFilesAreListed) {
  const auto dir = scratch_dir("missing");
  const auto m = vs::write_synthetic_dataset(dir, "chair", toy_objects(1, 24), small_render(), 5, "toy");
  const auto victim = vs::view_prefix(dir, "chair", "train", "obj0", 1).string() + ".sil.png";
  fs::remove(victim);
  try {
    vs::load_dataset(m, "train", "chair", {});
    FAIL() << "expected an error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("view_1.sil.png"), std::string::npos) << e.what();
  }
}

TEST(Dataset, CorruptFilesAreSkippedAndCounted) {
  const auto dir = scratch_dir("corrupt");
  const auto m = vs::write_synthetic_dataset(dir, "chair", toy_objects(1, 25), small_render(), 5, "toy");
  std::ofstream(vs::view_prefix(dir, "chair", "train", "obj0", 2).string() + ".sketch.png") << "not a png";
  vs::LoadReport report;
  const auto records = vs::load_dataset(m, "train", "chair", {1, std::nullopt}, &report);
  EXPECT_EQ(records.size(), 2u);
  EXPECT_EQ(report.skipped_corrupt, 1u);
}

TEST(Dataset, UnknownSplitOrClassThrows) {
  const auto dir = scratch_dir("unknown");
  const auto m = vs::write_synthetic_dataset(dir, "chair", toy_objects(1, 26), small_render(), 5, "toy");
  EXPECT_THROW(vs::load_dataset(m, "val", "chair", {}), std::runtime_error);
  EXPECT_THROW(vs::load_dataset(m, "train", "table", {}), std::runtime_error);
}

TEST(Dataset, ViewJsonRoundTrip) {
  const auto dir = scratch_dir("viewjson");
  const auto v = vs::Viewpoint::from_degrees(12.5, -170.0);
  vs::write_view_json(dir / "v.json", v);
  const auto back = vs::read_view_json(dir / "v.json");
  EXPECT_NEAR(back.elevation, v.elevation, 1e-12);
  EXPECT_NEAR(back.azimuth, v.azimuth, 1e-12);
}

TEST(UnlabeledSketches, PadsToSquareInSortedOrder) {
  const auto dir = scratch_dir("pool");
  vs::write_png(vs::Image(20, 10, 0.0f), dir / "b.png");
  vs::write_png(vs::Image(16, 16, 0.5f), dir / "a.png");
  std::ofstream(dir / "notes.txt") << "ignored";
  const auto pool = vs::load_unlabeled_sketches(dir, 32);
  ASSERT_EQ(pool.size(), 2u);
  EXPECT_EQ(pool[0].height(), 32);
  EXPECT_NEAR(pool[0](16, 16), 0.5, 1.0 / 255);
  // The 20x10 image is padded left and right with white.
  EXPECT_FLOAT_EQ(pool[1](16, 0), 1.0f);
  EXPECT_FLOAT_EQ(pool[1](16, 16), 0.0f);
}

TEST(UnlabeledSketches, MissingDirectoryThrows) {
  EXPECT_THROW(vs::load_unlabeled_sketches("/nonexistent/sketches"), std::runtime_error);
}

// -------------------------------------------------------- synthetic build

TEST(SyntheticViews, StrokesLieNearSilhouetteBoundary) {
  vs::Rng rng(31);
  vs::RenderOptions opts;
  opts.image_size = opts.silhouette_size = 128;
  const vs::ViewSampler sampler = vs::ViewSampler::uniform_range(opts.view_range);
  for (int k = 0; k < 4; ++k) {
    const auto chair = vs::make_toy_chair(rng);
    const auto view = sampler.sample(rng);
    const auto rv = vs::render_training_view(chair, view, opts);
    ASSERT_GT(stroke_count(rv.sketch), 50u);
    // Dilate the silhouette and its complement by 2 px; the boundary band is
    // where both dilations overlap. Interior crease edges are also contours
    // of the rendering, so strokes must at least touch the dilated shape.
    const auto& s = rv.silhouette;
    const int n = s.height();
    std::size_t outside = 0;
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c) {
        if (rv.sketch(r, c) >= 0.5f) continue;
        bool near_shape = false;
        for (int dr = -2; dr <= 2 && !near_shape; ++dr)
          for (int dc = -2; dc <= 2 && !near_shape; ++dc) {
            const int rr = r + dr, cc = c + dc;
            near_shape = rr >= 0 && rr < n && cc >= 0 && cc < n && s(rr, cc) > 0.5f;
          }
        outside += !near_shape;
      }
    EXPECT_EQ(outside, 0u) << "view " << k;
  }
}

TEST(SyntheticViews, OuterContourIsCovered) {
  // Every silhouette boundary pixel has a stroke within 2 px.
  vs::Rng rng(32);
  vs::RenderOptions opts;
  opts.image_size = opts.silhouette_size = 128;
  const auto chair = vs::make_toy_chair(rng);
  const auto rv = vs::render_training_view(chair, vs::Viewpoint::from_degrees(20, 35), opts);
  const auto& s = rv.silhouette;
  const int n = s.height();
  std::size_t boundary = 0, covered = 0;
  for (int r = 1; r + 1 < n; ++r)
    for (int c = 1; c + 1 < n; ++c) {
      if (s(r, c) < 0.5f) continue;
      if (s(r - 1, c) > 0.5f && s(r + 1, c) > 0.5f && s(r, c - 1) > 0.5f && s(r, c + 1) > 0.5f) continue;
      ++boundary;
      bool hit = false;
      for (int dr = -2; dr <= 2 && !hit; ++dr)
        for (int dc = -2; dc <= 2 && !hit; ++dc) hit = rv.sketch(r + dr, c + dc) < 0.5f;
      covered += hit;
    }
  ASSERT_GT(boundary, 100u);
  EXPECT_GE(static_cast<double>(covered) / boundary, 0.97);
}

TEST(ToyChair, ClosedAndInsideUnitCube) {
  vs::Rng rng(41);
  for (int i = 0; i < 10; ++i) {
    const auto chair = vs::make_toy_chair(rng);
    EXPECT_TRUE(vs::is_closed(chair));
    const auto b = vs::bounding_box(chair);
    EXPECT_GE(b.min.minCoeff(), -0.5);
    EXPECT_LE(b.max.maxCoeff(), 0.5);
  }
}

TEST(ToyChair, FitsInFrameFromDatasetViews) {
  vs::Rng rng(42);
  const auto sampler = vs::ViewSampler::uniform_range({});
  for (int i = 0; i < 10; ++i) {
    const auto chair = vs::make_toy_chair(rng);
    const auto s = vs::hard_silhouette(chair, sampler.sample(rng), 64);
    for (int k = 0; k < 64; ++k) {
      EXPECT_EQ(s(0, k), 0.0f);
      EXPECT_EQ(s(63, k), 0.0f);
      EXPECT_EQ(s(k, 0), 0.0f);
      EXPECT_EQ(s(k, 63), 0.0f);
    }
  }
}

TEST(HandDrawnStyle, ChangesStrokesButKeepsLayout) {
  vs::Rng rng(51);
  vs::RenderOptions opts;
  opts.image_size = opts.silhouette_size = 128;
  const auto chair = vs::make_toy_chair(rng);
  const auto rv = vs::render_training_view(chair, vs::Viewpoint::from_degrees(15, 40), opts);
  const auto styled = vs::hand_drawn_style(rv.sketch, rng);
  EXPECT_NE(styled, rv.sketch);
  EXPECT_GT(stroke_count(styled), stroke_count(rv.sketch));
  EXPECT_EQ(styled.height(), 128);
}

TEST(SyntheticViews, SilhouetteOnlyEdgesHugTheBoundary) {
  // Without shading, every edge is a silhouette contour.
  vs::Rng rng(33);
  const auto chair = vs::make_toy_chair(rng);
  const auto s = vs::hard_silhouette(chair, vs::Viewpoint::from_degrees(10, -60), 128);
  vs::RgbaImage render(128, 128);
  for (int r = 0; r < 128; ++r)
    for (int c = 0; c < 128; ++c) {
      auto* p = render.pixel(r, c);
      p[0] = p[1] = p[2] = 80;
      p[3] = s(r, c) > 0.5f ? 255 : 0;
    }
  const auto sketch = vs::edge_sketch(render);
  ASSERT_GT(stroke_count(sketch), 50u);
  for (int r = 0; r < 128; ++r)
    for (int c = 0; c < 128; ++c) {
      if (sketch(r, c) >= 0.5f) continue;
      bool fg = false, bg = false;
      for (int dr = -2; dr <= 2; ++dr)
        for (int dc = -2; dc <= 2; ++dc) {
          const int rr = std::clamp(r + dr, 0, 127), cc = std::clamp(c + dc, 0, 127);
          (s(rr, cc) > 0.5f ? fg : bg) = true;
        }
      EXPECT_TRUE(fg && bg) << r << "," << c;
    }
}
