#include "viewsketch/data.hpp"

#include "viewsketch/hash.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <iostream>
#include <numbers>
#include <stdexcept>

namespace viewsketch {

// ------------------------------------------------------------- image ops

namespace {

Image gaussian_blur(const Image& in, double sigma) {
  if (sigma <= 0) return in;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) {
    k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[static_cast<std::size_t>(i + radius)];
  }
  for (auto& v : k) v /= sum;
  const int H = in.height(), W = in.width();
  Image tmp(H, W), out(H, W);
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) {
      double acc = 0;
      for (int i = -radius; i <= radius; ++i) acc += k[static_cast<std::size_t>(i + radius)] * in(r, std::clamp(c + i, 0, W - 1));
      tmp(r, c) = static_cast<float>(acc);
    }
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) {
      double acc = 0;
      for (int i = -radius; i <= radius; ++i) acc += k[static_cast<std::size_t>(i + radius)] * tmp(std::clamp(r + i, 0, H - 1), c);
      out(r, c) = static_cast<float>(acc);
    }
  return out;
}

}  // namespace

Image canny_edges(const Image& gray, const CannyOptions& options, bool* blank) {
  if (!(options.low >= 0 && options.high >= options.low)) {
    throw std::invalid_argument("canny_edges: need 0 <= low <= high");
  }
  const int H = gray.height(), W = gray.width();
  const Image g = gaussian_blur(gray, options.sigma);
  auto at = [&](int r, int c) { return static_cast<double>(g(std::clamp(r, 0, H - 1), std::clamp(c, 0, W - 1))); };
  std::vector<double> mag(static_cast<std::size_t>(H) * W), gx(mag.size()), gy(mag.size());
  double max_mag = 0;
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) {
      const double x = (at(r - 1, c + 1) + 2 * at(r, c + 1) + at(r + 1, c + 1)) -
                       (at(r - 1, c - 1) + 2 * at(r, c - 1) + at(r + 1, c - 1));
      const double y = (at(r + 1, c - 1) + 2 * at(r + 1, c) + at(r + 1, c + 1)) -
                       (at(r - 1, c - 1) + 2 * at(r - 1, c) + at(r - 1, c + 1));
      const auto k = static_cast<std::size_t>(r) * W + c;
      gx[k] = x;
      gy[k] = y;
      mag[k] = std::hypot(x, y);
      max_mag = std::max(max_mag, mag[k]);
    }
  Image out(H, W, 1.0f);
  const bool is_blank = max_mag < 1e-9;
  if (blank) *blank = is_blank;
  if (is_blank) return out;
  for (auto& m : mag) m /= max_mag;

  // Non-maximum suppression along the quantized gradient direction.
  std::vector<double> thin(mag.size(), 0.0);
  auto mag_at = [&](int r, int c) {
    if (r < 0 || r >= H || c < 0 || c >= W) return 0.0;
    return mag[static_cast<std::size_t>(r) * W + c];
  };
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) {
      const auto k = static_cast<std::size_t>(r) * W + c;
      const double m = mag[k];
      if (m < options.low) continue;
      double angle = std::atan2(gy[k], gx[k]) * 180.0 / std::numbers::pi;
      if (angle < 0) angle += 180.0;
      int dr, dc;
      if (angle < 22.5 || angle >= 157.5) {
        dr = 0, dc = 1;
      } else if (angle < 67.5) {
        dr = 1, dc = 1;
      } else if (angle < 112.5) {
        dr = 1, dc = 0;
      } else {
        dr = 1, dc = -1;
      }
      if (m >= mag_at(r + dr, c + dc) && m >= mag_at(r - dr, c - dc)) thin[k] = m;
    }

  // Hysteresis: weak pixels survive when 8-connected to a strong one.
  std::vector<std::uint8_t> state(mag.size(), 0);  // 1 weak, 2 edge
  std::deque<std::pair<int, int>> queue;
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) {
      const auto k = static_cast<std::size_t>(r) * W + c;
      if (thin[k] >= options.high) {
        state[k] = 2;
        queue.emplace_back(r, c);
      } else if (thin[k] >= options.low && thin[k] > 0) {
        state[k] = 1;
      }
    }
  while (!queue.empty()) {
    const auto [r, c] = queue.front();
    queue.pop_front();
    for (int dr = -1; dr <= 1; ++dr)
      for (int dc = -1; dc <= 1; ++dc) {
        const int rr = r + dr, cc = c + dc;
        if (rr < 0 || rr >= H || cc < 0 || cc >= W) continue;
        const auto k = static_cast<std::size_t>(rr) * W + cc;
        if (state[k] == 1) {
          state[k] = 2;
          queue.emplace_back(rr, cc);
        }
      }
  }
  for (std::size_t k = 0; k < state.size(); ++k)
    if (state[k] == 2) out.pixels()[k] = 0.0f;
  return out;
}

Image edge_sketch(const RgbaImage& rendering, const CannyOptions& options, bool* blank) {
  Image page(rendering.height, rendering.width, 1.0f);
  for (int r = 0; r < rendering.height; ++r)
    for (int c = 0; c < rendering.width; ++c) {
      const auto* p = rendering.pixel(r, c);
      const double a = rendering.has_alpha ? p[3] / 255.0 : 1.0;
      const double luma = (0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]) / 255.0;
      page(r, c) = static_cast<float>(a * luma + (1.0 - a));
    }
  bool is_blank = false;
  Image out = canny_edges(page, options, &is_blank);
  if (blank) *blank = is_blank;
  if (is_blank) std::cerr << "warning: edge_sketch: blank rendering gives a blank sketch\n";
  return out;
}

Silhouette silhouette_from_rendering(const RgbaImage& rendering, std::optional<std::array<std::uint8_t, 3>> background) {
  if (!rendering.has_alpha && !background) {
    throw std::invalid_argument("silhouette_from_rendering: rendering has no alpha and no background color was given");
  }
  Silhouette s(rendering.height, rendering.width);
  for (int r = 0; r < rendering.height; ++r)
    for (int c = 0; c < rendering.width; ++c) {
      const auto* p = rendering.pixel(r, c);
      bool fg;
      if (rendering.has_alpha) {
        fg = p[3] / 255.0 > 0.5;
      } else {
        fg = p[0] != (*background)[0] || p[1] != (*background)[1] || p[2] != (*background)[2];
      }
      s(r, c) = fg ? 1.0f : 0.0f;
    }
  return s;
}

SilhouettePyramid build_pyramid(const Silhouette& finest, int levels) {
  if (levels < 1) throw std::invalid_argument("build_pyramid: need at least one level");
  const int f = 1 << (levels - 1);
  if (finest.height() % f != 0 || finest.width() % f != 0) {
    throw std::invalid_argument("build_pyramid: resolution " + std::to_string(finest.height()) + "x" +
                                std::to_string(finest.width()) + " is not divisible by " + std::to_string(f));
  }
  SilhouettePyramid p;
  p.levels.resize(static_cast<std::size_t>(levels));
  p.levels.back() = finest;
  for (int i = levels - 2; i >= 0; --i) {
    p.levels[static_cast<std::size_t>(i)] = binarize(average_pool(p.levels[static_cast<std::size_t>(i) + 1], 2), 0.5f);
  }
  return p;
}

Image thicken_strokes(const Image& sketch, int radius) {
  if (radius <= 0) return sketch;
  const int H = sketch.height(), W = sketch.width();
  Image out(H, W, 1.0f);
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) {
      if (sketch(r, c) >= 0.5f) continue;
      for (int dr = -radius; dr <= radius; ++dr)
        for (int dc = -radius; dc <= radius; ++dc) {
          const int rr = r + dr, cc = c + dc;
          if (rr >= 0 && rr < H && cc >= 0 && cc < W) out(rr, cc) = std::min(out(rr, cc), sketch(r, c));
        }
    }
  return out;
}

// ------------------------------------------------------------ viewpoints

ViewSampler ViewSampler::dataset_views(std::vector<Viewpoint> pool) {
  if (pool.empty()) throw std::invalid_argument("ViewSampler: empty view pool");
  ViewSampler s;
  s.strategy_ = Strategy::kDatasetViews;
  s.pool_ = std::move(pool);
  return s;
}

ViewSampler ViewSampler::uniform_range(const ViewRange& range) {
  if (!(range.elevation_min <= range.elevation_max) || !(range.azimuth_min <= range.azimuth_max)) {
    throw std::invalid_argument("ViewSampler: empty view range");
  }
  ViewSampler s;
  s.strategy_ = Strategy::kUniformRange;
  s.range_ = range;
  return s;
}

Viewpoint ViewSampler::sample(Rng& rng) const {
  if (strategy_ == Strategy::kDatasetViews) return pool_[rng.index(pool_.size())];
  Viewpoint v;
  v.elevation = rng.uniform(range_.elevation_min, range_.elevation_max);
  v.azimuth = wrap_angle(rng.uniform(range_.azimuth_min, range_.azimuth_max));
  return v;
}

Viewpoint sample_random_view(const ViewSampler& sampler, std::uint64_t seed) {
  Rng rng(seed);
  return sampler.sample(rng);
}

// --------------------------------------------------------------- dataset

std::size_t DatasetManifest::record_count(const std::string& split, const std::string& class_label) const {
  std::size_t n = 0;
  auto s = splits.find(split);
  if (s == splits.end()) return 0;
  auto c = s->second.find(class_label);
  if (c == s->second.end()) return 0;
  for (const auto& [id, views] : c->second) n += views.size();
  return n;
}

std::vector<std::string> DatasetManifest::object_ids(const std::string& split, const std::string& class_label) const {
  std::vector<std::string> ids;
  auto s = splits.find(split);
  if (s == splits.end()) return ids;
  auto c = s->second.find(class_label);
  if (c == s->second.end()) return ids;
  for (const auto& [id, views] : c->second) ids.push_back(id);
  return ids;
}

nlohmann::json to_json(const DatasetManifest& m) {
  return {{"provenance", m.provenance},
          {"classes", m.classes},
          {"image_size", m.image_size},
          {"silhouette_size", m.silhouette_size},
          {"splits", m.splits}};
}

DatasetManifest load_manifest(const std::filesystem::path& root) {
  const auto path = root / "manifest.json";
  if (!std::filesystem::exists(root) || std::filesystem::is_empty(root)) {
    throw std::runtime_error("dataset directory " + root.string() + " is missing or empty");
  }
  std::ifstream in(path);
  if (!in) throw std::runtime_error("no manifest.json in " + root.string());
  const nlohmann::json j = nlohmann::json::parse(in);
  DatasetManifest m;
  m.root = root;
  m.provenance = j.value("provenance", std::string());
  m.classes = j.at("classes").get<std::vector<std::string>>();
  m.image_size = j.value("image_size", 224);
  m.silhouette_size = j.value("silhouette_size", 128);
  j.at("splits").get_to(m.splits);
  return m;
}

void save_manifest(const DatasetManifest& m) {
  std::filesystem::create_directories(m.root);
  std::ofstream out(m.root / "manifest.json");
  if (!out) throw std::runtime_error("cannot write manifest in " + m.root.string());
  out << to_json(m).dump(1) << '\n';
}

std::filesystem::path view_prefix(const std::filesystem::path& root, const std::string& class_label,
                                  const std::string& split, const std::string& object_id, int view) {
  return root / class_label / split / object_id / ("view_" + std::to_string(view));
}

std::filesystem::path mesh_path(const std::filesystem::path& root, const std::string& class_label,
                                const std::string& object_id) {
  return root / class_label / "meshes" / (object_id + ".obj");
}

void write_view_json(const std::filesystem::path& path, const Viewpoint& v) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << nlohmann::json{{"elevation_deg", v.elevation_deg()}, {"azimuth_deg", v.azimuth_deg()}}.dump() << '\n';
}

Viewpoint read_view_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  const nlohmann::json j = nlohmann::json::parse(in);
  return Viewpoint::from_degrees(j.at("elevation_deg").get<double>(), j.at("azimuth_deg").get<double>()).normalized();
}

namespace {

std::filesystem::path with_suffix(const std::filesystem::path& prefix, const char* suffix) {
  return prefix.string() + suffix;
}

}  // namespace

std::vector<SampleRecord> load_dataset(const DatasetManifest& manifest, const std::string& split,
                                       const std::string& class_label, const LoadOptions& options,
                                       LoadReport* report) {
  const auto sit = manifest.splits.find(split);
  if (sit == manifest.splits.end()) throw std::runtime_error("dataset has no split '" + split + "'");
  const auto cit = sit->second.find(class_label);
  if (cit == sit->second.end()) throw std::runtime_error("dataset split '" + split + "' has no class '" + class_label + "'");

  std::vector<std::string> missing;
  for (const auto& [id, views] : cit->second)
    for (int v : views) {
      const auto p = view_prefix(manifest.root, class_label, split, id, v);
      for (const char* s : {".sketch.png", ".sil.png", ".view.json"})
        if (!std::filesystem::exists(with_suffix(p, s))) missing.push_back(with_suffix(p, s).string());
    }
  if (!missing.empty()) {
    std::string msg = "dataset is missing " + std::to_string(missing.size()) + " file(s):";
    for (std::size_t i = 0; i < missing.size() && i < 20; ++i) msg += "\n  " + missing[i];
    if (missing.size() > 20) msg += "\n  ...";
    throw std::runtime_error(msg);
  }

  std::vector<SampleRecord> out;
  LoadReport rep;
  for (const auto& [id, views] : cit->second) {
    const auto mp = mesh_path(manifest.root, class_label, id);
    for (int v : views) {
      const auto p = view_prefix(manifest.root, class_label, split, id, v);
      try {
        SampleRecord r;
        r.sketch = read_png_gray(with_suffix(p, ".sketch.png"));
        if (r.sketch.height() != manifest.image_size || r.sketch.width() != manifest.image_size) {
          r.sketch = resize_pad_square(r.sketch, manifest.image_size, 1.0f);
        }
        r.pyramid = build_pyramid(binarize(read_png_gray(with_suffix(p, ".sil.png")), 0.5f), options.pyramid_levels);
        r.view = read_view_json(with_suffix(p, ".view.json"));
        r.class_label = class_label;
        r.object_id = id;
        r.view_index = v;
        if (std::filesystem::exists(mp)) r.mesh_path = mp;
        out.push_back(std::move(r));
      } catch (const std::exception& e) {
        ++rep.skipped_corrupt;
        std::cerr << "warning: skipping " << p.string() << ": " << e.what() << '\n';
      }
    }
  }
  rep.loaded = out.size();
  if (rep.skipped_corrupt > 0) std::cerr << "warning: skipped " << rep.skipped_corrupt << " corrupt record(s)\n";
  if (options.shuffle_seed) {
    Rng rng(*options.shuffle_seed);
    rng.shuffle(out.begin(), out.end());
  }
  if (report) *report = rep;
  return out;
}

std::vector<Image> load_unlabeled_sketches(const std::filesystem::path& dir, int size) {
  if (!std::filesystem::is_directory(dir)) throw std::runtime_error("sketch pool " + dir.string() + " is not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("sketch pool " + dir.string() + " has no PNG files");
  std::vector<Image> out;
  std::size_t skipped = 0;
  for (const auto& f : files) {
    try {
      out.push_back(resize_pad_square(read_png_gray(f), size, 1.0f));
    } catch (const std::exception& e) {
      ++skipped;
      std::cerr << "warning: skipping " << f.string() << ": " << e.what() << '\n';
    }
  }
  if (skipped > 0) std::cerr << "warning: skipped " << skipped << " unreadable sketch(es)\n";
  return out;
}

// -------------------------------------------------------- synthetic build

RenderedView render_training_view(const TriangleMesh& mesh, const Viewpoint& view, const RenderOptions& options) {
  SoftRasterSettings s;
  s.height = s.width = options.image_size;
  RenderedView out;
  out.sketch = thicken_strokes(edge_sketch(render_shaded(mesh, view, s), options.canny), options.stroke_radius);
  s.height = s.width = options.silhouette_size;
  out.silhouette = silhouette_from_rendering(render_shaded(mesh, view, s));
  return out;
}

DatasetManifest write_synthetic_dataset(const std::filesystem::path& root, const std::string& class_label,
                                        const std::vector<SyntheticObject>& objects, const RenderOptions& options,
                                        std::uint64_t seed, const std::string& provenance) {
  DatasetManifest m;
  m.root = root;
  if (std::filesystem::exists(root / "manifest.json")) m = load_manifest(root);
  m.provenance = provenance;
  if (std::find(m.classes.begin(), m.classes.end(), class_label) == m.classes.end()) m.classes.push_back(class_label);
  m.image_size = options.image_size;
  m.silhouette_size = options.silhouette_size;
  const ViewSampler sampler = ViewSampler::uniform_range(options.view_range);
  for (const auto& obj : objects) {
    if (obj.split != "train" && obj.split != "test") throw std::invalid_argument("split must be train or test");
    const auto mp = mesh_path(root, class_label, obj.object_id);
    std::filesystem::create_directories(mp.parent_path());
    export_mesh(obj.mesh, mp);
    Rng rng(mix_seed(seed, fnv1a(obj.object_id)));
    auto& views = m.splits[obj.split][class_label][obj.object_id];
    views.clear();
    for (int k = 0; k < options.views_per_object; ++k) {
      const Viewpoint v = sampler.sample(rng);
      const RenderedView rv = render_training_view(obj.mesh, v, options);
      const auto p = view_prefix(root, class_label, obj.split, obj.object_id, k);
      std::filesystem::create_directories(p.parent_path());
      write_png(rv.sketch, with_suffix(p, ".sketch.png"));
      write_png(rv.silhouette, with_suffix(p, ".sil.png"));
      write_view_json(with_suffix(p, ".view.json"), v);
      views.push_back(k);
    }
  }
  save_manifest(m);
  return m;
}

// --------------------------------------------------------------- toy data

TriangleMesh make_toy_chair(Rng& rng, const ToyChairOptions& options) {
  const double gap = 0.002;
  const double w = rng.uniform(0.40, 0.55);    // seat width (x)
  const double d = rng.uniform(0.38, 0.52);    // seat depth (z)
  const double t = rng.uniform(0.08, 0.14);    // seat thickness
  const double h = rng.uniform(0.30, 0.50);    // leg length
  const double lt = rng.uniform(0.07, 0.11);   // leg thickness
  const double bh = rng.uniform(0.30, 0.60);   // backrest height
  const double bt = rng.uniform(0.06, 0.10);   // backrest thickness
  const double inset = rng.uniform(0.0, 0.04);

  std::vector<TriangleMesh> parts;
  const double seat_y0 = h + gap;
  parts.push_back(make_box({-w / 2, seat_y0, -d / 2}, {w / 2, seat_y0 + t, d / 2}));
  for (int sx : {-1, 1})
    for (int sz : {-1, 1}) {
      const double cx = sx * (w / 2 - inset - lt / 2);
      const double cz = sz * (d / 2 - inset - lt / 2);
      parts.push_back(make_box({cx - lt / 2, 0.0, cz - lt / 2}, {cx + lt / 2, h, cz + lt / 2}));
    }
  const double back_y0 = seat_y0 + t + gap;
  parts.push_back(make_box({-w / 2, back_y0, -d / 2}, {w / 2, back_y0 + bh, -d / 2 + bt}));
  if (options.armrests_allowed && rng.uniform() < 0.3) {
    const double ah = rng.uniform(0.12, 0.2);
    const double at = rng.uniform(0.05, 0.08);
    for (int sx : {-1, 1}) {
      const double x0 = sx < 0 ? -w / 2 : w / 2 - at;
      parts.push_back(make_box({x0, back_y0, -d / 2 + bt + gap}, {x0 + at, back_y0 + ah, d / 2}));
    }
  }
  TriangleMesh chair = normalize_to_unit_cube(merge_meshes(parts));
  // A little margin keeps every view inside the frame.
  chair.vertices *= 0.85;
  return chair;
}

Image hand_drawn_style(const Image& sketch, Rng& rng) {
  const int H = sketch.height(), W = sketch.width();
  // Smooth displacement field from a few random low-frequency waves.
  struct Wave {
    double ax, ay, fx, fy, px, py;
  };
  std::vector<Wave> waves;
  for (int i = 0; i < 3; ++i) {
    waves.push_back({rng.uniform(1.0, 3.0), rng.uniform(1.0, 3.0), rng.uniform(0.01, 0.04), rng.uniform(0.01, 0.04),
                     rng.uniform(0.0, 6.28), rng.uniform(0.0, 6.28)});
  }
  Image warped(H, W, 1.0f);
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) {
      double dx = 0, dy = 0;
      for (const auto& wv : waves) {
        dx += wv.ax * std::sin(wv.fy * r + wv.px);
        dy += wv.ay * std::sin(wv.fx * c + wv.py);
      }
      const int sr = std::clamp(static_cast<int>(std::lround(r + dy)), 0, H - 1);
      const int sc = std::clamp(static_cast<int>(std::lround(c + dx)), 0, W - 1);
      warped(r, c) = sketch(sr, sc);
    }
  Image out = thicken_strokes(warped, 1 + static_cast<int>(rng.index(2)));
  // Pen-up gaps.
  const int gaps = 15 + static_cast<int>(rng.index(20));
  for (int i = 0; i < gaps; ++i) {
    const int gr = static_cast<int>(rng.index(static_cast<std::size_t>(H)));
    const int gc = static_cast<int>(rng.index(static_cast<std::size_t>(W)));
    const int rad = 2 + static_cast<int>(rng.index(3));
    for (int r = std::max(0, gr - rad); r <= std::min(H - 1, gr + rad); ++r)
      for (int c = std::max(0, gc - rad); c <= std::min(W - 1, gc + rad); ++c) out(r, c) = 1.0f;
  }
  // Graphite tone and speckle.
  const float tone = static_cast<float>(rng.uniform(0.1, 0.35));
  for (auto& p : out.pixels()) {
    if (p < 0.5f) p = tone;
    if (rng.uniform() < 0.002) p = tone;
  }
  return out;
}

}  // namespace viewsketch
