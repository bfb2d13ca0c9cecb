#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "viewsketch/geometry.hpp"
#include "viewsketch/image.hpp"
#include "viewsketch/random.hpp"
#include "viewsketch/rasterizer.hpp"

namespace viewsketch {

// ------------------------------------------------------------ image ops

struct CannyOptions {
  double low = 0.1;   // hysteresis thresholds on gradient magnitude scaled to [0,1]
  double high = 0.2;
  double sigma = 1.0;  // gaussian blur
};

// Canny edge map of a grayscale image with dark strokes (0) on white (1).
// `blank` (optional) is set when the input has no gradient at all.
Image canny_edges(const Image& gray, const CannyOptions& options = {}, bool* blank = nullptr);

// Composites the rendering over a white page and runs canny_edges.
Image edge_sketch(const RgbaImage& rendering, const CannyOptions& options = {}, bool* blank = nullptr);

// alpha > 0.5 -> 1. Without alpha, pixels differing from `background` are
// foreground; without either, throws std::invalid_argument.
Silhouette silhouette_from_rendering(const RgbaImage& rendering,
                                     std::optional<std::array<std::uint8_t, 3>> background = std::nullopt);

// Coarsest first; each level is a 2x average pool of the next finer one,
// re-binarized with >= 0.5 -> 1.
SilhouettePyramid build_pyramid(const Silhouette& finest, int levels);

// Morphological dilation of dark strokes (values < 0.5) by a square radius.
Image thicken_strokes(const Image& sketch, int radius);

// ----------------------------------------------------------- viewpoints

struct ViewRange {
  double elevation_min = deg_to_rad(-10.0);
  double elevation_max = deg_to_rad(40.0);
  double azimuth_min = -std::numbers::pi;
  double azimuth_max = std::numbers::pi;
};

class ViewSampler {
 public:
  enum class Strategy { kDatasetViews, kUniformRange };

  // Draws uniformly from a pool of views (throws on an empty pool).
  static ViewSampler dataset_views(std::vector<Viewpoint> pool);
  static ViewSampler uniform_range(const ViewRange& range);

  Viewpoint sample(Rng& rng) const;
  Strategy strategy() const { return strategy_; }
  const std::vector<Viewpoint>& pool() const { return pool_; }
  const ViewRange& range() const { return range_; }

 private:
  Strategy strategy_ = Strategy::kUniformRange;
  std::vector<Viewpoint> pool_;
  ViewRange range_;
};

// One draw from a generator seeded with `seed`.
Viewpoint sample_random_view(const ViewSampler& sampler, std::uint64_t seed);

// ---------------------------------------------------------------- dataset

struct SampleRecord {
  Image sketch;  // image_size^2
  SilhouettePyramid pyramid;
  Viewpoint view;
  std::string class_label;
  std::string object_id;
  int view_index = 0;
  std::optional<std::filesystem::path> mesh_path;
};

// root/manifest.json:
//   {"provenance": str, "classes": [...], "image_size": int, "silhouette_size": int,
//    "splits": {"train": {"chair": {"obj": [view indices]}}, "test": {...}}}
struct DatasetManifest {
  std::filesystem::path root;
  std::string provenance;
  std::vector<std::string> classes;
  int image_size = 224;
  int silhouette_size = 128;
  std::map<std::string, std::map<std::string, std::map<std::string, std::vector<int>>>> splits;

  std::size_t record_count(const std::string& split, const std::string& class_label) const;
  std::vector<std::string> object_ids(const std::string& split, const std::string& class_label) const;
};

nlohmann::json to_json(const DatasetManifest& m);
DatasetManifest load_manifest(const std::filesystem::path& root);
void save_manifest(const DatasetManifest& m);

std::filesystem::path view_prefix(const std::filesystem::path& root, const std::string& class_label,
                                  const std::string& split, const std::string& object_id, int view);
std::filesystem::path mesh_path(const std::filesystem::path& root, const std::string& class_label,
                                const std::string& object_id);

void write_view_json(const std::filesystem::path& path, const Viewpoint& v);
Viewpoint read_view_json(const std::filesystem::path& path);

struct LoadOptions {
  int pyramid_levels = 3;
  std::optional<std::uint64_t> shuffle_seed;  // sorted order when absent
};

struct LoadReport {
  std::size_t loaded = 0;
  std::size_t skipped_corrupt = 0;
};

// All records of one class and split. Missing files throw listing them;
// unreadable files are skipped and counted.
std::vector<SampleRecord> load_dataset(const DatasetManifest& manifest, const std::string& split,
                                       const std::string& class_label, const LoadOptions& options,
                                       LoadReport* report = nullptr);

// Every PNG in `dir` (sorted by name), grayscale, aspect-preserving pad to
// `size` on white.
std::vector<Image> load_unlabeled_sketches(const std::filesystem::path& dir, int size = 224);

// -------------------------------------------------------- synthetic build

struct RenderOptions {
  int image_size = 224;
  int silhouette_size = 128;
  int views_per_object = 20;
  ViewRange view_range;
  CannyOptions canny;
  int stroke_radius = 0;  // extra dilation of the canny strokes
};

struct RenderedView {
  Image sketch;
  Silhouette silhouette;
};

RenderedView render_training_view(const TriangleMesh& mesh, const Viewpoint& view, const RenderOptions& options);

struct SyntheticObject {
  std::string object_id;
  TriangleMesh mesh;
  std::string split;  // "train" or "test"
};

// Renders every object under `views_per_object` seeded random views and writes
// the dataset layout plus meshes and manifest.
DatasetManifest write_synthetic_dataset(const std::filesystem::path& root, const std::string& class_label,
                                        const std::vector<SyntheticObject>& objects, const RenderOptions& options,
                                        std::uint64_t seed, const std::string& provenance);

// ---------------------------------------------------------------- toy data

struct ToyChairOptions {
  bool armrests_allowed = true;
};

// Procedural chair: seat, four legs, backrest (+ optional arms), as disjoint
// closed boxes, normalized into [-0.5, 0.5]^3 with the backrest towards -z.
TriangleMesh make_toy_chair(Rng& rng, const ToyChairOptions& options = {});

// Makes a clean edge sketch look hand-drawn: thicker wobbly strokes, gaps, and
// speckle noise.
Image hand_drawn_style(const Image& sketch, Rng& rng);

}  // namespace viewsketch
