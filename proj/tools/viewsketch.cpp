// Command-line front end: dataset build, training, evaluation, inference and
// the HTTP service.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "viewsketch/data.hpp"
#include "viewsketch/evaluation.hpp"
#include "viewsketch/service.hpp"
#include "viewsketch/training.hpp"

namespace fs = std::filesystem;
using namespace viewsketch;
using nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string class_label;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Training config (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Random seed");
  cmd->add_option("--class", c.class_label, "Object class");
}

TrainingConfig resolve_config(const Common& c) {
  TrainingConfig t = c.config.empty() ? TrainingConfig{} : load_training_config(c.config);
  if (c.seed) t.seed = *c.seed;
  if (!c.class_label.empty()) t.class_label = c.class_label;
  t.validate();
  return t;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

Viewpoint parse_view(const std::string& text) {
  std::istringstream s(text);
  double el = 0, az = 0;
  char comma = 0;
  if (!(s >> el >> comma >> az) || comma != ',' || !(s >> std::ws).eof()) {
    throw CLI::ValidationError("--view", "expected \"elevation,azimuth\" in degrees");
  }
  if (std::abs(el) > 90) throw CLI::ValidationError("--view", "elevation must lie in [-90, 90]");
  return Viewpoint::from_degrees(el, az);
}

LoadedBundle load_class_bundle(const fs::path& path, const std::string& class_label) {
  if (fs::exists(path / "manifest.json")) return load_bundle(path);
  const fs::path sub = path / class_label;
  if (!class_label.empty() && fs::exists(sub / "manifest.json")) return load_bundle(sub);
  throw std::runtime_error("no bundle at " + path.string() + (class_label.empty() ? "" : " for class " + class_label));
}

// ------------------------------------------------------------ commands

struct PrepareArgs {
  std::string out, meshes;
  int objects = 50, views = 20, image_size = 224, silhouette_size = 128;
  double test_fraction = 0.2;
};

int prepare_data(const PrepareArgs& a, const Common& c) {
  const std::string label = c.class_label.empty() ? "chair" : c.class_label;
  std::vector<SyntheticObject> objects;
  std::string provenance;
  if (!a.meshes.empty()) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(a.meshes)) {
      if (e.path().extension() == ".obj") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw std::runtime_error("no .obj files in " + a.meshes);
    for (const auto& f : files) objects.push_back({f.stem().string(), normalize_to_unit_cube(import_mesh(f)), "train"});
    provenance = "meshes:" + a.meshes;
  } else {
    Rng rng(mix_seed(c.seed.value_or(0), 7));
    for (int i = 0; i < a.objects; ++i) {
      char id[32];
      std::snprintf(id, sizeof id, "%s%04d", label.c_str(), i);
      objects.push_back({id, make_toy_chair(rng), "train"});
    }
    provenance = "toy-chairs";
  }
  const auto n_test = static_cast<std::size_t>(std::lround(a.test_fraction * static_cast<double>(objects.size())));
  for (std::size_t i = objects.size() - std::min(n_test, objects.size()); i < objects.size(); ++i) objects[i].split = "test";
  RenderOptions ro;
  ro.image_size = a.image_size;
  ro.silhouette_size = a.silhouette_size;
  ro.views_per_object = a.views;
  const DatasetManifest m = write_synthetic_dataset(a.out, label, objects, ro, c.seed.value_or(0), provenance);
  std::cout << json{{"dataset", a.out}, {"train_records", m.record_count("train", label)},
                    {"test_records", m.record_count("test", label)}, {"dataset_id", dataset_id(m)}}.dump() << "\n";
  return 0;
}

int train(const std::string& data, const std::string& out, bool print_config, const Common& c) {
  const TrainingConfig config = resolve_config(c);
  if (print_config) {
    std::cout << to_json(config).dump(2) << "\n";
    return 0;
  }
  const TrainOutcome o = train_model(load_manifest(data), config, out);
  std::cout << json{{"bundle", (fs::path(out) / "bundle").string()},
                    {"steps", o.steps},
                    {"best_validation_iou", o.best_validation},
                    {"config_hash", o.info.config_hash}}
                   .dump()
            << "\n";
  return 0;
}

int eval(const std::string& bundle_dir, const std::string& data, const std::string& mode_text,
         const std::string& split, const std::string& out, std::size_t max_records, const Common& c) {
  const ViewMode mode = view_mode_from_string(mode_text);
  LoadedBundle b = load_class_bundle(bundle_dir, c.class_label);
  const std::string label = c.class_label.empty() ? b.info.class_label : c.class_label;
  const TrainingConfig config = resolve_config(c);
  const DatasetManifest m = load_manifest(data);
  LoadOptions lo;
  lo.pyramid_levels = config.pyramid_levels;
  const auto records = load_dataset(m, split, label, lo);
  EvalOptions eo;
  eo.max_records = max_records;
  json j;
  if (mode == ViewMode::kSpecified) {
    const ViewSampler sampler = ViewSampler::uniform_range(config.random_view_range);
    j = {{"mode", to_string(mode)},
         {"dataset_id", dataset_id(m)},
         {"config_hash", b.info.config_hash},
         {"silhouette_iou", specified_view_silhouette_iou(b.model, records, sampler, 5, config.seed)}};
  } else {
    const EvalReport r = evaluate(b.model, records, mode, eo, b.info.config_hash, dataset_id(m));
    j = to_json(r);
    if (!out.empty()) write_text(fs::path(out).replace_extension(".csv"), to_csv(r));
  }
  if (!out.empty()) write_text(out, j.dump(2));
  std::cout << j.dump() << "\n";
  return 0;
}

int ablate(const std::string& data, const std::string& out, const Common& c) {
  const TrainingConfig config = resolve_config(c);
  const DatasetManifest m = load_manifest(data);
  LoadOptions lo;
  lo.pyramid_levels = config.pyramid_levels;
  const auto train = load_dataset(m, "train", config.class_label, lo);
  const auto test = load_dataset(m, "test", config.class_label, lo);
  const auto variants = standard_ablation_variants();
  const auto results = run_ablation(train, test, config, variants, {}, fs::path(out));
  json j = json::array();
  for (const auto& r : results) j.push_back(to_json(r));
  write_text(fs::path(out) / "ablation.json", j.dump(2));
  std::cout << j.dump() << "\n";
  return 0;
}

int infer(const std::string& bundles, const std::string& sketch, const std::string& view, const std::string& out,
          bool resize, const Common& c) {
  InferenceEngine engine;
  LoadedBundle b = load_class_bundle(bundles, c.class_label);
  const std::string label = b.info.class_label;
  engine.add(std::move(b));
  InferenceRequest req;
  req.class_label = label;
  req.sketch = sketch_from_png(read_bytes(sketch), engine.image_size(label), resize);
  if (!view.empty()) req.view = parse_view(view);
  const InferenceResponse r = engine.infer(req);
  json j = to_json(r);
  j.erase("mesh_obj");
  if (!out.empty()) {
    write_text(out, r.obj);
    j["mesh"] = out;
  } else {
    j["mesh_obj"] = r.obj;
  }
  std::cout << j.dump() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"View-aware sketch to 3D mesh toolkit"};
  app.require_subcommand(1);
  Common common;

  PrepareArgs prep;
  auto* cmd_prep = app.add_subcommand("prepare-data", "Render a synthetic sketch dataset");
  add_common(cmd_prep, common);
  cmd_prep->add_option("--out", prep.out, "Dataset root")->required();
  cmd_prep->add_option("--meshes", prep.meshes, "Directory of .obj meshes (default: procedural chairs)")
      ->check(CLI::ExistingDirectory);
  cmd_prep->add_option("--objects", prep.objects, "Procedural objects to generate")->check(CLI::PositiveNumber);
  cmd_prep->add_option("--views", prep.views, "Views per object")->check(CLI::PositiveNumber);
  cmd_prep->add_option("--image-size", prep.image_size, "Sketch resolution")->check(CLI::PositiveNumber);
  cmd_prep->add_option("--silhouette-size", prep.silhouette_size, "Silhouette resolution")->check(CLI::PositiveNumber);
  cmd_prep->add_option("--test-fraction", prep.test_fraction, "Fraction of objects in the test split")
      ->check(CLI::Range(0.0, 1.0));

  std::string data, out, bundle, mode = "pred-view", split = "test", sketch, view;
  std::size_t max_records = 0;
  bool print_config = false, resize = false;
  int port = 8080;
  std::string host = "0.0.0.0";

  auto* cmd_train = app.add_subcommand("train", "Train one class");
  add_common(cmd_train, common);
  cmd_train->add_option("--data", data, "Dataset root")->check(CLI::ExistingDirectory);
  cmd_train->add_option("--out", out, "Output directory (checkpoint, log, bundle)");
  cmd_train->add_flag("--print-config", print_config, "Print the effective config and exit");

  auto* cmd_eval = app.add_subcommand("eval", "Evaluate a bundle");
  add_common(cmd_eval, common);
  cmd_eval->add_option("--bundle", bundle, "Bundle directory")->required();
  cmd_eval->add_option("--data", data, "Dataset root")->required()->check(CLI::ExistingDirectory);
  cmd_eval->add_option("--mode", mode, "pred-view, gt-view or specified-view");
  cmd_eval->add_option("--split", split, "Dataset split");
  cmd_eval->add_option("--out", out, "Report path (JSON; CSV written alongside)");
  cmd_eval->add_option("--max-records", max_records, "Evaluate at most this many records");

  auto* cmd_ablate = app.add_subcommand("ablate", "Train and evaluate the ablation variants");
  add_common(cmd_ablate, common);
  cmd_ablate->add_option("--data", data, "Dataset root")->required()->check(CLI::ExistingDirectory);
  cmd_ablate->add_option("--out", out, "Output directory")->required();

  auto* cmd_infer = app.add_subcommand("infer", "Generate a mesh from one sketch");
  add_common(cmd_infer, common);
  cmd_infer->add_option("--bundle,--bundles", bundle, "Bundle directory (or directory of per-class bundles)")
      ->required();
  cmd_infer->add_option("--sketch", sketch, "Sketch PNG")->required()->check(CLI::ExistingFile);
  cmd_infer->add_option("--view", view, "Specified view \"elevation,azimuth\" in degrees");
  cmd_infer->add_option("--out", out, "Output OBJ path");
  cmd_infer->add_flag("--resize", resize, "Scale sketches of other sizes to the model resolution");

  auto* cmd_serve = app.add_subcommand("serve", "Run the HTTP inference service");
  add_common(cmd_serve, common);
  cmd_serve->add_option("--bundles", bundle, "Directory of per-class bundles")->required()
      ->check(CLI::ExistingDirectory);
  cmd_serve->add_option("--port", port, "TCP port")->check(CLI::Range(1, 65535));
  cmd_serve->add_option("--host", host, "Bind address");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*cmd_prep) return prepare_data(prep, common);
    if (*cmd_train) {
      if (!print_config && (data.empty() || out.empty())) {
        std::cerr << "train: --data and --out are required\n";
        return 1;
      }
      return train(data, out, print_config, common);
    }
    if (*cmd_eval) return eval(bundle, data, mode, split, out, max_records, common);
    if (*cmd_ablate) return ablate(data, out, common);
    if (*cmd_infer) return infer(bundle, sketch, view, out, resize, common);
    if (*cmd_serve) {
      const InferenceEngine engine(bundle);
      serve(engine, host, port);
      return 0;
    }
  } catch (const CLI::ValidationError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", e.what()}}.dump() << "\n";
    return 2;
  }
  return 1;
}
