#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "viewsketch/networks.hpp"

namespace httplib {
class Server;
}

namespace viewsketch {

std::string base64_encode(std::span<const std::uint8_t> bytes);
// Throws std::invalid_argument on malformed input. Whitespace is ignored.
std::vector<std::uint8_t> base64_decode(std::string_view text);

// Decodes a PNG into a sketch of `size` x `size`, compositing transparency
// over white. Other sizes throw unless `resize` is set.
Image sketch_from_png(std::span<const std::uint8_t> png, int size, bool resize);

struct InferenceRequest {
  std::string class_label;
  Image sketch;
  std::optional<Viewpoint> view;  // specified view; absent: use the predicted one
};

struct InferenceResponse {
  std::string obj;
  Viewpoint predicted_view;
  Viewpoint used_view;
  std::string mode;  // to_string(ViewMode)
  std::string class_label;
  std::string config_hash;
  std::string parameter_hash;
  double elapsed_ms = 0.0;
};

// Views are reported in degrees.
nlohmann::json to_json(const InferenceResponse& r);

class UnknownClass : public std::invalid_argument {
 public:
  UnknownClass(const std::string& label, std::vector<std::string> available);
  const std::vector<std::string>& available() const { return available_; }

 private:
  std::vector<std::string> available_;
};

// Read-only set of per-class bundles. infer may be called concurrently.
class InferenceEngine {
 public:
  InferenceEngine() = default;
  // Loads every subdirectory holding a bundle, or `dir` itself if it is one.
  explicit InferenceEngine(const std::filesystem::path& dir);

  void add(LoadedBundle bundle);
  std::vector<std::string> classes() const;
  int image_size(const std::string& class_label) const;

  InferenceResponse infer(const InferenceRequest& request) const;
  std::uint64_t requests_served() const { return served_->load(); }

 private:
  struct Entry {
    SketchModel model;
    BundleInfo info;
    std::string parameter_hash;
  };
  Entry& entry(const std::string& class_label) const;

  std::map<std::string, std::unique_ptr<Entry>> bundles_;
  std::unique_ptr<std::atomic<std::uint64_t>> served_ = std::make_unique<std::atomic<std::uint64_t>>(0);
};

// JSON body: {"class", "sketch_png_base64", "resize"?, "view"?: {"elevation_deg", "azimuth_deg"}}.
InferenceRequest parse_inference_request(const nlohmann::json& body, const InferenceEngine& engine);

struct HttpReply {
  int status = 200;
  nlohmann::json body;
};

HttpReply handle_infer(const InferenceEngine& engine, const std::string& body);
HttpReply handle_classes(const InferenceEngine& engine);
HttpReply handle_health(const InferenceEngine& engine);

// POST /infer, GET /classes, GET /health.
void register_routes(httplib::Server& server, const InferenceEngine& engine);
// Blocks until the server stops.
void serve(const InferenceEngine& engine, const std::string& host, int port);

}  // namespace viewsketch
