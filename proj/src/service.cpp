#include "viewsketch/service.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <iostream>

#include "httplib.h"
#include "viewsketch/evaluation.hpp"
#include "viewsketch/hash.hpp"
#include "viewsketch/image.hpp"

namespace viewsketch {

using nlohmann::json;

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  std::string clean;
  clean.reserve(text.size());
  for (char c : text) {
    if (!std::isspace(static_cast<unsigned char>(c))) clean.push_back(c);
  }
  if (clean.size() % 4 != 0) throw std::invalid_argument("base64: length is not a multiple of 4");
  std::vector<std::uint8_t> out(clean.size() / 4 * 3);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(clean.data()), static_cast<int>(clean.size()));
  if (n < 0) throw std::invalid_argument("base64: malformed input");
  // EVP_DecodeBlock keeps the bytes produced by '=' padding.
  std::size_t pad = 0;
  for (auto it = clean.rbegin(); it != clean.rend() && *it == '=' && pad < 2; ++it) ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

Image sketch_from_png(std::span<const std::uint8_t> png, int size, bool resize) {
  const RgbaImage rgba = decode_png(png);
  Image gray = to_grayscale(rgba);
  if (rgba.has_alpha) {
    for (int r = 0; r < rgba.height; ++r) {
      for (int c = 0; c < rgba.width; ++c) {
        const float a = rgba.pixel(r, c)[3] / 255.0f;
        gray(r, c) = a * gray(r, c) + (1.0f - a);
      }
    }
  }
  if (gray.height() == size && gray.width() == size) return gray;
  if (!resize) {
    throw std::invalid_argument("sketch is " + std::to_string(gray.width()) + "x" + std::to_string(gray.height()) +
                                ", expected " + std::to_string(size) + "x" + std::to_string(size) +
                                " (set resize to scale it)");
  }
  return resize_pad_square(gray, size, 1.0f);
}

namespace {

json view_json(const Viewpoint& v) { return {{"elevation_deg", v.elevation_deg()}, {"azimuth_deg", v.azimuth_deg()}}; }

std::string join(const std::vector<std::string>& items) {
  std::string s;
  for (const auto& i : items) s += (s.empty() ? "" : ", ") + i;
  return s;
}

}  // namespace

json to_json(const InferenceResponse& r) {
  return {{"mesh_obj", r.obj},
          {"predicted_view", view_json(r.predicted_view)},
          {"used_view", view_json(r.used_view)},
          {"mode", r.mode},
          {"class", r.class_label},
          {"config_hash", r.config_hash},
          {"parameter_hash", r.parameter_hash},
          {"elapsed_ms", r.elapsed_ms}};
}

UnknownClass::UnknownClass(const std::string& label, std::vector<std::string> available)
    : std::invalid_argument("unknown class '" + label + "'; available: " +
                            (available.empty() ? std::string("none") : join(available))),
      available_(std::move(available)) {}

InferenceEngine::InferenceEngine(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw std::runtime_error("bundle directory not found: " + dir.string());
  if (std::filesystem::exists(dir / "manifest.json")) {
    add(load_bundle(dir));
    return;
  }
  std::vector<std::filesystem::path> subdirs;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_directory() && std::filesystem::exists(e.path() / "manifest.json")) subdirs.push_back(e.path());
  }
  std::sort(subdirs.begin(), subdirs.end());
  for (const auto& p : subdirs) add(load_bundle(p));
  if (bundles_.empty()) throw std::runtime_error("no bundles under " + dir.string());
}

void InferenceEngine::add(LoadedBundle bundle) {
  const std::string label = bundle.info.class_label;
  if (bundles_.count(label)) throw std::invalid_argument("duplicate bundle for class '" + label + "'");
  auto e = std::make_unique<Entry>();
  e->model = std::move(bundle.model);
  e->info = std::move(bundle.info);
  e->parameter_hash = to_hex(nn::parameter_hash(e->model.parameters()));
  bundles_.emplace(label, std::move(e));
}

std::vector<std::string> InferenceEngine::classes() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : bundles_) out.push_back(k);
  return out;
}

InferenceEngine::Entry& InferenceEngine::entry(const std::string& class_label) const {
  const auto it = bundles_.find(class_label);
  if (it == bundles_.end()) throw UnknownClass(class_label, classes());
  return *it->second;
}

int InferenceEngine::image_size(const std::string& class_label) const {
  return entry(class_label).model.config().image_size;
}

InferenceResponse InferenceEngine::infer(const InferenceRequest& request) const {
  const auto start = std::chrono::steady_clock::now();
  Entry& e = entry(request.class_label);
  const ViewMode mode = request.view ? ViewMode::kSpecified : ViewMode::kPredicted;
  const Prediction p = predict(e.model, request.sketch, mode, request.view);
  InferenceResponse r;
  r.obj = mesh_to_obj(p.mesh);
  r.predicted_view = p.predicted_view;
  r.used_view = p.used_view;
  r.mode = to_string(mode);
  r.class_label = request.class_label;
  r.config_hash = e.info.config_hash;
  r.parameter_hash = e.parameter_hash;
  r.elapsed_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  served_->fetch_add(1);
  return r;
}

InferenceRequest parse_inference_request(const json& body, const InferenceEngine& engine) {
  if (!body.is_object()) throw std::invalid_argument("request body must be a JSON object");
  if (!body.contains("class") || !body["class"].is_string()) throw std::invalid_argument("missing string field 'class'");
  if (!body.contains("sketch_png_base64") || !body["sketch_png_base64"].is_string()) {
    throw std::invalid_argument("missing string field 'sketch_png_base64'");
  }
  InferenceRequest r;
  r.class_label = body["class"].get<std::string>();
  const int size = engine.image_size(r.class_label);
  const bool resize = body.value("resize", false);
  r.sketch = sketch_from_png(base64_decode(body["sketch_png_base64"].get<std::string>()), size, resize);
  if (body.contains("view") && !body["view"].is_null()) {
    const json& v = body["view"];
    if (!v.is_object() || !v.contains("elevation_deg") || !v.contains("azimuth_deg") ||
        !v["elevation_deg"].is_number() || !v["azimuth_deg"].is_number()) {
      throw std::invalid_argument("'view' needs numeric elevation_deg and azimuth_deg");
    }
    const double el = v["elevation_deg"].get<double>();
    if (std::abs(el) > 90.0) throw std::invalid_argument("elevation_deg must lie in [-90, 90]");
    r.view = Viewpoint::from_degrees(el, v["azimuth_deg"].get<double>());
  }
  return r;
}

namespace {

HttpReply error_reply(int status, const std::string& message, json extra = json::object()) {
  extra["error"] = message;
  return {status, extra};
}

}  // namespace

HttpReply handle_infer(const InferenceEngine& engine, const std::string& body) {
  try {
    const json j = json::parse(body);
    return {200, to_json(engine.infer(parse_inference_request(j, engine)))};
  } catch (const json::parse_error& e) {
    return error_reply(400, std::string("invalid JSON: ") + e.what());
  } catch (const UnknownClass& e) {
    return error_reply(404, e.what(), {{"available", e.available()}});
  } catch (const std::invalid_argument& e) {
    return error_reply(400, e.what());
  } catch (const std::exception& e) {
    return error_reply(500, e.what());
  }
}

HttpReply handle_classes(const InferenceEngine& engine) {
  json list = json::array();
  for (const auto& c : engine.classes()) list.push_back({{"class", c}, {"image_size", engine.image_size(c)}});
  return {200, {{"classes", list}}};
}

HttpReply handle_health(const InferenceEngine& engine) {
  return {200, {{"status", "ok"}, {"classes", engine.classes().size()}, {"requests_served", engine.requests_served()}}};
}

void register_routes(httplib::Server& server, const InferenceEngine& engine) {
  auto send = [](httplib::Response& res, const HttpReply& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  // The drawing app is served from another origin.
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"}, {"Access-Control-Allow-Headers", "Content-Type"}});
  server.Options("/infer", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  server.Post("/infer", [&engine, send](const httplib::Request& req, httplib::Response& res) {
    send(res, handle_infer(engine, req.body));
  });
  server.Get("/classes", [&engine, send](const httplib::Request&, httplib::Response& res) {
    send(res, handle_classes(engine));
  });
  server.Get("/health", [&engine, send](const httplib::Request&, httplib::Response& res) {
    send(res, handle_health(engine));
  });
}

void serve(const InferenceEngine& engine, const std::string& host, int port) {
  httplib::Server server;
  register_routes(server, engine);
  std::cerr << "listening on " << host << ":" << port << "\n";
  if (!server.listen(host, port)) throw std::runtime_error("could not listen on " + host + ":" + std::to_string(port));
}

}  // namespace viewsketch
