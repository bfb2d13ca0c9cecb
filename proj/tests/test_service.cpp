#include <gtest/gtest.h>

#include <fstream>
#include <thread>

#include "toy_fixtures.hpp"
#include "viewsketch/service.hpp"
// After Eigen: glibc's resolver header defines _res.
#include "httplib.h"

namespace vs = viewsketch;
using nlohmann::json;

namespace {

std::vector<std::uint8_t> bytes(const std::string& s) { return {s.begin(), s.end()}; }

vs::Image sketch(int size) {
  vs::Image img(size, size, 1.0f);
  for (int i = 4; i < size - 4; ++i) img(i, size / 2) = img(size / 3, i) = 0.0f;
  return img;
}

vs::InferenceEngine engine_with(const std::vector<std::string>& classes) {
  vs::InferenceEngine e;
  std::uint64_t seed = 1;
  for (const auto& c : classes) {
    const auto dir = toy::scratch("service_" + c);
    vs::SketchModel m(toy::tiny_network(), seed++);
    vs::save_bundle(m, {c, "cfg-" + c, 7, {}}, dir);
    e.add(vs::load_bundle(dir));
  }
  return e;
}

json request(const std::string& cls, const vs::Image& s) {
  return {{"class", cls}, {"sketch_png_base64", vs::base64_encode(vs::encode_png(s))}};
}

}  // namespace

TEST(Base64, KnownVectors) {
  const std::pair<std::string, std::string> cases[] = {
      {"", ""}, {"f", "Zg=="}, {"fo", "Zm8="}, {"foo", "Zm9v"}, {"foob", "Zm9vYg=="}, {"fooba", "Zm9vYmE="},
      {"foobar", "Zm9vYmFy"}};
  for (const auto& [plain, coded] : cases) {
    EXPECT_EQ(vs::base64_encode(bytes(plain)), coded);
    EXPECT_EQ(vs::base64_decode(coded), bytes(plain));
  }
  EXPECT_EQ(vs::base64_decode("Zm9v\nYmFy"), bytes("foobar"));
}

TEST(Base64, RejectsMalformed) {
  EXPECT_THROW(vs::base64_decode("Zm9"), std::invalid_argument);
  EXPECT_THROW(vs::base64_decode("Z!9v"), std::invalid_argument);
}

TEST(SketchFromPng, CompositesTransparencyOnWhite) {
  vs::RgbaImage rgba(8, 8);  // fully transparent black
  rgba.pixel(2, 3)[3] = 255;
  const auto path = toy::scratch("png") / "a.png";
  vs::write_png(rgba, path);
  std::ifstream f(path, std::ios::binary);
  const std::vector<std::uint8_t> png((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  const vs::Image s = vs::sketch_from_png(png, 8, false);
  EXPECT_FLOAT_EQ(s(0, 0), 1.0f);
  EXPECT_FLOAT_EQ(s(2, 3), 0.0f);
}

TEST(SketchFromPng, SizeMismatchNeedsResize) {
  const auto png = vs::encode_png(sketch(16));
  EXPECT_THROW(vs::sketch_from_png(png, 32, false), std::invalid_argument);
  EXPECT_EQ(vs::sketch_from_png(png, 32, true).height(), 32);
  EXPECT_THROW(vs::sketch_from_png(bytes("not a png"), 32, false), std::invalid_argument);
}

TEST(InferenceEngine, UnknownClassListsAvailable) {
  const auto e = engine_with({"chair", "table"});
  try {
    e.infer({"lamp", sketch(32), std::nullopt});
    FAIL();
  } catch (const vs::UnknownClass& err) {
    EXPECT_EQ(err.available(), (std::vector<std::string>{"chair", "table"}));
    EXPECT_NE(std::string(err.what()).find("chair, table"), std::string::npos);
  }
}

TEST(InferenceEngine, DeterministicAndViewAware) {
  const auto e = engine_with({"chair"});
  const auto a = e.infer({"chair", sketch(32), std::nullopt});
  const auto b = e.infer({"chair", sketch(32), std::nullopt});
  EXPECT_EQ(a.obj, b.obj);
  EXPECT_EQ(a.mode, "pred-view");
  // Passing the predicted view back explicitly takes the same path.
  const auto same = e.infer({"chair", sketch(32), a.predicted_view});
  EXPECT_EQ(same.obj, a.obj);
  EXPECT_EQ(same.mode, "specified-view");
  const auto left = e.infer({"chair", sketch(32), vs::Viewpoint::from_degrees(0, -90)});
  const auto right = e.infer({"chair", sketch(32), vs::Viewpoint::from_degrees(0, 90)});
  EXPECT_NE(left.obj, right.obj);
  EXPECT_EQ(left.predicted_view.azimuth, a.predicted_view.azimuth);
  EXPECT_NEAR(right.used_view.azimuth_deg(), 90.0, 1e-9);
  EXPECT_EQ(e.requests_served(), 5u);
}

TEST(InferenceEngine, LoadsBundleDirectory) {
  const auto root = toy::scratch("service_root");
  for (const char* c : {"chair", "car"}) {
    vs::SketchModel m(toy::tiny_network(), 3);
    vs::save_bundle(m, {c, "", 0, {}}, root / c);
  }
  EXPECT_EQ(vs::InferenceEngine(root).classes(), (std::vector<std::string>{"car", "chair"}));
  EXPECT_THROW(vs::InferenceEngine(toy::scratch("service_empty")), std::runtime_error);
}

TEST(HandleInfer, ErrorStatuses) {
  const auto e = engine_with({"chair"});
  EXPECT_EQ(vs::handle_infer(e, "{").status, 400);
  EXPECT_EQ(vs::handle_infer(e, R"({"class":"chair"})").status, 400);
  EXPECT_EQ(vs::handle_infer(e, R"({"class":"chair","sketch_png_base64":"@@@@"})").status, 400);
  json wrong_size = request("chair", sketch(16));
  EXPECT_EQ(vs::handle_infer(e, wrong_size.dump()).status, 400);
  wrong_size["resize"] = true;
  EXPECT_EQ(vs::handle_infer(e, wrong_size.dump()).status, 200);
  const auto missing = vs::handle_infer(e, request("lamp", sketch(32)).dump());
  EXPECT_EQ(missing.status, 404);
  EXPECT_EQ(missing.body["available"], json::array({"chair"}));
  json bad_view = request("chair", sketch(32));
  bad_view["view"] = {{"elevation_deg", 120}, {"azimuth_deg", 0}};
  EXPECT_EQ(vs::handle_infer(e, bad_view.dump()).status, 400);
}

TEST(HandleInfer, ResponseCarriesBothViewsInDegrees) {
  const auto e = engine_with({"chair"});
  json req = request("chair", sketch(32));
  req["view"] = {{"elevation_deg", 15}, {"azimuth_deg", -90}};
  const auto r = vs::handle_infer(e, req.dump());
  ASSERT_EQ(r.status, 200);
  EXPECT_NEAR(r.body["used_view"]["elevation_deg"].get<double>(), 15.0, 1e-9);
  EXPECT_NEAR(r.body["used_view"]["azimuth_deg"].get<double>(), -90.0, 1e-9);
  EXPECT_TRUE(r.body["predicted_view"].contains("azimuth_deg"));
  EXPECT_EQ(r.body["config_hash"], "cfg-chair");
  EXPECT_EQ(r.body["mesh_obj"].get<std::string>().rfind("v ", 0), 0u);
}

TEST(HttpServer, RoutesAndConcurrentRequests) {
  const auto e = engine_with({"chair"});
  httplib::Server server;
  vs::register_routes(server, e);
  const int port = server.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::thread loop([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  httplib::Client client("127.0.0.1", port);
  auto health = client.Get("/health");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
  auto classes = client.Get("/classes");
  ASSERT_TRUE(classes);
  EXPECT_EQ(json::parse(classes->body)["classes"][0]["class"], "chair");

  const std::string body = request("chair", sketch(32)).dump();
  std::vector<std::string> objs(4);
  std::vector<std::thread> workers;
  for (int i = 0; i < 4; ++i) {
    workers.emplace_back([&, i] {
      httplib::Client c("127.0.0.1", port);
      auto r = c.Post("/infer", body, "application/json");
      if (r && r->status == 200) objs[static_cast<std::size_t>(i)] = json::parse(r->body)["mesh_obj"];
    });
  }
  for (auto& w : workers) w.join();
  for (const auto& o : objs) {
    EXPECT_FALSE(o.empty());
    EXPECT_EQ(o, objs[0]);
  }
  auto after = client.Get("/health");
  EXPECT_EQ(json::parse(after->body)["requests_served"], 4);
  server.stop();
  loop.join();
}
