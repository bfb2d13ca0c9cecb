#include "viewsketch/geometry.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

#include "viewsketch/random.hpp"

namespace viewsketch {

void TriangleMesh::validate() const {
  const int n = num_vertices();
  for (int f = 0; f < num_faces(); ++f) {
    const int a = faces(f, 0), b = faces(f, 1), c = faces(f, 2);
    if (a < 0 || b < 0 || c < 0 || a >= n || b >= n || c >= n) {
      throw std::invalid_argument("TriangleMesh: face " + std::to_string(f) + " index out of range");
    }
    if (a == b || b == c || a == c) {
      throw std::invalid_argument("TriangleMesh: face " + std::to_string(f) + " repeats a vertex");
    }
  }
}

double wrap_angle(double radians) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double r = std::fmod(radians + std::numbers::pi, two_pi);
  if (r < 0) r += two_pi;
  r -= std::numbers::pi;
  // fmod can land exactly on +pi through rounding.
  if (r >= std::numbers::pi) r -= two_pi;
  return r;
}

Viewpoint Viewpoint::from_degrees(double elevation_deg, double azimuth_deg, double distance) {
  return Viewpoint{deg_to_rad(elevation_deg), deg_to_rad(azimuth_deg), distance}.normalized();
}

Viewpoint Viewpoint::normalized() const {
  constexpr double half_pi = std::numbers::pi / 2;
  double el = wrap_angle(elevation);
  double az = azimuth;
  if (el > half_pi) {
    el = std::numbers::pi - el;
    az += std::numbers::pi;
  } else if (el < -half_pi) {
    el = -std::numbers::pi - el;
    az += std::numbers::pi;
  }
  return Viewpoint{el, wrap_angle(az), distance};
}

bool Viewpoint::is_normalized() const {
  constexpr double half_pi = std::numbers::pi / 2;
  return elevation >= -half_pi && elevation <= half_pi && azimuth >= -std::numbers::pi &&
         azimuth < std::numbers::pi;
}

Vec3 Viewpoint::direction() const {
  const double ce = std::cos(elevation);
  return Vec3(ce * std::sin(azimuth), std::sin(elevation), ce * std::cos(azimuth));
}

double angular_distance(const Viewpoint& a, const Viewpoint& b) {
  const double c = std::clamp(a.direction().dot(b.direction()), -1.0, 1.0);
  return std::acos(c);
}

// ------------------------------------------------------------------ template

TriangleMesh load_template(int subdivision) {
  if (subdivision < 0) throw std::invalid_argument("load_template: subdivision must be >= 0");
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> verts = {
      {-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
      {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1},
  };
  for (auto& v : verts) v.normalize();
  std::vector<std::array<int, 3>> faces = {
      {0, 11, 5}, {0, 5, 1}, {0, 1, 7}, {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
      {11, 10, 2}, {10, 7, 6}, {7, 1, 8}, {3, 9, 4}, {3, 4, 2}, {3, 2, 6}, {3, 6, 8},
      {3, 8, 9}, {4, 9, 5}, {2, 4, 11}, {6, 2, 10}, {8, 6, 7}, {9, 8, 1},
  };
  for (int level = 0; level < subdivision; ++level) {
    std::map<Edge, int> midpoint;
    auto mid = [&](int a, int b) {
      const Edge key{std::min(a, b), std::max(a, b)};
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      verts.push_back((verts[a] + verts[b]).normalized());
      const int idx = static_cast<int>(verts.size()) - 1;
      midpoint.emplace(key, idx);
      return idx;
    };
    std::vector<std::array<int, 3>> next;
    next.reserve(faces.size() * 4);
    for (const auto& f : faces) {
      const int ab = mid(f[0], f[1]), bc = mid(f[1], f[2]), ca = mid(f[2], f[0]);
      next.push_back({f[0], ab, ca});
      next.push_back({f[1], bc, ab});
      next.push_back({f[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    faces = std::move(next);
  }
  TriangleMesh mesh;
  mesh.vertices.resize(static_cast<Eigen::Index>(verts.size()), 3);
  for (std::size_t i = 0; i < verts.size(); ++i) mesh.vertices.row(static_cast<Eigen::Index>(i)) = verts[i];
  mesh.faces.resize(static_cast<Eigen::Index>(faces.size()), 3);
  for (std::size_t i = 0; i < faces.size(); ++i)
    for (int k = 0; k < 3; ++k) mesh.faces(static_cast<Eigen::Index>(i), k) = faces[i][k];
  return mesh;
}

TriangleMesh deform(const TriangleMesh& base, const Vertices& offsets) {
  if (offsets.rows() != base.vertices.rows()) {
    throw std::invalid_argument("deform: offsets have " + std::to_string(offsets.rows()) + " rows, mesh has " +
                                std::to_string(base.vertices.rows()) + " vertices");
  }
  TriangleMesh out{base.vertices + offsets, base.faces};
  return out;
}

TriangleMesh deform(const TriangleMesh& base, std::span<const float> flat_offsets) {
  if (flat_offsets.size() != static_cast<std::size_t>(base.vertices.rows()) * 3) {
    throw std::invalid_argument("deform: flat offset length does not match 3 * vertex count");
  }
  TriangleMesh out = base;
  for (Eigen::Index i = 0; i < out.vertices.rows(); ++i)
    for (int k = 0; k < 3; ++k) out.vertices(i, k) += flat_offsets[static_cast<std::size_t>(i) * 3 + k];
  return out;
}

// ----------------------------------------------------------------- topology

std::vector<Edge> unique_edges(const Faces& faces) {
  std::vector<Edge> edges;
  edges.reserve(static_cast<std::size_t>(faces.rows()) * 3);
  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    for (int k = 0; k < 3; ++k) {
      const int a = faces(f, k), b = faces(f, (k + 1) % 3);
      edges.emplace_back(std::min(a, b), std::max(a, b));
    }
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  return edges;
}

namespace {

std::map<Edge, std::vector<int>> edge_faces(const Faces& faces) {
  std::map<Edge, std::vector<int>> out;
  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    for (int k = 0; k < 3; ++k) {
      const int a = faces(f, k), b = faces(f, (k + 1) % 3);
      out[{std::min(a, b), std::max(a, b)}].push_back(static_cast<int>(f));
    }
  }
  return out;
}

}  // namespace

std::vector<FacePair> adjacent_face_pairs(const Faces& faces) {
  std::vector<FacePair> pairs;
  for (const auto& [edge, fs] : edge_faces(faces)) {
    for (std::size_t i = 0; i < fs.size(); ++i)
      for (std::size_t j = i + 1; j < fs.size(); ++j) pairs.push_back({fs[i], fs[j], edge});
  }
  return pairs;
}

bool is_closed(const TriangleMesh& mesh) {
  if (mesh.empty()) return false;
  for (const auto& [edge, fs] : edge_faces(mesh.faces))
    if (fs.size() != 2) return false;
  return true;
}

double surface_area(const TriangleMesh& mesh) {
  double area = 0.0;
  for (int f = 0; f < mesh.num_faces(); ++f) {
    const Vec3 a = mesh.vertices.row(mesh.faces(f, 0));
    const Vec3 b = mesh.vertices.row(mesh.faces(f, 1));
    const Vec3 c = mesh.vertices.row(mesh.faces(f, 2));
    area += 0.5 * (b - a).cross(c - a).norm();
  }
  return area;
}

Bounds bounding_box(const TriangleMesh& mesh) {
  if (mesh.vertices.rows() == 0) throw std::invalid_argument("bounding_box: mesh has no vertices");
  return Bounds{mesh.vertices.colwise().minCoeff().transpose(), mesh.vertices.colwise().maxCoeff().transpose()};
}

TriangleMesh Similarity::apply(const TriangleMesh& mesh) const {
  TriangleMesh out = mesh;
  for (Eigen::Index i = 0; i < out.vertices.rows(); ++i) {
    out.vertices.row(i) = (scale * mesh.vertices.row(i).transpose() + translation).transpose();
  }
  return out;
}

Similarity unit_cube_normalization(const TriangleMesh& mesh) {
  const Bounds b = bounding_box(mesh);
  const double longest = b.extent().maxCoeff();
  if (!(longest > 0)) throw std::invalid_argument("unit_cube_normalization: degenerate bounding box");
  Similarity s;
  s.scale = 1.0 / longest;
  s.translation = -s.scale * b.center();
  return s;
}

TriangleMesh normalize_to_unit_cube(const TriangleMesh& mesh) { return unit_cube_normalization(mesh).apply(mesh); }

TriangleMesh make_box(const Vec3& lo, const Vec3& hi) {
  TriangleMesh m;
  m.vertices.resize(8, 3);
  for (int i = 0; i < 8; ++i) {
    m.vertices(i, 0) = (i & 1) ? hi.x() : lo.x();
    m.vertices(i, 1) = (i & 2) ? hi.y() : lo.y();
    m.vertices(i, 2) = (i & 4) ? hi.z() : lo.z();
  }
  // Outward winding (counter-clockwise seen from outside).
  m.faces.resize(12, 3);
  m.faces << 0, 2, 1, 1, 2, 3,  // -z
      4, 5, 6, 5, 7, 6,         // +z
      0, 1, 4, 1, 5, 4,         // -y
      2, 6, 3, 3, 6, 7,         // +y
      0, 4, 2, 2, 4, 6,         // -x
      1, 3, 5, 3, 7, 5;         // +x
  return m;
}

TriangleMesh merge_meshes(std::span<const TriangleMesh> parts) {
  Eigen::Index nv = 0, nf = 0;
  for (const auto& p : parts) {
    nv += p.vertices.rows();
    nf += p.faces.rows();
  }
  TriangleMesh out;
  out.vertices.resize(nv, 3);
  out.faces.resize(nf, 3);
  Eigen::Index v0 = 0, f0 = 0;
  for (const auto& p : parts) {
    out.vertices.middleRows(v0, p.vertices.rows()) = p.vertices;
    out.faces.middleRows(f0, p.faces.rows()) = p.faces.array() + static_cast<int>(v0);
    v0 += p.vertices.rows();
    f0 += p.faces.rows();
  }
  return out;
}

// -------------------------------------------------------------------- voxels

std::size_t VoxelGrid::count() const {
  return static_cast<std::size_t>(std::count_if(occupancy.begin(), occupancy.end(), [](auto v) { return v != 0; }));
}

VoxelGrid voxelize(const TriangleMesh& mesh, int resolution, const GridFrame& frame) {
  if (resolution < 8) throw std::invalid_argument("voxelize: resolution must be >= 8");
  if (!(frame.extent > 0)) throw std::invalid_argument("voxelize: grid extent must be positive");
  VoxelGrid grid;
  grid.resolution = resolution;
  grid.origin = frame.origin;
  grid.cell_size = frame.extent / resolution;
  grid.occupancy.assign(static_cast<std::size_t>(resolution) * resolution * resolution, 0);
  grid.watertight = is_closed(mesh);
  if (mesh.empty()) return grid;

  const double h = grid.cell_size;
  // Tiny irrational jitter keeps column rays off shared edges and vertices.
  const double jx = h * 1.2345678e-5, jy = h * 2.7182818e-5;
  std::vector<std::vector<double>> hits(static_cast<std::size_t>(resolution) * resolution);

  for (int f = 0; f < mesh.num_faces(); ++f) {
    const Vec3 a = mesh.vertices.row(mesh.faces(f, 0));
    const Vec3 b = mesh.vertices.row(mesh.faces(f, 1));
    const Vec3 c = mesh.vertices.row(mesh.faces(f, 2));
    const double det = (b.x() - a.x()) * (c.y() - a.y()) - (c.x() - a.x()) * (b.y() - a.y());
    if (std::abs(det) < 1e-300) continue;
    const double xmin = std::min({a.x(), b.x(), c.x()}), xmax = std::max({a.x(), b.x(), c.x()});
    const double ymin = std::min({a.y(), b.y(), c.y()}), ymax = std::max({a.y(), b.y(), c.y()});
    const int i0 = std::max(0, static_cast<int>(std::floor((xmin - grid.origin.x()) / h - 0.5)));
    const int i1 = std::min(resolution - 1, static_cast<int>(std::ceil((xmax - grid.origin.x()) / h - 0.5)));
    const int j0 = std::max(0, static_cast<int>(std::floor((ymin - grid.origin.y()) / h - 0.5)));
    const int j1 = std::min(resolution - 1, static_cast<int>(std::ceil((ymax - grid.origin.y()) / h - 0.5)));
    for (int j = j0; j <= j1; ++j) {
      const double py = grid.origin.y() + h * (j + 0.5) + jy;
      for (int i = i0; i <= i1; ++i) {
        const double px = grid.origin.x() + h * (i + 0.5) + jx;
        const double w1 = ((px - a.x()) * (c.y() - a.y()) - (c.x() - a.x()) * (py - a.y())) / det;
        const double w2 = ((b.x() - a.x()) * (py - a.y()) - (px - a.x()) * (b.y() - a.y())) / det;
        const double w0 = 1.0 - w1 - w2;
        if (w0 < 0 || w1 < 0 || w2 < 0) continue;
        hits[static_cast<std::size_t>(j) * resolution + i].push_back(w0 * a.z() + w1 * b.z() + w2 * c.z());
      }
    }
  }

  for (int j = 0; j < resolution; ++j) {
    for (int i = 0; i < resolution; ++i) {
      auto& zs = hits[static_cast<std::size_t>(j) * resolution + i];
      if (zs.empty()) continue;
      std::sort(zs.begin(), zs.end());
      std::size_t crossed = 0;
      for (int k = 0; k < resolution; ++k) {
        const double pz = grid.origin.z() + h * (k + 0.5);
        while (crossed < zs.size() && zs[crossed] < pz) ++crossed;
        if (crossed % 2 == 1) grid.occupancy[grid.index(i, j, k)] = 1;
      }
    }
  }
  return grid;
}

void save_voxels(const VoxelGrid& grid, const std::filesystem::path& base) {
  auto bin = base;
  bin += ".bin";
  auto hdr = base;
  hdr += ".json";
  std::ofstream out(bin, std::ios::binary);
  if (!out) throw std::runtime_error("save_voxels: cannot open " + bin.string());
  out.write(reinterpret_cast<const char*>(grid.occupancy.data()), static_cast<std::streamsize>(grid.occupancy.size()));
  if (!out) throw std::runtime_error("save_voxels: write failed for " + bin.string());
  nlohmann::json j = {{"resolution", grid.resolution},
                      {"origin", {grid.origin.x(), grid.origin.y(), grid.origin.z()}},
                      {"cell_size", grid.cell_size},
                      {"watertight", grid.watertight}};
  std::ofstream h(hdr);
  if (!h) throw std::runtime_error("save_voxels: cannot open " + hdr.string());
  h << j.dump(2) << '\n';
}

VoxelGrid load_voxels(const std::filesystem::path& base) {
  auto bin = base;
  bin += ".bin";
  auto hdr = base;
  hdr += ".json";
  std::ifstream h(hdr);
  if (!h) throw std::runtime_error("load_voxels: cannot open " + hdr.string());
  const auto j = nlohmann::json::parse(h);
  VoxelGrid grid;
  grid.resolution = j.at("resolution").get<int>();
  const auto o = j.at("origin");
  grid.origin = Vec3(o.at(0).get<double>(), o.at(1).get<double>(), o.at(2).get<double>());
  grid.cell_size = j.at("cell_size").get<double>();
  grid.watertight = j.value("watertight", true);
  grid.occupancy.resize(static_cast<std::size_t>(grid.resolution) * grid.resolution * grid.resolution);
  std::ifstream in(bin, std::ios::binary);
  in.read(reinterpret_cast<char*>(grid.occupancy.data()), static_cast<std::streamsize>(grid.occupancy.size()));
  if (!in) throw std::runtime_error("load_voxels: short read from " + bin.string());
  return grid;
}

// ------------------------------------------------------------------ sampling

std::vector<Vec3> sample_surface(const TriangleMesh& mesh, int n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("sample_surface: n must be >= 1");
  std::vector<double> cumulative(static_cast<std::size_t>(mesh.num_faces()));
  double total = 0.0;
  for (int f = 0; f < mesh.num_faces(); ++f) {
    const Vec3 a = mesh.vertices.row(mesh.faces(f, 0));
    const Vec3 b = mesh.vertices.row(mesh.faces(f, 1));
    const Vec3 c = mesh.vertices.row(mesh.faces(f, 2));
    total += 0.5 * (b - a).cross(c - a).norm();
    cumulative[static_cast<std::size_t>(f)] = total;
  }
  if (!(total > 0)) throw std::invalid_argument("sample_surface: mesh has zero surface area");
  Rng rng(seed);
  std::vector<Vec3> points;
  points.reserve(static_cast<std::size_t>(n));
  for (int s = 0; s < n; ++s) {
    const double u = rng.uniform() * total;
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    if (it == cumulative.end()) --it;
    const auto f = static_cast<int>(it - cumulative.begin());
    const Vec3 a = mesh.vertices.row(mesh.faces(f, 0));
    const Vec3 b = mesh.vertices.row(mesh.faces(f, 1));
    const Vec3 c = mesh.vertices.row(mesh.faces(f, 2));
    const double r1 = std::sqrt(rng.uniform());
    const double r2 = rng.uniform();
    points.push_back((1.0 - r1) * a + r1 * (1.0 - r2) * b + r1 * r2 * c);
  }
  return points;
}

std::uint64_t mesh_hash(const TriangleMesh& mesh) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  feed(mesh.vertices.data(), static_cast<std::size_t>(mesh.vertices.size()) * sizeof(double));
  feed(mesh.faces.data(), static_cast<std::size_t>(mesh.faces.size()) * sizeof(int));
  return h;
}

// ----------------------------------------------------------------------- OBJ

std::string mesh_to_obj(const TriangleMesh& mesh) {
  if (mesh.empty()) throw std::invalid_argument("export_mesh: empty mesh");
  mesh.validate();
  std::string out;
  out.reserve(static_cast<std::size_t>(mesh.num_vertices()) * 64 + static_cast<std::size_t>(mesh.num_faces()) * 24);
  char buf[64];
  for (int i = 0; i < mesh.num_vertices(); ++i) {
    out += 'v';
    for (int k = 0; k < 3; ++k) {
      out += ' ';
      auto res = std::to_chars(buf, buf + sizeof(buf), mesh.vertices(i, k));
      out.append(buf, res.ptr);
    }
    out += '\n';
  }
  for (int f = 0; f < mesh.num_faces(); ++f) {
    out += 'f';
    for (int k = 0; k < 3; ++k) {
      out += ' ';
      out += std::to_string(mesh.faces(f, k) + 1);
    }
    out += '\n';
  }
  return out;
}

void export_mesh(const TriangleMesh& mesh, const std::filesystem::path& path) {
  const std::string text = mesh_to_obj(mesh);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("export_mesh: cannot open " + path.string());
  out << text;
  if (!out) throw std::runtime_error("export_mesh: write failed for " + path.string());
}

TriangleMesh mesh_from_obj(const std::string& text) {
  std::vector<Vec3> verts;
  std::vector<std::array<int, 3>> faces;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.size() < 2) continue;
    if (line[0] == 'v' && line[1] == ' ') {
      std::istringstream ls(line.substr(2));
      Vec3 v;
      if (!(ls >> v.x() >> v.y() >> v.z())) throw std::runtime_error("OBJ: bad vertex at line " + std::to_string(lineno));
      verts.push_back(v);
    } else if (line[0] == 'f' && line[1] == ' ') {
      std::istringstream ls(line.substr(2));
      std::vector<int> idx;
      std::string tok;
      while (ls >> tok) {
        const int raw = std::stoi(tok.substr(0, tok.find('/')));
        idx.push_back(raw < 0 ? static_cast<int>(verts.size()) + raw : raw - 1);
      }
      if (idx.size() < 3) throw std::runtime_error("OBJ: face with < 3 vertices at line " + std::to_string(lineno));
      for (std::size_t k = 1; k + 1 < idx.size(); ++k) faces.push_back({idx[0], idx[k], idx[k + 1]});
    }
  }
  TriangleMesh mesh;
  mesh.vertices.resize(static_cast<Eigen::Index>(verts.size()), 3);
  for (std::size_t i = 0; i < verts.size(); ++i) mesh.vertices.row(static_cast<Eigen::Index>(i)) = verts[i];
  mesh.faces.resize(static_cast<Eigen::Index>(faces.size()), 3);
  for (std::size_t i = 0; i < faces.size(); ++i)
    for (int k = 0; k < 3; ++k) mesh.faces(static_cast<Eigen::Index>(i), k) = faces[i][k];
  mesh.validate();
  return mesh;
}

TriangleMesh import_mesh(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("import_mesh: cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return mesh_from_obj(ss.str());
}

}  // namespace viewsketch
