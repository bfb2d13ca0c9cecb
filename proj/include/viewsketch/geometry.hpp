#pragma once

#include <Eigen/Geometry>

#include <array>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

#include "viewsketch/image.hpp"

namespace viewsketch {

using Vec3 = Eigen::Vector3d;
using Vertices = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Faces = Eigen::Matrix<int, Eigen::Dynamic, 3, Eigen::RowMajor>;

// Camera distance shared by every viewpoint of an experiment.
inline constexpr double kDefaultCameraDistance = 2.732;

// Fixed-topology triangle mesh. Vertex i is row i of `vertices`.
struct TriangleMesh {
  Vertices vertices;
  Faces faces;

  int num_vertices() const { return static_cast<int>(vertices.rows()); }
  int num_faces() const { return static_cast<int>(faces.rows()); }
  bool empty() const { return vertices.rows() == 0 || faces.rows() == 0; }

  // Throws std::invalid_argument on out-of-range or repeated face indices.
  void validate() const;

  bool same_topology(const TriangleMesh& other) const {
    return faces.rows() == other.faces.rows() && faces == other.faces;
  }
};

// Wrap an angle to [-pi, pi).
double wrap_angle(double radians);

inline double deg_to_rad(double d) { return d * std::numbers::pi / 180.0; }
inline double rad_to_deg(double r) { return r * 180.0 / std::numbers::pi; }

// Camera placement on a sphere around the origin.
//   eye = distance * (cos(el) sin(az), sin(el), cos(el) cos(az))
// so (0, 0) looks at the object from +z, and positive azimuth swings the
// camera from +z towards +x.
struct Viewpoint {
  double elevation = 0.0;  // radians
  double azimuth = 0.0;    // radians
  double distance = kDefaultCameraDistance;

  static Viewpoint from_degrees(double elevation_deg, double azimuth_deg,
                                double distance = kDefaultCameraDistance);

  double elevation_deg() const { return rad_to_deg(elevation); }
  double azimuth_deg() const { return rad_to_deg(azimuth); }

  // Elevation folded into [-pi/2, pi/2] (flipping azimuth when folding),
  // azimuth wrapped to [-pi, pi). Idempotent; the view direction is kept.
  Viewpoint normalized() const;
  bool is_normalized() const;

  // Unit vector from the origin towards the camera.
  Vec3 direction() const;
  Vec3 eye() const { return distance * direction(); }
};

// Angle between the two view directions, radians in [0, pi].
double angular_distance(const Viewpoint& a, const Viewpoint& b);

using Silhouette = Image;

// Silhouettes at increasing resolution, coarsest first.
struct SilhouettePyramid {
  std::vector<Silhouette> levels;

  int num_levels() const { return static_cast<int>(levels.size()); }
  const Silhouette& finest() const { return levels.back(); }
};

// Unit icosphere: subdivision 0 is the icosahedron (12 vertices, 20 faces),
// each level splits every face into four.
TriangleMesh load_template(int subdivision);

// vertices + offsets; faces are shared. `offsets` has one row per vertex.
TriangleMesh deform(const TriangleMesh& base, const Vertices& offsets);
TriangleMesh deform(const TriangleMesh& base, std::span<const float> flat_offsets);

// ---------------------------------------------------------------- utilities

using Edge = std::pair<int, int>;  // first < second

// Unique undirected edges, sorted.
std::vector<Edge> unique_edges(const Faces& faces);

// Pairs of faces sharing an edge, together with that edge.
struct FacePair {
  int face_a;
  int face_b;
  Edge edge;
};
std::vector<FacePair> adjacent_face_pairs(const Faces& faces);

// Every edge shared by exactly two faces.
bool is_closed(const TriangleMesh& mesh);

double surface_area(const TriangleMesh& mesh);

struct Bounds {
  Vec3 min;
  Vec3 max;
  Vec3 center() const { return 0.5 * (min + max); }
  Vec3 extent() const { return max - min; }
};
Bounds bounding_box(const TriangleMesh& mesh);

// x -> scale * x + translation
struct Similarity {
  double scale = 1.0;
  Vec3 translation = Vec3::Zero();
  TriangleMesh apply(const TriangleMesh& mesh) const;
};

// Similarity that maps the mesh bounding box into [-0.5, 0.5]^3 (longest side 1, centered).
Similarity unit_cube_normalization(const TriangleMesh& mesh);
TriangleMesh normalize_to_unit_cube(const TriangleMesh& mesh);

// Closed axis-aligned box with outward-facing triangles.
TriangleMesh make_box(const Vec3& min, const Vec3& max);

// Concatenate meshes, re-indexing faces.
TriangleMesh merge_meshes(std::span<const TriangleMesh> parts);

// ----------------------------------------------------------------- voxels

struct VoxelGrid {
  int resolution = 0;
  Vec3 origin = Vec3::Constant(-0.5);  // min corner of the grid
  double cell_size = 1.0 / 32;
  std::vector<std::uint8_t> occupancy;  // x fastest, then y, then z
  bool watertight = true;                // false when the input mesh had open edges

  std::size_t index(int x, int y, int z) const {
    return (static_cast<std::size_t>(z) * resolution + y) * resolution + x;
  }
  bool occupied(int x, int y, int z) const { return occupancy[index(x, y, z)] != 0; }
  Vec3 cell_center(int x, int y, int z) const {
    return origin + cell_size * Vec3(x + 0.5, y + 0.5, z + 0.5);
  }
  std::size_t count() const;
};

// Grid covering [-0.5, 0.5]^3.
struct GridFrame {
  Vec3 origin = Vec3::Constant(-0.5);
  double extent = 1.0;
};

// A cell is occupied iff its center is inside the mesh, decided by ray parity
// along +z. Open meshes still get a parity answer, with watertight = false.
VoxelGrid voxelize(const TriangleMesh& mesh, int resolution, const GridFrame& frame = {});

// Flat binary occupancy (one byte per cell) at `base`.bin plus a JSON header
// {resolution, origin, cell_size} at `base`.json.
void save_voxels(const VoxelGrid& grid, const std::filesystem::path& base);
VoxelGrid load_voxels(const std::filesystem::path& base);

// ---------------------------------------------------------------- sampling

// Area-uniform surface samples; deterministic for a given seed.
// Throws std::invalid_argument for n < 1 or a zero-area mesh.
std::vector<Vec3> sample_surface(const TriangleMesh& mesh, int n, std::uint64_t seed);

// Stable content hash of vertices and faces.
std::uint64_t mesh_hash(const TriangleMesh& mesh);

// --------------------------------------------------------------------- OBJ

// Writes `v` / `f` records with 1-based indices. Vertex coordinates use the
// shortest round-trip decimal form. Throws on an empty mesh (nothing written)
// or I/O failure.
void export_mesh(const TriangleMesh& mesh, const std::filesystem::path& path);
std::string mesh_to_obj(const TriangleMesh& mesh);
TriangleMesh import_mesh(const std::filesystem::path& path);
TriangleMesh mesh_from_obj(const std::string& text);

}  // namespace viewsketch
