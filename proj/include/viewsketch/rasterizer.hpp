#pragma once

#include <Eigen/Core>

#include <vector>

#include "viewsketch/geometry.hpp"
#include "viewsketch/image.hpp"

namespace viewsketch {

struct SoftRasterSettings {
  double sigma = 1e-4;  // boundary softness, NDC units squared
  int height = 64;
  int width = 64;
  double near = 0.1;
  double far = 100.0;
  double fov_deg = 30.0;
  bool orthographic = false;  // debugging aid
  // Faces are evaluated only within band_multiplier * sqrt(sigma) (NDC) of
  // their screen bounding box; outside, coverage is taken as exactly 0.
  double band_multiplier = 3.0;

  double band() const;
  void validate() const;  // throws std::invalid_argument
};

// Look-at camera with +y up; the origin always projects to the image center.
class CameraProjection {
 public:
  CameraProjection(const Viewpoint& view, double fov_deg, bool orthographic, double aspect = 1.0);

  const Vec3& eye() const { return eye_; }
  const Vec3& right() const { return right_; }
  const Vec3& up() const { return up_; }
  const Vec3& forward() const { return forward_; }

  // Camera-space coordinates (x right, y up, z = depth along the view direction).
  Vec3 to_camera(const Vec3& p) const;
  // Normalized device coordinates in [-1, 1] (y up) for points in view.
  Eigen::Vector2d to_ndc(const Vec3& p) const;
  // d(ndc)/d(p).
  Eigen::Matrix<double, 2, 3> ndc_jacobian(const Vec3& p) const;

 private:
  Vec3 eye_, right_, up_, forward_;
  double tan_half_fov_;
  double aspect_;
  double distance_;
  bool orthographic_;
};

struct Projection {
  Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor> ndc;     // per vertex
  Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor> pixels;  // (x, y) in pixel units, y down
  std::vector<double> depth;                                         // along the view direction
  std::vector<bool> in_front;                                        // depth within [near, far]
  std::vector<bool> face_visible;                                    // all three vertices in front
  bool empty() const;                                                // nothing survives clipping
};

Projection project(const TriangleMesh& mesh, const Viewpoint& view, const SoftRasterSettings& settings);

// Pixel center (row, col) in NDC.
Eigen::Vector2d pixel_center_ndc(int row, int col, int height, int width);

// Forward pass with what the backward pass needs.
struct SoftRasterResult {
  Silhouette image;
  Projection projection;
  std::vector<double> unsaturated_product;  // prod over faces with d < 1 of (1 - d)
  std::vector<int> saturated_count;          // faces with d numerically 1

  // Pixel value at full double precision (the image stores floats).
  double value(int row, int col) const {
    const auto k = static_cast<std::size_t>(row) * image.width() + col;
    return saturated_count[k] > 0 ? 1.0 : 1.0 - unsaturated_product[k];
  }
};

// value = 1 - prod_j (1 - d_j), d_j = sigmoid(+-dist^2(pixel, face boundary) / sigma)
// with + inside the projected face. Depth order is ignored.
SoftRasterResult soft_rasterize(const TriangleMesh& mesh, const Viewpoint& view, const SoftRasterSettings& settings);
Silhouette soft_silhouette(const TriangleMesh& mesh, const Viewpoint& view, const SoftRasterSettings& settings);

// dL/d(vertices) given dL/d(pixel) for the image in `forward`.
Vertices soft_silhouette_backward(const TriangleMesh& mesh, const Viewpoint& view, const SoftRasterSettings& settings,
                                  const SoftRasterResult& forward, const Image& grad_image);

// Binary coverage of pixel centers. Uses the same camera as the soft path.
Silhouette hard_silhouette(const TriangleMesh& mesh, const Viewpoint& view, const SoftRasterSettings& settings);
Silhouette hard_silhouette(const TriangleMesh& mesh, const Viewpoint& view, int resolution);

// Flat-shaded grayscale rendering on a transparent background (z-buffered),
// used to synthesize edge-map sketches from meshes.
RgbaImage render_shaded(const TriangleMesh& mesh, const Viewpoint& view, const SoftRasterSettings& settings);

// Sum of absolute differences between horizontally and vertically adjacent pixels.
double total_variation(const Image& image);

}  // namespace viewsketch
