#include "viewsketch/rasterizer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace viewsketch {

double SoftRasterSettings::band() const { return band_multiplier * std::sqrt(sigma); }

void SoftRasterSettings::validate() const {
  if (!(sigma > 0)) throw std::invalid_argument("SoftRasterSettings: sigma must be > 0");
  if (height <= 0 || width <= 0) throw std::invalid_argument("SoftRasterSettings: resolution must be positive");
  if (!(near > 0) || !(far > near)) throw std::invalid_argument("SoftRasterSettings: need 0 < near < far");
  if (!(fov_deg > 0 && fov_deg < 180)) throw std::invalid_argument("SoftRasterSettings: fov out of range");
}

CameraProjection::CameraProjection(const Viewpoint& view, double fov_deg, bool orthographic, double aspect)
    : tan_half_fov_(std::tan(deg_to_rad(fov_deg) / 2)),
      aspect_(aspect),
      distance_(view.distance),
      orthographic_(orthographic) {
  const Vec3 dir = view.direction();
  eye_ = view.distance * dir;
  forward_ = -dir;
  // Closed form of normalize(forward x +y); stays defined at the poles.
  right_ = Vec3(std::cos(view.azimuth), 0.0, -std::sin(view.azimuth));
  up_ = right_.cross(forward_);
}

Vec3 CameraProjection::to_camera(const Vec3& p) const {
  const Vec3 d = p - eye_;
  return Vec3(d.dot(right_), d.dot(up_), d.dot(forward_));
}

Eigen::Vector2d CameraProjection::to_ndc(const Vec3& p) const {
  const Vec3 c = to_camera(p);
  const double depth = orthographic_ ? distance_ : c.z();
  return Eigen::Vector2d(c.x() / (depth * tan_half_fov_ * aspect_), c.y() / (depth * tan_half_fov_));
}

Eigen::Matrix<double, 2, 3> CameraProjection::ndc_jacobian(const Vec3& p) const {
  Eigen::Matrix<double, 2, 3> j;
  const double sx = 1.0 / (tan_half_fov_ * aspect_);
  const double sy = 1.0 / tan_half_fov_;
  if (orthographic_) {
    j.row(0) = right_.transpose() * (sx / distance_);
    j.row(1) = up_.transpose() * (sy / distance_);
    return j;
  }
  const Vec3 c = to_camera(p);
  const double iz = 1.0 / c.z();
  j.row(0) = sx * (right_ * iz - forward_ * (c.x() * iz * iz)).transpose();
  j.row(1) = sy * (up_ * iz - forward_ * (c.y() * iz * iz)).transpose();
  return j;
}

bool Projection::empty() const {
  return std::none_of(face_visible.begin(), face_visible.end(), [](bool b) { return b; });
}

Projection project(const TriangleMesh& mesh, const Viewpoint& view, const SoftRasterSettings& settings) {
  settings.validate();
  const double aspect = static_cast<double>(settings.width) / settings.height;
  const CameraProjection cam(view, settings.fov_deg, settings.orthographic, aspect);
  const int n = mesh.num_vertices();
  Projection p;
  p.ndc.resize(n, 2);
  p.pixels.resize(n, 2);
  p.depth.resize(static_cast<std::size_t>(n));
  p.in_front.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const Vec3 v = mesh.vertices.row(i);
    const Vec3 c = cam.to_camera(v);
    const auto k = static_cast<std::size_t>(i);
    p.depth[k] = c.z();
    p.in_front[k] = c.z() >= settings.near && c.z() <= settings.far;
    if (p.in_front[k] || settings.orthographic) {
      const Eigen::Vector2d ndc = cam.to_ndc(v);
      p.ndc.row(i) = ndc.transpose();
    } else {
      p.ndc.row(i).setConstant(std::numeric_limits<double>::quiet_NaN());
    }
    p.pixels(i, 0) = (p.ndc(i, 0) + 1.0) * 0.5 * settings.width;
    p.pixels(i, 1) = (1.0 - p.ndc(i, 1)) * 0.5 * settings.height;
  }
  p.face_visible.resize(static_cast<std::size_t>(mesh.num_faces()));
  for (int f = 0; f < mesh.num_faces(); ++f) {
    bool ok = true;
    for (int k = 0; k < 3; ++k) ok = ok && p.in_front[static_cast<std::size_t>(mesh.faces(f, k))];
    p.face_visible[static_cast<std::size_t>(f)] = ok;
  }
  return p;
}

Eigen::Vector2d pixel_center_ndc(int row, int col, int height, int width) {
  return Eigen::Vector2d(2.0 * (col + 0.5) / width - 1.0, 1.0 - 2.0 * (row + 0.5) / height);
}

namespace {

struct Tri2 {
  std::array<Eigen::Vector2d, 3> v;
  double area2;  // twice the signed area
};

Tri2 face_triangle(const Projection& proj, const TriangleMesh& mesh, int f) {
  Tri2 t;
  for (int k = 0; k < 3; ++k) t.v[k] = proj.ndc.row(mesh.faces(f, k)).transpose();
  t.area2 = (t.v[1] - t.v[0]).x() * (t.v[2] - t.v[0]).y() - (t.v[2] - t.v[0]).x() * (t.v[1] - t.v[0]).y();
  return t;
}

// Edge function of p against directed edge a->b.
double edge_fn(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& p) {
  return (b.x() - a.x()) * (p.y() - a.y()) - (b.y() - a.y()) * (p.x() - a.x());
}

bool inside(const Tri2& t, const Eigen::Vector2d& p, bool inclusive) {
  if (std::abs(t.area2) < 1e-18) return false;
  const double s = t.area2 > 0 ? 1.0 : -1.0;
  const double e0 = s * edge_fn(t.v[0], t.v[1], p);
  const double e1 = s * edge_fn(t.v[1], t.v[2], p);
  const double e2 = s * edge_fn(t.v[2], t.v[0], p);
  return inclusive ? (e0 >= 0 && e1 >= 0 && e2 >= 0) : (e0 > 0 && e1 > 0 && e2 > 0);
}

// Squared distance from p to the triangle boundary and its gradient with
// respect to the six 2D vertex coordinates (nearest edge only).
struct BoundaryDistance {
  double dist2;
  std::array<Eigen::Vector2d, 3> grad;
};

BoundaryDistance boundary_distance(const Tri2& t, const Eigen::Vector2d& p) {
  BoundaryDistance best;
  best.dist2 = std::numeric_limits<double>::infinity();
  for (int e = 0; e < 3; ++e) {
    const auto& a = t.v[e];
    const auto& b = t.v[(e + 1) % 3];
    const Eigen::Vector2d ab = b - a;
    const double len2 = ab.squaredNorm();
    double s = len2 > 0 ? (p - a).dot(ab) / len2 : 0.0;
    s = std::clamp(s, 0.0, 1.0);
    const Eigen::Vector2d q = a + s * ab;
    const Eigen::Vector2d diff = p - q;
    const double d2 = diff.squaredNorm();
    if (d2 < best.dist2) {
      best.dist2 = d2;
      best.grad = {Eigen::Vector2d::Zero(), Eigen::Vector2d::Zero(), Eigen::Vector2d::Zero()};
      // s is the minimizer, so only the explicit dependence through q remains.
      best.grad[e] = -2.0 * (1.0 - s) * diff;
      best.grad[(e + 1) % 3] = -2.0 * s * diff;
    }
  }
  return best;
}

constexpr double kSaturation = 1e-12;

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

struct PixelWindow {
  int r0, r1, c0, c1;  // inclusive
  bool empty() const { return r0 > r1 || c0 > c1; }
};

PixelWindow face_window(const Tri2& t, double band, int height, int width) {
  double xmin = std::min({t.v[0].x(), t.v[1].x(), t.v[2].x()}) - band;
  double xmax = std::max({t.v[0].x(), t.v[1].x(), t.v[2].x()}) + band;
  double ymin = std::min({t.v[0].y(), t.v[1].y(), t.v[2].y()}) - band;
  double ymax = std::max({t.v[0].y(), t.v[1].y(), t.v[2].y()}) + band;
  // Pixel center col c has x = 2(c+0.5)/W - 1.
  auto col_of = [width](double x) { return (x + 1.0) * 0.5 * width - 0.5; };
  auto row_of = [height](double y) { return (1.0 - y) * 0.5 * height - 0.5; };
  PixelWindow w{1, 0, 1, 0};
  if (!std::isfinite(xmin) || !std::isfinite(ymin) || !std::isfinite(xmax) || !std::isfinite(ymax)) return w;
  auto clamp_idx = [](double v, int hi) { return static_cast<int>(std::clamp(v, -1.0, static_cast<double>(hi))); };
  w.c0 = std::max(0, clamp_idx(std::ceil(col_of(xmin)), width));
  w.c1 = std::min(width - 1, clamp_idx(std::floor(col_of(xmax)), width));
  w.r0 = std::max(0, clamp_idx(std::ceil(row_of(ymax)), height));
  w.r1 = std::min(height - 1, clamp_idx(std::floor(row_of(ymin)), height));
  return w;
}

}  // namespace

SoftRasterResult soft_rasterize(const TriangleMesh& mesh, const Viewpoint& view, const SoftRasterSettings& settings) {
  SoftRasterResult out;
  out.projection = project(mesh, view, settings);
  const int H = settings.height, W = settings.width;
  const auto npix = static_cast<std::size_t>(H) * W;
  out.unsaturated_product.assign(npix, 1.0);
  out.saturated_count.assign(npix, 0);
  const double band = settings.band();
  const double inv_sigma = 1.0 / settings.sigma;

  for (int f = 0; f < mesh.num_faces(); ++f) {
    if (!out.projection.face_visible[static_cast<std::size_t>(f)]) continue;
    const Tri2 tri = face_triangle(out.projection, mesh, f);
    const PixelWindow win = face_window(tri, band, H, W);
    if (win.empty()) continue;
    for (int r = win.r0; r <= win.r1; ++r) {
      for (int c = win.c0; c <= win.c1; ++c) {
        const Eigen::Vector2d p = pixel_center_ndc(r, c, H, W);
        const BoundaryDistance bd = boundary_distance(tri, p);
        const double sign = inside(tri, p, false) ? 1.0 : -1.0;
        const double d = sigmoid(sign * bd.dist2 * inv_sigma);
        const auto k = static_cast<std::size_t>(r) * W + c;
        if (1.0 - d < kSaturation) {
          ++out.saturated_count[k];
        } else {
          out.unsaturated_product[k] *= (1.0 - d);
        }
      }
    }
  }

  out.image = Silhouette(H, W);
  for (std::size_t k = 0; k < npix; ++k) {
    const double prod = out.saturated_count[k] > 0 ? 0.0 : out.unsaturated_product[k];
    out.image.pixels()[k] = static_cast<float>(1.0 - prod);
  }
  return out;
}

Silhouette soft_silhouette(const TriangleMesh& mesh, const Viewpoint& view, const SoftRasterSettings& settings) {
  return soft_rasterize(mesh, view, settings).image;
}

Vertices soft_silhouette_backward(const TriangleMesh& mesh, const Viewpoint& view, const SoftRasterSettings& settings,
                                  const SoftRasterResult& forward, const Image& grad_image) {
  const int H = settings.height, W = settings.width;
  if (grad_image.height() != H || grad_image.width() != W) {
    throw std::invalid_argument("soft_silhouette_backward: gradient image has wrong resolution");
  }
  const auto& proj = forward.projection;
  const double aspect = static_cast<double>(W) / H;
  const CameraProjection cam(view, settings.fov_deg, settings.orthographic, aspect);
  const double band = settings.band();
  const double inv_sigma = 1.0 / settings.sigma;

  // Accumulate dL/d(ndc) per vertex first, then map through the projection.
  Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor> grad_ndc =
      Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor>::Zero(mesh.num_vertices(), 2);

  for (int f = 0; f < mesh.num_faces(); ++f) {
    if (!proj.face_visible[static_cast<std::size_t>(f)]) continue;
    const Tri2 tri = face_triangle(proj, mesh, f);
    const PixelWindow win = face_window(tri, band, H, W);
    if (win.empty()) continue;
    std::array<Eigen::Vector2d, 3> acc = {Eigen::Vector2d::Zero(), Eigen::Vector2d::Zero(), Eigen::Vector2d::Zero()};
    for (int r = win.r0; r <= win.r1; ++r) {
      for (int c = win.c0; c <= win.c1; ++c) {
        const auto k = static_cast<std::size_t>(r) * W + c;
        const double g = grad_image(r, c);
        if (g == 0.0) continue;
        const Eigen::Vector2d p = pixel_center_ndc(r, c, H, W);
        const BoundaryDistance bd = boundary_distance(tri, p);
        const double sign = inside(tri, p, false) ? 1.0 : -1.0;
        const double d = sigmoid(sign * bd.dist2 * inv_sigma);
        // d(value)/d(d_j) = prod_{k != j} (1 - d_k)
        double dvalue_dd;
        const int nsat = forward.saturated_count[k];
        if (1.0 - d < kSaturation) {
          dvalue_dd = nsat == 1 ? forward.unsaturated_product[k] : 0.0;
        } else {
          dvalue_dd = nsat == 0 ? forward.unsaturated_product[k] / (1.0 - d) : 0.0;
        }
        if (dvalue_dd == 0.0) continue;
        const double dd_ddist2 = d * (1.0 - d) * sign * inv_sigma;
        const double scale = g * dvalue_dd * dd_ddist2;
        for (int v = 0; v < 3; ++v) acc[v] += scale * bd.grad[v];
      }
    }
    for (int v = 0; v < 3; ++v) grad_ndc.row(mesh.faces(f, v)) += acc[v].transpose();
  }

  Vertices grad = Vertices::Zero(mesh.num_vertices(), 3);
  for (int i = 0; i < mesh.num_vertices(); ++i) {
    if (grad_ndc(i, 0) == 0.0 && grad_ndc(i, 1) == 0.0) continue;
    const Vec3 v = mesh.vertices.row(i);
    grad.row(i) = (grad_ndc.row(i) * cam.ndc_jacobian(v));
  }
  return grad;
}

Silhouette hard_silhouette(const TriangleMesh& mesh, const Viewpoint& view, const SoftRasterSettings& settings) {
  const Projection proj = project(mesh, view, settings);
  const int H = settings.height, W = settings.width;
  Silhouette out(H, W);
  for (int f = 0; f < mesh.num_faces(); ++f) {
    if (!proj.face_visible[static_cast<std::size_t>(f)]) continue;
    const Tri2 tri = face_triangle(proj, mesh, f);
    const PixelWindow win = face_window(tri, 0.0, H, W);
    if (win.empty()) continue;
    for (int r = win.r0; r <= win.r1; ++r)
      for (int c = win.c0; c <= win.c1; ++c)
        if (out(r, c) == 0.0f && inside(tri, pixel_center_ndc(r, c, H, W), true)) out(r, c) = 1.0f;
  }
  return out;
}

Silhouette hard_silhouette(const TriangleMesh& mesh, const Viewpoint& view, int resolution) {
  SoftRasterSettings s;
  s.height = s.width = resolution;
  return hard_silhouette(mesh, view, s);
}

RgbaImage render_shaded(const TriangleMesh& mesh, const Viewpoint& view, const SoftRasterSettings& settings) {
  const Projection proj = project(mesh, view, settings);
  const int H = settings.height, W = settings.width;
  const double aspect = static_cast<double>(W) / H;
  const CameraProjection cam(view, settings.fov_deg, settings.orthographic, aspect);
  RgbaImage out(H, W);
  std::vector<double> zbuf(static_cast<std::size_t>(H) * W, std::numeric_limits<double>::infinity());
  // Key light above-left of the camera, in world space.
  const Vec3 light = (-cam.forward() + 0.6 * cam.up() - 0.5 * cam.right()).normalized();
  for (int f = 0; f < mesh.num_faces(); ++f) {
    if (!proj.face_visible[static_cast<std::size_t>(f)]) continue;
    const Tri2 tri = face_triangle(proj, mesh, f);
    if (std::abs(tri.area2) < 1e-18) continue;
    const Vec3 a = mesh.vertices.row(mesh.faces(f, 0));
    const Vec3 b = mesh.vertices.row(mesh.faces(f, 1));
    const Vec3 c = mesh.vertices.row(mesh.faces(f, 2));
    Vec3 n = (b - a).cross(c - a);
    if (n.norm() == 0) continue;
    n.normalize();
    // Two-sided lighting: face the normal towards the camera.
    if (n.dot(cam.eye() - a) < 0) n = -n;
    // Kept well below white so outlines survive compositing on a white page.
    const double shade = std::clamp(0.2 + 0.55 * std::max(0.0, n.dot(light)), 0.0, 1.0);
    const auto value = static_cast<std::uint8_t>(std::lround(shade * 255.0));
    std::array<double, 3> inv_depth;
    for (int k = 0; k < 3; ++k) inv_depth[k] = 1.0 / proj.depth[static_cast<std::size_t>(mesh.faces(f, k))];
    const PixelWindow win = face_window(tri, 0.0, H, W);
    if (win.empty()) continue;
    for (int r = win.r0; r <= win.r1; ++r) {
      for (int col = win.c0; col <= win.c1; ++col) {
        const Eigen::Vector2d p = pixel_center_ndc(r, col, H, W);
        if (!inside(tri, p, true)) continue;
        const double w0 = edge_fn(tri.v[1], tri.v[2], p) / tri.area2;
        const double w1 = edge_fn(tri.v[2], tri.v[0], p) / tri.area2;
        const double w2 = 1.0 - w0 - w1;
        const double depth = 1.0 / (w0 * inv_depth[0] + w1 * inv_depth[1] + w2 * inv_depth[2]);
        const auto k = static_cast<std::size_t>(r) * W + col;
        if (depth >= zbuf[k]) continue;
        zbuf[k] = depth;
        auto* px = out.pixel(r, col);
        px[0] = px[1] = px[2] = value;
        px[3] = 255;
      }
    }
  }
  return out;
}

double total_variation(const Image& image) {
  double tv = 0.0;
  for (int r = 0; r < image.height(); ++r) {
    for (int c = 0; c < image.width(); ++c) {
      if (c + 1 < image.width()) tv += std::abs(image(r, c + 1) - image(r, c));
      if (r + 1 < image.height()) tv += std::abs(image(r + 1, c) - image(r, c));
    }
  }
  return tv;
}

}  // namespace viewsketch
