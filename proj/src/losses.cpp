#include "viewsketch/losses.hpp"

#include <unsupported/Eigen/AutoDiff>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace viewsketch {

void LossWeights::validate() const {
  for (double w : {random_view, view, view_reconstruction, shape_discriminator, domain_discriminator, regularizer,
                   laplacian, flatten}) {
    if (!std::isfinite(w) || w < 0.0) throw std::invalid_argument("loss weights must be finite and non-negative");
  }
}

namespace {

void require_same_size(const Image& a, const Image& b, const char* what) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw std::invalid_argument(std::string(what) + ": resolution mismatch (" + std::to_string(a.height()) + "x" +
                                std::to_string(a.width()) + " vs " + std::to_string(b.height()) + "x" +
                                std::to_string(b.width()) + ")");
  }
}

}  // namespace

IouResult iou_loss(const Silhouette& a, const Silhouette& b) {
  require_same_size(a, b, "iou_loss");
  double inter = 0.0, uni = 0.0;
  const auto pa = a.pixels();
  const auto pb = b.pixels();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const double x = pa[i], y = pb[i];
    inter += x * y;
    uni += x + y - x * y;
  }
  if (uni <= 0.0) return {0.0, true};
  return {1.0 - inter / uni, false};
}

Image iou_loss_grad(const Silhouette& a, const Silhouette& b) {
  require_same_size(a, b, "iou_loss_grad");
  double inter = 0.0, uni = 0.0;
  const auto pa = a.pixels();
  const auto pb = b.pixels();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    inter += static_cast<double>(pa[i]) * pb[i];
    uni += static_cast<double>(pa[i]) + pb[i] - static_cast<double>(pa[i]) * pb[i];
  }
  Image g(b.height(), b.width());
  if (uni <= 0.0) return g;
  const double u2 = uni * uni;
  auto pg = g.pixels();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const double x = pa[i];
    pg[i] = static_cast<float>(-(x * uni - inter * (1.0 - x)) / u2);
  }
  return g;
}

namespace {

struct TermResult {
  double loss;
  Vertices grad;
};

TermResult render_term(const Silhouette& target, const TriangleMesh& mesh, const Viewpoint& view,
                       const SoftRasterSettings& settings) {
  const SoftRasterResult fwd = soft_rasterize(mesh, view, settings);
  const double loss = iou_loss(target, fwd.image).loss;
  const Image grad_image = iou_loss_grad(target, fwd.image);
  return {loss, soft_silhouette_backward(mesh, view, settings, fwd, grad_image)};
}

}  // namespace

RenderedLoss silhouette_loss(const Silhouette& target, const TriangleMesh& mesh, const TriangleMesh& random_mesh,
                             const Viewpoint& view, const Viewpoint& random_view, double lambda_r,
                             const SoftRasterSettings& settings) {
  if (settings.height != target.height() || settings.width != target.width()) {
    throw std::invalid_argument("silhouette_loss: render resolution " + std::to_string(settings.height) + "x" +
                                std::to_string(settings.width) + " does not match target " +
                                std::to_string(target.height()) + "x" + std::to_string(target.width()));
  }
  if (lambda_r < 0.0) throw std::invalid_argument("silhouette_loss: lambda_r must be >= 0");
  RenderedLoss out;
  TermResult main = render_term(target, mesh, view, settings);
  out.loss = main.loss;
  out.grad_mesh = std::move(main.grad);
  out.render_calls = 1;
  out.grad_random_mesh = Vertices::Zero(random_mesh.num_vertices(), 3);
  if (lambda_r > 0.0) {
    TermResult rnd = render_term(target, random_mesh, random_view, settings);
    out.loss += lambda_r * rnd.loss;
    out.grad_random_mesh = lambda_r * rnd.grad;
    out.render_calls = 2;
  }
  return out;
}

RenderedLoss progressive_silhouette_loss(const SilhouettePyramid& pyramid, const TriangleMesh& mesh,
                                         const TriangleMesh& random_mesh, const Viewpoint& view,
                                         const Viewpoint& random_view, double lambda_r,
                                         std::span<const double> level_weights, const SoftRasterSettings& settings) {
  if (static_cast<int>(level_weights.size()) != pyramid.num_levels()) {
    throw std::invalid_argument("progressive_silhouette_loss: " + std::to_string(level_weights.size()) +
                                " level weights for a " + std::to_string(pyramid.num_levels()) + "-level pyramid");
  }
  if (std::none_of(level_weights.begin(), level_weights.end(), [](double w) { return w > 0.0; })) {
    throw std::invalid_argument("progressive_silhouette_loss: all level weights are zero");
  }
  RenderedLoss out;
  out.grad_mesh = Vertices::Zero(mesh.num_vertices(), 3);
  out.grad_random_mesh = Vertices::Zero(random_mesh.num_vertices(), 3);
  out.level_losses.assign(level_weights.size(), 0.0);
  for (std::size_t i = 0; i < level_weights.size(); ++i) {
    const double w = level_weights[i];
    if (w < 0.0) throw std::invalid_argument("progressive_silhouette_loss: negative level weight");
    if (w == 0.0) continue;
    const Silhouette& s = pyramid.levels[i];
    SoftRasterSettings level = settings;
    level.height = s.height();
    level.width = s.width();
    RenderedLoss term = silhouette_loss(s, mesh, random_mesh, view, random_view, lambda_r, level);
    out.level_losses[i] = term.loss;
    out.loss += w * term.loss;
    out.grad_mesh += w * term.grad_mesh;
    out.grad_random_mesh += w * term.grad_random_mesh;
    out.render_calls += term.render_calls;
  }
  return out;
}

// ------------------------------------------------------------- laplacian

UniformLaplacian::UniformLaplacian(const Faces& faces, int num_vertices) {
  std::vector<std::vector<int>> adj(static_cast<std::size_t>(num_vertices));
  for (const auto& [a, b] : unique_edges(faces)) {
    if (a < 0 || b >= num_vertices) throw std::invalid_argument("UniformLaplacian: face index out of range");
    adj[static_cast<std::size_t>(a)].push_back(b);
    adj[static_cast<std::size_t>(b)].push_back(a);
  }
  for (std::size_t i = 0; i < adj.size(); ++i) {
    if (adj[i].empty()) throw std::invalid_argument("UniformLaplacian: vertex " + std::to_string(i) + " is isolated");
    std::sort(adj[i].begin(), adj[i].end());
  }
  neighbors_ = std::move(adj);
}

double UniformLaplacian::loss(const Vertices& v, Vertices* grad) const {
  const auto n = static_cast<Eigen::Index>(neighbors_.size());
  if (v.rows() != n) throw std::invalid_argument("UniformLaplacian: vertex count mismatch");
  Vertices delta(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    Vec3 c = Vec3::Zero();
    for (int j : neighbors_[static_cast<std::size_t>(i)]) c += v.row(j).transpose();
    c /= static_cast<double>(neighbors_[static_cast<std::size_t>(i)].size());
    delta.row(i) = v.row(i) - c.transpose();
  }
  const double value = delta.rowwise().squaredNorm().sum() / static_cast<double>(n);
  if (grad) {
    *grad = delta;
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& nb = neighbors_[static_cast<std::size_t>(i)];
      const double inv = 1.0 / static_cast<double>(nb.size());
      for (int j : nb) grad->row(j) -= inv * delta.row(i);
    }
    *grad *= 2.0 / static_cast<double>(n);
  }
  return value;
}

// --------------------------------------------------------------- flatten

FlattenLoss::FlattenLoss(const Faces& faces) {
  for (const FacePair& p : adjacent_face_pairs(faces)) {
    auto opposite = [&](int f) {
      for (int k = 0; k < 3; ++k) {
        const int v = faces(f, k);
        if (v != p.edge.first && v != p.edge.second) return v;
      }
      throw std::invalid_argument("FlattenLoss: degenerate face");
    };
    pairs_.push_back({p.edge.first, p.edge.second, opposite(p.face_a), opposite(p.face_b)});
  }
}

namespace {

using AD = Eigen::AutoDiffScalar<Eigen::Matrix<double, 12, 1>>;
using ADVec = Eigen::Matrix<AD, 3, 1>;

constexpr double kDegenerateLength = 1e-10;

}  // namespace

double FlattenLoss::loss(const Vertices& v, Vertices* grad, int* skipped) const {
  if (grad) *grad = Vertices::Zero(v.rows(), 3);
  int skip = 0;
  double total = 0.0;
  for (const Wing& w : pairs_) {
    const int ids[4] = {w.e0, w.e1, w.a, w.b};
    ADVec p[4];
    for (int k = 0; k < 4; ++k) {
      for (int c = 0; c < 3; ++c) {
        p[k](c) = AD(v(ids[k], c), 12, 3 * k + c);
      }
    }
    const ADVec e = p[1] - p[0];
    const AD e2 = e.squaredNorm();
    if (e2.value() < kDegenerateLength) {
      ++skip;
      continue;
    }
    const ADVec da = p[2] - p[0];
    const ADVec db = p[3] - p[0];
    const ADVec ba = da - e * (da.dot(e) / e2);
    const ADVec bb = db - e * (db.dot(e) / e2);
    const AD na2 = ba.squaredNorm();
    const AD nb2 = bb.squaredNorm();
    if (na2.value() < kDegenerateLength || nb2.value() < kDegenerateLength) {
      ++skip;
      continue;
    }
    const AD cosine = ba.dot(bb) / sqrt(na2 * nb2);
    const AD term = (cosine + 1.0) * (cosine + 1.0);
    total += term.value();
    if (grad) {
      for (int k = 0; k < 4; ++k)
        for (int c = 0; c < 3; ++c) (*grad)(ids[k], c) += term.derivatives()(3 * k + c);
    }
  }
  if (skipped) *skipped = skip;
  const std::size_t used = pairs_.size() - static_cast<std::size_t>(skip);
  if (used == 0) return 0.0;
  if (grad) *grad /= static_cast<double>(used);
  return total / static_cast<double>(used);
}

// ----------------------------------------------------------------- views

double view_loss(const Viewpoint& v, const Viewpoint& v_hat) {
  const double de = v.elevation - v_hat.elevation;
  const double da = wrap_angle(v.azimuth - v_hat.azimuth);
  return std::hypot(de, da);
}

double view_reconstruction_loss(std::span<const Viewpoint> v, std::span<const Viewpoint> roundtrip) {
  if (v.size() != roundtrip.size() || v.empty()) {
    throw std::invalid_argument("view_reconstruction_loss: batches must be non-empty and equally sized");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) s += view_loss(v[i], roundtrip[i]);
  return s / static_cast<double>(v.size());
}

nn::Var view_loss(nn::Graph& g, nn::Var elevation, nn::Var azimuth, std::span<const Viewpoint> targets) {
  const auto n = static_cast<Eigen::Index>(targets.size());
  if (elevation.rows() != n || azimuth.rows() != n || elevation.cols() != 1 || azimuth.cols() != 1 || n == 0) {
    throw std::invalid_argument("view_loss: expected Nx1 elevation/azimuth matching the target count");
  }
  nn::Matrix de(n, 1), da(n, 1), norm(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& t = targets[static_cast<std::size_t>(i)];
    de(i, 0) = static_cast<float>(elevation.value()(i, 0) - t.elevation);
    da(i, 0) = static_cast<float>(wrap_angle(azimuth.value()(i, 0) - t.azimuth));
    norm(i, 0) = std::hypot(de(i, 0), da(i, 0));
  }
  nn::Matrix value(1, 1);
  value(0, 0) = norm.mean();
  return g.custom({elevation, azimuth}, std::move(value),
                  [de, da, norm, n](const nn::Matrix& gout, std::span<nn::Matrix*> gin) {
                    const float scale = gout(0, 0) / static_cast<float>(n);
                    for (Eigen::Index i = 0; i < n; ++i) {
                      const float r = std::max(norm(i, 0), 1e-8f);
                      if (gin[0]) (*gin[0])(i, 0) += scale * de(i, 0) / r;
                      if (gin[1]) (*gin[1])(i, 0) += scale * da(i, 0) / r;
                    }
                  });
}

// ------------------------------------------------------- discriminators

double binary_cross_entropy(std::span<const double> positive, std::span<const double> negative) {
  if (positive.empty() || negative.empty()) throw std::invalid_argument("binary_cross_entropy: empty batch");
  auto clamp = [](double p) { return std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp); };
  double a = 0.0, b = 0.0;
  for (double p : positive) a -= std::log(clamp(p));
  for (double q : negative) b -= std::log(1.0 - clamp(q));
  return a / static_cast<double>(positive.size()) + b / static_cast<double>(negative.size());
}

namespace {

// log(1 + e^x) without overflow.
double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

}  // namespace

nn::Var binary_cross_entropy(nn::Graph& g, nn::Var positive_logits, nn::Var negative_logits) {
  if (positive_logits.cols() != 1 || negative_logits.cols() != 1 || positive_logits.rows() == 0 ||
      negative_logits.rows() == 0) {
    throw std::invalid_argument("binary_cross_entropy: expected non-empty Nx1 logits");
  }
  const double limit = std::log((1.0 - kProbabilityClamp) / kProbabilityClamp);
  const nn::Matrix& pl = positive_logits.value();
  const nn::Matrix& ql = negative_logits.value();
  const auto np = pl.rows(), nq = ql.rows();
  double a = 0.0, b = 0.0;
  nn::Matrix gp(np, 1), gq(nq, 1);
  for (Eigen::Index i = 0; i < np; ++i) {
    const double x = pl(i, 0);
    const bool inside = std::abs(x) < limit;
    const double xc = std::clamp(x, -limit, limit);
    a += softplus(-xc);
    gp(i, 0) = inside ? static_cast<float>((sigmoid(xc) - 1.0) / static_cast<double>(np)) : 0.0f;
  }
  for (Eigen::Index i = 0; i < nq; ++i) {
    const double x = ql(i, 0);
    const bool inside = std::abs(x) < limit;
    const double xc = std::clamp(x, -limit, limit);
    b += softplus(xc);
    gq(i, 0) = inside ? static_cast<float>(sigmoid(xc) / static_cast<double>(nq)) : 0.0f;
  }
  nn::Matrix value(1, 1);
  value(0, 0) = static_cast<float>(a / static_cast<double>(np) + b / static_cast<double>(nq));
  return g.custom({positive_logits, negative_logits}, std::move(value),
                  [gp, gq](const nn::Matrix& gout, std::span<nn::Matrix*> gin) {
                    if (gin[0]) *gin[0] += gout(0, 0) * gp;
                    if (gin[1]) *gin[1] += gout(0, 0) * gq;
                  });
}

// ----------------------------------------------------------------- total

double total_loss(const LossComponents& c, const LossWeights& w, bool domain_adaptation) {
  std::string missing;
  auto need = [&](const std::optional<double>& v, const char* name) {
    if (!v) missing += missing.empty() ? name : std::string(", ") + name;
  };
  need(c.progressive_silhouette, "progressive_silhouette");
  need(c.regularizer, "regularizer");
  need(c.view, "view");
  need(c.view_reconstruction, "view_reconstruction");
  need(c.shape_discriminator, "shape_discriminator");
  if (domain_adaptation) need(c.domain_discriminator, "domain_discriminator");
  if (!missing.empty()) throw std::invalid_argument("total_loss: missing components: " + missing);
  double t = *c.progressive_silhouette + *c.regularizer + w.view * *c.view +
             w.view_reconstruction * *c.view_reconstruction + w.shape_discriminator * *c.shape_discriminator;
  if (domain_adaptation) t += w.domain_discriminator * *c.domain_discriminator;
  return t;
}

}  // namespace viewsketch
