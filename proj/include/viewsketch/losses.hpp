#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "viewsketch/geometry.hpp"
#include "viewsketch/nn.hpp"
#include "viewsketch/rasterizer.hpp"

namespace viewsketch {

struct LossWeights {
  double random_view = 0.1;  // lambda_r: weight of the random-view silhouette term
  double view = 10.0;
  double view_reconstruction = 10.0;
  double shape_discriminator = 0.1;
  double domain_discriminator = 0.1;
  // Regularizer term = regularizer * (laplacian * L_lap + flatten * L_flat).
  double regularizer = 0.1;
  double laplacian = 1.0;
  double flatten = 1.0;

  void validate() const;  // all weights must be finite and >= 0
};

// ---------------------------------------------------------------- IoU

struct IouResult {
  double loss = 0.0;
  bool degenerate = false;  // both inputs identically zero
};

// 1 - sum(a*b) / sum(a + b - a*b).
IouResult iou_loss(const Silhouette& a, const Silhouette& b);
// d iou_loss(a, b) / d b.
Image iou_loss_grad(const Silhouette& a, const Silhouette& b);

// ---------------------------------------------------- rendered silhouette

struct RenderedLoss {
  double loss = 0.0;
  Vertices grad_mesh;         // d loss / d(mesh vertices)
  Vertices grad_random_mesh;  // zero when the random-view term is off
  int render_calls = 0;
  std::vector<double> level_losses;  // progressive loss only; 0 for skipped levels
};

// iou(S, P(mesh, V)) + lambda_r * iou(S, P(mesh_r, V_r)), rendered at S's
// resolution. The random-view render is skipped when lambda_r == 0.
RenderedLoss silhouette_loss(const Silhouette& target, const TriangleMesh& mesh, const TriangleMesh& random_mesh,
                             const Viewpoint& view, const Viewpoint& random_view, double lambda_r,
                             const SoftRasterSettings& settings);

// sum_i w_i * silhouette_loss at level i; zero-weight levels are not rendered.
RenderedLoss progressive_silhouette_loss(const SilhouettePyramid& pyramid, const TriangleMesh& mesh,
                                         const TriangleMesh& random_mesh, const Viewpoint& view,
                                         const Viewpoint& random_view, double lambda_r,
                                         std::span<const double> level_weights, const SoftRasterSettings& settings);

// ---------------------------------------------------------- regularizers

// Mean squared distance of each vertex from the centroid of its neighbors.
class UniformLaplacian {
 public:
  UniformLaplacian() = default;
  // Throws if any vertex has no neighbors.
  UniformLaplacian(const Faces& faces, int num_vertices);
  double loss(const Vertices& v, Vertices* grad = nullptr) const;
  int num_vertices() const { return static_cast<int>(neighbors_.size()); }

 private:
  std::vector<std::vector<int>> neighbors_;
};

// Mean over edge-adjacent face pairs of (cos(theta) + 1)^2, theta the dihedral
// angle (pi when coplanar).
class FlattenLoss {
 public:
  FlattenLoss() = default;
  explicit FlattenLoss(const Faces& faces);
  // `skipped` receives the number of pairs dropped for degenerate geometry.
  double loss(const Vertices& v, Vertices* grad = nullptr, int* skipped = nullptr) const;
  std::size_t num_pairs() const { return pairs_.size(); }

 private:
  struct Wing {
    int e0, e1, a, b;  // shared edge and the two opposite vertices
  };
  std::vector<Wing> pairs_;
};

// ---------------------------------------------------------------- views

// || (d_elevation, wrap(d_azimuth)) ||_2, radians.
double view_loss(const Viewpoint& v, const Viewpoint& v_hat);
// Mean of view_loss over paired batches.
double view_reconstruction_loss(std::span<const Viewpoint> v, std::span<const Viewpoint> roundtrip);

// Graph versions: mean view_loss over rows of (elevation, azimuth) columns.
nn::Var view_loss(nn::Graph& g, nn::Var elevation, nn::Var azimuth, std::span<const Viewpoint> targets);

// --------------------------------------------------------- discriminators

inline constexpr double kProbabilityClamp = 1e-7;

// -mean(log p_pos) - mean(log(1 - p_neg)), probabilities clamped.
double binary_cross_entropy(std::span<const double> positive, std::span<const double> negative);
inline double shape_discriminator_loss(std::span<const double> score_m, std::span<const double> score_mr) {
  return binary_cross_entropy(score_m, score_mr);
}
inline double domain_discriminator_loss(std::span<const double> score_synth, std::span<const double> score_hand) {
  return binary_cross_entropy(score_synth, score_hand);
}

// Same loss from logits (Nx1 each). Logits are clamped to the probability clamp.
nn::Var binary_cross_entropy(nn::Graph& g, nn::Var positive_logits, nn::Var negative_logits);

// ----------------------------------------------------------------- total

struct LossComponents {
  std::optional<double> progressive_silhouette;
  std::optional<double> regularizer;  // already weighted by LossWeights::regularizer
  std::optional<double> view;
  std::optional<double> view_reconstruction;
  std::optional<double> shape_discriminator;
  std::optional<double> domain_discriminator;
};

// L_sp + L_r + l_v L_v + l_vr L_vr + l_sd L_sd (+ l_dd L_dd when enabled).
// Throws std::invalid_argument naming every missing component.
double total_loss(const LossComponents& c, const LossWeights& w, bool domain_adaptation);

}  // namespace viewsketch
