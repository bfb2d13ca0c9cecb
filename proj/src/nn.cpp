#include "viewsketch/nn.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace viewsketch::nn {

const Matrix& Var::value() const { return graph_->node(*this).value; }

Matrix& Var::grad() const { return graph_->grad_of(id_); }

float Var::item() const {
  const auto& v = value();
  if (v.size() != 1) throw std::logic_error("Var::item on a non-scalar node");
  return v(0, 0);
}

Var Graph::push(Matrix value, bool requires_grad) {
  auto n = std::make_unique<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Matrix& Graph::grad_of(int id) {
  Node& n = *nodes_[static_cast<std::size_t>(id)];
  if (n.grad.rows() != n.value.rows() || n.grad.cols() != n.value.cols()) {
    n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  }
  return n.grad;
}

Var Graph::constant(Matrix value) { return push(std::move(value), false); }

Var Graph::input(Matrix value) { return push(std::move(value), true); }

Var Graph::parameter(Parameter& p) {
  Var v = push(p.value, true);
  node(v).param = &p;
  return v;
}

Var Graph::linear(Var x, Parameter& weight, Parameter& bias) {
  if (x.cols() != weight.value.cols()) {
    throw std::invalid_argument("linear " + weight.name + ": input has " + std::to_string(x.cols()) +
                                " features, expected " + std::to_string(weight.value.cols()));
  }
  Matrix out = x.value() * weight.value.transpose();
  out.rowwise() += bias.value.row(0);
  Var y = push(std::move(out), true);
  const int xi = x.id_, yi = y.id_;
  Parameter* w = &weight;
  Parameter* b = &bias;
  node(y).back = [this, xi, yi, w, b] {
    const Matrix& gy = grad_of(yi);
    const Matrix& xv = nodes_[static_cast<std::size_t>(xi)]->value;
    w->grad.noalias() += gy.transpose() * xv;
    b->grad.row(0) += gy.colwise().sum();
    if (nodes_[static_cast<std::size_t>(xi)]->requires_grad) grad_of(xi).noalias() += gy * w->value;
  };
  return y;
}

Var Graph::conv2d(Var x, const Shape& in, Parameter& weight, Parameter& bias, int kernel, int stride, int pad,
                  Shape* out_shape) {
  if (x.cols() != in.size()) throw std::invalid_argument("conv2d " + weight.name + ": input size mismatch");
  const int C = in.channels, H = in.height, W = in.width;
  const int O = static_cast<int>(weight.value.rows());
  const int K = kernel;
  if (weight.value.cols() != C * K * K) throw std::invalid_argument("conv2d " + weight.name + ": channel mismatch");
  const int Ho = (H + 2 * pad - K) / stride + 1;
  const int Wo = (W + 2 * pad - K) / stride + 1;
  if (Ho <= 0 || Wo <= 0) throw std::invalid_argument("conv2d " + weight.name + ": input too small");
  if (out_shape) *out_shape = Shape{O, Ho, Wo};
  const Eigen::Index B = x.rows();
  const int P = Ho * Wo;

  auto cols = std::make_shared<std::vector<Matrix>>(static_cast<std::size_t>(B));
  Matrix out(B, static_cast<Eigen::Index>(O) * P);
  for (Eigen::Index bidx = 0; bidx < B; ++bidx) {
    Matrix& col = (*cols)[static_cast<std::size_t>(bidx)];
    col.setZero(static_cast<Eigen::Index>(C) * K * K, P);
    const float* src = x.value().row(bidx).data();
    for (int c = 0; c < C; ++c) {
      for (int ky = 0; ky < K; ++ky) {
        for (int kx = 0; kx < K; ++kx) {
          float* dst = col.row((c * K + ky) * K + kx).data();
          for (int oy = 0; oy < Ho; ++oy) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= H) continue;
            const float* srow = src + (static_cast<std::size_t>(c) * H + iy) * W;
            for (int ox = 0; ox < Wo; ++ox) {
              const int ix = ox * stride - pad + kx;
              if (ix >= 0 && ix < W) dst[oy * Wo + ox] = srow[ix];
            }
          }
        }
      }
    }
    Eigen::Map<Matrix> o(out.row(bidx).data(), O, P);
    o.noalias() = weight.value * col;
    o.colwise() += bias.value.row(0).transpose();
  }
  Var y = push(std::move(out), true);
  const int xi = x.id_, yi = y.id_;
  Parameter* w = &weight;
  Parameter* bptr = &bias;
  node(y).back = [this, xi, yi, w, bptr, cols, C, H, W, K, stride, pad, Ho, Wo, O, P, B] {
    const Matrix& gy = grad_of(yi);
    const bool need_x = nodes_[static_cast<std::size_t>(xi)]->requires_grad;
    Matrix* gx = need_x ? &grad_of(xi) : nullptr;
    Matrix dcol;
    for (Eigen::Index bidx = 0; bidx < B; ++bidx) {
      Eigen::Map<const Matrix> g(gy.row(bidx).data(), O, P);
      const Matrix& col = (*cols)[static_cast<std::size_t>(bidx)];
      w->grad.noalias() += g * col.transpose();
      bptr->grad.row(0) += g.rowwise().sum().transpose();
      if (!gx) continue;
      dcol.noalias() = w->value.transpose() * g;
      float* dst = gx->row(bidx).data();
      for (int c = 0; c < C; ++c) {
        for (int ky = 0; ky < K; ++ky) {
          for (int kx = 0; kx < K; ++kx) {
            const float* s = dcol.row((c * K + ky) * K + kx).data();
            for (int oy = 0; oy < Ho; ++oy) {
              const int iy = oy * stride - pad + ky;
              if (iy < 0 || iy >= H) continue;
              float* drow = dst + (static_cast<std::size_t>(c) * H + iy) * W;
              for (int ox = 0; ox < Wo; ++ox) {
                const int ix = ox * stride - pad + kx;
                if (ix >= 0 && ix < W) drow[ix] += s[oy * Wo + ox];
              }
            }
          }
        }
      }
    }
  };
  return y;
}

Var Graph::avg_pool(Var x, const Shape& in, int factor, Shape* out_shape) {
  if (x.cols() != in.size() || in.height % factor != 0 || in.width % factor != 0) {
    throw std::invalid_argument("avg_pool: bad input shape");
  }
  const int C = in.channels, H = in.height, W = in.width;
  const int Ho = H / factor, Wo = W / factor;
  if (out_shape) *out_shape = Shape{C, Ho, Wo};
  const float inv = 1.0f / static_cast<float>(factor * factor);
  const Eigen::Index B = x.rows();
  Matrix out = Matrix::Zero(B, static_cast<Eigen::Index>(C) * Ho * Wo);
  for (Eigen::Index b = 0; b < B; ++b) {
    const float* src = x.value().row(b).data();
    float* dst = out.row(b).data();
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx)
          dst[(c * Ho + y / factor) * Wo + xx / factor] += src[(c * H + y) * W + xx] * inv;
  }
  const bool rg = tracked(x);
  Var y = push(std::move(out), rg);
  if (rg) {
    const int xi = x.id_, yi = y.id_;
    node(y).back = [this, xi, yi, C, H, W, Ho, Wo, factor, inv, B] {
      const Matrix& gy = grad_of(yi);
      Matrix& gx = grad_of(xi);
      for (Eigen::Index b = 0; b < B; ++b) {
        const float* s = gy.row(b).data();
        float* d = gx.row(b).data();
        for (int c = 0; c < C; ++c)
          for (int y = 0; y < H; ++y)
            for (int xx = 0; xx < W; ++xx) d[(c * H + y) * W + xx] += s[(c * Ho + y / factor) * Wo + xx / factor] * inv;
      }
    };
  }
  return y;
}

Var Graph::relu(Var x) {
  Matrix out = x.value().cwiseMax(0.0f);
  const bool rg = tracked(x);
  Var y = push(std::move(out), rg);
  if (rg) {
    const int xi = x.id_, yi = y.id_;
    node(y).back = [this, xi, yi] {
      const Matrix& xv = nodes_[static_cast<std::size_t>(xi)]->value;
      grad_of(xi).array() += grad_of(yi).array() * (xv.array() > 0.0f).cast<float>();
    };
  }
  return y;
}

Var Graph::leaky_relu(Var x, float slope) {
  Matrix out = x.value().unaryExpr([slope](float v) { return v > 0 ? v : slope * v; });
  const bool rg = tracked(x);
  Var y = push(std::move(out), rg);
  if (rg) {
    const int xi = x.id_, yi = y.id_;
    node(y).back = [this, xi, yi, slope] {
      const Matrix& xv = nodes_[static_cast<std::size_t>(xi)]->value;
      grad_of(xi).array() += grad_of(yi).array() * xv.array().unaryExpr([slope](float v) { return v > 0 ? 1.0f : slope; });
    };
  }
  return y;
}

Var Graph::tanh(Var x) {
  Matrix out = x.value().array().tanh().matrix();
  const bool rg = tracked(x);
  Var y = push(std::move(out), rg);
  if (rg) {
    const int xi = x.id_, yi = y.id_;
    node(y).back = [this, xi, yi] {
      const Matrix& yv = nodes_[static_cast<std::size_t>(yi)]->value;
      grad_of(xi).array() += grad_of(yi).array() * (1.0f - yv.array().square());
    };
  }
  return y;
}

Var Graph::sigmoid(Var x) {
  Matrix out = x.value().unaryExpr([](float v) {
    return v >= 0 ? 1.0f / (1.0f + std::exp(-v)) : std::exp(v) / (1.0f + std::exp(v));
  });
  const bool rg = tracked(x);
  Var y = push(std::move(out), rg);
  if (rg) {
    const int xi = x.id_, yi = y.id_;
    node(y).back = [this, xi, yi] {
      const Matrix& yv = nodes_[static_cast<std::size_t>(yi)]->value;
      grad_of(xi).array() += grad_of(yi).array() * yv.array() * (1.0f - yv.array());
    };
  }
  return y;
}

Var Graph::add(Var a, Var b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw std::invalid_argument("add: shape mismatch");
  const bool rg = tracked(a) || tracked(b);
  Var y = push(a.value() + b.value(), rg);
  if (rg) {
    const int ai = a.id_, bi = b.id_, yi = y.id_;
    node(y).back = [this, ai, bi, yi] {
      const Matrix& gy = grad_of(yi);
      if (nodes_[static_cast<std::size_t>(ai)]->requires_grad) grad_of(ai) += gy;
      if (nodes_[static_cast<std::size_t>(bi)]->requires_grad) grad_of(bi) += gy;
    };
  }
  return y;
}

Var Graph::sub(Var a, Var b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw std::invalid_argument("sub: shape mismatch");
  const bool rg = tracked(a) || tracked(b);
  Var y = push(a.value() - b.value(), rg);
  if (rg) {
    const int ai = a.id_, bi = b.id_, yi = y.id_;
    node(y).back = [this, ai, bi, yi] {
      const Matrix& gy = grad_of(yi);
      if (nodes_[static_cast<std::size_t>(ai)]->requires_grad) grad_of(ai) += gy;
      if (nodes_[static_cast<std::size_t>(bi)]->requires_grad) grad_of(bi) -= gy;
    };
  }
  return y;
}

Var Graph::mul(Var a, Var b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw std::invalid_argument("mul: shape mismatch");
  const bool rg = tracked(a) || tracked(b);
  Var y = push(a.value().cwiseProduct(b.value()), rg);
  if (rg) {
    const int ai = a.id_, bi = b.id_, yi = y.id_;
    node(y).back = [this, ai, bi, yi] {
      const Matrix& gy = grad_of(yi);
      if (nodes_[static_cast<std::size_t>(ai)]->requires_grad)
        grad_of(ai) += gy.cwiseProduct(nodes_[static_cast<std::size_t>(bi)]->value);
      if (nodes_[static_cast<std::size_t>(bi)]->requires_grad)
        grad_of(bi) += gy.cwiseProduct(nodes_[static_cast<std::size_t>(ai)]->value);
    };
  }
  return y;
}

Var Graph::affine(Var x, float scale, float shift) {
  Matrix out = (x.value().array() * scale + shift).matrix();
  const bool rg = tracked(x);
  Var y = push(std::move(out), rg);
  if (rg) {
    const int xi = x.id_, yi = y.id_;
    node(y).back = [this, xi, yi, scale] { grad_of(xi) += scale * grad_of(yi); };
  }
  return y;
}

Var Graph::concat_cols(std::initializer_list<Var> parts) {
  if (parts.size() == 0) throw std::invalid_argument("concat_cols: no inputs");
  const Eigen::Index rows = parts.begin()->rows();
  Eigen::Index cols = 0;
  bool rg = false;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw std::invalid_argument("concat_cols: row count mismatch");
    cols += p.cols();
    rg = rg || tracked(p);
  }
  Matrix out(rows, cols);
  std::vector<std::pair<int, Eigen::Index>> spans;
  Eigen::Index c0 = 0;
  for (const Var& p : parts) {
    out.middleCols(c0, p.cols()) = p.value();
    spans.emplace_back(p.id_, c0);
    c0 += p.cols();
  }
  Var y = push(std::move(out), rg);
  if (rg) {
    const int yi = y.id_;
    node(y).back = [this, spans, yi] {
      const Matrix& gy = grad_of(yi);
      for (const auto& [id, start] : spans) {
        if (!nodes_[static_cast<std::size_t>(id)]->requires_grad) continue;
        Matrix& g = grad_of(id);
        g += gy.middleCols(start, g.cols());
      }
    };
  }
  return y;
}

Var Graph::slice_cols(Var x, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > x.cols()) throw std::invalid_argument("slice_cols: out of range");
  const bool rg = tracked(x);
  Var y = push(x.value().middleCols(start, count), rg);
  if (rg) {
    const int xi = x.id_, yi = y.id_;
    node(y).back = [this, xi, yi, start, count] { grad_of(xi).middleCols(start, count) += grad_of(yi); };
  }
  return y;
}

Var Graph::concat_rows(Var a, Var b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("concat_rows: column mismatch");
  Matrix out(a.rows() + b.rows(), a.cols());
  out.topRows(a.rows()) = a.value();
  out.bottomRows(b.rows()) = b.value();
  const bool rg = tracked(a) || tracked(b);
  Var y = push(std::move(out), rg);
  if (rg) {
    const int ai = a.id_, bi = b.id_, yi = y.id_;
    const Eigen::Index ar = a.rows(), br = b.rows();
    node(y).back = [this, ai, bi, yi, ar, br] {
      const Matrix& gy = grad_of(yi);
      if (nodes_[static_cast<std::size_t>(ai)]->requires_grad) grad_of(ai) += gy.topRows(ar);
      if (nodes_[static_cast<std::size_t>(bi)]->requires_grad) grad_of(bi) += gy.bottomRows(br);
    };
  }
  return y;
}

Var Graph::slice_rows(Var x, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > x.rows()) throw std::invalid_argument("slice_rows: out of range");
  const bool rg = tracked(x);
  Var y = push(x.value().middleRows(start, count), rg);
  if (rg) {
    const int xi = x.id_, yi = y.id_;
    node(y).back = [this, xi, yi, start, count] { grad_of(xi).middleRows(start, count) += grad_of(yi); };
  }
  return y;
}

Var Graph::atan2(Var yv, Var xv) {
  if (yv.rows() != xv.rows() || yv.cols() != xv.cols()) throw std::invalid_argument("atan2: shape mismatch");
  Matrix out = yv.value().binaryExpr(xv.value(), [](float a, float b) { return std::atan2(a, b); });
  const bool rg = tracked(yv) || tracked(xv);
  Var r = push(std::move(out), rg);
  if (rg) {
    const int yi = yv.id_, xi = xv.id_, ri = r.id_;
    node(r).back = [this, yi, xi, ri] {
      const Matrix& g = grad_of(ri);
      const Matrix& a = nodes_[static_cast<std::size_t>(yi)]->value;
      const Matrix& b = nodes_[static_cast<std::size_t>(xi)]->value;
      const Matrix denom = (a.array().square() + b.array().square()).max(1e-12f).matrix();
      if (nodes_[static_cast<std::size_t>(yi)]->requires_grad)
        grad_of(yi).array() += g.array() * b.array() / denom.array();
      if (nodes_[static_cast<std::size_t>(xi)]->requires_grad)
        grad_of(xi).array() -= g.array() * a.array() / denom.array();
    };
  }
  return r;
}

Var Graph::sum(Var x) {
  Matrix out(1, 1);
  out(0, 0) = x.value().sum();
  const bool rg = tracked(x);
  Var y = push(std::move(out), rg);
  if (rg) {
    const int xi = x.id_, yi = y.id_;
    node(y).back = [this, xi, yi] { grad_of(xi).array() += grad_of(yi)(0, 0); };
  }
  return y;
}

Var Graph::mean(Var x) {
  const auto n = static_cast<float>(x.value().size());
  return affine(sum(x), 1.0f / n);
}

Var Graph::grad_reverse(Var x, float scale) {
  const bool rg = tracked(x);
  Var y = push(x.value(), rg);
  if (rg) {
    const int xi = x.id_, yi = y.id_;
    node(y).back = [this, xi, yi, scale] { grad_of(xi) -= scale * grad_of(yi); };
  }
  return y;
}

Var Graph::custom(std::vector<Var> inputs, Matrix value, CustomBackward backward) {
  bool rg = false;
  std::vector<int> ids;
  for (const Var& v : inputs) {
    rg = rg || tracked(v);
    ids.push_back(v.id_);
  }
  Var y = push(std::move(value), rg);
  if (rg) {
    const int yi = y.id_;
    node(y).back = [this, ids, yi, backward] {
      std::vector<Matrix*> slots;
      slots.reserve(ids.size());
      for (int id : ids) slots.push_back(nodes_[static_cast<std::size_t>(id)]->requires_grad ? &grad_of(id) : nullptr);
      backward(grad_of(yi), slots);
    };
  }
  return y;
}

void Graph::seed(Var v, const Matrix& g) {
  if (g.rows() != v.rows() || g.cols() != v.cols()) throw std::invalid_argument("seed: gradient shape mismatch");
  grad_of(v.id_) += g;
}

void Graph::backward(Var root) {
  grad_of(root.id_).array() += 1.0f;
  run_backward();
}

void Graph::run_backward() {
  if (backward_done_) throw std::logic_error("Graph::run_backward called twice");
  backward_done_ = true;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& n = **it;
    if (!n.requires_grad || n.grad.size() == 0) continue;
    if (n.back) n.back();
    if (n.param) n.param->grad += n.grad;
  }
}

// -------------------------------------------------------------------- layers

Var activate(Graph& g, Var x, Activation act) {
  switch (act) {
    case Activation::kNone:
      return x;
    case Activation::kRelu:
      return g.relu(x);
    case Activation::kLeakyRelu:
      return g.leaky_relu(x, kLeakySlope);
    case Activation::kTanh:
      return g.tanh(x);
  }
  return x;
}

Linear::Linear(const std::string& name, int in, int out, Rng& rng, float gain)
    : weight(name + ".weight", out, in), bias(name + ".bias", 1, out) {
  const double bound = gain / std::sqrt(static_cast<double>(in));
  for (Eigen::Index i = 0; i < weight.value.size(); ++i)
    weight.value.data()[i] = static_cast<float>(rng.uniform(-bound, bound));
}

Conv2d::Conv2d(const std::string& name, int in_channels, int out_channels, int k, int s, int p, Rng& rng)
    : weight(name + ".weight", out_channels, in_channels * k * k),
      bias(name + ".bias", 1, out_channels),
      kernel(k),
      stride(s),
      pad(p) {
  // He-uniform for leaky-ReLU nets.
  const double bound = std::sqrt(6.0 / (in_channels * k * k));
  for (Eigen::Index i = 0; i < weight.value.size(); ++i)
    weight.value.data()[i] = static_cast<float>(rng.uniform(-bound, bound));
}

Shape Conv2d::output_shape(const Shape& in) const {
  return Shape{static_cast<int>(weight.value.rows()), (in.height + 2 * pad - kernel) / stride + 1,
               (in.width + 2 * pad - kernel) / stride + 1};
}

Mlp::Mlp(const std::string& name, const std::vector<int>& sizes, Rng& rng, Activation act) : hidden(act) {
  if (sizes.size() < 2) throw std::invalid_argument("Mlp: need at least input and output sizes");
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    const bool is_last = i + 2 == sizes.size();
    const float gain = is_last ? 1.0f : std::sqrt(3.0f);
    layers.emplace_back(name + "." + std::to_string(i), sizes[i], sizes[i + 1], rng, gain);
  }
}

Var Mlp::operator()(Graph& g, Var x) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    x = layers[i](g, x);
    if (i + 1 < layers.size()) x = activate(g, x, hidden);
  }
  return x;
}

// ----------------------------------------------------------------- optimizer

Adam::Adam(ParameterList params, AdamOptions options) : params_(std::move(params)), options_(options) {
  for (Parameter* p : params_) {
    m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }
}

void Adam::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

void Adam::step() {
  ++steps_;
  const float b1 = options_.beta1, b2 = options_.beta2;
  const float c1 = 1.0f - std::pow(b1, static_cast<float>(steps_));
  const float c2 = 1.0f - std::pow(b2, static_cast<float>(steps_));
  const float lr = options_.learning_rate;
  const float eps = options_.epsilon;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    if (p.grad.size() != p.value.size()) continue;
    m_[i] = b1 * m_[i] + (1.0f - b1) * p.grad;
    v_[i] = b2 * v_[i] + (1.0f - b2) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps);
  }
}

namespace {

constexpr char kParamMagic[4] = {'V', 'S', 'K', 'P'};
constexpr char kAdamMagic[4] = {'V', 'S', 'K', 'A'};

void write_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw std::runtime_error("parameter file truncated");
  return v;
}

void write_matrix(std::ostream& out, const Matrix& m) {
  write_u64(out, static_cast<std::uint64_t>(m.rows()));
  write_u64(out, static_cast<std::uint64_t>(m.cols()));
  out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
}

void read_matrix_into(std::istream& in, Matrix& m, const std::string& what) {
  const auto rows = static_cast<Eigen::Index>(read_u64(in));
  const auto cols = static_cast<Eigen::Index>(read_u64(in));
  if (rows != m.rows() || cols != m.cols()) {
    throw std::runtime_error("shape mismatch for " + what + ": file has " + std::to_string(rows) + "x" +
                             std::to_string(cols) + ", model expects " + std::to_string(m.rows()) + "x" +
                             std::to_string(m.cols()));
  }
  in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
  if (!in) throw std::runtime_error("parameter file truncated at " + what);
}

}  // namespace

void save_parameters(const ParameterList& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_parameters: cannot open " + path.string());
  out.write(kParamMagic, 4);
  write_u64(out, params.size());
  for (const Parameter* p : params) {
    write_u64(out, p->name.size());
    out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    write_matrix(out, p->value);
  }
  if (!out) throw std::runtime_error("save_parameters: write failed for " + path.string());
}

void load_parameters(const ParameterList& params, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_parameters: cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kParamMagic, 4) != 0) throw std::runtime_error("load_parameters: bad magic");
  const auto count = read_u64(in);
  if (count != params.size()) throw std::runtime_error("load_parameters: parameter count mismatch");
  for (Parameter* p : params) {
    const auto len = read_u64(in);
    std::string name(len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(len));
    if (name != p->name) throw std::runtime_error("load_parameters: expected " + p->name + ", found " + name);
    read_matrix_into(in, p->value, p->name);
    p->zero_grad();
  }
}

void Adam::save_state(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("Adam::save_state: cannot open " + path.string());
  out.write(kAdamMagic, 4);
  write_u64(out, static_cast<std::uint64_t>(steps_));
  write_u64(out, m_.size());
  for (std::size_t i = 0; i < m_.size(); ++i) {
    write_matrix(out, m_[i]);
    write_matrix(out, v_[i]);
  }
}

void Adam::load_state(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("Adam::load_state: cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kAdamMagic, 4) != 0) throw std::runtime_error("Adam::load_state: bad magic");
  steps_ = static_cast<std::int64_t>(read_u64(in));
  if (read_u64(in) != m_.size()) throw std::runtime_error("Adam::load_state: parameter count mismatch");
  for (std::size_t i = 0; i < m_.size(); ++i) {
    read_matrix_into(in, m_[i], "adam.m");
    read_matrix_into(in, v_[i], "adam.v");
  }
}

std::size_t parameter_count(const ParameterList& params) {
  std::size_t n = 0;
  for (const Parameter* p : params) n += static_cast<std::size_t>(p->value.size());
  return n;
}

std::uint64_t parameter_hash(const ParameterList& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Parameter* p : params) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(p->value.data());
    const std::size_t n = static_cast<std::size_t>(p->value.size()) * sizeof(float);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

bool all_finite(const ParameterList& params, bool check_grads) {
  for (const Parameter* p : params) {
    if (!p->value.allFinite()) return false;
    if (check_grads && !p->grad.allFinite()) return false;
  }
  return true;
}

}  // namespace viewsketch::nn
