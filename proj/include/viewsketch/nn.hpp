#pragma once

// Minimal reverse-mode automatic differentiation over dense float matrices.
//
// A Graph is a tape: every op appends a node, and backward() walks the tape in
// reverse creation order (which is a topological order). Rows are batch
// samples; image tensors are stored one sample per row in CHW order.

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "viewsketch/random.hpp"

namespace viewsketch::nn {

using Matrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Eigen::Index rows, Eigen::Index cols)
      : name(std::move(n)), value(Matrix::Zero(rows, cols)), grad(Matrix::Zero(rows, cols)) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
  Eigen::Index size() const { return value.size(); }
};

using ParameterList = std::vector<Parameter*>;

struct Shape {
  int channels = 1;
  int height = 1;
  int width = 1;
  int size() const { return channels * height * width; }
};

class Graph;

// Handle to a node of a Graph. Cheap to copy; valid while the Graph lives.
class Var {
 public:
  Var() = default;
  const Matrix& value() const;
  // Gradient accumulated so far (zero-initialized on first access).
  Matrix& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool valid() const { return graph_ != nullptr; }
  float item() const;  // value of a 1x1 node

 private:
  friend class Graph;
  Var(Graph* g, int id) : graph_(g), id_(id) {}
  Graph* graph_ = nullptr;
  int id_ = -1;
};

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Leaf without gradient.
  Var constant(Matrix value);
  // Leaf whose gradient is tracked (readable after backward()).
  Var input(Matrix value);
  // Leaf bound to a parameter; its gradient is added to `p.grad` by backward().
  Var parameter(Parameter& p);

  Var linear(Var x, Parameter& weight, Parameter& bias);  // x W^T + b
  Var conv2d(Var x, const Shape& in, Parameter& weight, Parameter& bias, int kernel, int stride, int pad,
             Shape* out_shape);
  Var avg_pool(Var x, const Shape& in, int factor, Shape* out_shape);

  Var relu(Var x);
  Var leaky_relu(Var x, float slope);
  Var tanh(Var x);
  Var sigmoid(Var x);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);                   // elementwise
  Var affine(Var x, float scale, float shift = 0.0f);
  Var concat_cols(std::initializer_list<Var> parts);
  Var slice_cols(Var x, Eigen::Index start, Eigen::Index count);
  Var concat_rows(Var a, Var b);
  Var slice_rows(Var x, Eigen::Index start, Eigen::Index count);
  Var atan2(Var y, Var x);
  Var sum(Var x);   // 1x1
  Var mean(Var x);  // 1x1

  // Identity forward; multiplies the incoming gradient by -scale.
  Var grad_reverse(Var x, float scale = 1.0f);

  // User-defined op. `backward` receives the node's output gradient and one
  // (possibly null) gradient slot per input, to which it must add.
  using CustomBackward = std::function<void(const Matrix& grad_out, std::span<Matrix*> grad_inputs)>;
  Var custom(std::vector<Var> inputs, Matrix value, CustomBackward backward);

  // Adds `g` to v's gradient (e.g. a gradient computed outside the tape).
  void seed(Var v, const Matrix& g);
  // Seeds `root` with ones and propagates every seeded gradient.
  void backward(Var root);
  // Propagates previously seeded gradients.
  void run_backward();

  std::size_t size() const { return nodes_.size(); }

 private:
  friend class Var;
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    std::function<void()> back;
  };

  Var push(Matrix value, bool requires_grad);
  Node& node(Var v) { return *nodes_[static_cast<std::size_t>(v.id_)]; }
  const Node& node(Var v) const { return *nodes_[static_cast<std::size_t>(v.id_)]; }
  Matrix& grad_of(int id);
  bool tracked(Var v) const { return node(v).requires_grad; }

  std::vector<std::unique_ptr<Node>> nodes_;
  bool backward_done_ = false;
};

// ------------------------------------------------------------------ layers

enum class Activation { kNone, kRelu, kLeakyRelu, kTanh };

Var activate(Graph& g, Var x, Activation act);

struct Linear {
  Parameter weight;  // out x in
  Parameter bias;    // 1 x out

  Linear() = default;
  // Uniform(-bound, bound) weights with bound = gain / sqrt(in); zero bias.
  Linear(const std::string& name, int in, int out, Rng& rng, float gain = 1.0f);
  Var operator()(Graph& g, Var x) { return g.linear(x, weight, bias); }
  int in_features() const { return static_cast<int>(weight.value.cols()); }
  int out_features() const { return static_cast<int>(weight.value.rows()); }
  void collect(ParameterList& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
};

struct Conv2d {
  Parameter weight;  // out x (in * k * k)
  Parameter bias;    // 1 x out
  int kernel = 3;
  int stride = 1;
  int pad = 1;

  Conv2d() = default;
  Conv2d(const std::string& name, int in_channels, int out_channels, int kernel, int stride, int pad, Rng& rng);
  Var operator()(Graph& g, Var x, const Shape& in, Shape* out) {
    return g.conv2d(x, in, weight, bias, kernel, stride, pad, out);
  }
  Shape output_shape(const Shape& in) const;
  void collect(ParameterList& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
};

// Stack of Linear layers with an activation between them (none after the last).
struct Mlp {
  std::vector<Linear> layers;
  Activation hidden = Activation::kLeakyRelu;

  Mlp() = default;
  Mlp(const std::string& name, const std::vector<int>& sizes, Rng& rng, Activation hidden = Activation::kLeakyRelu);
  Var operator()(Graph& g, Var x);
  void collect(ParameterList& out) {
    for (auto& l : layers) l.collect(out);
  }
  Linear& last() { return layers.back(); }
};

inline constexpr float kLeakySlope = 0.2f;

// --------------------------------------------------------------- optimizer

struct AdamOptions {
  float learning_rate = 1e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float epsilon = 1e-8f;
};

class Adam {
 public:
  Adam() = default;
  Adam(ParameterList params, AdamOptions options);

  void zero_grad();
  void step();
  std::int64_t steps() const { return steps_; }
  const AdamOptions& options() const { return options_; }
  void set_learning_rate(float lr) { options_.learning_rate = lr; }

  void save_state(const std::filesystem::path& path) const;
  void load_state(const std::filesystem::path& path);

 private:
  ParameterList params_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  AdamOptions options_;
  std::int64_t steps_ = 0;
};

// Flat binary parameter blob: names, shapes and float32 data in list order.
void save_parameters(const ParameterList& params, const std::filesystem::path& path);
// Shapes and names must match the list exactly.
void load_parameters(const ParameterList& params, const std::filesystem::path& path);

std::size_t parameter_count(const ParameterList& params);
// FNV-1a over all parameter bytes.
std::uint64_t parameter_hash(const ParameterList& params);
bool all_finite(const ParameterList& params, bool check_grads);

}  // namespace viewsketch::nn
