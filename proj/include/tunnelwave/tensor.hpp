#pragma once

// Minimal reverse-mode differentiable array engine (NCHW, double precision).
//
// Every op returns a fresh Tensor whose node keeps shared ownership of its
// inputs and a closure that pushes the node's gradient back into them. Nodes
// are stamped with a global creation counter, so creation order is a valid
// topological order: backward() replays the recorded ops in reverse.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace tw::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first needed
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;  // empty for leaves
  std::uint64_t order = 0;
  const char* op = "leaf";

  std::vector<double>& ensure_grad();
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const noexcept { return static_cast<bool>(node_); }
  explicit operator bool() const noexcept { return defined(); }

  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const double> values() const { return node_->value; }
  std::span<double> mutable_values() { return node_->value; }
  double item() const;

  /// Accumulated gradient; zeros when nothing has been accumulated yet.
  std::span<const double> grad() const;
  std::span<double> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad();

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }
  bool is_leaf() const { return !node_->backward_fn; }

  Node* node() const noexcept { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const noexcept { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Reverse-mode sweep from a single-element tensor. Leaf gradients accumulate
/// across calls; intermediate gradients are rebuilt on every call.
void backward(const Tensor& loss);

/// Graph recording is disabled while a guard is alive on this thread.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Builds an op result. `backward_fn` is attached only when recording is on
/// and at least one parent requires a gradient. Exposed so tests and model
/// code can define ops of their own.
Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
                   std::function<void(Node&)> backward_fn, const char* op);

Tensor detach(const Tensor& x);

// ---- convolution family (NCHW) ---------------------------------------------

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t pad_h = 0;
  std::size_t pad_w = 0;

  /// "Same" padding for an odd kernel at stride 1.
  static Conv2dOptions same(std::size_t kh, std::size_t kw) { return {1, (kh - 1) / 2, (kw - 1) / 2}; }
};

/// Cross-correlation of (N,C,H,W) with (O,C,kh,kw); `bias` may be undefined.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, Conv2dOptions options);

/// Stride-2 4x4 convolution with padding 1: exactly halves even H and W.
Tensor conv2d_stride2_down(const Tensor& input, const Tensor& weight, const Tensor& bias);

Tensor upsample_nearest2x(const Tensor& input);

/// Mirror padding on the bottom and right edges (edge sample not repeated).
Tensor reflect_pad(const Tensor& input, std::size_t pad_bottom, std::size_t pad_right);

/// Keeps rows [h0, h1) and columns [w0, w1) of every (N, C) plane.
Tensor crop(const Tensor& input, std::size_t h0, std::size_t h1, std::size_t w0, std::size_t w1);

Tensor concat_channels(std::span<const Tensor> inputs);
Tensor concat_channels(std::initializer_list<Tensor> inputs);

/// (N,C,H,W) -> (N,C).
Tensor global_avg_pool(const Tensor& input);

/// (N,C,H,W) * (N,C): per-channel gating.
Tensor scale_channels(const Tensor& input, const Tensor& scales);

/// (N,Cin) x (Cout,Cin)^T + bias(Cout); `bias` may be undefined.
Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias);

enum class Mode { train, eval };

/// Running statistics for batch_norm; updated in place in train mode.
struct BatchNormStats {
  Tensor mean;
  Tensor var;
  double momentum = 0.1;
  double eps = 1e-5;
};

Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats, Mode mode);

// ---- pointwise ----------------------------------------------------------------

Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope);
Tensor sigmoid(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor square(const Tensor& x);
Tensor add_scalar(const Tensor& x, double c);
Tensor mul_scalar(const Tensor& x, double c);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

// ---- reductions -------------------------------------------------------------

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

}  // namespace tw::ad
