#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace densebox {

using Shape = std::vector<int>;

int64_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major double tensor. A cheap handle over shared storage; use
// clone() for a deep copy. The gradient buffer is allocated on first access.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from_data(Shape shape, std::vector<double> data);
  static Tensor scalar(double value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int dim(size_t i) const;
  int64_t size() const;
  bool same_shape(const Tensor& other) const;

  // CHW accessors for 3-d tensors.
  int channels() const { return dim(0); }
  int height() const { return dim(1); }
  int width() const { return dim(2); }

  double* data();
  const double* data() const;
  double value() const;  // single-element tensors

  double& at(int c, int y, int x);
  double at(int c, int y, int x) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool v);
  bool has_grad() const;
  double* grad();                 // allocates zeros on first use
  const double* grad_data() const;  // nullptr when not materialized
  void clear_grad();

  Tensor clone() const;
  bool all_finite() const;

  struct Impl;
  Impl* impl() const { return impl_.get(); }

 private:
  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<Impl> impl_;
};

// Reverse-mode tape. Ops append backward closures during the forward pass;
// backward() replays them in reverse. One backward pass per recording.
class Tape {
 public:
  void record(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }
  size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  // Seeds d(root)/d(root) = seed (root must be a single-element tensor) and
  // propagates gradients to every recorded input.
  void backward(Tensor& root, double seed = 1.0);

  // Seeds an arbitrary upstream gradient on `t` and propagates.
  void backward_from(Tensor& t, std::span<const double> upstream);

 private:
  void run();
  std::vector<std::function<void()>> nodes_;
};

// ---- Ops ------------------------------------------------------------------
// Every op validates shapes, computes the forward result, and (when `tape` is
// non-null) records a backward rule. Inputs flagged requires_grad receive
// gradient; others are skipped.

// Cross-correlation with square odd kernel, stride 1, pad = (k-1)/2.
Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias,
              int pad, Tape* tape);

// 2x2 max pooling, stride 2. Ties go to the first element in row-major order.
Tensor maxpool2(const Tensor& input, Tape* tape);

Tensor relu(const Tensor& input, Tape* tape);

// Doubles H and W; output pixel (y,x) samples ((y+0.5)/2-0.5, (x+0.5)/2-0.5)
// with border clamp.
Tensor bilinear_upsample2(const Tensor& input, Tape* tape);

Tensor concat_channels(const Tensor& a, const Tensor& b, Tape* tape);

Tensor slice_channel(const Tensor& x, int channel, Tape* tape);

// sum(mask * (pred - target)^2); all three shapes must match.
Tensor masked_sq_sum(const Tensor& pred, const Tensor& target,
                     const Tensor& mask, Tape* tape);

// masked_sq_sum / max(1, #mask==1).
Tensor masked_l2(const Tensor& pred, const Tensor& target, const Tensor& mask,
                 Tape* tape);

// sum_i ws[i] * xs[i] over single-element tensors.
Tensor weighted_sum(std::span<const Tensor> xs, std::span<const double> ws,
                    Tape* tape);

int64_t count_ones(const Tensor& mask);

// ---- Optimizer ------------------------------------------------------------

struct Param {
  std::string name;
  Tensor value;
  std::vector<double> momentum;

  Param() = default;
  Param(std::string n, Tensor v);
};

// buf <- momentum*buf + grad + weight_decay*value; value <- value - lr*buf.
// Gradients are cleared afterwards. Throws StateError on a missing gradient.
void sgd_step(std::span<Param* const> params, double lr, double momentum,
              double weight_decay);

}  // namespace densebox
