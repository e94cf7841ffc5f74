#include "densebox/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "densebox/errors.hpp"

namespace densebox {

struct Tensor::Impl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until materialized
  bool requires_grad = false;
};

int64_t shape_size(const Shape& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

Tensor Tensor::zeros(Shape shape) {
  for (int d : shape) {
    if (d < 0) throw ShapeError("negative dim in shape " + shape_str(shape));
  }
  auto impl = std::make_shared<Impl>();
  impl->data.assign(static_cast<size_t>(shape_size(shape)), 0.0);
  impl->shape = std::move(shape);
  return Tensor(std::move(impl));
}

Tensor Tensor::full(Shape shape, double value) {
  Tensor t = zeros(std::move(shape));
  std::fill_n(t.data(), t.size(), value);
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
  if (shape_size(shape) != static_cast<int64_t>(data.size())) {
    throw ShapeError("data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  }
  auto impl = std::make_shared<Impl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value) { return from_data({}, {value}); }

const Shape& Tensor::shape() const { return impl_->shape; }

int Tensor::dim(size_t i) const {
  if (i >= impl_->shape.size()) {
    throw ShapeError("dim index out of range for shape " + shape_str(impl_->shape));
  }
  return impl_->shape[i];
}

int64_t Tensor::size() const { return static_cast<int64_t>(impl_->data.size()); }

bool Tensor::same_shape(const Tensor& other) const {
  return impl_->shape == other.impl_->shape;
}

double* Tensor::data() { return impl_->data.data(); }
const double* Tensor::data() const { return impl_->data.data(); }

double Tensor::value() const {
  if (size() != 1) {
    throw ShapeError("value() on tensor of size " + std::to_string(size()));
  }
  return impl_->data[0];
}

double& Tensor::at(int c, int y, int x) {
  return impl_->data[(static_cast<size_t>(c) * dim(1) + y) * dim(2) + x];
}

double Tensor::at(int c, int y, int x) const {
  return impl_->data[(static_cast<size_t>(c) * dim(1) + y) * dim(2) + x];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool v) {
  impl_->requires_grad = v;
  return *this;
}

bool Tensor::has_grad() const { return !impl_->grad.empty(); }

double* Tensor::grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad.data();
}

const double* Tensor::grad_data() const {
  return impl_->grad.empty() ? nullptr : impl_->grad.data();
}

void Tensor::clear_grad() { impl_->grad.clear(); }

Tensor Tensor::clone() const {
  auto impl = std::make_shared<Impl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  impl->requires_grad = impl_->requires_grad;
  return Tensor(std::move(impl));
}

bool Tensor::all_finite() const {
  for (double v : impl_->data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

// ---- Tape -------------------------------------------------------------

void Tape::backward(Tensor& root, double seed) {
  if (root.size() != 1) {
    throw ShapeError("backward root must be a single-element tensor");
  }
  root.grad()[0] += seed;
  run();
}

void Tape::backward_from(Tensor& t, std::span<const double> upstream) {
  if (static_cast<int64_t>(upstream.size()) != t.size()) {
    throw ShapeError("upstream gradient size mismatch");
  }
  double* g = t.grad();
  for (size_t i = 0; i < upstream.size(); ++i) g[i] += upstream[i];
  run();
}

void Tape::run() {
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

// ---- Op helpers ---------------------------------------------------------

namespace {

void require_3d(const Tensor& t, const char* what) {
  if (!t.defined() || t.shape().size() != 3) {
    throw ShapeError(std::string(what) + " must be a CxHxW tensor");
  }
}

bool wants_grad(const Tensor& t) { return t.requires_grad(); }

}  // namespace

// ---- conv2d ---------------------------------------------------------------

Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias,
              int pad, Tape* tape) {
  require_3d(input, "conv2d input");
  if (weights.shape().size() != 4) {
    throw ShapeError("conv2d weights must be OCxICxKxK");
  }
  const int ic = input.dim(0), h = input.dim(1), w = input.dim(2);
  const int oc = weights.dim(0), wic = weights.dim(1);
  const int k = weights.dim(2);
  if (weights.dim(3) != k) throw ShapeError("conv2d kernel must be square");
  if (k % 2 == 0) throw ShapeError("conv2d kernel size must be odd");
  if (pad != (k - 1) / 2) {
    throw ShapeError("conv2d requires pad=(k-1)/2, got pad=" + std::to_string(pad));
  }
  if (wic != ic) {
    throw ShapeError("conv2d channel mismatch: input " + shape_str(input.shape()) +
                     " vs weights " + shape_str(weights.shape()));
  }
  if (bias.size() != oc) throw ShapeError("conv2d bias length must equal out channels");

  Tensor out = Tensor::zeros({oc, h, w});
  const double* in = input.data();
  const double* wt = weights.data();
  const double* bs = bias.data();
  double* op = out.data();
  const size_t plane = static_cast<size_t>(h) * w;

  for (int o = 0; o < oc; ++o) std::fill_n(op + o * plane, plane, bs[o]);
  // row-outer order keeps the k input rows of each channel cache-hot while
  // every output channel consumes them
  for (int y = 0; y < h; ++y) {
    for (int i = 0; i < ic; ++i) {
      const double* inp = in + i * plane;
      for (int ky = 0; ky < k; ++ky) {
        const int sy = y + ky - pad;
        if (sy < 0 || sy >= h) continue;
        const double* irow = inp + static_cast<size_t>(sy) * w;
        for (int o = 0; o < oc; ++o) {
          double* orow = op + o * plane + static_cast<size_t>(y) * w;
          const double* wrow = wt + ((static_cast<size_t>(o) * ic + i) * k + ky) * k;
          for (int kx = 0; kx < k; ++kx) {
            const double wv = wrow[kx];
            const int dx = kx - pad;
            const int x0 = dx < 0 ? -dx : 0;
            const int x1 = dx > 0 ? w - dx : w;
            const double* ishift = irow + dx;
#pragma omp simd
            for (int x = x0; x < x1; ++x) orow[x] += wv * ishift[x];
          }
        }
      }
    }
  }

  if (tape) {
    const bool gi = wants_grad(input), gw = wants_grad(weights), gb = wants_grad(bias);
    if (gi || gw || gb) {
      out.set_requires_grad(true);
      Tensor in_t = input, w_t = weights, b_t = bias, out_t = out;
      tape->record([in_t, w_t, b_t, out_t, pad, gi, gw, gb]() mutable {
        const double* go = out_t.grad_data();
        if (!go) return;
        const int ic = in_t.dim(0), h = in_t.dim(1), w = in_t.dim(2);
        const int oc = w_t.dim(0), k = w_t.dim(2);
        const size_t plane = static_cast<size_t>(h) * w;
        const double* in = in_t.data();
        const double* wt = w_t.data();
        if (gb) {
          double* bgrad = b_t.grad();
          for (int o = 0; o < oc; ++o) {
            const double* gout = go + o * plane;
            double s = 0.0;
#pragma omp simd reduction(+ : s)
            for (size_t p = 0; p < plane; ++p) s += gout[p];
            bgrad[o] += s;
          }
        }
        if (gw) {
          double* wgrad = w_t.grad();
          for (int y = 0; y < h; ++y) {
            for (int i = 0; i < ic; ++i) {
              const double* inp = in + i * plane;
              for (int ky = 0; ky < k; ++ky) {
                const int sy = y + ky - pad;
                if (sy < 0 || sy >= h) continue;
                const double* irow = inp + static_cast<size_t>(sy) * w;
                for (int o = 0; o < oc; ++o) {
                  const double* grow = go + o * plane + static_cast<size_t>(y) * w;
                  double* wrow = wgrad + ((static_cast<size_t>(o) * ic + i) * k + ky) * k;
                  for (int kx = 0; kx < k; ++kx) {
                    const int dx = kx - pad;
                    const int x0 = dx < 0 ? -dx : 0;
                    const int x1 = dx > 0 ? w - dx : w;
                    const double* ishift = irow + dx;
                    double acc = 0.0;
#pragma omp simd reduction(+ : acc)
                    for (int x = x0; x < x1; ++x) acc += grow[x] * ishift[x];
                    wrow[kx] += acc;
                  }
                }
              }
            }
          }
        }
        if (gi) {
          double* igrad = in_t.grad();
          for (int y = 0; y < h; ++y) {
            for (int i = 0; i < ic; ++i) {
              double* irow_base = igrad + i * plane;
              for (int ky = 0; ky < k; ++ky) {
                const int sy = y + ky - pad;
                if (sy < 0 || sy >= h) continue;
                double* girow = irow_base + static_cast<size_t>(sy) * w;
                for (int o = 0; o < oc; ++o) {
                  const double* grow = go + o * plane + static_cast<size_t>(y) * w;
                  const double* wrow = wt + ((static_cast<size_t>(o) * ic + i) * k + ky) * k;
                  for (int kx = 0; kx < k; ++kx) {
                    const double wv = wrow[kx];
                    if (wv == 0.0) continue;
                    const int dx = kx - pad;
                    const int x0 = dx < 0 ? -dx : 0;
                    const int x1 = dx > 0 ? w - dx : w;
                    double* gshift = girow + dx;
#pragma omp simd
                    for (int x = x0; x < x1; ++x) gshift[x] += wv * grow[x];
                  }
                }
              }
            }
          }
        }
      });
    }
  }
  return out;
}

// ---- maxpool2 ---------------------------------------------------------------

Tensor maxpool2(const Tensor& input, Tape* tape) {
  require_3d(input, "maxpool2 input");
  const int c = input.dim(0), h = input.dim(1), w = input.dim(2);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("maxpool2 needs even H and W, got " + shape_str(input.shape()));
  }
  const int oh = h / 2, ow = w / 2;
  Tensor out = Tensor::zeros({c, oh, ow});
  auto argmax = std::make_shared<std::vector<int64_t>>(out.size());
  const double* in = input.data();
  double* op = out.data();
  int64_t* am = argmax->data();
  for (int ch = 0; ch < c; ++ch) {
    const double* plane = in + static_cast<size_t>(ch) * h * w;
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        // first occurrence in row-major order wins ties
        int64_t best_idx = static_cast<int64_t>(2 * y) * w + 2 * x;
        double best = plane[best_idx];
        const int64_t cands[3] = {best_idx + 1, best_idx + w, best_idx + w + 1};
        for (int64_t cand : cands) {
          if (plane[cand] > best) {
            best = plane[cand];
            best_idx = cand;
          }
        }
        const size_t oidx = (static_cast<size_t>(ch) * oh + y) * ow + x;
        op[oidx] = best;
        am[oidx] = static_cast<int64_t>(ch) * h * w + best_idx;
      }
    }
  }
  if (tape && wants_grad(input)) {
    out.set_requires_grad(true);
    Tensor in_t = input, out_t = out;
    tape->record([in_t, out_t, argmax]() mutable {
      const double* go = out_t.grad_data();
      if (!go) return;
      double* gi = in_t.grad();
      const int64_t n = out_t.size();
      const int64_t* am = argmax->data();
      for (int64_t i = 0; i < n; ++i) gi[am[i]] += go[i];
    });
  }
  return out;
}

// ---- relu ---------------------------------------------------------------

Tensor relu(const Tensor& input, Tape* tape) {
  if (!input.defined()) throw ShapeError("relu on undefined tensor");
  Tensor out = Tensor::zeros(input.shape());
  const double* in = input.data();
  double* op = out.data();
  const int64_t n = input.size();
  for (int64_t i = 0; i < n; ++i) op[i] = in[i] > 0.0 ? in[i] : 0.0;
  if (tape && wants_grad(input)) {
    out.set_requires_grad(true);
    Tensor in_t = input, out_t = out;
    tape->record([in_t, out_t]() mutable {
      const double* go = out_t.grad_data();
      if (!go) return;
      double* gi = in_t.grad();
      const double* in = in_t.data();
      const int64_t n = in_t.size();
      for (int64_t i = 0; i < n; ++i) {
        if (in[i] > 0.0) gi[i] += go[i];
      }
    });
  }
  return out;
}

// ---- bilinear_upsample2 ----------------------------------------------------

namespace {

struct UpsampleTap {
  int lo;
  double w_hi;  // weight of the hi tap; lo gets 1-w_hi
};

// Source taps for one output coordinate at scale 2 with half-pixel centers.
inline UpsampleTap upsample_tap(int out_coord, int in_size) {
  const double src = (out_coord + 0.5) * 0.5 - 0.5;
  double flo = std::floor(src);
  double frac = src - flo;
  int lo = static_cast<int>(flo);
  if (lo < 0) {
    lo = 0;
    frac = 0.0;  // clamped: both taps read index 0
  } else if (lo >= in_size - 1) {
    lo = in_size - 1;
    frac = 0.0;
  }
  return {lo, frac};
}

}  // namespace

Tensor bilinear_upsample2(const Tensor& input, Tape* tape) {
  require_3d(input, "bilinear_upsample2 input");
  const int c = input.dim(0), h = input.dim(1), w = input.dim(2);
  const int oh = 2 * h, ow = 2 * w;
  Tensor out = Tensor::zeros({c, oh, ow});

  std::vector<UpsampleTap> ty(oh), tx(ow);
  for (int y = 0; y < oh; ++y) ty[y] = upsample_tap(y, h);
  for (int x = 0; x < ow; ++x) tx[x] = upsample_tap(x, w);

  const double* in = input.data();
  double* op = out.data();
  for (int ch = 0; ch < c; ++ch) {
    const double* plane = in + static_cast<size_t>(ch) * h * w;
    double* oplane = op + static_cast<size_t>(ch) * oh * ow;
    for (int y = 0; y < oh; ++y) {
      const int y0 = ty[y].lo;
      const int y1 = std::min(y0 + 1, h - 1);
      const double wy = ty[y].w_hi;
      const double* row0 = plane + static_cast<size_t>(y0) * w;
      const double* row1 = plane + static_cast<size_t>(y1) * w;
      double* orow = oplane + static_cast<size_t>(y) * ow;
      for (int x = 0; x < ow; ++x) {
        const int x0 = tx[x].lo;
        const int x1 = std::min(x0 + 1, w - 1);
        const double wx = tx[x].w_hi;
        const double top = row0[x0] * (1.0 - wx) + row0[x1] * wx;
        const double bot = row1[x0] * (1.0 - wx) + row1[x1] * wx;
        orow[x] = top * (1.0 - wy) + bot * wy;
      }
    }
  }

  if (tape && wants_grad(input)) {
    out.set_requires_grad(true);
    Tensor in_t = input, out_t = out;
    tape->record([in_t, out_t]() mutable {
      const double* go = out_t.grad_data();
      if (!go) return;
      const int c = in_t.dim(0), h = in_t.dim(1), w = in_t.dim(2);
      const int oh = 2 * h, ow = 2 * w;
      double* gi = in_t.grad();
      for (int ch = 0; ch < c; ++ch) {
        double* gplane = gi + static_cast<size_t>(ch) * h * w;
        const double* goplane = go + static_cast<size_t>(ch) * oh * ow;
        for (int y = 0; y < oh; ++y) {
          const UpsampleTap tyy = upsample_tap(y, h);
          const int y0 = tyy.lo;
          const int y1 = std::min(y0 + 1, h - 1);
          const double wy = tyy.w_hi;
          const double* gorow = goplane + static_cast<size_t>(y) * ow;
          for (int x = 0; x < ow; ++x) {
            const UpsampleTap txx = upsample_tap(x, w);
            const int x0 = txx.lo;
            const int x1 = std::min(x0 + 1, w - 1);
            const double wx = txx.w_hi;
            const double g = gorow[x];
            gplane[static_cast<size_t>(y0) * w + x0] += g * (1.0 - wy) * (1.0 - wx);
            gplane[static_cast<size_t>(y0) * w + x1] += g * (1.0 - wy) * wx;
            gplane[static_cast<size_t>(y1) * w + x0] += g * wy * (1.0 - wx);
            gplane[static_cast<size_t>(y1) * w + x1] += g * wy * wx;
          }
        }
      }
    });
  }
  return out;
}

// ---- concat_channels --------------------------------------------------------

Tensor concat_channels(const Tensor& a, const Tensor& b, Tape* tape) {
  require_3d(a, "concat_channels a");
  require_3d(b, "concat_channels b");
  if (a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2)) {
    throw ShapeError("concat_channels spatial mismatch: " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
  const int h = a.dim(1), w = a.dim(2);
  Tensor out = Tensor::zeros({a.dim(0) + b.dim(0), h, w});
  std::copy_n(a.data(), a.size(), out.data());
  std::copy_n(b.data(), b.size(), out.data() + a.size());
  if (tape && (wants_grad(a) || wants_grad(b))) {
    out.set_requires_grad(true);
    Tensor a_t = a, b_t = b, out_t = out;
    const bool ga = wants_grad(a), gb = wants_grad(b);
    tape->record([a_t, b_t, out_t, ga, gb]() mutable {
      const double* go = out_t.grad_data();
      if (!go) return;
      if (ga) {
        double* g = a_t.grad();
        for (int64_t i = 0; i < a_t.size(); ++i) g[i] += go[i];
      }
      if (gb) {
        double* g = b_t.grad();
        const double* src = go + a_t.size();
        for (int64_t i = 0; i < b_t.size(); ++i) g[i] += src[i];
      }
    });
  }
  return out;
}

// ---- slice_channel ----------------------------------------------------------

Tensor slice_channel(const Tensor& x, int channel, Tape* tape) {
  require_3d(x, "slice_channel input");
  if (channel < 0 || channel >= x.dim(0)) {
    throw ShapeError("slice_channel index out of range");
  }
  const int h = x.dim(1), w = x.dim(2);
  const size_t plane = static_cast<size_t>(h) * w;
  Tensor out = Tensor::zeros({1, h, w});
  std::copy_n(x.data() + channel * plane, plane, out.data());
  if (tape && wants_grad(x)) {
    out.set_requires_grad(true);
    Tensor x_t = x, out_t = out;
    tape->record([x_t, out_t, channel, plane]() mutable {
      const double* go = out_t.grad_data();
      if (!go) return;
      double* g = x_t.grad() + channel * plane;
      for (size_t i = 0; i < plane; ++i) g[i] += go[i];
    });
  }
  return out;
}

// ---- masked losses -----------------------------------------------------------

int64_t count_ones(const Tensor& mask) {
  int64_t n = 0;
  const double* m = mask.data();
  for (int64_t i = 0; i < mask.size(); ++i) {
    if (m[i] == 1.0) ++n;
  }
  return n;
}

namespace {

Tensor masked_sq_sum_impl(const Tensor& pred, const Tensor& target,
                          const Tensor& mask, double inv_norm, Tape* tape) {
  if (!pred.same_shape(target) || !pred.same_shape(mask)) {
    throw ShapeError("masked loss shape mismatch: pred " + shape_str(pred.shape()) +
                     " target " + shape_str(target.shape()) + " mask " +
                     shape_str(mask.shape()));
  }
  const double* p = pred.data();
  const double* t = target.data();
  const double* m = mask.data();
  double acc = 0.0;
  for (int64_t i = 0; i < pred.size(); ++i) {
    const double d = p[i] - t[i];
    acc += m[i] * d * d;
  }
  Tensor out = Tensor::scalar(acc * inv_norm);
  if (tape && wants_grad(pred)) {
    out.set_requires_grad(true);
    Tensor p_t = pred, t_t = target, m_t = mask, out_t = out;
    tape->record([p_t, t_t, m_t, out_t, inv_norm]() mutable {
      const double* go = out_t.grad_data();
      if (!go) return;
      const double scale = 2.0 * inv_norm * go[0];
      double* g = p_t.grad();
      const double* p = p_t.data();
      const double* t = t_t.data();
      const double* m = m_t.data();
      for (int64_t i = 0; i < p_t.size(); ++i) {
        if (m[i] != 0.0) g[i] += scale * m[i] * (p[i] - t[i]);
      }
    });
  }
  return out;
}

}  // namespace

Tensor masked_sq_sum(const Tensor& pred, const Tensor& target,
                     const Tensor& mask, Tape* tape) {
  return masked_sq_sum_impl(pred, target, mask, 1.0, tape);
}

Tensor masked_l2(const Tensor& pred, const Tensor& target, const Tensor& mask,
                 Tape* tape) {
  const int64_t n = count_ones(mask);
  return masked_sq_sum_impl(pred, target, mask, 1.0 / static_cast<double>(std::max<int64_t>(1, n)), tape);
}

// ---- weighted_sum ------------------------------------------------------------

Tensor weighted_sum(std::span<const Tensor> xs, std::span<const double> ws,
                    Tape* tape) {
  if (xs.size() != ws.size()) throw ShapeError("weighted_sum arity mismatch");
  double acc = 0.0;
  bool any_grad = false;
  for (size_t i = 0; i < xs.size(); ++i) {
    if (xs[i].size() != 1) throw ShapeError("weighted_sum terms must be scalars");
    acc += ws[i] * xs[i].value();
    any_grad |= xs[i].requires_grad();
  }
  Tensor out = Tensor::scalar(acc);
  if (tape && any_grad) {
    out.set_requires_grad(true);
    std::vector<Tensor> terms(xs.begin(), xs.end());
    std::vector<double> weights(ws.begin(), ws.end());
    Tensor out_t = out;
    tape->record([terms, weights, out_t]() mutable {
      const double* go = out_t.grad_data();
      if (!go) return;
      for (size_t i = 0; i < terms.size(); ++i) {
        if (terms[i].requires_grad()) terms[i].grad()[0] += weights[i] * go[0];
      }
    });
  }
  return out;
}

// ---- sgd ------------------------------------------------------------

Param::Param(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {
  value.set_requires_grad(true);
  momentum.assign(static_cast<size_t>(value.size()), 0.0);
}

void sgd_step(std::span<Param* const> params, double lr, double momentum,
              double weight_decay) {
  for (Param* p : params) {
    if (!p->value.has_grad()) {
      throw StateError("sgd_step: parameter '" + p->name + "' has no gradient");
    }
  }
  for (Param* p : params) {
    double* v = p->value.data();
    const double* g = p->value.grad_data();
    double* buf = p->momentum.data();
    const int64_t n = p->value.size();
    for (int64_t i = 0; i < n; ++i) {
      buf[i] = momentum * buf[i] + g[i] + weight_decay * v[i];
      v[i] -= lr * buf[i];
    }
    p->value.clear_grad();
  }
}

}  // namespace densebox
