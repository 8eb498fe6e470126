#include "tunnelwave/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "tunnelwave/errors.hpp"

namespace tw::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

std::atomic<std::uint64_t> g_order{1};
thread_local bool t_grad_enabled = true;

void require(bool cond, const std::string& what) {
  if (!cond) throw std::invalid_argument(what);
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  require(t.defined(), std::string(op) + ": undefined tensor");
  require(t.rank() == rank, std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                                shape_string(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape() == b.shape(),
          std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

// Gradient sink for parent i, or nullptr when that parent does not need one.
double* parent_grad(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  return p.requires_grad ? p.ensure_grad().data() : nullptr;
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, const char* op, Fwd fwd, Deriv deriv) {
  std::vector<double> out(x.numel());
  const auto in = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(in[i]);
  return make_result(x.shape(), std::move(out), {x},
                     [deriv](Node& self) {
                       double* gx = parent_grad(self, 0);
                       if (!gx) return;
                       const auto& xv = self.parents[0]->value;
                       for (std::size_t i = 0; i < self.grad.size(); ++i) {
                         gx[i] += self.grad[i] * deriv(xv[i], self.value[i]);
                       }
                     },
                     op);
}

struct ConvGeometry {
  std::size_t n, c, h, w, o, kh, kw, stride, ph, pw, ho, wo;

  std::size_t patch() const { return c * kh * kw; }
  std::size_t out_pixels() const { return ho * wo; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && ph == 0 && pw == 0; }
};

ConvGeometry conv_geometry(const Tensor& x, const Tensor& w, Conv2dOptions opt) {
  require_rank(x, 4, "conv2d");
  require_rank(w, 4, "conv2d weight");
  require(opt.stride >= 1, "conv2d: stride must be >= 1");
  ConvGeometry g{};
  g.n = x.dim(0);
  g.c = x.dim(1);
  g.h = x.dim(2);
  g.w = x.dim(3);
  g.o = w.dim(0);
  g.kh = w.dim(2);
  g.kw = w.dim(3);
  g.stride = opt.stride;
  g.ph = opt.pad_h;
  g.pw = opt.pad_w;
  require(w.dim(1) == g.c, "conv2d: weight expects " + std::to_string(w.dim(1)) + " input channels, got " +
                               std::to_string(g.c));
  const std::size_t span_h = g.h + 2 * g.ph;
  const std::size_t span_w = g.w + 2 * g.pw;
  require(span_h >= g.kh && span_w >= g.kw, "conv2d: kernel larger than padded input");
  require((span_h - g.kh) % g.stride == 0 && (span_w - g.kw) % g.stride == 0,
          "conv2d: non-integer output size for input " + shape_string(x.shape()));
  g.ho = (span_h - g.kh) / g.stride + 1;
  g.wo = (span_w - g.kw) / g.stride + 1;
  return g;
}

// col[(ci*kh + i)*kw + j][oy*wo + ox] = x[ci][oy*s - ph + i][ox*s - pw + j]
void im2col(const double* x, const ConvGeometry& g, double* col) {
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    const double* plane = x + ci * g.h * g.w;
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        double* dst = col + ((ci * g.kh + i) * g.kw + j) * g.out_pixels();
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + i) - static_cast<long>(g.ph);
          double* row = dst + oy * g.wo;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill(row, row + g.wo, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(iy) * g.w;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + j) - static_cast<long>(g.pw);
            row[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, const ConvGeometry& g, double* x) {
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    double* plane = x + ci * g.h * g.w;
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const double* src = col + ((ci * g.kh + i) * g.kw + j) * g.out_pixels();
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + i) - static_cast<long>(g.ph);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          double* dst = plane + static_cast<std::size_t>(iy) * g.w;
          const double* row = src + oy * g.wo;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + j) - static_cast<long>(g.pw);
            if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += row[ox];
          }
        }
      }
    }
  }
}

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

std::vector<double>& Node::ensure_grad() {
  if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = ad::numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (ad::numel(shape) != values.size()) {
    throw std::invalid_argument("Tensor::from: " + std::to_string(values.size()) + " values for shape " +
                                shape_string(shape));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  node->order = g_order++;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

double Tensor::item() const {
  if (numel() != 1) throw std::invalid_argument("item() on a tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

std::span<const double> Tensor::grad() const {
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
                   std::function<void(Node&)> backward_fn, const char* op) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  node->order = g_order++;
  const bool needs = t_grad_enabled && std::any_of(parents.begin(), parents.end(), [](const Tensor& p) {
                       return p.defined() && p.requires_grad();
                     });
  if (needs) {
    node->requires_grad = true;
    node->backward_fn = std::move(backward_fn);
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node_ptr());
  }
  return Tensor(std::move(node));
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) throw std::invalid_argument("backward() needs a single-element tensor");
  Node* root = loss.node();
  if (!root->requires_grad) return;
  if (!root->backward_fn) {
    root->ensure_grad()[0] += 1.0;
    return;
  }

  std::vector<Node*> ops;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{root};
  seen.insert(root);
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    ops.push_back(n);
    for (auto& p : n->parents) {
      if (p && p->backward_fn && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(ops.begin(), ops.end(), [](const Node* a, const Node* b) { return a->order > b->order; });

  for (Node* n : ops) n->grad.assign(n->value.size(), 0.0);
  root->grad[0] = 1.0;
  for (Node* n : ops) {
    n->backward_fn(*n);
    std::vector<double>().swap(n->grad);
  }
}

Tensor detach(const Tensor& x) { return Tensor::from(x.shape(), {x.values().begin(), x.values().end()}); }

// ---- convolution family ---------------------------------------------------------

namespace {

using StridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

// Stride-1 convolution without a column buffer. The input is zero-padded once
// to (C, Hp, Wp); the output is accumulated over the padded width, so for a
// kernel offset (i, j) the needed input window of every channel is the
// contiguous run starting at i*Wp + j. Columns >= wo of that extended output
// are discarded.
struct ShiftedConv {
  const ConvGeometry& g;
  std::size_t hp, wp, plane, ext;
  std::vector<RowMat> taps;  // taps[i*kw + j] is the (O x C) slice of the weight

  ShiftedConv(const ConvGeometry& geo, const double* w)
      : g(geo), hp(geo.h + 2 * geo.ph), wp(geo.w + 2 * geo.pw), plane(hp * wp), ext(geo.ho * wp) {
    taps.resize(g.kh * g.kw);
    for (std::size_t k = 0; k < taps.size(); ++k) {
      taps[k].resize(static_cast<Eigen::Index>(g.o), static_cast<Eigen::Index>(g.c));
      for (std::size_t o = 0; o < g.o; ++o) {
        for (std::size_t c = 0; c < g.c; ++c) {
          taps[k](static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(c)) = w[(o * g.c + c) * g.kh * g.kw + k];
        }
      }
    }
  }

  // Slack after the last plane covers the overrun of the widest offset.
  std::size_t padded_size() const { return g.c * plane + g.kw; }

  void pad(const double* x, double* xp) const {
    std::fill(xp, xp + padded_size(), 0.0);
    for (std::size_t c = 0; c < g.c; ++c) {
      for (std::size_t r = 0; r < g.h; ++r) {
        std::copy_n(x + (c * g.h + r) * g.w, g.w, xp + c * plane + (r + g.ph) * wp + g.pw);
      }
    }
  }

  StridedMap window(const double* xp, std::size_t k) const {
    const std::size_t off = (k / g.kw) * wp + k % g.kw;
    return StridedMap(xp + off, static_cast<Eigen::Index>(g.c), static_cast<Eigen::Index>(ext),
                      Eigen::OuterStride<>(static_cast<Eigen::Index>(plane)));
  }

  void forward(const double* xp, double* y) const {
    RowMat acc = RowMat::Zero(static_cast<Eigen::Index>(g.o), static_cast<Eigen::Index>(ext));
    for (std::size_t k = 0; k < taps.size(); ++k) acc.noalias() += taps[k] * window(xp, k);
    for (std::size_t o = 0; o < g.o; ++o) {
      for (std::size_t r = 0; r < g.ho; ++r) {
        std::copy_n(acc.data() + o * ext + r * wp, g.wo, y + (o * g.ho + r) * g.wo);
      }
    }
  }

  RowMat extend(const double* gy) const {
    RowMat e = RowMat::Zero(static_cast<Eigen::Index>(g.o), static_cast<Eigen::Index>(ext));
    for (std::size_t o = 0; o < g.o; ++o) {
      for (std::size_t r = 0; r < g.ho; ++r) std::copy_n(gy + (o * g.ho + r) * g.wo, g.wo, e.data() + o * ext + r * wp);
    }
    return e;
  }

  void weight_grad(const double* xp, const RowMat& gy_ext, double* gw) const {
    for (std::size_t k = 0; k < taps.size(); ++k) {
      const RowMat d = gy_ext * window(xp, k).transpose();
      for (std::size_t o = 0; o < g.o; ++o) {
        for (std::size_t c = 0; c < g.c; ++c) {
          gw[(o * g.c + c) * g.kh * g.kw + k] += d(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(c));
        }
      }
    }
  }

  // Adds the input gradient of one sample into dx (unpadded layout).
  void input_grad(const RowMat& gy_ext, double* dx) const {
    std::vector<double> gxp(padded_size(), 0.0);
    RowMat t(static_cast<Eigen::Index>(g.c), static_cast<Eigen::Index>(ext));
    for (std::size_t k = 0; k < taps.size(); ++k) {
      t.noalias() = taps[k].transpose() * gy_ext;
      const std::size_t off = (k / g.kw) * wp + k % g.kw;
      // Entries past a plane's end come from discarded columns and are zero.
      const std::size_t len = std::min(ext, plane - off);
      for (std::size_t c = 0; c < g.c; ++c) {
        double* dst = gxp.data() + c * plane + off;
        const double* src = t.data() + c * ext;
        for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
      }
    }
    for (std::size_t c = 0; c < g.c; ++c) {
      for (std::size_t r = 0; r < g.h; ++r) {
        const double* src = gxp.data() + c * plane + (r + g.ph) * wp + g.pw;
        double* dst = dx + (c * g.h + r) * g.w;
        for (std::size_t i = 0; i < g.w; ++i) dst[i] += src[i];
      }
    }
  }
};

bool use_shifted(const ConvGeometry& g) { return g.stride == 1 && !g.pointwise(); }

void add_bias(double* y, const ConvGeometry& g, std::span<const double> b) {
  for (std::size_t oc = 0; oc < g.o; ++oc) {
    double* row = y + oc * g.out_pixels();
    for (std::size_t i = 0; i < g.out_pixels(); ++i) row[i] += b[oc];
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, Conv2dOptions options) {
  const ConvGeometry g = conv_geometry(input, weight, options);
  if (bias.defined()) require(bias.numel() == g.o, "conv2d: bias size must equal output channels");

  std::vector<double> out(g.n * g.o * g.out_pixels());
  const auto xv = input.values();
  if (use_shifted(g)) {
    const ShiftedConv sc(g, weight.values().data());
    std::vector<double> xp(sc.padded_size());
    for (std::size_t n = 0; n < g.n; ++n) {
      sc.pad(xv.data() + n * g.c * g.h * g.w, xp.data());
      sc.forward(xp.data(), out.data() + n * g.o * g.out_pixels());
    }
  } else {
    std::vector<double> col(g.pointwise() ? 0 : g.patch() * g.out_pixels());
    const ConstMatMap w(weight.values().data(), static_cast<Eigen::Index>(g.o), static_cast<Eigen::Index>(g.patch()));
    for (std::size_t n = 0; n < g.n; ++n) {
      const double* x = xv.data() + n * g.c * g.h * g.w;
      if (!g.pointwise()) im2col(x, g, col.data());
      const ConstMatMap cm(g.pointwise() ? x : col.data(), static_cast<Eigen::Index>(g.patch()),
                           static_cast<Eigen::Index>(g.out_pixels()));
      MatMap y(out.data() + n * g.o * g.out_pixels(), static_cast<Eigen::Index>(g.o),
               static_cast<Eigen::Index>(g.out_pixels()));
      y.noalias() = w * cm;
    }
  }
  if (bias.defined()) {
    for (std::size_t n = 0; n < g.n; ++n) add_bias(out.data() + n * g.o * g.out_pixels(), g, bias.values());
  }

  std::vector<Tensor> parents{input, weight};
  if (bias.defined()) parents.push_back(bias);
  return make_result(
      {g.n, g.o, g.ho, g.wo}, std::move(out), std::move(parents),
      [g](Node& self) {
        double* gx = parent_grad(self, 0);
        double* gw = parent_grad(self, 1);
        double* gb = self.parents.size() > 2 ? parent_grad(self, 2) : nullptr;
        const auto& xv = self.parents[0]->value;
        const auto& wv = self.parents[1]->value;
        const auto P = static_cast<Eigen::Index>(g.patch());
        const auto Q = static_cast<Eigen::Index>(g.out_pixels());
        const auto O = static_cast<Eigen::Index>(g.o);
        if (gb) {
          for (std::size_t n = 0; n < g.n; ++n) {
            const ConstMatMap gy(self.grad.data() + n * g.o * g.out_pixels(), O, Q);
            // Plain loop: Eigen's vectorized sum depends on pointer alignment,
            // which would make runs differ in the last bit.
            for (Eigen::Index oc = 0; oc < O; ++oc) {
              double acc = 0.0;
              for (Eigen::Index q = 0; q < Q; ++q) acc += gy(oc, q);
              gb[oc] += acc;
            }
          }
        }
        if (!gx && !gw) return;
        if (use_shifted(g)) {
          const ShiftedConv sc(g, wv.data());
          std::vector<double> xp(gw ? sc.padded_size() : 0);
          for (std::size_t n = 0; n < g.n; ++n) {
            const RowMat gy_ext = sc.extend(self.grad.data() + n * g.o * g.out_pixels());
            if (gw) {
              sc.pad(xv.data() + n * g.c * g.h * g.w, xp.data());
              sc.weight_grad(xp.data(), gy_ext, gw);
            }
            if (gx) sc.input_grad(gy_ext, gx + n * g.c * g.h * g.w);
          }
          return;
        }
        const ConstMatMap w(wv.data(), O, P);
        std::vector<double> col(g.pointwise() ? 0 : g.patch() * g.out_pixels());
        std::vector<double> dcol(gx && !g.pointwise() ? g.patch() * g.out_pixels() : 0);
        for (std::size_t n = 0; n < g.n; ++n) {
          const ConstMatMap gy(self.grad.data() + n * g.o * g.out_pixels(), O, Q);
          const double* x = xv.data() + n * g.c * g.h * g.w;
          if (gw) {
            if (!g.pointwise()) im2col(x, g, col.data());
            const ConstMatMap cm(g.pointwise() ? x : col.data(), P, Q);
            MatMap dw(gw, O, P);
            dw.noalias() += gy * cm.transpose();
          }
          if (gx) {
            double* dx = gx + n * g.c * g.h * g.w;
            if (g.pointwise()) {
              MatMap dxm(dx, P, Q);
              dxm.noalias() += w.transpose() * gy;
            } else {
              MatMap dc(dcol.data(), P, Q);
              dc.noalias() = w.transpose() * gy;
              col2im_add(dcol.data(), g, dx);
            }
          }
        }
      },
      "conv2d");
}

Tensor conv2d_stride2_down(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require_rank(input, 4, "conv2d_stride2_down");
  require(input.dim(2) % 2 == 0 && input.dim(3) % 2 == 0,
          "conv2d_stride2_down: spatial size " + shape_string(input.shape()) + " is not even");
  require(weight.dim(2) == 4 && weight.dim(3) == 4, "conv2d_stride2_down: expects a 4x4 kernel");
  return conv2d(input, weight, bias, {2, 1, 1});
}

Tensor upsample_nearest2x(const Tensor& input) {
  require_rank(input, 4, "upsample_nearest2x");
  const std::size_t planes = input.dim(0) * input.dim(1);
  const std::size_t h = input.dim(2);
  const std::size_t w = input.dim(3);
  std::vector<double> out(planes * 4 * h * w);
  const auto xv = input.values();
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = xv.data() + p * h * w;
    double* dst = out.data() + p * 4 * h * w;
    for (std::size_t y = 0; y < 2 * h; ++y) {
      for (std::size_t x = 0; x < 2 * w; ++x) dst[y * 2 * w + x] = src[(y / 2) * w + x / 2];
    }
  }
  return make_result({input.dim(0), input.dim(1), 2 * h, 2 * w}, std::move(out), {input},
                     [planes, h, w](Node& self) {
                       double* gx = parent_grad(self, 0);
                       if (!gx) return;
                       for (std::size_t p = 0; p < planes; ++p) {
                         const double* src = self.grad.data() + p * 4 * h * w;
                         double* dst = gx + p * h * w;
                         for (std::size_t y = 0; y < 2 * h; ++y) {
                           for (std::size_t x = 0; x < 2 * w; ++x) dst[(y / 2) * w + x / 2] += src[y * 2 * w + x];
                         }
                       }
                     },
                     "upsample_nearest2x");
}

Tensor reflect_pad(const Tensor& input, std::size_t pad_bottom, std::size_t pad_right) {
  require_rank(input, 4, "reflect_pad");
  const std::size_t planes = input.dim(0) * input.dim(1);
  const std::size_t h = input.dim(2);
  const std::size_t w = input.dim(3);
  require(pad_bottom < h && pad_right < w, "reflect_pad: padding must be smaller than the image");
  if (pad_bottom == 0 && pad_right == 0) return input;
  const std::size_t ho = h + pad_bottom;
  const std::size_t wo = w + pad_right;
  auto src_index = [](std::size_t i, std::size_t n) { return i < n ? i : 2 * (n - 1) - i; };

  std::vector<double> out(planes * ho * wo);
  const auto xv = input.values();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t y = 0; y < ho; ++y) {
      for (std::size_t x = 0; x < wo; ++x) {
        out[(p * ho + y) * wo + x] = xv[(p * h + src_index(y, h)) * w + src_index(x, w)];
      }
    }
  }
  return make_result({input.dim(0), input.dim(1), ho, wo}, std::move(out), {input},
                     [=](Node& self) {
                       double* gx = parent_grad(self, 0);
                       if (!gx) return;
                       for (std::size_t p = 0; p < planes; ++p) {
                         for (std::size_t y = 0; y < ho; ++y) {
                           for (std::size_t x = 0; x < wo; ++x) {
                             gx[(p * h + src_index(y, h)) * w + src_index(x, w)] += self.grad[(p * ho + y) * wo + x];
                           }
                         }
                       }
                     },
                     "reflect_pad");
}

Tensor crop(const Tensor& input, std::size_t h0, std::size_t h1, std::size_t w0, std::size_t w1) {
  require_rank(input, 4, "crop");
  const std::size_t planes = input.dim(0) * input.dim(1);
  const std::size_t h = input.dim(2);
  const std::size_t w = input.dim(3);
  require(h0 < h1 && h1 <= h && w0 < w1 && w1 <= w, "crop: window outside the input");
  const std::size_t ho = h1 - h0;
  const std::size_t wo = w1 - w0;
  std::vector<double> out(planes * ho * wo);
  const auto xv = input.values();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t y = 0; y < ho; ++y) {
      const double* src = xv.data() + (p * h + h0 + y) * w + w0;
      std::copy(src, src + wo, out.data() + (p * ho + y) * wo);
    }
  }
  return make_result({input.dim(0), input.dim(1), ho, wo}, std::move(out), {input},
                     [=](Node& self) {
                       double* gx = parent_grad(self, 0);
                       if (!gx) return;
                       for (std::size_t p = 0; p < planes; ++p) {
                         for (std::size_t y = 0; y < ho; ++y) {
                           double* dst = gx + (p * h + h0 + y) * w + w0;
                           const double* src = self.grad.data() + (p * ho + y) * wo;
                           for (std::size_t x = 0; x < wo; ++x) dst[x] += src[x];
                         }
                       }
                     },
                     "crop");
}

Tensor concat_channels(std::span<const Tensor> inputs) {
  require(!inputs.empty(), "concat_channels: no inputs");
  for (const auto& t : inputs) require_rank(t, 4, "concat_channels");
  const std::size_t n = inputs[0].dim(0);
  const std::size_t h = inputs[0].dim(2);
  const std::size_t w = inputs[0].dim(3);
  std::vector<std::size_t> channels;
  std::size_t total = 0;
  for (const auto& t : inputs) {
    require(t.dim(0) == n && t.dim(2) == h && t.dim(3) == w, "concat_channels: batch/spatial mismatch");
    channels.push_back(t.dim(1));
    total += t.dim(1);
  }
  const std::size_t hw = h * w;
  std::vector<double> out(n * total * hw);
  for (std::size_t b = 0; b < n; ++b) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      const double* src = inputs[k].values().data() + b * channels[k] * hw;
      std::copy(src, src + channels[k] * hw, out.data() + (b * total + offset) * hw);
      offset += channels[k];
    }
  }
  return make_result({n, total, h, w}, std::move(out), {inputs.begin(), inputs.end()},
                     [=](Node& self) {
                       for (std::size_t b = 0; b < n; ++b) {
                         std::size_t offset = 0;
                         for (std::size_t k = 0; k < channels.size(); ++k) {
                           if (double* gx = parent_grad(self, k)) {
                             const double* src = self.grad.data() + (b * total + offset) * hw;
                             double* dst = gx + b * channels[k] * hw;
                             for (std::size_t i = 0; i < channels[k] * hw; ++i) dst[i] += src[i];
                           }
                           offset += channels[k];
                         }
                       }
                     },
                     "concat_channels");
}

Tensor concat_channels(std::initializer_list<Tensor> inputs) {
  return concat_channels(std::span<const Tensor>(inputs.begin(), inputs.size()));
}

Tensor global_avg_pool(const Tensor& input) {
  require_rank(input, 4, "global_avg_pool");
  const std::size_t planes = input.dim(0) * input.dim(1);
  const std::size_t hw = input.dim(2) * input.dim(3);
  std::vector<double> out(planes);
  const auto xv = input.values();
  for (std::size_t p = 0; p < planes; ++p) {
    double s = 0.0;
    for (std::size_t i = 0; i < hw; ++i) s += xv[p * hw + i];
    out[p] = s / static_cast<double>(hw);
  }
  return make_result({input.dim(0), input.dim(1)}, std::move(out), {input},
                     [planes, hw](Node& self) {
                       double* gx = parent_grad(self, 0);
                       if (!gx) return;
                       const double inv = 1.0 / static_cast<double>(hw);
                       for (std::size_t p = 0; p < planes; ++p) {
                         const double g = self.grad[p] * inv;
                         for (std::size_t i = 0; i < hw; ++i) gx[p * hw + i] += g;
                       }
                     },
                     "global_avg_pool");
}

Tensor scale_channels(const Tensor& input, const Tensor& scales) {
  require_rank(input, 4, "scale_channels");
  require_rank(scales, 2, "scale_channels scales");
  require(scales.dim(0) == input.dim(0) && scales.dim(1) == input.dim(1), "scale_channels: channel mismatch");
  const std::size_t planes = input.dim(0) * input.dim(1);
  const std::size_t hw = input.dim(2) * input.dim(3);
  std::vector<double> out(input.numel());
  const auto xv = input.values();
  const auto av = scales.values();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t i = 0; i < hw; ++i) out[p * hw + i] = xv[p * hw + i] * av[p];
  }
  return make_result(input.shape(), std::move(out), {input, scales},
                     [planes, hw](Node& self) {
                       double* gx = parent_grad(self, 0);
                       double* ga = parent_grad(self, 1);
                       const auto& xv = self.parents[0]->value;
                       const auto& av = self.parents[1]->value;
                       for (std::size_t p = 0; p < planes; ++p) {
                         double acc = 0.0;
                         for (std::size_t i = 0; i < hw; ++i) {
                           const double g = self.grad[p * hw + i];
                           if (gx) gx[p * hw + i] += g * av[p];
                           acc += g * xv[p * hw + i];
                         }
                         if (ga) ga[p] += acc;
                       }
                     },
                     "scale_channels");
}

Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require_rank(input, 2, "dense");
  require_rank(weight, 2, "dense weight");
  const auto N = static_cast<Eigen::Index>(input.dim(0));
  const auto in = static_cast<Eigen::Index>(input.dim(1));
  const auto outc = static_cast<Eigen::Index>(weight.dim(0));
  require(weight.dim(1) == input.dim(1), "dense: weight expects " + std::to_string(weight.dim(1)) + " inputs, got " +
                                             std::to_string(input.dim(1)));
  if (bias.defined()) require(bias.numel() == weight.dim(0), "dense: bias size mismatch");

  std::vector<double> out(static_cast<std::size_t>(N * outc));
  MatMap y(out.data(), N, outc);
  y.noalias() = ConstMatMap(input.values().data(), N, in) * ConstMatMap(weight.values().data(), outc, in).transpose();
  if (bias.defined()) {
    for (Eigen::Index r = 0; r < N; ++r) {
      for (Eigen::Index c = 0; c < outc; ++c) y(r, c) += bias.values()[static_cast<std::size_t>(c)];
    }
  }
  std::vector<Tensor> parents{input, weight};
  if (bias.defined()) parents.push_back(bias);
  return make_result({static_cast<std::size_t>(N), static_cast<std::size_t>(outc)}, std::move(out), std::move(parents),
                     [N, in, outc](Node& self) {
                       const ConstMatMap gy(self.grad.data(), N, outc);
                       if (double* gx = parent_grad(self, 0)) {
                         MatMap(gx, N, in).noalias() += gy * ConstMatMap(self.parents[1]->value.data(), outc, in);
                       }
                       if (double* gw = parent_grad(self, 1)) {
                         MatMap(gw, outc, in).noalias() +=
                             gy.transpose() * ConstMatMap(self.parents[0]->value.data(), N, in);
                       }
                       if (self.parents.size() > 2) {
                         if (double* gb = parent_grad(self, 2)) {
                           for (Eigen::Index c = 0; c < outc; ++c) {
                             double acc = 0.0;
                             for (Eigen::Index r = 0; r < N; ++r) acc += gy(r, c);
                             gb[c] += acc;
                           }
                         }
                       }
                     },
                     "dense");
}

Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats, Mode mode) {
  require_rank(input, 4, "batch_norm");
  const std::size_t n = input.dim(0);
  const std::size_t c = input.dim(1);
  const std::size_t hw = input.dim(2) * input.dim(3);
  require(gamma.numel() == c && beta.numel() == c, "batch_norm: affine parameters do not match channels");
  require(stats.mean.numel() == c && stats.var.numel() == c, "batch_norm: running statistics do not match channels");
  const double count = static_cast<double>(n * hw);
  const auto xv = input.values();
  const auto gv = gamma.values();
  const auto bv = beta.values();

  std::vector<double> mu(c), inv_std(c);
  if (mode == Mode::train) {
    require(n * hw > 1, "batch_norm: training mode needs more than one value per channel");
    auto rm = stats.mean.mutable_values();
    auto rv = stats.var.mutable_values();
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const double* p = xv.data() + (b * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) s += p[i];
      }
      const double m = s / count;
      double ss = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const double* p = xv.data() + (b * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) ss += (p[i] - m) * (p[i] - m);
      }
      const double var = ss / count;
      mu[ch] = m;
      inv_std[ch] = 1.0 / std::sqrt(var + stats.eps);
      rm[ch] = (1.0 - stats.momentum) * rm[ch] + stats.momentum * m;
      rv[ch] = (1.0 - stats.momentum) * rv[ch] + stats.momentum * ss / (count - 1.0);
    }
  } else {
    const auto rm = stats.mean.values();
    const auto rv = stats.var.values();
    for (std::size_t ch = 0; ch < c; ++ch) {
      mu[ch] = rm[ch];
      inv_std[ch] = 1.0 / std::sqrt(rv[ch] + stats.eps);
    }
  }

  std::vector<double> out(input.numel());
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (b * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) out[base + i] = gv[ch] * (xv[base + i] - mu[ch]) * inv_std[ch] + bv[ch];
    }
  }

  const bool batch_stats = mode == Mode::train;
  return make_result(
      input.shape(), std::move(out), {input, gamma, beta},
      [=](Node& self) {
        double* gx = parent_grad(self, 0);
        double* gg = parent_grad(self, 1);
        double* gb = parent_grad(self, 2);
        const auto& x = self.parents[0]->value;
        const auto& g = self.parents[1]->value;
        for (std::size_t ch = 0; ch < c; ++ch) {
          double sum_dy = 0.0;
          double sum_dy_xhat = 0.0;
          for (std::size_t b = 0; b < n; ++b) {
            const std::size_t base = (b * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              const double dy = self.grad[base + i];
              sum_dy += dy;
              sum_dy_xhat += dy * (x[base + i] - mu[ch]) * inv_std[ch];
            }
          }
          if (gg) gg[ch] += sum_dy_xhat;
          if (gb) gb[ch] += sum_dy;
          if (!gx) continue;
          const double scale = g[ch] * inv_std[ch];
          for (std::size_t b = 0; b < n; ++b) {
            const std::size_t base = (b * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              const double dy = self.grad[base + i];
              if (batch_stats) {
                const double xhat = (x[base + i] - mu[ch]) * inv_std[ch];
                gx[base + i] += scale * (dy - sum_dy / count - xhat * sum_dy_xhat / count);
              } else {
                gx[base + i] += scale * dy;
              }
            }
          }
        }
      },
      "batch_norm");
}

// ---- pointwise ----------------------------------------------------------------

Tensor relu(const Tensor& x) {
  return unary(x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  return unary(x, "leaky_relu", [slope](double v) { return v > 0.0 ? v : slope * v; },
               [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, "sigmoid",
               [](double v) { return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); },
               [](double, double y) { return y * (1.0 - y); });
}

Tensor abs(const Tensor& x) {
  return unary(x, "abs", [](double v) { return std::abs(v); },
               [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor& x) {
  return unary(x, "square", [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor add_scalar(const Tensor& x, double c) {
  return unary(x, "add_scalar", [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& x, double c) {
  return unary(x, "mul_scalar", [c](double v) { return v * c; }, [c](double, double) { return c; });
}

namespace {

template <typename Fwd, typename Back>
Tensor binary(const Tensor& a, const Tensor& b, const char* op, Fwd fwd, Back back) {
  require_same_shape(a, b, op);
  std::vector<double> out(a.numel());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i], bv[i]);
  return make_result(a.shape(), std::move(out), {a, b},
                     [back](Node& self) {
                       double* ga = parent_grad(self, 0);
                       double* gb = parent_grad(self, 1);
                       const auto& av = self.parents[0]->value;
                       const auto& bv = self.parents[1]->value;
                       for (std::size_t i = 0; i < self.grad.size(); ++i) {
                         const auto [da, db] = back(av[i], bv[i]);
                         if (ga) ga[i] += self.grad[i] * da;
                         if (gb) gb[i] += self.grad[i] * db;
                       }
                     },
                     op);
}

struct Partials {
  double da;
  double db;
};

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(a, b, "add", [](double x, double y) { return x + y; },
                [](double, double) { return Partials{1.0, 1.0}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(a, b, "sub", [](double x, double y) { return x - y; },
                [](double, double) { return Partials{1.0, -1.0}; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(a, b, "mul", [](double x, double y) { return x * y; },
                [](double x, double y) { return Partials{y, x}; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(a, b, "div", [](double x, double y) { return x / y; },
                [](double x, double y) { return Partials{1.0 / y, -x / (y * y)}; });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return make_result({}, {s}, {x},
                     [](Node& self) {
                       double* gx = parent_grad(self, 0);
                       if (!gx) return;
                       const double g = self.grad[0];
                       for (std::size_t i = 0; i < self.parents[0]->value.size(); ++i) gx[i] += g;
                     },
                     "sum");
}

Tensor mean(const Tensor& x) {
  require(x.numel() > 0, "mean of an empty tensor");
  double s = 0.0;
  for (double v : x.values()) s += v;
  const double inv = 1.0 / static_cast<double>(x.numel());
  return make_result({}, {s * inv}, {x},
                     [inv](Node& self) {
                       double* gx = parent_grad(self, 0);
                       if (!gx) return;
                       const double g = self.grad[0] * inv;
                       for (std::size_t i = 0; i < self.parents[0]->value.size(); ++i) gx[i] += g;
                     },
                     "mean");
}

}  // namespace tw::ad
