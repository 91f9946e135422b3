#include "cwhar/ops.h"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "cwhar/errors.h"

namespace cwhar {

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;
using BackwardFn = std::function<void(Node&)>;

void require_finite(const std::vector<double>& values, const char* op) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + " produced a non-finite value");
  }
}

// Builds the output node. The backward closure is kept only when a
// gradient can flow to at least one input.
Tensor make_result(Shape shape, std::vector<double> values, const char* op, std::initializer_list<Tensor> inputs,
                   BackwardFn fn) {
  require_finite(values, op);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->op = op;
  if (GradMode::enabled()) {
    bool any = false;
    for (const Tensor& t : inputs) any = any || (t.defined() && t.requires_grad());
    if (any) {
      node->requires_grad = true;
      for (const Tensor& t : inputs) {
        if (t.defined()) node->parents.push_back(t.node());
      }
      node->backward = std::move(fn);
    }
  }
  return Tensor(std::move(node));
}

bool wants_grad(const NodePtr& n) { return n && n->requires_grad; }

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (!t.defined()) throw ShapeError(std::string(op) + ": undefined tensor");
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

// C (m×n) = alpha * op(A) * op(B) + beta * C, row-major.
// Row-major C = alpha·op(A)·op(B) + beta·C.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a,
          const double* b, double beta, double* c) {
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using ConstMap = Eigen::Map<const RowMat>;
  const auto em = static_cast<Eigen::Index>(m), en = static_cast<Eigen::Index>(n), ek = static_cast<Eigen::Index>(k);
  Eigen::Map<RowMat> cm(c, em, en);
  if (beta == 0.0) {
    cm.setZero();
  } else if (beta != 1.0) {
    cm *= beta;
  }
  const ConstMap am(a, trans_a ? ek : em, trans_a ? em : ek);
  const ConstMap bm(b, trans_b ? en : ek, trans_b ? ek : en);
  if (!trans_a && !trans_b) cm.noalias() += alpha * am * bm;
  else if (trans_a && !trans_b) cm.noalias() += alpha * am.transpose() * bm;
  else if (!trans_a && trans_b) cm.noalias() += alpha * am * bm.transpose();
  else cm.noalias() += alpha * am.transpose() * bm.transpose();
}

// Views a 3-D spatial input as a batch of one.
struct Spatial {
  std::size_t batch, channels, height, width;
  bool batched;
};

Spatial spatial_dims(const Tensor& x, const char* op) {
  if (!x.defined() || (x.rank() != 3 && x.rank() != 4)) {
    throw ShapeError(std::string(op) + ": expected C×H×W or B×C×H×W, got " +
                     (x.defined() ? shape_str(x.shape()) : std::string("undefined")));
  }
  if (x.rank() == 3) return {1, x.dim(0), x.dim(1), x.dim(2), false};
  return {x.dim(0), x.dim(1), x.dim(2), x.dim(3), true};
}

Shape spatial_shape(const Spatial& s, std::size_t channels, std::size_t height, std::size_t width) {
  if (s.batched) return {s.batch, channels, height, width};
  return {channels, height, width};
}

// Unfolds one C×H×W image into patch rows of `cols`, whose row stride is `ld`.
void im2col(const double* x, std::size_t channels, std::size_t height, std::size_t width, std::size_t kh,
            std::size_t kw, std::size_t stride, std::size_t pad, std::size_t out_h, std::size_t out_w, double* cols,
            std::size_t ld) {
  const std::size_t plane = ld;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        double* row = cols + ((c * kh + ki) * kw + kj) * plane;
        for (std::size_t oh = 0; oh < out_h; ++oh) {
          const long ih = static_cast<long>(oh * stride + ki) - static_cast<long>(pad);
          double* dst = row + oh * out_w;
          if (ih < 0 || ih >= static_cast<long>(height)) {
            std::fill(dst, dst + out_w, 0.0);
            continue;
          }
          const double* src = x + (c * height + static_cast<std::size_t>(ih)) * width;
          for (std::size_t ow = 0; ow < out_w; ++ow) {
            const long iw = static_cast<long>(ow * stride + kj) - static_cast<long>(pad);
            dst[ow] = (iw < 0 || iw >= static_cast<long>(width)) ? 0.0 : src[iw];
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, std::size_t channels, std::size_t height, std::size_t width, std::size_t kh,
                std::size_t kw, std::size_t stride, std::size_t pad, std::size_t out_h, std::size_t out_w,
                double* x, std::size_t ld) {
  const std::size_t plane = ld;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        const double* row = cols + ((c * kh + ki) * kw + kj) * plane;
        for (std::size_t oh = 0; oh < out_h; ++oh) {
          const long ih = static_cast<long>(oh * stride + ki) - static_cast<long>(pad);
          if (ih < 0 || ih >= static_cast<long>(height)) continue;
          double* dst = x + (c * height + static_cast<std::size_t>(ih)) * width;
          const double* src = row + oh * out_w;
          for (std::size_t ow = 0; ow < out_w; ++ow) {
            const long iw = static_cast<long>(ow * stride + kj) - static_cast<long>(pad);
            if (iw >= 0 && iw < static_cast<long>(width)) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " · " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  gemm(false, false, m, n, k, 1.0, a.data().data(), b.data().data(), 0.0, out.data());
  auto an = a.node();
  auto bn = b.node();
  return make_result({m, n}, std::move(out), "matmul", {a, b}, [an, bn, m, n, k](Node& self) {
    if (wants_grad(an)) gemm(false, true, m, k, n, 1.0, self.grad.data(), bn->value.data(), 1.0, an->ensure_grad().data());
    if (wants_grad(bn)) gemm(true, false, k, n, m, 1.0, an->value.data(), self.grad.data(), 1.0, bn->ensure_grad().data());
  });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<double> out(r * c);
  const auto in = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = in[i * c + j];
  auto an = a.node();
  return make_result({c, r}, std::move(out), "transpose", {a}, [an, r, c](Node& self) {
    auto& g = an->ensure_grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  auto an = a.node();
  auto bn = b.node();
  return make_result(a.shape(), std::move(out), "add", {a, b}, [an, bn](Node& self) {
    for (const auto& p : {an, bn}) {
      if (!wants_grad(p)) continue;
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  auto an = a.node();
  auto bn = b.node();
  return make_result(a.shape(), std::move(out), "sub", {a, b}, [an, bn](Node& self) {
    if (wants_grad(an)) {
      auto& g = an->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants_grad(bn)) {
      auto& g = bn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  auto an = a.node();
  auto bn = b.node();
  return make_result(a.shape(), std::move(out), "mul", {a, b}, [an, bn](Node& self) {
    if (wants_grad(an)) {
      auto& g = an->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bn->value[i];
    }
    if (wants_grad(bn)) {
      auto& g = bn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * an->value[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * factor;
  auto an = a.node();
  return make_result(a.shape(), std::move(out), "scale", {a}, [an, factor](Node& self) {
    auto& g = an->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_rank(x, 2, "add_bias");
  require_rank(bias, 1, "add_bias");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (bias.dim(0) != cols) {
    throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not match " + shape_str(x.shape()));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] += bias.data()[j];
  auto xn = x.node();
  auto bn = bias.node();
  return make_result(x.shape(), std::move(out), "add_bias", {x, bias}, [xn, bn, rows, cols](Node& self) {
    if (wants_grad(xn)) {
      auto& g = xn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants_grad(bn)) {
      auto& g = bn->ensure_grad();
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) g[j] += self.grad[i * cols + j];
    }
  });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  auto an = a.node();
  return make_result({1}, {total}, "sum", {a}, [an](Node& self) {
    auto& g = an->ensure_grad();
    for (double& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  const double n = static_cast<double>(a.numel());
  auto an = a.node();
  return make_result({1}, {total / n}, "mean", {a}, [an, n](Node& self) {
    auto& g = an->ensure_grad();
    const double share = self.grad[0] / n;
    for (double& v : g) v += share;
  });
}

Tensor square(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * a.data()[i];
  auto an = a.node();
  return make_result(a.shape(), std::move(out), "square", {a}, [an](Node& self) {
    auto& g = an->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * an->value[i] * self.grad[i];
  });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
  auto an = a.node();
  return make_result(a.shape(), std::move(out), "relu", {a}, [an](Node& self) {
    auto& g = an->ensure_grad();
    // Subgradient at 0 is 0.
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (an->value[i] > 0.0) g[i] += self.grad[i];
    }
  });
}

Tensor tanh(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a.data()[i]);
  auto an = a.node();
  return make_result(a.shape(), std::move(out), "tanh", {a}, [an](Node& self) {
    auto& g = an->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double y = self.value[i];
      g[i] += (1.0 - y * y) * self.grad[i];
    }
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: " + shape_str(a.shape()) + " cannot become " + shape_str(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  auto an = a.node();
  return make_result(std::move(shape), std::move(out), "reshape", {a}, [an](Node& self) {
    auto& g = an->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor flatten(const Tensor& a) {
  if (!a.defined() || a.rank() < 2) throw ShapeError("flatten: need rank ≥ 2");
  return reshape(a, {a.dim(0), a.numel() / a.dim(0)});
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t rows = parts[0].defined() && parts[0].rank() == 2 ? parts[0].dim(0) : 0;
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.dim(0) != rows) throw ShapeError("concat_cols: row counts differ");
    widths.push_back(p.dim(1));
    total += p.dim(1);
  }
  std::vector<double> out(rows * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto in = parts[k].data();
    for (std::size_t i = 0; i < rows; ++i)
      std::copy_n(in.begin() + static_cast<long>(i * widths[k]), widths[k], out.begin() + static_cast<long>(i * total + offset));
    offset += widths[k];
  }
  std::vector<NodePtr> nodes;
  for (const Tensor& p : parts) nodes.push_back(p.node());
  auto result = make_result({rows, total}, std::move(out), "concat_cols", {}, nullptr);
  if (GradMode::enabled() && std::any_of(parts.begin(), parts.end(), [](const Tensor& t) { return t.requires_grad(); })) {
    auto& node = *result.node();
    node.requires_grad = true;
    node.parents = nodes;
    node.backward = [nodes, widths, rows, total](Node& self) {
      std::size_t off = 0;
      for (std::size_t k = 0; k < nodes.size(); ++k) {
        if (wants_grad(nodes[k])) {
          auto& g = nodes[k]->ensure_grad();
          for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < widths[k]; ++j) g[i * widths[k] + j] += self.grad[i * total + off + j];
        }
        off += widths[k];
      }
    };
  }
  return result;
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t rows = 0;
  std::vector<double> out;
  std::vector<NodePtr> nodes;
  for (const Tensor& p : parts) {
    if (!p.defined() || p.rank() == 0 || Shape(p.shape().begin() + 1, p.shape().end()) != tail) {
      throw ShapeError("concat_rows: trailing extents differ");
    }
    rows += p.dim(0);
    out.insert(out.end(), p.data().begin(), p.data().end());
    nodes.push_back(p.node());
  }
  Shape shape{rows};
  shape.insert(shape.end(), tail.begin(), tail.end());
  auto result = make_result(std::move(shape), std::move(out), "concat_rows", {}, nullptr);
  if (GradMode::enabled() && std::any_of(parts.begin(), parts.end(), [](const Tensor& t) { return t.requires_grad(); })) {
    auto& node = *result.node();
    node.requires_grad = true;
    node.parents = nodes;
    node.backward = [nodes](Node& self) {
      std::size_t off = 0;
      for (const auto& p : nodes) {
        const std::size_t n = p->value.size();
        if (wants_grad(p)) {
          auto& g = p->ensure_grad();
          for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[off + i];
        }
        off += n;
      }
    };
  }
  return result;
}

Tensor conv2d(const Tensor& x, const Tensor& weights, const Tensor& bias, Conv2dOptions options) {
  const Spatial s = spatial_dims(x, "conv2d");
  require_rank(weights, 4, "conv2d");
  const std::size_t c_out = weights.dim(0), kh = weights.dim(2), kw = weights.dim(3);
  if (weights.dim(1) != s.channels) {
    throw ShapeError("conv2d: kernel expects " + std::to_string(weights.dim(1)) + " input channels, input has " +
                     std::to_string(s.channels));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != c_out)) {
    throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " does not match " + std::to_string(c_out) +
                     " output channels");
  }
  const std::size_t stride = options.stride, pad = options.padding;
  if (stride == 0) throw ArgumentError("conv2d: stride must be positive");
  if (kh > s.height + 2 * pad || kw > s.width + 2 * pad) {
    throw ShapeError("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) + " exceeds padded input " +
                     std::to_string(s.height + 2 * pad) + "x" + std::to_string(s.width + 2 * pad));
  }
  const std::size_t out_h = (s.height + 2 * pad - kh) / stride + 1;
  const std::size_t out_w = (s.width + 2 * pad - kw) / stride + 1;
  const std::size_t plane = out_h * out_w;
  const std::size_t patch = s.channels * kh * kw;
  const std::size_t in_size = s.channels * s.height * s.width;
  // Samples are unfolded side by side so each chunk is a single GEMM; the
  // chunk size caps the unfolded buffer at roughly 4M doubles.
  const std::size_t chunk = std::clamp<std::size_t>((std::size_t{1} << 22) / (patch * plane), 1, s.batch);

  std::vector<double> out(s.batch * c_out * plane);
  std::vector<double> cols(patch * plane * chunk);
  std::vector<double> tmp(c_out * plane * chunk);
  for (std::size_t b0 = 0; b0 < s.batch; b0 += chunk) {
    const std::size_t nb = std::min(chunk, s.batch - b0);
    const std::size_t ld = nb * plane;
    for (std::size_t b = 0; b < nb; ++b) {
      im2col(x.data().data() + (b0 + b) * in_size, s.channels, s.height, s.width, kh, kw, stride, pad, out_h, out_w,
             cols.data() + b * plane, ld);
    }
    gemm(false, false, c_out, ld, patch, 1.0, weights.data().data(), cols.data(), 0.0, tmp.data());
    for (std::size_t b = 0; b < nb; ++b) {
      for (std::size_t o = 0; o < c_out; ++o) {
        const double add_b = bias.defined() ? bias.data()[o] : 0.0;
        const double* src = tmp.data() + o * ld + b * plane;
        double* dst = out.data() + ((b0 + b) * c_out + o) * plane;
        for (std::size_t p = 0; p < plane; ++p) dst[p] = src[p] + add_b;
      }
    }
  }

  auto xn = x.node();
  auto wn = weights.node();
  auto bn = bias.defined() ? bias.node() : NodePtr{};
  BackwardFn fn = [xn, wn, bn, s, c_out, kh, kw, stride, pad, out_h, out_w, plane, patch, in_size, chunk](Node& self) {
    std::vector<double> cols(patch * plane * chunk);
    std::vector<double> dout(c_out * plane * chunk);
    for (std::size_t b0 = 0; b0 < s.batch; b0 += chunk) {
      const std::size_t nb = std::min(chunk, s.batch - b0);
      const std::size_t ld = nb * plane;
      for (std::size_t b = 0; b < nb; ++b) {
        for (std::size_t o = 0; o < c_out; ++o) {
          const double* src = self.grad.data() + ((b0 + b) * c_out + o) * plane;
          std::copy(src, src + plane, dout.data() + o * ld + b * plane);
        }
      }
      if (wants_grad(wn)) {
        for (std::size_t b = 0; b < nb; ++b) {
          im2col(xn->value.data() + (b0 + b) * in_size, s.channels, s.height, s.width, kh, kw, stride, pad, out_h,
                 out_w, cols.data() + b * plane, ld);
        }
        gemm(false, true, c_out, patch, ld, 1.0, dout.data(), cols.data(), 1.0, wn->ensure_grad().data());
      }
      if (wants_grad(bn)) {
        auto& g = bn->ensure_grad();
        for (std::size_t o = 0; o < c_out; ++o) {
          double acc = 0.0;
          for (std::size_t p = 0; p < ld; ++p) acc += dout[o * ld + p];
          g[o] += acc;
        }
      }
      if (wants_grad(xn)) {
        gemm(true, false, patch, ld, c_out, 1.0, wn->value.data(), dout.data(), 0.0, cols.data());
        auto& g = xn->ensure_grad();
        for (std::size_t b = 0; b < nb; ++b) {
          col2im_add(cols.data() + b * plane, s.channels, s.height, s.width, kh, kw, stride, pad, out_h, out_w,
                     g.data() + (b0 + b) * in_size, ld);
        }
      }
    }
  };
  if (bn) return make_result(spatial_shape(s, c_out, out_h, out_w), std::move(out), "conv2d", {x, weights, bias}, fn);
  return make_result(spatial_shape(s, c_out, out_h, out_w), std::move(out), "conv2d", {x, weights}, fn);
}

Tensor maxpool2d(const Tensor& x, std::size_t window, std::size_t stride) {
  const Spatial s = spatial_dims(x, "maxpool2d");
  if (window == 0 || stride == 0) throw ArgumentError("maxpool2d: window and stride must be positive");
  if (window > s.height || window > s.width) {
    throw ShapeError("maxpool2d: window " + std::to_string(window) + " exceeds input " + std::to_string(s.height) +
                     "x" + std::to_string(s.width));
  }
  const std::size_t out_h = (s.height - window) / stride + 1;
  const std::size_t out_w = (s.width - window) / stride + 1;
  const std::size_t planes = s.batch * s.channels;
  std::vector<double> out(planes * out_h * out_w);
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  const auto in = x.data();
  for (std::size_t p = 0; p < planes; ++p) {
    const std::size_t base = p * s.height * s.width;
    for (std::size_t oh = 0; oh < out_h; ++oh) {
      for (std::size_t ow = 0; ow < out_w; ++ow) {
        std::size_t best = base + (oh * stride) * s.width + ow * stride;
        for (std::size_t i = 0; i < window; ++i) {
          for (std::size_t j = 0; j < window; ++j) {
            const std::size_t idx = base + (oh * stride + i) * s.width + ow * stride + j;
            if (in[idx] > in[best]) best = idx;  // strict: first maximum wins
          }
        }
        const std::size_t o = (p * out_h + oh) * out_w + ow;
        out[o] = in[best];
        (*argmax)[o] = best;
      }
    }
  }
  auto xn = x.node();
  return make_result(spatial_shape(s, s.channels, out_h, out_w), std::move(out), "maxpool2d", {x},
                     [xn, argmax](Node& self) {
                       auto& g = xn->ensure_grad();
                       for (std::size_t o = 0; o < argmax->size(); ++o) g[(*argmax)[o]] += self.grad[o];
                     });
}

Tensor nearest_upsample(const Tensor& x, std::size_t factor) {
  if (factor < 1) throw ArgumentError("nearest_upsample: factor must be ≥ 1");
  const Spatial s = spatial_dims(x, "nearest_upsample");
  const std::size_t out_h = s.height * factor, out_w = s.width * factor;
  const std::size_t planes = s.batch * s.channels;
  std::vector<double> out(planes * out_h * out_w);
  const auto in = x.data();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < out_h; ++i)
      for (std::size_t j = 0; j < out_w; ++j)
        out[(p * out_h + i) * out_w + j] = in[(p * s.height + i / factor) * s.width + j / factor];
  auto xn = x.node();
  return make_result(spatial_shape(s, s.channels, out_h, out_w), std::move(out), "nearest_upsample", {x},
                     [xn, s, factor, planes, out_h, out_w](Node& self) {
                       auto& g = xn->ensure_grad();
                       for (std::size_t p = 0; p < planes; ++p)
                         for (std::size_t i = 0; i < out_h; ++i)
                           for (std::size_t j = 0; j < out_w; ++j)
                             g[(p * s.height + i / factor) * s.width + j / factor] +=
                                 self.grad[(p * out_h + i) * out_w + j];
                     });
}

Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean, Tensor& running_var,
                   BatchNormOptions options) {
  require_rank(x, 4, "batchnorm2d");
  const std::size_t batch = x.dim(0), channels = x.dim(1), hw = x.dim(2) * x.dim(3);
  for (const Tensor* t : {&gamma, &beta, static_cast<const Tensor*>(&running_mean), static_cast<const Tensor*>(&running_var)}) {
    if (!t->defined() || t->rank() != 1 || t->dim(0) != channels) {
      throw ShapeError("batchnorm2d: per-channel parameter does not match " + std::to_string(channels) + " channels");
    }
  }
  const std::size_t count = batch * hw;
  const bool train = options.mode == BatchNormMode::train;
  if (train && count < 2) {
    throw ShapeError("batchnorm2d: train mode needs at least 2 values per channel, got " + std::to_string(count));
  }
  const auto in = x.data();
  std::vector<double> mean_c(channels), invstd(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    double mu, var;
    if (train) {
      double acc = 0.0;
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < hw; ++i) acc += in[(b * channels + c) * hw + i];
      mu = acc / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < hw; ++i) {
          const double d = in[(b * channels + c) * hw + i] - mu;
          sq += d * d;
        }
      var = sq / static_cast<double>(count);
      auto rm = running_mean.mutable_data();
      auto rv = running_var.mutable_data();
      const double m = options.momentum;
      rm[c] = (1.0 - m) * rm[c] + m * mu;
      rv[c] = (1.0 - m) * rv[c] + m * (sq / static_cast<double>(count - 1));
    } else {
      mu = running_mean.data()[c];
      var = running_var.data()[c];
    }
    if (var + options.eps <= 0.0) throw NumericError("batchnorm2d: non-positive variance + eps");
    mean_c[c] = mu;
    invstd[c] = 1.0 / std::sqrt(var + options.eps);
  }
  std::vector<double> xhat(x.numel()), out(x.numel());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t i = 0; i < hw; ++i) {
        const std::size_t idx = (b * channels + c) * hw + i;
        xhat[idx] = (in[idx] - mean_c[c]) * invstd[c];
        out[idx] = gamma.data()[c] * xhat[idx] + beta.data()[c];
      }
  auto xn = x.node();
  auto gn = gamma.node();
  auto bn = beta.node();
  auto saved = std::make_shared<std::vector<double>>(std::move(xhat));
  return make_result(x.shape(), std::move(out), "batchnorm2d", {x, gamma, beta},
                     [xn, gn, bn, saved, invstd, batch, channels, hw, count, train](Node& self) {
                       const auto& xh = *saved;
                       const auto& dy = self.grad;
                       for (std::size_t c = 0; c < channels; ++c) {
                         double sum_dy = 0.0, sum_dy_xhat = 0.0;
                         for (std::size_t b = 0; b < batch; ++b)
                           for (std::size_t i = 0; i < hw; ++i) {
                             const std::size_t idx = (b * channels + c) * hw + i;
                             sum_dy += dy[idx];
                             sum_dy_xhat += dy[idx] * xh[idx];
                           }
                         if (wants_grad(gn)) gn->ensure_grad()[c] += sum_dy_xhat;
                         if (wants_grad(bn)) bn->ensure_grad()[c] += sum_dy;
                         if (!wants_grad(xn)) continue;
                         auto& g = xn->ensure_grad();
                         const double gam = gn->value[c];
                         const double n = static_cast<double>(count);
                         for (std::size_t b = 0; b < batch; ++b)
                           for (std::size_t i = 0; i < hw; ++i) {
                             const std::size_t idx = (b * channels + c) * hw + i;
                             if (train) {
                               g[idx] += gam * invstd[c] / n * (n * dy[idx] - sum_dy - xh[idx] * sum_dy_xhat);
                             } else {
                               g[idx] += gam * invstd[c] * dy[idx];
                             }
                           }
                       }
                     });
}

Tensor l2_normalize_rows(const Tensor& x) {
  require_rank(x, 2, "l2_normalize_rows");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  std::vector<double> out(x.numel());
  std::vector<double> norms(rows);
  const auto in = x.data();
  for (std::size_t i = 0; i < rows; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < cols; ++j) sq += in[i * cols + j] * in[i * cols + j];
    const double norm = std::sqrt(sq);
    if (!(norm > 0.0)) throw NumericError("l2_normalize_rows: row " + std::to_string(i) + " has zero norm");
    norms[i] = norm;
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = in[i * cols + j] / norm;
  }
  auto xn = x.node();
  return make_result(x.shape(), std::move(out), "l2_normalize_rows", {x}, [xn, norms, rows, cols](Node& self) {
    auto& g = xn->ensure_grad();
    for (std::size_t i = 0; i < rows; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < cols; ++j) dot += self.value[i * cols + j] * self.grad[i * cols + j];
      for (std::size_t j = 0; j < cols; ++j) {
        const std::size_t idx = i * cols + j;
        g[idx] += (self.grad[idx] - self.value[idx] * dot) / norms[i];
      }
    }
  });
}

Tensor cross_entropy_rows(const Tensor& logits, std::span<const std::size_t> targets, bool exclude_diagonal) {
  require_rank(logits, 2, "cross_entropy_rows");
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  if (targets.size() != rows) {
    throw ShapeError("cross_entropy_rows: " + std::to_string(targets.size()) + " targets for " + std::to_string(rows) +
                     " rows");
  }
  if (exclude_diagonal && rows != cols) throw ShapeError("cross_entropy_rows: diagonal exclusion needs a square matrix");
  const auto in = logits.data();
  auto probs = std::make_shared<std::vector<double>>(rows * cols, 0.0);
  std::vector<double> out(rows);
  std::vector<std::size_t> target_copy(targets.begin(), targets.end());
  for (std::size_t i = 0; i < rows; ++i) {
    const std::size_t t = targets[i];
    if (t >= cols || (exclude_diagonal && t == i)) {
      throw ArgumentError("cross_entropy_rows: invalid target " + std::to_string(t) + " for row " + std::to_string(i));
    }
    const double* row = in.data() + i * cols;
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < cols; ++k) {
      if (exclude_diagonal && k == i) continue;
      peak = std::max(peak, row[k]);
    }
    double denom = 0.0;
    for (std::size_t k = 0; k < cols; ++k) {
      if (exclude_diagonal && k == i) continue;
      const double e = std::exp(row[k] - peak);
      (*probs)[i * cols + k] = e;
      denom += e;
    }
    for (std::size_t k = 0; k < cols; ++k) (*probs)[i * cols + k] /= denom;
    out[i] = (peak + std::log(denom)) - row[t];
  }
  auto ln = logits.node();
  return make_result({rows}, std::move(out), "cross_entropy_rows", {logits},
                     [ln, probs, target_copy, rows, cols](Node& self) {
                       auto& g = ln->ensure_grad();
                       for (std::size_t i = 0; i < rows; ++i) {
                         const double gi = self.grad[i];
                         for (std::size_t k = 0; k < cols; ++k) g[i * cols + k] += gi * (*probs)[i * cols + k];
                         g[i * cols + target_copy[i]] -= gi;
                       }
                     });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets) {
  return mean(cross_entropy_rows(logits, targets));
}

}  // namespace cwhar
