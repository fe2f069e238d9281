#include "hydroode/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>

#include "hydroode/gradcheck.hpp"

namespace hode {

namespace {

std::atomic<double> g_tanh_backward_scale{1.0};

using detail::Node;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

const std::vector<double>& in_value(const Node& self, std::size_t i) { return self.inputs[i]->value; }

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " + shape_string(b));
}

void check_axis(const char* op, const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for shape " +
                         shape_string(x.shape()));
  }
}

// Splits a shape around `axis` into (outer, extent, inner) so that a flat index is
// (o * extent + a) * inner + i.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

template <class F, class DF>
Tensor unary(const Tensor& x, F f, DF df) {
  std::vector<double> out(x.size());
  const auto& xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  return Tensor::make_result(x.shape(), std::move(out), {x},
                             [df](const Node& self, std::span<const double> g, std::span<std::vector<double>*> gi) {
                               const auto& xv = in_value(self, 0);
                               auto& dx = *gi[0];
                               for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * df(xv[i], self.value[i]);
                             });
}

enum class BinaryKind { kAdd, kSub, kMul };

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind, const char* name) {
  const bool same = a.shape() == b.shape();
  const bool a_scalar = !same && a.is_scalar();
  const bool b_scalar = !same && b.is_scalar();
  if (!same && !a_scalar && !b_scalar) shape_mismatch(name, a.shape(), b.shape());
  const Shape out_shape = a_scalar ? b.shape() : a.shape();
  const std::size_t n = shape_numel(out_shape);
  const auto& av = a.data();
  const auto& bv = b.data();
  auto A = [&](std::size_t i) { return a_scalar ? av[0] : av[i]; };
  auto B = [&](std::size_t i) { return b_scalar ? bv[0] : bv[i]; };
  std::vector<double> out(n);
  switch (kind) {
    case BinaryKind::kAdd:
      for (std::size_t i = 0; i < n; ++i) out[i] = A(i) + B(i);
      break;
    case BinaryKind::kSub:
      for (std::size_t i = 0; i < n; ++i) out[i] = A(i) - B(i);
      break;
    case BinaryKind::kMul:
      for (std::size_t i = 0; i < n; ++i) out[i] = A(i) * B(i);
      break;
  }
  return Tensor::make_result(
      out_shape, std::move(out), {a, b},
      [kind, a_scalar, b_scalar](const Node& self, std::span<const double> g, std::span<std::vector<double>*> gi) {
        const auto& av = in_value(self, 0);
        const auto& bv = in_value(self, 1);
        const std::size_t n = g.size();
        if (auto* da = gi[0]) {
          for (std::size_t i = 0; i < n; ++i) {
            double d = g[i];
            if (kind == BinaryKind::kMul) d *= b_scalar ? bv[0] : bv[i];
            (*da)[a_scalar ? 0 : i] += d;
          }
        }
        if (auto* db = gi[1]) {
          for (std::size_t i = 0; i < n; ++i) {
            double d = g[i];
            if (kind == BinaryKind::kSub) d = -d;
            if (kind == BinaryKind::kMul) d *= a_scalar ? av[0] : av[i];
            (*db)[b_scalar ? 0 : i] += d;
          }
        }
      });
}

std::vector<std::size_t> normalized_axes(const char* op, const Tensor& x, std::vector<std::size_t> axes) {
  if (axes.empty()) throw DimensionError(std::string(op) + ": empty axis list");
  std::sort(axes.begin(), axes.end());
  for (std::size_t i = 0; i < axes.size(); ++i) {
    check_axis(op, x, axes[i]);
    if (i && axes[i] == axes[i - 1]) throw DimensionError(std::string(op) + ": repeated axis");
  }
  return axes;
}

Tensor reduce_sum(const Tensor& x, const std::vector<std::size_t>& axes_in, bool average, const char* op) {
  const auto axes = normalized_axes(op, x, axes_in);
  const Shape& s = x.shape();
  Shape out_shape;
  std::size_t count = 1;
  for (std::size_t d = 0; d < s.size(); ++d) {
    if (std::binary_search(axes.begin(), axes.end(), d)) {
      count *= s[d];
    } else {
      out_shape.push_back(s[d]);
    }
  }
  // Map every input position to its output slot.
  std::vector<std::size_t> target(x.size());
  {
    std::vector<std::size_t> idx(s.size(), 0);
    for (std::size_t flat = 0; flat < x.size(); ++flat) {
      std::size_t o = 0;
      for (std::size_t d = 0; d < s.size(); ++d) {
        if (!std::binary_search(axes.begin(), axes.end(), d)) o = o * s[d] + idx[d];
      }
      target[flat] = o;
      for (std::size_t d = s.size(); d-- > 0;) {
        if (++idx[d] < s[d]) break;
        idx[d] = 0;
      }
    }
  }
  const double factor = average ? 1.0 / static_cast<double>(count) : 1.0;
  std::vector<double> out(shape_numel(out_shape), 0.0);
  const auto& xv = x.data();
  for (std::size_t i = 0; i < xv.size(); ++i) out[target[i]] += xv[i];
  if (average) {
    for (auto& v : out) v *= factor;
  }
  return Tensor::make_result(std::move(out_shape), std::move(out), {x},
                             [target = std::move(target), factor](const Node&, std::span<const double> g,
                                                                  std::span<std::vector<double>*> gi) {
                               auto& dx = *gi[0];
                               for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += factor * g[target[i]];
                             });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) shape_mismatch("matmul", a.shape(), b.shape());
  const std::size_t m = a.dim(a.rank() - 2);
  const std::size_t k = a.dim(a.rank() - 1);
  const std::size_t kb = b.dim(b.rank() - 2);
  const std::size_t p = b.dim(b.rank() - 1);
  if (k != kb) shape_mismatch("matmul", a.shape(), b.shape());

  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back(p);

  if (b.rank() == 2) {
    // Shared right operand: fold a's batch into rows.
    const std::size_t rows = a.size() / k;
    std::vector<double> out(rows * p);
    MutMap(out.data(), rows, p).noalias() = ConstMap(a.data().data(), rows, k) * ConstMap(b.data().data(), k, p);
    return Tensor::make_result(
        std::move(out_shape), std::move(out), {a, b},
        [rows, k, p](const Node& self, std::span<const double> g, std::span<std::vector<double>*> gi) {
          ConstMap G(g.data(), rows, p);
          if (auto* da = gi[0]) MutMap(da->data(), rows, k).noalias() += G * ConstMap(in_value(self, 1).data(), k, p).transpose();
          if (auto* db = gi[1]) MutMap(db->data(), k, p).noalias() += ConstMap(in_value(self, 0).data(), rows, k).transpose() * G;
        });
  }

  if (b.rank() != a.rank() || !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin())) {
    shape_mismatch("matmul", a.shape(), b.shape());
  }
  const std::size_t batch = a.size() / (m * k);
  std::vector<double> out(batch * m * p);
  for (std::size_t i = 0; i < batch; ++i) {
    MutMap(out.data() + i * m * p, m, p).noalias() =
        ConstMap(a.data().data() + i * m * k, m, k) * ConstMap(b.data().data() + i * k * p, k, p);
  }
  return Tensor::make_result(
      std::move(out_shape), std::move(out), {a, b},
      [batch, m, k, p](const Node& self, std::span<const double> g, std::span<std::vector<double>*> gi) {
        const auto& av = in_value(self, 0);
        const auto& bv = in_value(self, 1);
        for (std::size_t i = 0; i < batch; ++i) {
          ConstMap G(g.data() + i * m * p, m, p);
          if (auto* da = gi[0]) MutMap(da->data() + i * m * k, m, k).noalias() += G * ConstMap(bv.data() + i * k * p, k, p).transpose();
          if (auto* db = gi[1]) MutMap(db->data() + i * k * p, k, p).noalias() += ConstMap(av.data() + i * m * k, m, k).transpose() * G;
        }
      });
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kAdd, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kSub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kMul, "mul"); }

Tensor scale(const Tensor& x, double c) {
  return unary(x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

Tensor add_scalar(const Tensor& x, double c) {
  return unary(x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor tanh(const Tensor& x) {
  return unary(
      x, [](double v) { return std::tanh(v); },
      [scale = g_tanh_backward_scale.load(std::memory_order_relaxed)](double, double y) { return scale * (1.0 - y * y); });
}

Tensor relu(const Tensor& x) {
  return unary(x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor exp(const Tensor& x) {
  return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor square(const Tensor& x) {
  return unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
Tensor operator*(double c, const Tensor& x) { return scale(x, c); }
Tensor operator-(const Tensor& x) { return neg(x); }

Tensor softmax_lastdim(const Tensor& x) {
  if (x.rank() == 0) throw DimensionError("softmax_lastdim on a rank-0 tensor");
  const std::size_t n = x.dim(x.rank() - 1);
  const std::size_t rows = x.size() / n;
  const auto& xv = x.data();
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * n;
    double* o = out.data() + r * n;
    const double mx = *std::max_element(in, in + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      o[j] = std::exp(in[j] - mx);
      z += o[j];
    }
    for (std::size_t j = 0; j < n; ++j) o[j] /= z;
  }
  return Tensor::make_result(x.shape(), std::move(out), {x},
                             [rows, n](const Node& self, std::span<const double> g, std::span<std::vector<double>*> gi) {
                               auto& dx = *gi[0];
                               for (std::size_t r = 0; r < rows; ++r) {
                                 const double* y = self.value.data() + r * n;
                                 const double* gr = g.data() + r * n;
                                 double dot = 0.0;
                                 for (std::size_t j = 0; j < n; ++j) dot += gr[j] * y[j];
                                 for (std::size_t j = 0; j < n; ++j) dx[r * n + j] += y[j] * (gr[j] - dot);
                               }
                             });
}

Tensor layer_norm_lastdim(const Tensor& x, double eps) {
  if (x.rank() == 0) throw DimensionError("layer_norm_lastdim on a rank-0 tensor");
  const std::size_t n = x.dim(x.rank() - 1);
  const std::size_t rows = x.size() / n;
  const auto& xv = x.data();
  std::vector<double> out(x.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += in[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = (in[j] - mu) * inv_std[r];
  }
  return Tensor::make_result(
      x.shape(), std::move(out), {x},
      [rows, n, inv_std = std::move(inv_std)](const Node& self, std::span<const double> g,
                                              std::span<std::vector<double>*> gi) {
        auto& dx = *gi[0];
        const double nn = static_cast<double>(n);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* y = self.value.data() + r * n;
          const double* gr = g.data() + r * n;
          double gm = 0.0;
          double gy = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            gm += gr[j];
            gy += gr[j] * y[j];
          }
          gm /= nn;
          gy /= nn;
          for (std::size_t j = 0; j < n; ++j) dx[r * n + j] += inv_std[r] * (gr[j] - gm - y[j] * gy);
        }
      });
}

Tensor sum(const Tensor& x) {
  std::vector<std::size_t> axes(x.rank());
  std::iota(axes.begin(), axes.end(), 0);
  if (axes.empty()) return x;
  return reduce_sum(x, axes, false, "sum");
}

Tensor mean(const Tensor& x) {
  std::vector<std::size_t> axes(x.rank());
  std::iota(axes.begin(), axes.end(), 0);
  if (axes.empty()) return x;
  return reduce_sum(x, axes, true, "mean");
}

Tensor sum(const Tensor& x, const std::vector<std::size_t>& axes) { return reduce_sum(x, axes, false, "sum"); }
Tensor mean(const Tensor& x, const std::vector<std::size_t>& axes) { return reduce_sum(x, axes, true, "mean"); }

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  check_axis("concat", parts.front(), axis);
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> extents;
  for (const auto& p : parts) {
    if (p.rank() != first.size()) shape_mismatch("concat", first, p.shape());
    for (std::size_t d = 0; d < first.size(); ++d) {
      if (d != axis && p.dim(d) != first[d]) shape_mismatch("concat", first, p.shape());
    }
    extents.push_back(p.dim(axis));
    out_shape[axis] += p.dim(axis);
  }
  const AxisSplit split = split_at(out_shape, axis);
  std::vector<double> out(shape_numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto& pv = parts[i].data();
    const std::size_t block = extents[i] * split.inner;
    for (std::size_t o = 0; o < split.outer; ++o) {
      std::copy_n(pv.data() + o * block, block, out.data() + (o * split.extent + offset) * split.inner);
    }
    offset += extents[i];
  }
  return Tensor::make_result(std::move(out_shape), std::move(out), parts,
                             [split, extents](const Node&, std::span<const double> g, std::span<std::vector<double>*> gi) {
                               std::size_t offset = 0;
                               for (std::size_t i = 0; i < gi.size(); ++i) {
                                 const std::size_t block = extents[i] * split.inner;
                                 if (auto* d = gi[i]) {
                                   for (std::size_t o = 0; o < split.outer; ++o) {
                                     const double* src = g.data() + (o * split.extent + offset) * split.inner;
                                     double* dst = d->data() + o * block;
                                     for (std::size_t j = 0; j < block; ++j) dst[j] += src[j];
                                   }
                                 }
                                 offset += extents[i];
                               }
                             });
}

Tensor stack(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("stack of zero tensors");
  const Shape& first = parts.front().shape();
  const std::size_t block = parts.front().size();
  std::vector<double> out;
  out.reserve(block * parts.size());
  for (const auto& p : parts) {
    if (p.shape() != first) shape_mismatch("stack", first, p.shape());
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  Shape out_shape{parts.size()};
  out_shape.insert(out_shape.end(), first.begin(), first.end());
  return Tensor::make_result(std::move(out_shape), std::move(out), parts,
                             [block](const Node&, std::span<const double> g, std::span<std::vector<double>*> gi) {
                               for (std::size_t i = 0; i < gi.size(); ++i) {
                                 if (auto* d = gi[i]) {
                                   for (std::size_t j = 0; j < block; ++j) (*d)[j] += g[i * block + j];
                                 }
                               }
                             });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  check_axis("slice", x, axis);
  if (length == 0 || start + length > x.dim(axis)) {
    throw DimensionError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) + ") of axis " +
                         std::to_string(axis) + " out of range for shape " + shape_string(x.shape()));
  }
  const AxisSplit split = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  const std::size_t block = length * split.inner;
  std::vector<double> out(split.outer * block);
  const auto& xv = x.data();
  for (std::size_t o = 0; o < split.outer; ++o) {
    std::copy_n(xv.data() + (o * split.extent + start) * split.inner, block, out.data() + o * block);
  }
  return Tensor::make_result(std::move(out_shape), std::move(out), {x},
                             [split, start, block](const Node&, std::span<const double> g,
                                                   std::span<std::vector<double>*> gi) {
                               auto& dx = *gi[0];
                               for (std::size_t o = 0; o < split.outer; ++o) {
                                 double* dst = dx.data() + (o * split.extent + start) * split.inner;
                                 const double* src = g.data() + o * block;
                                 for (std::size_t j = 0; j < block; ++j) dst[j] += src[j];
                               }
                             });
}

Tensor swap_axes(const Tensor& x, std::size_t a, std::size_t b) {
  check_axis("swap_axes", x, a);
  check_axis("swap_axes", x, b);
  if (a == b) return x;
  const Shape& s = x.shape();
  Shape out_shape = s;
  std::swap(out_shape[a], out_shape[b]);
  // perm[i] = output flat index of input flat index i.
  std::vector<std::size_t> out_stride(s.size(), 1);
  for (std::size_t d = s.size() - 1; d-- > 0;) out_stride[d] = out_stride[d + 1] * out_shape[d + 1];
  std::vector<std::size_t> perm(x.size());
  std::vector<std::size_t> idx(s.size(), 0);
  for (std::size_t flat = 0; flat < x.size(); ++flat) {
    std::size_t o = 0;
    for (std::size_t d = 0; d < s.size(); ++d) {
      const std::size_t od = d == a ? b : (d == b ? a : d);
      o += idx[d] * out_stride[od];
    }
    perm[flat] = o;
    for (std::size_t d = s.size(); d-- > 0;) {
      if (++idx[d] < s[d]) break;
      idx[d] = 0;
    }
  }
  std::vector<double> out(x.size());
  const auto& xv = x.data();
  for (std::size_t i = 0; i < xv.size(); ++i) out[perm[i]] = xv[i];
  return Tensor::make_result(std::move(out_shape), std::move(out), {x},
                             [perm = std::move(perm)](const Node&, std::span<const double> g,
                                                      std::span<std::vector<double>*> gi) {
                               auto& dx = *gi[0];
                               for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[perm[i]];
                             });
}

Tensor transpose_last2(const Tensor& x) {
  if (x.rank() < 2) throw DimensionError("transpose_last2 needs rank >= 2, got shape " + shape_string(x.shape()));
  return swap_axes(x, x.rank() - 2, x.rank() - 1);
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.size()) {
    throw DimensionError("reshape " + shape_string(x.shape()) + " -> " + shape_string(shape) +
                         " changes the element count");
  }
  std::vector<double> out = x.data();
  return Tensor::make_result(std::move(shape), std::move(out), {x},
                             [](const Node&, std::span<const double> g, std::span<std::vector<double>*> gi) {
                               auto& dx = *gi[0];
                               for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[i];
                             });
}

Tensor tile_leading(const Tensor& x, const Shape& lead) {
  const std::size_t reps = shape_numel(lead);
  if (reps == 0) throw DimensionError("tile_leading with a zero dimension");
  Shape out_shape = lead;
  out_shape.insert(out_shape.end(), x.shape().begin(), x.shape().end());
  const std::size_t block = x.size();
  std::vector<double> out;
  out.reserve(reps * block);
  for (std::size_t r = 0; r < reps; ++r) out.insert(out.end(), x.data().begin(), x.data().end());
  return Tensor::make_result(std::move(out_shape), std::move(out), {x},
                             [reps, block](const Node&, std::span<const double> g, std::span<std::vector<double>*> gi) {
                               auto& dx = *gi[0];
                               for (std::size_t r = 0; r < reps; ++r) {
                                 for (std::size_t j = 0; j < block; ++j) dx[j] += g[r * block + j];
                               }
                             });
}

namespace testing {

void set_tanh_backward_scale(double factor) { g_tanh_backward_scale.store(factor, std::memory_order_relaxed); }

}  // namespace testing

}  // namespace hode
