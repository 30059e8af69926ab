#include "dmsa/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dmsa::ops {

namespace {

using Buffer = std::shared_ptr<const std::vector<double>>;

Tensor make(Shape shape, std::vector<double> data, const char* op) {
  check_finite(data, op);
  return Tensor(std::move(shape), std::move(data));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
  if (x.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     shape_str(x.shape()));
  }
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t n = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for shape " +
                     shape_str(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

// Unary elementwise op with derivative expressed through input and output.
template <class Fwd, class Deriv>
Tensor unary(const Tensor& x, const char* name, Fwd fwd, Deriv deriv) {
  std::vector<double> out(x.size());
  auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xd[i]);
  Tensor y = make(x.shape(), std::move(out), name);
  Buffer xb = x.buffer();
  Buffer yb = y.buffer();
  return record_op(y, {&x}, [xb, yb, deriv](std::span<const double> g, GradSink& sink) {
    auto dx = sink.grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * deriv((*xb)[i], (*yb)[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return record_op(make(a.shape(), std::move(out), "add"), {&a, &b},
                   [](std::span<const double> g, GradSink& sink) {
                     for (std::size_t s = 0; s < 2; ++s) {
                       if (!sink.wants(s)) continue;
                       auto d = sink.grad(s);
                       for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
                     }
                   });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return record_op(make(a.shape(), std::move(out), "sub"), {&a, &b},
                   [](std::span<const double> g, GradSink& sink) {
                     if (sink.wants(0)) {
                       auto d = sink.grad(0);
                       for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
                     }
                     if (sink.wants(1)) {
                       auto d = sink.grad(1);
                       for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
                     }
                   });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  Buffer ab = a.buffer(), bb = b.buffer();
  return record_op(make(a.shape(), std::move(out), "mul"), {&a, &b},
                   [ab, bb](std::span<const double> g, GradSink& sink) {
                     if (sink.wants(0)) {
                       auto d = sink.grad(0);
                       for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * (*bb)[i];
                     }
                     if (sink.wants(1)) {
                       auto d = sink.grad(1);
                       for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * (*ab)[i];
                     }
                   });
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "div");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] / b[i];
  Buffer ab = a.buffer(), bb = b.buffer();
  return record_op(make(a.shape(), std::move(out), "div"), {&a, &b},
                   [ab, bb](std::span<const double> g, GradSink& sink) {
                     if (sink.wants(0)) {
                       auto d = sink.grad(0);
                       for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] / (*bb)[i];
                     }
                     if (sink.wants(1)) {
                       auto d = sink.grad(1);
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         double bi = (*bb)[i];
                         d[i] -= g[i] * (*ab)[i] / (bi * bi);
                       }
                     }
                   });
}

Tensor scale(const Tensor& x, double s) {
  return unary(x, "scale", [s](double v) { return v * s; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& x, double c) {
  return unary(x, "add_scalar", [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& x) {
  return unary(x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor exp(const Tensor& x) {
  return unary(x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor square(const Tensor& x) {
  return unary(x, "square", [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor gelu(const Tensor& x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double a = 0.044715;
  return unary(
      x, "gelu",
      [](double v) { return 0.5 * v * (1.0 + std::tanh(c * (v + a * v * v * v))); },
      [](double v, double) {
        double t = std::tanh(c * (v + a * v * v * v));
        return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * c * (1.0 + 3.0 * a * v * v);
      });
}

Tensor add_row_vector(const Tensor& x, const Tensor& b) {
  require_rank(x, 2, "add_row_vector");
  if (b.size() != x.dim(1)) {
    throw ShapeError("add_row_vector: bias of " + shape_str(b.shape()) + " for rows of " +
                     shape_str(x.shape()));
  }
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x[i * n + j] + b[j];
  return record_op(make(x.shape(), std::move(out), "add_row_vector"), {&x, &b},
                   [m, n](std::span<const double> g, GradSink& sink) {
                     if (sink.wants(0)) {
                       auto d = sink.grad(0);
                       for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
                     }
                     if (sink.wants(1)) {
                       auto d = sink.grad(1);
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < n; ++j) d[j] += g[i * n + j];
                     }
                   });
}

Tensor scale_rows(const Tensor& x, const Tensor& s) {
  require_rank(x, 2, "scale_rows");
  if (s.size() != x.dim(0)) {
    throw ShapeError("scale_rows: scales of " + shape_str(s.shape()) + " for " + shape_str(x.shape()));
  }
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x[i * n + j] * s[i];
  Buffer xb = x.buffer(), sb = s.buffer();
  return record_op(make(x.shape(), std::move(out), "scale_rows"), {&x, &s},
                   [xb, sb, m, n](std::span<const double> g, GradSink& sink) {
                     if (sink.wants(0)) {
                       auto d = sink.grad(0);
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < n; ++j) d[i * n + j] += g[i * n + j] * (*sb)[i];
                     }
                     if (sink.wants(1)) {
                       auto d = sink.grad(1);
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < n; ++j) d[i] += g[i * n + j] * (*xb)[i * n + j];
                     }
                   });
}

Tensor add_channel_bias(const Tensor& x, const Tensor& b) {
  if (x.rank() < 1 || b.size() != x.dim(0)) {
    throw ShapeError("add_channel_bias: bias of " + shape_str(b.shape()) + " for " + shape_str(x.shape()));
  }
  const std::size_t c = x.dim(0), plane = x.size() / c;
  std::vector<double> out(x.size());
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t i = 0; i < plane; ++i) out[k * plane + i] = x[k * plane + i] + b[k];
  return record_op(make(x.shape(), std::move(out), "add_channel_bias"), {&x, &b},
                   [c, plane](std::span<const double> g, GradSink& sink) {
                     if (sink.wants(0)) {
                       auto d = sink.grad(0);
                       for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
                     }
                     if (sink.wants(1)) {
                       auto d = sink.grad(1);
                       for (std::size_t k = 0; k < c; ++k)
                         for (std::size_t i = 0; i < plane; ++i) d[k] += g[k * plane + i];
                     }
                   });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return record_op(make({1}, {s}, "sum"), {&x}, [](std::span<const double> g, GradSink& sink) {
    auto d = sink.grad(0);
    for (auto& v : d) v += g[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Tensor sum_last(const Tensor& x) {
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.size() / n;
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  if (out_shape.empty()) out_shape = {1};
  std::vector<double> out(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r] += x[r * n + j];
  return record_op(make(std::move(out_shape), std::move(out), "sum_last"), {&x},
                   [rows, n](std::span<const double> g, GradSink& sink) {
                     auto d = sink.grad(0);
                     for (std::size_t r = 0; r < rows; ++r)
                       for (std::size_t j = 0; j < n; ++j) d[r * n + j] += g[r];
                   });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ad[i * k + p];
      const double* brow = bd + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  Buffer ab = a.buffer(), bb = b.buffer();
  return record_op(make({m, n}, std::move(out), "matmul"), {&a, &b},
                   [ab, bb, m, k, n](std::span<const double> g, GradSink& sink) {
                     if (sink.wants(0)) {
                       auto da = sink.grad(0);
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t p = 0; p < k; ++p) {
                           const double* brow = bb->data() + p * n;
                           const double* grow = g.data() + i * n;
                           double acc = 0.0;
                           for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                           da[i * k + p] += acc;
                         }
                     }
                     if (sink.wants(1)) {
                       auto db = sink.grad(1);
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t p = 0; p < k; ++p) {
                           const double av = (*ab)[i * k + p];
                           const double* grow = g.data() + i * n;
                           double* drow = db.data() + p * n;
                           for (std::size_t j = 0; j < n; ++j) drow[j] += av * grow[j];
                         }
                     }
                   });
}

Tensor transpose(const Tensor& x) {
  require_rank(x, 2, "transpose");
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x[i * n + j];
  return record_op(make({n, m}, std::move(out), "transpose"), {&x},
                   [m, n](std::span<const double> g, GradSink& sink) {
                     auto d = sink.grad(0);
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t j = 0; j < n; ++j) d[i * n + j] += g[j * m + i];
                   });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Tensor y(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()));
  return record_op(y, {&x}, [](std::span<const double> g, GradSink& sink) {
    auto d = sink.grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
  });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  auto s = split_axis(x.shape(), axis, "slice");
  if (length == 0 || start + length > s.n) {
    throw ShapeError("slice: range [" + std::to_string(start) + "," + std::to_string(start + length) +
                     ") outside axis " + std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  std::vector<double> out(s.outer * length * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t t = 0; t < length; ++t)
      std::copy_n(x.data().data() + (o * s.n + start + t) * s.inner, s.inner,
                  out.data() + (o * length + t) * s.inner);
  return record_op(Tensor(std::move(out_shape), std::move(out)), {&x},
                   [s, start, length](std::span<const double> g, GradSink& sink) {
                     auto d = sink.grad(0);
                     for (std::size_t o = 0; o < s.outer; ++o)
                       for (std::size_t t = 0; t < length; ++t)
                         for (std::size_t i = 0; i < s.inner; ++i)
                           d[(o * s.n + start + t) * s.inner + i] += g[(o * length + t) * s.inner + i];
                   });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Shape out_shape = parts.front().shape();
  auto first = split_axis(out_shape, axis, "concat");
  std::size_t total = 0;
  std::vector<std::size_t> lengths;
  for (const auto& p : parts) {
    Shape probe = p.shape();
    if (probe.size() != out_shape.size()) throw ShapeError("concat: rank mismatch");
    probe[axis] = out_shape[axis];
    if (probe != out_shape) {
      throw ShapeError("concat: " + shape_str(p.shape()) + " incompatible with " +
                       shape_str(parts.front().shape()) + " on axis " + std::to_string(axis));
    }
    lengths.push_back(p.shape()[axis]);
    total += p.shape()[axis];
  }
  out_shape[axis] = total;
  const std::size_t outer = first.outer, inner = first.inner;
  std::vector<double> out(outer * total * inner);
  std::size_t offset = 0;
  for (std::size_t q = 0; q < parts.size(); ++q) {
    const std::size_t len = lengths[q];
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(parts[q].data().data() + o * len * inner, len * inner,
                  out.data() + (o * total + offset) * inner);
    offset += len;
  }
  std::vector<const Tensor*> inputs;
  for (const auto& p : parts) inputs.push_back(&p);
  return record_op(Tensor(std::move(out_shape), std::move(out)), inputs,
                   [lengths, outer, inner, total](std::span<const double> g, GradSink& sink) {
                     std::size_t off = 0;
                     for (std::size_t q = 0; q < lengths.size(); ++q) {
                       const std::size_t len = lengths[q];
                       if (sink.wants(q)) {
                         auto d = sink.grad(q);
                         for (std::size_t o = 0; o < outer; ++o)
                           for (std::size_t i = 0; i < len * inner; ++i)
                             d[o * len * inner + i] += g[(o * total + off) * inner + i];
                       }
                       off += len;
                     }
                   });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  auto s = split_axis(x.shape(), axis, "softmax");
  std::vector<double> out(x.size());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.n * s.inner + i;
      double mx = x[base];
      for (std::size_t k = 1; k < s.n; ++k) mx = std::max(mx, x[base + k * s.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < s.n; ++k) {
        double e = std::exp(x[base + k * s.inner] - mx);
        out[base + k * s.inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < s.n; ++k) out[base + k * s.inner] /= z;
    }
  Tensor y = make(x.shape(), std::move(out), "softmax");
  Buffer yb = y.buffer();
  return record_op(y, {&x}, [yb, s](std::span<const double> g, GradSink& sink) {
    auto d = sink.grad(0);
    const auto& yv = *yb;
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.n * s.inner + i;
        double dot = 0.0;
        for (std::size_t k = 0; k < s.n; ++k) dot += g[base + k * s.inner] * yv[base + k * s.inner];
        for (std::size_t k = 0; k < s.n; ++k) {
          const std::size_t idx = base + k * s.inner;
          d[idx] += yv[idx] * (g[idx] - dot);
        }
      }
  });
}

Tensor normalize(const Tensor& x, std::size_t axis) {
  auto s = split_axis(x.shape(), axis, "normalize");
  std::vector<double> out(x.size());
  std::vector<double> sums(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.n * s.inner + i;
      double z = 0.0;
      for (std::size_t k = 0; k < s.n; ++k) z += x[base + k * s.inner];
      sums[o * s.inner + i] = z;
      for (std::size_t k = 0; k < s.n; ++k) out[base + k * s.inner] = x[base + k * s.inner] / z;
    }
  Tensor y = make(x.shape(), std::move(out), "normalize");
  Buffer yb = y.buffer();
  return record_op(y, {&x}, [yb, s, sums](std::span<const double> g, GradSink& sink) {
    auto d = sink.grad(0);
    const auto& yv = *yb;
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.n * s.inner + i;
        const double z = sums[o * s.inner + i];
        double dot = 0.0;
        for (std::size_t k = 0; k < s.n; ++k) dot += g[base + k * s.inner] * yv[base + k * s.inner];
        for (std::size_t k = 0; k < s.n; ++k) {
          const std::size_t idx = base + k * s.inner;
          d[idx] += (g[idx] - dot) / z;
        }
      }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_rank(x, 2, "layer_norm");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (gamma.size() != n || beta.size() != n) {
    throw ShapeError("layer_norm: affine parameters " + shape_str(gamma.shape()) + "/" +
                     shape_str(beta.shape()) + " for rows of " + shape_str(x.shape()));
  }
  std::vector<double> out(x.size());
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto rstd = std::make_shared<std::vector<double>>(m);
  for (std::size_t i = 0; i < m; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += x[i * n + j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      double c = x[i * n + j] - mu;
      var += c * c;
    }
    var /= static_cast<double>(n);
    const double r = 1.0 / std::sqrt(var + eps);
    (*rstd)[i] = r;
    for (std::size_t j = 0; j < n; ++j) {
      double h = (x[i * n + j] - mu) * r;
      (*xhat)[i * n + j] = h;
      out[i * n + j] = h * gamma[j] + beta[j];
    }
  }
  Buffer gb = gamma.buffer();
  return record_op(
      make(x.shape(), std::move(out), "layer_norm"), {&x, &gamma, &beta},
      [xhat, rstd, gb, m, n](std::span<const double> g, GradSink& sink) {
        if (sink.wants(1)) {
          auto dg = sink.grad(1);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) dg[j] += g[i * n + j] * (*xhat)[i * n + j];
        }
        if (sink.wants(2)) {
          auto db = sink.grad(2);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) db[j] += g[i * n + j];
        }
        if (sink.wants(0)) {
          auto dx = sink.grad(0);
          const double inv_n = 1.0 / static_cast<double>(n);
          for (std::size_t i = 0; i < m; ++i) {
            double mean_dh = 0.0, mean_dh_h = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              double dh = g[i * n + j] * (*gb)[j];
              mean_dh += dh;
              mean_dh_h += dh * (*xhat)[i * n + j];
            }
            mean_dh *= inv_n;
            mean_dh_h *= inv_n;
            for (std::size_t j = 0; j < n; ++j) {
              double dh = g[i * n + j] * (*gb)[j];
              dx[i * n + j] += (*rstd)[i] * (dh - mean_dh - (*xhat)[i * n + j] * mean_dh_h);
            }
          }
        }
      });
}

Tensor pick(const Tensor& x, std::size_t flat_index) {
  if (flat_index >= x.size()) {
    throw ShapeError("pick: index " + std::to_string(flat_index) + " outside " + shape_str(x.shape()));
  }
  return record_op(Tensor({1}, {x[flat_index]}), {&x},
                   [flat_index](std::span<const double> g, GradSink& sink) {
                     sink.grad(0)[flat_index] += g[0];
                   });
}

Tensor top2_margin(const Tensor& x) {
  if (x.rank() < 1 || x.dim(0) < 2) {
    throw ShapeError("top2_margin: need at least two entries along axis 0, got " + shape_str(x.shape()));
  }
  const std::size_t c = x.dim(0), plane = x.size() / c;
  Shape out_shape(x.shape().begin() + 1, x.shape().end());
  if (out_shape.empty()) out_shape = {1};
  std::vector<double> out(plane);
  std::vector<std::size_t> first(plane), second(plane);
  for (std::size_t i = 0; i < plane; ++i) {
    std::size_t a = 0;
    for (std::size_t k = 1; k < c; ++k)
      if (x[k * plane + i] > x[a * plane + i]) a = k;
    std::size_t b = (a == 0) ? 1 : 0;
    for (std::size_t k = 0; k < c; ++k)
      if (k != a && x[k * plane + i] > x[b * plane + i]) b = k;
    first[i] = a;
    second[i] = b;
    out[i] = x[a * plane + i] - x[b * plane + i];
  }
  return record_op(make(std::move(out_shape), std::move(out), "top2_margin"), {&x},
                   [first, second, plane](std::span<const double> g, GradSink& sink) {
                     auto d = sink.grad(0);
                     for (std::size_t i = 0; i < plane; ++i) {
                       d[first[i] * plane + i] += g[i];
                       d[second[i] * plane + i] -= g[i];
                     }
                   });
}

namespace {

struct Tap {
  std::size_t i0, i1;
  double w1;  // weight of i1; i0 gets 1 - w1
};

std::vector<Tap> interpolation_taps(std::size_t in, std::size_t out) {
  std::vector<Tap> taps(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    auto i0 = static_cast<std::size_t>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    std::size_t i1 = std::min(i0 + 1, in - 1);
    double w = src - static_cast<double>(i0);
    if (i1 == i0) w = 0.0;
    taps[o] = {i0, i1, w};
  }
  return taps;
}

}  // namespace

Tensor bilinear_upsample(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  require_rank(x, 3, "bilinear_upsample");
  if (out_h == 0 || out_w == 0) throw ShapeError("bilinear_upsample: output extents must be positive");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  auto ty = interpolation_taps(h, out_h);
  auto tx = interpolation_taps(w, out_w);
  std::vector<double> out(c * out_h * out_w);
  for (std::size_t k = 0; k < c; ++k) {
    const double* src = x.data().data() + k * h * w;
    double* dst = out.data() + k * out_h * out_w;
    for (std::size_t y = 0; y < out_h; ++y) {
      const auto& a = ty[y];
      for (std::size_t xo = 0; xo < out_w; ++xo) {
        const auto& b = tx[xo];
        double top = src[a.i0 * w + b.i0] * (1.0 - b.w1) + src[a.i0 * w + b.i1] * b.w1;
        double bot = src[a.i1 * w + b.i0] * (1.0 - b.w1) + src[a.i1 * w + b.i1] * b.w1;
        dst[y * out_w + xo] = top * (1.0 - a.w1) + bot * a.w1;
      }
    }
  }
  return record_op(make({c, out_h, out_w}, std::move(out), "bilinear_upsample"), {&x},
                   [ty, tx, c, h, w, out_h, out_w](std::span<const double> g, GradSink& sink) {
                     auto d = sink.grad(0);
                     for (std::size_t k = 0; k < c; ++k) {
                       double* dsrc = d.data() + k * h * w;
                       const double* gd = g.data() + k * out_h * out_w;
                       for (std::size_t y = 0; y < out_h; ++y) {
                         const auto& a = ty[y];
                         for (std::size_t xo = 0; xo < out_w; ++xo) {
                           const auto& b = tx[xo];
                           const double gv = gd[y * out_w + xo];
                           dsrc[a.i0 * w + b.i0] += gv * (1.0 - a.w1) * (1.0 - b.w1);
                           dsrc[a.i0 * w + b.i1] += gv * (1.0 - a.w1) * b.w1;
                           dsrc[a.i1 * w + b.i0] += gv * a.w1 * (1.0 - b.w1);
                           dsrc[a.i1 * w + b.i1] += gv * a.w1 * b.w1;
                         }
                       }
                     }
                   });
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank(x, 3, "global_avg_pool");
  const std::size_t c = x.dim(0), plane = x.dim(1) * x.dim(2);
  std::vector<double> out(c, 0.0);
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t i = 0; i < plane; ++i) out[k] += x[k * plane + i];
    out[k] /= static_cast<double>(plane);
  }
  return record_op(make({c}, std::move(out), "global_avg_pool"), {&x},
                   [c, plane](std::span<const double> g, GradSink& sink) {
                     auto d = sink.grad(0);
                     const double inv = 1.0 / static_cast<double>(plane);
                     for (std::size_t k = 0; k < c; ++k)
                       for (std::size_t i = 0; i < plane; ++i) d[k * plane + i] += g[k] * inv;
                   });
}

Tensor broadcast_spatial(const Tensor& v, std::size_t h, std::size_t w) {
  const std::size_t c = v.size();
  std::vector<double> out(c * h * w);
  for (std::size_t k = 0; k < c; ++k) std::fill_n(out.data() + k * h * w, h * w, v[k]);
  return record_op(Tensor({c, h, w}, std::move(out)), {&v},
                   [c, h, w](std::span<const double> g, GradSink& sink) {
                     auto d = sink.grad(0);
                     for (std::size_t k = 0; k < c; ++k)
                       for (std::size_t i = 0; i < h * w; ++i) d[k] += g[k * h * w + i];
                   });
}

}  // namespace dmsa::ops
