#include <algorithm>
#include <cmath>
#include <numeric>

#include "dsmoe/tensor.hpp"

namespace dsmoe {

namespace {

// Number of leading repetitions when `b` is expanded over `a`.
std::size_t expansion(const Tensor& a, const Tensor& b, const char* op) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sb.size() <= sa.size() && std::equal(sb.begin(), sb.end(), sa.end() - static_cast<long>(sb.size()))) {
    return a.numel() / b.numel();
  }
  throw ShapeError(std::string(op) + ": shape " + shape_str(sb) + " cannot be expanded to " + shape_str(sa));
}

std::size_t last_dim(const Tensor& x, const char* op) {
  if (x.rank() == 0) throw ShapeError(std::string(op) + ": rank-0 input");
  return x.shape().back();
}

template <typename F, typename G>
Tensor unary(const char* name, const Tensor& x, F fwd, G deriv) {
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  return Tensor::from_op(name, x.shape(), std::move(out), {x},
                         [x, deriv](std::span<const double> g, std::span<std::vector<double>*> gi) {
                           auto xv = x.values();
                           auto& gx = *gi[0];
                           for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(xv[i]);
                         });
}

double stable_sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  const std::size_t reps = expansion(a, b, "add");
  const std::size_t inner = b.numel();
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(av.begin(), av.end());
  for (std::size_t r = 0; r < reps; ++r)
    for (std::size_t i = 0; i < inner; ++i) out[r * inner + i] += bv[i];
  return Tensor::from_op("add", a.shape(), std::move(out), {a, b},
                         [reps, inner](std::span<const double> g, std::span<std::vector<double>*> gi) {
                           if (gi[0])
                             for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i];
                           if (gi[1])
                             for (std::size_t r = 0; r < reps; ++r)
                               for (std::size_t i = 0; i < inner; ++i) (*gi[1])[i] += g[r * inner + i];
                         });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const std::size_t reps = expansion(a, b, "sub");
  const std::size_t inner = b.numel();
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(av.begin(), av.end());
  for (std::size_t r = 0; r < reps; ++r)
    for (std::size_t i = 0; i < inner; ++i) out[r * inner + i] -= bv[i];
  return Tensor::from_op("sub", a.shape(), std::move(out), {a, b},
                         [reps, inner](std::span<const double> g, std::span<std::vector<double>*> gi) {
                           if (gi[0])
                             for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i];
                           if (gi[1])
                             for (std::size_t r = 0; r < reps; ++r)
                               for (std::size_t i = 0; i < inner; ++i) (*gi[1])[i] -= g[r * inner + i];
                         });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const std::size_t reps = expansion(a, b, "mul");
  const std::size_t inner = b.numel();
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t r = 0; r < reps; ++r)
    for (std::size_t i = 0; i < inner; ++i) out[r * inner + i] = av[r * inner + i] * bv[i];
  return Tensor::from_op("mul", a.shape(), std::move(out), {a, b},
                         [a, b, reps, inner](std::span<const double> g, std::span<std::vector<double>*> gi) {
                           auto av = a.values();
                           auto bv = b.values();
                           if (gi[0])
                             for (std::size_t r = 0; r < reps; ++r)
                               for (std::size_t i = 0; i < inner; ++i)
                                 (*gi[0])[r * inner + i] += g[r * inner + i] * bv[i];
                           if (gi[1])
                             for (std::size_t r = 0; r < reps; ++r)
                               for (std::size_t i = 0; i < inner; ++i)
                                 (*gi[1])[i] += g[r * inner + i] * av[r * inner + i];
                         });
}

Tensor scale(const Tensor& a, double factor) {
  return unary("scale", a, [factor](double v) { return v * factor; },
               [factor](double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary("add_scalar", a, [value](double v) { return v + value; }, [](double) { return 1.0; });
}

Tensor reciprocal(const Tensor& a) {
  return unary("reciprocal", a, [](double v) { return 1.0 / v; }, [](double v) { return -1.0 / (v * v); });
}

Tensor square(const Tensor& a) {
  return unary("square", a, [](double v) { return v * v; }, [](double v) { return 2.0 * v; });
}

Tensor sigmoid(const Tensor& x) {
  return unary("sigmoid", x, stable_sigmoid, [](double v) {
    const double s = stable_sigmoid(v);
    return s * (1.0 - s);
  });
}

Tensor silu(const Tensor& x) {
  return unary("silu", x, [](double v) { return v * stable_sigmoid(v); },
               [](double v) {
                 const double s = stable_sigmoid(v);
                 return s * (1.0 + v * (1.0 - s));
               });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t ra = a.rank();
  const std::size_t rb = b.rank();
  const bool ok_rank = (ra == 2 && rb == 2) || (ra == 3 && (rb == 2 || rb == 3));
  if (!ok_rank || a.shape()[ra - 1] != b.shape()[rb - 2] || (rb == 3 && a.dim(0) != b.dim(0))) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t batch = ra == 3 ? a.dim(0) : 1;
  const std::size_t m = a.shape()[ra - 2];
  const std::size_t k = a.shape()[ra - 1];
  const std::size_t n = b.shape()[rb - 1];
  const bool b_batched = rb == 3;

  Shape out_shape = ra == 3 ? Shape{batch, m, n} : Shape{m, n};
  std::vector<double> out(batch * m * n, 0.0);
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t p = 0; p < batch; ++p) {
    const double* A = av.data() + p * m * k;
    const double* B = bv.data() + (b_batched ? p * k * n : 0);
    double* C = out.data() + p * m * n;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t l = 0; l < k; ++l) {
        const double aik = A[i * k + l];
        const double* brow = B + l * n;
        double* crow = C + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
      }
  }
  return Tensor::from_op(
      "matmul", std::move(out_shape), std::move(out), {a, b},
      [a, b, batch, m, k, n, b_batched](std::span<const double> g, std::span<std::vector<double>*> gi) {
        auto av = a.values();
        auto bv = b.values();
        for (std::size_t p = 0; p < batch; ++p) {
          const double* A = av.data() + p * m * k;
          const double* B = bv.data() + (b_batched ? p * k * n : 0);
          const double* G = g.data() + p * m * n;
          if (gi[0]) {
            double* GA = gi[0]->data() + p * m * k;
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t l = 0; l < k; ++l) {
                double acc = 0.0;
                for (std::size_t j = 0; j < n; ++j) acc += G[i * n + j] * B[l * n + j];
                GA[i * k + l] += acc;
              }
          }
          if (gi[1]) {
            double* GB = gi[1]->data() + (b_batched ? p * k * n : 0);
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t l = 0; l < k; ++l) {
                const double aik = A[i * k + l];
                for (std::size_t j = 0; j < n; ++j) GB[l * n + j] += aik * G[i * n + j];
              }
          }
        }
      });
}

Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes) {
  const Shape& in = a.shape();
  const std::size_t r = in.size();
  std::vector<std::size_t> check(axes);
  std::sort(check.begin(), check.end());
  for (std::size_t i = 0; i < check.size(); ++i) {
    if (check.size() != r || check[i] != i) throw ShapeError("permute: invalid axis order for " + shape_str(in));
  }
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * in[i];
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = in[axes[i]];

  // src[i] = flat input index feeding flat output index i.
  const std::size_t total = a.numel();
  auto src = std::make_shared<std::vector<std::size_t>>(total);
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t o = 0; o < total; ++o) {
    std::size_t off = 0;
    for (std::size_t d = 0; d < r; ++d) off += idx[d] * in_stride[axes[d]];
    (*src)[o] = off;
    for (std::size_t d = r; d-- > 0;) {
      if (++idx[d] < out_shape[d]) break;
      idx[d] = 0;
    }
  }
  auto av = a.values();
  std::vector<double> out(total);
  for (std::size_t o = 0; o < total; ++o) out[o] = av[(*src)[o]];
  return Tensor::from_op("permute", std::move(out_shape), std::move(out), {a},
                         [src](std::span<const double> g, std::span<std::vector<double>*> gi) {
                           auto& ga = *gi[0];
                           for (std::size_t o = 0; o < g.size(); ++o) ga[(*src)[o]] += g[o];
                         });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() < 2) throw ShapeError("transpose: rank < 2 input " + shape_str(a.shape()));
  std::vector<std::size_t> axes(a.rank());
  std::iota(axes.begin(), axes.end(), 0);
  std::swap(axes[a.rank() - 1], axes[a.rank() - 2]);
  return permute(a, axes);
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  auto av = a.values();
  return Tensor::from_op("reshape", std::move(shape), std::vector<double>(av.begin(), av.end()), {a},
                         [](std::span<const double> g, std::span<std::vector<double>*> gi) {
                           for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i];
                         });
}

Tensor softmax_rows(const Tensor& x) {
  const std::size_t n = last_dim(x, "softmax_rows");
  const std::size_t rows = x.numel() / n;
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * n;
    double* o = out.data() + r * n;
    const double mx = *std::max_element(in, in + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (o[j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < n; ++j) o[j] /= z;
  }
  auto y = std::make_shared<std::vector<double>>(out);
  return Tensor::from_op("softmax_rows", x.shape(), std::move(out), {x},
                         [y, n, rows](std::span<const double> g, std::span<std::vector<double>*> gi) {
                           auto& gx = *gi[0];
                           for (std::size_t r = 0; r < rows; ++r) {
                             const double* yr = y->data() + r * n;
                             const double* gr = g.data() + r * n;
                             double dot = 0.0;
                             for (std::size_t j = 0; j < n; ++j) dot += gr[j] * yr[j];
                             for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += yr[j] * (gr[j] - dot);
                           }
                         });
}

Tensor rmsnorm(const Tensor& x, const Tensor& weight, double eps) {
  const std::size_t n = last_dim(x, "rmsnorm");
  if (weight.shape() != Shape{n}) {
    throw ShapeError("rmsnorm: weight " + shape_str(weight.shape()) + " does not match features of " +
                     shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / n;
  auto xv = x.values();
  auto wv = weight.values();
  auto inv = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    double ms = 0.0;
    for (std::size_t j = 0; j < n; ++j) ms += xv[r * n + j] * xv[r * n + j];
    const double ir = 1.0 / std::sqrt(ms / static_cast<double>(n) + eps);
    (*inv)[r] = ir;
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = xv[r * n + j] * ir * wv[j];
  }
  return Tensor::from_op(
      "rmsnorm", x.shape(), std::move(out), {x, weight},
      [x, weight, inv, n, rows](std::span<const double> g, std::span<std::vector<double>*> gi) {
        auto xv = x.values();
        auto wv = weight.values();
        for (std::size_t r = 0; r < rows; ++r) {
          const double ir = (*inv)[r];
          double dot = 0.0;
          for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * wv[j] * xv[r * n + j] * ir;
          dot /= static_cast<double>(n);
          for (std::size_t j = 0; j < n; ++j) {
            const double xhat = xv[r * n + j] * ir;
            if (gi[0]) (*gi[0])[r * n + j] += ir * (g[r * n + j] * wv[j] - xhat * dot);
            if (gi[1]) (*gi[1])[j] += g[r * n + j] * xhat;
          }
        }
      });
}

Tensor layernorm(const Tensor& x, const Tensor& scale_t, const Tensor& shift_t, double eps) {
  const std::size_t n = last_dim(x, "layernorm");
  for (const Tensor* p : {&scale_t, &shift_t}) {
    if (p->defined() && p->shape() != Shape{n}) {
      throw ShapeError("layernorm: affine parameter " + shape_str(p->shape()) + " does not match features of " +
                       shape_str(x.shape()));
    }
  }
  const std::size_t rows = x.numel() / n;
  auto xv = x.values();
  auto xhat = std::make_shared<std::vector<double>>(xv.size());
  auto inv = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += xv[r * n + j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (xv[r * n + j] - mu) * (xv[r * n + j] - mu);
    var /= static_cast<double>(n);
    const double ir = 1.0 / std::sqrt(var + eps);
    (*inv)[r] = ir;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (xv[r * n + j] - mu) * ir;
      (*xhat)[r * n + j] = h;
      double v = h;
      if (scale_t.defined()) v *= scale_t.values()[j];
      if (shift_t.defined()) v += shift_t.values()[j];
      out[r * n + j] = v;
    }
  }
  std::vector<Tensor> inputs{x};
  if (scale_t.defined()) inputs.push_back(scale_t);
  if (shift_t.defined()) inputs.push_back(shift_t);
  const bool has_scale = scale_t.defined();
  const bool has_shift = shift_t.defined();
  return Tensor::from_op(
      "layernorm", x.shape(), std::move(out), std::move(inputs),
      [scale_t, xhat, inv, n, rows, has_scale, has_shift](std::span<const double> g,
                                                            std::span<std::vector<double>*> gi) {
        std::vector<double>* gscale = has_scale ? gi[1] : nullptr;
        std::vector<double>* gshift = has_shift ? gi[has_scale ? 2 : 1] : nullptr;
        std::vector<double> gh(n);
        for (std::size_t r = 0; r < rows; ++r) {
          double mean_g = 0.0;
          double mean_gx = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            const double h = (*xhat)[r * n + j];
            gh[j] = g[r * n + j] * (has_scale ? scale_t.values()[j] : 1.0);
            mean_g += gh[j];
            mean_gx += gh[j] * h;
            if (gscale) (*gscale)[j] += g[r * n + j] * h;
            if (gshift) (*gshift)[j] += g[r * n + j];
          }
          mean_g /= static_cast<double>(n);
          mean_gx /= static_cast<double>(n);
          if (gi[0]) {
            const double ir = (*inv)[r];
            for (std::size_t j = 0; j < n; ++j)
              (*gi[0])[r * n + j] += ir * (gh[j] - mean_g - (*xhat)[r * n + j] * mean_gx);
          }
        }
      });
}

Tensor index_select(const Tensor& x, std::span<const std::size_t> rows) {
  if (x.rank() == 0) throw ShapeError("index_select: rank-0 input");
  if (rows.empty()) throw ShapeError("index_select: empty index list");
  const std::size_t n0 = x.dim(0);
  const std::size_t width = x.numel() / n0;
  for (std::size_t r : rows) {
    if (r >= n0) throw ShapeError("index_select: row " + std::to_string(r) + " out of range for " + shape_str(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[0] = rows.size();
  auto xv = x.values();
  std::vector<double> out(rows.size() * width);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(xv.data() + rows[i] * width, width, out.data() + i * width);
  auto idx = std::make_shared<std::vector<std::size_t>>(rows.begin(), rows.end());
  return Tensor::from_op("index_select", std::move(out_shape), std::move(out), {x},
                         [idx, width](std::span<const double> g, std::span<std::vector<double>*> gi) {
                           auto& gx = *gi[0];
                           for (std::size_t i = 0; i < idx->size(); ++i)
                             for (std::size_t j = 0; j < width; ++j) gx[(*idx)[i] * width + j] += g[i * width + j];
                         });
}

Tensor scatter_add(const Tensor& x, std::span<const std::size_t> rows, std::size_t num_rows) {
  if (x.rank() == 0 || x.dim(0) != rows.size()) {
    throw ShapeError("scatter_add: " + std::to_string(rows.size()) + " indices for input " + shape_str(x.shape()));
  }
  const std::size_t width = x.numel() / x.dim(0);
  for (std::size_t r : rows) {
    if (r >= num_rows) throw ShapeError("scatter_add: row " + std::to_string(r) + " exceeds " + std::to_string(num_rows));
  }
  Shape out_shape = x.shape();
  out_shape[0] = num_rows;
  auto xv = x.values();
  std::vector<double> out(num_rows * width, 0.0);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < width; ++j) out[rows[i] * width + j] += xv[i * width + j];
  auto idx = std::make_shared<std::vector<std::size_t>>(rows.begin(), rows.end());
  return Tensor::from_op("scatter_add", std::move(out_shape), std::move(out), {x},
                         [idx, width](std::span<const double> g, std::span<std::vector<double>*> gi) {
                           auto& gx = *gi[0];
                           for (std::size_t i = 0; i < idx->size(); ++i)
                             for (std::size_t j = 0; j < width; ++j) gx[i * width + j] += g[(*idx)[i] * width + j];
                         });
}

Tensor scale_rows(const Tensor& x, const Tensor& w) {
  if (x.rank() == 0 || w.shape() != Shape{x.dim(0)}) {
    throw ShapeError("scale_rows: weights " + shape_str(w.shape()) + " do not match rows of " + shape_str(x.shape()));
  }
  const std::size_t rows = x.dim(0);
  const std::size_t width = x.numel() / rows;
  auto xv = x.values();
  auto wv = w.values();
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < width; ++j) out[r * width + j] = xv[r * width + j] * wv[r];
  return Tensor::from_op("scale_rows", x.shape(), std::move(out), {x, w},
                         [x, w, rows, width](std::span<const double> g, std::span<std::vector<double>*> gi) {
                           auto xv = x.values();
                           auto wv = w.values();
                           for (std::size_t r = 0; r < rows; ++r) {
                             double acc = 0.0;
                             for (std::size_t j = 0; j < width; ++j) {
                               if (gi[0]) (*gi[0])[r * width + j] += g[r * width + j] * wv[r];
                               acc += g[r * width + j] * xv[r * width + j];
                             }
                             if (gi[1]) (*gi[1])[r] += acc;
                           }
                         });
}

Tensor expand_tokens(const Tensor& x, std::size_t count) {
  if (x.rank() != 2 || count == 0) {
    throw ShapeError("expand_tokens: expected [B,D] input and positive count, got " + shape_str(x.shape()));
  }
  const std::size_t b = x.dim(0);
  const std::size_t d = x.dim(1);
  auto xv = x.values();
  std::vector<double> out(b * count * d);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t t = 0; t < count; ++t) std::copy_n(xv.data() + i * d, d, out.data() + (i * count + t) * d);
  return Tensor::from_op("expand_tokens", {b, count, d}, std::move(out), {x},
                         [b, count, d](std::span<const double> g, std::span<std::vector<double>*> gi) {
                           auto& gx = *gi[0];
                           for (std::size_t i = 0; i < b; ++i)
                             for (std::size_t t = 0; t < count; ++t)
                               for (std::size_t j = 0; j < d; ++j) gx[i * d + j] += g[(i * count + t) * d + j];
                         });
}

Tensor slice_last(const Tensor& x, std::size_t start, std::size_t length) {
  const std::size_t n = last_dim(x, "slice_last");
  if (length == 0 || start + length > n) {
    throw ShapeError("slice_last: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") outside last axis of " + shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / n;
  Shape out_shape = x.shape();
  out_shape.back() = length;
  auto xv = x.values();
  std::vector<double> out(rows * length);
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(xv.data() + r * n + start, length, out.data() + r * length);
  return Tensor::from_op("slice_last", std::move(out_shape), std::move(out), {x},
                         [rows, n, start, length](std::span<const double> g, std::span<std::vector<double>*> gi) {
                           auto& gx = *gi[0];
                           for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t j = 0; j < length; ++j) gx[r * n + start + j] += g[r * length + j];
                         });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  return Tensor::from_op("sum", {1}, {acc}, {x}, [](std::span<const double> g, std::span<std::vector<double>*> gi) {
    for (double& v : *gi[0]) v += g[0];
  });
}

Tensor mean(const Tensor& x) {
  const double n = static_cast<double>(x.numel());
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  return Tensor::from_op("mean", {1}, {acc / n}, {x},
                         [n](std::span<const double> g, std::span<std::vector<double>*> gi) {
                           for (double& v : *gi[0]) v += g[0] / n;
                         });
}

Tensor sum_last(const Tensor& x) {
  const std::size_t n = last_dim(x, "sum_last");
  const std::size_t rows = x.numel() / n;
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  if (out_shape.empty()) out_shape = {1};
  auto xv = x.values();
  std::vector<double> out(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r] += xv[r * n + j];
  return Tensor::from_op("sum_last", std::move(out_shape), std::move(out), {x},
                         [rows, n](std::span<const double> g, std::span<std::vector<double>*> gi) {
                           auto& gx = *gi[0];
                           for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += g[r];
                         });
}

}  // namespace dsmoe
