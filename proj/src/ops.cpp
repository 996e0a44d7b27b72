#include "csdn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <memory>
#include <numbers>

namespace csdn {

namespace {

void require_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2) throw DimensionError(std::string(what) + " expects a matrix, got " + shape_string(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(what) + ": shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " differ");
}

// Row-wise stabilized softmax of logits/scale over allowed entries.
void softmax_rows(const double* logits, const std::uint8_t* mask, double* out, std::size_t rows,
                  std::size_t cols, double scale) {
  const double inv = 1.0 / scale;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = logits + r * cols;
    const std::uint8_t* m = mask ? mask + r * cols : nullptr;
    double* y = out + r * cols;
    double mx = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t c = 0; c < cols; ++c) {
      if (m && !m[c]) continue;
      mx = std::max(mx, x[c] * inv);
      any = true;
    }
    if (!any) throw DegenerateRowError("masked_softmax: row " + std::to_string(r) + " has no allowed entry");
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      if (m && !m[c]) {
        y[c] = 0.0;
        continue;
      }
      y[c] = std::exp(x[c] * inv - mx);
      total += y[c];
    }
    const double norm = 1.0 / total;
    for (std::size_t c = 0; c < cols; ++c) y[c] *= norm;
  }
}

// dx = y * (dy - <y, dy>) / scale, row-wise.
void softmax_rows_backward(const double* y, const double* dy, double* dx, std::size_t rows,
                           std::size_t cols, double scale) {
  const double inv = 1.0 / scale;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* yr = y + r * cols;
    const double* dyr = dy + r * cols;
    double dot = 0.0;
    for (std::size_t c = 0; c < cols; ++c) dot += yr[c] * dyr[c];
    double* dxr = dx + r * cols;
    for (std::size_t c = 0; c < cols; ++c) dxr[c] += yr[c] * (dyr[c] - dot) * inv;
  }
}

}  // namespace

namespace {

using Lane = double __attribute__((vector_size(64)));  // 8 doubles
constexpr std::size_t kLane = 8;

inline Lane load_lane(const double* p) {
  Lane v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

inline void store_lane(double* p, Lane v) { std::memcpy(p, &v, sizeof v); }

// c[MR x 8*NV] += a[MR x k] * b[k x 8*NV], one register block. Each output
// is accumulated over p = 0, 1, ..., k-1 in order (separate multiply and
// add), the same arithmetic as the naive loop.
template <std::size_t MR, std::size_t NV>
inline void block_kernel(const double* a, std::size_t lda, const double* b, std::size_t ldb, double* c,
                         std::size_t ldc, std::size_t k) {
  Lane acc[MR][NV];
  for (std::size_t r = 0; r < MR; ++r)
    for (std::size_t v = 0; v < NV; ++v) acc[r][v] = load_lane(c + r * ldc + v * kLane);
  for (std::size_t p = 0; p < k; ++p) {
    Lane bp[NV];
    for (std::size_t v = 0; v < NV; ++v) bp[v] = load_lane(b + p * ldb + v * kLane);
    for (std::size_t r = 0; r < MR; ++r) {
      const double ar = a[r * lda + p];
      for (std::size_t v = 0; v < NV; ++v) acc[r][v] += ar * bp[v];
    }
  }
  for (std::size_t r = 0; r < MR; ++r)
    for (std::size_t v = 0; v < NV; ++v) store_lane(c + r * ldc + v * kLane, acc[r][v]);
}

template <std::size_t MR>
inline void column_tail(const double* a, std::size_t lda, const double* b, std::size_t ldb, double* c,
                        std::size_t ldc, std::size_t k, std::size_t width) {
  for (std::size_t r = 0; r < MR; ++r)
    for (std::size_t j = 0; j < width; ++j) {
      double s = c[r * ldc + j];
      for (std::size_t p = 0; p < k; ++p) s += a[r * lda + p] * b[p * ldb + j];
      c[r * ldc + j] = s;
    }
}

template <std::size_t MR>
void row_panel(const double* a, const double* b, double* c, std::size_t k, std::size_t n) {
  std::size_t j = 0;
  for (; j + 2 * kLane <= n; j += 2 * kLane) block_kernel<MR, 2>(a, k, b + j, n, c + j, n, k);
  if (j + kLane <= n) {
    block_kernel<MR, 1>(a, k, b + j, n, c + j, n, k);
    j += kLane;
  }
  if (j < n) column_tail<MR>(a, k, b + j, n, c + j, n, k, n - j);
}

// c[m x n] += a[m x k] * b[k x n], all row-major and contiguous.
void gemm_accumulate(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) row_panel<4>(a + i * k, b, c + i * n, k, n);
  for (; i < m; ++i) row_panel<1>(a + i * k, b, c + i * n, k, n);
}

std::vector<double> transposed(const double* x, std::size_t rows, std::size_t cols) {
  std::vector<double> t(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t q = 0; q < cols; ++q) t[q * rows + r] = x[r * cols + q];
  return t;
}

}  // namespace

void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
          std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  gemm_accumulate(a, b, c, m, k, n);
}

void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  const std::vector<double> bt = transposed(b, n, k);
  gemm_accumulate(a, bt.data(), c, m, k, n);
}

void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(c, c + k * n, 0.0);
  const std::vector<double> at = transposed(a, m, k);
  gemm_accumulate(at.data(), b, c, k, m, n);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a.cols() != b.rows())
    throw DimensionError("matmul: inner dimensions of " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " disagree");
  Tensor c({a.rows(), b.cols()});
  gemm(a.data(), b.data(), c.data(), a.rows(), a.cols(), b.cols(), false);
  return c;
}

Tensor masked_softmax(const Tensor& logits, const BoolMatrix& mask, double scale) {
  require_matrix(logits, "masked_softmax");
  if (mask.rows != logits.rows() || mask.cols != logits.cols())
    throw DimensionError("masked_softmax: mask does not match logits " + shape_string(logits.shape()));
  if (!(scale > 0.0)) throw std::invalid_argument("masked_softmax: scale must be positive");
  Tensor out(logits.shape());
  softmax_rows(logits.data(), mask.data.data(), out.data(), logits.rows(), logits.cols(), scale);
  return out;
}

Var matmul(Graph& g, Var a, Var b) {
  Tensor out = matmul(g.value(a), g.value(b));
  return g.emit(std::move(out), g.any_requires_grad(a, b), [a, b](Graph& g, Var o) {
    const Tensor& av = g.value(a);
    const Tensor& bv = g.value(b);
    const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
    const double* dc = g.grad(o).data();
    if (g.requires_grad(a)) gemm_nt(dc, bv.data(), g.grad(a).data(), m, n, k, true);
    if (g.requires_grad(b)) gemm_tn(av.data(), dc, g.grad(b).data(), m, k, n, true);
  });
}

Var linear(Graph& g, Var x, Var weight, Var bias) {
  const Tensor& xv = g.value(x);
  const Tensor& wv = g.value(weight);
  const Tensor& bv = g.value(bias);
  require_matrix(xv, "linear");
  require_matrix(wv, "linear");
  if (xv.cols() != wv.rows() || bv.size() != wv.cols())
    throw DimensionError("linear: input " + shape_string(xv.shape()) + ", weight " +
                         shape_string(wv.shape()) + ", bias " + shape_string(bv.shape()) +
                         " do not conform");
  const std::size_t n = xv.rows(), in = xv.cols(), out_dim = wv.cols();
  Tensor out({n, out_dim});
  for (std::size_t i = 0; i < n; ++i) std::copy(bv.data(), bv.data() + out_dim, out.data() + i * out_dim);
  gemm(xv.data(), wv.data(), out.data(), n, in, out_dim, true);
  return g.emit(std::move(out), g.any_requires_grad(x, weight, bias),
                [x, weight, bias, n, in, out_dim](Graph& g, Var o) {
                  const double* dy = g.grad(o).data();
                  if (g.requires_grad(x))
                    gemm_nt(dy, g.value(weight).data(), g.grad(x).data(), n, out_dim, in, true);
                  if (g.requires_grad(weight))
                    gemm_tn(g.value(x).data(), dy, g.grad(weight).data(), n, in, out_dim, true);
                  if (g.requires_grad(bias)) {
                    double* db = g.grad(bias).data();
                    for (std::size_t i = 0; i < n; ++i)
                      for (std::size_t j = 0; j < out_dim; ++j) db[j] += dy[i * out_dim + j];
                  }
                });
}

Var masked_softmax(Graph& g, Var logits, const BoolMatrix* mask, double scale) {
  const Tensor& lv = g.value(logits);
  Tensor out = mask ? masked_softmax(lv, *mask, scale) : masked_softmax(lv, BoolMatrix(lv.rows(), lv.cols(), true), scale);
  return g.emit(std::move(out), g.any_requires_grad(logits), [logits, scale](Graph& g, Var o) {
    const Tensor& y = g.value(o);
    softmax_rows_backward(y.data(), g.grad(o).data(), g.grad(logits).data(), y.rows(), y.cols(), scale);
  });
}

Var add(Graph& g, Var a, Var b) {
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  require_same_shape(av, bv, "add");
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return g.emit(std::move(out), g.any_requires_grad(a, b), [a, b](Graph& g, Var o) {
    auto dy = g.grad(o);
    for (Var v : {a, b}) {
      if (!g.requires_grad(v)) continue;
      auto dv = g.grad(v);
      for (std::size_t i = 0; i < dy.size(); ++i) dv[i] += dy[i];
    }
  });
}

Var mul(Graph& g, Var a, Var b) {
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  require_same_shape(av, bv, "mul");
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return g.emit(std::move(out), g.any_requires_grad(a, b), [a, b](Graph& g, Var o) {
    auto dy = g.grad(o);
    if (g.requires_grad(a)) {
      auto da = g.grad(a);
      const Tensor& bv = g.value(b);
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * bv[i];
    }
    if (g.requires_grad(b)) {
      auto db = g.grad(b);
      const Tensor& av = g.value(a);
      for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * av[i];
    }
  });
}

Var scale(Graph& g, Var a, double s) {
  const Tensor& av = g.value(a);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * s;
  return g.emit(std::move(out), g.any_requires_grad(a), [a, s](Graph& g, Var o) {
    auto dy = g.grad(o);
    auto da = g.grad(a);
    for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * s;
  });
}

Var sum(Graph& g, Var a) {
  const Tensor& av = g.value(a);
  double s = 0.0;
  for (double v : av.values()) s += v;
  return g.emit(Tensor({1}, {s}), g.any_requires_grad(a), [a](Graph& g, Var o) {
    const double dy = g.grad(o)[0];
    for (double& d : g.grad(a)) d += dy;
  });
}

Var weighted_sum(Graph& g, std::span<const Var> scalars, std::span<const double> weights) {
  if (scalars.size() != weights.size()) throw DimensionError("weighted_sum: length mismatch");
  double s = 0.0;
  bool track = false;
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    const Tensor& v = g.value(scalars[i]);
    if (v.size() != 1) throw DimensionError("weighted_sum expects scalars");
    s += weights[i] * v[0];
    track = track || g.any_requires_grad(scalars[i]);
  }
  std::vector<Var> vs(scalars.begin(), scalars.end());
  std::vector<double> ws(weights.begin(), weights.end());
  return g.emit(Tensor({1}, {s}), track, [vs, ws](Graph& g, Var o) {
    const double dy = g.grad(o)[0];
    for (std::size_t i = 0; i < vs.size(); ++i)
      if (g.requires_grad(vs[i])) g.grad(vs[i])[0] += dy * ws[i];
  });
}

Var gelu(Graph& g, Var x) {
  const Tensor& xv = g.value(x);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = 0.5 * xv[i] * (1.0 + std::erf(xv[i] * std::numbers::sqrt2 / 2.0));
  return g.emit(std::move(out), g.any_requires_grad(x), [x](Graph& g, Var o) {
    const Tensor& xv = g.value(x);
    auto dy = g.grad(o);
    auto dx = g.grad(x);
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < dy.size(); ++i) {
      const double v = xv[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      dx[i] += dy[i] * (cdf + v * pdf);
    }
  });
}

Var sigmoid(Graph& g, Var x) {
  const Tensor& xv = g.value(x);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-xv[i]));
  return g.emit(std::move(out), g.any_requires_grad(x), [x](Graph& g, Var o) {
    const Tensor& y = g.value(o);
    auto dy = g.grad(o);
    auto dx = g.grad(x);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * y[i] * (1.0 - y[i]);
  });
}

Var inverse_sigmoid(Graph& g, Var x, double clip) {
  const Tensor& xv = g.value(x);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double p = std::clamp(xv[i], clip, 1.0 - clip);
    out[i] = std::log(p / (1.0 - p));
  }
  return g.emit(std::move(out), g.any_requires_grad(x), [x, clip](Graph& g, Var o) {
    const Tensor& xv = g.value(x);
    auto dy = g.grad(o);
    auto dx = g.grad(x);
    for (std::size_t i = 0; i < dy.size(); ++i) {
      const double p = xv[i];
      if (p < clip || p > 1.0 - clip) continue;
      dx[i] += dy[i] / (p * (1.0 - p));
    }
  });
}

Var layer_norm(Graph& g, Var x, Var gamma, Var beta, double eps) {
  const Tensor& xv = g.value(x);
  require_matrix(xv, "layer_norm");
  const std::size_t n = xv.rows(), d = xv.cols();
  if (g.value(gamma).size() != d || g.value(beta).size() != d)
    throw DimensionError("layer_norm: affine parameters do not match width " + std::to_string(d));
  const double* gm = g.value(gamma).data();
  const double* bt = g.value(beta).data();
  Tensor out({n, d});
  auto xhat = std::make_shared<std::vector<double>>(n * d);
  auto inv_std = std::make_shared<std::vector<double>>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* r = xv.data() + i * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += r[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (r[j] - mean) * (r[j] - mean);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (r[j] - mean) * is;
      (*xhat)[i * d + j] = h;
      out[i * d + j] = gm[j] * h + bt[j];
    }
  }
  return g.emit(std::move(out), g.any_requires_grad(x, gamma, beta),
                [x, gamma, beta, xhat, inv_std, n, d](Graph& g, Var o) {
                  const double* dy = g.grad(o).data();
                  const double* gm = g.value(gamma).data();
                  if (g.requires_grad(gamma) || g.requires_grad(beta)) {
                    for (std::size_t i = 0; i < n; ++i)
                      for (std::size_t j = 0; j < d; ++j) {
                        if (g.requires_grad(gamma)) g.grad(gamma)[j] += dy[i * d + j] * (*xhat)[i * d + j];
                        if (g.requires_grad(beta)) g.grad(beta)[j] += dy[i * d + j];
                      }
                  }
                  if (!g.requires_grad(x)) return;
                  auto dx = g.grad(x);
                  std::vector<double> dh(d);
                  for (std::size_t i = 0; i < n; ++i) {
                    double mean_dh = 0.0, mean_dh_h = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                      dh[j] = dy[i * d + j] * gm[j];
                      mean_dh += dh[j];
                      mean_dh_h += dh[j] * (*xhat)[i * d + j];
                    }
                    mean_dh /= static_cast<double>(d);
                    mean_dh_h /= static_cast<double>(d);
                    for (std::size_t j = 0; j < d; ++j)
                      dx[i * d + j] += (*inv_std)[i] * (dh[j] - mean_dh - (*xhat)[i * d + j] * mean_dh_h);
                  }
                });
}

Var reshape(Graph& g, Var x, Shape shape) {
  Tensor out = g.value(x).reshaped(std::move(shape));
  return g.emit(std::move(out), g.any_requires_grad(x), [x](Graph& g, Var o) {
    auto dy = g.grad(o);
    auto dx = g.grad(x);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
  });
}

Var slice_cols(Graph& g, Var x, std::size_t begin, std::size_t end) {
  const Tensor& xv = g.value(x);
  require_matrix(xv, "slice_cols");
  const std::size_t n = xv.rows(), d = xv.cols();
  if (begin > end || end > d) throw DimensionError("slice_cols: range out of bounds for " + shape_string(xv.shape()));
  const std::size_t w = end - begin;
  Tensor out({n, w});
  for (std::size_t i = 0; i < n; ++i)
    std::copy(xv.data() + i * d + begin, xv.data() + i * d + end, out.data() + i * w);
  return g.emit(std::move(out), g.any_requires_grad(x), [x, n, d, w, begin](Graph& g, Var o) {
    auto dy = g.grad(o);
    auto dx = g.grad(x);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < w; ++j) dx[i * d + begin + j] += dy[i * w + j];
  });
}

Var concat_cols(Graph& g, std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: nothing to concatenate");
  const std::size_t n = g.value(parts[0]).rows();
  std::size_t d = 0;
  bool track = false;
  for (Var p : parts) {
    if (g.value(p).rows() != n) throw DimensionError("concat_cols: row counts differ");
    d += g.value(p).cols();
    track = track || g.any_requires_grad(p);
  }
  Tensor out({n, d});
  std::size_t off = 0;
  for (Var p : parts) {
    const Tensor& pv = g.value(p);
    const std::size_t w = pv.cols();
    for (std::size_t i = 0; i < n; ++i) std::copy(pv.data() + i * w, pv.data() + (i + 1) * w, out.data() + i * d + off);
    off += w;
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return g.emit(std::move(out), track, [ps, n, d](Graph& g, Var o) {
    auto dy = g.grad(o);
    std::size_t off = 0;
    for (Var p : ps) {
      const std::size_t w = g.value(p).cols();
      if (g.requires_grad(p)) {
        auto dp = g.grad(p);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < w; ++j) dp[i * w + j] += dy[i * d + off + j];
      }
      off += w;
    }
  });
}

Var multi_head_attention(Graph& g, Var q, Var k, Var v, std::size_t heads, const BoolMatrix* mask) {
  const Tensor& qv = g.value(q);
  const Tensor& kv = g.value(k);
  const Tensor& vv = g.value(v);
  require_matrix(qv, "attention");
  require_matrix(kv, "attention");
  require_matrix(vv, "attention");
  const std::size_t n = qv.rows(), m = kv.rows(), d = qv.cols();
  if (kv.cols() != d || vv.cols() != d || vv.rows() != m)
    throw DimensionError("attention: query " + shape_string(qv.shape()) + ", key " + shape_string(kv.shape()) +
                         ", value " + shape_string(vv.shape()) + " do not conform");
  if (m == 0) throw DimensionError("attention: empty key set");
  if (heads == 0 || d % heads != 0)
    throw DimensionError("attention: width " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
  if (mask && (mask->rows != n || mask->cols != m)) throw DimensionError("attention: mask shape mismatch");
  const std::size_t dk = d / heads;
  const double scale_factor = std::sqrt(static_cast<double>(dk));
  const std::uint8_t* mdata = mask ? mask->data.data() : nullptr;

  auto gather = [](const Tensor& t, std::size_t h, std::size_t dk, std::vector<double>& buf) {
    const std::size_t rows = t.rows(), d = t.cols();
    buf.resize(rows * dk);
    for (std::size_t i = 0; i < rows; ++i)
      std::copy(t.data() + i * d + h * dk, t.data() + i * d + (h + 1) * dk, buf.data() + i * dk);
  };

  auto probs = std::make_shared<std::vector<std::vector<double>>>(heads);
  Tensor out({n, d});
  std::vector<double> qh, kh, vh, logits(n * m), oh(n * dk);
  for (std::size_t h = 0; h < heads; ++h) {
    gather(qv, h, dk, qh);
    gather(kv, h, dk, kh);
    gather(vv, h, dk, vh);
    gemm_nt(qh.data(), kh.data(), logits.data(), n, dk, m, false);
    auto& a = (*probs)[h];
    a.resize(n * m);
    softmax_rows(logits.data(), mdata, a.data(), n, m, scale_factor);
    gemm(a.data(), vh.data(), oh.data(), n, m, dk, false);
    for (std::size_t i = 0; i < n; ++i) std::copy(oh.data() + i * dk, oh.data() + (i + 1) * dk, out.data() + i * d + h * dk);
  }

  return g.emit(std::move(out), g.any_requires_grad(q, k, v),
                [q, k, v, probs, gather, n, m, d, dk, heads, scale_factor](Graph& g, Var o) {
                  auto dy = g.grad(o);
                  std::vector<double> qh, kh, vh, doh(n * dk), da(n * m), dl(n * m), tmp;
                  for (std::size_t h = 0; h < heads; ++h) {
                    const auto& a = (*probs)[h];
                    gather(g.value(q), h, dk, qh);
                    gather(g.value(k), h, dk, kh);
                    gather(g.value(v), h, dk, vh);
                    for (std::size_t i = 0; i < n; ++i)
                      std::copy(dy.data() + i * d + h * dk, dy.data() + i * d + (h + 1) * dk, doh.data() + i * dk);
                    if (g.requires_grad(v)) {
                      tmp.assign(m * dk, 0.0);
                      gemm_tn(a.data(), doh.data(), tmp.data(), n, m, dk, false);
                      auto dv = g.grad(v);
                      for (std::size_t j = 0; j < m; ++j)
                        for (std::size_t c = 0; c < dk; ++c) dv[j * d + h * dk + c] += tmp[j * dk + c];
                    }
                    if (!g.requires_grad(q) && !g.requires_grad(k)) continue;
                    gemm_nt(doh.data(), vh.data(), da.data(), n, dk, m, false);
                    std::fill(dl.begin(), dl.end(), 0.0);
                    softmax_rows_backward(a.data(), da.data(), dl.data(), n, m, scale_factor);
                    if (g.requires_grad(q)) {
                      tmp.assign(n * dk, 0.0);
                      gemm(dl.data(), kh.data(), tmp.data(), n, m, dk, false);
                      auto dq = g.grad(q);
                      for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t c = 0; c < dk; ++c) dq[i * d + h * dk + c] += tmp[i * dk + c];
                    }
                    if (g.requires_grad(k)) {
                      tmp.assign(m * dk, 0.0);
                      gemm_tn(dl.data(), qh.data(), tmp.data(), n, m, dk, false);
                      auto dkk = g.grad(k);
                      for (std::size_t j = 0; j < m; ++j)
                        for (std::size_t c = 0; c < dk; ++c) dkk[j * d + h * dk + c] += tmp[j * dk + c];
                    }
                  }
                });
}

}  // namespace csdn
