#include "csdn/attention.hpp"

#include <cmath>
#include <memory>
#include <numbers>
#include <stdexcept>

#include "csdn/ops.hpp"

namespace csdn {

void FeaturePyramid::validate() const {
  if (levels.empty()) throw std::invalid_argument("feature pyramid has no levels");
  const std::size_t d = levels.front().channels();
  for (std::size_t l = 0; l < levels.size(); ++l) {
    const FeatureMap& m = levels[l];
    if (m.height == 0 || m.width == 0) throw std::invalid_argument("feature pyramid level " + std::to_string(l) + " is empty");
    if (m.values.rank() != 2 || m.values.rows() != m.height * m.width || m.values.cols() != d)
      throw std::invalid_argument("feature pyramid level " + std::to_string(l) + " has shape " +
                                  shape_string(m.values.shape()));
    if (l > 0 && m.stride <= levels[l - 1].stride)
      throw std::invalid_argument("feature pyramid strides must increase");
  }
}

std::vector<Box> boxes_of(const Graph& g, Var boxes) {
  const Tensor& t = g.value(boxes);
  std::vector<Box> out(t.rows());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = Box{t.at(i, 0), t.at(i, 1), t.at(i, 2), t.at(i, 3)};
  return out;
}

Tensor boxes_tensor(std::span<const Box> boxes) {
  Tensor t({boxes.size(), 4});
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    t.at(i, 0) = boxes[i].cx;
    t.at(i, 1) = boxes[i].cy;
    t.at(i, 2) = boxes[i].w;
    t.at(i, 3) = boxes[i].h;
  }
  return t;
}

AttentionParams AttentionParams::create(ParamSet& ps, const std::string& name, std::size_t width,
                                        std::size_t heads, Rng& rng) {
  if (heads == 0 || width % heads != 0)
    throw std::invalid_argument(name + ": width " + std::to_string(width) + " not divisible by heads");
  AttentionParams p;
  p.query = LinearLayer::create(ps, name + ".query", width, width, rng);
  p.key = LinearLayer::create(ps, name + ".key", width, width, rng);
  p.value = LinearLayer::create(ps, name + ".value", width, width, rng);
  p.output = LinearLayer::create(ps, name + ".output", width, width, rng);
  p.heads = heads;
  return p;
}

Var self_attention(Graph& g, ParamSet& ps, const AttentionParams& p, Var x, const BoolMatrix* mask) {
  Var q = p.query(g, ps, x);
  Var k = p.key(g, ps, x);
  Var v = p.value(g, ps, x);
  return p.output(g, ps, multi_head_attention(g, q, k, v, p.heads, mask));
}

Var neighbor_attention(Graph& g, ParamSet& ps, const AttentionParams& p, const QuerySet& q,
                       const NeighborMask& mask) {
  const std::size_t n = g.value(q.embeddings).rows();
  if (mask.size() != n) throw DimensionError("neighbor_attention: mask size does not match query count");
  for (std::size_t i = 0; i < n; ++i)
    if (!mask.allowed(i, i)) throw DegenerateRowError("neighbor_attention: query " + std::to_string(i) + " is not its own neighbor");
  return self_attention(g, ps, p, q.embeddings, &mask.allowed);
}

Tensor sine_position_encoding(std::size_t height, std::size_t width, std::size_t channels) {
  Tensor pe({height * width, channels});
  const std::size_t half = channels / 2;
  auto encode = [](double pos, std::size_t i, std::size_t feats) {
    const double freq = std::pow(10000.0, 2.0 * static_cast<double>(i / 2) / static_cast<double>(feats));
    const double a = pos / freq;
    return i % 2 == 0 ? std::sin(a) : std::cos(a);
  };
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      const double py = (static_cast<double>(y) + 0.5) / static_cast<double>(height) * 2.0 * std::numbers::pi;
      const double px = (static_cast<double>(x) + 0.5) / static_cast<double>(width) * 2.0 * std::numbers::pi;
      double* row = pe.data() + (y * width + x) * channels;
      for (std::size_t c = 0; c < half; ++c) row[c] = encode(py, c, half);
      for (std::size_t c = half; c < channels; ++c) row[c] = encode(px, c - half, channels - half);
    }
  return pe;
}

Var block_attention(Graph& g, ParamSet& ps, const AttentionParams& p, const QuerySet& q,
                    const FeatureMap& top, bool position_encoding) {
  if (top.height * top.width == 0 || top.values.empty())
    throw std::invalid_argument("block_attention: empty feature map");
  Var values = g.reference(top.values);
  Var keys_in = values;
  if (position_encoding) {
    Tensor keyed = sine_position_encoding(top.height, top.width, top.channels());
    for (std::size_t i = 0; i < keyed.size(); ++i) keyed[i] += top.values[i];
    keys_in = g.constant(std::move(keyed));
  }
  Var qp = p.query(g, ps, q.embeddings);
  Var k = p.key(g, ps, keys_in);
  Var v = p.value(g, ps, values);
  return p.output(g, ps, multi_head_attention(g, qp, k, v, p.heads, nullptr));
}

// ---------------------------------------------------------------------------

namespace {

struct Corner {
  std::size_t index;  // y * width + x
  double w;           // interpolation weight
  double dw_dx;
  double dw_dy;
};

// Dot product with eight interleaved partial sums, combined in a fixed order.
double lane_dot(const double* a, const double* b, std::size_t n) {
  double part[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8)
    for (std::size_t t = 0; t < 8; ++t) part[t] += a[j + t] * b[j + t];
  double s = ((part[0] + part[1]) + (part[2] + part[3])) + ((part[4] + part[5]) + (part[6] + part[7]));
  for (; j < n; ++j) s += a[j] * b[j];
  return s;
}

// In-range corners of the bilinear stencil at pixel location (px, py).
std::size_t bilinear_corners(double px, double py, std::size_t height, std::size_t width, Corner out[4]) {
  const double fx0 = std::floor(px), fy0 = std::floor(py);
  const double fx = px - fx0, fy = py - fy0;
  const long x0 = static_cast<long>(fx0), y0 = static_cast<long>(fy0);
  std::size_t n = 0;
  auto push = [&](long x, long y, double w, double dwx, double dwy) {
    if (x < 0 || y < 0 || x >= static_cast<long>(width) || y >= static_cast<long>(height)) return;
    out[n++] = Corner{static_cast<std::size_t>(y) * width + static_cast<std::size_t>(x), w, dwx, dwy};
  };
  push(x0, y0, (1 - fx) * (1 - fy), -(1 - fy), -(1 - fx));
  push(x0 + 1, y0, fx * (1 - fy), (1 - fy), -fx);
  push(x0, y0 + 1, (1 - fx) * fy, -fy, (1 - fx));
  push(x0 + 1, y0 + 1, fx * fy, fy, fx);
  return n;
}

// out[:, h*dk + c] = in[:, h*d .. (h+1)*d] * W[:, h*dk + c] + b[h*dk + c]
Var grouped_projection(Graph& g, Var in, Var weight, Var bias, std::size_t heads) {
  const Tensor& iv = g.value(in);
  const Tensor& wv = g.value(weight);
  const Tensor& bv = g.value(bias);
  const std::size_t n = iv.rows(), d = wv.rows(), out_d = wv.cols();
  if (iv.cols() != heads * d || out_d % heads != 0 || bv.size() != out_d)
    throw DimensionError("grouped_projection: shapes do not conform");
  const std::size_t dk = out_d / heads;
  Tensor out({n, out_d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t h = 0; h < heads; ++h) {
      const double* x = iv.data() + i * heads * d + h * d;
      double* y = out.data() + i * out_d + h * dk;
      for (std::size_t c = 0; c < dk; ++c) y[c] = bv[h * dk + c];
      for (std::size_t r = 0; r < d; ++r) {
        const double xr = x[r];
        const double* wrow = wv.data() + r * out_d + h * dk;
        for (std::size_t c = 0; c < dk; ++c) y[c] += xr * wrow[c];
      }
    }
  return g.emit(std::move(out), g.any_requires_grad(in, weight, bias),
                [in, weight, bias, n, d, out_d, dk, heads](Graph& g, Var o) {
                  const double* dy = g.grad(o).data();
                  const Tensor& iv = g.value(in);
                  const Tensor& wv = g.value(weight);
                  for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t h = 0; h < heads; ++h) {
                      const double* dyh = dy + i * out_d + h * dk;
                      if (g.requires_grad(bias)) {
                        auto db = g.grad(bias);
                        for (std::size_t c = 0; c < dk; ++c) db[h * dk + c] += dyh[c];
                      }
                      const double* x = iv.data() + i * heads * d + h * d;
                      for (std::size_t r = 0; r < d; ++r) {
                        if (g.requires_grad(weight)) {
                          double* dw = g.grad(weight).data() + r * out_d + h * dk;
                          for (std::size_t c = 0; c < dk; ++c) dw[c] += x[r] * dyh[c];
                        }
                        if (g.requires_grad(in)) {
                          const double* wrow = wv.data() + r * out_d + h * dk;
                          double s = 0.0;
                          for (std::size_t c = 0; c < dk; ++c) s += wrow[c] * dyh[c];
                          g.grad(in)[i * heads * d + h * d + r] += s;
                        }
                      }
                    }
                });
}

}  // namespace

std::vector<double> bilinear_sample(const Tensor& map, double x, double y) {
  if (map.rank() != 3) throw DimensionError("bilinear_sample expects [H x W x d], got " + shape_string(map.shape()));
  const std::size_t height = map.dim(0), width = map.dim(1), d = map.dim(2);
  std::vector<double> out(d, 0.0);
  Corner corners[4];
  const std::size_t nc = bilinear_corners(x, y, height, width, corners);
  for (std::size_t c = 0; c < nc; ++c) {
    const double* f = map.data() + corners[c].index * d;
    for (std::size_t j = 0; j < d; ++j) out[j] += corners[c].w * f[j];
  }
  return out;
}

Var bilinear_sample(Graph& g, Var map, Var location) {
  const Tensor& mv = g.value(map);
  const Tensor& lv = g.value(location);
  if (lv.size() != 2) throw DimensionError("bilinear_sample: location must have two coordinates");
  const std::vector<double> s = bilinear_sample(mv, lv[0], lv[1]);
  const std::size_t d = s.size();
  return g.emit(Tensor({d}, s), g.any_requires_grad(map, location), [map, location, d](Graph& g, Var o) {
    const Tensor& mv = g.value(map);
    const Tensor& lv = g.value(location);
    auto dy = g.grad(o);
    Corner corners[4];
    const std::size_t nc = bilinear_corners(lv[0], lv[1], mv.dim(0), mv.dim(1), corners);
    double dx = 0.0, dyy = 0.0;
    for (std::size_t c = 0; c < nc; ++c) {
      const double* f = mv.data() + corners[c].index * d;
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += f[j] * dy[j];
      dx += corners[c].dw_dx * dot;
      dyy += corners[c].dw_dy * dot;
      if (g.requires_grad(map)) {
        double* dm = g.grad(map).data() + corners[c].index * d;
        for (std::size_t j = 0; j < d; ++j) dm[j] += corners[c].w * dy[j];
      }
    }
    if (g.requires_grad(location)) {
      g.grad(location)[0] += dx;
      g.grad(location)[1] += dyy;
    }
  });
}

Var deformable_aggregate(Graph& g, std::span<const Var> levels, std::span<const std::array<std::size_t, 2>> sizes,
                         Var boxes, Var offsets, Var weights, std::size_t heads, std::size_t points) {
  const std::size_t nl = levels.size();
  if (nl == 0 || sizes.size() != nl) throw DimensionError("deformable_aggregate: level list mismatch");
  const std::size_t d = g.value(levels[0]).cols();
  for (std::size_t l = 0; l < nl; ++l) {
    const Tensor& lv = g.value(levels[l]);
    if (lv.rows() != sizes[l][0] * sizes[l][1] || lv.cols() != d)
      throw DimensionError("deformable_aggregate: level " + std::to_string(l) + " shape mismatch");
  }
  const Tensor& bv = g.value(boxes);
  const Tensor& ov = g.value(offsets);
  const Tensor& wv = g.value(weights);
  const std::size_t n = bv.rows();
  const std::size_t samples = heads * nl * points;
  if (bv.cols() != 4 || ov.rows() != n || ov.cols() != samples * 2 || wv.rows() != n || wv.cols() != samples)
    throw DimensionError("deformable_aggregate: boxes " + shape_string(bv.shape()) + ", offsets " +
                         shape_string(ov.shape()) + ", weights " + shape_string(wv.shape()) + " do not conform");

  std::vector<Var> lvars(levels.begin(), levels.end());
  std::vector<std::array<std::size_t, 2>> lsizes(sizes.begin(), sizes.end());

  // Pixel coordinates of sample s of query i at level l.
  auto locate = [lsizes](const Tensor& bv, const Tensor& ov, std::size_t i, std::size_t s, std::size_t l,
                         double& px, double& py) {
    const double* b = bv.data() + i * 4;
    const double ox = ov[(i * (ov.cols() / 2) + s) * 2];
    const double oy = ov[(i * (ov.cols() / 2) + s) * 2 + 1];
    px = (b[0] + ox * b[2] * 0.5) * static_cast<double>(lsizes[l][1]) - 0.5;
    py = (b[1] + oy * b[3] * 0.5) * static_cast<double>(lsizes[l][0]) - 0.5;
  };

  Tensor out({n, heads * d});
  Corner corners[4];
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t h = 0; h < heads; ++h) {
      double* y = out.data() + i * heads * d + h * d;
      for (std::size_t l = 0; l < nl; ++l) {
        const Tensor& fv = g.value(lvars[l]);
        for (std::size_t k = 0; k < points; ++k) {
          const std::size_t s = (h * nl + l) * points + k;
          const double a = wv[i * samples + s];
          double px, py;
          locate(bv, ov, i, s, l, px, py);
          const std::size_t nc = bilinear_corners(px, py, lsizes[l][0], lsizes[l][1], corners);
          for (std::size_t c = 0; c < nc; ++c) {
            const double aw = a * corners[c].w;
            const double* f = fv.data() + corners[c].index * d;
            for (std::size_t j = 0; j < d; ++j) y[j] += aw * f[j];
          }
        }
      }
    }

  bool track = g.any_requires_grad(boxes, offsets, weights);
  for (Var l : lvars) track = track || g.any_requires_grad(l);
  return g.emit(std::move(out), track,
                [lvars, lsizes, locate, boxes, offsets, weights, heads, points, n, d, nl, samples](Graph& g, Var o) {
                  const Tensor& bv = g.value(boxes);
                  const Tensor& ov = g.value(offsets);
                  const Tensor& wv = g.value(weights);
                  auto dy = g.grad(o);
                  const bool gb = g.requires_grad(boxes), go = g.requires_grad(offsets), gw = g.requires_grad(weights);
                  Corner corners[4];
                  for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t h = 0; h < heads; ++h) {
                      const double* dyh = dy.data() + i * heads * d + h * d;
                      for (std::size_t l = 0; l < nl; ++l) {
                        const Tensor& fv = g.value(lvars[l]);
                        const bool gl = g.requires_grad(lvars[l]);
                        const double width = static_cast<double>(lsizes[l][1]);
                        const double height = static_cast<double>(lsizes[l][0]);
                        for (std::size_t k = 0; k < points; ++k) {
                          const std::size_t s = (h * nl + l) * points + k;
                          const double a = wv[i * samples + s];
                          double px, py;
                          locate(bv, ov, i, s, l, px, py);
                          const std::size_t nc = bilinear_corners(px, py, lsizes[l][0], lsizes[l][1], corners);
                          double sample_dot = 0.0, dpx = 0.0, dpy = 0.0;
                          for (std::size_t c = 0; c < nc; ++c) {
                            const double* f = fv.data() + corners[c].index * d;
                            const double dot = lane_dot(f, dyh, d);
                            sample_dot += corners[c].w * dot;
                            dpx += corners[c].dw_dx * dot;
                            dpy += corners[c].dw_dy * dot;
                            if (gl) {
                              double* df = g.grad(lvars[l]).data() + corners[c].index * d;
                              const double aw = a * corners[c].w;
                              for (std::size_t j = 0; j < d; ++j) df[j] += aw * dyh[j];
                            }
                          }
                          if (gw) g.grad(weights)[i * samples + s] += sample_dot;
                          dpx *= a * width;
                          dpy *= a * height;
                          const double* b = bv.data() + i * 4;
                          const double ox = ov[(i * samples + s) * 2];
                          const double oy = ov[(i * samples + s) * 2 + 1];
                          if (go) {
                            g.grad(offsets)[(i * samples + s) * 2] += dpx * b[2] * 0.5;
                            g.grad(offsets)[(i * samples + s) * 2 + 1] += dpy * b[3] * 0.5;
                          }
                          if (gb) {
                            auto db = g.grad(boxes);
                            db[i * 4 + 0] += dpx;
                            db[i * 4 + 1] += dpy;
                            db[i * 4 + 2] += dpx * ox * 0.5;
                            db[i * 4 + 3] += dpy * oy * 0.5;
                          }
                        }
                      }
                    }
                });
}

DeformableParams DeformableParams::create(ParamSet& ps, const std::string& name, std::size_t width,
                                          std::size_t heads, std::size_t levels, std::size_t points, Rng& rng) {
  if (heads == 0 || width % heads != 0 || levels == 0 || points == 0)
    throw std::invalid_argument(name + ": invalid deformable configuration");
  DeformableParams p;
  p.heads = heads;
  p.levels = levels;
  p.points = points;
  const std::size_t samples = heads * levels * points;
  p.offsets = LinearLayer::create(ps, name + ".offsets", width, samples * 2, rng, LinearLayer::Init::zero);
  // Each head starts looking in its own direction, farther for later points.
  Tensor& bias = ps[p.offsets.bias].value;
  for (std::size_t h = 0; h < heads; ++h) {
    const double theta = 2.0 * std::numbers::pi * static_cast<double>(h) / static_cast<double>(heads);
    double dx = std::cos(theta), dy = std::sin(theta);
    const double norm = std::max(std::abs(dx), std::abs(dy));
    dx /= norm;
    dy /= norm;
    for (std::size_t l = 0; l < levels; ++l)
      for (std::size_t k = 0; k < points; ++k) {
        const std::size_t s = (h * levels + l) * points + k;
        const double r = static_cast<double>(k + 1) / static_cast<double>(points);
        bias[s * 2] = dx * r;
        bias[s * 2 + 1] = dy * r;
      }
  }
  p.weights = LinearLayer::create(ps, name + ".weights", width, samples, rng, LinearLayer::Init::zero);
  p.value = LinearLayer::create(ps, name + ".value", width, width, rng);
  p.output = LinearLayer::create(ps, name + ".output", width, width, rng);
  return p;
}

Var deformable_attention(Graph& g, ParamSet& ps, const DeformableParams& p, const QuerySet& q,
                         const FeaturePyramid& pyramid) {
  if (pyramid.levels.size() != p.levels)
    throw DimensionError("deformable_attention: pyramid has " + std::to_string(pyramid.levels.size()) +
                         " levels, parameters expect " + std::to_string(p.levels));
  const std::size_t n = g.value(q.embeddings).rows();
  const std::size_t per_head = p.levels * p.points;
  Var offsets = p.offsets(g, ps, q.embeddings);
  Var logits = reshape(g, p.weights(g, ps, q.embeddings), {n * p.heads, per_head});
  Var weights = reshape(g, masked_softmax(g, logits, nullptr, 1.0), {n, p.heads * per_head});

  std::vector<Var> levels;
  std::vector<std::array<std::size_t, 2>> sizes;
  for (const FeatureMap& m : pyramid.levels) {
    levels.push_back(g.reference(m.values));
    sizes.push_back({m.height, m.width});
  }
  Var sampled = deformable_aggregate(g, levels, sizes, q.boxes, offsets, weights, p.heads, p.points);
  Var per_head_values = grouped_projection(g, sampled, bind(g, ps, p.value.weight), bind(g, ps, p.value.bias), p.heads);
  return p.output(g, ps, per_head_values);
}

// ---------------------------------------------------------------------------

GateParams GateParams::create(ParamSet& ps, const std::string& name, std::size_t width) {
  Rng unused(0);
  return GateParams{LinearLayer::create(ps, name, width, kGateSlots, unused, LinearLayer::Init::zero)};
}

Var fuse_with_gates(Graph& g, Var gates, const std::array<std::optional<Var>, kGateSlots>& outputs) {
  const Tensor& gv = g.value(gates);
  std::optional<Shape> shape;
  bool track = g.any_requires_grad(gates);
  for (const auto& o : outputs) {
    if (!o) continue;
    if (shape && g.value(*o).shape() != *shape) throw DimensionError("gated_fusion: branch output shapes differ");
    shape = g.value(*o).shape();
    track = track || g.any_requires_grad(*o);
  }
  if (!shape) throw std::invalid_argument("gated_fusion: empty active branch set");
  const std::size_t n = (*shape)[0], d = (*shape)[1];
  if (gv.rows() != n || gv.cols() != kGateSlots) throw DimensionError("gated_fusion: gate shape mismatch");
  Tensor out({n, d});
  for (std::size_t m = 0; m < kGateSlots; ++m) {
    if (!outputs[m]) continue;
    const Tensor& ov = g.value(*outputs[m]);
    for (std::size_t i = 0; i < n; ++i) {
      const double gim = gv.at(i, m);
      for (std::size_t c = 0; c < d; ++c) out[i * d + c] += gim * ov[i * d + c];
    }
  }
  return g.emit(std::move(out), track, [gates, outputs, n, d](Graph& g, Var o) {
    auto dy = g.grad(o);
    const Tensor& gv = g.value(gates);
    for (std::size_t m = 0; m < kGateSlots; ++m) {
      if (!outputs[m]) continue;
      const Tensor& ov = g.value(*outputs[m]);
      if (g.requires_grad(gates)) {
        auto dg = g.grad(gates);
        for (std::size_t i = 0; i < n; ++i) {
          double s = 0.0;
          for (std::size_t c = 0; c < d; ++c) s += dy[i * d + c] * ov[i * d + c];
          dg[i * kGateSlots + m] += s;
        }
      }
      if (g.requires_grad(*outputs[m])) {
        auto dov = g.grad(*outputs[m]);
        for (std::size_t i = 0; i < n; ++i) {
          const double gim = gv.at(i, m);
          for (std::size_t c = 0; c < d; ++c) dov[i * d + c] += gim * dy[i * d + c];
        }
      }
    }
  });
}

FusionResult gated_fusion(Graph& g, ParamSet& ps, const GateParams& p, Var query_embeddings,
                          const std::array<std::optional<Var>, kGateSlots>& outputs) {
  const std::size_t n = g.value(query_embeddings).rows();
  BoolMatrix active(n, kGateSlots, false);
  bool any = false;
  for (std::size_t m = 0; m < kGateSlots; ++m) {
    if (!outputs[m]) continue;
    any = true;
    for (std::size_t i = 0; i < n; ++i) active.set(i, m, true);
  }
  if (!any) throw std::invalid_argument("gated_fusion: empty active branch set");
  Var logits = p.gate(g, ps, query_embeddings);
  Var gates = masked_softmax(g, logits, &active, 1.0);
  return FusionResult{fuse_with_gates(g, gates, outputs), gates};
}

}  // namespace csdn
