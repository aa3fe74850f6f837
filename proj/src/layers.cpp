#include "coughgan/layers.hpp"

#include <algorithm>
#include <array>
#include <cstdint>
#include <cmath>
#include <limits>
#include <vector>

#include "coughgan/error.hpp"
#include "gemm.hpp"

namespace coughgan::nn {

using detail::gemm_nn;
using detail::gemm_nt;
using detail::gemm_tn;

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::conv2d_transpose: return "conv2d_transpose";
    case LayerKind::dense: return "dense";
    case LayerKind::embedding: return "embedding";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::leaky_relu: return "leaky_relu";
    case LayerKind::relu: return "relu";
    case LayerKind::tanh: return "tanh";
    case LayerKind::sigmoid: return "sigmoid";
    case LayerKind::softmax: return "softmax";
    case LayerKind::dropout: return "dropout";
    case LayerKind::flatten: return "flatten";
    case LayerKind::concat_channels: return "concat_channels";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Specs

LayerSpec LayerSpec::conv2d(std::size_t in_channels, std::size_t filters, std::size_t kernel,
                            std::size_t stride, Padding padding) {
  LayerSpec s;
  s.kind = LayerKind::conv2d;
  s.in_channels = in_channels;
  s.filters = filters;
  s.kernel_h = s.kernel_w = kernel;
  s.stride_h = s.stride_w = stride;
  s.padding = padding;
  return s;
}

LayerSpec LayerSpec::conv2d_transpose(std::size_t in_channels, std::size_t filters, std::size_t kernel,
                                      std::size_t stride) {
  LayerSpec s = conv2d(in_channels, filters, kernel, stride, Padding::same);
  s.kind = LayerKind::conv2d_transpose;
  return s;
}

LayerSpec LayerSpec::dense(std::size_t in_features, std::size_t out_features) {
  LayerSpec s;
  s.kind = LayerKind::dense;
  s.in_features = in_features;
  s.out_features = out_features;
  return s;
}

LayerSpec LayerSpec::embedding(std::size_t vocab, std::size_t dim) {
  LayerSpec s;
  s.kind = LayerKind::embedding;
  s.vocab = vocab;
  s.embed_dim = dim;
  return s;
}

LayerSpec LayerSpec::batchnorm(std::size_t channels, double epsilon, double momentum) {
  LayerSpec s;
  s.kind = LayerKind::batchnorm;
  s.channels = channels;
  s.epsilon = epsilon;
  s.momentum = momentum;
  return s;
}

LayerSpec LayerSpec::leaky_relu(double alpha) {
  LayerSpec s;
  s.kind = LayerKind::leaky_relu;
  s.alpha = alpha;
  return s;
}

LayerSpec LayerSpec::activation(LayerKind kind) {
  LayerSpec s;
  s.kind = kind;
  return s;
}

LayerSpec LayerSpec::dropout(double rate) {
  LayerSpec s;
  s.kind = LayerKind::dropout;
  s.rate = rate;
  return s;
}

LayerSpec LayerSpec::flatten(Shape target_shape) {
  LayerSpec s;
  s.kind = LayerKind::flatten;
  s.target_shape = std::move(target_shape);
  return s;
}

LayerSpec LayerSpec::concat_channels() {
  LayerSpec s;
  s.kind = LayerKind::concat_channels;
  return s;
}

void validate(const LayerSpec& s) {
  auto fail = [&](const std::string& why) { throw ConfigError(to_string(s.kind) + ": " + why); };
  switch (s.kind) {
    case LayerKind::conv2d:
    case LayerKind::conv2d_transpose:
      if (!s.in_channels || !s.filters) fail("channel counts must be positive");
      if (!s.kernel_h || !s.kernel_w || !s.stride_h || !s.stride_w) fail("kernel and stride must be positive");
      if (s.kind == LayerKind::conv2d_transpose &&
          (s.kernel_h < s.stride_h || s.kernel_w < s.stride_w || (s.kernel_h - s.stride_h) % 2 ||
           (s.kernel_w - s.stride_w) % 2))
        fail("transpose kernel must exceed stride by an even amount");
      break;
    case LayerKind::dense:
      if (!s.in_features || !s.out_features) fail("feature counts must be positive");
      break;
    case LayerKind::embedding:
      if (!s.vocab || !s.embed_dim) fail("vocabulary and dimension must be positive");
      break;
    case LayerKind::batchnorm:
      if (!s.channels) fail("channel count must be positive");
      if (!(s.epsilon > 0.0) || !(s.momentum >= 0.0 && s.momentum < 1.0)) fail("invalid epsilon or momentum");
      break;
    case LayerKind::leaky_relu:
      if (!(s.alpha > 0.0)) fail("alpha must be positive");
      break;
    case LayerKind::dropout:
      if (!(s.rate >= 0.0 && s.rate < 1.0)) fail("rate must lie in [0, 1)");
      break;
    default:
      break;
  }
}

std::vector<std::string> param_names(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv2d:
    case LayerKind::conv2d_transpose:
    case LayerKind::dense: return {"weight", "bias"};
    case LayerKind::embedding: return {"weight"};
    case LayerKind::batchnorm: return {"gamma", "beta"};
    default: return {};
  }
}

std::vector<std::string> buffer_names(LayerKind kind) {
  if (kind == LayerKind::batchnorm) return {"running_mean", "running_var"};
  return {};
}

Layer make_layer(const LayerSpec& spec, Rng& rng) {
  validate(spec);
  Layer layer{spec, {}, {}};
  auto gaussian = [&](Shape shape) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = 0.02 * rng.normal();
    return t;
  };
  switch (spec.kind) {
    case LayerKind::conv2d:
      layer.params.push_back(gaussian({spec.filters, spec.in_channels, spec.kernel_h, spec.kernel_w}));
      layer.params.emplace_back(Shape{spec.filters});
      break;
    case LayerKind::conv2d_transpose:
      layer.params.push_back(gaussian({spec.in_channels, spec.filters, spec.kernel_h, spec.kernel_w}));
      layer.params.emplace_back(Shape{spec.filters});
      break;
    case LayerKind::dense:
      layer.params.push_back(gaussian({spec.in_features, spec.out_features}));
      layer.params.emplace_back(Shape{spec.out_features});
      break;
    case LayerKind::embedding:
      layer.params.push_back(gaussian({spec.vocab, spec.embed_dim}));
      break;
    case LayerKind::batchnorm:
      layer.params.emplace_back(Shape{spec.channels}, 1.0);
      layer.params.emplace_back(Shape{spec.channels}, 0.0);
      layer.buffers.emplace_back(Shape{spec.channels}, 0.0);
      layer.buffers.emplace_back(Shape{spec.channels}, 1.0);
      break;
    default:
      break;
  }
  return layer;
}

std::size_t same_padding(std::size_t kernel) { return (kernel - 1) / 2; }

std::size_t conv_output_size(std::size_t in, std::size_t kernel, std::size_t stride, Padding padding) {
  const std::size_t pad = padding == Padding::same ? same_padding(kernel) : 0;
  if (in + 2 * pad < kernel) return 0;
  return (in + 2 * pad - kernel) / stride + 1;
}

// ---------------------------------------------------------------------------
// im2col

namespace {

/// (channels, height, width) image sampled on a (grid_h, grid_w) grid of
/// kernel windows: window (gi, gj) tap (a, b) reads image row gi*sh - ph + a.
struct Geometry {
  std::size_t channels, height, width;
  std::size_t grid_h, grid_w;
  std::size_t kh, kw, sh, sw, ph, pw;

  std::size_t rows() const { return channels * kh * kw; }
  std::size_t cols() const { return grid_h * grid_w; }
};

/// Window indices [lo, hi) whose tap at offset `tap` lands inside [0, size).
std::pair<std::size_t, std::size_t> valid_range(std::size_t grid, std::size_t stride, std::size_t tap,
                                                std::size_t pad, std::size_t size) {
  const std::size_t lo = pad > tap ? (pad - tap + stride - 1) / stride : 0;
  if (size + pad <= tap) return {0, 0};
  const std::size_t hi = std::min(grid, (size - 1 + pad - tap) / stride + 1);
  return {std::min(lo, hi), hi};
}

/// Row r of the column matrix starts at col + r * ld.
void im2col(const double* img, const Geometry& g, double* col, std::size_t ld) {
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t a = 0; a < g.kh; ++a) {
      const auto [i0, i1] = valid_range(g.grid_h, g.sh, a, g.ph, g.height);
      for (std::size_t b = 0; b < g.kw; ++b) {
        const auto [j0, j1] = valid_range(g.grid_w, g.sw, b, g.pw, g.width);
        double* out = col + ((c * g.kh + a) * g.kw + b) * ld;
        if (j0 >= j1) {
          std::fill_n(out, g.grid_h * g.grid_w, 0.0);
          continue;
        }
        std::fill_n(out, i0 * g.grid_w, 0.0);
        for (std::size_t gi = i0; gi < i1; ++gi) {
          double* row_out = out + gi * g.grid_w;
          // First valid tap of this row.
          const double* src = img + (c * g.height + gi * g.sh + a - g.ph) * g.width + (j0 * g.sw + b - g.pw);
          std::fill_n(row_out, j0, 0.0);
          if (g.sw == 1) {
            std::copy(src, src + (j1 - j0), row_out + j0);
          } else {
            for (std::size_t gj = j0; gj < j1; ++gj) row_out[gj] = src[(gj - j0) * g.sw];
          }
          std::fill(row_out + j1, row_out + g.grid_w, 0.0);
        }
        std::fill(out + i1 * g.grid_w, out + g.grid_h * g.grid_w, 0.0);
      }
    }
  }
}

void col2im(const double* col, const Geometry& g, double* img, std::size_t ld) {
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t a = 0; a < g.kh; ++a) {
      const auto [i0, i1] = valid_range(g.grid_h, g.sh, a, g.ph, g.height);
      for (std::size_t b = 0; b < g.kw; ++b) {
        const auto [j0, j1] = valid_range(g.grid_w, g.sw, b, g.pw, g.width);
        if (j0 >= j1) continue;
        const double* in = col + ((c * g.kh + a) * g.kw + b) * ld;
        for (std::size_t gi = i0; gi < i1; ++gi) {
          const double* row_in = in + gi * g.grid_w;
          double* dst = img + (c * g.height + gi * g.sh + a - g.ph) * g.width + (j0 * g.sw + b - g.pw);
          for (std::size_t gj = j0; gj < j1; ++gj) dst[(gj - j0) * g.sw] += row_in[gj];
        }
      }
    }
  }
}

// Phase-plane kernels for narrow layers, where the column matrix would be
// many times larger than the work it feeds. The image is split into
// stride x stride phase planes so that every kernel tap becomes a constant
// offset into one plane, and each tap is then a single contiguous loop over
// the whole (row-padded) window grid. `grid` holds `planes` maps; weights
// are [planes, channels, kh, kw].

struct Phases {
  std::size_t s, wq, rq;  // stride, plane row pitch, plane rows

  std::size_t plane() const { return rq * wq; }
  std::size_t grid(const Geometry& g) const { return g.grid_h * wq; }
  std::size_t index(std::size_t c, std::size_t a, std::size_t b) const { return (c * s + a % s) * s + b % s; }
  std::size_t offset(std::size_t a, std::size_t b) const { return (a / s) * wq + b / s; }
};

bool use_phases(const Geometry& g, std::size_t planes) { return g.sh == g.sw && g.channels * planes <= 32; }

Phases phase_layout(const Geometry& g) {
  const std::size_t s = g.sw;
  const std::size_t wq = std::max(g.grid_w + (g.kw - 1) / s, (g.width + g.pw + s - 1) / s);
  const std::size_t rq = std::max(g.grid_h + (g.kh - 1) / s + 1, (g.height + g.ph + s - 1) / s);
  return {s, wq, rq};
}

/// Calls f(phase plane, plane row, image row, first plane column, first
/// image column, count) for every stretch of image pixels inside a phase
/// plane. Plane columns advance by 1 where image columns advance by s.
template <typename F>
void for_phase_rows(const Geometry& g, const Phases& L, F&& f) {
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t pa = 0; pa < L.s; ++pa) {
      const auto [r0, r1] = valid_range(L.rq, L.s, pa, g.ph, g.height);
      for (std::size_t pb = 0; pb < L.s; ++pb) {
        const auto [q0, q1] = valid_range(L.wq, L.s, pb, g.pw, g.width);
        if (q0 >= q1) continue;
        const std::size_t plane = (c * L.s + pa) * L.s + pb;
        for (std::size_t r = r0; r < r1; ++r)
          f(plane * L.plane() + r * L.wq + q0, (c * g.height + r * L.s + pa - g.ph) * g.width + (q0 * L.s + pb - g.pw),
            c, q1 - q0);
      }
    }
}

/// Zero-padded phase planes of one image.
void to_phases(const double* img, const Geometry& g, const Phases& L, double* out) {
  std::fill_n(out, g.channels * L.s * L.s * L.plane(), 0.0);
  for_phase_rows(g, L, [&](std::size_t dst, std::size_t src, std::size_t, std::size_t n) {
    for (std::size_t q = 0; q < n; ++q) out[dst + q] = img[src + q * L.s];
  });
}

/// Inverse of to_phases on the image pixels; `bias` (per channel) may be null.
void from_phases(const double* in, const Geometry& g, const Phases& L, const double* bias, double* img) {
  for_phase_rows(g, L, [&](std::size_t src, std::size_t dst, std::size_t c, std::size_t n) {
    const double add = bias ? bias[c] : 0.0;
    for (std::size_t q = 0; q < n; ++q) img[dst + q * L.s] = in[src + q] + add;
  });
}

/// Grid maps re-pitched to L.wq with zeroed padding columns.
void to_grid(const double* grid, const Geometry& g, const Phases& L, std::size_t planes, double* out) {
  std::fill_n(out, planes * L.grid(g), 0.0);
  for (std::size_t f = 0; f < planes; ++f)
    for (std::size_t i = 0; i < g.grid_h; ++i)
      std::copy_n(grid + (f * g.grid_h + i) * g.grid_w, g.grid_w, out + f * L.grid(g) + i * L.wq);
}

void from_grid(const double* in, const Geometry& g, const Phases& L, std::size_t planes, const double* bias,
               double* grid) {
  for (std::size_t f = 0; f < planes; ++f)
    for (std::size_t i = 0; i < g.grid_h; ++i) {
      const double* src = in + f * L.grid(g) + i * L.wq;
      double* dst = grid + (f * g.grid_h + i) * g.grid_w;
      const double add = bias ? bias[f] : 0.0;
      for (std::size_t j = 0; j < g.grid_w; ++j) dst[j] = src[j] + add;
    }
}

/// Fixed eight-way split so the reduction vectorizes without reassociation.
double dot(const double* x, const double* y, std::size_t n) {
  double part[8] = {};
  std::size_t o = 0;
  for (; o + 8 <= n; o += 8)
    for (std::size_t k = 0; k < 8; ++k) part[k] += x[o + k] * y[o + k];
  double acc = ((part[0] + part[1]) + (part[2] + part[3])) + ((part[4] + part[5]) + (part[6] + part[7]));
  for (; o < n; ++o) acc += x[o] * y[o];
  return acc;
}

/// grid[f] += sum over c, taps of w * shifted phase plane.
void phase_gather(const double* ph, const double* w, const Geometry& g, const Phases& L, std::size_t planes,
                  double* grid) {
  const std::size_t n = L.grid(g);
  for (std::size_t f = 0; f < planes; ++f) {
    double* dst = grid + f * n;
    for (std::size_t c = 0; c < g.channels; ++c)
      for (std::size_t a = 0; a < g.kh; ++a)
        for (std::size_t b = 0; b < g.kw; ++b) {
          const double wt = w[((f * g.channels + c) * g.kh + a) * g.kw + b];
          const double* src = ph + L.index(c, a, b) * L.plane() + L.offset(a, b);
          for (std::size_t o = 0; o < n; ++o) dst[o] += wt * src[o];
        }
  }
}

/// Adjoint of phase_gather.
void phase_scatter(const double* grid, const double* w, const Geometry& g, const Phases& L, std::size_t planes,
                   double* ph) {
  const std::size_t n = L.grid(g);
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t a = 0; a < g.kh; ++a)
      for (std::size_t b = 0; b < g.kw; ++b) {
        double* dst = ph + L.index(c, a, b) * L.plane() + L.offset(a, b);
        for (std::size_t f = 0; f < planes; ++f) {
          const double wt = w[((f * g.channels + c) * g.kh + a) * g.kw + b];
          const double* src = grid + f * n;
          for (std::size_t o = 0; o < n; ++o) dst[o] += wt * src[o];
        }
      }
}

/// dw[f, c, a, b] += <grid[f], shifted phase plane>
void phase_weight_grad(const double* ph, const double* grid, const Geometry& g, const Phases& L, std::size_t planes,
                       double* dw) {
  const std::size_t n = L.grid(g);
  for (std::size_t f = 0; f < planes; ++f) {
    const double* gf = grid + f * n;
    for (std::size_t c = 0; c < g.channels; ++c)
      for (std::size_t a = 0; a < g.kh; ++a)
        for (std::size_t b = 0; b < g.kw; ++b) {
          const double* src = ph + L.index(c, a, b) * L.plane() + L.offset(a, b);
          dw[((f * g.channels + c) * g.kh + a) * g.kw + b] += dot(gf, src, n);
        }
  }
}

/// Sums of each grid map over the batch, added into `db`.
void add_plane_sums(const double* grid, std::size_t batch, std::size_t planes, std::size_t size, double* db) {
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t f = 0; f < planes; ++f) {
      const double* p = grid + (b * planes + f) * size;
      double acc = 0.0;
      for (std::size_t i = 0; i < size; ++i) acc += p[i];
      db[f] += acc;
    }
}

void require_rank(const Tensor& x, std::size_t rank, const LayerSpec& spec) {
  if (x.rank() != rank)
    throw ShapeError(to_string(spec.kind) + ": expected rank-" + std::to_string(rank) + " input, got " +
                     shape_string(x.shape()));
}

void require_dim(const Tensor& x, std::size_t axis, std::size_t expected, const LayerSpec& spec) {
  if (x.dim(axis) != expected)
    throw ShapeError(to_string(spec.kind) + ": input " + shape_string(x.shape()) + " axis " +
                     std::to_string(axis) + " should be " + std::to_string(expected));
}

Geometry conv_geometry(const LayerSpec& s, const Shape& in) {
  const std::size_t oh = conv_output_size(in[2], s.kernel_h, s.stride_h, s.padding);
  const std::size_t ow = conv_output_size(in[3], s.kernel_w, s.stride_w, s.padding);
  if (!oh || !ow) throw ShapeError("conv2d: kernel larger than input " + shape_string(in));
  const std::size_t ph = s.padding == Padding::same ? same_padding(s.kernel_h) : 0;
  const std::size_t pw = s.padding == Padding::same ? same_padding(s.kernel_w) : 0;
  return {in[1], in[2], in[3], oh, ow, s.kernel_h, s.kernel_w, s.stride_h, s.stride_w, ph, pw};
}

Geometry transpose_geometry(const LayerSpec& s, const Shape& in) {
  const std::size_t ph = (s.kernel_h - s.stride_h) / 2;
  const std::size_t pw = (s.kernel_w - s.stride_w) / 2;
  const std::size_t oh = (in[2] - 1) * s.stride_h + s.kernel_h - 2 * ph;
  const std::size_t ow = (in[3] - 1) * s.stride_w + s.kernel_w - 2 * pw;
  return {s.filters, oh, ow, in[2], in[3], s.kernel_h, s.kernel_w, s.stride_h, s.stride_w, ph, pw};
}

double stable_sigmoid(double x) {
  constexpr double eps = std::numeric_limits<double>::epsilon();
  const double y = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  return std::clamp(y, eps, 1.0 - eps);
}

/// Channel axis is 1; everything after it is "spatial".
std::pair<std::size_t, std::size_t> channel_layout(const Tensor& x) {
  std::size_t spatial = 1;
  for (std::size_t i = 2; i < x.rank(); ++i) spatial *= x.dim(i);
  return {x.dim(1), spatial};
}

// ---------------------------------------------------------------------------
// Per-kind forward

/// [batch, channels, plane] <-> [channels, batch * plane]
void to_channel_major(const double* src, std::size_t batch, std::size_t channels, std::size_t plane, double* dst) {
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < channels; ++c)
      std::copy_n(src + (b * channels + c) * plane, plane, dst + (c * batch + b) * plane);
}

void to_batch_major(const double* src, std::size_t batch, std::size_t channels, std::size_t plane, double* dst) {
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < channels; ++c)
      std::copy_n(src + (c * batch + b) * plane, plane, dst + (b * channels + c) * plane);
}

/// Per-thread work buffers reused across calls. Contents are unspecified.
double* scratch(std::size_t slot, std::size_t n) {
  thread_local std::array<std::vector<double>, 3> pool;
  auto& v = pool.at(slot);
  if (v.size() < n) v.resize(n);
  return v.data();
}

/// Column matrix [rows, batch * cols] of a whole image batch.
void batch_im2col(const double* images, std::size_t batch, const Geometry& g, double* col) {
  const std::size_t p = g.cols(), ld = batch * p, plane = g.channels * g.height * g.width;
  for (std::size_t b = 0; b < batch; ++b) im2col(images + b * plane, g, col + b * p, ld);
}

void batch_col2im(const double* col, std::size_t batch, const Geometry& g, double* images) {
  const std::size_t p = g.cols(), ld = batch * p, plane = g.channels * g.height * g.width;
  for (std::size_t b = 0; b < batch; ++b) col2im(col + b * p, g, images + b * plane, ld);
}

Tensor conv_forward(const Layer& l, const Tensor& x) {
  const auto& s = l.spec;
  require_rank(x, 4, s);
  require_dim(x, 1, s.in_channels, s);
  const Geometry g = conv_geometry(s, x.shape());
  const std::size_t batch = x.dim(0), k = g.rows(), p = g.cols();
  if (use_phases(g, s.filters)) {
    const Phases L = phase_layout(g);
    Tensor y = Tensor::uninitialized({batch, s.filters, g.grid_h, g.grid_w});
    const std::size_t in_plane = g.channels * g.height * g.width;
    double* ph = scratch(1, g.channels * L.s * L.s * L.plane());
    double* acc = scratch(2, s.filters * L.grid(g));
    for (std::size_t b = 0; b < batch; ++b) {
      to_phases(x.ptr() + b * in_plane, g, L, ph);
      std::fill_n(acc, s.filters * L.grid(g), 0.0);
      phase_gather(ph, l.params[0].ptr(), g, L, s.filters, acc);
      from_grid(acc, g, L, s.filters, l.params[1].ptr(), y.ptr() + b * s.filters * p);
    }
    return y;
  }
  double* col = scratch(1, k * batch * p);
  batch_im2col(x.ptr(), batch, g, col);
  double* out = scratch(0, s.filters * batch * p);
  const double* bias = l.params[1].ptr();
  for (std::size_t f = 0; f < s.filters; ++f) std::fill_n(out + f * batch * p, batch * p, bias[f]);
  gemm_nn(s.filters, batch * p, k, l.params[0].ptr(), col, out);
  Tensor y = Tensor::uninitialized({batch, s.filters, g.grid_h, g.grid_w});
  to_batch_major(out, batch, s.filters, p, y.ptr());
  return y;
}

Tensor transpose_forward(const Layer& l, const Tensor& x) {
  const auto& s = l.spec;
  require_rank(x, 4, s);
  require_dim(x, 1, s.in_channels, s);
  const Geometry g = transpose_geometry(s, x.shape());
  const std::size_t batch = x.dim(0), k = g.rows(), p = g.cols();
  const std::size_t out_plane = g.height * g.width;
  if (use_phases(g, s.in_channels)) {
    const Phases L = phase_layout(g);
    Tensor y = Tensor::uninitialized({batch, s.filters, g.height, g.width});
    double* ph = scratch(1, g.channels * L.s * L.s * L.plane());
    double* grid = scratch(2, s.in_channels * L.grid(g));
    for (std::size_t b = 0; b < batch; ++b) {
      to_grid(x.ptr() + b * s.in_channels * p, g, L, s.in_channels, grid);
      std::fill_n(ph, g.channels * L.s * L.s * L.plane(), 0.0);
      phase_scatter(grid, l.params[0].ptr(), g, L, s.in_channels, ph);
      from_phases(ph, g, L, l.params[1].ptr(), y.ptr() + b * s.filters * out_plane);
    }
    return y;
  }
  double* xin = scratch(0, s.in_channels * batch * p);
  to_channel_major(x.ptr(), batch, s.in_channels, p, xin);
  double* col = scratch(1, k * batch * p);
  gemm_tn(k, batch * p, s.in_channels, l.params[0].ptr(), xin, col, 0.0);
  Tensor y = Tensor::uninitialized({batch, s.filters, g.height, g.width});
  const double* bias = l.params[1].ptr();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t f = 0; f < s.filters; ++f) std::fill_n(y.ptr() + (b * s.filters + f) * out_plane, out_plane, bias[f]);
  batch_col2im(col, batch, g, y.ptr());
  return y;
}

Tensor dense_forward(const Layer& l, const Tensor& x) {
  const auto& s = l.spec;
  require_rank(x, 2, s);
  require_dim(x, 1, s.in_features, s);
  const std::size_t batch = x.dim(0);
  Tensor y = Tensor::uninitialized({batch, s.out_features});
  const double* bias = l.params[1].ptr();
  for (std::size_t b = 0; b < batch; ++b) std::copy_n(bias, s.out_features, y.ptr() + b * s.out_features);
  gemm_nn(batch, s.out_features, s.in_features, x.ptr(), l.params[0].ptr(), y.ptr());
  return y;
}

Tensor embedding_forward(const Layer& l, const Tensor& x) {
  const auto& s = l.spec;
  if (x.rank() != 1 && !(x.rank() == 2 && x.dim(1) == 1))
    throw ShapeError("embedding: expected [batch] class indices, got " + shape_string(x.shape()));
  const std::size_t batch = x.dim(0);
  Tensor y = Tensor::uninitialized({batch, s.embed_dim});
  for (std::size_t b = 0; b < batch; ++b) {
    const double v = x[b];
    if (!(v >= 0.0) || v != std::floor(v) || v >= static_cast<double>(s.vocab))
      throw DomainError("embedding: index " + std::to_string(v) + " outside vocabulary of " + std::to_string(s.vocab));
    const auto row = static_cast<std::size_t>(v);
    std::copy_n(l.params[0].ptr() + row * s.embed_dim, s.embed_dim, y.ptr() + b * s.embed_dim);
  }
  return y;
}

}  // namespace

// ---------------------------------------------------------------------------

ForwardResult forward(Layer& layer, const Tensor& x, Mode mode, Rng* rng, bool update_stats) {
  const auto& s = layer.spec;
  ForwardResult r;
  r.cache.owner = &layer;
  r.cache.kind = s.kind;
  r.cache.input_shape = x.shape();

  switch (s.kind) {
    case LayerKind::conv2d:
      r.output = conv_forward(layer, x);
      r.cache.saved.push_back(x);
      break;
    case LayerKind::conv2d_transpose:
      r.output = transpose_forward(layer, x);
      r.cache.saved.push_back(x);
      break;
    case LayerKind::dense:
      r.output = dense_forward(layer, x);
      r.cache.saved.push_back(x);
      break;
    case LayerKind::embedding:
      r.output = embedding_forward(layer, x);
      r.cache.saved.push_back(x);
      break;
    case LayerKind::batchnorm: {
      if (x.rank() < 2) throw ShapeError("batchnorm: expected [batch, channels, ...], got " + shape_string(x.shape()));
      require_dim(x, 1, s.channels, s);
      const auto [channels, spatial] = channel_layout(x);
      const std::size_t batch = x.dim(0);
      const double count = static_cast<double>(batch * spatial);
      const double* gamma = layer.params[0].ptr();
      const double* beta = layer.params[1].ptr();
      Tensor xhat = Tensor::uninitialized(x.shape());
      Tensor inv_std({channels});
      r.output = Tensor::uninitialized(x.shape());
      const bool use_batch = mode == Mode::train;
      for (std::size_t c = 0; c < channels; ++c) {
        double mean, var;
        if (use_batch) {
          double sum = 0.0;
          for (std::size_t b = 0; b < batch; ++b) {
            const double* p = x.ptr() + (b * channels + c) * spatial;
            for (std::size_t i = 0; i < spatial; ++i) sum += p[i];
          }
          mean = sum / count;
          double sq = 0.0;
          for (std::size_t b = 0; b < batch; ++b) {
            const double* p = x.ptr() + (b * channels + c) * spatial;
            for (std::size_t i = 0; i < spatial; ++i) sq += (p[i] - mean) * (p[i] - mean);
          }
          var = sq / count;
          if (update_stats) {
            double& rm = layer.buffers[0][c];
            double& rv = layer.buffers[1][c];
            rm = s.momentum * rm + (1.0 - s.momentum) * mean;
            rv = s.momentum * rv + (1.0 - s.momentum) * var;
          }
        } else {
          mean = layer.buffers[0][c];
          var = layer.buffers[1][c];
        }
        const double inv = 1.0 / std::sqrt(var + s.epsilon);
        inv_std[c] = inv;
        for (std::size_t b = 0; b < batch; ++b) {
          const std::size_t off = (b * channels + c) * spatial;
          for (std::size_t i = 0; i < spatial; ++i) {
            const double h = (x[off + i] - mean) * inv;
            xhat[off + i] = h;
            r.output[off + i] = gamma[c] * h + beta[c];
          }
        }
      }
      r.cache.batch_stats = use_batch;
      r.cache.saved.push_back(std::move(xhat));
      r.cache.saved.push_back(std::move(inv_std));
      break;
    }
    case LayerKind::leaky_relu:
    case LayerKind::relu: {
      const double slope = s.kind == LayerKind::relu ? 0.0 : s.alpha;
      r.output = Tensor::uninitialized(x.shape());
      const double* in = x.ptr();
      double* out = r.output.ptr();
      const double factor[2] = {slope, 1.0};  // indexed rather than branched: signs are unpredictable
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = in[i] * factor[in[i] > 0.0];
      r.cache.saved.push_back(x);
      break;
    }
    case LayerKind::tanh:
      r.output = Tensor::uninitialized(x.shape());
      for (std::size_t i = 0; i < x.size(); ++i) r.output[i] = std::tanh(x[i]);
      r.cache.saved.push_back(r.output);
      break;
    case LayerKind::sigmoid:
      r.output = Tensor::uninitialized(x.shape());
      for (std::size_t i = 0; i < x.size(); ++i) r.output[i] = stable_sigmoid(x[i]);
      r.cache.saved.push_back(r.output);
      break;
    case LayerKind::softmax: {
      require_rank(x, 2, s);
      const std::size_t rows = x.dim(0), cols = x.dim(1);
      r.output = Tensor::uninitialized(x.shape());
      for (std::size_t i = 0; i < rows; ++i) {
        const double* in = x.ptr() + i * cols;
        double* out = r.output.ptr() + i * cols;
        const double peak = *std::max_element(in, in + cols);
        double sum = 0.0;
        for (std::size_t j = 0; j < cols; ++j) sum += out[j] = std::exp(in[j] - peak);
        for (std::size_t j = 0; j < cols; ++j) out[j] /= sum;
      }
      r.cache.saved.push_back(r.output);
      break;
    }
    case LayerKind::dropout:
      if (mode == Mode::eval || s.rate == 0.0) {
        r.output = x;
      } else {
        if (!rng) throw ContractError("dropout: train-mode forward needs a random generator");
        // Each 64-bit draw decides four elements: element j of a draw is
        // kept when its 16-bit field is at least round(rate * 65536).
        Tensor mask = Tensor::uninitialized(x.shape());
        const double keep_scale = 1.0 / (1.0 - s.rate);
        const auto bias = 65536u - static_cast<std::uint32_t>(std::llround(s.rate * 65536.0));
        double* m = mask.ptr();
        for (std::size_t i = 0; i < mask.size(); i += 4) {
          const std::uint64_t bits = rng->next_u64();
          const std::size_t n = std::min<std::size_t>(4, mask.size() - i);
          for (std::size_t j = 0; j < n; ++j) {
            const auto field = static_cast<std::uint32_t>((bits >> (16 * j)) & 0xffff);
            m[i + j] = keep_scale * static_cast<double>((field + bias) >> 16);  // branch-free keep test
          }
        }
        r.output = Tensor::uninitialized(x.shape());
        const double* in = x.ptr();
        double* out = r.output.ptr();
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = in[i] * m[i];
        r.cache.saved.push_back(std::move(mask));
      }
      break;
    case LayerKind::flatten: {
      if (x.rank() < 1) throw ShapeError("flatten: scalar input");
      Shape out{x.dim(0)};
      if (s.target_shape.empty()) {
        out.push_back(x.size() / x.dim(0));
      } else {
        out.insert(out.end(), s.target_shape.begin(), s.target_shape.end());
      }
      if (shape_size(out) != x.size())
        throw ShapeError("flatten: cannot view " + shape_string(x.shape()) + " as " + shape_string(out));
      r.output = x.reshaped(out);
      break;
    }
    case LayerKind::concat_channels:
      throw ContractError("concat_channels takes two inputs; use nn::concat_channels");
  }
  r.cache.output_shape = r.output.shape();
  return r;
}

BackwardResult backward(const Layer& layer, const LayerCache& cache, const Tensor& g, bool param_grads, bool input_grad) {
  const auto& s = layer.spec;
  if (cache.owner != &layer || cache.kind != s.kind)
    throw ContractError("backward: cache was produced by a different layer (" + to_string(cache.kind) + " vs " +
                        to_string(s.kind) + ")");
  if (g.shape() != cache.output_shape)
    throw ShapeError(to_string(s.kind) + " backward: upstream gradient " + shape_string(g.shape()) +
                     " does not match output " + shape_string(cache.output_shape));

  BackwardResult r;
  if (param_grads)
    for (const auto& p : layer.params) r.grad_params.push_back(Tensor::zeros_like(p));
  if (!input_grad && !param_grads) return r;
  const bool accumulates =
      s.kind == LayerKind::conv2d || s.kind == LayerKind::conv2d_transpose || s.kind == LayerKind::embedding;
  if (input_grad || s.kind == LayerKind::batchnorm) {
    r.grad_input = accumulates ? Tensor(cache.input_shape) : Tensor::uninitialized(cache.input_shape);
  } else if (layer.params.empty()) {
    return r;
  }

  switch (s.kind) {
    case LayerKind::conv2d: {
      const Tensor& x = cache.saved[0];
      const Geometry geo = conv_geometry(s, x.shape());
      const std::size_t batch = x.dim(0), k = geo.rows(), p = geo.cols(), n = batch * p;
      if (use_phases(geo, s.filters)) {
        const Phases L = phase_layout(geo);
        const std::size_t in_plane = geo.channels * geo.height * geo.width;
        const std::size_t ph_size = geo.channels * L.s * L.s * L.plane();
        double* ph = scratch(0, ph_size);
        double* grid = scratch(2, s.filters * L.grid(geo));
        for (std::size_t b = 0; b < batch; ++b) {
          to_grid(g.ptr() + b * s.filters * p, geo, L, s.filters, grid);
          if (param_grads) {
            to_phases(x.ptr() + b * in_plane, geo, L, ph);
            phase_weight_grad(ph, grid, geo, L, s.filters, r.grad_params[0].ptr());
          }
          if (input_grad) {
            std::fill_n(ph, ph_size, 0.0);
            phase_scatter(grid, layer.params[0].ptr(), geo, L, s.filters, ph);
            from_phases(ph, geo, L, nullptr, r.grad_input.ptr() + b * in_plane);
          }
        }
        if (param_grads) add_plane_sums(g.ptr(), batch, s.filters, p, r.grad_params[1].ptr());
        break;
      }
      double* gcm = scratch(0, s.filters * n);
      to_channel_major(g.ptr(), batch, s.filters, p, gcm);
      if (param_grads) {
        double* col = scratch(1, k * n);
        batch_im2col(x.ptr(), batch, geo, col);
        gemm_nt(s.filters, k, n, gcm, col, r.grad_params[0].ptr(), 0.0);
        double* db = r.grad_params[1].ptr();
        for (std::size_t f = 0; f < s.filters; ++f)
          for (std::size_t i = 0; i < n; ++i) db[f] += gcm[f * n + i];
      }
      if (!input_grad) break;
      double* dcol = scratch(2, k * n);
      gemm_tn(k, n, s.filters, layer.params[0].ptr(), gcm, dcol, 0.0);
      batch_col2im(dcol, batch, geo, r.grad_input.ptr());
      break;
    }
    case LayerKind::conv2d_transpose: {
      const Tensor& x = cache.saved[0];
      const Geometry geo = transpose_geometry(s, x.shape());
      const std::size_t batch = x.dim(0), k = geo.rows(), p = geo.cols(), n = batch * p;
      const std::size_t out_plane = geo.height * geo.width;
      if (use_phases(geo, s.in_channels)) {
        const Phases L = phase_layout(geo);
        double* ph = scratch(0, geo.channels * L.s * L.s * L.plane());
        double* grid = scratch(2, s.in_channels * L.grid(geo));
        for (std::size_t b = 0; b < batch; ++b) {
          to_phases(g.ptr() + b * s.filters * out_plane, geo, L, ph);
          if (param_grads) {
            to_grid(x.ptr() + b * s.in_channels * p, geo, L, s.in_channels, grid);
            phase_weight_grad(ph, grid, geo, L, s.in_channels, r.grad_params[0].ptr());
          }
          if (input_grad) {
            std::fill_n(grid, s.in_channels * L.grid(geo), 0.0);
            phase_gather(ph, layer.params[0].ptr(), geo, L, s.in_channels, grid);
            from_grid(grid, geo, L, s.in_channels, nullptr, r.grad_input.ptr() + b * s.in_channels * p);
          }
        }
        if (param_grads) add_plane_sums(g.ptr(), batch, s.filters, out_plane, r.grad_params[1].ptr());
        break;
      }
      double* dcol = scratch(1, k * n);
      batch_im2col(g.ptr(), batch, geo, dcol);
      if (input_grad) {
        double* dx = scratch(2, s.in_channels * n);
        gemm_nn(s.in_channels, n, k, layer.params[0].ptr(), dcol, dx, 0.0);
        to_batch_major(dx, batch, s.in_channels, p, r.grad_input.ptr());
      }
      if (!param_grads) break;
      double* xin = scratch(0, s.in_channels * n);
      to_channel_major(x.ptr(), batch, s.in_channels, p, xin);
      gemm_nt(s.in_channels, k, n, xin, dcol, r.grad_params[0].ptr(), 0.0);
      double* db = r.grad_params[1].ptr();
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t f = 0; f < s.filters; ++f) {
          const double* gp = g.ptr() + (b * s.filters + f) * out_plane;
          for (std::size_t i = 0; i < out_plane; ++i) db[f] += gp[i];
        }
      break;
    }
    case LayerKind::dense: {
      const Tensor& x = cache.saved[0];
      const std::size_t batch = x.dim(0);
      if (param_grads) {
        gemm_tn(s.in_features, s.out_features, batch, x.ptr(), g.ptr(), r.grad_params[0].ptr(), 0.0);
        double* db = r.grad_params[1].ptr();
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t j = 0; j < s.out_features; ++j) db[j] += g[b * s.out_features + j];
      }
      if (input_grad)
        gemm_nt(batch, s.in_features, s.out_features, g.ptr(), layer.params[0].ptr(), r.grad_input.ptr(), 0.0);
      break;
    }
    case LayerKind::embedding: {
      if (!param_grads) break;
      const Tensor& x = cache.saved[0];
      double* dw = r.grad_params[0].ptr();
      for (std::size_t b = 0; b < x.dim(0); ++b) {
        const auto row = static_cast<std::size_t>(x[b]);
        for (std::size_t j = 0; j < s.embed_dim; ++j) dw[row * s.embed_dim + j] += g[b * s.embed_dim + j];
      }
      break;
    }
    case LayerKind::batchnorm: {
      const Tensor& xhat = cache.saved[0];
      const Tensor& inv_std = cache.saved[1];
      const auto [channels, spatial] = channel_layout(xhat);
      const std::size_t batch = xhat.dim(0);
      const double count = static_cast<double>(batch * spatial);
      const double* gamma = layer.params[0].ptr();
      for (std::size_t c = 0; c < channels; ++c) {
        double sum_g = 0.0, sum_gx = 0.0;
        for (std::size_t b = 0; b < batch; ++b) {
          const std::size_t off = (b * channels + c) * spatial;
          for (std::size_t i = 0; i < spatial; ++i) {
            sum_g += g[off + i];
            sum_gx += g[off + i] * xhat[off + i];
          }
        }
        if (param_grads) {
          r.grad_params[0][c] = sum_gx;
          r.grad_params[1][c] = sum_g;
        }
        const double scale = gamma[c] * inv_std[c];
        for (std::size_t b = 0; b < batch; ++b) {
          const std::size_t off = (b * channels + c) * spatial;
          for (std::size_t i = 0; i < spatial; ++i) {
            r.grad_input[off + i] =
                cache.batch_stats ? scale * (g[off + i] - sum_g / count - xhat[off + i] * sum_gx / count)
                                  : scale * g[off + i];
          }
        }
      }
      break;
    }
    case LayerKind::leaky_relu:
    case LayerKind::relu: {
      const double slope = s.kind == LayerKind::relu ? 0.0 : s.alpha;
      const Tensor& x = cache.saved[0];
      const double* in = x.ptr();
      const double* up = g.ptr();
      double* out = r.grad_input.ptr();
      const double factor[2] = {slope, 1.0};
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = up[i] * factor[in[i] > 0.0];
      break;
    }
    case LayerKind::tanh: {
      const Tensor& y = cache.saved[0];
      for (std::size_t i = 0; i < y.size(); ++i) r.grad_input[i] = g[i] * (1.0 - y[i] * y[i]);
      break;
    }
    case LayerKind::sigmoid: {
      const Tensor& y = cache.saved[0];
      for (std::size_t i = 0; i < y.size(); ++i) r.grad_input[i] = g[i] * y[i] * (1.0 - y[i]);
      break;
    }
    case LayerKind::softmax: {
      const Tensor& y = cache.saved[0];
      const std::size_t rows = y.dim(0), cols = y.dim(1);
      for (std::size_t i = 0; i < rows; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < cols; ++j) dot += g[i * cols + j] * y[i * cols + j];
        for (std::size_t j = 0; j < cols; ++j) r.grad_input[i * cols + j] = y[i * cols + j] * (g[i * cols + j] - dot);
      }
      break;
    }
    case LayerKind::dropout:
      if (cache.saved.empty()) {
        r.grad_input = g;
      } else {
        const Tensor& mask = cache.saved[0];
        const double* up = g.ptr();
        const double* m = mask.ptr();
        double* out = r.grad_input.ptr();
        for (std::size_t i = 0; i < g.size(); ++i) out[i] = up[i] * m[i];
      }
      break;
    case LayerKind::flatten:
      r.grad_input = g.reshaped(cache.input_shape);
      break;
    case LayerKind::concat_channels:
      throw ContractError("concat_channels takes two inputs; use nn::split_channels");
  }
  if (!input_grad) r.grad_input = Tensor();
  return r;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.rank() != 4 || b.rank() != 4 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
    throw ShapeError("concat_channels: cannot join " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
  const std::size_t batch = a.dim(0), plane = a.dim(2) * a.dim(3);
  const std::size_t ca = a.dim(1) * plane, cb = b.dim(1) * plane;
  Tensor out({batch, a.dim(1) + b.dim(1), a.dim(2), a.dim(3)});
  for (std::size_t n = 0; n < batch; ++n) {
    std::copy_n(a.ptr() + n * ca, ca, out.ptr() + n * (ca + cb));
    std::copy_n(b.ptr() + n * cb, cb, out.ptr() + n * (ca + cb) + ca);
  }
  return out;
}

std::pair<Tensor, Tensor> split_channels(const Tensor& g, std::size_t channels_a) {
  if (g.rank() != 4 || channels_a == 0 || channels_a >= g.dim(1))
    throw ShapeError("split_channels: invalid split of " + shape_string(g.shape()));
  const std::size_t batch = g.dim(0), plane = g.dim(2) * g.dim(3);
  const std::size_t channels_b = g.dim(1) - channels_a;
  const std::size_t ca = channels_a * plane, cb = channels_b * plane;
  Tensor a({batch, channels_a, g.dim(2), g.dim(3)});
  Tensor b({batch, channels_b, g.dim(2), g.dim(3)});
  for (std::size_t n = 0; n < batch; ++n) {
    std::copy_n(g.ptr() + n * (ca + cb), ca, a.ptr() + n * ca);
    std::copy_n(g.ptr() + n * (ca + cb) + ca, cb, b.ptr() + n * cb);
  }
  return {std::move(a), std::move(b)};
}

}  // namespace coughgan::nn
