#include "bfs/nn_ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "bfs/errors.hpp"
#include "bfs/threads.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace bfs::nn {

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::size_t conv_out_extent(std::size_t n, std::size_t k, std::size_t stride, Padding pad) {
  if (pad == Padding::kSame) return (n + stride - 1) / stride;
  if (n < k) throw std::invalid_argument("conv: valid padding with input smaller than kernel");
  return (n - k) / stride + 1;
}

void same_pad_amounts(std::size_t n, std::size_t k, std::size_t stride, std::size_t& lo,
                      std::size_t& hi) {
  const std::size_t out = (n + stride - 1) / stride;
  const std::size_t needed = (out - 1) * stride + k;
  const std::size_t total = needed > n ? needed - n : 0;
  lo = total / 2;
  hi = total - lo;
}

namespace {

struct PadInfo {
  std::size_t lo_f = 0, lo_t = 0;
  std::size_t pf = 0, pt = 0;  // padded extents
};

PadInfo pad_info(const Shape& in, const ConvLayer& layer) {
  PadInfo p;
  std::size_t hi_f = 0, hi_t = 0;
  if (layer.pad == Padding::kSame) {
    same_pad_amounts(in.f, layer.kh(), layer.stride_f, p.lo_f, hi_f);
    same_pad_amounts(in.t, layer.kw(), layer.stride_t, p.lo_t, hi_t);
  }
  p.pf = in.f + p.lo_f + hi_f;
  p.pt = in.t + p.lo_t + hi_t;
  return p;
}

// Zero-padded copy of one (c,b) slab.
void pad_slab(const double* src, std::size_t f, std::size_t t, const PadInfo& p, double* dst) {
  std::fill(dst, dst + p.pf * p.pt, 0.0);
  for (std::size_t it = 0; it < t; ++it) {
    double* row = dst + (it + p.lo_t) * p.pf + p.lo_f;
    const double* srow = src + it * f;
    std::copy(srow, srow + f, row);
  }
}

void check_conv_shapes(const Tensor& x, const ConvLayer& layer) {
  if (x.shape().c != layer.c_in()) {
    throw std::invalid_argument("conv2d: input has " + std::to_string(x.shape().c) +
                                " channels, layer expects " + std::to_string(layer.c_in()));
  }
  if (layer.b.shape().count() != layer.c_out()) {
    throw std::invalid_argument("conv2d: bias length != c_out");
  }
}

// ---------------------------------------------------------------------
// The convolutions are lowered onto an im2col matrix and a register-
// blocked matrix kernel. Every output element accumulates its terms in
// one fixed order (k ascending, batches ascending), so results are
// bit-identical for any thread count.
// ---------------------------------------------------------------------

#if defined(__GNUC__)
typedef double vd __attribute__((vector_size(64)));
typedef double vdu __attribute__((vector_size(64), aligned(8), may_alias));
constexpr std::size_t kVL = 8;

inline vd vload(const double* p) { return *reinterpret_cast<const vdu*>(p); }
inline void vstore(double* p, vd v) { *reinterpret_cast<vdu*>(p) = v; }
inline vd vbroadcast(double s) { return vd{s, s, s, s, s, s, s, s}; }
#endif

constexpr std::size_t kMR = 6;   // rows per register tile
constexpr std::size_t kNRV = 2;  // vectors per tile row

#if defined(__GNUC__)
// One register tile of MR rows by 2 vectors against a packed K x NR
// panel; K is accumulated in ascending order.
template <std::size_t MR>
void gemm_nn_tile(const double* A, std::size_t lda, const double* panel, double* C,
                  std::size_t ldc, std::size_t K, std::size_t m, std::size_t n) {
  constexpr std::size_t NR = kNRV * kVL;
  vd acc[MR][kNRV];
  for (std::size_t r = 0; r < MR; ++r) {
    for (std::size_t v = 0; v < kNRV; ++v) acc[r][v] = vload(C + (m + r) * ldc + n + v * kVL);
  }
  for (std::size_t k = 0; k < K; ++k) {
    const vd b0 = vload(panel + k * NR);
    const vd b1 = vload(panel + k * NR + kVL);
    for (std::size_t r = 0; r < MR; ++r) {
      const vd a = vbroadcast(A[(m + r) * lda + k]);
      acc[r][0] += a * b0;
      acc[r][1] += a * b1;
    }
  }
  for (std::size_t r = 0; r < MR; ++r) {
    for (std::size_t v = 0; v < kNRV; ++v) vstore(C + (m + r) * ldc + n + v * kVL, acc[r][v]);
  }
}
#endif

// C[M x N] += A[M x K] * B[K x N], all row-major with the given leading
// dimensions. Rows of C are processed in tiles of kMR x (kNRV * kVL).
void gemm_nn_block(const double* A, std::size_t lda, const double* B, std::size_t ldb,
                   double* C, std::size_t ldc, std::size_t M, std::size_t K, std::size_t n0,
                   std::size_t n1) {
#if defined(__GNUC__)
  constexpr std::size_t NR = kNRV * kVL;
  // n-tiles outermost; the K x NR panel of B is packed contiguously once
  // and then consumed by every block of C rows.
  double* panel = scratch(kScratchPanel, K * NR);
  std::size_t n = n0;
  for (; n + NR <= n1; n += NR) {
    for (std::size_t k = 0; k < K; ++k) {
      const double* src = B + k * ldb + n;
      vstore(panel + k * NR, vload(src));
      vstore(panel + k * NR + kVL, vload(src + kVL));
    }
    std::size_t m = 0;
    while (m < M) {
      const std::size_t mr = std::min(M - m, kMR);
      switch (mr) {
        case 6: gemm_nn_tile<6>(A, lda, panel, C, ldc, K, m, n); break;
        case 5: gemm_nn_tile<5>(A, lda, panel, C, ldc, K, m, n); break;
        case 4: gemm_nn_tile<4>(A, lda, panel, C, ldc, K, m, n); break;
        case 3: gemm_nn_tile<3>(A, lda, panel, C, ldc, K, m, n); break;
        case 2: gemm_nn_tile<2>(A, lda, panel, C, ldc, K, m, n); break;
        default: gemm_nn_tile<1>(A, lda, panel, C, ldc, K, m, n); break;
      }
      m += mr;
    }
  }
  for (; n < n1; ++n) {
    for (std::size_t m = 0; m < M; ++m) {
      double acc = C[m * ldc + n];
      for (std::size_t k = 0; k < K; ++k) acc += A[m * lda + k] * B[k * ldb + n];
      C[m * ldc + n] = acc;
    }
  }
#else
  for (std::size_t m = 0; m < M; ++m) {
    for (std::size_t n = n0; n < n1; ++n) {
      double acc = C[m * ldc + n];
      for (std::size_t k = 0; k < K; ++k) acc += A[m * lda + k] * B[k * ldb + n];
      C[m * ldc + n] = acc;
    }
  }
#endif
}

// Threaded wrapper: the N axis is split across threads; each output
// element is owned by exactly one thread.
void gemm_nn(const double* A, std::size_t lda, const double* B, std::size_t ldb, double* C,
             std::size_t ldc, std::size_t M, std::size_t K, std::size_t N) {
  const int threads = std::min<int>(max_threads(), std::max<int>(1, static_cast<int>(N / 64)));
  if (threads <= 1) {
    gemm_nn_block(A, lda, B, ldb, C, ldc, M, K, 0, N);
    return;
  }
#ifdef _OPENMP
#pragma omp parallel num_threads(threads)
  {
    const int tid = omp_get_thread_num();
    const int nth = omp_get_num_threads();
    constexpr std::size_t NR = kNRV * kVL;
    const std::size_t tiles = (N + NR - 1) / NR;
    const std::size_t chunk = (tiles + nth - 1) / nth * NR;  // tile-aligned split
    const std::size_t n0 = std::min(N, static_cast<std::size_t>(tid) * chunk);
    const std::size_t n1 = std::min(N, n0 + chunk);
    if (n0 < n1) gemm_nn_block(A, lda, B, ldb, C, ldc, M, K, n0, n1);
  }
#else
  gemm_nn_block(A, lda, B, ldb, C, ldc, M, K, 0, N);
#endif
}

// C[M x N] += A[M x K] * B[N x K]^T: both operands are traversed along
// their contiguous K axis (dot products). Used for the weight gradient.
void gemm_nt_block(const double* A, std::size_t lda, const double* B, std::size_t ldb,
                   double* C, std::size_t ldc, std::size_t K, std::size_t m0, std::size_t m1,
                   std::size_t N) {
#if defined(__GNUC__)
  for (std::size_t m = m0; m < m1; ++m) {
    const double* arow = A + m * lda;
    std::size_t n = 0;
    for (; n + 4 <= N; n += 4) {
      vd p0 = vbroadcast(0.0), p1 = p0, p2 = p0, p3 = p0;
      std::size_t k = 0;
      for (; k + kVL <= K; k += kVL) {
        const vd a = vload(arow + k);
        p0 += a * vload(B + (n + 0) * ldb + k);
        p1 += a * vload(B + (n + 1) * ldb + k);
        p2 += a * vload(B + (n + 2) * ldb + k);
        p3 += a * vload(B + (n + 3) * ldb + k);
      }
      double s[4] = {0, 0, 0, 0};
      for (std::size_t l = 0; l < kVL; ++l) {
        s[0] += p0[l];
        s[1] += p1[l];
        s[2] += p2[l];
        s[3] += p3[l];
      }
      for (; k < K; ++k) {
        s[0] += arow[k] * B[(n + 0) * ldb + k];
        s[1] += arow[k] * B[(n + 1) * ldb + k];
        s[2] += arow[k] * B[(n + 2) * ldb + k];
        s[3] += arow[k] * B[(n + 3) * ldb + k];
      }
      for (int q = 0; q < 4; ++q) C[m * ldc + n + q] += s[q];
    }
    for (; n < N; ++n) {
      vd p = vbroadcast(0.0);
      std::size_t k = 0;
      for (; k + kVL <= K; k += kVL) p += vload(arow + k) * vload(B + n * ldb + k);
      double s = 0.0;
      for (std::size_t l = 0; l < kVL; ++l) s += p[l];
      for (; k < K; ++k) s += arow[k] * B[n * ldb + k];
      C[m * ldc + n] += s;
    }
  }
#else
  for (std::size_t m = m0; m < m1; ++m) {
    for (std::size_t n = 0; n < N; ++n) {
      double acc = 0.0;
      for (std::size_t k = 0; k < K; ++k) acc += A[m * lda + k] * B[n * ldb + k];
      C[m * ldc + n] += acc;
    }
  }
#endif
}

void gemm_nt(const double* A, std::size_t lda, const double* B, std::size_t ldb, double* C,
             std::size_t ldc, std::size_t M, std::size_t K, std::size_t N) {
  const int threads = std::min<int>(max_threads(), std::max<int>(1, static_cast<int>(M)));
  if (threads <= 1) {
    gemm_nt_block(A, lda, B, ldb, C, ldc, K, 0, M, N);
    return;
  }
#ifdef _OPENMP
#pragma omp parallel num_threads(threads)
  {
    const int tid = omp_get_thread_num();
    const int nth = omp_get_num_threads();
    const std::size_t chunk = (M + nth - 1) / nth;
    const std::size_t m0 = std::min(M, static_cast<std::size_t>(tid) * chunk);
    const std::size_t m1 = std::min(M, m0 + chunk);
    if (m0 < m1) gemm_nt_block(A, lda, B, ldb, C, ldc, K, m0, m1, N);
  }
#else
  gemm_nt_block(A, lda, B, ldb, C, ldc, K, 0, M, N);
#endif
}

struct ConvGeometry {
  Shape in;
  std::size_t kh, kw, ci_n, co_n, fo, to, sf, st;
  PadInfo p;
  std::size_t k() const { return ci_n * kw * kh; }
  std::size_t s() const { return fo * to; }
  // The 1x1 stride-1 case needs no padded copy or im2col: the channel
  // slabs already form the K x N matrix.
  bool direct() const { return kh == 1 && kw == 1 && sf == 1 && st == 1; }
};

// Reused scratch per thread; avoids re-faulting hundreds of MB of fresh
// pages on every convolution call. Callers fully overwrite (or
// explicitly zero) the region they use.
enum ScratchSlot { kScratchPad, kScratchCol, kScratchGcol, kScratchWt, kScratchPanel };

double* scratch(ScratchSlot slot, std::size_t n) {
  static thread_local std::vector<double> bufs[5];
  auto& b = bufs[slot];
  if (b.size() < n) b.resize(n);
  return b.data();
}

ConvGeometry conv_geometry(const Tensor& x, const ConvLayer& layer) {
  ConvGeometry g;
  g.in = x.shape();
  g.kh = layer.kh();
  g.kw = layer.kw();
  g.ci_n = layer.c_in();
  g.co_n = layer.c_out();
  g.sf = layer.stride_f;
  g.st = layer.stride_t;
  g.fo = conv_out_extent(g.in.f, g.kh, g.sf, layer.pad);
  g.to = conv_out_extent(g.in.t, g.kw, g.st, layer.pad);
  g.p = pad_info(g.in, layer);
  return g;
}

// Short-run copy without a libc call; the runs here are ~100 doubles.
inline void copy_run(double* dst, const double* src, std::size_t n) {
#if defined(__GNUC__)
  std::size_t i = 0;
  for (; i + kVL <= n; i += kVL) vstore(dst + i, vload(src + i));
  for (; i < n; ++i) dst[i] = src[i];
#else
  for (std::size_t i = 0; i < n; ++i) dst[i] = src[i];
#endif
}

// Rows follow the weight layout: r = (ci*kw + j)*kh + i, i fastest.
void im2col(const ConvGeometry& g, const double* xpad, double* B) {
  const std::int64_t rows = static_cast<std::int64_t>(g.k());
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(max_threads())
#endif
  for (std::int64_t r = 0; r < rows; ++r) {
    const std::size_t i = static_cast<std::size_t>(r) % g.kh;
    const std::size_t j = (static_cast<std::size_t>(r) / g.kh) % g.kw;
    const std::size_t ci = static_cast<std::size_t>(r) / (g.kh * g.kw);
    const double* src_base = xpad + ci * g.p.pf * g.p.pt;
    double* dst = B + static_cast<std::size_t>(r) * g.s();
    for (std::size_t ot = 0; ot < g.to; ++ot) {
      const double* src = src_base + (ot * g.st + j) * g.p.pf + i;
      if (g.sf == 1) {
        copy_run(dst, src, g.fo);
      } else {
        for (std::size_t of = 0; of < g.fo; ++of) dst[of] = src[of * g.sf];
      }
      dst += g.fo;
    }
  }
}

// Adjoint of im2col: accumulate rows back into the padded image.
// Parallel over input channels; each channel's 9 (or kh*kw) rows are
// applied in the same fixed order.
void col2im_add(const ConvGeometry& g, const double* B, double* xpad) {
  const std::int64_t channels = static_cast<std::int64_t>(g.ci_n);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(max_threads())
#endif
  for (std::int64_t ci = 0; ci < channels; ++ci) {
    double* dst_base = xpad + static_cast<std::size_t>(ci) * g.p.pf * g.p.pt;
    for (std::size_t j = 0; j < g.kw; ++j) {
      for (std::size_t i = 0; i < g.kh; ++i) {
        const std::size_t r = (static_cast<std::size_t>(ci) * g.kw + j) * g.kh + i;
        const double* src = B + r * g.s();
        for (std::size_t ot = 0; ot < g.to; ++ot) {
          double* dst = dst_base + (ot * g.st + j) * g.p.pf + i;
          if (g.sf == 1) {
            for (std::size_t of = 0; of < g.fo; ++of) dst[of] += src[of];
          } else {
            for (std::size_t of = 0; of < g.fo; ++of) dst[of * g.sf] += src[of];
          }
          src += g.fo;
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d_forward(const Tensor& x, const ConvLayer& layer) {
  check_conv_shapes(x, layer);
  const ConvGeometry g = conv_geometry(x, layer);
  Tensor y(Shape{g.fo, g.to, g.co_n, g.in.b});

  const std::size_t S = g.s();
  std::vector<double> xpad;
  std::vector<double> colbuf;
  if (!g.direct()) {
    xpad.resize(g.p.pf * g.p.pt * g.ci_n);
    colbuf.resize(g.k() * S);
  }

  for (std::size_t bi = 0; bi < g.in.b; ++bi) {
    const double* B;
    if (g.direct()) {
      B = x.slab(0, bi);  // channel slabs are already a K x N matrix
    } else {
      for (std::size_t ci = 0; ci < g.ci_n; ++ci) {
        pad_slab(x.slab(ci, bi), g.in.f, g.in.t, g.p, xpad.data() + ci * g.p.pf * g.p.pt);
      }
      im2col(g, xpad.data(), colbuf.data());
      B = colbuf.data();
    }
    double* C = y.slab(0, bi);
    for (std::size_t co = 0; co < g.co_n; ++co) {
      std::fill(C + co * S, C + (co + 1) * S, layer.b.data()[co]);
    }
    gemm_nn(layer.w.data(), g.k(), B, S, C, S, g.co_n, g.k(), S);
  }
  return y;
}

Tensor conv2d_backward(const Tensor& grad_out, const Tensor& x, const ConvLayer& layer,
                       Tensor& grad_w, Tensor& grad_b) {
  check_conv_shapes(x, layer);
  const ConvGeometry g = conv_geometry(x, layer);
  const Shape os = grad_out.shape();
  if (os.f != g.fo || os.t != g.to || os.c != g.co_n || os.b != g.in.b) {
    throw std::invalid_argument("conv2d_backward: grad_out shape mismatch with cached input");
  }

  grad_w = Tensor(layer.w.shape());
  grad_b = Tensor(layer.b.shape());
  Tensor grad_in(g.in);

  const std::size_t S = g.s();
  const std::size_t K = g.k();

  // Transposed weights (K x co) for the input gradient.
  std::vector<double> wt(K * g.co_n);
  for (std::size_t co = 0; co < g.co_n; ++co) {
    const double* wrow = layer.w.data() + co * K;
    for (std::size_t r = 0; r < K; ++r) wt[r * g.co_n + co] = wrow[r];
  }

  std::vector<double> xpad;
  std::vector<double> colbuf;
  std::vector<double> gcol;
  if (!g.direct()) {
    xpad.resize(g.p.pf * g.p.pt * g.ci_n);
    colbuf.resize(K * S);
    gcol.resize(K * S);
  }

  for (std::size_t bi = 0; bi < g.in.b; ++bi) {
    const double* go = grad_out.slab(0, bi);  // co x S row-major

    for (std::size_t co = 0; co < g.co_n; ++co) {
      double acc = 0.0;
      const double* row = go + co * S;
      for (std::size_t e = 0; e < S; ++e) acc += row[e];
      grad_b.data()[co] += acc;
    }

    const double* B;
    if (g.direct()) {
      B = x.slab(0, bi);
    } else {
      for (std::size_t ci = 0; ci < g.ci_n; ++ci) {
        pad_slab(x.slab(ci, bi), g.in.f, g.in.t, g.p, xpad.data() + ci * g.p.pf * g.p.pt);
      }
      im2col(g, xpad.data(), colbuf.data());
      B = colbuf.data();
    }
    // grad_w[co][r] += sum_s go[co][s] * B[r][s]
    gemm_nt(go, S, B, S, grad_w.data(), K, g.co_n, S, K);

    // grad_col[r][s] = sum_co wt[r][co] * go[co][s]
    if (g.direct()) {
      double* gi = grad_in.slab(0, bi);
      std::fill(gi, gi + K * S, 0.0);
      gemm_nn(wt.data(), g.co_n, go, S, gi, S, K, g.co_n, S);
    } else {
      std::fill(gcol.begin(), gcol.end(), 0.0);
      gemm_nn(wt.data(), g.co_n, go, S, gcol.data(), S, K, g.co_n, S);
      std::fill(xpad.begin(), xpad.end(), 0.0);
      col2im_add(g, gcol.data(), xpad.data());
      double* slab = grad_in.slab(0, bi);
      for (std::size_t ci = 0; ci < g.ci_n; ++ci) {
        const double* gp = xpad.data() + ci * g.p.pf * g.p.pt;
        for (std::size_t it = 0; it < g.in.t; ++it) {
          const double* row = gp + (it + g.p.lo_t) * g.p.pf + g.p.lo_f;
          std::copy(row, row + g.in.f, slab + (ci * g.in.t + it) * g.in.f);
        }
      }
    }
  }
  return grad_in;
}

Tensor maxpool_forward(const Tensor& x, PoolCache& cache, std::size_t extent,
                       std::size_t stride) {
  const Shape in = x.shape();
  const std::size_t fo = (in.f + stride - 1) / stride;  // ceil mode
  Tensor y(Shape{fo, in.t, in.c, in.b});
  cache.in_shape = in;
  cache.argmax.assign(y.count(), 0);

  for (std::size_t bi = 0; bi < in.b; ++bi) {
    for (std::size_t c = 0; c < in.c; ++c) {
      const double* src = x.slab(c, bi);
      double* dst = y.slab(c, bi);
      std::uint32_t* am = cache.argmax.data() + (bi * in.c + c) * in.t * fo;
      for (std::size_t t = 0; t < in.t; ++t) {
        for (std::size_t of = 0; of < fo; ++of) {
          const std::size_t begin = of * stride;
          const std::size_t end = std::min(begin + extent, in.f);
          std::size_t best = begin;
          double best_v = src[t * in.f + begin];
          for (std::size_t i = begin + 1; i < end; ++i) {
            if (src[t * in.f + i] > best_v) {
              best_v = src[t * in.f + i];
              best = i;
            }
          }
          dst[t * fo + of] = best_v;
          am[t * fo + of] = static_cast<std::uint32_t>(best);
        }
      }
    }
  }
  return y;
}

Tensor maxpool_backward(const Tensor& grad_out, const PoolCache& cache) {
  const Shape in = cache.in_shape;
  const Shape os = grad_out.shape();
  if (cache.argmax.size() != os.count()) {
    throw std::invalid_argument("maxpool_backward: cache does not match grad_out");
  }
  Tensor grad_in(in);
  for (std::size_t bi = 0; bi < os.b; ++bi) {
    for (std::size_t c = 0; c < os.c; ++c) {
      const double* go = grad_out.slab(c, bi);
      double* gi = grad_in.slab(c, bi);
      const std::uint32_t* am = cache.argmax.data() + (bi * os.c + c) * os.t * os.f;
      for (std::size_t t = 0; t < os.t; ++t) {
        for (std::size_t of = 0; of < os.f; ++of) {
          gi[t * in.f + am[t * os.f + of]] += go[t * os.f + of];
        }
      }
    }
  }
  return grad_in;
}

Tensor relu(const Tensor& x) {
  Tensor y = x;
  double* d = y.data();
  for (std::size_t i = 0; i < y.count(); ++i) d[i] = d[i] > 0.0 ? d[i] : 0.0;
  return y;
}

void relu_inplace(Tensor& x, std::vector<std::uint8_t>& mask) {
  mask.resize(x.count());
  double* d = x.data();
  for (std::size_t i = 0; i < x.count(); ++i) {
    const bool on = d[i] > 0.0;
    mask[i] = on ? 1 : 0;
    if (!on) d[i] = 0.0;
  }
}

Tensor relu_backward(const Tensor& grad_out, const std::vector<std::uint8_t>& mask) {
  if (mask.size() != grad_out.count()) {
    throw std::invalid_argument("relu_backward: mask does not match grad_out");
  }
  Tensor g = grad_out;
  double* d = g.data();
  for (std::size_t i = 0; i < g.count(); ++i) {
    if (!mask[i]) d[i] = 0.0;
  }
  return g;
}

BatchNormLayer::BatchNormLayer(std::size_t channels)
    : gamma(Shape{1, 1, channels, 1}),
      beta(Shape{1, 1, channels, 1}),
      running_mean(Shape{1, 1, channels, 1}),
      running_var(Shape{1, 1, channels, 1}) {
  gamma.fill(1.0);
  running_var.fill(1.0);
}

Tensor batchnorm_forward(const Tensor& x, BatchNormLayer& layer, BnMode mode, BnCache* cache) {
  const Shape in = x.shape();
  if (in.c != layer.gamma.shape().c) {
    throw std::invalid_argument("batchnorm: channel count mismatch");
  }
  const std::size_t per_channel = in.f * in.t * in.b;
  Tensor y(in);

  if (mode == BnMode::kTrain) {
    if (per_channel < 2) {
      throw NumericError("batchnorm: train mode needs >= 2 elements per channel");
    }
    if (cache) {
      cache->xhat = Tensor(in);
      cache->inv_std.assign(in.c, 0.0);
      cache->gamma.assign(in.c, 0.0);
    }
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(max_threads())
#endif
    for (std::size_t c = 0; c < in.c; ++c) {
      double sum = 0.0;
      for (std::size_t bi = 0; bi < in.b; ++bi) {
        const double* s = x.slab(c, bi);
        for (std::size_t e = 0; e < in.f * in.t; ++e) sum += s[e];
      }
      const double mean = sum / static_cast<double>(per_channel);
      double sq = 0.0;
      for (std::size_t bi = 0; bi < in.b; ++bi) {
        const double* s = x.slab(c, bi);
        for (std::size_t e = 0; e < in.f * in.t; ++e) {
          const double d = s[e] - mean;
          sq += d * d;
        }
      }
      const double var = sq / static_cast<double>(per_channel);
      const double inv_std = 1.0 / std::sqrt(var + layer.eps);
      const double g = layer.gamma.data()[c];
      const double b = layer.beta.data()[c];
      for (std::size_t bi = 0; bi < in.b; ++bi) {
        const double* s = x.slab(c, bi);
        double* o = y.slab(c, bi);
        double* xh = cache ? cache->xhat.slab(c, bi) : nullptr;
        for (std::size_t e = 0; e < in.f * in.t; ++e) {
          const double h = (s[e] - mean) * inv_std;
          if (xh) xh[e] = h;
          o[e] = g * h + b;
        }
      }
      if (cache) {
        cache->inv_std[c] = inv_std;
        cache->gamma[c] = g;
      }
      layer.running_mean.data()[c] =
          layer.momentum * layer.running_mean.data()[c] + (1.0 - layer.momentum) * mean;
      layer.running_var.data()[c] =
          layer.momentum * layer.running_var.data()[c] + (1.0 - layer.momentum) * var;
    }
  } else {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(max_threads())
#endif
    for (std::size_t c = 0; c < in.c; ++c) {
      const double mean = layer.running_mean.data()[c];
      const double inv_std = 1.0 / std::sqrt(layer.running_var.data()[c] + layer.eps);
      const double g = layer.gamma.data()[c];
      const double b = layer.beta.data()[c];
      const double scale = g * inv_std;
      const double shift = b - mean * scale;
      for (std::size_t bi = 0; bi < in.b; ++bi) {
        const double* s = x.slab(c, bi);
        double* o = y.slab(c, bi);
        for (std::size_t e = 0; e < in.f * in.t; ++e) o[e] = scale * s[e] + shift;
      }
    }
  }
  return y;
}

Tensor batchnorm_backward(const Tensor& grad_out, const BnCache& cache, Tensor& grad_gamma,
                          Tensor& grad_beta) {
  const Shape in = grad_out.shape();
  if (cache.xhat.shape() != in) {
    throw std::invalid_argument("batchnorm_backward: cache does not match grad_out");
  }
  const double m = static_cast<double>(in.f * in.t * in.b);
  grad_gamma = Tensor(Shape{1, 1, in.c, 1});
  grad_beta = Tensor(Shape{1, 1, in.c, 1});
  Tensor grad_in(in);

#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(max_threads())
#endif
  for (std::size_t c = 0; c < in.c; ++c) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (std::size_t bi = 0; bi < in.b; ++bi) {
      const double* g = grad_out.slab(c, bi);
      const double* xh = cache.xhat.slab(c, bi);
      for (std::size_t e = 0; e < in.f * in.t; ++e) {
        sum_g += g[e];
        sum_gx += g[e] * xh[e];
      }
    }
    grad_beta.data()[c] = sum_g;
    grad_gamma.data()[c] = sum_gx;
    const double k = cache.gamma[c] * cache.inv_std[c];
    const double mean_g = sum_g / m;
    const double mean_gx = sum_gx / m;
    for (std::size_t bi = 0; bi < in.b; ++bi) {
      const double* g = grad_out.slab(c, bi);
      const double* xh = cache.xhat.slab(c, bi);
      double* gi = grad_in.slab(c, bi);
      for (std::size_t e = 0; e < in.f * in.t; ++e) {
        gi[e] = k * (g[e] - mean_g - xh[e] * mean_gx);
      }
    }
  }
  return grad_in;
}

double mse_loss(const Tensor& pred, const Tensor& target, Tensor& grad_pred) {
  if (!(pred.shape() == target.shape())) {
    throw std::invalid_argument("mse_loss: shape mismatch");
  }
  const std::size_t n = pred.count();
  grad_pred = Tensor(pred.shape());
  double loss = 0.0;
  const double* p = pred.data();
  const double* t = target.data();
  double* g = grad_pred.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double d = p[i] - t[i];
    loss += d * d;
    g[i] = 2.0 * d / static_cast<double>(n);
  }
  return loss / static_cast<double>(n);
}

}  // namespace bfs::nn
