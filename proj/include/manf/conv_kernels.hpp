#pragma once

// Convolution kernels shared by conv2d and transposed_conv2d.
//
// Weights are laid out (A, B, k, k). A "gather" maps a B-channel map at the
// larger resolution to an A-channel map at the strided resolution; a
// "scatter" is its exact adjoint. conv2d is gather with A = c_out, and
// transposed_conv2d is scatter with A = c_in, so the two share weights of the
// same layout and are adjoint to each other.
//
// All three kernels lower to a matrix product over an unfolded patch matrix
// (rows b*k*k + ky*k + kx, one column per strided position), processed in
// fixed row chunks. Batch elements are independent jobs and weight gradients
// are summed over the batch in index order, so results do not depend on the
// thread count.

#include <Eigen/Core>
#include <algorithm>
#include <cstddef>
#include <vector>

#include "manf/parallel.hpp"
#include "manf/tensor.hpp"

namespace manf::kernels {

struct ConvGeom {
  std::size_t k = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;
};

/// Range [lo, hi) of strided positions o with 0 <= o*s + kk - pad < big and o < small.
inline void valid_range(std::size_t small, std::size_t big, std::size_t kk, const ConvGeom& g,
                        std::size_t& lo, std::size_t& hi) {
  const long s = static_cast<long>(g.stride);
  const long off = static_cast<long>(kk) - static_cast<long>(g.pad);
  const long lim = static_cast<long>(big) - 1 - off;
  if (lim < 0) {
    lo = hi = 0;
    return;
  }
  long l = off < 0 ? (-off + s - 1) / s : 0;
  long h = std::min(lim / s + 1, static_cast<long>(small));
  if (l > h) l = h;
  lo = static_cast<std::size_t>(l);
  hi = static_cast<std::size_t>(h);
}

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using ConstMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;
template <class T>
using MutMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;

/// Geometry of one (small, big) plane pair and its row chunking.
struct Unfold {
  std::size_t B, k, s, pad;
  std::size_t hs, ws, hb, wb;
  std::size_t rows_per_chunk;

  Unfold(std::size_t channels, const ConvGeom& g, std::size_t hs_, std::size_t ws_, std::size_t hb_, std::size_t wb_)
      : B(channels), k(g.k), s(g.stride), pad(g.pad), hs(hs_), ws(ws_), hb(hb_), wb(wb_) {
    constexpr std::size_t kBudget = std::size_t(1) << 20;
    const std::size_t per_row = std::max<std::size_t>(1, B * k * k * ws);
    rows_per_chunk = std::clamp<std::size_t>(kBudget / per_row, 1, std::max<std::size_t>(hs, 1));
  }
  std::size_t K() const { return B * k * k; }

  /// col(K, (y1-y0)*ws) <- patches of big (B planes of hb x wb).
  template <class T>
  void im2col(const T* big, std::size_t plane_stride, std::size_t y0, std::size_t y1, std::vector<T>& col) const {
    const std::size_t P = (y1 - y0) * ws;
    col.assign(K() * P, T(0));
    const ConvGeom g{k, s, pad};
    for (std::size_t b = 0; b < B; ++b) {
      const T* src = big + b * plane_stride;
      for (std::size_t ky = 0; ky < k; ++ky) {
        std::size_t ylo, yhi;
        valid_range(hs, hb, ky, g, ylo, yhi);
        ylo = std::max(ylo, y0);
        yhi = std::min(yhi, y1);
        for (std::size_t kx = 0; kx < k; ++kx) {
          std::size_t xlo, xhi;
          valid_range(ws, wb, kx, g, xlo, xhi);
          T* row = col.data() + ((b * k + ky) * k + kx) * P;
          for (std::size_t oy = ylo; oy < yhi; ++oy) {
            const T* srow = src + (oy * s + ky - pad) * wb + kx - pad;
            T* drow = row + (oy - y0) * ws;
            for (std::size_t ox = xlo; ox < xhi; ++ox) drow[ox] = srow[ox * s];
          }
        }
      }
    }
  }

  /// big += fold of col, the adjoint of im2col.
  template <class T>
  void col2im(const std::vector<T>& col, std::size_t y0, std::size_t y1, T* big, std::size_t plane_stride) const {
    const std::size_t P = (y1 - y0) * ws;
    const ConvGeom g{k, s, pad};
    for (std::size_t b = 0; b < B; ++b) {
      T* dst = big + b * plane_stride;
      for (std::size_t ky = 0; ky < k; ++ky) {
        std::size_t ylo, yhi;
        valid_range(hs, hb, ky, g, ylo, yhi);
        ylo = std::max(ylo, y0);
        yhi = std::min(yhi, y1);
        for (std::size_t kx = 0; kx < k; ++kx) {
          std::size_t xlo, xhi;
          valid_range(ws, wb, kx, g, xlo, xhi);
          const T* row = col.data() + ((b * k + ky) * k + kx) * P;
          for (std::size_t oy = ylo; oy < yhi; ++oy) {
            T* drow = dst + (oy * s + ky - pad) * wb + kx - pad;
            const T* srow = row + (oy - y0) * ws;
            for (std::size_t ox = xlo; ox < xhi; ++ox) drow[ox * s] += srow[ox];
          }
        }
      }
    }
  }
};

/// out (N, A, Hs, Ws) = bias + W * in (N, B, Hb, Wb)
template <class T>
void gather(const Tensor<T>& in, const Tensor<T>& w, const T* bias, Tensor<T>& out, const ConvGeom& g) {
  const Shape& is = in.shape();
  const Shape& os = out.shape();
  const std::size_t A = os.c();
  const Unfold u(is.c(), g, os.h(), os.w(), is.h(), is.w());
  const ConstMap<T> wm(w.data().data(), Eigen::Index(A), Eigen::Index(u.K()), Eigen::OuterStride<>(Eigen::Index(u.K())));
  parallel_for(os.n(), [&](std::size_t n) {
    std::vector<T> col;
    for (std::size_t y0 = 0; y0 < os.h(); y0 += u.rows_per_chunk) {
      const std::size_t y1 = std::min(os.h(), y0 + u.rows_per_chunk);
      const std::size_t P = (y1 - y0) * os.w();
      u.im2col(in.plane(n, 0), is.plane(), y0, y1, col);
      const ConstMap<T> cm(col.data(), Eigen::Index(u.K()), Eigen::Index(P), Eigen::OuterStride<>(Eigen::Index(P)));
      MutMap<T> om(out.plane(n, 0) + y0 * os.w(), Eigen::Index(A), Eigen::Index(P), Eigen::OuterStride<>(Eigen::Index(os.plane())));
      om.noalias() = wm * cm;
      if (bias)
        for (std::size_t a = 0; a < A; ++a) om.row(Eigen::Index(a)).array() += bias[a];
    }
  });
}

/// out (N, B, Hb, Wb) = bias + W^T * in (N, A, Hs, Ws)
template <class T>
void scatter(const Tensor<T>& in, const Tensor<T>& w, const T* bias, Tensor<T>& out, const ConvGeom& g) {
  const Shape& is = in.shape();
  const Shape& os = out.shape();
  const std::size_t A = is.c(), B = os.c();
  const Unfold u(B, g, is.h(), is.w(), os.h(), os.w());
  const ConstMap<T> wm(w.data().data(), Eigen::Index(A), Eigen::Index(u.K()), Eigen::OuterStride<>(Eigen::Index(u.K())));
  parallel_for(os.n(), [&](std::size_t n) {
    for (std::size_t b = 0; b < B; ++b) std::fill_n(out.plane(n, b), os.plane(), bias ? bias[b] : T(0));
    std::vector<T> col;
    for (std::size_t y0 = 0; y0 < is.h(); y0 += u.rows_per_chunk) {
      const std::size_t y1 = std::min(is.h(), y0 + u.rows_per_chunk);
      const std::size_t P = (y1 - y0) * is.w();
      const ConstMap<T> im(in.plane(n, 0) + y0 * is.w(), Eigen::Index(A), Eigen::Index(P), Eigen::OuterStride<>(Eigen::Index(is.plane())));
      col.resize(u.K() * P);
      MutMap<T> cm(col.data(), Eigen::Index(u.K()), Eigen::Index(P), Eigen::OuterStride<>(Eigen::Index(P)));
      cm.noalias() = wm.transpose() * im;
      u.col2im(col, y0, y1, out.plane(n, 0), os.plane());
    }
  });
}

/// dW[a, b] += sum over n and strided positions of small[n, a] * big[n, b] (shifted).
template <class T>
void weight_grad(const Tensor<T>& small, const Tensor<T>& big, Tensor<T>& dw, const ConvGeom& g) {
  const Shape& ss = small.shape();
  const Shape& bs = big.shape();
  const std::size_t A = ss.c();
  const Unfold u(bs.c(), g, ss.h(), ss.w(), bs.h(), bs.w());
  MutMap<T> dm(dw.data().data(), Eigen::Index(A), Eigen::Index(u.K()), Eigen::OuterStride<>(Eigen::Index(u.K())));
  std::vector<T> col;
  for (std::size_t n = 0; n < ss.n(); ++n)
    for (std::size_t y0 = 0; y0 < ss.h(); y0 += u.rows_per_chunk) {
      const std::size_t y1 = std::min(ss.h(), y0 + u.rows_per_chunk);
      const std::size_t P = (y1 - y0) * ss.w();
      u.im2col(big.plane(n, 0), bs.plane(), y0, y1, col);
      const ConstMap<T> cm(col.data(), Eigen::Index(u.K()), Eigen::Index(P), Eigen::OuterStride<>(Eigen::Index(P)));
      const ConstMap<T> sm(small.plane(n, 0) + y0 * ss.w(), Eigen::Index(A), Eigen::Index(P), Eigen::OuterStride<>(Eigen::Index(ss.plane())));
      dm.noalias() += sm * cm.transpose();
    }
}

/// db[c] += sum over batch and space of g[:, c].
template <class T>
void bias_grad(const Tensor<T>& g, Tensor<T>& db) {
  const Shape& s = g.shape();
  for (std::size_t c = 0; c < s.c(); ++c) {
    T acc = 0;
    for (std::size_t n = 0; n < s.n(); ++n) {
      const T* p = g.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) acc += p[i];
    }
    db[c] += acc;
  }
}

}  // namespace manf::kernels
