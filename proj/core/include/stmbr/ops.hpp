#pragma once

#include <algorithm>
#include <cstring>
#include <limits>

#include "stmbr/parallel.hpp"
#include "stmbr/rng.hpp"
#include "stmbr/tensor.hpp"

namespace stmbr {

/// Explicit per-side zero padding.
struct Pad {
  int top = 0, left = 0, bottom = 0, right = 0;
};

/// "Same" padding for stride 1: output keeps the input extent. Odd kernels
/// pad symmetrically; even kernels (the 2x2 head) put the extra row/column
/// at bottom/right.
inline Pad same_pad(int kh, int kw, int dilation) {
  const int th = dilation * (kh - 1);
  const int tw = dilation * (kw - 1);
  return Pad{th / 2, tw / 2, th - th / 2, tw - tw / 2};
}

inline int conv_out_extent(int in, int pad_total, int k, int dilation, int stride) {
  return (in + pad_total - dilation * (k - 1) - 1) / stride + 1;
}

/// Convolution parameters: kernel (out_ch, in_ch, kh, kw), optional bias
/// (out_ch), stride and dilation shared by both spatial axes.
template <typename T>
struct ConvSpec {
  Tensor<T> kernel;
  Tensor<T> bias;
  int stride = 1;
  int dilation = 1;
  Pad pad;
};

namespace detail {

inline int ceil_div_pos(int a, int b) { return (a + b - 1) / b; }

// Lane-split dot product with a fixed summation order: vectorizes the
// reduction while staying deterministic for any schedule.
template <typename T>
T dot_strided(const T* a, const T* b, int n, int b_stride) {
  T lanes[8] = {};
  int i = 0;
  if (b_stride == 1) {
    for (; i + 8 <= n; i += 8)
      for (int l = 0; l < 8; ++l) lanes[l] += a[i + l] * b[i + l];
    for (; i < n; ++i) lanes[i & 7] += a[i] * b[i];
  } else {
    for (; i + 8 <= n; i += 8)
      for (int l = 0; l < 8; ++l) lanes[l] += a[i + l] * b[static_cast<int64_t>(i + l) * b_stride];
    for (; i < n; ++i) lanes[i & 7] += a[i] * b[static_cast<int64_t>(i) * b_stride];
  }
  return ((lanes[0] + lanes[4]) + (lanes[1] + lanes[5])) +
         ((lanes[2] + lanes[6]) + (lanes[3] + lanes[7]));
}

template <typename T>
T sum_lanes(const T* a, int64_t n) {
  T lanes[8] = {};
  int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (int l = 0; l < 8; ++l) lanes[l] += a[i + l];
  for (; i < n; ++i) lanes[i & 7] += a[i];
  return ((lanes[0] + lanes[4]) + (lanes[1] + lanes[5])) +
         ((lanes[2] + lanes[6]) + (lanes[3] + lanes[7]));
}

struct ConvDims {
  int n, c, h, w, o, kh, kw, oh, ow;
};

template <typename T>
ConvDims conv_check(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& b, int stride,
                    int dilation, const Pad& pad) {
  if (x.ndim() != 4) throw std::invalid_argument("conv2d: input must be 4-D NCHW, got " + shape_str(x.shape));
  if (k.ndim() != 4) throw std::invalid_argument("conv2d: kernel must be 4-D, got " + shape_str(k.shape));
  if (stride < 1 || dilation < 1) throw std::invalid_argument("conv2d: stride and dilation must be >= 1");
  if (pad.top < 0 || pad.left < 0 || pad.bottom < 0 || pad.right < 0)
    throw std::invalid_argument("conv2d: negative padding");
  ConvDims d{x.shape[0], x.shape[1], x.shape[2], x.shape[3],
             k.shape[0], k.shape[2], k.shape[3], 0, 0};
  if (k.shape[1] != d.c)
    throw std::invalid_argument("conv2d: input has " + std::to_string(d.c) + " channels, kernel expects " +
                                std::to_string(k.shape[1]));
  if (!b.empty() && (b.ndim() != 1 || b.shape[0] != d.o))
    throw std::invalid_argument("conv2d: bias shape mismatch");
  d.oh = conv_out_extent(d.h, pad.top + pad.bottom, d.kh, dilation, stride);
  d.ow = conv_out_extent(d.w, pad.left + pad.right, d.kw, dilation, stride);
  if (d.oh < 1 || d.ow < 1) throw std::invalid_argument("conv2d: non-positive output size");
  return d;
}

// Valid output range [o0, o1) for an input extent `in`, given
// i = o*stride + base with 0 <= i < in.
inline void tap_range(int base, int stride, int in, int out, int& o0, int& o1) {
  o0 = base < 0 ? ceil_div_pos(-base, stride) : 0;
  o1 = base >= in ? 0 : std::min(out, (in - 1 - base) / stride + 1);
}

}  // namespace detail

/// out[n,o,k,l] = bias[o] + sum_{c,i,j} x[n,c, k*stride + i*dilation - pad_t,
///                                          l*stride + j*dilation - pad_l] * kernel[o,c,i,j]
/// with zero-padded out-of-range reads.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& b, int stride,
                 int dilation, const Pad& pad) {
  const auto d = detail::conv_check(x, k, b, stride, dilation, pad);
  Tensor<T> out({d.n, d.o, d.oh, d.ow});
  const T* xd = x.data.data();
  const T* kd = k.data.data();
  const T* bd = b.empty() ? nullptr : b.data.data();
  T* od = out.data.data();

  parallel_for(static_cast<int64_t>(d.n) * d.o, [&](int64_t lo, int64_t hi) {
    for (int64_t item = lo; item < hi; ++item) {
      const int n = static_cast<int>(item / d.o);
      const int o = static_cast<int>(item % d.o);
      T* plane = od + item * d.oh * d.ow;
      std::fill(plane, plane + static_cast<int64_t>(d.oh) * d.ow, bd ? bd[o] : T(0));
      for (int c = 0; c < d.c; ++c) {
        const T* xplane = xd + (static_cast<int64_t>(n) * d.c + c) * d.h * d.w;
        for (int kh = 0; kh < d.kh; ++kh) {
          const int hbase = kh * dilation - pad.top;
          int oh0, oh1;
          detail::tap_range(hbase, stride, d.h, d.oh, oh0, oh1);
          for (int kw = 0; kw < d.kw; ++kw) {
            const T wv = kd[((static_cast<int64_t>(o) * d.c + c) * d.kh + kh) * d.kw + kw];
            const int wbase = kw * dilation - pad.left;
            int ow0, ow1;
            detail::tap_range(wbase, stride, d.w, d.ow, ow0, ow1);
            for (int oh = oh0; oh < oh1; ++oh) {
              const T* xrow = xplane + static_cast<int64_t>(oh * stride + hbase) * d.w + wbase;
              T* orow = plane + static_cast<int64_t>(oh) * d.ow;
              if (stride == 1) {
                for (int ow = ow0; ow < ow1; ++ow) orow[ow] += wv * xrow[ow];
              } else {
                for (int ow = ow0; ow < ow1; ++ow) orow[ow] += wv * xrow[static_cast<int64_t>(ow) * stride];
              }
            }
          }
        }
      }
    }
  });
  ensure_finite(out, "conv2d");
  return out;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const ConvSpec<T>& spec) {
  return conv2d(x, spec.kernel, spec.bias, spec.stride, spec.dilation, spec.pad);
}

/// Gradients of conv2d. Any of gx/gk/gb may be null to skip that output.
/// Reductions are owned per batch element (gx) or per output channel
/// (gk, gb) in a fixed order, so results do not depend on the schedule.
template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& k, int stride, int dilation,
                     const Pad& pad, const Tensor<T>& gout, Tensor<T>* gx, Tensor<T>* gk,
                     Tensor<T>* gb) {
  const auto d = detail::conv_check(x, k, Tensor<T>{}, stride, dilation, pad);
  if (gout.shape != std::vector<int>{d.n, d.o, d.oh, d.ow})
    throw std::invalid_argument("conv2d_backward: upstream gradient shape mismatch");
  const T* xd = x.data.data();
  const T* kd = k.data.data();
  const T* gd = gout.data.data();

  if (gx) {
    *gx = Tensor<T>::zeros(x.shape);
    T* gxd = gx->data.data();
    parallel_for(d.n, [&](int64_t lo, int64_t hi) {
      for (int64_t n = lo; n < hi; ++n) {
        for (int o = 0; o < d.o; ++o) {
          const T* gplane = gd + (n * d.o + o) * d.oh * d.ow;
          for (int c = 0; c < d.c; ++c) {
            T* gxplane = gxd + (n * d.c + c) * d.h * d.w;
            for (int kh = 0; kh < d.kh; ++kh) {
              const int hbase = kh * dilation - pad.top;
              int oh0, oh1;
              detail::tap_range(hbase, stride, d.h, d.oh, oh0, oh1);
              for (int kw = 0; kw < d.kw; ++kw) {
                const T wv = kd[((static_cast<int64_t>(o) * d.c + c) * d.kh + kh) * d.kw + kw];
                const int wbase = kw * dilation - pad.left;
                int ow0, ow1;
                detail::tap_range(wbase, stride, d.w, d.ow, ow0, ow1);
                for (int oh = oh0; oh < oh1; ++oh) {
                  const T* grow = gplane + static_cast<int64_t>(oh) * d.ow;
                  T* gxrow = gxplane + static_cast<int64_t>(oh * stride + hbase) * d.w + wbase;
                  if (stride == 1) {
                    for (int ow = ow0; ow < ow1; ++ow) gxrow[ow] += wv * grow[ow];
                  } else {
                    for (int ow = ow0; ow < ow1; ++ow) gxrow[static_cast<int64_t>(ow) * stride] += wv * grow[ow];
                  }
                }
              }
            }
          }
        }
      }
    });
  }

  if (gk || gb) {
    if (gk) *gk = Tensor<T>::zeros(k.shape);
    if (gb) *gb = Tensor<T>::zeros({d.o});
    parallel_for(d.o, [&](int64_t lo, int64_t hi) {
      for (int64_t o = lo; o < hi; ++o) {
        if (gk) {
          T* gkp = gk->data.data() + o * d.c * d.kh * d.kw;
          for (int c = 0; c < d.c; ++c) {
            for (int kh = 0; kh < d.kh; ++kh) {
              const int hbase = kh * dilation - pad.top;
              int oh0, oh1;
              detail::tap_range(hbase, stride, d.h, d.oh, oh0, oh1);
              for (int kw = 0; kw < d.kw; ++kw) {
                const int wbase = kw * dilation - pad.left;
                int ow0, ow1;
                detail::tap_range(wbase, stride, d.w, d.ow, ow0, ow1);
                T acc = 0;
                for (int n = 0; n < d.n; ++n) {
                  const T* gplane = gd + (static_cast<int64_t>(n) * d.o + o) * d.oh * d.ow;
                  const T* xplane = xd + (static_cast<int64_t>(n) * d.c + c) * d.h * d.w;
                  for (int oh = oh0; oh < oh1; ++oh) {
                    const T* grow = gplane + static_cast<int64_t>(oh) * d.ow + ow0;
                    const T* xrow = xplane + static_cast<int64_t>(oh * stride + hbase) * d.w + wbase +
                                    static_cast<int64_t>(ow0) * stride;
                    acc += detail::dot_strided(grow, xrow, ow1 - ow0, stride);
                  }
                }
                gkp[(static_cast<int64_t>(c) * d.kh + kh) * d.kw + kw] = acc;
              }
            }
          }
        }
        if (gb) {
          T acc = 0;
          for (int n = 0; n < d.n; ++n)
            acc += detail::sum_lanes(gd + (static_cast<int64_t>(n) * d.o + o) * d.oh * d.ow,
                                     static_cast<int64_t>(d.oh) * d.ow);
          gb->data[static_cast<size_t>(o)] = acc;
        }
      }
    });
  }
}

enum class PoolMode { kMax, kAvg };

template <typename T>
struct PoolResult {
  Tensor<T> out;
  PoolIndices indices;  // filled for max pooling only
};

/// Max pooling returns the per-window maximum and its flat index (first
/// occurrence in row-major scan on ties); average pooling divides by
/// window^2 regardless of padding overlap.
template <typename T>
PoolResult<T> pool2d(const Tensor<T>& x, int window, int stride, PoolMode mode, Pad pad = {}) {
  if (x.ndim() != 4) throw std::invalid_argument("pool2d: input must be 4-D NCHW");
  if (window < 1 || stride < 1) throw std::invalid_argument("pool2d: window and stride must be >= 1");
  const int n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
  if (window > h + pad.top + pad.bottom || window > w + pad.left + pad.right)
    throw std::invalid_argument("pool2d: window larger than padded input");
  const int oh = (h + pad.top + pad.bottom - window) / stride + 1;
  const int ow = (w + pad.left + pad.right - window) / stride + 1;
  if (oh < 1 || ow < 1) throw std::invalid_argument("pool2d: non-positive output size");

  PoolResult<T> res;
  res.out = Tensor<T>({n, c, oh, ow});
  const bool is_max = mode == PoolMode::kMax;
  if (is_max) {
    res.indices.shape = {n, c, oh, ow};
    res.indices.flat.resize(static_cast<size_t>(res.out.numel()));
  }
  const T* xd = x.data.data();
  T* od = res.out.data.data();
  int64_t* idx = is_max ? res.indices.flat.data() : nullptr;
  const T inv_area = T(1) / (T(window) * T(window));

  parallel_for(static_cast<int64_t>(n) * c, [&](int64_t lo, int64_t hi) {
    for (int64_t plane = lo; plane < hi; ++plane) {
      const T* xp = xd + plane * h * w;
      T* op = od + plane * oh * ow;
      int64_t* ip = idx ? idx + plane * oh * ow : nullptr;
      for (int i = 0; i < oh; ++i) {
        const int h0 = i * stride - pad.top;
        for (int j = 0; j < ow; ++j) {
          const int w0 = j * stride - pad.left;
          if (is_max) {
            T best = -std::numeric_limits<T>::infinity();
            int64_t bidx = -1;
            for (int a = 0; a < window; ++a) {
              const int hh = h0 + a;
              if (hh < 0 || hh >= h) continue;
              for (int b = 0; b < window; ++b) {
                const int ww = w0 + b;
                if (ww < 0 || ww >= w) continue;
                const T v = xp[static_cast<int64_t>(hh) * w + ww];
                if (v > best) {
                  best = v;
                  bidx = plane * h * w + static_cast<int64_t>(hh) * w + ww;
                }
              }
            }
            if (bidx < 0) throw std::invalid_argument("pool2d: window contains no input cells");
            op[static_cast<int64_t>(i) * ow + j] = best;
            ip[static_cast<int64_t>(i) * ow + j] = bidx;
          } else {
            T acc = 0;
            for (int a = 0; a < window; ++a) {
              const int hh = h0 + a;
              if (hh < 0 || hh >= h) continue;
              for (int b = 0; b < window; ++b) {
                const int ww = w0 + b;
                if (ww < 0 || ww >= w) continue;
                acc += xp[static_cast<int64_t>(hh) * w + ww];
              }
            }
            op[static_cast<int64_t>(i) * ow + j] = acc * inv_area;
          }
        }
      }
    }
  });
  ensure_finite(res.out, "pool2d");
  return res;
}

template <typename T>
Tensor<T> max_pool_backward(const std::vector<int>& in_shape, const PoolIndices& indices,
                            const Tensor<T>& gout) {
  if (gout.shape != indices.shape) throw std::invalid_argument("max_pool_backward: shape mismatch");
  Tensor<T> gx = Tensor<T>::zeros(in_shape);
  for (size_t i = 0; i < indices.flat.size(); ++i) {
    const int64_t f = indices.flat[i];
    if (f < 0 || f >= gx.numel()) throw std::invalid_argument("max_pool_backward: index out of range");
    gx.data[static_cast<size_t>(f)] += gout.data[i];
  }
  return gx;
}

template <typename T>
Tensor<T> avg_pool_backward(const std::vector<int>& in_shape, int window, int stride, Pad pad,
                            const Tensor<T>& gout) {
  Tensor<T> gx = Tensor<T>::zeros(in_shape);
  const int n = in_shape[0], c = in_shape[1], h = in_shape[2], w = in_shape[3];
  const int oh = gout.shape[2], ow = gout.shape[3];
  const T inv_area = T(1) / (T(window) * T(window));
  const T* gd = gout.data.data();
  T* gxd = gx.data.data();
  parallel_for(static_cast<int64_t>(n) * c, [&](int64_t lo, int64_t hi) {
    for (int64_t plane = lo; plane < hi; ++plane) {
      const T* gp = gd + plane * oh * ow;
      T* xp = gxd + plane * h * w;
      for (int i = 0; i < oh; ++i) {
        const int h0 = i * stride - pad.top;
        for (int j = 0; j < ow; ++j) {
          const int w0 = j * stride - pad.left;
          const T g = gp[static_cast<int64_t>(i) * ow + j] * inv_area;
          for (int a = 0; a < window; ++a) {
            const int hh = h0 + a;
            if (hh < 0 || hh >= h) continue;
            for (int b = 0; b < window; ++b) {
              const int ww = w0 + b;
              if (ww < 0 || ww >= w) continue;
              xp[static_cast<int64_t>(hh) * w + ww] += g;
            }
          }
        }
      }
    }
  });
  return gx;
}

/// Scatters pooled values back to their recorded argmax positions; all other
/// cells are zero.
template <typename T>
Tensor<T> max_unpool2d(const Tensor<T>& values, const PoolIndices& indices,
                       const std::vector<int>& out_shape) {
  if (values.shape != indices.shape)
    throw std::invalid_argument("max_unpool2d: values and indices shapes differ");
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  for (size_t i = 0; i < indices.flat.size(); ++i) {
    const int64_t f = indices.flat[i];
    if (f < 0 || f >= out.numel()) throw std::invalid_argument("max_unpool2d: index out of range");
    out.data[static_cast<size_t>(f)] = values.data[i];
  }
  ensure_finite(out, "max_unpool2d");
  return out;
}

template <typename T>
Tensor<T> max_unpool2d_backward(const PoolIndices& indices, const Tensor<T>& gout) {
  Tensor<T> gv(indices.shape);
  for (size_t i = 0; i < indices.flat.size(); ++i)
    gv.data[i] = gout.data[static_cast<size_t>(indices.flat[i])];
  return gv;
}

/// Channel concatenation; parts appear in argument order.
template <typename T>
Tensor<T> concat_channels(const std::vector<const Tensor<T>*>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_channels: no parts");
  const auto& first = *parts.front();
  if (first.ndim() != 4) throw std::invalid_argument("concat_channels: parts must be 4-D");
  int total_c = 0;
  for (const auto* p : parts) {
    if (p->ndim() != 4 || p->shape[0] != first.shape[0] || p->shape[2] != first.shape[2] ||
        p->shape[3] != first.shape[3])
      throw std::invalid_argument("concat_channels: batch/spatial mismatch: " + shape_str(first.shape) +
                                  " vs " + shape_str(p->shape));
    total_c += p->shape[1];
  }
  const int n = first.shape[0], h = first.shape[2], w = first.shape[3];
  Tensor<T> out({n, total_c, h, w});
  const int64_t hw = static_cast<int64_t>(h) * w;
  for (int b = 0; b < n; ++b) {
    int64_t coff = 0;
    for (const auto* p : parts) {
      const int pc = p->shape[1];
      std::copy_n(p->data.data() + static_cast<int64_t>(b) * pc * hw, static_cast<int64_t>(pc) * hw,
                  out.data.data() + (static_cast<int64_t>(b) * total_c + coff) * hw);
      coff += pc;
    }
  }
  return out;
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, int c0, int c1) {
  if (x.ndim() != 4 || c0 < 0 || c1 < c0 || c1 > x.shape[1])
    throw std::invalid_argument("slice_channels: bad channel range");
  const int n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
  Tensor<T> out({n, c1 - c0, h, w});
  const int64_t hw = static_cast<int64_t>(h) * w;
  for (int b = 0; b < n; ++b)
    std::copy_n(x.data.data() + (static_cast<int64_t>(b) * c + c0) * hw,
                static_cast<int64_t>(c1 - c0) * hw,
                out.data.data() + static_cast<int64_t>(b) * (c1 - c0) * hw);
  return out;
}

/// out = x . w + bias, with x (N,D), w (D,K), bias (K).
template <typename T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (x.ndim() != 2 || w.ndim() != 2 || x.shape[1] != w.shape[0])
    throw std::invalid_argument("dense: dimension mismatch: " + shape_str(x.shape) + " x " + shape_str(w.shape));
  const int n = x.shape[0], dd = x.shape[1], k = w.shape[1];
  if (!b.empty() && (b.ndim() != 1 || b.shape[0] != k))
    throw std::invalid_argument("dense: bias shape mismatch");
  Tensor<T> out({n, k});
  parallel_for(n, [&](int64_t lo, int64_t hi) {
    for (int64_t r = lo; r < hi; ++r) {
      T* orow = out.data.data() + r * k;
      if (b.empty())
        std::fill(orow, orow + k, T(0));
      else
        std::copy_n(b.data.data(), k, orow);
      const T* xrow = x.data.data() + r * dd;
      for (int i = 0; i < dd; ++i) {
        const T xv = xrow[i];
        const T* wrow = w.data.data() + static_cast<int64_t>(i) * k;
        for (int j = 0; j < k; ++j) orow[j] += xv * wrow[j];
      }
    }
  });
  ensure_finite(out, "dense");
  return out;
}

template <typename T>
void dense_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& gout, Tensor<T>* gx,
                    Tensor<T>* gw, Tensor<T>* gb) {
  const int n = x.shape[0], dd = x.shape[1], k = w.shape[1];
  if (gx) {
    *gx = Tensor<T>::zeros(x.shape);
    parallel_for(n, [&](int64_t lo, int64_t hi) {
      for (int64_t r = lo; r < hi; ++r) {
        const T* grow = gout.data.data() + r * k;
        T* gxrow = gx->data.data() + r * dd;
        for (int i = 0; i < dd; ++i) {
          const T* wrow = w.data.data() + static_cast<int64_t>(i) * k;
          T acc = 0;
          for (int j = 0; j < k; ++j) acc += grow[j] * wrow[j];
          gxrow[i] = acc;
        }
      }
    });
  }
  if (gw) {
    *gw = Tensor<T>::zeros(w.shape);
    parallel_for(dd, [&](int64_t lo, int64_t hi) {
      for (int64_t i = lo; i < hi; ++i) {
        T* gwrow = gw->data.data() + i * k;
        for (int r = 0; r < n; ++r) {
          const T xv = x.data[static_cast<size_t>(static_cast<int64_t>(r) * dd + i)];
          const T* grow = gout.data.data() + static_cast<int64_t>(r) * k;
          for (int j = 0; j < k; ++j) gwrow[j] += xv * grow[j];
        }
      }
    });
  }
  if (gb) {
    *gb = Tensor<T>::zeros({k});
    for (int r = 0; r < n; ++r) {
      const T* grow = gout.data.data() + static_cast<int64_t>(r) * k;
      for (int j = 0; j < k; ++j) gb->data[static_cast<size_t>(j)] += grow[j];
    }
  }
}

/// Row softmax with max-subtraction. Rejects non-finite inputs.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
  if (logits.ndim() != 2 || logits.shape[1] < 2)
    throw std::invalid_argument("softmax: expected (N,C) with C >= 2");
  ensure_finite(logits, "softmax(input)");
  const int n = logits.shape[0], c = logits.shape[1];
  Tensor<T> out(logits.shape);
  for (int r = 0; r < n; ++r) {
    const T* in = logits.data.data() + static_cast<int64_t>(r) * c;
    T* o = out.data.data() + static_cast<int64_t>(r) * c;
    T m = in[0];
    for (int j = 1; j < c; ++j) m = std::max(m, in[j]);
    T sum = 0;
    for (int j = 0; j < c; ++j) {
      o[j] = std::exp(in[j] - m);
      sum += o[j];
    }
    const T inv = T(1) / sum;
    for (int j = 0; j < c; ++j) o[j] *= inv;
  }
  ensure_finite(out, "softmax");
  return out;
}

template <typename T>
Tensor<T> softmax_rows_backward(const Tensor<T>& probs, const Tensor<T>& gout) {
  const int n = probs.shape[0], c = probs.shape[1];
  Tensor<T> gz(probs.shape);
  for (int r = 0; r < n; ++r) {
    const T* p = probs.data.data() + static_cast<int64_t>(r) * c;
    const T* g = gout.data.data() + static_cast<int64_t>(r) * c;
    T dot = 0;
    for (int j = 0; j < c; ++j) dot += p[j] * g[j];
    T* o = gz.data.data() + static_cast<int64_t>(r) * c;
    for (int j = 0; j < c; ++j) o[j] = p[j] * (g[j] - dot);
  }
  return gz;
}

/// Per-pixel softmax over the channel axis of an NCHW tensor.
template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& logits) {
  if (logits.ndim() != 4 || logits.shape[1] < 2)
    throw std::invalid_argument("softmax_channels: expected (N,C,H,W) with C >= 2");
  ensure_finite(logits, "softmax_channels(input)");
  const int n = logits.shape[0], c = logits.shape[1];
  const int64_t hw = static_cast<int64_t>(logits.shape[2]) * logits.shape[3];
  Tensor<T> out(logits.shape);
  parallel_for(n, [&](int64_t lo, int64_t hi) {
    for (int64_t b = lo; b < hi; ++b) {
      const T* in = logits.data.data() + b * c * hw;
      T* o = out.data.data() + b * c * hw;
      for (int64_t px = 0; px < hw; ++px) {
        T m = in[px];
        for (int j = 1; j < c; ++j) m = std::max(m, in[j * hw + px]);
        T sum = 0;
        for (int j = 0; j < c; ++j) {
          const T e = std::exp(in[j * hw + px] - m);
          o[j * hw + px] = e;
          sum += e;
        }
        const T inv = T(1) / sum;
        for (int j = 0; j < c; ++j) o[j * hw + px] *= inv;
      }
    }
  });
  ensure_finite(out, "softmax_channels");
  return out;
}

template <typename T>
Tensor<T> softmax_channels_backward(const Tensor<T>& probs, const Tensor<T>& gout) {
  const int n = probs.shape[0], c = probs.shape[1];
  const int64_t hw = static_cast<int64_t>(probs.shape[2]) * probs.shape[3];
  Tensor<T> gz(probs.shape);
  parallel_for(n, [&](int64_t lo, int64_t hi) {
    for (int64_t b = lo; b < hi; ++b) {
      const T* p = probs.data.data() + b * c * hw;
      const T* g = gout.data.data() + b * c * hw;
      T* o = gz.data.data() + b * c * hw;
      for (int64_t px = 0; px < hw; ++px) {
        T dot = 0;
        for (int j = 0; j < c; ++j) dot += p[j * hw + px] * g[j * hw + px];
        for (int j = 0; j < c; ++j) o[j * hw + px] = p[j * hw + px] * (g[j * hw + px] - dot);
      }
    }
  });
  return gz;
}

enum class Activation { kRelu, kSigmoid };

template <typename T>
Tensor<T> activation(const Tensor<T>& x, Activation kind) {
  Tensor<T> out(x.shape);
  if (kind == Activation::kRelu) {
    for (size_t i = 0; i < x.data.size(); ++i) out.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
  } else {
    for (size_t i = 0; i < x.data.size(); ++i) out.data[i] = T(1) / (T(1) + std::exp(-x.data[i]));
  }
  ensure_finite(out, "activation");
  return out;
}

// ReLU gradient at exactly 0 is defined as 0.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& gout) {
  Tensor<T> gx(x.shape);
  for (size_t i = 0; i < x.data.size(); ++i) gx.data[i] = x.data[i] > T(0) ? gout.data[i] : T(0);
  return gx;
}

template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& y, const Tensor<T>& gout) {
  Tensor<T> gx(y.shape);
  for (size_t i = 0; i < y.data.size(); ++i) gx.data[i] = gout.data[i] * y.data[i] * (T(1) - y.data[i]);
  return gx;
}

template <typename T>
struct DropoutResult {
  Tensor<T> out;
  std::vector<uint8_t> kept;  // empty in evaluation mode
};

/// Training mode zeroes each element with probability `rate` and scales
/// survivors by 1/(1-rate); evaluation mode is the identity.
template <typename T>
DropoutResult<T> dropout(const Tensor<T>& x, double rate, Rng& rng, bool training) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0, 1)");
  DropoutResult<T> res;
  if (!training || rate == 0.0) {
    res.out = x;
    return res;
  }
  res.out = Tensor<T>(x.shape);
  res.kept.resize(x.data.size());
  const T scale = T(1.0 / (1.0 - rate));
  for (size_t i = 0; i < x.data.size(); ++i) {
    const bool keep = rng.uniform() >= rate;
    res.kept[i] = keep;
    res.out.data[i] = keep ? x.data[i] * scale : T(0);
  }
  return res;
}

template <typename T>
Tensor<T> dropout_backward(const std::vector<uint8_t>& kept, double rate, const Tensor<T>& gout) {
  if (kept.empty()) return gout;
  Tensor<T> gx(gout.shape);
  const T scale = T(1.0 / (1.0 - rate));
  for (size_t i = 0; i < gout.data.size(); ++i) gx.data[i] = kept[i] ? gout.data[i] * scale : T(0);
  return gx;
}

/// (N,C,H,W) -> (N,C) spatial mean.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  if (x.ndim() != 4) throw std::invalid_argument("global_avg_pool: input must be 4-D");
  const int n = x.shape[0], c = x.shape[1];
  const int64_t hw = static_cast<int64_t>(x.shape[2]) * x.shape[3];
  if (hw == 0) throw std::invalid_argument("global_avg_pool: empty spatial extent");
  Tensor<T> out({n, c});
  const T inv = T(1) / T(hw);
  for (int64_t p = 0; p < static_cast<int64_t>(n) * c; ++p) {
    const T* xp = x.data.data() + p * hw;
    T acc = 0;
    for (int64_t i = 0; i < hw; ++i) acc += xp[i];
    out.data[static_cast<size_t>(p)] = acc * inv;
  }
  return out;
}

template <typename T>
Tensor<T> global_avg_pool_backward(const std::vector<int>& in_shape, const Tensor<T>& gout) {
  Tensor<T> gx(in_shape);
  const int64_t hw = static_cast<int64_t>(in_shape[2]) * in_shape[3];
  const T inv = T(1) / T(hw);
  for (int64_t p = 0; p < static_cast<int64_t>(in_shape[0]) * in_shape[1]; ++p) {
    const T g = gout.data[static_cast<size_t>(p)] * inv;
    T* xp = gx.data.data() + p * hw;
    for (int64_t i = 0; i < hw; ++i) xp[i] = g;
  }
  return gx;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape != b.shape)
    throw std::invalid_argument("add: shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  Tensor<T> out(a.shape);
  for (size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] + b.data[i];
  ensure_finite(out, "add");
  return out;
}

/// x (N,C,H,W) scaled per pixel by gate (N,1,H,W), broadcast over channels.
template <typename T>
Tensor<T> mul_pixel_gate(const Tensor<T>& x, const Tensor<T>& gate) {
  if (x.ndim() != 4 || gate.ndim() != 4 || gate.shape[1] != 1 || gate.shape[0] != x.shape[0] ||
      gate.shape[2] != x.shape[2] || gate.shape[3] != x.shape[3])
    throw std::invalid_argument("mul_pixel_gate: gate must be (N,1,H,W) matching x");
  const int n = x.shape[0], c = x.shape[1];
  const int64_t hw = static_cast<int64_t>(x.shape[2]) * x.shape[3];
  Tensor<T> out(x.shape);
  for (int b = 0; b < n; ++b) {
    const T* gp = gate.data.data() + static_cast<int64_t>(b) * hw;
    for (int ch = 0; ch < c; ++ch) {
      const T* xp = x.data.data() + (static_cast<int64_t>(b) * c + ch) * hw;
      T* op = out.data.data() + (static_cast<int64_t>(b) * c + ch) * hw;
      for (int64_t i = 0; i < hw; ++i) op[i] = xp[i] * gp[i];
    }
  }
  ensure_finite(out, "mul_pixel_gate");
  return out;
}

/// Nearest-neighbour spatial resize (gradient-free; used for frozen
/// auxiliary channels only).
template <typename T>
Tensor<T> nearest_resize(const Tensor<T>& x, int out_h, int out_w) {
  if (x.ndim() != 4) throw std::invalid_argument("nearest_resize: input must be 4-D");
  const int n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
  if (h == out_h && w == out_w) return x;
  if (h < 1 || w < 1 || out_h < 1 || out_w < 1) throw std::invalid_argument("nearest_resize: empty extent");
  Tensor<T> out({n, c, out_h, out_w});
  for (int64_t p = 0; p < static_cast<int64_t>(n) * c; ++p) {
    const T* xp = x.data.data() + p * h * w;
    T* op = out.data.data() + p * static_cast<int64_t>(out_h) * out_w;
    for (int i = 0; i < out_h; ++i) {
      const int ih = static_cast<int>(static_cast<int64_t>(i) * h / out_h);
      for (int j = 0; j < out_w; ++j) {
        const int iw = static_cast<int>(static_cast<int64_t>(j) * w / out_w);
        op[static_cast<int64_t>(i) * out_w + j] = xp[static_cast<int64_t>(ih) * w + iw];
      }
    }
  }
  return out;
}

}  // namespace stmbr
