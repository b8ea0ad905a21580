#pragma once

// Independent reference implementations used only by tests. These are
// deliberately written as plain nested loops over a bounds-checked reader,
// sharing no code with the library kernels they check.

#include <cmath>
#include <vector>

#include "stmbr/rng.hpp"
#include "stmbr/tensor.hpp"

namespace oracle {

using stmbr::Tensor;

template <typename T>
double read_padded(const Tensor<T>& x, int n, int c, int h, int w) {
  if (h < 0 || h >= x.shape[2] || w < 0 || w >= x.shape[3]) return 0.0;
  return static_cast<double>(x.at4(n, c, h, w));
}

/// Direct-summation convolution; accumulates in double.
template <typename T>
Tensor<double> conv_direct(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& b, int stride,
                           int dilation, int pad_top, int pad_left, int pad_bottom, int pad_right) {
  const int n = x.shape[0], ci = x.shape[1], h = x.shape[2], w = x.shape[3];
  const int o = k.shape[0], kh = k.shape[2], kw = k.shape[3];
  const int oh = (h + pad_top + pad_bottom - dilation * (kh - 1) - 1) / stride + 1;
  const int ow = (w + pad_left + pad_right - dilation * (kw - 1) - 1) / stride + 1;
  Tensor<double> out({n, o, oh, ow});
  for (int nn = 0; nn < n; ++nn)
    for (int oo = 0; oo < o; ++oo)
      for (int y = 0; y < oh; ++y)
        for (int xo = 0; xo < ow; ++xo) {
          double acc = b.empty() ? 0.0 : static_cast<double>(b.data[static_cast<size_t>(oo)]);
          for (int cc = 0; cc < ci; ++cc)
            for (int i = 0; i < kh; ++i)
              for (int j = 0; j < kw; ++j)
                acc += read_padded(x, nn, cc, y * stride + i * dilation - pad_top,
                                   xo * stride + j * dilation - pad_left) *
                       static_cast<double>(k.at4(oo, cc, i, j));
          out.at4(nn, oo, y, xo) = acc;
        }
  return out;
}

/// Exhaustive window scan; returns max or mean (divides by window^2).
template <typename T>
Tensor<double> pool_direct(const Tensor<T>& x, int window, int stride, bool is_max) {
  const int n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
  const int oh = (h - window) / stride + 1, ow = (w - window) / stride + 1;
  Tensor<double> out({n, c, oh, ow});
  for (int nn = 0; nn < n; ++nn)
    for (int cc = 0; cc < c; ++cc)
      for (int y = 0; y < oh; ++y)
        for (int xo = 0; xo < ow; ++xo) {
          double best = -1e300, sum = 0;
          for (int i = 0; i < window; ++i)
            for (int j = 0; j < window; ++j) {
              const double v = static_cast<double>(x.at4(nn, cc, y * stride + i, xo * stride + j));
              best = std::max(best, v);
              sum += v;
            }
          out.at4(nn, cc, y, xo) = is_max ? best : sum / (window * window);
        }
  return out;
}

/// Naive triple-loop matrix multiply plus bias.
template <typename T>
Tensor<double> dense_direct(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  const int n = x.shape[0], d = x.shape[1], k = w.shape[1];
  Tensor<double> out({n, k});
  for (int r = 0; r < n; ++r)
    for (int j = 0; j < k; ++j) {
      double acc = b.empty() ? 0.0 : static_cast<double>(b.data[static_cast<size_t>(j)]);
      for (int i = 0; i < d; ++i)
        acc += static_cast<double>(x.at2(r, i)) * static_cast<double>(w.at2(i, j));
      out.at2(r, j) = acc;
    }
  return out;
}

template <typename T>
Tensor<T> random_tensor(std::vector<int> shape, stmbr::Rng& rng, double lo = -0.5,
                        double hi = 0.5) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

template <typename A, typename B>
double max_abs_diff(const Tensor<A>& a, const Tensor<B>& b) {
  double m = 0;
  for (size_t i = 0; i < a.data.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a.data[i]) - static_cast<double>(b.data[i])));
  return m;
}

/// ROC-AUC as the normalized count of correctly ordered positive/negative
/// pairs, ties counting one half.
inline double rank_pair_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0;
  int64_t pairs = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] == 1) continue;
      ++pairs;
      if (scores[i] > scores[j])
        wins += 1;
      else if (scores[i] == scores[j])
        wins += 0.5;
    }
  }
  return wins / static_cast<double>(pairs);
}

}  // namespace oracle
