#pragma once

#include "stmbr/autograd.hpp"

namespace stmbr {

// ---------------------------------------------------------------------------
// Split-Transform-Merge block. Four parallel paths over the input, each
// emitting `cp` channels at half resolution:
//   RE: conv(d=1) -> conv(d=2) -> smoothing avg-pool (w2,s1) -> max-pool (s2)
//   ER: conv(d=1) -> conv(d=2) -> max-pool (s2)
//   R:  conv(d=1) -> avg-pool (s2)
//   E:  frozen auxiliary features -> max-pool (s2)
// The concat order is ER, RE, R, E; a 1x1 transition maps 4*cp -> out.

template <typename T>
struct StmBlockParams {
  int cp = 0;
  Var<T> re_w1, re_b1, re_w2, re_b2;
  Var<T> er_w1, er_b1, er_w2, er_b2;
  Var<T> r_w, r_b;
  Var<T> trans_w, trans_b;
};

template <typename T>
struct StmPaths {
  Var<T> er, re, r, e;
};

template <typename T>
StmPaths<T> stm_paths(const Var<T>& x, const StmBlockParams<T>& p, const Tensor<T>& aux_features) {
  const auto& s = x->value.shape;
  if (s[2] % 2 != 0 || s[3] % 2 != 0)
    throw std::invalid_argument("stm_block: spatial dims must be even, got " + shape_str(s));
  if (aux_features.ndim() != 4 || aux_features.shape[1] != p.cp ||
      aux_features.shape[0] != s[0])
    throw std::invalid_argument("stm_block: aux features must be (N," + std::to_string(p.cp) +
                                ",*,*), got " + shape_str(aux_features.shape));

  // Each convolutional layer carries a ReLU; without one the path pair would
  // collapse to a single linear map and the zero-mean features would vanish
  // under the global average pool downstream.
  auto conv_same = [](const Var<T>& in, const Var<T>& w, const Var<T>& b, int dilation) {
    const int kh = w->value.shape[2], kw = w->value.shape[3];
    return vrelu(vconv2d(in, w, b, 1, dilation, same_pad(kh, kw, dilation)));
  };

  StmPaths<T> out;
  {
    auto h = conv_same(conv_same(x, p.re_w1, p.re_b1, 1), p.re_w2, p.re_b2, 2);
    auto smooth = vavg_pool(h, 2, 1, Pad{0, 0, 1, 1});
    out.re = vmax_pool(smooth, 2, 2).out;
  }
  {
    auto h = conv_same(conv_same(x, p.er_w1, p.er_b1, 1), p.er_w2, p.er_b2, 2);
    out.er = vmax_pool(h, 2, 2).out;
  }
  out.r = vavg_pool(conv_same(x, p.r_w, p.r_b, 1), 2, 2);

  // Auxiliary channels are produced by a frozen network: enter the graph as
  // a constant so no gradient can reach their source.
  Tensor<T> aux = nearest_resize(aux_features, s[2], s[3]);
  out.e = vmax_pool(constant(std::move(aux)), 2, 2).out;
  return out;
}

template <typename T>
Var<T> stm_block(const Var<T>& x, const StmBlockParams<T>& p, const Tensor<T>& aux_features) {
  auto paths = stm_paths(x, p, aux_features);
  auto boosted = vconcat<T>({paths.er, paths.re, paths.r, paths.e});
  return vrelu(vconv2d(boosted, p.trans_w, p.trans_b, 1, 1, Pad{}));
}

// ---------------------------------------------------------------------------
// Static attention gate: a per-pixel scalar weight in (0,1) rescales the
// skip features.
//   x_relu  = relu(W_x . x_l + W_sa . gate + b_sa)
//   w_pixel = sigmoid(f(x_relu) + b_f)
//   out     = w_pixel * x_l   (broadcast over channels)

template <typename T>
struct SaGateParams {
  Var<T> wx;          // (inter, c_skip, 1, 1), no bias
  Var<T> wsa, b_sa;   // (inter, c_gate, 1, 1) + (inter)
  Var<T> f, b_f;      // (1, inter, 1, 1) + (1)
};

template <typename T>
Var<T> sa_gate(const Var<T>& x_l, const Var<T>& gate, const SaGateParams<T>& p) {
  const auto& xs = x_l->value.shape;
  const auto& gs = gate->value.shape;
  if (xs[0] != gs[0] || xs[2] != gs[2] || xs[3] != gs[3])
    throw std::invalid_argument("sa_gate: gate must be resampled to the skip resolution first: " +
                                shape_str(xs) + " vs " + shape_str(gs));
  auto a = vconv2d(x_l, p.wx, Var<T>{}, 1, 1, Pad{});
  auto b = vconv2d(gate, p.wsa, p.b_sa, 1, 1, Pad{});
  auto x_relu = vrelu(vadd(a, b));
  auto w_pixel = vsigmoid(vconv2d(x_relu, p.f, p.b_f, 1, 1, Pad{}));
  return vmul_pixel_gate(x_l, w_pixel);
}

// ---------------------------------------------------------------------------
// Encoder block: conv-relu x2, then dual down-sampling pools fused by a 1x1
// conv. Pooling indices of the max branch drive the mirrored decoder.

template <typename T>
struct EncDecBlockParams {
  Var<T> c1w, c1b, c2w, c2b;  // 3x3 convs
  Var<T> fw, fb;              // 1x1 fuse after the dual-pool concat
};

template <typename T>
struct EncoderOut {
  Var<T> pooled;    // half resolution
  Var<T> pre_pool;  // skip connection source
  PoolIndices indices;
};

template <typename T>
EncoderOut<T> encoder_block(const Var<T>& x, const EncDecBlockParams<T>& p) {
  const auto& s = x->value.shape;
  if (s[2] % 2 != 0 || s[3] % 2 != 0)
    throw std::invalid_argument("encoder_block: spatial dims must be even, got " + shape_str(s));
  auto h = vrelu(vconv2d(x, p.c1w, p.c1b, 1, 1, same_pad(3, 3, 1)));
  h = vrelu(vconv2d(h, p.c2w, p.c2b, 1, 1, same_pad(3, 3, 1)));
  auto avg = vavg_pool(h, 2, 2);
  auto mx = vmax_pool(h, 2, 2);
  auto fused = vconv2d(vconcat<T>({avg, mx.out}), p.fw, p.fb, 1, 1, Pad{});
  return {fused, h, std::move(mx.indices)};
}

// ---------------------------------------------------------------------------
// Channel-boosted decoder block:
//   u    = unpool(x, indices)                      (back to skip resolution)
//   eq8  = fuse(max-pool_1(u) || avg-pool_1(u))    (stride-1 same-pad pools)
//   gate = sa_gate(skip, u)                        (identity when SA is off)
//   out  = conv3x3( eq8 || gate || aux )           (aux is frozen, optional)

template <typename T>
struct BoostedDecoderParams {
  Var<T> fuse_w, fuse_b;  // 1x1
  SaGateParams<T> gate;
  Var<T> out_w, out_b;  // 3x3
  bool use_sa = true;
};

template <typename T>
struct DecoderParts {
  Var<T> unpooled, eq8, gated, pre_conv, out;
};

template <typename T>
DecoderParts<T> boosted_decoder_parts(const Var<T>& x, const PoolIndices& indices,
                                      const Var<T>& skip, const Tensor<T>& aux,
                                      const BoostedDecoderParams<T>& p) {
  if (x->value.shape != indices.shape)
    throw std::invalid_argument("decoder: values do not match pooling indices: " +
                                shape_str(x->value.shape) + " vs " + shape_str(indices.shape));
  DecoderParts<T> parts;
  parts.unpooled = vmax_unpool(x, indices, skip->value.shape);
  auto mp = vmax_pool(parts.unpooled, 2, 1, Pad{0, 0, 1, 1}).out;
  auto ap = vavg_pool(parts.unpooled, 2, 1, Pad{0, 0, 1, 1});
  parts.eq8 = vconv2d(vconcat<T>({mp, ap}), p.fuse_w, p.fuse_b, 1, 1, Pad{});
  parts.gated = p.use_sa ? sa_gate(skip, parts.unpooled, p.gate) : skip;

  std::vector<Var<T>> pieces{parts.eq8, parts.gated};
  if (!aux.empty() && aux.shape[1] > 0) {
    Tensor<T> a = nearest_resize(aux, skip->value.shape[2], skip->value.shape[3]);
    pieces.push_back(constant(std::move(a)));
  }
  parts.pre_conv = vconcat(pieces);
  parts.out = vconv2d(parts.pre_conv, p.out_w, p.out_b, 1, 1, same_pad(3, 3, 1));
  return parts;
}

template <typename T>
Var<T> boosted_decoder_block(const Var<T>& x, const PoolIndices& indices, const Var<T>& skip,
                             const Tensor<T>& aux, const BoostedDecoderParams<T>& p) {
  return boosted_decoder_parts(x, indices, skip, aux, p).out;
}

}  // namespace stmbr
