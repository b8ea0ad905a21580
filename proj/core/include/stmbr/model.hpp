#pragma once

#include <map>
#include <string>

#include "stmbr/blocks.hpp"

namespace stmbr {

/// Desk-scale defaults. The STM widths 32/64 stand in for the full-scale
/// 256/512 configuration, which paper_scale() restores.
struct ModelConfig {
  int in_channels = 1;
  int height = 64;
  int width = 64;
  int stm_w1 = 32;   // first STM block output width (4 paths of stm_w1/4)
  int stm_w2 = 64;   // second STM block output width
  int stem_width = 16;
  int fc_width = 64;
  int enc_w1 = 16;  // segmenter encoder widths
  int enc_w2 = 32;
  double dropout_rate = 0.5;
  int num_classes = 2;
  int head_kernel = 2;
  bool use_cb = true;  // channel boosting in the decoder
  bool use_sa = true;  // static attention on the skips

  int cp1() const { return stm_w1 / 4; }
  int cp2() const { return stm_w2 / 4; }

  ModelConfig paper_scale() const {
    ModelConfig c = *this;
    c.stm_w1 = 256;
    c.stm_w2 = 512;
    c.stem_width = 128;
    c.fc_width = 512;
    return c;
  }

  void validate() const {
    if (in_channels < 1 || stm_w1 < 4 || stm_w2 < 4 || stem_width < 1 || fc_width < 1 ||
        enc_w1 < 1 || enc_w2 < 1 || num_classes < 2)
      throw std::invalid_argument("model config: widths must be positive, classes >= 2");
    if (stm_w1 % 4 != 0 || stm_w2 % 4 != 0)
      throw std::invalid_argument("model config: STM widths must be divisible by 4");
    if (dropout_rate < 0 || dropout_rate >= 1)
      throw std::invalid_argument("model config: dropout rate must be in [0, 1)");
  }
};

/// Ordered name -> parameter table; iteration order is insertion order so
/// optimizer updates and checkpoints are reproducible.
template <typename T>
struct ParamRegistry {
  std::vector<std::pair<std::string, Var<T>>> items;

  Var<T> add(const std::string& name, Tensor<T> init) {
    for (const auto& [n, v] : items)
      if (n == name) throw std::invalid_argument("duplicate parameter name: " + name);
    Var<T> p = parameter(std::move(init));
    items.emplace_back(name, p);
    return p;
  }

  Var<T> find(const std::string& name) const {
    for (const auto& [n, v] : items)
      if (n == name) return v;
    return nullptr;
  }

  void zero_grads() {
    for (auto& [n, v] : items) v->zero_grad();
  }

  int64_t count() const {
    int64_t c = 0;
    for (const auto& [n, v] : items) c += v->value.numel();
    return c;
  }
};

// Fan-in-scaled Gaussian init (He); biases zero.
template <typename T>
Tensor<T> he_conv_init(int out_ch, int in_ch, int kh, int kw, Rng& rng) {
  Tensor<T> w({out_ch, in_ch, kh, kw});
  const double stddev = std::sqrt(2.0 / (static_cast<double>(in_ch) * kh * kw));
  for (auto& v : w.data) v = static_cast<T>(rng.normal() * stddev);
  return w;
}

template <typename T>
Tensor<T> he_dense_init(int in_dim, int out_dim, Rng& rng) {
  Tensor<T> w({in_dim, out_dim});
  const double stddev = std::sqrt(2.0 / static_cast<double>(in_dim));
  for (auto& v : w.data) v = static_cast<T>(rng.normal() * stddev);
  return w;
}

namespace detail {

template <typename T>
StmBlockParams<T> make_stm_block(ParamRegistry<T>& reg, const std::string& prefix, int in_ch,
                                 int out_ch, Rng& rng) {
  StmBlockParams<T> p;
  p.cp = out_ch / 4;
  p.re_w1 = reg.add(prefix + ".re1.w", he_conv_init<T>(p.cp, in_ch, 3, 3, rng));
  p.re_b1 = reg.add(prefix + ".re1.b", Tensor<T>::zeros({p.cp}));
  p.re_w2 = reg.add(prefix + ".re2.w", he_conv_init<T>(p.cp, p.cp, 3, 3, rng));
  p.re_b2 = reg.add(prefix + ".re2.b", Tensor<T>::zeros({p.cp}));
  p.er_w1 = reg.add(prefix + ".er1.w", he_conv_init<T>(p.cp, in_ch, 3, 3, rng));
  p.er_b1 = reg.add(prefix + ".er1.b", Tensor<T>::zeros({p.cp}));
  p.er_w2 = reg.add(prefix + ".er2.w", he_conv_init<T>(p.cp, p.cp, 3, 3, rng));
  p.er_b2 = reg.add(prefix + ".er2.b", Tensor<T>::zeros({p.cp}));
  p.r_w = reg.add(prefix + ".r.w", he_conv_init<T>(p.cp, in_ch, 3, 3, rng));
  p.r_b = reg.add(prefix + ".r.b", Tensor<T>::zeros({p.cp}));
  p.trans_w = reg.add(prefix + ".trans.w", he_conv_init<T>(out_ch, 4 * p.cp, 1, 1, rng));
  p.trans_b = reg.add(prefix + ".trans.b", Tensor<T>::zeros({out_ch}));
  return p;
}

template <typename T>
EncDecBlockParams<T> make_enc_block(ParamRegistry<T>& reg, const std::string& prefix, int in_ch,
                                    int out_ch, Rng& rng) {
  EncDecBlockParams<T> p;
  p.c1w = reg.add(prefix + ".c1.w", he_conv_init<T>(out_ch, in_ch, 3, 3, rng));
  p.c1b = reg.add(prefix + ".c1.b", Tensor<T>::zeros({out_ch}));
  p.c2w = reg.add(prefix + ".c2.w", he_conv_init<T>(out_ch, out_ch, 3, 3, rng));
  p.c2b = reg.add(prefix + ".c2.b", Tensor<T>::zeros({out_ch}));
  p.fw = reg.add(prefix + ".fuse.w", he_conv_init<T>(out_ch, 2 * out_ch, 1, 1, rng));
  p.fb = reg.add(prefix + ".fuse.b", Tensor<T>::zeros({out_ch}));
  return p;
}

template <typename T>
SaGateParams<T> make_sa_gate(ParamRegistry<T>& reg, const std::string& prefix, int c_skip,
                             int c_gate, Rng& rng) {
  const int inter = std::max(c_skip / 2, 4);
  SaGateParams<T> p;
  p.wx = reg.add(prefix + ".wx.w", he_conv_init<T>(inter, c_skip, 1, 1, rng));
  p.wsa = reg.add(prefix + ".wsa.w", he_conv_init<T>(inter, c_gate, 1, 1, rng));
  p.b_sa = reg.add(prefix + ".wsa.b", Tensor<T>::zeros({inter}));
  p.f = reg.add(prefix + ".f.w", he_conv_init<T>(1, inter, 1, 1, rng));
  p.b_f = reg.add(prefix + ".f.b", Tensor<T>::zeros({1}));
  return p;
}

template <typename T>
BoostedDecoderParams<T> make_decoder_block(ParamRegistry<T>& reg, const std::string& prefix,
                                           int c_unpool, int c_skip, int c_aux, int out_ch,
                                           bool use_sa, Rng& rng) {
  BoostedDecoderParams<T> p;
  p.fuse_w = reg.add(prefix + ".fuse.w", he_conv_init<T>(c_unpool, 2 * c_unpool, 1, 1, rng));
  p.fuse_b = reg.add(prefix + ".fuse.b", Tensor<T>::zeros({c_unpool}));
  if (use_sa) p.gate = make_sa_gate(reg, prefix + ".sa", c_skip, c_unpool, rng);
  p.use_sa = use_sa;
  const int pre = c_unpool + c_skip + c_aux;
  p.out_w = reg.add(prefix + ".out.w", he_conv_init<T>(out_ch, pre, 3, 3, rng));
  p.out_b = reg.add(prefix + ".out.b", Tensor<T>::zeros({out_ch}));
  return p;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Auxiliary network: a small CNN trained on the detection task, then frozen
// and used as the transfer-learning channel source for both models.

template <typename T>
struct AuxNet {
  int in_channels = 1;
  int w1 = 8, w2 = 16;
  int num_classes = 2;
  bool trained = false;
  ParamRegistry<T> reg;
  Var<T> c1w, c1b, c2w, c2b, fcw, fcb;

  AuxNet() = default;

  AuxNet(int in_ch, int width1, int width2, int classes, Rng& rng)
      : in_channels(in_ch), w1(width1), w2(width2), num_classes(classes) {
    c1w = reg.add("conv1.w", he_conv_init<T>(w1, in_ch, 3, 3, rng));
    c1b = reg.add("conv1.b", Tensor<T>::zeros({w1}));
    c2w = reg.add("conv2.w", he_conv_init<T>(w2, w1, 3, 3, rng));
    c2b = reg.add("conv2.b", Tensor<T>::zeros({w2}));
    fcw = reg.add("fc.w", he_dense_init<T>(w2, classes, rng));
    fcb = reg.add("fc.b", Tensor<T>::zeros({classes}));
  }

  /// Class probabilities, used only while pretraining the auxiliary itself.
  Var<T> forward(const Var<T>& x) const {
    auto h1 = vrelu(vconv2d(x, c1w, c1b, 1, 1, same_pad(3, 3, 1)));
    auto p1 = vmax_pool(h1, 2, 2).out;
    auto h2 = vrelu(vconv2d(p1, c2w, c2b, 1, 1, same_pad(3, 3, 1)));
    auto p2 = vmax_pool(h2, 2, 2).out;
    return vsoftmax_rows(vdense(vglobal_avg_pool(p2), fcw, fcb));
  }

  int feature_channels(int level) const { return level == 0 ? w1 : w2; }

  /// Frozen feature maps, no tape: level 0 at input resolution (w1 channels),
  /// level 1 at half resolution (w2 channels).
  Tensor<T> features(const Tensor<T>& x, int level) const {
    if (level < 0 || level > 1) throw std::invalid_argument("aux features: level must be 0 or 1");
    Tensor<T> h1 = activation(conv2d(x, c1w->value, c1b->value, 1, 1, same_pad(3, 3, 1)),
                              Activation::kRelu);
    if (level == 0) return h1;
    Tensor<T> p1 = pool2d(h1, 2, 2, PoolMode::kMax).out;
    return activation(conv2d(p1, c2w->value, c2b->value, 1, 1, same_pad(3, 3, 1)),
                      Activation::kRelu);
  }
};

/// Frozen auxiliary feature map resampled to a target resolution. Refuses to
/// run on an untrained auxiliary; returns a zero-channel tensor when channel
/// boosting is disabled so consumers can size their convolutions accordingly.
template <typename T>
Tensor<T> make_aux_channels(const AuxNet<T>& aux, const Tensor<T>& x, int level, int out_h,
                            int out_w, bool enabled = true) {
  if (!enabled) return Tensor<T>({x.shape[0], 0, out_h, out_w});
  if (!aux.trained)
    throw std::runtime_error("make_aux_channels: auxiliary network has not been trained");
  return nearest_resize(aux.features(x, level), out_h, out_w);
}

// ---------------------------------------------------------------------------
// STM-BRNet slice classifier:
//   stem conv3x3 -> relu -> STM block 1 -> STM block 2 -> GAP
//   -> dense -> relu -> dropout -> dense -> softmax

template <typename T>
struct StmBrNet {
  ModelConfig cfg;
  ParamRegistry<T> reg;
  Var<T> stem_w, stem_b;
  StmBlockParams<T> block1, block2;
  Var<T> fc1w, fc1b, fc2w, fc2b;

  StmBrNet() = default;

  StmBrNet(const ModelConfig& config, Rng& rng) : cfg(config) {
    cfg.validate();
    if (cfg.height % 4 != 0 || cfg.width % 4 != 0 || cfg.height < 8 || cfg.width < 8)
      throw std::invalid_argument("stm_brnet: input too small for two halvings");
    stem_w = reg.add("stem.w", he_conv_init<T>(cfg.stem_width, cfg.in_channels, 3, 3, rng));
    stem_b = reg.add("stem.b", Tensor<T>::zeros({cfg.stem_width}));
    block1 = detail::make_stm_block(reg, "stm1", cfg.stem_width, cfg.stm_w1, rng);
    block2 = detail::make_stm_block(reg, "stm2", cfg.stm_w1, cfg.stm_w2, rng);
    fc1w = reg.add("fc1.w", he_dense_init<T>(cfg.stm_w2, cfg.fc_width, rng));
    fc1b = reg.add("fc1.b", Tensor<T>::zeros({cfg.fc_width}));
    fc2w = reg.add("fc2.w", he_dense_init<T>(cfg.fc_width, cfg.num_classes, rng));
    fc2b = reg.add("fc2.b", Tensor<T>::zeros({cfg.num_classes}));
  }

  struct Forward {
    Var<T> probs;   // (N, classes)
    Var<T> hidden;  // (N, fc_width) pre-dropout features, used for PCA plots
  };

  Forward forward(const Var<T>& x, const AuxNet<T>& aux, bool training, Rng* dropout_rng) const {
    if (aux.feature_channels(0) != cfg.cp1() || aux.feature_channels(1) != cfg.cp2())
      throw std::invalid_argument("stm_brnet: auxiliary widths must match the STM path widths (" +
                                  std::to_string(cfg.cp1()) + "," + std::to_string(cfg.cp2()) + ")");
    const int h = x->value.shape[2], w = x->value.shape[3];
    auto s = vrelu(vconv2d(x, stem_w, stem_b, 1, 1, same_pad(3, 3, 1)));
    Tensor<T> aux1 = make_aux_channels(aux, x->value, 0, h, w);
    auto h1 = stm_block(s, block1, aux1);
    Tensor<T> aux2 = make_aux_channels(aux, x->value, 1, h / 2, w / 2);
    auto h2 = stm_block(h1, block2, aux2);
    Forward out;
    out.hidden = vrelu(vdense(vglobal_avg_pool(h2), fc1w, fc1b));
    Var<T> hid = out.hidden;
    if (training) {
      if (!dropout_rng) throw std::invalid_argument("stm_brnet: training forward needs a dropout RNG");
      hid = vdropout(hid, cfg.dropout_rate, *dropout_rng, true);
    }
    out.probs = vsoftmax_rows(vdense(hid, fc2w, fc2b));
    return out;
  }
};

template <typename T>
StmBrNet<T> build_stm_brnet(const ModelConfig& cfg, Rng& rng) {
  return StmBrNet<T>(cfg, rng);
}

// ---------------------------------------------------------------------------
// SA-CB-BRSeg pixel segmenter:
//   encoder x2 -> bottleneck convs -> boosted decoder x2 (mirrored indices)
//   -> 2x2 same-pad conv head -> per-pixel softmax.

template <typename T>
struct SaCbBrSeg {
  ModelConfig cfg;
  ParamRegistry<T> reg;
  EncDecBlockParams<T> enc1, enc2;
  Var<T> mid1w, mid1b, mid2w, mid2b;
  BoostedDecoderParams<T> dec2, dec1;
  Var<T> head_w, head_b;
  int aux_c0 = 0, aux_c1 = 0;  // decoder aux widths fixed at build time

  SaCbBrSeg() = default;

  SaCbBrSeg(const ModelConfig& config, const AuxNet<T>* aux, Rng& rng) : cfg(config) {
    cfg.validate();
    if (cfg.height % 4 != 0 || cfg.width % 4 != 0)
      throw std::invalid_argument("sa_cb_brseg: input dims must be divisible by 4");
    if (cfg.use_cb) {
      if (!aux) throw std::invalid_argument("sa_cb_brseg: channel boosting requires an auxiliary network");
      aux_c0 = aux->feature_channels(0);
      aux_c1 = aux->feature_channels(1);
    }
    enc1 = detail::make_enc_block(reg, "enc1", cfg.in_channels, cfg.enc_w1, rng);
    enc2 = detail::make_enc_block(reg, "enc2", cfg.enc_w1, cfg.enc_w2, rng);
    mid1w = reg.add("mid1.w", he_conv_init<T>(cfg.enc_w2, cfg.enc_w2, 3, 3, rng));
    mid1b = reg.add("mid1.b", Tensor<T>::zeros({cfg.enc_w2}));
    mid2w = reg.add("mid2.w", he_conv_init<T>(cfg.enc_w2, cfg.enc_w2, 3, 3, rng));
    mid2b = reg.add("mid2.b", Tensor<T>::zeros({cfg.enc_w2}));
    dec2 = detail::make_decoder_block(reg, "dec2", cfg.enc_w2, cfg.enc_w2, aux_c1, cfg.enc_w1,
                                      cfg.use_sa, rng);
    dec1 = detail::make_decoder_block(reg, "dec1", cfg.enc_w1, cfg.enc_w1, aux_c0, cfg.enc_w1,
                                      cfg.use_sa, rng);
    const int hk = cfg.head_kernel;
    head_w = reg.add("head.w", he_conv_init<T>(cfg.num_classes, cfg.enc_w1, hk, hk, rng));
    head_b = reg.add("head.b", Tensor<T>::zeros({cfg.num_classes}));
  }

  /// Per-pixel class probabilities (N, classes, H, W).
  Var<T> forward(const Var<T>& x, const AuxNet<T>* aux) const {
    if (cfg.use_cb && (!aux || !aux->trained))
      throw std::runtime_error("sa_cb_brseg: channel boosting requires a trained auxiliary network");
    const int h = x->value.shape[2], w = x->value.shape[3];
    if (h % 4 != 0 || w % 4 != 0)
      throw std::invalid_argument("sa_cb_brseg: input dims must be divisible by 4");

    auto e1 = encoder_block(x, enc1);
    auto e2 = encoder_block(e1.pooled, enc2);
    auto m = vrelu(vconv2d(e2.pooled, mid1w, mid1b, 1, 1, same_pad(3, 3, 1)));
    m = vrelu(vconv2d(m, mid2w, mid2b, 1, 1, same_pad(3, 3, 1)));

    Tensor<T> aux1 = cfg.use_cb ? make_aux_channels(*aux, x->value, 1, h / 2, w / 2)
                                : Tensor<T>({x->value.shape[0], 0, h / 2, w / 2});
    auto d2 = boosted_decoder_block(m, e2.indices, e2.pre_pool, aux1, dec2);
    Tensor<T> aux0 = cfg.use_cb ? make_aux_channels(*aux, x->value, 0, h, w)
                                : Tensor<T>({x->value.shape[0], 0, h, w});
    auto d1 = boosted_decoder_block(d2, e1.indices, e1.pre_pool, aux0, dec1);

    const int hk = cfg.head_kernel;
    auto logits = vconv2d(d1, head_w, head_b, 1, 1, same_pad(hk, hk, 1));
    return vsoftmax_channels(logits);
  }
};

template <typename T>
SaCbBrSeg<T> build_sa_cb_brseg(const ModelConfig& cfg, const AuxNet<T>* aux, Rng& rng) {
  return SaCbBrSeg<T>(cfg, aux, rng);
}

}  // namespace stmbr
