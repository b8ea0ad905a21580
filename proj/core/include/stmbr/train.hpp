#pragma once

#include <chrono>

#include "stmbr/dataset.hpp"
#include "stmbr/metrics.hpp"
#include "stmbr/model.hpp"

namespace stmbr {

struct Hyperparams {
  double lr = 0.0001;
  int epochs = 10;
  int batch_size = 16;
  double momentum = 0.95;

  void validate() const {
    if (lr <= 0) throw std::invalid_argument("hyperparams: lr must be > 0");
    if (momentum < 0 || momentum >= 1) throw std::invalid_argument("hyperparams: momentum must be in [0,1)");
    if (batch_size < 1) throw std::invalid_argument("hyperparams: batch size must be >= 1");
    if (epochs < 0) throw std::invalid_argument("hyperparams: epochs must be >= 0");
  }
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0, train_acc = 0;
  double val_loss = 0, val_acc = 0;
  double seconds = 0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
};

/// Named RNG streams derived from one master seed.
struct RngStreams {
  Rng init, dropout, shuffle, synth;

  explicit RngStreams(uint64_t master_seed = 0)
      : init(Rng::stream(master_seed, "init")),
        dropout(Rng::stream(master_seed, "dropout")),
        shuffle(Rng::stream(master_seed, "shuffle")),
        synth(Rng::stream(master_seed, "synth")) {}
};

/// Classical (heavy-ball) momentum: v <- momentum*v + g; p <- p - lr*v.
template <typename T>
void sgd_momentum_step(Tensor<T>& param, const Tensor<T>& grad, Tensor<T>& velocity, double lr,
                       double momentum) {
  if (param.shape != grad.shape) throw std::invalid_argument("sgd: param/grad shape mismatch");
  if (velocity.empty()) velocity = Tensor<T>::zeros(param.shape);
  if (velocity.shape != param.shape) throw std::invalid_argument("sgd: velocity shape mismatch");
  const T m = static_cast<T>(momentum);
  const T step = static_cast<T>(lr);
  for (size_t i = 0; i < param.data.size(); ++i) {
    velocity.data[i] = m * velocity.data[i] + grad.data[i];
    param.data[i] -= step * velocity.data[i];
  }
}

template <typename T>
struct SgdOptimizer {
  double lr;
  double momentum;
  std::map<std::string, Tensor<T>> velocity;

  SgdOptimizer(double lr_, double momentum_) : lr(lr_), momentum(momentum_) {}

  void step(ParamRegistry<T>& reg) {
    for (auto& [name, var] : reg.items)
      sgd_momentum_step(var->value, var->grad_or_zeros(), velocity[name], lr, momentum);
  }
};

// ---------------------------------------------------------------------------
// Batch assembly. Slice intensities are stored in [0,1]; batches enter the
// networks through a fixed affine map to unit scale, without which the
// Table-1 learning rate is too small to train from scratch.

template <typename T>
T standardize_intensity(float v) {
  return static_cast<T>((v - 0.25f) * 6.0f);
}

template <typename T>
Tensor<T> make_batch_images(const SampleSet& set, std::span<const int> idx) {
  const int h = set.height, w = set.width;
  Tensor<T> out({static_cast<int>(idx.size()), 1, h, w});
  for (size_t b = 0; b < idx.size(); ++b) {
    const auto& img = set.samples[static_cast<size_t>(idx[b])].image;
    for (int64_t i = 0; i < img.numel(); ++i)
      out.data[static_cast<size_t>(b * img.numel() + i)] =
          standardize_intensity<T>(img.data[static_cast<size_t>(i)]);
  }
  return out;
}

inline std::vector<int> make_batch_labels(const SampleSet& set, std::span<const int> idx) {
  std::vector<int> out(idx.size());
  for (size_t b = 0; b < idx.size(); ++b) out[b] = set.samples[static_cast<size_t>(idx[b])].label;
  return out;
}

inline Tensor<uint8_t> make_batch_masks(const SampleSet& set, std::span<const int> idx) {
  const int h = set.height, w = set.width;
  Tensor<uint8_t> out({static_cast<int>(idx.size()), h, w});
  for (size_t b = 0; b < idx.size(); ++b) {
    const auto& m = set.samples[static_cast<size_t>(idx[b])].mask;
    if (m.empty()) continue;  // healthy slice: all background
    std::copy_n(m.data.data(), m.numel(), out.data.data() + static_cast<int64_t>(b) * h * w);
  }
  return out;
}

/// Inverse-frequency class weights over mask pixels, mean-normalized.
inline std::vector<double> inverse_frequency_weights(const SampleSet& set, int classes = 2) {
  std::vector<int64_t> counts(static_cast<size_t>(classes), 0);
  for (const auto& s : set.samples) {
    if (s.mask.empty()) {
      counts[0] += static_cast<int64_t>(set.height) * set.width;
      continue;
    }
    for (uint8_t v : s.mask.data) ++counts[v];
  }
  std::vector<double> w(static_cast<size_t>(classes), 1.0);
  int64_t total = 0;
  for (auto c : counts) total += c;
  for (int c = 0; c < classes; ++c)
    w[static_cast<size_t>(c)] = counts[static_cast<size_t>(c)] > 0
                                    ? static_cast<double>(total) /
                                          (classes * static_cast<double>(counts[static_cast<size_t>(c)]))
                                    : 0.0;
  return w;
}

// ---------------------------------------------------------------------------
// Evaluation.

template <typename T>
struct DetectEval {
  double loss = 0, accuracy = 0;
  std::vector<int> predictions, labels;
  std::vector<double> scores;      // probability of the positive class
  Tensor<double> hidden_features;  // (N, fc_width), for PCA plots
};

template <typename T>
DetectEval<T> evaluate_detector(const StmBrNet<T>& model, const AuxNet<T>& aux,
                                const SampleSet& set, int batch_size) {
  if (set.empty()) throw std::invalid_argument("evaluate_detector: empty sample set");
  DetectEval<T> ev;
  const int n = static_cast<int>(set.size());
  ev.hidden_features = Tensor<double>({n, model.cfg.fc_width});
  double loss_sum = 0;
  int correct = 0;
  for (int start = 0; start < n; start += batch_size) {
    const int end = std::min(n, start + batch_size);
    std::vector<int> idx(static_cast<size_t>(end - start));
    for (int i = start; i < end; ++i) idx[static_cast<size_t>(i - start)] = i;
    auto x = constant(make_batch_images<T>(set, idx));
    const auto labels = make_batch_labels(set, idx);
    auto fwd = model.forward(x, aux, false, nullptr);
    auto loss = vcross_entropy(fwd.probs, labels);
    loss_sum += static_cast<double>(loss->value.data[0]) * (end - start);
    const auto& p = fwd.probs->value;
    for (int b = 0; b < end - start; ++b) {
      int arg = 0;
      for (int c = 1; c < p.shape[1]; ++c)
        if (p.at2(b, c) > p.at2(b, arg)) arg = c;
      ev.predictions.push_back(arg);
      ev.labels.push_back(labels[static_cast<size_t>(b)]);
      ev.scores.push_back(static_cast<double>(p.at2(b, 1)));
      if (arg == labels[static_cast<size_t>(b)]) ++correct;
      for (int c = 0; c < model.cfg.fc_width; ++c)
        ev.hidden_features.at2(start + b, c) = static_cast<double>(fwd.hidden->value.at2(b, c));
    }
  }
  ev.loss = loss_sum / n;
  ev.accuracy = static_cast<double>(correct) / n;
  return ev;
}

template <typename T>
Tensor<uint8_t> predict_mask(const SaCbBrSeg<T>& model, const AuxNet<T>* aux,
                             const Tensor<float>& image) {
  Tensor<T> x({1, image.shape[0], image.shape[1], image.shape[2]});
  for (int64_t i = 0; i < image.numel(); ++i)
    x.data[static_cast<size_t>(i)] = standardize_intensity<T>(image.data[static_cast<size_t>(i)]);
  auto probs = model.forward(constant(std::move(x)), aux);
  const auto& p = probs->value;
  const int h = p.shape[2], w = p.shape[3];
  Tensor<uint8_t> mask({h, w});
  const int64_t hw = static_cast<int64_t>(h) * w;
  for (int64_t i = 0; i < hw; ++i)
    mask.data[static_cast<size_t>(i)] = p.data[static_cast<size_t>(hw + i)] > p.data[static_cast<size_t>(i)];
  return mask;
}

template <typename T>
struct SegEval {
  double loss = 0, pixel_accuracy = 0;
  SegReport report;
};

template <typename T>
SegEval<T> evaluate_segmenter(const SaCbBrSeg<T>& model, const AuxNet<T>* aux,
                              const SampleSet& set, int batch_size,
                              const std::vector<double>& class_weights = {}) {
  if (set.empty()) throw std::invalid_argument("evaluate_segmenter: empty sample set");
  SegEval<T> ev;
  SegAccumulator acc;
  const int n = static_cast<int>(set.size());
  double loss_sum = 0;
  int64_t correct = 0, total = 0;
  for (int start = 0; start < n; start += batch_size) {
    const int end = std::min(n, start + batch_size);
    std::vector<int> idx(static_cast<size_t>(end - start));
    for (int i = start; i < end; ++i) idx[static_cast<size_t>(i - start)] = i;
    auto x = constant(make_batch_images<T>(set, idx));
    auto masks = make_batch_masks(set, idx);
    auto probs = model.forward(x, aux);
    auto loss = vcross_entropy_pixels(probs, masks, class_weights);
    loss_sum += static_cast<double>(loss->value.data[0]) * (end - start);
    const auto& p = probs->value;
    const int h = p.shape[2], w = p.shape[3];
    const int64_t hw = static_cast<int64_t>(h) * w;
    for (int b = 0; b < end - start; ++b) {
      Tensor<uint8_t> pred({h, w});
      const T* pp = p.data.data() + static_cast<int64_t>(b) * p.shape[1] * hw;
      for (int64_t i = 0; i < hw; ++i) pred.data[static_cast<size_t>(i)] = pp[hw + i] > pp[i];
      Tensor<uint8_t> gt({h, w});
      std::copy_n(masks.data.data() + static_cast<int64_t>(b) * hw, hw, gt.data.data());
      for (int64_t i = 0; i < hw; ++i)
        if (pred.data[static_cast<size_t>(i)] == gt.data[static_cast<size_t>(i)]) ++correct;
      total += hw;
      acc.add(pred, gt);
    }
  }
  ev.loss = loss_sum / n;
  ev.pixel_accuracy = static_cast<double>(correct) / static_cast<double>(total);
  ev.report = acc.report();
  return ev;
}

// ---------------------------------------------------------------------------
// Training loops. Shuffled mini-batches, cross-entropy loss, SGD-momentum
// updates; dropout is active only on the training forward. The epoch
// callback may return false to stop early.

using EpochCallback = std::function<bool(const EpochStats&)>;

namespace detail {

template <typename T, typename StepFn, typename EvalFn>
TrainHistory run_epochs(const Hyperparams& hp, int train_count, Rng& shuffle_rng, StepFn&& step,
                        EvalFn&& eval, int start_epoch, const EpochCallback& on_epoch) {
  TrainHistory hist;
  std::vector<int> order(static_cast<size_t>(train_count));
  for (int e = start_epoch; e < hp.epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < train_count; ++i) order[static_cast<size_t>(i)] = i;
    shuffle_rng.shuffle(order.begin(), order.end());
    double loss_sum = 0;
    int64_t correct = 0, seen = 0;
    for (int start = 0; start < train_count; start += hp.batch_size) {
      const int end = std::min(train_count, start + hp.batch_size);
      std::span<const int> idx(order.data() + start, static_cast<size_t>(end - start));
      try {
        step(idx, loss_sum, correct, seen);
      } catch (const std::runtime_error& err) {
        throw std::runtime_error("training aborted at epoch " + std::to_string(e + 1) + ", batch " +
                                 std::to_string(start / hp.batch_size + 1) + ": " + err.what());
      }
    }
    EpochStats st;
    st.epoch = e + 1;
    st.train_loss = loss_sum / train_count;
    st.train_acc = static_cast<double>(correct) / static_cast<double>(seen);
    eval(st);
    st.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    hist.epochs.push_back(st);
    if (on_epoch && !on_epoch(st)) break;
  }
  return hist;
}

}  // namespace detail

template <typename T>
TrainHistory train_detector(StmBrNet<T>& model, const AuxNet<T>& aux, const SampleSet& train,
                            const SampleSet& val, const Hyperparams& hp, RngStreams& streams,
                            SgdOptimizer<T>& opt, int start_epoch = 0,
                            const EpochCallback& on_epoch = nullptr) {
  hp.validate();
  if (train.empty()) throw std::invalid_argument("train_detector: empty training set");
  const int n = static_cast<int>(train.size());
  auto step = [&](std::span<const int> idx, double& loss_sum, int64_t& correct, int64_t& seen) {
    auto x = constant(make_batch_images<T>(train, idx));
    const auto labels = make_batch_labels(train, idx);
    model.reg.zero_grads();
    auto fwd = model.forward(x, aux, true, &streams.dropout);
    auto loss = vcross_entropy(fwd.probs, labels);
    backward(loss);
    opt.step(model.reg);
    loss_sum += static_cast<double>(loss->value.data[0]) * static_cast<double>(idx.size());
    const auto& p = fwd.probs->value;
    for (size_t b = 0; b < idx.size(); ++b) {
      int arg = 0;
      for (int c = 1; c < p.shape[1]; ++c)
        if (p.at2(static_cast<int>(b), c) > p.at2(static_cast<int>(b), arg)) arg = c;
      if (arg == labels[b]) ++correct;
      ++seen;
    }
  };
  auto eval = [&](EpochStats& st) {
    if (!val.empty()) {
      auto ev = evaluate_detector(model, aux, val, hp.batch_size);
      st.val_loss = ev.loss;
      st.val_acc = ev.accuracy;
    }
  };
  return detail::run_epochs<T>(hp, n, streams.shuffle, step, eval, start_epoch, on_epoch);
}

template <typename T>
TrainHistory train_segmenter(SaCbBrSeg<T>& model, const AuxNet<T>* aux, const SampleSet& train,
                             const SampleSet& val, const Hyperparams& hp, RngStreams& streams,
                             SgdOptimizer<T>& opt, const std::vector<double>& class_weights = {},
                             int start_epoch = 0, const EpochCallback& on_epoch = nullptr) {
  hp.validate();
  if (train.empty()) throw std::invalid_argument("train_segmenter: empty training set");
  const int n = static_cast<int>(train.size());
  auto step = [&](std::span<const int> idx, double& loss_sum, int64_t& correct, int64_t& seen) {
    auto x = constant(make_batch_images<T>(train, idx));
    auto masks = make_batch_masks(train, idx);
    model.reg.zero_grads();
    auto probs = model.forward(x, aux);
    auto loss = vcross_entropy_pixels(probs, masks, class_weights);
    backward(loss);
    opt.step(model.reg);
    loss_sum += static_cast<double>(loss->value.data[0]) * static_cast<double>(idx.size());
    const auto& p = probs->value;
    const int64_t hw = static_cast<int64_t>(p.shape[2]) * p.shape[3];
    for (size_t b = 0; b < idx.size(); ++b) {
      const T* pp = p.data.data() + static_cast<int64_t>(b) * p.shape[1] * hw;
      const uint8_t* mp = masks.data.data() + static_cast<int64_t>(b) * hw;
      for (int64_t i = 0; i < hw; ++i)
        if ((pp[hw + i] > pp[i] ? 1 : 0) == mp[i]) ++correct;
      seen += hw;
    }
  };
  auto eval = [&](EpochStats& st) {
    if (!val.empty()) {
      auto ev = evaluate_segmenter(model, aux, val, hp.batch_size, class_weights);
      st.val_loss = ev.loss;
      st.val_acc = ev.pixel_accuracy;
    }
  };
  return detail::run_epochs<T>(hp, n, streams.shuffle, step, eval, start_epoch, on_epoch);
}

/// Default pretraining protocol for the auxiliary channel source. The
/// auxiliary is tiny, so a larger step and a short schedule suffice.
inline Hyperparams aux_pretrain_hyper() {
  Hyperparams hp;
  hp.lr = 0.01;
  hp.momentum = 0.9;
  hp.epochs = 10;
  return hp;
}

/// Pretrains the auxiliary network on the detection task and freezes it.
template <typename T>
TrainHistory train_aux(AuxNet<T>& aux, const SampleSet& train, const Hyperparams& hp,
                       RngStreams& streams) {
  hp.validate();
  if (train.empty()) throw std::invalid_argument("train_aux: empty training set");
  bool has_pos = false, has_neg = false;
  for (const auto& s : train.samples) (s.label == 1 ? has_pos : has_neg) = true;
  if (!has_pos || !has_neg)
    throw std::invalid_argument(
        "train_aux: auxiliary pretraining needs both classes; pass a pretrained auxiliary instead");
  SgdOptimizer<T> opt(hp.lr, hp.momentum);
  const int n = static_cast<int>(train.size());
  auto step = [&](std::span<const int> idx, double& loss_sum, int64_t& correct, int64_t& seen) {
    auto x = constant(make_batch_images<T>(train, idx));
    const auto labels = make_batch_labels(train, idx);
    aux.reg.zero_grads();
    auto probs = aux.forward(x);
    auto loss = vcross_entropy(probs, labels);
    backward(loss);
    opt.step(aux.reg);
    loss_sum += static_cast<double>(loss->value.data[0]) * static_cast<double>(idx.size());
    const auto& p = probs->value;
    for (size_t b = 0; b < idx.size(); ++b) {
      const int arg = p.at2(static_cast<int>(b), 1) > p.at2(static_cast<int>(b), 0) ? 1 : 0;
      if (arg == labels[b]) ++correct;
      ++seen;
    }
  };
  auto hist = detail::run_epochs<T>(hp, n, streams.shuffle, step, [](EpochStats&) {}, 0, nullptr);
  aux.trained = true;
  return hist;
}

inline std::string history_csv(const TrainHistory& h) {
  std::string out = "epoch,train_loss,train_acc,val_loss,val_acc,seconds\n";
  char line[160];
  for (const auto& e : h.epochs) {
    std::snprintf(line, sizeof(line), "%d,%.6f,%.4f,%.6f,%.4f,%.3f\n", e.epoch, e.train_loss,
                  e.train_acc, e.val_loss, e.val_acc, e.seconds);
    out += line;
  }
  return out;
}

}  // namespace stmbr
