#pragma once

#include "stmbr/checkpoint.hpp"
#include "stmbr/config.hpp"
#include "stmbr/train.hpp"

namespace stmbr {

/// Everything needed to train, evaluate, resume and persist one model:
/// the model itself, its frozen auxiliary, optimizer state and RNG cursors.
template <typename T, typename Model>
struct Session {
  RunConfig run;
  AuxNet<T> aux;
  Model model;
  SgdOptimizer<T> opt{0.0001, 0.95};
  RngStreams streams;
  int epochs_done = 0;

  ModelConfig model_cfg() const { return run.effective_model(); }
};

template <typename T>
using DetectorSession = Session<T, StmBrNet<T>>;
template <typename T>
using SegmenterSession = Session<T, SaCbBrSeg<T>>;

namespace detail {

inline std::vector<CheckpointEntry> meta_entries(const RunConfig& run, int epochs_done, int kind,
                                                 int aux_w1, int aux_w2) {
  const ModelConfig m = run.effective_model();
  std::vector<CheckpointEntry> e;
  e.push_back(entry_from_scalar("meta/kind", kind));  // 0 = detector, 1 = segmenter
  e.push_back(entry_from_scalar("meta/epochs_done", epochs_done));
  e.push_back(entry_from_scalar("meta/seed", static_cast<double>(run.seed)));
  e.push_back(entry_from_scalar("meta/precision", run.precision == "f64" ? 1 : 0));
  e.push_back(entry_from_scalar("meta/lr", run.hyper.lr));
  e.push_back(entry_from_scalar("meta/epochs", run.hyper.epochs));
  e.push_back(entry_from_scalar("meta/batch_size", run.hyper.batch_size));
  e.push_back(entry_from_scalar("meta/momentum", run.hyper.momentum));
  e.push_back(entry_from_scalar("meta/height", m.height));
  e.push_back(entry_from_scalar("meta/width", m.width));
  e.push_back(entry_from_scalar("meta/stm_w1", m.stm_w1));
  e.push_back(entry_from_scalar("meta/stm_w2", m.stm_w2));
  e.push_back(entry_from_scalar("meta/stem_width", m.stem_width));
  e.push_back(entry_from_scalar("meta/fc_width", m.fc_width));
  e.push_back(entry_from_scalar("meta/enc_w1", m.enc_w1));
  e.push_back(entry_from_scalar("meta/enc_w2", m.enc_w2));
  e.push_back(entry_from_scalar("meta/dropout", m.dropout_rate));
  e.push_back(entry_from_scalar("meta/use_cb", m.use_cb ? 1 : 0));
  e.push_back(entry_from_scalar("meta/use_sa", m.use_sa ? 1 : 0));
  e.push_back(entry_from_scalar("meta/aux_w1", aux_w1));
  e.push_back(entry_from_scalar("meta/aux_w2", aux_w2));
  e.push_back(entry_from_scalar("meta/aux_trained", 1));
  e.push_back(entry_from_scalar("meta/test_ratio", run.test_ratio));
  e.push_back(entry_from_scalar("meta/val_ratio", run.val_ratio));
  e.push_back(entry_from_scalar("meta/class_weights", run.class_weights ? 1 : 0));
  return e;
}

template <typename T>
void append_session_state(std::vector<CheckpointEntry>& entries, const ParamRegistry<T>& model_reg,
                          const AuxNet<T>& aux, const SgdOptimizer<T>& opt,
                          const RngStreams& streams) {
  append_registry(entries, model_reg, "");
  append_registry(entries, aux.reg, "aux.");
  for (const auto& [name, v] : opt.velocity) entries.push_back(entry_from_tensor("opt/" + name, v));
  entries.push_back(entry_from_rng("rng/init", streams.init));
  entries.push_back(entry_from_rng("rng/dropout", streams.dropout));
  entries.push_back(entry_from_rng("rng/shuffle", streams.shuffle));
  entries.push_back(entry_from_rng("rng/synth", streams.synth));
}

inline RunConfig run_from_meta(const CheckpointMap& map) {
  RunConfig run;
  run.seed = static_cast<uint64_t>(map.scalar("meta/seed"));
  run.precision = map.scalar("meta/precision") > 0.5 ? "f64" : "f32";
  run.hyper.lr = map.scalar("meta/lr");
  run.hyper.epochs = static_cast<int>(map.scalar("meta/epochs"));
  run.hyper.batch_size = static_cast<int>(map.scalar("meta/batch_size"));
  run.hyper.momentum = map.scalar("meta/momentum");
  run.model.height = static_cast<int>(map.scalar("meta/height"));
  run.model.width = static_cast<int>(map.scalar("meta/width"));
  run.model.stm_w1 = static_cast<int>(map.scalar("meta/stm_w1"));
  run.model.stm_w2 = static_cast<int>(map.scalar("meta/stm_w2"));
  run.model.stem_width = static_cast<int>(map.scalar("meta/stem_width"));
  run.model.fc_width = static_cast<int>(map.scalar("meta/fc_width"));
  run.model.enc_w1 = static_cast<int>(map.scalar("meta/enc_w1"));
  run.model.enc_w2 = static_cast<int>(map.scalar("meta/enc_w2"));
  run.model.dropout_rate = map.scalar("meta/dropout");
  run.model.use_cb = map.scalar("meta/use_cb") > 0.5;
  run.model.use_sa = map.scalar("meta/use_sa") > 0.5;
  run.test_ratio = map.scalar("meta/test_ratio");
  run.val_ratio = map.scalar("meta/val_ratio");
  run.class_weights = map.scalar("meta/class_weights") > 0.5;
  return run;
}

template <typename T>
void load_session_state(const CheckpointMap& map, ParamRegistry<T>& model_reg, AuxNet<T>& aux,
                        SgdOptimizer<T>& opt, RngStreams& streams) {
  load_registry(map, model_reg, "");
  load_registry(map, aux.reg, "aux.");
  aux.trained = map.scalar_or("meta/aux_trained", 0) > 0.5;
  opt.velocity.clear();
  for (const auto& [name, entry] : map.entries())
    if (name.rfind("opt/", 0) == 0)
      opt.velocity[name.substr(4)] = tensor_from_entry<T>(entry);
  streams.init = rng_from_entry(map.at("rng/init"));
  streams.dropout = rng_from_entry(map.at("rng/dropout"));
  streams.shuffle = rng_from_entry(map.at("rng/shuffle"));
  streams.synth = rng_from_entry(map.at("rng/synth"));
}

}  // namespace detail

template <typename T>
void save_detector(const std::string& path, const DetectorSession<T>& s) {
  auto entries = detail::meta_entries(s.run, s.epochs_done, 0, s.aux.w1, s.aux.w2);
  detail::append_session_state(entries, s.model.reg, s.aux, s.opt, s.streams);
  write_checkpoint(path, entries);
}

template <typename T>
void save_segmenter(const std::string& path, const SegmenterSession<T>& s) {
  auto entries = detail::meta_entries(s.run, s.epochs_done, 1, s.aux.w1, s.aux.w2);
  detail::append_session_state(entries, s.model.reg, s.aux, s.opt, s.streams);
  write_checkpoint(path, entries);
}

inline int checkpoint_kind(const std::string& path) {
  CheckpointMap map(read_checkpoint(path));
  return static_cast<int>(map.scalar("meta/kind"));
}

inline std::string checkpoint_precision(const std::string& path) {
  CheckpointMap map(read_checkpoint(path));
  return map.scalar("meta/precision") > 0.5 ? "f64" : "f32";
}

template <typename T>
DetectorSession<T> load_detector(const std::string& path) {
  CheckpointMap map(read_checkpoint(path));
  if (static_cast<int>(map.scalar("meta/kind")) != 0)
    throw std::runtime_error("checkpoint: not a detector checkpoint: " + path);
  DetectorSession<T> s;
  s.run = detail::run_from_meta(map);
  s.epochs_done = static_cast<int>(map.scalar("meta/epochs_done"));
  const ModelConfig cfg = s.run.effective_model();
  Rng scratch(0);
  s.aux = AuxNet<T>(cfg.in_channels, static_cast<int>(map.scalar("meta/aux_w1")),
                    static_cast<int>(map.scalar("meta/aux_w2")), cfg.num_classes, scratch);
  s.model = StmBrNet<T>(cfg, scratch);
  s.opt = SgdOptimizer<T>(s.run.hyper.lr, s.run.hyper.momentum);
  detail::load_session_state(map, s.model.reg, s.aux, s.opt, s.streams);
  return s;
}

template <typename T>
SegmenterSession<T> load_segmenter(const std::string& path) {
  CheckpointMap map(read_checkpoint(path));
  if (static_cast<int>(map.scalar("meta/kind")) != 1)
    throw std::runtime_error("checkpoint: not a segmenter checkpoint: " + path);
  SegmenterSession<T> s;
  s.run = detail::run_from_meta(map);
  s.epochs_done = static_cast<int>(map.scalar("meta/epochs_done"));
  const ModelConfig cfg = s.run.effective_model();
  Rng scratch(0);
  s.aux = AuxNet<T>(cfg.in_channels, static_cast<int>(map.scalar("meta/aux_w1")),
                    static_cast<int>(map.scalar("meta/aux_w2")), cfg.num_classes, scratch);
  s.model = SaCbBrSeg<T>(cfg, cfg.use_cb ? &s.aux : nullptr, scratch);
  s.opt = SgdOptimizer<T>(s.run.hyper.lr, s.run.hyper.momentum);
  detail::load_session_state(map, s.model.reg, s.aux, s.opt, s.streams);
  return s;
}

/// Loads only the frozen auxiliary from any checkpoint (used when a
/// segmenter borrows the detector-pretrained auxiliary).
template <typename T>
AuxNet<T> load_aux(const std::string& path, int in_channels, int num_classes) {
  CheckpointMap map(read_checkpoint(path));
  Rng scratch(0);
  AuxNet<T> aux(in_channels, static_cast<int>(map.scalar("meta/aux_w1")),
                static_cast<int>(map.scalar("meta/aux_w2")), num_classes, scratch);
  load_registry(map, aux.reg, "aux.");
  aux.trained = map.scalar_or("meta/aux_trained", 0) > 0.5;
  return aux;
}

}  // namespace stmbr
