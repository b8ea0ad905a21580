#pragma once

#include <iosfwd>
#include <map>
#include <string>

#include "stmbr/model.hpp"
#include "stmbr/train.hpp"

namespace stmbr {

/// Effective run configuration: defaults <- config file <- command line.
struct RunConfig {
  uint64_t seed = 0;
  std::string precision = "f32";  // f32 | f64
  int threads = -1;               // -1 auto, 0 sequential
  Hyperparams hyper;
  ModelConfig model;
  double test_ratio = 0.2;
  double val_ratio = 0.1;
  bool class_weights = false;
  bool paper_scale = false;

  void validate() const;
  ModelConfig effective_model() const { return paper_scale ? model.paper_scale() : model; }

  /// Applies `key = value` pairs ('#' comments, blank lines ignored).
  void apply(const std::map<std::string, std::string>& kv);

  /// Echo every effective value, one `key = value` line each.
  void echo(std::ostream& os) const;
};

std::map<std::string, std::string> parse_config_file(const std::string& path);

}  // namespace stmbr
