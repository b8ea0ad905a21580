#include "stmbr/config.hpp"

#include <fstream>
#include <ostream>

namespace stmbr {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  size_t b = s.find_last_not_of(" \t\r");
  return a == std::string::npos ? std::string{} : s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "off" || v == "no") return false;
  throw std::invalid_argument("config: boolean expected for " + key + ", got '" + v + "'");
}

}  // namespace

std::map<std::string, std::string> parse_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("config: cannot open " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: expected key = value at " + path + ":" +
                                  std::to_string(lineno));
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

void RunConfig::apply(const std::map<std::string, std::string>& kv) {
  for (const auto& [key, value] : kv) {
    try {
      if (key == "seed")
        seed = std::stoull(value);
      else if (key == "precision")
        precision = value;
      else if (key == "threads")
        threads = std::stoi(value);
      else if (key == "lr")
        hyper.lr = std::stod(value);
      else if (key == "epochs")
        hyper.epochs = std::stoi(value);
      else if (key == "batch_size")
        hyper.batch_size = std::stoi(value);
      else if (key == "momentum")
        hyper.momentum = std::stod(value);
      else if (key == "input_size") {
        model.height = std::stoi(value);
        model.width = model.height;
      } else if (key == "stm_width1")
        model.stm_w1 = std::stoi(value);
      else if (key == "stm_width2")
        model.stm_w2 = std::stoi(value);
      else if (key == "stem_width")
        model.stem_width = std::stoi(value);
      else if (key == "fc_width")
        model.fc_width = std::stoi(value);
      else if (key == "enc_width1")
        model.enc_w1 = std::stoi(value);
      else if (key == "enc_width2")
        model.enc_w2 = std::stoi(value);
      else if (key == "dropout")
        model.dropout_rate = std::stod(value);
      else if (key == "cb")
        model.use_cb = parse_bool(value, key);
      else if (key == "sa")
        model.use_sa = parse_bool(value, key);
      else if (key == "test_ratio")
        test_ratio = std::stod(value);
      else if (key == "val_ratio")
        val_ratio = std::stod(value);
      else if (key == "class_weights")
        class_weights = parse_bool(value, key);
      else if (key == "paper_scale")
        paper_scale = parse_bool(value, key);
      else
        throw std::invalid_argument("config: unknown key '" + key + "'");
    } catch (const std::invalid_argument&) {
      throw;
    } catch (const std::exception&) {
      throw std::invalid_argument("config: bad value for " + key + ": '" + value + "'");
    }
  }
}

void RunConfig::validate() const {
  if (precision != "f32" && precision != "f64")
    throw std::invalid_argument("config: precision must be f32 or f64");
  hyper.validate();
  effective_model().validate();
  if (test_ratio <= 0 || test_ratio >= 1 || val_ratio < 0 || val_ratio >= 1 ||
      test_ratio + val_ratio >= 1)
    throw std::invalid_argument("config: split ratios must leave a train remainder");
}

void RunConfig::echo(std::ostream& os) const {
  const ModelConfig m = effective_model();
  os << "seed = " << seed << "\nprecision = " << precision << "\nthreads = " << threads
     << "\nlr = " << hyper.lr << "\nepochs = " << hyper.epochs
     << "\nbatch_size = " << hyper.batch_size << "\nmomentum = " << hyper.momentum
     << "\ninput_size = " << m.height << "\nstm_width1 = " << m.stm_w1
     << "\nstm_width2 = " << m.stm_w2 << "\nstem_width = " << m.stem_width
     << "\nfc_width = " << m.fc_width << "\nenc_width1 = " << m.enc_w1
     << "\nenc_width2 = " << m.enc_w2 << "\ndropout = " << m.dropout_rate
     << "\ncb = " << (m.use_cb ? "true" : "false") << "\nsa = " << (m.use_sa ? "true" : "false")
     << "\ntest_ratio = " << test_ratio << "\nval_ratio = " << val_ratio
     << "\nclass_weights = " << (class_weights ? "true" : "false")
     << "\npaper_scale = " << (paper_scale ? "true" : "false") << "\n";
}

}  // namespace stmbr
