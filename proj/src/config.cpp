#include "spot/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "spot/checkpoint.hpp"

namespace spot {

namespace {

const std::map<std::string, std::string>& default_values() {
  static const std::map<std::string, std::string> defaults = {
      // paths
      {"dataset", ""},
      {"eval_dataset", ""},
      {"out", "run.ckpt"},
      {"metrics", ""},
      {"ae_checkpoint", ""},
      // schedule
      {"preset", "desk-32"},
      {"seed", "1"},
      {"theta", "0.5"},
      {"batch_size", "16"},
      {"ae_epochs", "80"},
      {"adv_epochs", "150"},
      {"lr_start", "3e-4"},
      {"lr_end", "3e-6"},
      {"beta1", "0.5"},
      {"beta2", "0.999"},
      {"adam_eps", "1e-8"},
      {"mask_loss_weight", "1.0"},
      {"repair_loss", "non-saturating"},
      {"replacement", "average"},
      {"noise_scale", "1.0"},
      {"buffer_batches", "16"},
      {"buffer_mix", "0.5"},
      {"checkpoint_every", "0"},
      // augmentation
      {"augment", "false"},
      {"crop", "0"},
      {"resize_min", "1.0"},
      {"resize_max", "1.25"},
      // ablation switches
      {"real_input_images", "false"},
      {"local_repair", "false"},
      {"mask_prediction", "true"},
      {"encoder_3x3", "false"},
      {"gated_repair", "true"},
      {"history_buffer", "true"},
      {"repair_network", "true"},
      {"gan_baseline", "false"},
      // network overrides (empty = preset)
      {"encoder_spec", ""},
      {"decoder_spec", ""},
      {"disc_spec", ""},
      {"disc_hidden", "0"},
      // linear probe
      {"probe_layer", "4"},
      {"probe_target_dim", "0"},  // 0 = preset default (9200 paper / 1600 desk)
      {"probe_epochs", "200"},
      {"probe_lr", "1e-3"},
      {"probe_folds", "5"},
      {"probe_train_fraction", "0.8"},
  };
  return defaults;
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  std::size_t b = s.find_last_not_of(" \t\r");
  if (a == std::string::npos) return "";
  return s.substr(a, b - a + 1);
}

}  // namespace

RunConfig::RunConfig() : values_(default_values()) {}

RunConfig RunConfig::parse_text(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected `key = value`, got \"" +
                        line + "\"");
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

RunConfig RunConfig::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_text(ss.str(), path);
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second = value;
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

int RunConfig::get_int(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t used = 0;
    const int r = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' is not an integer: \"" + v + "\"");
  }
}

float RunConfig::get_float(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t used = 0;
    const float r = std::stof(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' is not a number: \"" + v + "\"");
  }
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + key + "' is not a boolean: \"" + v + "\"");
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t used = 0;
    const std::uint64_t r = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' is not an unsigned integer: \"" + v + "\"");
  }
}

std::string RunConfig::resolved_text() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

std::uint64_t RunConfig::fingerprint() const { return fingerprint64(resolved_text()); }

}  // namespace spot
