#include "dsrei/config_file.hpp"

#include <fstream>

#include "dsrei/checkpoint.hpp"
#include "dsrei/error.hpp"

namespace dsrei {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw UsageError("'" + key + "' expects a number, got '" + v + "'");
  }
}

long long to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long x = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw UsageError("'" + key + "' expects an integer, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw UsageError("'" + key + "' expects true or false, got '" + v + "'");
}

}  // namespace

std::map<std::string, std::string> parse_key_values(std::istream& in,
                                                    const std::set<std::string>& allowed,
                                                    const std::string& source) {
  std::map<std::string, std::string> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = source + ":" + std::to_string(lineno);
    if (eq == std::string::npos) throw UsageError(where + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.empty()) throw UsageError(where + ": empty key");
    if (!allowed.count(key)) throw UsageError(where + ": unknown key '" + key + "'");
    if (!out.emplace(key, value).second) throw UsageError(where + ": duplicate key '" + key + "'");
  }
  return out;
}

const std::set<std::string>& run_config_keys() {
  static const std::set<std::string> keys = [] {
    std::set<std::string> k{"data_dir",   "val_dir",  "out_dir",       "scale",         "epochs",
                            "seed",       "batch_size", "lr",          "min_lr",        "warmup_epochs",
                            "crop",       "hf_target", "max_depth",    "lambda_d",      "lambda_g",
                            "augment",    "checkpoint_every", "tile"};
    for (const auto& [key, v] : config_to_map(ModelConfig{})) k.insert(key);
    return k;
  }();
  return keys;
}

RunConfig run_config_from_map(const std::map<std::string, std::string>& kv) {
  RunConfig rc;
  std::map<std::string, std::string> model_kv;
  const auto model_keys = config_to_map(ModelConfig{});
  for (const auto& [key, v] : kv) {
    if (model_keys.count(key)) {
      model_kv[key] = v;
      continue;
    }
    if (key == "data_dir") rc.data_dir = v;
    else if (key == "val_dir") rc.val_dir = v;
    else if (key == "out_dir") rc.out_dir = v;
    else if (key == "scale") rc.scale = static_cast<int>(to_int(key, v));
    else if (key == "epochs") rc.train.total_epochs = to_double(key, v);
    else if (key == "seed") rc.train.seed = static_cast<std::uint64_t>(to_int(key, v));
    else if (key == "batch_size") rc.train.batch_size = static_cast<int>(to_int(key, v));
    else if (key == "lr") rc.train.base_lr = to_double(key, v);
    else if (key == "min_lr") rc.train.min_lr = to_double(key, v);
    else if (key == "warmup_epochs") rc.train.warmup_epochs = to_double(key, v);
    else if (key == "crop") rc.train.crop = static_cast<int>(to_int(key, v));
    else if (key == "hf_target") rc.train.hf_target = parse_hf_target(v);
    else if (key == "max_depth") rc.train.max_depth = to_double(key, v);
    else if (key == "lambda_d") rc.loss.lambda_d = to_double(key, v);
    else if (key == "lambda_g") rc.loss.lambda_g = to_double(key, v);
    else if (key == "augment") rc.train.augment = to_bool(key, v);
    else if (key == "checkpoint_every") rc.checkpoint_every = static_cast<int>(to_int(key, v));
    else if (key == "tile") rc.tile = static_cast<int>(to_int(key, v));
    else throw UsageError("unknown key '" + key + "'");
  }
  rc.model = config_from_map(model_kv);
  if (rc.scale != 4 && rc.scale != 8 && rc.scale != 16) throw InvalidConfig("scale must be 4, 8 or 16");
  if (rc.data_dir.empty()) throw UsageError("data_dir is required");
  rc.train.validate();
  return rc;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return run_config_from_map(parse_key_values(in, run_config_keys(), path));
}

}  // namespace dsrei
