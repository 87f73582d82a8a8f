#pragma once

// Plain-text `key = value` run configuration with `#` comments.

#include <istream>
#include <map>
#include <set>
#include <string>

#include "dsrei/training.hpp"

namespace dsrei {

/// Throws UsageError on malformed lines, duplicate or unknown keys.
std::map<std::string, std::string> parse_key_values(std::istream& in,
                                                    const std::set<std::string>& allowed,
                                                    const std::string& source = "config");

struct RunConfig {
  std::string data_dir;
  std::string val_dir;  // optional
  std::string out_dir = "run";
  ModelConfig model = ModelConfig::from_preset("default");
  int scale = 4;
  TrainConfig train;
  LossConfig loss;
  int checkpoint_every = 0;  // epochs; 0 keeps only the final checkpoint
  int tile = 256;
};

const std::set<std::string>& run_config_keys();
RunConfig run_config_from_map(const std::map<std::string, std::string>& kv);
RunConfig load_run_config(const std::string& path);

}  // namespace dsrei
