#pragma once

// Checkpoints: `<prefix>.bin` holds every parameter as little-endian
// float32 back to back; `<prefix>.manifest` is text:
//
//   # dsrei checkpoint v1
//   @<config key> <value>        model configuration, then free metadata
//   <name> <n> <c> <h> <w> <byte offset>
//
// Saving a float model and loading it back is bit-exact.

#include <map>
#include <string>

#include "dsrei/gdrb.hpp"

namespace dsrei {

std::map<std::string, std::string> config_to_map(const ModelConfig& cfg);
/// Starts from the named preset (key "preset") and applies the remaining
/// keys; unknown keys throw InvalidConfig.
ModelConfig config_from_map(const std::map<std::string, std::string>& kv);

template <typename T>
void save_checkpoint(const std::string& prefix, const DsrEi<T>& model,
                     const std::map<std::string, std::string>& meta = {});

/// Overwrites the model parameters. Names, order and shapes must match.
template <typename T>
void load_checkpoint(const std::string& prefix, DsrEi<T>& model);

struct CheckpointHeader {
  ModelConfig config;
  std::map<std::string, std::string> meta;
};

CheckpointHeader read_checkpoint_header(const std::string& prefix);

}  // namespace dsrei
