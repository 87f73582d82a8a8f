#pragma once

// End-to-end training run: per-epoch CSV log plus checkpoints in an output
// directory.

#include <iosfwd>
#include <string>
#include <vector>

#include "dsrei/config_file.hpp"
#include "dsrei/training.hpp"

namespace dsrei {

struct RunResult {
  std::vector<EpochRecord> records;
  std::string log_path;
  std::string final_checkpoint;  // prefix
};

/// Trains a float model built from `rc.model` and seeded with
/// `rc.train.seed`. Writes `<out_dir>/train_log.csv`,
/// `<out_dir>/epoch_<k>.{bin,manifest}` every `checkpoint_every` epochs and
/// `<out_dir>/final.{bin,manifest}`. Validation columns are filled when
/// `val` is non-empty.
RunResult train_run(const RunConfig& rc, const std::vector<SamplePair>& train,
                    const std::vector<SamplePair>& val, std::ostream* progress = nullptr);

/// Model plus the normalization constant stored with it.
struct LoadedModel {
  DsrEi<float> model;
  double max_depth;
};

LoadedModel load_model(const std::string& prefix);

}  // namespace dsrei
