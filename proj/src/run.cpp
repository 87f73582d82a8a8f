#include "dsrei/run.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>

#include "dsrei/checkpoint.hpp"
#include "dsrei/error.hpp"

namespace dsrei {

namespace {

std::map<std::string, std::string> run_meta(const RunConfig& rc, int epoch) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", rc.train.max_depth);
  return {{"epoch", std::to_string(epoch)},
          {"seed", std::to_string(rc.train.seed)},
          {"scale", std::to_string(rc.scale)},
          {"max_depth", buf},
          {"hf_target", hf_target_name(rc.train.hf_target)}};
}

}  // namespace

RunResult train_run(const RunConfig& rc, const std::vector<SamplePair>& train,
                    const std::vector<SamplePair>& val, std::ostream* progress) {
  if (train.empty()) throw InvalidParameter("train_run: no training samples");
  rc.train.validate();
  std::filesystem::create_directories(rc.out_dir);
  const std::filesystem::path out(rc.out_dir);

  DsrEi<float> model(rc.model, rc.train.seed);
  Trainer<float> trainer(model, rc.train, rc.loss);
  const Normalizer norm(rc.train.max_depth);

  RunResult result;
  result.log_path = (out / "train_log.csv").string();
  std::ofstream log(result.log_path, std::ios::binary);
  if (!log) throw IoError("cannot write " + result.log_path);
  log << log_header() << "\n";

  const int epochs = static_cast<int>(std::ceil(rc.train.total_epochs));
  for (int e = 1; e <= epochs; ++e) {
    const EpochStats st = trainer.train_epoch(train);
    EpochRecord rec;
    rec.epoch = st.epoch;
    rec.lr = st.lr;
    rec.l_d = st.l_d;
    rec.l_g = st.l_g;
    rec.l_total = st.l_total;
    if (!val.empty()) {
      const Metrics m = evaluate_model(model, val, norm, rc.tile).aggregate;
      rec.val_mse = m.mse;
      rec.val_mae = m.mae;
      rec.has_val = true;
    }
    log << log_row(rec) << "\n" << std::flush;
    if (progress) *progress << log_row(rec) << "\n" << std::flush;
    result.records.push_back(rec);
    if (rc.checkpoint_every > 0 && e % rc.checkpoint_every == 0 && e != epochs) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%04d", e);
      save_checkpoint((out / name).string(), model, run_meta(rc, e));
    }
  }
  result.final_checkpoint = (out / "final").string();
  save_checkpoint(result.final_checkpoint, model, run_meta(rc, epochs));
  return result;
}

LoadedModel load_model(const std::string& prefix) {
  const CheckpointHeader header = read_checkpoint_header(prefix);
  double max_depth = TrainConfig{}.max_depth;
  if (const auto it = header.meta.find("max_depth"); it != header.meta.end()) {
    try {
      max_depth = std::stod(it->second);
    } catch (const std::exception&) {
      throw IoError(prefix + ".manifest: bad max_depth '" + it->second + "'");
    }
  }
  LoadedModel out{DsrEi<float>(header.config, 0), max_depth};
  load_checkpoint(prefix, out.model);
  return out;
}

}  // namespace dsrei
