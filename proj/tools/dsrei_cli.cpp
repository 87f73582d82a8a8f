// Command-line front end: train, eval, infer, grad-check, export-gradmap, synth.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <random>
#include <string>

#include "CLI11.hpp"
#include "dsrei/config_file.hpp"
#include "dsrei/data.hpp"
#include "dsrei/error.hpp"
#include "dsrei/grad_suite.hpp"
#include "dsrei/image_io.hpp"
#include "dsrei/run.hpp"

namespace fs = std::filesystem;
using namespace dsrei;

namespace {

constexpr int kRuntimeError = 1;
constexpr int kUsageError = 2;

// Inputs shared by infer and export-gradmap.
struct SampleArgs {
  std::string color, depth, lr_depth;
  int scale = 0;
};

void add_sample_options(CLI::App* cmd, SampleArgs& a) {
  cmd->add_option("--color", a.color, "HR colour image (PNG)")->required();
  auto* hr = cmd->add_option("--depth", a.depth, "HR depth (PNG mm or PFM m); LR is synthesized");
  auto* lr = cmd->add_option("--lr-depth", a.lr_depth, "LR depth used as is");
  hr->excludes(lr);
  cmd->add_option("--scale", a.scale, "upsampling factor (4, 8 or 16); required with --depth");
}

// Builds a sample from the command-line inputs. Without HR depth the ground
// truth and mask are left empty.
SamplePair read_sample(const SampleArgs& a) {
  const Image color = load_color(a.color);
  SamplePair s;
  s.name = fs::path(a.color).stem().string();
  if (!a.depth.empty()) {
    if (a.scale == 0) throw UsageError("--scale is required with --depth");
    const DepthMap d = load_depth(a.depth);
    if (d.depth.h != color.h || d.depth.w != color.w) {
      throw InvalidShape("depth and colour sizes differ");
    }
    s = make_sample(s.name, d.depth, color, a.scale);
    s.mask = d.mask;
  } else if (!a.lr_depth.empty()) {
    s.d_lr = load_depth(a.lr_depth).depth;
    s.i_hr = color;
    if (s.d_lr.h == 0 || color.h % s.d_lr.h != 0) throw InvalidShape("LR depth does not divide colour");
    s.scale = static_cast<int>(color.h / s.d_lr.h);
    if (a.scale != 0 && a.scale != s.scale) {
      throw UsageError("--scale " + std::to_string(a.scale) + " disagrees with the input sizes");
    }
  } else {
    throw UsageError("one of --depth or --lr-depth is required");
  }
  return s;
}

// Values divided by `peak` (the maximum when peak <= 0), as an 8-bit map.
Image to_unit(const Image& img, double peak) {
  if (peak <= 0) peak = *std::max_element(img.data.begin(), img.data.end());
  Image out = img;
  for (auto& v : out.data) v = peak > 0 ? std::clamp(v / peak, 0.0, 1.0) : 0.0;
  return out;
}

int cmd_train(const std::string& config_path, bool quiet) {
  const RunConfig rc = load_run_config(config_path);
  const auto train = load_dataset(rc.data_dir, rc.scale);
  if (train.empty()) throw IoError("no samples in " + rc.data_dir);
  std::vector<SamplePair> val;
  if (!rc.val_dir.empty()) val = load_dataset(rc.val_dir, rc.scale);
  std::cout << "training on " << train.size() << " samples";
  if (!val.empty()) std::cout << ", validating on " << val.size();
  std::cout << "\n" << log_header() << "\n";
  const RunResult r = train_run(rc, train, val, quiet ? nullptr : &std::cout);
  std::cout << "log: " << r.log_path << "\ncheckpoint: " << r.final_checkpoint << "\n";
  return 0;
}

struct EvalArgs {
  std::string data, checkpoint, pred, out = "report.csv";
  bool bicubic = false;
  int scale = 4, tile = 256;
  double max_depth = 0;
};

// Prediction file for a sample stem in `dir`, trying _pred then _depth in
// PFM and PNG.
std::string find_prediction(const std::string& dir, const std::string& stem) {
  for (const char* suffix : {"_pred.pfm", "_pred.png", "_depth.pfm", "_depth.png"}) {
    const fs::path p = fs::path(dir) / (stem + suffix);
    if (fs::exists(p)) return p.string();
  }
  throw IoError("no prediction for '" + stem + "' in " + dir);
}

int cmd_eval(const EvalArgs& a) {
  const auto samples = load_dataset(a.data, a.scale);
  if (samples.empty()) throw IoError("no samples in " + a.data);
  EvalReport report;
  if (a.bicubic) {
    report = evaluate_bicubic(samples);
  } else if (!a.pred.empty()) {
    std::vector<Image> preds;
    for (const auto& s : samples) preds.push_back(load_depth(find_prediction(a.pred, s.name)).depth);
    report = evaluate_predictions(samples, preds);
  } else {
    LoadedModel m = load_model(a.checkpoint);
    const Normalizer norm(a.max_depth > 0 ? a.max_depth : m.max_depth);
    report = evaluate_model(m.model, samples, norm, a.tile);
  }
  report.write_csv(a.out);
  std::printf("samples %zu  MSE %.6g cm^2  MAE %.6g cm  RMSE %.6g cm\nreport: %s\n",
              report.rows.size(), report.aggregate.mse, report.aggregate.mae,
              report.aggregate.rmse, a.out.c_str());
  return 0;
}

struct InferArgs {
  SampleArgs in;
  std::string checkpoint, out = "pred";
  int tile = 256;
  double error_max = 0;
};

int cmd_infer(const InferArgs& a) {
  const SamplePair s = read_sample(a.in);
  LoadedModel m = load_model(a.checkpoint);
  const Image pred = predict_depth(m.model, s, Normalizer(m.max_depth), a.tile);
  const std::string pfm = a.out + ".pfm";
  save_pfm(pfm, pred);
  std::cout << "depth: " << pfm << " (" << pred.h << "x" << pred.w << ")\n";
  if (!s.d_gt.data.empty()) {
    Image err(1, pred.h, pred.w);
    for (std::size_t i = 0; i < err.data.size(); ++i) {
      err.data[i] = s.mask.data[i] > 0.5 ? std::abs(pred.data[i] - s.d_gt.data[i]) : 0.0;
    }
    const std::string png = a.out + "_error.png";
    save_png8(png, to_unit(err, a.error_max));
    const Metrics mt = compute_metrics(pred, s.d_gt, s.mask);
    std::printf("error map: %s  MSE %.6g cm^2  MAE %.6g cm  RMSE %.6g cm\n", png.c_str(), mt.mse,
                mt.mae, mt.rmse);
  }
  return 0;
}

struct GradArgs {
  int seeds = 3;
  double tol = 1e-3;
  bool skip_model = false, inject_fault = false;
};

int cmd_grad_check(const GradArgs& a) {
  if (a.seeds < 1) throw UsageError("--seeds must be positive");
  std::vector<std::uint64_t> seeds;
  for (int k = 1; k <= a.seeds; ++k) seeds.push_back(static_cast<std::uint64_t>(k));
  const auto results =
      run_gradient_suite(gradient_suite(!a.skip_model, a.inject_fault), seeds, a.tol, &std::cout);
  const auto failed = std::count_if(results.begin(), results.end(), [](const GradResult& r) { return !r.pass; });
  std::cout << results.size() - static_cast<std::size_t>(failed) << "/" << results.size()
            << " cases passed\n";
  return failed == 0 ? 0 : kRuntimeError;
}

struct GradmapArgs {
  SampleArgs in;
  std::string checkpoint, out = "gradmap.png", gt_out, target = "gradient";
};

int cmd_export_gradmap(const GradmapArgs& a) {
  const SamplePair s = read_sample(a.in);
  LoadedModel m = load_model(a.checkpoint);
  const Normalizer norm(m.max_depth);
  Image e;
  {
    NoGradGuard guard;
    const auto lr = norm.normalize(s.d_lr).to_tensor<float>();
    e = Image::from_tensor(m.model.forward(lr, s.i_hr.to_tensor<float>()).e_pred);
  }
  save_png8(a.out, to_unit(e, 0));
  std::cout << "predicted map: " << a.out << "\n";
  if (!a.gt_out.empty()) {
    if (s.d_gt.data.empty()) throw UsageError("--gt-out needs --depth");
    const auto gt = extract_hf_target(norm.normalize(s.d_gt).to_tensor<double>(),
                                      parse_hf_target(a.target));
    save_png8(a.gt_out, to_unit(Image::from_tensor(gt), 0));
    std::cout << "target map: " << a.gt_out << "\n";
  }
  return 0;
}

struct SynthArgs {
  std::string out;
  int count = 20;
  std::uint64_t seed = 1;
  SynthOptions opt;
};

int cmd_synth(const SynthArgs& a) {
  if (a.count < 1) throw UsageError("--count must be positive");
  fs::create_directories(a.out);
  std::mt19937_64 rng(a.seed);
  for (int k = 0; k < a.count; ++k) {
    char name[32];
    std::snprintf(name, sizeof name, "scene_%03d", k);
    save_sample(a.out, synth_scene(rng, a.opt, name));
  }
  std::cout << "wrote " << a.count << " scenes to " << a.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Guided depth super-resolution"};
  app.require_subcommand(1);

  std::string config_path;
  bool quiet = false;
  auto* train = app.add_subcommand("train", "train from a key = value config file");
  train->add_option("--config", config_path, "config file")->required();
  train->add_flag("--quiet", quiet, "only print the summary");

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "write an evaluation report CSV");
  eval->add_option("--data", ev.data, "dataset directory")->required();
  eval->add_option("--scale", ev.scale, "upsampling factor")->check(CLI::IsMember({4, 8, 16}));
  auto* src_ckpt = eval->add_option("--checkpoint", ev.checkpoint, "checkpoint prefix");
  auto* src_pred = eval->add_option("--pred", ev.pred, "directory of predicted depth maps");
  auto* src_bic = eval->add_flag("--bicubic", ev.bicubic, "evaluate the bicubic baseline");
  src_ckpt->excludes(src_pred)->excludes(src_bic);
  src_pred->excludes(src_bic);
  eval->add_option("--out", ev.out, "report path");
  eval->add_option("--tile", ev.tile, "tile size in HR pixels");
  eval->add_option("--max-depth", ev.max_depth, "override the checkpoint's normalization (cm)");

  InferArgs inf;
  auto* infer = app.add_subcommand("infer", "predict one depth map");
  add_sample_options(infer, inf.in);
  infer->add_option("--checkpoint", inf.checkpoint, "checkpoint prefix")->required();
  infer->add_option("--out", inf.out, "output prefix (<out>.pfm, <out>_error.png)");
  infer->add_option("--tile", inf.tile, "tile size in HR pixels");
  infer->add_option("--error-max", inf.error_max, "error (cm) mapped to white; default the maximum");

  GradArgs ga;
  auto* grad = app.add_subcommand("grad-check", "finite-difference gradient suite");
  grad->add_option("--seeds", ga.seeds, "number of seeds");
  grad->add_option("--tol", ga.tol, "relative error tolerance");
  grad->add_flag("--skip-model", ga.skip_model, "leave out the full-model case");
  grad->add_flag("--inject-fault", ga.inject_fault, "add an op with a wrong backward");

  GradmapArgs gm;
  auto* gmap = app.add_subcommand("export-gradmap", "write the predicted gradient map as PNG");
  add_sample_options(gmap, gm.in);
  gmap->add_option("--checkpoint", gm.checkpoint, "checkpoint prefix")->required();
  gmap->add_option("--out", gm.out, "PNG path");
  gmap->add_option("--gt-out", gm.gt_out, "also write the target map extracted from --depth");
  gmap->add_option("--target", gm.target, "gradient, canny, gaussian, dct or wavelet");

  SynthArgs sy;
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--out", sy.out, "output directory")->required();
  synth->add_option("--count", sy.count, "number of scenes");
  synth->add_option("--seed", sy.seed, "generator seed");
  synth->add_option("--size", sy.opt.size, "side length, multiple of 16");
  synth->add_option("--shapes", sy.opt.n_shapes, "shapes per scene");
  synth->add_option("--min-depth", sy.opt.min_depth, "cm");
  synth->add_option("--max-depth", sy.opt.max_depth, "cm");
  synth->add_option("--noise", sy.opt.noise, "colour texture amplitude");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsageError;
  }

  try {
    if (*train) return cmd_train(config_path, quiet);
    if (*eval) {
      if (ev.checkpoint.empty() && ev.pred.empty() && !ev.bicubic) {
        throw UsageError("eval needs --checkpoint, --pred or --bicubic");
      }
      return cmd_eval(ev);
    }
    if (*infer) return cmd_infer(inf);
    if (*grad) return cmd_grad_check(ga);
    if (*gmap) return cmd_export_gradmap(gm);
    if (*synth) return cmd_synth(sy);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsageError;
  } catch (const InvalidConfig& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kUsageError;
}
