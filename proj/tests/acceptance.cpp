// Acceptance gate. Prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails. Tolerances and budgets are fixed here.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dsrei/frequency.hpp"
#include "dsrei/grad_suite.hpp"
#include "dsrei/hfeb.hpp"
#include "dsrei/run.hpp"

using namespace dsrei;
namespace fs = std::filesystem;

namespace {

constexpr double kGradTol = 1e-3;
constexpr double kGradBudgetSeconds = 300;
constexpr double kDctOrthoTol = 1e-10;
constexpr double kLossTol = 1e-12;
constexpr double kOverfitRatio = 0.10;
constexpr double kOverfitBudgetSeconds = 600;
constexpr int kSanityMinWins = 4;
constexpr double kSanityBudgetSeconds = 1800;
constexpr double kHfebMin = 0.1e6, kHfebMax = 0.6e6;
constexpr double kPaperTarget = 25.0e6, kPaperSlack = 0.30;
constexpr double kMetricsRelTol = 1e-12;
constexpr double kSpectralTol = 1e-10;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

template <typename T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (!(a.shape() == b.shape())) return false;
  const auto x = a.values(), y = b.values();
  return std::memcmp(x.data(), y.data(), x.size() * sizeof(T)) == 0;
}

Tensor<float> to_float(const Tensor<double>& x) {
  return Tensor<float>(x.shape(), std::vector<float>(x.values().begin(), x.values().end()));
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& title, const Verdict& v) {
  std::printf("[%s] %d %s: %s\n", v.pass ? "PASS" : "FAIL", id, title.c_str(), v.detail.c_str());
  std::fflush(stdout);
  if (!v.pass) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// --- 1 -------------------------------------------------------------------

Verdict gradient_suite_check() {
  const auto t0 = Clock::now();
  const auto results = run_gradient_suite(gradient_suite(true, false), {1, 2, 3}, kGradTol);
  const double secs = seconds_since(t0);
  Verdict v{true, ""};
  double worst = 0;
  std::string worst_name, failed;
  for (const auto& r : results) {
    if (r.max_error > worst) {
      worst = r.max_error;
      worst_name = r.name;
    }
    if (!r.pass) {
      v.pass = false;
      failed += " " + r.name;
    }
  }
  v.pass = v.pass && secs < kGradBudgetSeconds;
  v.detail = fmt("%zu cases, worst %.3g (%s), %.1f s", results.size(), worst, worst_name.c_str(), secs);
  if (!failed.empty()) v.detail += "; failed:" + failed;
  return v;
}

// --- 2 -------------------------------------------------------------------

Verdict identities_check() {
  std::vector<std::string> broken;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) broken.push_back(what);
  };
  const Tensor<double> x = random_tensor(Shape{2, 8, 8, 8}, 1);
  {
    ParamInit init(1);
    DspBlock<double> dsp(init, 8);
    zero_params(dsp.out_proj);
    expect(bit_equal(dsp.forward(x), x), "dsp");
  }
  {
    ParamInit init(2);
    Cab<double> cab(init, 8);
    zero_params(cab.conv2);
    expect(bit_equal(cab.forward(x), x), "cab");
  }
  {
    ParamInit init(3);
    Sam<double> sam(init, 8, 1);
    zero_params(sam.image_head);
    zero_params(sam.feature_head);
    const Tensor<double> img = random_tensor(Shape{2, 1, 8, 8}, 2);
    const SamOutput<double> out = sam.forward(x, img);
    expect(bit_equal(out.image, img) && bit_equal(out.features, x), "sam");
  }
  {
    ParamInit init(4);
    LightAttention<double> att(init, 8, 4, 2, 4);
    zero_params(att.out_proj);
    expect(bit_equal(att.forward(x), x), "attention");
  }
  {
    DsrEi<double> model(ModelConfig::from_preset("tiny"), 5);
    zero_params(model.final_head);
    const Tensor<double> lr = random_tensor(Shape{1, 1, 8, 8}, 3, 0, 1);
    const Tensor<double> rgb = random_tensor(Shape{1, 3, 32, 32}, 4, 0, 1);
    expect(bit_equal(model.forward(lr, rgb).d_sr, resize_bicubic(lr, 32, 32)), "full model");
  }
  {
    ParamInit init(6);
    const Lcf<float> lcf(init, 3, 8, 8);
    bool exact = true;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const LowCutParts<float> p = lcf.decompose(to_float(random_tensor(Shape{2, 3, 16, 16}, seed, 0, 1)));
      const auto f = p.features.values(), lo = p.low.values(), hi = p.high.values();
      for (std::size_t i = 0; i < f.size(); ++i) exact = exact && (lo[i] + hi[i] == f[i]);
    }
    expect(exact, "lcf");
  }
  double worst = 0;
  for (int N : {2, 4, 8, 16}) {
    const auto B = dct_basis(N);
    for (int a = 0; a < N; ++a)
      for (int b = 0; b < N; ++b) {
        double dot = 0;
        for (int i = 0; i < N; ++i) dot += B[size_t(a * N + i)] * B[size_t(b * N + i)];
        worst = std::max(worst, std::abs(dot - (a == b ? 1.0 : 0.0)));
      }
  }
  expect(worst <= kDctOrthoTol, "dct orthonormality");
  Verdict v{broken.empty(), fmt("dsp, cab, sam, attention, full model, lcf exact; dct max dev %.2g", worst)};
  for (const auto& b : broken) v.detail += "; broken: " + b;
  return v;
}

// --- 3 -------------------------------------------------------------------

Verdict loss_check() {
  // Integer-valued ground truth keeps every |difference| exact.
  std::vector<double> g(2 * 16 * 16);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = double(i % 17);
  const Tensor<double> gt(Shape{2, 1, 16, 16}, g);
  auto shifted = [&](double c) {
    std::vector<double> v(g);
    for (double& e : v) e += c;
    return Tensor<double>(gt.shape(), v);
  };
  const LossConfig cfg;  // lambda_d 0.2, lambda_g 0.01
  ModelOutput<double> out;
  out.d_sr = shifted(1);
  out.d_sr_s1 = shifted(-1);
  out.d_sr_s2 = shifted(1);
  const double ld = depth_loss(out, gt, Tensor<double>(gt.shape(), 1.0), cfg).item();
  const double lt = total_loss(1.0, 2.0, cfg);
  const double lt_graph =
      total_loss(Tensor<double>(Shape{1, 1, 1, 1}, 1.0), Tensor<double>(Shape{1, 1, 1, 1}, 2.0), cfg).item();
  const bool ok = cfg.lambda_d == 0.2 && cfg.lambda_g == 0.01 && std::abs(ld - 1.4) <= kLossTol &&
                  std::abs(lt - 1.02) <= kLossTol && std::abs(lt_graph - 1.02) <= kLossTol;
  return {ok, fmt("depth loss %.17g (want 1.4), total %.17g (want 1.02)", ld, lt)};
}

// --- 4 and 8 -------------------------------------------------------------

struct OverfitOutcome {
  double initial = 0, final = 0, model_mae = 0, bicubic_mae = 0, secs = 0;
  fs::path dir;
};

SamplePair overfit_sample() {
  std::mt19937_64 rng(7);
  return synth_scene(rng, SynthOptions{}, "overfit");  // 64 x 64, scale 4
}

RunConfig overfit_config(const fs::path& dir) {
  RunConfig rc;
  rc.out_dir = dir.string();
  rc.model = ModelConfig::from_preset("tiny");
  rc.scale = 4;
  rc.train.batch_size = 1;
  rc.train.crop = 64;
  rc.train.base_lr = 3e-3;
  rc.train.total_epochs = 500;  // one sample, batch 1: one step per epoch
  rc.train.warmup_epochs = 5;
  rc.train.augment = false;
  rc.train.seed = 1;
  rc.train.max_depth = 1000;
  rc.tile = 64;
  return rc;
}

OverfitOutcome run_overfit(const fs::path& dir) {
  const SamplePair sample = overfit_sample();
  const RunConfig rc = overfit_config(dir);
  const Normalizer norm(rc.train.max_depth);
  const Batch<float> batch = make_batch<float>({&sample}, norm, rc.train.hf_target);

  OverfitOutcome o;
  o.dir = dir;
  {
    DsrEi<float> fresh(rc.model, rc.train.seed);
    o.initial = Trainer<float>(fresh, rc.train, rc.loss).evaluate(batch).l_total;
  }
  const auto t0 = Clock::now();
  const RunResult run = train_run(rc, {sample}, {});
  o.secs = seconds_since(t0);

  LoadedModel trained = load_model(run.final_checkpoint);
  o.final = Trainer<float>(trained.model, rc.train, rc.loss).evaluate(batch).l_total;
  o.model_mae = evaluate_model(trained.model, {sample}, norm, rc.tile).aggregate.mae;
  o.bicubic_mae = evaluate_bicubic({sample}).aggregate.mae;
  return o;
}

Verdict overfit_check(const OverfitOutcome& o) {
  const double ratio = o.final / o.initial;
  const bool ok = ratio < kOverfitRatio && o.model_mae < o.bicubic_mae && o.secs < kOverfitBudgetSeconds;
  return {ok, fmt("L_total %.4g -> %.4g (ratio %.4f), MAE %.3f cm vs bicubic %.3f cm, %.1f s", o.initial,
                  o.final, ratio, o.model_mae, o.bicubic_mae, o.secs)};
}

Verdict determinism_check(const OverfitOutcome& a, const OverfitOutcome& b) {
  std::vector<std::string> differ;
  for (const char* f : {"final.bin", "final.manifest", "train_log.csv"}) {
    const std::string x = read_file(a.dir / f), y = read_file(b.dir / f);
    if (x.empty() || x != y) differ.push_back(f);
  }
  Verdict v{differ.empty(), "final.bin, final.manifest, train_log.csv byte-identical across two runs"};
  if (!differ.empty()) {
    v.detail = "differ:";
    for (const auto& d : differ) v.detail += " " + d;
  }
  return v;
}

// --- 5 -------------------------------------------------------------------

Verdict sanity_check(const fs::path& dir) {
  std::mt19937_64 rng(11);
  std::vector<SamplePair> train, held;
  for (int k = 0; k < 20; ++k) train.push_back(synth_scene(rng, SynthOptions{}, fmt("train_%02d", k)));
  for (int k = 0; k < 5; ++k) held.push_back(synth_scene(rng, SynthOptions{}, fmt("held_%d", k)));

  RunConfig rc;
  rc.out_dir = dir.string();
  rc.model = ModelConfig::from_preset("tiny");
  rc.scale = 4;
  rc.train.batch_size = 1;
  rc.train.crop = 64;
  rc.train.base_lr = 3e-3;
  rc.train.total_epochs = 30;
  rc.train.warmup_epochs = 1;
  rc.train.seed = 1;
  rc.tile = 64;

  const auto t0 = Clock::now();
  const RunResult run = train_run(rc, train, {});
  const double secs = seconds_since(t0);
  LoadedModel trained = load_model(run.final_checkpoint);
  const EvalReport model = evaluate_model(trained.model, held, Normalizer(trained.max_depth), rc.tile);
  const EvalReport bicubic = evaluate_bicubic(held);
  int wins = 0;
  std::string per;
  for (std::size_t i = 0; i < held.size(); ++i) {
    const double m = model.rows[i].metrics.mae, b = bicubic.rows[i].metrics.mae;
    wins += m < b;
    per += fmt(" %.2f/%.2f", m, b);
  }
  return {wins >= kSanityMinWins && secs < kSanityBudgetSeconds,
          fmt("%d/5 held-out wins (model/bicubic MAE cm:%s), %.1f s", wins, per.c_str(), secs)};
}

// --- 6 -------------------------------------------------------------------

Verdict calibration_check() {
  ParamInit init(1);
  const Hfeb<float> hfeb(init, HfebConfig{});
  NamedParams<float> p;
  hfeb.collect("hfeb", p);
  const double n_hfeb = double(count_params(p));
  const double n_paper = double(DsrEi<float>(ModelConfig::from_preset("paper"), 1).parameter_count());
  const bool ok = n_hfeb >= kHfebMin && n_hfeb <= kHfebMax &&
                  std::abs(n_paper - kPaperTarget) <= kPaperSlack * kPaperTarget;
  return {ok, fmt("HFEB %.0f params (want 0.1M..0.6M), paper preset %.0f params (%+.1f%% vs 25M)", n_hfeb,
                  n_paper, 100.0 * (n_paper / kPaperTarget - 1.0))};
}

// --- 7 -------------------------------------------------------------------

Verdict oracle_check() {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> depth(0.0, 1000.0), unit(0.0, 1.0);
  double worst_metric = 0;
  for (int k = 0; k < 100; ++k) {
    Image pred(1, 24, 32), gt(1, 24, 32), mask(1, 24, 32);
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
      pred.data[i] = depth(rng);
      gt.data[i] = depth(rng);
      mask.data[i] = unit(rng) < 0.8 ? 1.0 : 0.0;
    }
    double sq = 0, ab = 0;
    long n = 0;
    for (std::int64_t y = 0; y < 24; ++y) {
      for (std::int64_t x = 0; x < 32; ++x) {
        if (mask.at(0, y, x) <= 0.5) continue;
        const double d = pred.at(0, y, x) - gt.at(0, y, x);
        sq += d * d;
        ab += std::abs(d);
        ++n;
      }
    }
    const Metrics m = compute_metrics(pred, gt, mask);
    const double mse = sq / double(n), mae = ab / double(n), rmse = std::sqrt(mse);
    worst_metric = std::max({worst_metric, std::abs(m.mse - mse) / mse, std::abs(m.mae - mae) / mae,
                             std::abs(m.rmse - rmse) / rmse});
  }

  const DctPlan plan = make_dct_plan(8, 16);
  auto basis = [](int k, int i) {
    const double a = k == 0 ? std::sqrt(1.0 / 8) : std::sqrt(2.0 / 8);
    return a * std::cos(std::numbers::pi * (2 * i + 1) * k / 16.0);
  };
  double worst_dct = 0;
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    const Tensor<double> tile = random_tensor(Shape{1, 1, 8, 8}, seed, -10, 10);
    for (int u = 0; u < 8; ++u) {
      for (int v = 0; v < 8; ++v) {
        double direct = 0;
        for (int i = 0; i < 8; ++i)
          for (int j = 0; j < 8; ++j) direct += tile.at(0, 0, i, j) * basis(u, i) * basis(v, j);
        worst_dct = std::max(worst_dct, std::abs(spectral_component(tile, u, v, plan).item() - direct));
      }
    }
  }
  return {worst_metric <= kMetricsRelTol && worst_dct <= kSpectralTol,
          fmt("metrics max rel dev %.2g over 100 maps, spectral max abs dev %.2g over 50 tiles x 64 bins",
              worst_metric, worst_dct)};
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "dsrei_acceptance";
  fs::remove_all(work);
  fs::create_directories(work);

  auto guarded = [](const std::function<Verdict()>& f) {
    try {
      return f();
    } catch (const std::exception& e) {
      return Verdict{false, std::string("exception: ") + e.what()};
    }
  };

  report(1, "gradient suite", guarded(gradient_suite_check));
  report(2, "structural identities", guarded(identities_check));
  report(3, "loss arithmetic", guarded(loss_check));

  std::vector<OverfitOutcome> runs;
  const Verdict c4 = guarded([&] {
    runs.push_back(run_overfit(work / "overfit_a"));
    return overfit_check(runs.back());
  });
  report(4, "overfit smoke test", c4);
  report(5, "learning sanity", guarded([&] { return sanity_check(work / "sanity"); }));
  report(6, "calibration", guarded(calibration_check));
  report(7, "oracle equivalence", guarded(oracle_check));
  report(8, "determinism", guarded([&] {
           if (runs.empty()) return Verdict{false, "first overfit run did not finish"};
           runs.push_back(run_overfit(work / "overfit_b"));
           return determinism_check(runs[0], runs[1]);
         }));

  std::printf("%d of 8 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
