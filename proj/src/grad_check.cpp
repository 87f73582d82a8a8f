#include "dsrei/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>

#include "dsrei/error.hpp"

namespace dsrei {

namespace {

std::vector<double> projection(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(0.5, 1.5);
  std::vector<double> r(n);
  for (auto& v : r) v = dist(rng);
  return r;
}

double project(const Tensor<double>& y, const std::vector<double>& r) {
  const auto v = y.values();
  double acc = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) acc += v[i] * r[i];
  return acc;
}

double rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
}

bool bit_equal(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](double p, double q) {
           return std::memcmp(&p, &q, sizeof(double)) == 0;
         });
}

// Central difference at step h. When the second difference shows the
// stencil straddles a kink (relu, |.|), the step is shrunk by 10x until two
// successive estimates agree.
double numeric_derivative(const std::function<double(double)>& eval, double f0, double h) {
  const double fp = eval(h), fm = eval(-h);
  double est = (fp - fm) / (2 * h);
  const double second = std::abs(fp - 2 * f0 + fm);
  if (second <= 1e-3 * std::abs(fp - fm) + 1e-10 * std::max(1.0, std::abs(f0))) return est;
  double step = h;
  for (int k = 0; k < 3; ++k) {
    step /= 10;
    const double finer = (eval(step) - eval(-step)) / (2 * step);
    if (std::abs(finer - est) <= 1e-6 * std::max(1.0, std::abs(finer))) return finer;
    est = finer;
  }
  return est;
}

}  // namespace

double grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& op,
                  const Tensor<double>& x, double h, std::uint64_t seed) {
  if (!(h > 0)) throw InvalidParameter("grad_check: step must be positive");
  for (double v : x.values()) {
    if (!std::isfinite(v)) throw InvalidParameter("grad_check: non-finite input");
  }
  Tensor<double> leaf = x.detached();
  leaf.set_requires_grad(true);

  Tensor<double> y = op(leaf);
  {
    NoGradGuard guard;
    Tensor<double> again = op(leaf);
    if (!bit_equal(y.values(), again.values())) {
      throw HarnessError("grad_check: operation is not deterministic");
    }
  }
  const auto r = projection(static_cast<std::size_t>(y.numel()), seed);
  if (!y.requires_grad()) {
    // Output independent of x: analytic gradient is zero.
    leaf.mutable_grad();
  } else {
    y.backward(r);
  }
  std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());
  if (analytic.empty()) analytic.assign(static_cast<std::size_t>(leaf.numel()), 0.0);

  NoGradGuard guard;
  const double f0 = project(y, r);
  double worst = 0.0;
  auto vals = leaf.mutable_values();
  for (std::size_t i = 0; i < vals.size(); ++i) {
    const double orig = vals[i];
    auto eval = [&](double d) {
      vals[i] = orig + d;
      const double f = project(op(leaf), r);
      vals[i] = orig;
      return f;
    };
    worst = std::max(worst, rel_err(analytic[i], numeric_derivative(eval, f0, h)));
  }
  return worst;
}

double grad_check_params(const std::function<Tensor<double>()>& loss,
                         std::vector<Tensor<double>> params, double h, std::size_t max_coords,
                         std::uint64_t seed) {
  if (!(h > 0)) throw InvalidParameter("grad_check_params: step must be positive");
  for (auto& p : params) {
    if (!p.is_leaf()) throw InvalidParameter("grad_check_params: parameters must be leaves");
    p.zero_grad();
  }
  Tensor<double> l = loss();
  if (l.numel() != 1) throw InvalidShape("grad_check_params: loss must be scalar");
  {
    NoGradGuard guard;
    Tensor<double> again = loss();
    if (!bit_equal(l.values(), again.values())) {
      throw HarnessError("grad_check_params: loss is not deterministic");
    }
  }
  if (l.requires_grad()) l.backward();

  // Flat coordinate list (tensor index, element index).
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t t = 0; t < params.size(); ++t)
    for (std::size_t i = 0; i < static_cast<std::size_t>(params[t].numel()); ++i)
      coords.emplace_back(t, i);
  if (max_coords != 0 && coords.size() > max_coords) {
    std::mt19937_64 rng(seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(max_coords);
  }

  NoGradGuard guard;
  const double f0 = l.item();
  double worst = 0.0;
  for (auto [t, i] : coords) {
    auto vals = params[t].mutable_values();
    const double analytic = params[t].has_grad() ? params[t].grad()[i] : 0.0;
    const double orig = vals[i];
    auto eval = [&](double d) {
      vals[i] = orig + d;
      const double f = loss().item();
      vals[i] = orig;
      return f;
    };
    worst = std::max(worst, rel_err(analytic, numeric_derivative(eval, f0, h)));
  }
  return worst;
}

}  // namespace dsrei
