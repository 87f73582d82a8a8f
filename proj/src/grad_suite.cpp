#include "dsrei/grad_suite.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <random>

#include "dsrei/error.hpp"
#include "dsrei/frequency.hpp"
#include "dsrei/gdrb.hpp"
#include "dsrei/grad_check.hpp"
#include "dsrei/hfeb.hpp"
#include "dsrei/training.hpp"

namespace dsrei {

Tensor<double> random_tensor(const Shape& shape, std::uint64_t seed, double lo, double hi,
                             double min_abs) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(static_cast<std::size_t>(shape.numel()));
  for (double& x : v) {
    do {
      x = dist(rng);
    } while (std::abs(x) < min_abs);
  }
  return Tensor<double>(shape, std::move(v));
}

Tensor<double> faulty_double(const Tensor<double>& x) {
  std::vector<double> y(x.values().begin(), x.values().end());
  for (double& v : y) v *= 2.0;
  return make_result<double>(x.shape(), std::move(y), {x}, [](detail::Node<double>& self) {
    auto& in = self.inputs[0];
    if (!in->requires_grad) return;
    auto& g = in->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += 3.0 * self.grad[i];
  });
}

namespace {

using TD = Tensor<double>;

std::vector<TD> leaves(const NamedParams<double>& named) {
  std::vector<TD> out;
  for (const auto& [name, t] : named) out.push_back(t);
  return out;
}

TD sum_all(const TD& x) {
  double s = 0;
  for (double v : x.values()) s += v;
  return make_result<double>(Shape{1, 1, 1, 1}, {s}, {x}, [](detail::Node<double>& self) {
    auto& in = self.inputs[0];
    if (!in->requires_grad) return;
    for (double& g : in->grad_buffer()) g += self.grad[0];
  });
}

// Random projection of a non-scalar output, to check parameter gradients.
TD project(const TD& y, std::uint64_t seed) {
  return sum_all(mul(y, random_tensor(y.shape(), seed ^ 0x5bd1e995u, 0.5, 1.5)));
}

double param_check(const std::function<TD()>& out, const std::vector<TD>& params, std::uint64_t seed,
                   std::size_t max_coords = 0) {
  return grad_check_params([&] { return project(out(), seed); }, params, 1e-4, max_coords, seed);
}

GradCase unary(std::string name, Shape shape, std::function<TD(const TD&)> op, double min_abs = 0.0,
               double lo = -1.0, double hi = 1.0) {
  return {std::move(name), [=](std::uint64_t seed) {
            return grad_check(op, random_tensor(shape, seed, lo, hi, min_abs), 1e-4, seed);
          }};
}

GradCase binary(std::string name, Shape a_shape, Shape b_shape,
                std::function<TD(const TD&, const TD&)> op) {
  return {std::move(name), [=](std::uint64_t seed) {
            const TD a = random_tensor(a_shape, seed), b = random_tensor(b_shape, seed + 1000);
            const double ea = grad_check([&](const TD& x) { return op(x, b); }, a, 1e-4, seed);
            const double eb = grad_check([&](const TD& x) { return op(a, x); }, b, 1e-4, seed);
            return std::max(ea, eb);
          }};
}

ConvParams<double> random_conv(std::uint64_t seed, std::int64_t in, std::int64_t out, int k,
                               int stride, int padding) {
  ConvParams<double> p;
  p.weight = random_tensor(Shape{out, in, k, k}, seed + 1, -0.5, 0.5);
  p.bias = random_tensor(Shape{out, 1, 1, 1}, seed + 2, -0.5, 0.5);
  p.weight.set_requires_grad(true);
  p.bias.set_requires_grad(true);
  p.stride = stride;
  p.padding = padding;
  return p;
}

GradCase conv_case(std::string name, Shape x_shape, std::int64_t out, int k, int stride, int padding) {
  return {std::move(name), [=](std::uint64_t seed) {
            const ConvParams<double> p = random_conv(seed, x_shape.c, out, k, stride, padding);
            const TD x = random_tensor(x_shape, seed);
            const double ex = grad_check([&](const TD& v) { return conv2d(v, p); }, x, 1e-4, seed);
            const double ep = param_check([&] { return conv2d(x, p); }, {p.weight, p.bias}, seed);
            return std::max(ex, ep);
          }};
}

// A module check: gradient with respect to the input and to every parameter.
template <typename Module>
GradCase module_case(std::string name, Shape x_shape,
                     std::function<Module(ParamInit&)> build,
                     std::function<TD(const Module&, const TD&)> fwd, double lo = -1.0,
                     double hi = 1.0) {
  return {std::move(name), [=](std::uint64_t seed) {
            ParamInit init(seed);
            const Module m = build(init);
            NamedParams<double> named;
            m.collect("m", named);
            const TD x = random_tensor(x_shape, seed, lo, hi);
            const double ex = grad_check([&](const TD& v) { return fwd(m, v); }, x, 1e-4, seed);
            const double ep = param_check([&] { return fwd(m, x); }, leaves(named), seed);
            return std::max(ex, ep);
          }};
}

}  // namespace

std::vector<GradCase> gradient_suite(bool include_model, bool inject_fault) {
  std::vector<GradCase> cases;
  const Shape s4{2, 3, 4, 5};

  cases.push_back(binary("add_broadcast", s4, Shape{1, 3, 1, 1}, [](const TD& a, const TD& b) { return add(a, b); }));
  cases.push_back(binary("sub_broadcast", s4, Shape{2, 1, 4, 5}, [](const TD& a, const TD& b) { return sub(a, b); }));
  cases.push_back(binary("mul_broadcast", s4, Shape{2, 3, 1, 1}, [](const TD& a, const TD& b) { return mul(a, b); }));
  cases.push_back(unary("scale", s4, [](const TD& x) { return scale(x, -1.7); }));
  cases.push_back(unary("sigmoid", s4, [](const TD& x) { return sigmoid(scale(x, 4.0)); }));
  cases.push_back(unary("relu", s4, [](const TD& x) { return relu(x); }, 0.05));
  cases.push_back(unary("leaky_relu", s4, [](const TD& x) { return leaky_relu(x); }, 0.05));

  cases.push_back(conv_case("conv3x3", Shape{2, 3, 6, 5}, 4, 3, 1, 1));
  cases.push_back(conv_case("conv3x3_stride2", Shape{1, 2, 7, 6}, 3, 3, 2, 1));
  cases.push_back(conv_case("conv1x1", Shape{2, 4, 3, 5}, 3, 1, 1, 0));

  cases.push_back(unary("avg_pool_2x2", Shape{2, 2, 6, 7}, [](const TD& x) { return avg_pool2d(x, 2, 2); }));
  cases.push_back(unary("avg_pool_3x3_padded", Shape{1, 2, 5, 6}, [](const TD& x) { return avg_pool2d(x, 3, 1, 1); }));
  cases.push_back(unary("global_avg_pool", s4, [](const TD& x) { return global_avg_pool(x); }));
  cases.push_back(unary("resize_nearest", Shape{1, 2, 3, 4}, [](const TD& x) { return resize(x, 7, 9, ResizeMode::kNearest); }));
  cases.push_back(unary("resize_bilinear_up", Shape{1, 2, 3, 4}, [](const TD& x) { return resize(x, 7, 9, ResizeMode::kBilinear); }));
  cases.push_back(unary("resize_bilinear_down", Shape{1, 2, 9, 8}, [](const TD& x) { return resize(x, 4, 3, ResizeMode::kBilinear); }));
  cases.push_back(unary("resize_bicubic_up", Shape{1, 2, 4, 3}, [](const TD& x) { return resize_bicubic(x, 16, 12); }));
  cases.push_back(unary("resize_bicubic_down", Shape{1, 1, 12, 16}, [](const TD& x) { return resize_bicubic(x, 3, 4); }));
  cases.push_back(unary("pixel_shuffle", Shape{2, 8, 3, 2}, [](const TD& x) { return pixel_shuffle(x, 2); }));
  cases.push_back(unary("pixel_unshuffle", Shape{2, 2, 4, 6}, [](const TD& x) { return pixel_unshuffle(x, 2); }));
  cases.push_back({"linear", [](std::uint64_t seed) {
                     LinearParams<double> p{random_tensor(Shape{5, 12, 1, 1}, seed + 1),
                                            random_tensor(Shape{5, 1, 1, 1}, seed + 2)};
                     p.weight.set_requires_grad(true);
                     p.bias.set_requires_grad(true);
                     const TD x = random_tensor(Shape{3, 3, 2, 2}, seed);
                     const double ex = grad_check([&](const TD& v) { return linear(v, p); }, x, 1e-4, seed);
                     const double ep = param_check([&] { return linear(x, p); }, {p.weight, p.bias}, seed);
                     return std::max(ex, ep);
                   }});
  cases.push_back(binary("concat_channels", Shape{2, 2, 3, 3}, Shape{2, 3, 3, 3},
                         [](const TD& a, const TD& b) { return concat_channels<double>({a, b, a}); }));
  cases.push_back(unary("split_channels", Shape{2, 5, 3, 3}, [](const TD& x) {
    const auto parts = split_channels(x, {2, 3});
    return concat_channels<double>({mul(parts[1], parts[1]), scale(parts[0], 2.0)});
  }));
  cases.push_back(unary("blur_downsample", Shape{1, 2, 6, 8}, [](const TD& x) { return blur_downsample(x); }));
  cases.push_back(unary("window_partition", Shape{2, 4, 4, 6}, [](const TD& x) { return window_partition(x, 2, 3, 2); }));
  cases.push_back(unary("window_merge", Shape{8, 2, 6, 2}, [](const TD& x) {
    return window_merge(x, Shape{2, 4, 4, 6}, 2, 3, 2);
  }));
  cases.push_back(binary("matmul", Shape{2, 3, 4, 5}, Shape{2, 3, 5, 2},
                         [](const TD& a, const TD& b) { return matmul(a, b); }));
  cases.push_back(binary("matmul_transposed", Shape{2, 1, 4, 5}, Shape{2, 1, 3, 5},
                         [](const TD& a, const TD& b) { return matmul(a, b, true); }));
  cases.push_back(unary("softmax_last", Shape{2, 2, 3, 6}, [](const TD& x) { return softmax_last(scale(x, 3.0)); }));
  cases.push_back(unary("repeat_batch", Shape{1, 2, 3, 4}, [](const TD& x) { return repeat_batch(x, 3); }));
  cases.push_back(unary("dct_squeeze", Shape{2, 3, 8, 16}, [](const TD& x) {
    return dct_squeeze(x, {{0, 0}, {1, 2}, {7, 3}}, dct_basis(8), 8);
  }));
  cases.push_back(unary("spectral_component_resized", Shape{1, 2, 10, 13}, [](const TD& x) {
    return spectral_component(x, 2, 1, make_dct_plan(4, 4));
  }));
  cases.push_back({"masked_l1_mean", [](std::uint64_t seed) {
                     const TD target = random_tensor(Shape{2, 1, 5, 5}, seed + 7);
                     std::vector<double> m(50);
                     for (std::size_t i = 0; i < m.size(); ++i) m[i] = (i * 7 + seed) % 3 == 0 ? 0.0 : 1.0;
                     const TD mask(Shape{2, 1, 5, 5}, m);
                     // Offsets away from zero keep the |.| kink out of the stencil.
                     TD x = random_tensor(Shape{2, 1, 5, 5}, seed, -1.0, 1.0, 0.05);
                     std::vector<double> xv(x.values().begin(), x.values().end());
                     for (std::size_t i = 0; i < xv.size(); ++i) xv[i] += target.values()[i];
                     return grad_check([&](const TD& v) { return masked_l1_mean(v, target, mask); },
                                       TD(x.shape(), xv), 1e-4, seed);
                   }});

  cases.push_back(module_case<DspBlock<double>>(
      "dsp_block", Shape{1, 8, 6, 6}, [](ParamInit& i) { return DspBlock<double>(i, 8); },
      [](const DspBlock<double>& m, const TD& x) { return m.forward(x); }));
  cases.push_back(module_case<LightAttention<double>>(
      "light_attention", Shape{1, 8, 8, 8},
      [](ParamInit& i) { return LightAttention<double>(i, 8, 4, 2, 4); },
      [](const LightAttention<double>& m, const TD& x) { return m.forward(x); }));
  cases.push_back({"sam", [](std::uint64_t seed) {
                     ParamInit init(seed);
                     const Sam<double> m(init, 8, 1);
                     NamedParams<double> named;
                     m.collect("sam", named);
                     const TD f = random_tensor(Shape{1, 8, 5, 5}, seed);
                     const TD img = random_tensor(Shape{1, 1, 5, 5}, seed + 3);
                     auto both = [&](const TD& ff, const TD& ii) {
                       const SamOutput<double> o = m.forward(ff, ii);
                       return concat_channels<double>({o.features, o.image});
                     };
                     const double ef = grad_check([&](const TD& v) { return both(v, img); }, f, 1e-4, seed);
                     const double ei = grad_check([&](const TD& v) { return both(f, v); }, img, 1e-4, seed);
                     const double ep = param_check([&] { return both(f, img); }, leaves(named), seed);
                     return std::max({ef, ei, ep});
                   }});
  cases.push_back(module_case<Cab<double>>(
      "cab", Shape{2, 8, 5, 6}, [](ParamInit& i) { return Cab<double>(i, 8, 4); },
      [](const Cab<double>& m, const TD& x) { return m.forward(x); }));
  cases.push_back(module_case<MultiSpectralAttention<double>>(
      "multi_spectral_attention", Shape{2, 8, 8, 8},
      [](ParamInit& i) { return MultiSpectralAttention<double>(i, 8, 4, 8); },
      [](const MultiSpectralAttention<double>& m, const TD& x) { return m.forward(x); }));
  cases.push_back(module_case<Lcf<double>>(
      "lcf", Shape{1, 3, 8, 8}, [](ParamInit& i) { return Lcf<double>(i, 3, 8, 8, 8); },
      [](const Lcf<double>& m, const TD& x) { return m.forward(x); }));
  cases.push_back({"affm", [](std::uint64_t seed) {
                     ParamInit init(seed);
                     const std::array<std::int64_t, 3> widths{8, 16, 32};
                     const Affm<double> m(init, 1, widths, 8);
                     NamedParams<double> named;
                     m.collect("affm", named);
                     std::array<TD, 3> enc{random_tensor(Shape{1, 8, 8, 8}, seed),
                                           random_tensor(Shape{1, 16, 4, 4}, seed + 1),
                                           random_tensor(Shape{1, 32, 2, 2}, seed + 2)};
                     const TD edge = random_tensor(Shape{1, 8, 8, 8}, seed + 3);
                     double err = param_check([&] { return m.forward(enc, edge); }, leaves(named), seed);
                     for (int s = 0; s < 3; ++s) {
                       err = std::max(err, grad_check(
                                               [&](const TD& v) {
                                                 auto e = enc;
                                                 e[s] = v;
                                                 return m.forward(e, edge);
                                               },
                                               enc[s], 1e-4, seed));
                     }
                     err = std::max(err, grad_check([&](const TD& v) { return m.forward(enc, v); }, edge,
                                                    1e-4, seed));
                     return err;
                   }});
  cases.push_back({"cross_stage_fusion", [](std::uint64_t seed) {
                     ParamInit init(seed);
                     const CrossStageFusion<double> m(init, {4, 8, 16});
                     NamedParams<double> named;
                     m.collect("fusion", named);
                     const TD enc1 = random_tensor(Shape{1, 8, 3, 4}, seed);
                     const TD dec1 = random_tensor(Shape{1, 8, 3, 4}, seed + 1);
                     const TD enc2 = random_tensor(Shape{1, 8, 6, 8}, seed + 2);
                     double err = param_check([&] { return m.apply(1, enc1, dec1, enc2); }, leaves(named), seed);
                     err = std::max(err, grad_check([&](const TD& v) { return m.apply(1, v, dec1, enc2); }, enc1, 1e-4, seed));
                     err = std::max(err, grad_check([&](const TD& v) { return m.apply(1, enc1, v, enc2); }, dec1, 1e-4, seed));
                     err = std::max(err, grad_check([&](const TD& v) { return m.apply(1, enc1, dec1, v); }, enc2, 1e-4, seed));
                     return err;
                   }});

  if (include_model) {
    cases.push_back({"full_model_tiny", [](std::uint64_t seed) {
                       const ModelConfig cfg = ModelConfig::from_preset("tiny");
                       const DsrEi<double> model(cfg, seed);
                       const TD lr = random_tensor(Shape{1, 1, 8, 8}, seed, 0.1, 0.9);
                       const TD rgb = random_tensor(Shape{1, 3, 32, 32}, seed + 1, 0.0, 1.0);
                       const TD gt = random_tensor(Shape{1, 1, 32, 32}, seed + 2, 0.1, 0.9);
                       const TD mask(Shape{1, 1, 32, 32}, 1.0);
                       const TD e_gt = extract_gradient_gt(gt);
                       const LossConfig loss;
                       auto total = [&](const TD& depth_lr) {
                         const ModelOutput<double> out = model.forward(depth_lr, rgb);
                         return total_loss(depth_loss(out, gt, mask, loss), gradient_loss(out.e_pred, e_gt), loss);
                       };
                       const double ep = grad_check_params([&] { return total(lr); },
                                                           leaves(model.parameters()), 1e-4, 256, seed);
                       const double ex = grad_check(total, lr, 1e-4, seed);
                       return std::max(ep, ex);
                     }});
  }
  if (inject_fault) {
    cases.push_back(unary("injected_fault", Shape{1, 1, 3, 3}, [](const TD& x) { return faulty_double(x); }));
  }
  return cases;
}

std::vector<GradResult> run_gradient_suite(const std::vector<GradCase>& cases,
                                           const std::vector<std::uint64_t>& seeds,
                                           double tolerance, std::ostream* log) {
  std::vector<GradResult> results;
  for (const auto& c : cases) {
    GradResult r{c.name, 0.0, true};
    for (std::uint64_t s : seeds) {
      const double e = c.run(s);
      r.max_error = std::max(r.max_error, std::isfinite(e) ? e : 1e300);
    }
    r.pass = r.max_error <= tolerance;
    if (log) {
      *log << (r.pass ? "PASS " : "FAIL ") << c.name << " max_rel_err=" << r.max_error << "\n";
    }
    results.push_back(r);
  }
  return results;
}

}  // namespace dsrei
