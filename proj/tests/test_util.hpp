#pragma once

#include <gtest/gtest.h>

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "dsrei/grad_suite.hpp"
#include "dsrei/tensor.hpp"

namespace dsrei::testing {

using TD = Tensor<double>;
using TF = Tensor<float>;

template <typename T>
::testing::AssertionResult bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (!(a.shape() == b.shape())) {
    return ::testing::AssertionFailure() << "shape " << a.shape().str() << " vs " << b.shape().str();
  }
  const auto x = a.values(), y = b.values();
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (std::memcmp(&x[i], &y[i], sizeof(T)) != 0) {
      return ::testing::AssertionFailure() << "index " << i << ": " << x[i] << " vs " << y[i];
    }
  }
  return ::testing::AssertionSuccess();
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double m = 0;
  const auto x = a.values(), y = b.values();
  for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(double(x[i]) - double(y[i])));
  return m;
}

inline TF to_float(const TD& x) {
  return TF(x.shape(), std::vector<float>(x.values().begin(), x.values().end()));
}

/// Runs the named cases of the gradient suite on seeds 1..3.
inline void expect_gradients(const std::vector<std::string>& names, double tol = 1e-3) {
  std::vector<GradCase> picked;
  for (auto& c : gradient_suite(true, false)) {
    for (const auto& n : names) {
      if (c.name == n) picked.push_back(c);
    }
  }
  ASSERT_EQ(picked.size(), names.size()) << "unknown gradient case name";
  for (const auto& r : run_gradient_suite(picked, {1, 2, 3}, tol)) {
    EXPECT_TRUE(r.pass) << r.name << " max_rel_err=" << r.max_error;
  }
}

}  // namespace dsrei::testing
