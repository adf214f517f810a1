#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <functional>
#include <random>
#include <vector>

#include "dfv/ops.hpp"
#include "dfv/tensor.hpp"

namespace dfv::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("dfv_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, bool requires_grad = false, double lo = -1.0,
                            double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = u(rng);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

/// sum(y * r) for a fixed random r, so every output element carries a distinct weight.
inline Tensor random_projection(const Tensor& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return ops::sum(ops::mul(y, random_tensor(y.shape(), rng)));
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

/// Central finite-difference oracle. Compares the tape gradient of the scalar
/// f(inputs) against (f(x+h) - f(x-h)) / 2h for every element of every input
/// that requires grad. Relative error uses max(|a|, |n|, 1e-3) as denominator.
inline GradCheck grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                            std::vector<Tensor> inputs, double h = 1e-5) {
  Tape::current().clear();
  for (Tensor& t : inputs) t.zero_grad();
  Tensor y = f(inputs);
  backward(y);
  Tape::current().clear();

  GradCheck result;
  NoGradGuard guard;
  for (Tensor& t : inputs) {
    if (!t.requires_grad()) continue;
    std::vector<double> analytic(t.grad().begin(), t.grad().end());
    if (analytic.empty()) analytic.assign(t.numel(), 0.0);
    auto values = t.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double fp = f(inputs).item();
      values[i] = saved - h;
      const double fm = f(inputs).item();
      values[i] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-3});
      result.max_rel_error = std::max(result.max_rel_error, std::abs(analytic[i] - numeric) / denom);
      ++result.checked;
    }
  }
  return result;
}

}  // namespace dfv::testing
