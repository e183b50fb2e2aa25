#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "spikegraphormer/spikegraphormer.hpp"

namespace sgf::testing {

inline Tensor random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(s);
  for (auto& v : t.values()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

inline SpikeTensor random_spikes(Shape s, Rng& rng, double density = 0.5) {
  SpikeTensor out(s);
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c)
      if (rng.uniform() < density) out.set(r, c, true);
  return out;
}

/// Reference product with the plain i-j-k loop, k ascending.
template <typename Real>
BasicTensor<Real> naive_matmul(const BasicTensor<Real>& a, const BasicTensor<Real>& b) {
  BasicTensor<Real> out(a.shape().with_cols(b.cols()));
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      Real acc = 0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
      out(i, j) = acc;
    }
  return out;
}

/// A copy of `perm`-permuted rows of the [T x N x D] tensor x.
template <typename Real>
BasicTensor<Real> permute_nodes(const BasicTensor<Real>& x, const std::vector<std::size_t>& perm) {
  BasicTensor<Real> out(x.shape());
  if (x.shape().rank() == 2) {
    for (std::size_t i = 0; i < perm.size(); ++i)
      for (std::size_t c = 0; c < x.cols(); ++c) out(i, c) = x(perm[i], c);
    return out;
  }
  for (std::size_t t = 0; t < x.shape()[0]; ++t)
    for (std::size_t i = 0; i < perm.size(); ++i)
      for (std::size_t c = 0; c < x.shape()[2]; ++c) out(t, i, c) = x(t, perm[i], c);
  return out;
}

inline SpikeTensor permute_nodes(const SpikeTensor& s, const std::vector<std::size_t>& perm) {
  return SpikeTensor::pack(permute_nodes(s.unpack<float>(), perm));
}

inline std::vector<std::size_t> random_permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  rng.shuffle(p);
  return p;
}

}  // namespace sgf::testing

namespace sgf::testing {

/// Marks a constant as a gradient leaf: its grad survives backward().
template <typename Real>
ag::Var<Real> leaf(ag::Tape<Real>& tape, BasicTensor<Real> v) {
  ag::Var<Real> x = tape.constant(std::move(v));
  x.node()->needs_grad = true;
  return x;
}

struct GradCheck {
  std::size_t checked = 0;
  std::size_t good = 0;
  double worst = 0;
  double pass_rate() const { return checked == 0 ? 0.0 : static_cast<double>(good) / static_cast<double>(checked); }
};

/// Central differences of `loss()` over every entry of `values`, compared
/// with `analytic` (same layout). Relative error uses max(|fd|, |an|, floor).
template <typename LossFn>
void finite_difference_check(GradCheck& acc, BasicTensor<double>& values, const BasicTensor<double>& analytic,
                             LossFn&& loss, double h = 1e-3, double tol = 1e-3, double floor = 1e-8) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + h;
    const double up = loss();
    values[i] = saved - h;
    const double down = loss();
    values[i] = saved;
    const double fd = (up - down) / (2 * h);
    const double err = std::abs(fd - analytic[i]) / std::max({std::abs(fd), std::abs(analytic[i]), floor});
    ++acc.checked;
    if (err <= tol) ++acc.good;
    acc.worst = std::max(acc.worst, err);
  }
}

}  // namespace sgf::testing

namespace sgf::testing {

/// Scalar sum(w * v) with its backward, for driving gradient checks.
template <typename Real>
ag::Var<Real> weighted_sum(ag::Tape<Real>& tape, const ag::Var<Real>& v, const BasicTensor<Real>& w) {
  const BasicTensor<Real> dv = v.dense();
  if (dv.size() != w.size()) throw DimensionError("weighted_sum: size mismatch");
  Real total = 0;
  for (std::size_t i = 0; i < dv.size(); ++i) total += w[i] * dv[i];
  auto vn = v.node();
  auto wp = std::make_shared<BasicTensor<Real>>(w);
  return tape.record(tape.make_dense(BasicTensor<Real>(Shape{1}, total)), [vn, wp](ag::Node<Real>& self) {
    if (!vn->needs_grad) return;
    BasicTensor<Real> g = wp->reshaped(vn->shape());
    for (auto& x : g.values()) x *= self.grad[0];
    vn->add_grad(g);
  });
}

}  // namespace sgf::testing

#include <atomic>
#include <filesystem>
#include <string>
#include <unistd.h>

namespace sgf::testing {

/// Fresh scratch directory, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("sgf_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::filesystem::path fixture(const std::string& name) { return std::filesystem::path(SGF_FIXTURES) / name; }

}  // namespace sgf::testing
