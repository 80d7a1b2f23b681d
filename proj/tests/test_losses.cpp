#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "xmt/losses.hpp"

using namespace xmt;

namespace {

MmdConfig fixed(double bw, int kernels = 5) {
  MmdConfig cfg;
  cfg.bandwidth_rule = BandwidthRule::Fixed;
  cfg.fixed_bandwidth = bw;
  cfg.num_kernels = kernels;
  return cfg;
}

ForwardTrace trace_of(const std::vector<std::string>& names, const std::vector<Matrix>& posts) {
  ForwardTrace t;
  for (std::size_t i = 0; i < names.size(); ++i) t.record(names[i], {posts[i], posts[i]});
  return t;
}

}  // namespace

TEST_CASE("gaussian kernel and bandwidth ladder") {
  const std::vector<double> a = {0.0, 0.0};
  const std::vector<double> b = {3.0, 4.0};
  CHECK(gaussian_kernel(a, b, 5.0) == doctest::Approx(std::exp(-0.5)));
  CHECK(gaussian_kernel(a, a, 0.1) == 1.0);
  CHECK_THROWS_AS(gaussian_kernel(a, b, 0.0), std::invalid_argument);

  const auto bw = MmdConfig{}.bandwidths(2.0);
  REQUIRE(bw.size() == 5);
  CHECK(bw[0] == doctest::Approx(0.5));
  CHECK(bw[2] == doctest::Approx(2.0));
  CHECK(bw[4] == doctest::Approx(8.0));
}

TEST_CASE("median pairwise distance matches a sorted enumeration") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    const Matrix x = oracle::random_matrix(3 + seed % 3, 4, rng);
    const Matrix y = oracle::random_matrix(4, 4, rng);
    CHECK(median_pairwise_distance(x, y) == doctest::Approx(oracle::median_distance(x, y)).epsilon(1e-14));
  }
  CHECK(median_pairwise_distance(Matrix::Ones(2, 3), Matrix::Ones(3, 3)) == 1.0);
}

TEST_CASE("mmd_sq agrees with the explicit double sum") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    const Matrix x = oracle::random_matrix(5, 3, rng);
    const Matrix y = oracle::random_matrix(7, 3, rng, 1.5);
    const MmdConfig median;
    const double sigma = oracle::median_distance(x, y);
    CHECK(mmd_sq(x, y, median).value == doctest::Approx(oracle::mmd_sq(x, y, median.bandwidths(sigma))).epsilon(1e-12));
    const MmdConfig f = fixed(0.7);
    CHECK(mmd_sq(x, y, f).value == doctest::Approx(oracle::mmd_sq(x, y, f.bandwidths(0.7))).epsilon(1e-12));
  }
}

TEST_CASE("mmd_sq of a sample with itself is zero and the statistic is symmetric") {
  std::mt19937_64 rng(3);
  const Matrix x = oracle::random_matrix(6, 4, rng);
  const Matrix y = oracle::random_matrix(9, 4, rng);
  CHECK(std::abs(mmd_sq(x, x, MmdConfig{}).value) <= 1e-12);

  const MmdResult xy = mmd_sq(x, y, MmdConfig{});
  const MmdResult yx = mmd_sq(y, x, MmdConfig{});
  CHECK(xy.value == yx.value);
  CHECK(xy.grad_x == yx.grad_y);
  CHECK(xy.grad_y == yx.grad_x);
  CHECK(xy.value >= 0.0);
}

TEST_CASE("mmd_sq of two point masses has a closed form") {
  for (double c : {0.1, 1.0, 2.5}) {
    const double sigma = 1.3;
    Matrix x = Matrix::Zero(4, 2);
    Matrix y = Matrix::Zero(3, 2);
    y.col(0).setConstant(c);
    const double expected = 2.0 * (1.0 - std::exp(-c * c / (2.0 * sigma * sigma)));
    CHECK(std::abs(mmd_sq(x, y, fixed(sigma, 1)).value - expected) <= 1e-10);
  }
}

TEST_CASE("mmd_sq gradient matches central differences") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    Matrix x = oracle::random_matrix(4, 3, rng);
    Matrix y = oracle::random_matrix(5, 3, rng, 1.2);
    // Freeze the median so the finite differences see the same bandwidth.
    const MmdConfig cfg = fixed(median_pairwise_distance(x, y));
    const MmdResult r = mmd_sq(x, y, cfg);
    auto f = [&] { return mmd_sq(x, y, cfg).value; };
    CHECK(oracle::rel_error(r.grad_x, oracle::numeric_grad(f, x.data(), 4, 3)) < 1e-4);
    CHECK(oracle::rel_error(r.grad_y, oracle::numeric_grad(f, y.data(), 5, 3)) < 1e-4);
  }
}

TEST_CASE("mmd_sq rejects tiny or mismatched samples") {
  CHECK_THROWS_AS(mmd_sq(Matrix::Ones(1, 2), Matrix::Ones(3, 2), MmdConfig{}), std::invalid_argument);
  CHECK_THROWS_AS(mmd_sq(Matrix::Ones(2, 2), Matrix::Ones(3, 3), MmdConfig{}), std::invalid_argument);
  MmdConfig bad;
  bad.num_kernels = 0;
  CHECK_THROWS_AS(mmd_sq(Matrix::Ones(2, 2), Matrix::Ones(2, 2), bad), std::invalid_argument);
}

TEST_CASE("permutation test separates shifted distributions") {
  std::mt19937_64 rng(11);
  const Matrix x = oracle::random_matrix(40, 2, rng);
  Matrix y = oracle::random_matrix(40, 2, rng);
  y.col(0).array() += 2.0;
  CHECK(mmd_permutation_pvalue(x, y, MmdConfig{}, 200, 1) < 0.01);

  int accepted = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Matrix a = oracle::random_matrix(40, 2, rng);
    const Matrix b = oracle::random_matrix(40, 2, rng);
    accepted += mmd_permutation_pvalue(a, b, MmdConfig{}, 200, seed) > 0.01 ? 1 : 0;
  }
  CHECK(accepted >= 18);
}

TEST_CASE("media-level loss sums layers and returns per-layer gradients") {
  std::mt19937_64 rng(5);
  const std::vector<std::string> names = {"fc6", "fc7"};
  std::vector<Matrix> s = {oracle::random_matrix(4, 3, rng), oracle::random_matrix(4, 2, rng)};
  std::vector<Matrix> t = {oracle::random_matrix(5, 3, rng), oracle::random_matrix(5, 2, rng)};
  const MmdConfig cfg = fixed(1.1);
  const LossTerm term = mmd_media_loss(trace_of(names, s), trace_of(names, t), names, cfg);
  CHECK(term.value == doctest::Approx(mmd_sq(s[0], t[0], cfg).value + mmd_sq(s[1], t[1], cfg).value));
  REQUIRE(term.grads.size() == 2);
  auto f = [&] { return mmd_media_loss(trace_of(names, s), trace_of(names, t), names, cfg).value; };
  CHECK(oracle::rel_error(term.grads[0].at("fc7"), oracle::numeric_grad(f, s[1].data(), 4, 2)) < 1e-4);
  CHECK(oracle::rel_error(term.grads[1].at("fc6"), oracle::numeric_grad(f, t[0].data(), 5, 3)) < 1e-4);
}

TEST_CASE("correlation-level loss pools image and text rows per domain") {
  std::mt19937_64 rng(8);
  const std::vector<std::string> names = {"fc8"};
  std::vector<Matrix> m = {oracle::random_matrix(3, 4, rng), oracle::random_matrix(3, 4, rng),
                           oracle::random_matrix(2, 4, rng), oracle::random_matrix(2, 4, rng)};
  const MmdConfig cfg = fixed(1.5);
  auto value = [&] {
    return mmd_corr_loss(trace_of(names, {m[0]}), trace_of(names, {m[1]}), trace_of(names, {m[2]}),
                         trace_of(names, {m[3]}), names, cfg);
  };
  Matrix src(6, 4), tgt(4, 4);
  src << m[0], m[1];
  tgt << m[2], m[3];
  const LossTerm term = value();
  CHECK(term.value == doctest::Approx(mmd_sq(src, tgt, cfg).value).epsilon(1e-14));
  REQUIRE(term.grads.size() == 4);
  auto f = [&] { return value().value; };
  for (std::size_t i = 0; i < 4; ++i) {
    const Matrix numeric = oracle::numeric_grad(f, m[i].data(), m[i].rows(), m[i].cols());
    CHECK(oracle::rel_error(term.grads[i].at("fc8"), numeric) < 1e-4);
  }
}

TEST_CASE("pairwise loss is the mean squared pair distance summed over layers") {
  std::mt19937_64 rng(2);
  const std::vector<std::string> names = {"fc6", "fc7"};
  std::vector<Matrix> a = {oracle::random_matrix(3, 4, rng), oracle::random_matrix(3, 2, rng)};
  std::vector<Matrix> b = {oracle::random_matrix(3, 4, rng), oracle::random_matrix(3, 2, rng)};
  const LossTerm term = pairwise_loss(trace_of(names, a), trace_of(names, b), names);
  CHECK(term.value == doctest::Approx(((a[0] - b[0]).squaredNorm() + (a[1] - b[1]).squaredNorm()) / 3.0));
  auto f = [&] { return pairwise_loss(trace_of(names, a), trace_of(names, b), names).value; };
  CHECK(oracle::rel_error(term.grads[0].at("fc6"), oracle::numeric_grad(f, a[0].data(), 3, 4)) < 1e-4);
  CHECK(oracle::rel_error(term.grads[1].at("fc7"), oracle::numeric_grad(f, b[1].data(), 3, 2)) < 1e-4);

  CHECK(pairwise_loss(trace_of(names, a), trace_of(names, a), names).value == 0.0);
  std::vector<Matrix> shorter = {oracle::random_matrix(2, 4, rng), oracle::random_matrix(2, 2, rng)};
  CHECK_THROWS_AS(pairwise_loss(trace_of(names, a), trace_of(names, shorter), names), std::invalid_argument);
}

TEST_CASE("combine weights every term and rejects non-finite values") {
  LossBreakdown t;
  t.mmd_image = 1.0;
  t.mmd_text = 2.0;
  t.mmd_corr = 3.0;
  t.pair_src = 4.0;
  t.pair_tgt = 5.0;
  t.sem_src = 6.0;
  t.sem_tgt = 7.0;
  const LossWeights w;
  const LossBreakdown c = combine(t, w);
  CHECK(c.total == doctest::Approx(0.3 * 6.0 + 0.1 * 9.0 + 13.0));
  CHECK(c.sem_tgt == 7.0);

  LossWeights zero;
  for (const auto& f : kLossFields) zero.*f.weight = 0.0;
  CHECK(combine(t, zero).total == 0.0);

  t.pair_tgt = std::numeric_limits<double>::infinity();
  CHECK_THROWS(combine(t, w));

  LossWeights negative;
  negative.w_mmd_corr = -0.1;
  CHECK_THROWS_AS(negative.validate(), std::invalid_argument);
}
