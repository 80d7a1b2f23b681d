#include "xmt/losses.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace xmt {
namespace {

Matrix squared_distances(const Matrix& a, const Matrix& b) {
  Matrix d(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j) d(i, j) = (a.row(i) - b.row(j)).squaredNorm();
  return d;
}

// Total order on matrices used to evaluate mmd_sq in one canonical argument
// order, which makes the estimator exactly symmetric.
bool canonical_before(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) return a.rows() < b.rows();
  if (a.cols() != b.cols()) return a.cols() < b.cols();
  return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(), b.data() + b.size());
}

double base_bandwidth(const Matrix& x, const Matrix& y, const MmdConfig& cfg) {
  return cfg.bandwidth_rule == BandwidthRule::Fixed ? cfg.fixed_bandwidth : median_pairwise_distance(x, y);
}

MmdResult mmd_sq_ordered(const Matrix& x, const Matrix& y, const MmdConfig& cfg) {
  const double n = static_cast<double>(x.rows());
  const double m = static_cast<double>(y.rows());
  const Matrix dxx = squared_distances(x, x);
  const Matrix dyy = squared_distances(y, y);
  const Matrix dxy = squared_distances(x, y);

  MmdResult out;
  out.grad_x = Matrix::Zero(x.rows(), x.cols());
  out.grad_y = Matrix::Zero(y.rows(), y.cols());
  const auto widths = cfg.bandwidths(base_bandwidth(x, y, cfg));
  double value = 0.0;
  for (double bw : widths) {
    const double gamma = 1.0 / (2.0 * bw * bw);
    const Matrix kxx = (-gamma * dxx.array()).exp().matrix();
    const Matrix kyy = (-gamma * dyy.array()).exp().matrix();
    const Matrix kxy = (-gamma * dxy.array()).exp().matrix();
    value += kxx.sum() / (n * n) + kyy.sum() / (m * m) - 2.0 * kxy.sum() / (n * m);

    const Vector rxx = kxx.rowwise().sum();
    const Vector ryy = kyy.rowwise().sum();
    const Vector rxy = kxy.rowwise().sum();
    const Vector cxy = kxy.colwise().sum().transpose();
    out.grad_x += (-4.0 * gamma / (n * n)) * (rxx.asDiagonal() * x - kxx * x);
    out.grad_x += (4.0 * gamma / (n * m)) * (rxy.asDiagonal() * x - kxy * y);
    out.grad_y += (-4.0 * gamma / (m * m)) * (ryy.asDiagonal() * y - kyy * y);
    out.grad_y += (4.0 * gamma / (n * m)) * (cxy.asDiagonal() * y - kxy.transpose() * x);
  }
  const double k = static_cast<double>(widths.size());
  out.value = std::max(0.0, value / k);
  out.grad_x /= k;
  out.grad_y /= k;
  return out;
}

}  // namespace

void MmdConfig::validate() const {
  if (num_kernels < 1) throw std::invalid_argument("MmdConfig: num_kernels must be >= 1");
  if (!(ladder_factor > 0.0) || !std::isfinite(ladder_factor)) {
    throw std::invalid_argument("MmdConfig: ladder_factor must be > 0");
  }
  if (bandwidth_rule == BandwidthRule::Fixed && (!(fixed_bandwidth > 0.0) || !std::isfinite(fixed_bandwidth))) {
    throw std::invalid_argument("MmdConfig: fixed bandwidth must be > 0");
  }
}

std::vector<double> MmdConfig::bandwidths(double base) const {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(num_kernels));
  const double center = 0.5 * static_cast<double>(num_kernels - 1);
  for (int j = 0; j < num_kernels; ++j) out.push_back(base * std::pow(ladder_factor, j - center));
  return out;
}

double gaussian_kernel(std::span<const double> x, std::span<const double> y, double bandwidth) {
  if (x.size() != y.size()) {
    throw std::invalid_argument("gaussian_kernel: dimension mismatch " + std::to_string(x.size()) + " vs " +
                                std::to_string(y.size()));
  }
  if (!(bandwidth > 0.0)) throw std::invalid_argument("gaussian_kernel: bandwidth must be > 0");
  double d2 = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) d2 += (x[i] - y[i]) * (x[i] - y[i]);
  return std::exp(-d2 / (2.0 * bandwidth * bandwidth));
}

double median_pairwise_distance(const Matrix& x, const Matrix& y) {
  if (x.cols() != y.cols()) throw std::invalid_argument("median_pairwise_distance: dimension mismatch");
  Matrix pooled(x.rows() + y.rows(), x.cols());
  pooled << x, y;
  const Eigen::Index n = pooled.rows();
  std::vector<double> dists;
  dists.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) dists.push_back((pooled.row(i) - pooled.row(j)).norm());
  if (dists.empty()) return 1.0;
  const std::size_t mid = dists.size() / 2;
  std::nth_element(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(mid), dists.end());
  double median = dists[mid];
  if (dists.size() % 2 == 0) {
    const double lower = *std::max_element(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(mid));
    median = 0.5 * (median + lower);
  }
  return median > 0.0 ? median : 1.0;
}

MmdResult mmd_sq(const Matrix& x, const Matrix& y, const MmdConfig& cfg) {
  cfg.validate();
  if (x.rows() < 2 || y.rows() < 2) {
    throw std::invalid_argument("mmd_sq: need at least 2 samples per side, got " + std::to_string(x.rows()) +
                                " and " + std::to_string(y.rows()));
  }
  if (x.cols() != y.cols()) {
    throw std::invalid_argument("mmd_sq: feature dims differ (" + std::to_string(x.cols()) + " vs " +
                                std::to_string(y.cols()) + ")");
  }
  if (canonical_before(y, x)) {
    MmdResult swapped = mmd_sq_ordered(y, x, cfg);
    std::swap(swapped.grad_x, swapped.grad_y);
    return swapped;
  }
  return mmd_sq_ordered(x, y, cfg);
}

double mmd_permutation_pvalue(const Matrix& x, const Matrix& y, const MmdConfig& cfg, int permutations,
                              std::uint64_t seed) {
  cfg.validate();
  if (x.rows() < 2 || y.rows() < 2 || x.cols() != y.cols()) {
    throw std::invalid_argument("mmd_permutation_pvalue: need >= 2 samples per side with equal dims");
  }
  if (permutations < 1) throw std::invalid_argument("mmd_permutation_pvalue: permutations must be >= 1");
  Matrix pooled(x.rows() + y.rows(), x.cols());
  pooled << x, y;
  const Eigen::Index total = pooled.rows();
  const Matrix d = squared_distances(pooled, pooled);
  Matrix kernel = Matrix::Zero(total, total);
  const auto widths = cfg.bandwidths(base_bandwidth(x, y, cfg));
  for (double bw : widths) kernel += (-d.array() / (2.0 * bw * bw)).exp().matrix();
  kernel /= static_cast<double>(widths.size());

  const double n = static_cast<double>(x.rows());
  const double m = static_cast<double>(y.rows());
  auto statistic = [&](const Vector& in_x) {
    const Vector in_y = Vector::Ones(total) - in_x;
    const Vector k_x = kernel * in_x;
    const double xx = in_x.dot(k_x);
    const double xy = in_y.dot(k_x);
    const double yy = in_y.dot(kernel * in_y);
    return xx / (n * n) + yy / (m * m) - 2.0 * xy / (n * m);
  };

  std::vector<Eigen::Index> order(static_cast<std::size_t>(total));
  for (Eigen::Index i = 0; i < total; ++i) order[static_cast<std::size_t>(i)] = i;
  Vector membership = Vector::Zero(total);
  membership.head(x.rows()).setOnes();
  const double observed = statistic(membership);

  std::mt19937_64 rng(seed);
  int at_least = 0;
  for (int p = 0; p < permutations; ++p) {
    std::shuffle(order.begin(), order.end(), rng);
    membership.setZero();
    for (Eigen::Index i = 0; i < x.rows(); ++i) membership(order[static_cast<std::size_t>(i)]) = 1.0;
    if (statistic(membership) >= observed) ++at_least;
  }
  return (1.0 + at_least) / (1.0 + permutations);
}

LossTerm mmd_media_loss(const ForwardTrace& src, const ForwardTrace& tgt, std::span<const std::string> layers,
                        const MmdConfig& cfg) {
  LossTerm out;
  out.grads.resize(2);
  for (const auto& layer : layers) {
    MmdResult r = mmd_sq(src.post(layer), tgt.post(layer), cfg);
    out.value += r.value;
    out.grads[0].insert_or_assign(layer, std::move(r.grad_x));
    out.grads[1].insert_or_assign(layer, std::move(r.grad_y));
  }
  return out;
}

LossTerm mmd_corr_loss(const ForwardTrace& src_img, const ForwardTrace& src_txt, const ForwardTrace& tgt_img,
                       const ForwardTrace& tgt_txt, std::span<const std::string> layers, const MmdConfig& cfg) {
  auto stack = [](const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) throw std::invalid_argument("mmd_corr_loss: image/text widths differ");
    Matrix s(a.rows() + b.rows(), a.cols());
    s << a, b;
    return s;
  };
  LossTerm out;
  out.grads.resize(4);
  for (const auto& layer : layers) {
    const Matrix& si = src_img.post(layer);
    const Matrix& ti = tgt_img.post(layer);
    MmdResult r = mmd_sq(stack(si, src_txt.post(layer)), stack(ti, tgt_txt.post(layer)), cfg);
    out.value += r.value;
    out.grads[0].insert_or_assign(layer, r.grad_x.topRows(si.rows()));
    out.grads[1].insert_or_assign(layer, r.grad_x.bottomRows(r.grad_x.rows() - si.rows()));
    out.grads[2].insert_or_assign(layer, r.grad_y.topRows(ti.rows()));
    out.grads[3].insert_or_assign(layer, r.grad_y.bottomRows(r.grad_y.rows() - ti.rows()));
  }
  return out;
}

LossTerm pairwise_loss(const ForwardTrace& img, const ForwardTrace& txt, std::span<const std::string> layers) {
  if (img.batch_size() != txt.batch_size() || img.batch_size() < 1) {
    throw std::invalid_argument("pairwise_loss: unaligned batches (" + std::to_string(img.batch_size()) + " images, " +
                                std::to_string(txt.batch_size()) + " texts)");
  }
  const double batch = static_cast<double>(img.batch_size());
  LossTerm out;
  out.grads.resize(2);
  for (const auto& layer : layers) {
    const Matrix& a = img.post(layer);
    const Matrix& b = txt.post(layer);
    if (a.cols() != b.cols()) throw std::invalid_argument("pairwise_loss: width mismatch at " + layer);
    const Matrix diff = a - b;
    out.value += diff.squaredNorm() / batch;
    out.grads[0].insert_or_assign(layer, (2.0 / batch) * diff);
    out.grads[1].insert_or_assign(layer, (-2.0 / batch) * diff);
  }
  return out;
}

void LossWeights::validate() const {
  for (const auto& f : kLossFields) {
    const double w = this->*f.weight;
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw std::invalid_argument("loss weight for " + std::string(f.name) + " must be finite and >= 0");
    }
  }
}

LossBreakdown combine(const LossBreakdown& terms, const LossWeights& weights) {
  LossBreakdown out;
  for (const auto& f : kLossFields) {
    const double t = terms.*f.term;
    if (!std::isfinite(t)) throw std::invalid_argument("loss term " + std::string(f.name) + " is not finite");
    out.*f.term = t;
    out.total += weights.*f.weight * t;
  }
  return out;
}

}  // namespace xmt
