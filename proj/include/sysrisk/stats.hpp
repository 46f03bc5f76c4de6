#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "sysrisk/error.hpp"

namespace sysrisk {

/// Sample second moments of a pair of equally long series (about their sample means).
struct PairMoments {
  double var_a = 0.0;
  double var_b = 0.0;
  double cov = 0.0;
};

inline PairMoments pair_moments(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw ShapeError("pair_moments needs two equal series of length >= 2");
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  PairMoments m;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    m.var_a += da * da;
    m.var_b += db * db;
    m.cov += da * db;
  }
  m.var_a /= n - 1.0;
  m.var_b /= n - 1.0;
  m.cov /= n - 1.0;
  return m;
}

/// Whole-series moments together with batch-means standard errors.
struct BatchMoments {
  PairMoments estimate;
  PairMoments std_error;
};

/// Split into `batches` contiguous blocks; the spread of the per-block moments
/// gives the standard error of the whole-series moments for correlated samples.
inline BatchMoments batch_moments(std::span<const double> a, std::span<const double> b, std::size_t batches = 20) {
  if (batches < 2 || a.size() < 2 * batches) throw InvalidArgument("batch_moments needs >= 2 batches of >= 2 samples");
  BatchMoments out;
  out.estimate = pair_moments(a, b);
  const std::size_t len = a.size() / batches;
  std::vector<PairMoments> per(batches);
  for (std::size_t k = 0; k < batches; ++k) per[k] = pair_moments(a.subspan(k * len, len), b.subspan(k * len, len));
  auto se = [&](double PairMoments::*field) {
    double mean = 0.0;
    for (const auto& m : per) mean += m.*field;
    mean /= static_cast<double>(batches);
    double ss = 0.0;
    for (const auto& m : per) ss += (m.*field - mean) * (m.*field - mean);
    return std::sqrt(ss / static_cast<double>(batches - 1) / static_cast<double>(batches));
  };
  out.std_error = {se(&PairMoments::var_a), se(&PairMoments::var_b), se(&PairMoments::cov)};
  return out;
}

} // namespace sysrisk
