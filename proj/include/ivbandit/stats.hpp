#pragma once

// Reference distributions used by the sampler and by inference.

#include <cmath>
#include <string>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>

#include "ivbandit/errors.hpp"

namespace ivbandit {

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw UsageError("normal_quantile: p must lie in (0,1), got " + std::to_string(p));
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

inline double chi2_quantile(int df, double p) {
  if (df < 1) throw UsageError("chi2_quantile: df must be >= 1");
  if (!(p > 0.0 && p < 1.0)) throw UsageError("chi2_quantile: p must lie in (0,1), got " + std::to_string(p));
  return boost::math::quantile(boost::math::chi_squared_distribution<double>(df), p);
}

inline double chi2_cdf(int df, double x) {
  if (df < 1) throw UsageError("chi2_cdf: df must be >= 1");
  if (x <= 0.0) return 0.0;
  return boost::math::cdf(boost::math::chi_squared_distribution<double>(df), x);
}

}  // namespace ivbandit
