#pragma once

namespace gridopf {

/// Standard normal CDF.
double normal_cdf(double x);

/// Standard normal quantile: Acklam's rational approximation followed by one
/// Halley refinement against erfc. Throws std::domain_error outside (0, 1).
double inverse_normal_cdf(double p);

}  // namespace gridopf
