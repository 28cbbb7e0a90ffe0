#pragma once

#include <cstdint>

#include <Eigen/Dense>

#include "gridopf/convex_program.hpp"
#include "gridopf/grid_model.hpp"
#include "gridopf/powerflow.hpp"

// Reference computations written independently of the library code they check.
namespace oracle {

// erf by its everywhere-convergent positive series
//   erf(z) = 2/sqrt(pi) exp(-z^2) sum_k 2^k z^(2k+1) / (1*3*...*(2k+1)),
// so the tail is not lost to cancellation.
double erf_series(double z);
double normal_cdf(double x);
double normal_sf(double x);

/// Phi^{-1}(p) by bisection on normal_cdf (upper tail for p > 0.5).
double quantile_bisection(double p);

/// S = V .* conj(Y V) over the full bus vector.
Eigen::VectorXcd injections(const Eigen::MatrixXcd& y, const Eigen::VectorXcd& v_bus);

/// Largest residual of the isolated-transformer power flow equations: node
/// injections against loads + dg, lossless transfer and the tap relation.
double powerflow_residual(const gridopf::GridModel& grid, const gridopf::PowerInjection& loads,
                          const gridopf::PowerInjection& dg, const gridopf::TapVector& tap,
                          const gridopf::ComplexVoltageState& v);

/// Central-difference Jacobian of [P; Q] with respect to [Re V; Im V] (full bus order).
Eigen::MatrixXd numeric_jacobian(const Eigen::MatrixXcd& y, const Eigen::VectorXcd& v_bus, double h);

/// Fraction of draws V ~ N(mean, cov) with v_min <= |V_i| <= v_max, per node.
/// `mean` and `cov` use the stacked [Re; Im] layout. Factorizes with a
/// pivoted LDL^T so it does not share code with the library verifier.
Eigen::VectorXd band_probability(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov, double v_min,
                                 double v_max, std::size_t samples, std::uint64_t seed);

struct FirstOrderResult {
    bool converged = false;
    Eigen::VectorXd x;
    double objective = 0.0;
    double max_violation = 0.0;
    int outer_iterations = 0;
};

// Augmented Lagrangian on the null space of the equalities. The multiplier
// update lambda <- max(0, lambda + rho g) is a projected gradient ascent step
// on the regularized dual; the inner problems are smooth and solved by damped
// semismooth Newton.
FirstOrderResult augmented_lagrangian(const gridopf::ConvexProgram& prog, double tolerance = 1e-10);

}  // namespace oracle
