#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "gridopf/grid_model.hpp"
#include "gridopf/state_estimation.hpp"

namespace gridopf {

/// Smallest alpha with P(|w| >= alpha) <= (1 - beta) / 4 for w ~ N(0, 1).
double compute_alpha(double beta);

/// Probability threshold, tightening multiplier and magnitude band.
class ChanceSpec {
public:
    /// alpha derived from beta.
    static ChanceSpec from_beta(double beta, double v_min, double v_max);
    /// Deterministic limits: alpha = 0 (estimates treated as exact).
    static ChanceSpec ignoring_uncertainty(double beta, double v_min, double v_max);

    double beta() const { return beta_; }
    double alpha() const { return alpha_; }
    double v_min() const { return v_min_; }
    double v_max() const { return v_max_; }

private:
    ChanceSpec(double beta, double alpha, double v_min, double v_max);
    double beta_;
    double alpha_;
    double v_min_;
    double v_max_;
};

/// Unit vector along the estimate; n . x >= v_min implies |x| >= v_min.
Eigen::Vector2d min_halfplane_coeffs(Complex v_est);

/// Circle: |dV + shift| <= radius. Half-plane: normal . (dV + shift) >= bound.
struct CircleConstraint {
    Eigen::Vector2d shift;
    double radius;
};

struct HalfPlaneConstraint {
    Eigen::Vector2d normal;
    Eigen::Vector2d shift;
    double bound;
};

/// Corner signs (+,+), (+,-), (-,+), (-,-) applied to (alpha sigma_re, alpha sigma_im).
inline constexpr std::array<std::array<int, 2>, 4> kCorners{{{1, 1}, {1, -1}, {-1, 1}, {-1, -1}}};

struct NodeTightening {
    Eigen::Vector2d center;  // (Re V_est, Im V_est)
    Eigen::Vector2d normal;
    double sigma_re = 0.0;
    double sigma_im = 0.0;
    std::array<CircleConstraint, 4> circles;
    std::array<HalfPlaneConstraint, 4> halfplanes;
};

/// Eight deterministic constraints per node-phase acting on dV_rect.
struct TightenedConstraintSet {
    double alpha = 0.0;
    double v_min = 0.0;
    double v_max = 0.0;
    std::vector<NodeTightening> nodes;

    std::size_t constraint_count() const { return 8 * nodes.size(); }
    /// Largest violation over all constraints at dV (<= 0 when satisfied).
    double max_violation(const Eigen::VectorXd& delta_v_rect) const;
};

TightenedConstraintSet tighten_constraints(const EstimationResult& est, const ChanceSpec& spec);

/// True iff all eight constraints of every node hold at dV (closed, within tol).
bool check_corner_sufficiency(const Eigen::VectorXd& delta_v_rect, const TightenedConstraintSet& set,
                              const ChanceSpec& spec, double tol = 1e-9);

/// Symmetric PSD square root via eigendecomposition; eigenvalues below
/// -tolerance are rejected, the rest clipped at zero.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& cov, double tolerance = 1e-10);

/// Per-node fraction of draws V ~ N(V_est + dV, Sigma) with v_min <= |V_i| <= v_max.
Eigen::VectorXd verify_chance_satisfaction(const Eigen::VectorXd& delta_v_rect, const EstimationResult& est,
                                           const ChanceSpec& spec, std::size_t n_samples, std::uint64_t seed);

}  // namespace gridopf
