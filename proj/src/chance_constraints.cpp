#include "gridopf/chance_constraints.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <random>
#include <stdexcept>
#include <thread>

#include "gridopf/errors.hpp"
#include "gridopf/normal.hpp"

namespace gridopf {

double compute_alpha(double beta) {
    if (!(beta > 0.0 && beta < 1.0)) throw std::domain_error("compute_alpha: beta must lie in (0, 1)");
    // Two-sided tail split evenly: 2 (1 - Phi(alpha)) = (1 - beta) / 4.
    return inverse_normal_cdf(1.0 - (1.0 - beta) / 8.0);
}

ChanceSpec::ChanceSpec(double beta, double alpha, double v_min, double v_max)
    : beta_(beta), alpha_(alpha), v_min_(v_min), v_max_(v_max) {
    if (!(v_min < v_max)) throw std::invalid_argument("ChanceSpec: v_min must be below v_max");
    if (!(alpha >= 0.0)) throw std::invalid_argument("ChanceSpec: alpha must be non-negative");
}

ChanceSpec ChanceSpec::from_beta(double beta, double v_min, double v_max) {
    return ChanceSpec(beta, compute_alpha(beta), v_min, v_max);
}

ChanceSpec ChanceSpec::ignoring_uncertainty(double beta, double v_min, double v_max) {
    if (!(beta > 0.0 && beta < 1.0)) throw std::domain_error("ChanceSpec: beta must lie in (0, 1)");
    return ChanceSpec(beta, 0.0, v_min, v_max);
}

Eigen::Vector2d min_halfplane_coeffs(Complex v_est) {
    const double mag = std::abs(v_est);
    if (!(mag >= 1e-6)) throw DegenerateEstimateError("half-plane normal undefined for a near-zero estimate");
    return {v_est.real() / mag, v_est.imag() / mag};
}

TightenedConstraintSet tighten_constraints(const EstimationResult& est, const ChanceSpec& spec) {
    const std::size_t n = est.size();
    if (est.cov.rows() != static_cast<Eigen::Index>(2 * n) || est.cov.cols() != est.cov.rows()) {
        throw std::invalid_argument("tighten_constraints: covariance dimension mismatch");
    }
    TightenedConstraintSet out;
    out.alpha = spec.alpha();
    out.v_min = spec.v_min();
    out.v_max = spec.v_max();
    out.nodes.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double vr = est.var_re(i);
        const double vi = est.var_im(i);
        if (vr < -1e-10 || vi < -1e-10) {
            throw InvalidCovarianceError("negative variance on the diagonal at node-phase " + std::to_string(i));
        }
        NodeTightening node;
        const Complex v = est.v_est(static_cast<Eigen::Index>(i));
        node.center = {v.real(), v.imag()};
        node.normal = min_halfplane_coeffs(v);
        node.sigma_re = std::sqrt(std::max(0.0, vr));
        node.sigma_im = std::sqrt(std::max(0.0, vi));
        for (std::size_t k = 0; k < kCorners.size(); ++k) {
            const Eigen::Vector2d offset(kCorners[k][0] * spec.alpha() * node.sigma_re,
                                         kCorners[k][1] * spec.alpha() * node.sigma_im);
            const Eigen::Vector2d shift = node.center + offset;
            node.circles[k] = {shift, spec.v_max()};
            node.halfplanes[k] = {node.normal, shift, spec.v_min()};
        }
        out.nodes.push_back(node);
    }
    return out;
}

double TightenedConstraintSet::max_violation(const Eigen::VectorXd& delta_v_rect) const {
    const auto n = static_cast<Eigen::Index>(nodes.size());
    if (delta_v_rect.size() != 2 * n) throw std::invalid_argument("max_violation: dimension mismatch");
    double worst = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::Vector2d dv(delta_v_rect(i), delta_v_rect(n + i));
        const auto& node = nodes[static_cast<std::size_t>(i)];
        for (const auto& c : node.circles) worst = std::max(worst, (dv + c.shift).norm() - c.radius);
        for (const auto& h : node.halfplanes) worst = std::max(worst, h.bound - h.normal.dot(dv + h.shift));
    }
    return worst;
}

bool check_corner_sufficiency(const Eigen::VectorXd& delta_v_rect, const TightenedConstraintSet& set,
                              const ChanceSpec& spec, double tol) {
    if (set.v_min != spec.v_min() || set.v_max != spec.v_max()) return false;
    if (delta_v_rect.size() != static_cast<Eigen::Index>(2 * set.nodes.size())) return false;
    return set.max_violation(delta_v_rect) <= tol;
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& cov, double tolerance) {
    if (cov.rows() != cov.cols()) throw std::invalid_argument("psd_sqrt: matrix is not square");
    const Eigen::MatrixXd sym = 0.5 * (cov + cov.transpose());
    if ((sym - cov).cwiseAbs().maxCoeff() > 1e-9 * std::max(1.0, cov.cwiseAbs().maxCoeff())) {
        throw InvalidCovarianceError("covariance is not symmetric");
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
    Eigen::VectorXd ev = es.eigenvalues();
    if (ev.size() > 0 && ev.minCoeff() < -tolerance) {
        throw InvalidCovarianceError("covariance is not positive semidefinite (eigenvalue " +
                                     std::to_string(ev.minCoeff()) + ")");
    }
    ev = ev.cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

Eigen::VectorXd verify_chance_satisfaction(const Eigen::VectorXd& delta_v_rect, const EstimationResult& est,
                                           const ChanceSpec& spec, std::size_t n_samples, std::uint64_t seed) {
    if (n_samples < 1) throw std::invalid_argument("verify_chance_satisfaction: need at least one sample");
    const auto n = static_cast<Eigen::Index>(est.size());
    if (delta_v_rect.size() != 2 * n) throw std::invalid_argument("verify_chance_satisfaction: dimension mismatch");
    const Eigen::MatrixXd root = psd_sqrt(est.cov);
    const Eigen::VectorXd mean = est.v_rect + delta_v_rect;
    const double lo2 = spec.v_min() * spec.v_min();
    const double hi2 = spec.v_max() * spec.v_max();

    constexpr std::size_t kBlock = 4096;
    const std::size_t blocks = (n_samples + kBlock - 1) / kBlock;

    auto run_block = [&](std::size_t b) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
        std::mt19937_64 rng(seq);
        std::normal_distribution<double> unit(0.0, 1.0);
        const std::size_t count = std::min(kBlock, n_samples - b * kBlock);
        Eigen::MatrixXd w(2 * n, static_cast<Eigen::Index>(count));
        for (Eigen::Index c = 0; c < w.cols(); ++c) {
            for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = unit(rng);
        }
        const Eigen::MatrixXd draws = (root * w).colwise() + mean;
        Eigen::VectorXd inside = Eigen::VectorXd::Zero(n);
        for (Eigen::Index c = 0; c < draws.cols(); ++c) {
            for (Eigen::Index i = 0; i < n; ++i) {
                const double m2 = draws(i, c) * draws(i, c) + draws(n + i, c) * draws(n + i, c);
                if (m2 >= lo2 && m2 <= hi2) inside(i) += 1.0;
            }
        }
        return inside;
    };

    // Blocks carry their own seeds, so the result does not depend on the
    // number of workers.
    const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(std::thread::hardware_concurrency(), blocks));
    Eigen::VectorXd total = Eigen::VectorXd::Zero(n);
    if (workers == 1) {
        for (std::size_t b = 0; b < blocks; ++b) total += run_block(b);
    } else {
        std::vector<std::future<Eigen::VectorXd>> futures;
        for (std::size_t w = 0; w < workers; ++w) {
            futures.push_back(std::async(std::launch::async, [&, w] {
                Eigen::VectorXd acc = Eigen::VectorXd::Zero(n);
                for (std::size_t b = w; b < blocks; b += workers) acc += run_block(b);
                return acc;
            }));
        }
        for (auto& f : futures) total += f.get();
    }
    return total / static_cast<double>(n_samples);
}

}  // namespace gridopf
