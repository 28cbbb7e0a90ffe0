#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

namespace oracle {

double erf_series(double z) {
    if (z < 0.0) return -erf_series(-z);
    if (z > 6.0) return 1.0;
    double term = z;
    double sum = z;
    for (int k = 1; k < 500; ++k) {
        term *= 2.0 * z * z / (2.0 * k + 1.0);
        sum += term;
        if (term < 1e-17 * sum) break;
    }
    return 2.0 / std::sqrt(std::numbers::pi) * std::exp(-z * z) * sum;
}

double normal_cdf(double x) { return 0.5 * (1.0 + erf_series(x / std::numbers::sqrt2)); }

double normal_sf(double x) {
    if (x < 0.0) return normal_cdf(-x);
    // 1 - erf cancels badly once erf is close to 1; continued fraction for erfc there.
    const double z = x / std::numbers::sqrt2;
    if (z < 1.5) return 0.5 * (1.0 - erf_series(z));
    double f = 0.0;
    for (int k = 200; k >= 1; --k) f = (k / 2.0) / (z + f);
    return 0.5 * std::exp(-z * z) / std::sqrt(std::numbers::pi) / (z + f);
}

double quantile_bisection(double p) {
    double lo = -40.0;
    double hi = 40.0;
    const bool upper = p > 0.5;
    const double target = upper ? 1.0 - p : p;
    // Solve on the lower tail, then mirror.
    for (int it = 0; it < 300; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (normal_sf(-mid) < target) lo = mid;
        else hi = mid;
        if (hi - lo < 1e-15) break;
    }
    const double x = 0.5 * (lo + hi);
    return upper ? -x : x;
}

Eigen::VectorXcd injections(const Eigen::MatrixXcd& y, const Eigen::VectorXcd& v_bus) {
    const Eigen::VectorXcd i = y * v_bus;
    return v_bus.cwiseProduct(i.conjugate());
}

double powerflow_residual(const gridopf::GridModel& grid, const gridopf::PowerInjection& loads,
                          const gridopf::PowerInjection& dg, const gridopf::TapVector& tap,
                          const gridopf::ComplexVoltageState& v) {
    const auto& layout = grid.layout;
    const auto s = static_cast<Eigen::Index>(layout.source_count());
    const Eigen::VectorXcd inj = injections(gridopf::build_isolated_admittance(grid).y, v.bus());
    double worst = 0.0;
    for (std::size_t i = layout.source_count(); i < layout.size(); ++i) {
        if (layout.is_transformer_row(i)) continue;
        const auto k = static_cast<Eigen::Index>(i) - s;
        worst = std::max(worst, std::abs(inj(static_cast<Eigen::Index>(i)) - loads.nodes(k) - dg.nodes(k)));
    }
    for (std::size_t k = 0; k < layout.tf_primary().size(); ++k) {
        const auto p1 = static_cast<Eigen::Index>(layout.tf_primary()[k]);
        const auto p2 = static_cast<Eigen::Index>(layout.tf_secondary()[k]);
        const gridopf::Phase ph = layout.at(layout.tf_primary()[k]).phase;
        worst = std::max(worst, std::abs(inj(p1) + inj(p2)));
        worst = std::max(worst, std::abs(v.nodes(p2 - s) - tap[ph] * v.nodes(p1 - s)));
    }
    return worst;
}

Eigen::MatrixXd numeric_jacobian(const Eigen::MatrixXcd& y, const Eigen::VectorXcd& v_bus, double h) {
    const Eigen::Index n = v_bus.size();
    Eigen::MatrixXd jac(2 * n, 2 * n);
    for (Eigen::Index k = 0; k < 2 * n; ++k) {
        const std::complex<double> dir = k < n ? std::complex<double>(h, 0.0) : std::complex<double>(0.0, h);
        Eigen::VectorXcd plus = v_bus;
        Eigen::VectorXcd minus = v_bus;
        plus(k % n) += dir;
        minus(k % n) -= dir;
        const Eigen::VectorXcd ds = (injections(y, plus) - injections(y, minus)) / (2.0 * h);
        jac.col(k).head(n) = ds.real();
        jac.col(k).tail(n) = ds.imag();
    }
    return jac;
}

Eigen::VectorXd band_probability(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov, double v_min,
                                 double v_max, std::size_t samples, std::uint64_t seed) {
    const Eigen::Index n = mean.size() / 2;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(cov);
    const Eigen::VectorXd d = ldlt.vectorD().cwiseMax(0.0).cwiseSqrt();
    Eigen::MatrixXd lower = ldlt.matrixL();
    lower = lower * d.asDiagonal();
    const Eigen::MatrixXd factor = ldlt.transpositionsP().transpose() * lower;

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss;
    Eigen::VectorXd hits = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd z(2 * n);
    for (std::size_t s = 0; s < samples; ++s) {
        for (Eigen::Index k = 0; k < z.size(); ++k) z(k) = gauss(rng);
        const Eigen::VectorXd x = mean + factor * z;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double m = std::hypot(x(i), x(n + i));
            if (m >= v_min && m <= v_max) hits(i) += 1.0;
        }
    }
    return hits / static_cast<double>(samples);
}

namespace {

// g(z) = |W z + w0|^2 + l.z + c  (W empty for a linear row)
struct Reduced {
    Eigen::MatrixXd w;
    Eigen::VectorXd w0;
    Eigen::VectorXd l;
    double c = 0.0;

    double value(const Eigen::VectorXd& z) const {
        double v = l.dot(z) + c;
        if (w.rows() > 0) v += (w * z + w0).squaredNorm();
        return v;
    }
    Eigen::VectorXd gradient(const Eigen::VectorXd& z) const {
        Eigen::VectorXd g = l;
        if (w.rows() > 0) g += 2.0 * w.transpose() * (w * z + w0);
        return g;
    }
};

}  // namespace

FirstOrderResult augmented_lagrangian(const gridopf::ConvexProgram& prog, double tolerance) {
    const Eigen::Index n = prog.size();
    FirstOrderResult out;

    Eigen::VectorXd x0 = Eigen::VectorXd::Zero(n);
    Eigen::MatrixXd basis = Eigen::MatrixXd::Identity(n, n);
    if (!prog.equalities().empty()) {
        const Eigen::MatrixXd a = prog.equality_matrix();
        const Eigen::VectorXd b = prog.equality_rhs();
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullU | Eigen::ComputeFullV);
        const Eigen::VectorXd sv = svd.singularValues();
        const double cut = 1e-10 * std::max(1.0, sv.size() > 0 ? sv(0) : 0.0);
        Eigen::Index rank = 0;
        while (rank < sv.size() && sv(rank) > cut) ++rank;
        const Eigen::MatrixXd& u = svd.matrixU();
        const Eigen::MatrixXd& v = svd.matrixV();
        Eigen::VectorXd coef = (u.leftCols(rank).transpose() * b).cwiseQuotient(sv.head(rank));
        x0 = v.leftCols(rank) * coef;
        basis = v.rightCols(n - rank);
        if ((a * x0 - b).cwiseAbs().maxCoeff() > 1e-9) return out;  // inconsistent equalities
    }
    const Eigen::Index k = basis.cols();
    const Eigen::VectorXd cost = basis.transpose() * prog.cost();

    std::vector<Reduced> rows;
    for (const auto& li : prog.inequalities()) {
        Eigen::VectorXd a = Eigen::VectorXd::Zero(n);
        for (const auto& [j, v] : li.a) a(j) += v;
        rows.push_back({Eigen::MatrixXd(0, k), Eigen::VectorXd(0), basis.transpose() * a, a.dot(x0) - li.b});
    }
    for (const auto& q : prog.quadratics()) {
        const auto nv = static_cast<Eigen::Index>(q.vars.size());
        Eigen::MatrixXd sub(nv, k);
        Eigen::VectorXd x0v(nv);
        for (Eigen::Index j = 0; j < nv; ++j) {
            sub.row(j) = basis.row(q.vars[static_cast<std::size_t>(j)]);
            x0v(j) = x0(q.vars[static_cast<std::size_t>(j)]);
        }
        rows.push_back({q.g * sub, q.g * x0v + q.d, sub.transpose() * q.l, q.l.dot(x0v) + q.c});
    }
    const auto m = static_cast<Eigen::Index>(rows.size());

    Eigen::VectorXd z = Eigen::VectorXd::Zero(k);
    Eigen::VectorXd lambda = Eigen::VectorXd::Zero(m);
    double rho = 10.0;
    double last_infeas = std::numeric_limits<double>::infinity();

    auto merit = [&](const Eigen::VectorXd& zz) {
        double v = cost.dot(zz);
        for (Eigen::Index i = 0; i < m; ++i) {
            const double t = std::max(0.0, lambda(i) + rho * rows[static_cast<std::size_t>(i)].value(zz));
            v += (t * t - lambda(i) * lambda(i)) / (2.0 * rho);
        }
        return v;
    };

    for (int outer = 0; outer < 80; ++outer) {
        out.outer_iterations = outer + 1;
        for (int inner = 0; inner < 300; ++inner) {
            Eigen::VectorXd grad = cost;
            Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(k, k);
            for (Eigen::Index i = 0; i < m; ++i) {
                const auto& r = rows[static_cast<std::size_t>(i)];
                const double mu = lambda(i) + rho * r.value(z);
                if (mu <= 0.0) continue;
                const Eigen::VectorXd gi = r.gradient(z);
                grad += mu * gi;
                hess += rho * gi * gi.transpose();
                if (r.w.rows() > 0) hess += 2.0 * mu * r.w.transpose() * r.w;
            }
            if (grad.cwiseAbs().maxCoeff() <= 1e-3 * tolerance * (1.0 + cost.cwiseAbs().maxCoeff())) break;
            const double shift = 1e-11 * std::max(1.0, hess.diagonal().maxCoeff());
            hess.diagonal().array() += shift;
            const Eigen::VectorXd step = hess.ldlt().solve(-grad);
            const double slope = grad.dot(step);
            if (!(slope < 0.0)) break;
            const double f0 = merit(z);
            double t = 1.0;
            bool moved = false;
            for (int ls = 0; ls < 120; ++ls) {
                if (merit(z + t * step) <= f0 + 1e-4 * t * slope) {
                    moved = true;
                    break;
                }
                t *= 0.5;
            }
            if (!moved) break;
            z += t * step;
        }

        double infeas = 0.0;
        double comp = 0.0;
        for (Eigen::Index i = 0; i < m; ++i) {
            const double g = rows[static_cast<std::size_t>(i)].value(z);
            lambda(i) = std::max(0.0, lambda(i) + rho * g);
            infeas = std::max(infeas, std::max(0.0, g));
            comp = std::max(comp, std::abs(lambda(i) * g));
        }
        out.max_violation = infeas;
        if (infeas <= tolerance && comp <= tolerance) {
            out.converged = true;
            break;
        }
        if (infeas > 0.25 * last_infeas) rho = std::min(rho * 10.0, 1e12);
        last_infeas = infeas;
    }
    out.x = x0 + basis * z;
    out.objective = prog.cost().dot(out.x);
    return out;
}

}  // namespace oracle
