#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "gridopf/convex_program.hpp"

namespace gridopf {

namespace {

struct DenseQuadratic {
    Eigen::MatrixXd g;
    Eigen::VectorXd d;
    Eigen::VectorXd l;
    double c = 0.0;
};

/// min c . y  s.t.  A y <= b,  |G y + d|^2 + l . y + c <= 0.
struct DenseProblem {
    Eigen::VectorXd c;
    Eigen::MatrixXd a;
    Eigen::VectorXd b;
    std::vector<DenseQuadratic> quads;

    Eigen::Index dim() const { return c.size(); }
    Eigen::Index count() const { return a.rows() + static_cast<Eigen::Index>(quads.size()); }

    Eigen::VectorXd values(const Eigen::VectorXd& y) const {
        Eigen::VectorXd f(count());
        f.head(a.rows()) = a * y - b;
        for (std::size_t q = 0; q < quads.size(); ++q) {
            const auto& Q = quads[q];
            f(a.rows() + static_cast<Eigen::Index>(q)) = (Q.g * y + Q.d).squaredNorm() + Q.l.dot(y) + Q.c;
        }
        return f;
    }

    Eigen::MatrixXd jacobian(const Eigen::VectorXd& y) const {
        Eigen::MatrixXd jac(count(), dim());
        jac.topRows(a.rows()) = a;
        for (std::size_t q = 0; q < quads.size(); ++q) {
            const auto& Q = quads[q];
            jac.row(a.rows() + static_cast<Eigen::Index>(q)) = (2.0 * Q.g.transpose() * (Q.g * y + Q.d) + Q.l).transpose();
        }
        return jac;
    }
};

struct IpmResult {
    Eigen::VectorXd y;
    Eigen::VectorXd lambda;
    int iterations = 0;
    bool converged = false;
    bool stopped_early = false;
};

/// Primal-dual interior point on f(y) + s = 0, s > 0 with Mehrotra
/// predictor-corrector steps. Carrying the slacks explicitly lets an iterate
/// leave a curved constraint's feasible set for a while instead of jamming
/// against it.
IpmResult run_ipm(const DenseProblem& p, Eigen::VectorXd y, const SolverOptions& opt,
                  const std::function<bool(const Eigen::VectorXd&)>& stop = {}) {
    const Eigen::Index m = p.count();
    const Eigen::Index nq = static_cast<Eigen::Index>(p.quads.size());
    const Eigen::Index nl = p.a.rows();
    IpmResult out;
    Eigen::VectorXd f = p.values(y);
    Eigen::VectorXd s = (-f).cwiseMax(1e-8);
    Eigen::VectorXd lambda = s.cwiseInverse().cwiseMin(1e8);
    auto residuals = [&](const Eigen::VectorXd& yy, const Eigen::VectorXd& ff, const Eigen::VectorXd& ss,
                         const Eigen::VectorXd& ll) {
        const Eigen::VectorXd rd = p.c + p.jacobian(yy).transpose() * ll;
        return std::sqrt(rd.squaredNorm() + (ff + ss).squaredNorm() + ll.cwiseProduct(ss).squaredNorm());
    };

    for (int it = 0; it < opt.max_iterations; ++it) {
        out.iterations = it;
        if (stop && stop(y)) {
            out.stopped_early = true;
            break;
        }
        const Eigen::MatrixXd jac = p.jacobian(y);
        const Eigen::VectorXd r_d = p.c + jac.transpose() * lambda;
        if (m == 0) {
            out.converged = r_d.lpNorm<Eigen::Infinity>() <= opt.tolerance * (1.0 + p.c.lpNorm<Eigen::Infinity>());
            break;
        }
        // Relative to the size of the terms that must cancel in c + J'lambda.
        const double dual_tol =
            opt.tolerance * (1.0 + p.c.lpNorm<Eigen::Infinity>() +
                             (jac.cwiseAbs().transpose() * lambda.cwiseAbs()).lpNorm<Eigen::Infinity>());
        const Eigen::VectorXd r_p = f + s;
        const double mu = s.dot(lambda) / static_cast<double>(m);
        if (r_d.lpNorm<Eigen::Infinity>() <= dual_tol && r_p.lpNorm<Eigen::Infinity>() <= opt.tolerance &&
            s.dot(lambda) <= opt.tolerance) {
            out.converged = true;
            break;
        }

        const Eigen::VectorXd d = lambda.cwiseQuotient(s);
        Eigen::MatrixXd h = jac.transpose() * d.asDiagonal() * jac;
        for (Eigen::Index q = 0; q < nq; ++q) {
            const auto& Q = p.quads[static_cast<std::size_t>(q)];
            h.noalias() += 2.0 * lambda(nl + q) * Q.g.transpose() * Q.g;
        }
        Eigen::MatrixXd h_reg = h;
        h_reg.diagonal().array() += 1e-12;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(h_reg);
        if (ldlt.info() != Eigen::Success) break;
        // The regularized factor plus two refinement sweeps against h itself.
        auto solve_h = [&](const Eigen::VectorXd& rhs) {
            Eigen::VectorXd x = ldlt.solve(rhs);
            for (int k = 0; k < 2; ++k) x += ldlt.solve(rhs - h * x);
            return x;
        };

        // Solves the Newton system for a complementarity target r_c.
        auto direction = [&](const Eigen::VectorXd& r_c, Eigen::VectorXd& dy, Eigen::VectorXd& ds,
                             Eigen::VectorXd& dl) {
            const Eigen::VectorXd w = d.cwiseProduct(r_p) - r_c.cwiseQuotient(s);
            dy = solve_h(-(r_d + jac.transpose() * w));
            dl = d.cwiseProduct(jac * dy + r_p) - r_c.cwiseQuotient(s);
            ds = -(r_c + s.cwiseProduct(dl)).cwiseQuotient(lambda);
        };
        auto max_step = [&](const Eigen::VectorXd& ds, const Eigen::VectorXd& dl) {
            double a = 1.0;
            for (Eigen::Index i = 0; i < m; ++i) {
                if (ds(i) < 0.0) a = std::min(a, -s(i) / ds(i));
                if (dl(i) < 0.0) a = std::min(a, -lambda(i) / dl(i));
            }
            return a;
        };

        Eigen::VectorXd dy, ds, dl;
        const Eigen::VectorXd comp = lambda.cwiseProduct(s);
        direction(comp, dy, ds, dl);
        const double a_aff = max_step(ds, dl);
        const double mu_aff = (s + a_aff * ds).dot(lambda + a_aff * dl) / static_cast<double>(m);
        const double sigma = std::clamp(std::pow(mu_aff / mu, 3.0), 0.0, 1.0);
        const Eigen::VectorXd corrected =
            comp + ds.cwiseProduct(dl) -
            Eigen::VectorXd::Constant(m, std::max(sigma * mu, 0.1 * opt.tolerance / static_cast<double>(m)));
        direction(corrected, dy, ds, dl);
        if (!dy.allFinite() || !ds.allFinite() || !dl.allFinite()) break;

        double a = std::min(1.0, 0.99 * max_step(ds, dl));
        const double r0 = residuals(y, f, s, lambda);
        Eigen::VectorXd y_new = y + a * dy;
        Eigen::VectorXd f_new = p.values(y_new);
        // The quadratic rows are the only nonlinearity; back off when their
        // curvature makes the step increase the total residual badly.
        while (a > 1e-12 && residuals(y_new, f_new, s + a * ds, lambda + a * dl) > (1.0 + 10.0 * a) * r0) {
            a *= 0.5;
            y_new = y + a * dy;
            f_new = p.values(y_new);
        }
        if (a <= 1e-8) break;  // no further progress at this precision
        y = y_new;
        f = f_new;
        s = (s + a * ds).cwiseMax(1e-300);
        lambda = (lambda + a * dl).cwiseMax(1e-300);
        out.iterations = it + 1;
    }
    out.y = y;
    out.lambda = lambda;
    return out;
}

struct NullSpace {
    Eigen::VectorXd x_p;
    Eigen::MatrixXd z;
    Eigen::MatrixXd q1;  // orthonormal basis of range(A_I^T)
    Eigen::MatrixXd r11;
    std::vector<Eigen::Index> independent;
    bool consistent = true;
};

NullSpace eliminate_equalities(const ConvexProgram& prog, std::vector<std::string>& warnings) {
    const Eigen::Index n = prog.size();
    NullSpace ns;
    const Eigen::MatrixXd a = prog.equality_matrix();
    const Eigen::VectorXd b = prog.equality_rhs();
    if (a.rows() == 0) {
        ns.x_p = Eigen::VectorXd::Zero(n);
        ns.z = Eigen::MatrixXd::Identity(n, n);
        ns.q1 = Eigen::MatrixXd(n, 0);
        return ns;
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a.transpose());
    qr.setThreshold(1e-10);
    qr.compute(a.transpose());
    const Eigen::Index r = qr.rank();
    const Eigen::MatrixXd q = qr.householderQ();
    ns.q1 = q.leftCols(r);
    ns.z = q.rightCols(n - r);
    ns.r11 = qr.matrixR().topLeftCorner(r, r).triangularView<Eigen::Upper>();
    Eigen::VectorXd b_i(r);
    for (Eigen::Index j = 0; j < r; ++j) {
        ns.independent.push_back(qr.colsPermutation().indices()(j));
        b_i(j) = b(ns.independent.back());
    }
    const Eigen::VectorXd w = ns.r11.transpose().triangularView<Eigen::Lower>().solve(b_i);
    ns.x_p = ns.q1 * w;
    if (r < a.rows()) {
        warnings.push_back(fmt::format("dropped {} linearly dependent equality rows", a.rows() - r));
    }
    const double resid = (a * ns.x_p - b).lpNorm<Eigen::Infinity>();
    if (resid > 1e-8 * (1.0 + b.lpNorm<Eigen::Infinity>())) {
        ns.consistent = false;
        warnings.push_back(fmt::format("equality constraints are inconsistent (residual {:.3e})", resid));
    }
    return ns;
}

/// Maps each original inequality (linear first, then quadratic) to its row in
/// the reduced problem. Exact duplicates share a row and split its multiplier.
struct RowMap {
    std::vector<Eigen::Index> owner;
    std::vector<int> copies;

    Eigen::VectorXd expand(const Eigen::VectorXd& lambda) const {
        Eigen::VectorXd out(static_cast<Eigen::Index>(owner.size()));
        for (std::size_t i = 0; i < owner.size(); ++i) {
            out(static_cast<Eigen::Index>(i)) = lambda(owner[i]) / copies[static_cast<std::size_t>(owner[i])];
        }
        return out;
    }
};

bool same_row(const LinearInequality& x, const LinearInequality& y) { return x.b == y.b && x.a == y.a; }

bool same_quad(const QuadraticInequality& x, const QuadraticInequality& y) {
    return x.c == y.c && x.vars == y.vars && x.g.rows() == y.g.rows() && x.g == y.g && x.d == y.d && x.l == y.l;
}

DenseProblem reduce(const ConvexProgram& prog, const NullSpace& ns, RowMap& map) {
    const Eigen::Index k = ns.z.cols();
    DenseProblem p;
    p.c = ns.z.transpose() * prog.cost();
    const auto& lin = prog.inequalities();
    const auto& quad = prog.quadratics();
    map.owner.assign(lin.size() + quad.size(), 0);
    map.copies.clear();

    std::vector<std::size_t> kept_lin;
    for (std::size_t i = 0; i < lin.size(); ++i) {
        auto it = std::find_if(kept_lin.begin(), kept_lin.end(), [&](std::size_t j) { return same_row(lin[i], lin[j]); });
        if (it != kept_lin.end()) {
            map.owner[i] = map.owner[*it];
            ++map.copies[static_cast<std::size_t>(map.owner[i])];
            continue;
        }
        map.owner[i] = static_cast<Eigen::Index>(kept_lin.size());
        map.copies.push_back(1);
        kept_lin.push_back(i);
    }
    p.a.resize(static_cast<Eigen::Index>(kept_lin.size()), k);
    p.b.resize(static_cast<Eigen::Index>(kept_lin.size()));
    for (std::size_t r = 0; r < kept_lin.size(); ++r) {
        const auto& row_in = lin[kept_lin[r]];
        Eigen::VectorXd row = Eigen::VectorXd::Zero(k);
        double rhs = row_in.b;
        for (const auto& [j, v] : row_in.a) {
            row += v * ns.z.row(j).transpose();
            rhs -= v * ns.x_p(j);
        }
        p.a.row(static_cast<Eigen::Index>(r)) = row.transpose();
        p.b(static_cast<Eigen::Index>(r)) = rhs;
    }

    std::vector<std::size_t> kept_quad;
    for (std::size_t i = 0; i < quad.size(); ++i) {
        auto it = std::find_if(kept_quad.begin(), kept_quad.end(),
                               [&](std::size_t j) { return same_quad(quad[i], quad[j]); });
        const std::size_t slot = lin.size() + i;
        if (it != kept_quad.end()) {
            map.owner[slot] = map.owner[lin.size() + *it];
            ++map.copies[static_cast<std::size_t>(map.owner[slot])];
            continue;
        }
        map.owner[slot] = static_cast<Eigen::Index>(kept_lin.size() + kept_quad.size());
        map.copies.push_back(1);
        kept_quad.push_back(i);
        const auto& q = quad[i];
        const auto nv = static_cast<Eigen::Index>(q.vars.size());
        Eigen::MatrixXd zv(nv, k);
        Eigen::VectorXd xv(nv);
        for (Eigen::Index j = 0; j < nv; ++j) {
            zv.row(j) = ns.z.row(q.vars[static_cast<std::size_t>(j)]);
            xv(j) = ns.x_p(q.vars[static_cast<std::size_t>(j)]);
        }
        p.quads.push_back({q.g * zv, q.d + q.g * xv, zv.transpose() * q.l, q.c + q.l.dot(xv)});
    }
    return p;
}

DenseProblem phase1_problem(const DenseProblem& p) {
    const Eigen::Index k = p.dim();
    DenseProblem ph;
    ph.c = Eigen::VectorXd::Zero(k + 1);
    ph.c(k) = 1.0;
    ph.a.resize(p.a.rows() + 1, k + 1);
    ph.a.topLeftCorner(p.a.rows(), k) = p.a;
    ph.a.topRightCorner(p.a.rows(), 1).setConstant(-1.0);
    ph.a.bottomRows(1).setZero();
    ph.a(p.a.rows(), k) = -1.0;
    ph.b.resize(p.b.size() + 1);
    ph.b.head(p.b.size()) = p.b;
    ph.b(p.b.size()) = 1.0;
    for (const auto& q : p.quads) {
        DenseQuadratic e;
        e.g = Eigen::MatrixXd::Zero(q.g.rows(), k + 1);
        e.g.leftCols(k) = q.g;
        e.d = q.d;
        e.l = Eigen::VectorXd::Zero(k + 1);
        e.l.head(k) = q.l;
        e.l(k) = -1.0;
        e.c = q.c;
        ph.quads.push_back(std::move(e));
    }
    return ph;
}

KktResiduals kkt_residuals(const ConvexProgram& prog, const NullSpace& ns, const Eigen::VectorXd& x,
                           const Eigen::VectorXd& lam_lin, const Eigen::VectorXd& lam_quad, Eigen::VectorXd& nu) {
    KktResiduals r;
    Eigen::VectorXd grad = prog.cost();
    double primal = 0.0;
    double comp = 0.0;
    const auto& lin = prog.inequalities();
    for (std::size_t i = 0; i < lin.size(); ++i) {
        const double li = lam_lin(static_cast<Eigen::Index>(i));
        double fi = -lin[i].b;
        for (const auto& [j, v] : lin[i].a) {
            fi += v * x(j);
            grad(j) += li * v;
        }
        primal = std::max(primal, fi);
        comp = std::max(comp, std::abs(li * fi));
    }
    const auto& quad = prog.quadratics();
    for (std::size_t i = 0; i < quad.size(); ++i) {
        const double li = lam_quad(static_cast<Eigen::Index>(i));
        const double fi = quad[i].value(x);
        grad += li * quad[i].gradient(x);
        primal = std::max(primal, fi);
        comp = std::max(comp, std::abs(li * fi));
    }
    const Eigen::VectorXd b = prog.equality_rhs();
    nu = Eigen::VectorXd::Zero(b.size());
    if (b.size() > 0) {
        primal = std::max(primal, (prog.equality_matrix() * x - b).lpNorm<Eigen::Infinity>());
        const Eigen::Index rk = ns.q1.cols();
        if (rk > 0) {
            const Eigen::VectorXd nu_i = ns.r11.triangularView<Eigen::Upper>().solve(ns.q1.transpose() * -grad);
            for (Eigen::Index j = 0; j < rk; ++j) nu(ns.independent[static_cast<std::size_t>(j)]) = nu_i(j);
            grad += ns.q1 * (ns.r11 * nu_i);
        }
    }
    r.stationarity = grad.lpNorm<Eigen::Infinity>();
    r.primal = primal;
    double dual = 0.0;
    if (lam_lin.size() > 0) dual = std::max(dual, -lam_lin.minCoeff());
    if (lam_quad.size() > 0) dual = std::max(dual, -lam_quad.minCoeff());
    r.dual = dual;
    r.complementarity = comp;
    return r;
}

}  // namespace

OpfSolution solve_program(const ConvexProgram& prog, const SolverOptions& options) {
    OpfSolution sol;
    const Eigen::Index n_lin = static_cast<Eigen::Index>(prog.inequalities().size());
    const Eigen::Index n_quad = static_cast<Eigen::Index>(prog.quadratics().size());
    sol.lambda_linear = Eigen::VectorXd::Zero(n_lin);
    sol.lambda_quadratic = Eigen::VectorXd::Zero(n_quad);

    const NullSpace ns = eliminate_equalities(prog, sol.warnings);
    sol.x = ns.x_p;
    if (!ns.consistent) {
        sol.status = SolveStatus::Infeasible;
        sol.phase1_slack = std::numeric_limits<double>::infinity();
        sol.objective = prog.objective(sol.x);
        return sol;
    }
    RowMap rows;
    const DenseProblem p = reduce(prog, ns, rows);
    const Eigen::Index k = p.dim();

    Eigen::VectorXd y = Eigen::VectorXd::Zero(k);
    Eigen::VectorXd f0 = p.values(y);
    const double f_max = f0.size() > 0 ? f0.maxCoeff() : -1.0;
    sol.phase1_slack = f_max;
    if (f_max >= -options.phase1_margin) {
        const DenseProblem ph = phase1_problem(p);
        Eigen::VectorXd y1(k + 1);
        y1.head(k) = y;
        y1(k) = std::max(f_max, 0.0) + 1.0;
        const auto stop = [&](const Eigen::VectorXd& v) {
            return p.values(v.head(k)).maxCoeff() <= -options.phase1_margin;
        };
        const IpmResult r1 = run_ipm(ph, y1, options, stop);
        sol.iterations += r1.iterations;
        y = r1.y.head(k);
        f0 = p.values(y);
        sol.phase1_slack = f0.size() > 0 ? f0.maxCoeff() : -1.0;
        if (!(sol.phase1_slack < -1e-10)) {
            sol.status = SolveStatus::Infeasible;
            sol.x = ns.x_p + ns.z * y;
            sol.objective = prog.objective(sol.x);
            return sol;
        }
    }

    const IpmResult r2 = run_ipm(p, y, options);
    sol.iterations += r2.iterations;
    sol.x = ns.x_p + ns.z * r2.y;
    sol.objective = prog.objective(sol.x);
    const Eigen::VectorXd lambda = rows.expand(r2.lambda);
    sol.lambda_linear = lambda.head(n_lin);
    sol.lambda_quadratic = lambda.tail(n_quad);
    sol.kkt = kkt_residuals(prog, ns, sol.x, sol.lambda_linear, sol.lambda_quadratic, sol.nu);
    const bool accurate = sol.kkt.max() < 1e-6;
    if (r2.converged && accurate) {
        sol.status = SolveStatus::Optimal;
    } else if (accurate && sol.kkt.max() < 1e-7) {
        sol.status = SolveStatus::Optimal;
        sol.warnings.push_back("interior-point iterations stalled near the optimum");
    } else {
        sol.status = SolveStatus::MaxIterations;
    }
    return sol;
}

}  // namespace gridopf
