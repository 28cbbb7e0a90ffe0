#include "gridopf/opf.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "gridopf/errors.hpp"

namespace gridopf {

Setpoints initial_setpoints(const GridModel& grid, std::size_t dg_count) {
    Setpoints s;
    s.p_dg = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dg_count));
    s.q_dg = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dg_count));
    s.v_source = grid.source_voltage;
    return s;
}

Eigen::VectorXd AssembledProgram::delta_v_nodes(const Eigen::VectorXd& x) const {
    const auto s = static_cast<Eigen::Index>(source_count);
    const auto n = static_cast<Eigen::Index>(full_size) - s;
    Eigen::VectorXd out(2 * n);
    out.head(n) = x.segment(dv_re + s, n);
    out.tail(n) = x.segment(dv_im + s, n);
    return out;
}

namespace {

QuadraticInequality circle(Eigen::Index re, Eigen::Index im, const Eigen::Vector2d& shift, double radius,
                           ConstraintTag tag) {
    QuadraticInequality q;
    q.vars = {re, im};
    q.g = Eigen::Matrix2d::Identity();
    q.d = shift;
    q.l = Eigen::Vector2d::Zero();
    q.c = -radius * radius;
    q.tag = tag;
    return q;
}

}  // namespace

AssembledProgram assemble_program(const SensitivityMatrix& m, const EstimationResult& est,
                                  const TightenedConstraintSet& tightened, const GridModel& grid,
                                  const std::vector<EnergyLimit>& limits, const Setpoints& prev,
                                  const OpfOptions& options) {
    const NodeLayout& layout = grid.layout;
    const std::size_t full = layout.size();
    const std::size_t s = layout.source_count();
    const std::size_t n = layout.node_count();
    const auto F = static_cast<Eigen::Index>(full);
    if (m.m.rows() != 2 * F || m.m.cols() != 2 * F) throw std::invalid_argument("assemble_program: M has wrong size");
    if (est.size() != n || tightened.nodes.size() != n) {
        throw std::invalid_argument("assemble_program: estimate does not match the grid");
    }
    if (prev.p_dg.size() != static_cast<Eigen::Index>(limits.size()) ||
        prev.q_dg.size() != static_cast<Eigen::Index>(limits.size())) {
        throw std::invalid_argument("assemble_program: previous setpoints do not match the generator list");
    }
    if (prev.v_source.size() != static_cast<Eigen::Index>(s)) {
        throw std::invalid_argument("assemble_program: previous source voltage has wrong size");
    }

    AssembledProgram out;
    out.limits = limits;
    out.tf_phases = grid.transformer_phases();
    out.full_size = full;
    out.source_count = s;
    out.soft = options.soft_voltage;
    if (grid.transformer) {
        out.tap_min = grid.transformer->tap_min;
        out.tap_max = grid.transformer->tap_max;
        out.tap_step = grid.transformer->tap_step;
    }
    auto& prog = out.program;
    out.dv_re = prog.add_block("dv_re", F);
    out.dv_im = prog.add_block("dv_im", F);
    out.dp = prog.add_block("dp", F);
    out.dq = prog.add_block("dq", F);
    out.dtap = prog.add_block("dtap", static_cast<Eigen::Index>(out.tf_phases.size()));
    if (options.soft_voltage) out.slack = prog.add_block("slack", static_cast<Eigen::Index>(n));

    for (std::size_t i = 0; i < s; ++i) {
        prog.set_cost(out.dp + static_cast<Eigen::Index>(i), 1.0);
        prog.set_cost(out.dq + static_cast<Eigen::Index>(i), options.q_weight);
    }
    if (options.soft_voltage) {
        for (std::size_t j = 0; j < n; ++j) prog.set_cost(out.slack + static_cast<Eigen::Index>(j), options.soft_weight);
    }

    // Linearized power flow: [dP; dQ] = M [dV_re; dV_im].
    for (Eigen::Index r = 0; r < 2 * F; ++r) {
        SparseRow row;
        row.emplace_back(r < F ? out.dp + r : out.dq + (r - F), 1.0);
        for (Eigen::Index c = 0; c < 2 * F; ++c) {
            const double v = m.m(r, c);
            if (v != 0.0) row.emplace_back(c < F ? out.dv_re + c : out.dv_im + (c - F), -v);
        }
        prog.add_equality(std::move(row), 0.0);
    }

    // Tap coupling and lossless transfer across the transformer.
    const auto& tf1 = layout.tf_primary();
    const auto& tf2 = layout.tf_secondary();
    for (std::size_t k = 0; k < tf1.size(); ++k) {
        const auto p1 = static_cast<Eigen::Index>(tf1[k]);
        const auto p2 = static_cast<Eigen::Index>(tf2[k]);
        const Phase ph = layout.at(tf1[k]).phase;
        const std::size_t tap_idx = static_cast<std::size_t>(
            std::find(out.tf_phases.begin(), out.tf_phases.end(), ph) - out.tf_phases.begin());
        const Eigen::Index t = out.dtap + static_cast<Eigen::Index>(tap_idx);
        const double a_prev = prev.tap[ph];
        const Complex v1 = est.v_est(p1 - static_cast<Eigen::Index>(s));
        prog.add_equality({{out.dv_re + p2, 1.0}, {out.dv_re + p1, -a_prev}, {t, -v1.real()}}, 0.0);
        prog.add_equality({{out.dv_im + p2, 1.0}, {out.dv_im + p1, -a_prev}, {t, -v1.imag()}}, 0.0);
    }
    for (std::size_t k = 0; k < tf1.size(); ++k) {
        const auto p1 = static_cast<Eigen::Index>(tf1[k]);
        const auto p2 = static_cast<Eigen::Index>(tf2[k]);
        prog.add_equality({{out.dp + p1, 1.0}, {out.dp + p2, 1.0}}, 0.0);
        prog.add_equality({{out.dq + p1, 1.0}, {out.dq + p2, 1.0}}, 0.0);
    }

    // Nodes without control hold their injection.
    std::vector<int> controllable(full, 0);
    for (std::size_t i = 0; i < s; ++i) controllable[i] = 1;
    for (auto r : tf1) controllable[r] = 1;
    for (auto r : tf2) controllable[r] = 1;
    for (const auto& lim : limits) {
        if (lim.node < s || lim.node >= full) throw std::invalid_argument("assemble_program: generator on invalid node");
        if (layout.is_transformer_row(lim.node)) {
            throw std::invalid_argument("assemble_program: generator on a transformer terminal");
        }
        if (controllable[lim.node]) throw std::invalid_argument("assemble_program: duplicate generator node-phase");
        controllable[lim.node] = 2;
    }
    for (std::size_t i = s; i < full; ++i) {
        if (controllable[i]) continue;
        prog.add_equality({{out.dp + static_cast<Eigen::Index>(i), 1.0}}, 0.0);
        prog.add_equality({{out.dq + static_cast<Eigen::Index>(i), 1.0}}, 0.0);
    }
    if (!options.free_source) {
        for (std::size_t i = 0; i < s; ++i) {
            prog.add_equality({{out.dv_re + static_cast<Eigen::Index>(i), 1.0}}, 0.0);
            prog.add_equality({{out.dv_im + static_cast<Eigen::Index>(i), 1.0}}, 0.0);
        }
    }

    // Tap range.
    for (std::size_t k = 0; k < out.tf_phases.size(); ++k) {
        const Eigen::Index t = out.dtap + static_cast<Eigen::Index>(k);
        const double a_prev = prev.tap[out.tf_phases[k]];
        if (a_prev < out.tap_min - 1e-12 || a_prev > out.tap_max + 1e-12) {
            throw std::invalid_argument("assemble_program: previous tap outside its bounds");
        }
        const ConstraintTag tag{ConstraintKind::TapBound, tf1[k], -1};
        prog.add_inequality({{t, 1.0}}, out.tap_max - a_prev, tag);
        prog.add_inequality({{t, -1.0}}, a_prev - out.tap_min, tag);
    }

    // Generator boxes and apparent-power disc.
    for (std::size_t g = 0; g < limits.size(); ++g) {
        const auto& lim = limits[g];
        const auto i = static_cast<Eigen::Index>(lim.node);
        const double p0 = prev.p_dg(static_cast<Eigen::Index>(g));
        const double q0 = prev.q_dg(static_cast<Eigen::Index>(g));
        if (lim.s_max <= options.min_available) {
            prog.add_equality({{out.dp + i, 1.0}}, -p0);
            prog.add_equality({{out.dq + i, 1.0}}, -q0);
            continue;
        }
        prog.add_inequality({{out.dp + i, 1.0}}, lim.p_max - p0, {ConstraintKind::DgActive, lim.node, -1});
        prog.add_inequality({{out.dp + i, -1.0}}, p0 - lim.p_min, {ConstraintKind::DgActive, lim.node, -1});
        prog.add_inequality({{out.dq + i, 1.0}}, lim.q_max - q0, {ConstraintKind::DgReactive, lim.node, -1});
        prog.add_inequality({{out.dq + i, -1.0}}, q0 - lim.q_min, {ConstraintKind::DgReactive, lim.node, -1});
        QuadraticInequality disc = circle(out.dp + i, out.dq + i, Eigen::Vector2d(p0, q0), lim.s_max,
                                          {ConstraintKind::DgApparent, lim.node, -1});
        prog.add_quadratic(std::move(disc));
    }

    // Tightened voltage limits on every non-source node-phase.
    for (std::size_t j = 0; j < n; ++j) {
        const std::size_t i = s + j;
        const auto re = out.dv_re + static_cast<Eigen::Index>(i);
        const auto im = out.dv_im + static_cast<Eigen::Index>(i);
        const auto& node = tightened.nodes[j];
        for (int k = 0; k < 4; ++k) {
            const auto& c = node.circles[static_cast<std::size_t>(k)];
            QuadraticInequality q = circle(re, im, c.shift, c.radius, {ConstraintKind::VoltageUpper, i, k});
            if (options.soft_voltage) {
                q.vars.push_back(out.slack + static_cast<Eigen::Index>(j));
                q.g.conservativeResize(2, 3);
                q.g.col(2).setZero();
                q.l = Eigen::Vector3d(0.0, 0.0, -2.0 * c.radius);
            }
            prog.add_quadratic(std::move(q));
        }
        for (int k = 0; k < 4; ++k) {
            const auto& h = node.halfplanes[static_cast<std::size_t>(k)];
            SparseRow row{{re, -h.normal(0)}, {im, -h.normal(1)}};
            if (options.soft_voltage) row.emplace_back(out.slack + static_cast<Eigen::Index>(j), -1.0);
            prog.add_inequality(std::move(row), h.normal.dot(h.shift) - h.bound, {ConstraintKind::VoltageLower, i, k});
        }
    }
    if (options.soft_voltage) {
        for (std::size_t j = 0; j < n; ++j) {
            prog.add_inequality({{out.slack + static_cast<Eigen::Index>(j), -1.0}}, 0.0,
                                {ConstraintKind::SlackBound, s + j, -1});
        }
    }

    // A free source keeps its own deterministic band.
    if (options.free_source) {
        for (std::size_t i = 0; i < s; ++i) {
            const Complex v = prev.v_source(static_cast<Eigen::Index>(i));
            const Eigen::Vector2d center(v.real(), v.imag());
            const auto re = out.dv_re + static_cast<Eigen::Index>(i);
            const auto im = out.dv_im + static_cast<Eigen::Index>(i);
            prog.add_quadratic(circle(re, im, center, tightened.v_max, {ConstraintKind::VoltageUpper, i, 0}));
            const Eigen::Vector2d nrm = min_halfplane_coeffs(v);
            prog.add_inequality({{re, -nrm(0)}, {im, -nrm(1)}}, nrm.dot(center) - tightened.v_min,
                                {ConstraintKind::VoltageLower, i, 0});
        }
    }
    return out;
}

void add_thermal_constraints(AssembledProgram& assembled, const GridModel& grid, const EstimationResult& est,
                             const Setpoints& prev, const std::vector<ThermalLimit>& limits) {
    const NodeLayout& layout = grid.layout;
    const std::size_t s = layout.source_count();
    auto voltage = [&](std::size_t full) -> Complex {
        return full < s ? prev.v_source(static_cast<Eigen::Index>(full))
                        : est.v_est(static_cast<Eigen::Index>(full - s));
    };
    for (const auto& lim : limits) {
        if (!(lim.i_max > 0.0)) throw std::invalid_argument("add_thermal_constraints: limit must be positive");
        if (std::isinf(lim.i_max)) continue;
        if (lim.branch >= grid.branches.size()) throw std::out_of_range("add_thermal_constraints: unknown branch");
        const Branch& br = grid.branches[lim.branch];
        if (grid.transformer && ((br.from == grid.transformer->primary && br.to == grid.transformer->secondary) ||
                                 (br.to == grid.transformer->primary && br.from == grid.transformer->secondary))) {
            throw std::invalid_argument("add_thermal_constraints: the transformer branch carries no line current");
        }
        const auto phases = br.phases.phases();
        const auto np = static_cast<Eigen::Index>(phases.size());
        std::vector<Eigen::Index> vars;
        Eigen::VectorXcd dv0(np);
        for (Eigen::Index q = 0; q < np; ++q) {
            const std::size_t f = layout.index(br.from, phases[static_cast<std::size_t>(q)]);
            const std::size_t t = layout.index(br.to, phases[static_cast<std::size_t>(q)]);
            dv0(q) = voltage(f) - voltage(t);
            vars.push_back(assembled.dv_re + static_cast<Eigen::Index>(f));
            vars.push_back(assembled.dv_im + static_cast<Eigen::Index>(f));
            vars.push_back(assembled.dv_re + static_cast<Eigen::Index>(t));
            vars.push_back(assembled.dv_im + static_cast<Eigen::Index>(t));
        }
        const Eigen::VectorXcd i0 = br.y * dv0;
        for (Eigen::Index p = 0; p < np; ++p) {
            QuadraticInequality qi;
            qi.vars = vars;
            qi.g = Eigen::MatrixXd::Zero(2, 4 * np);
            for (Eigen::Index q = 0; q < np; ++q) {
                const Complex w = br.y(p, q);
                // Re(w dv) and Im(w dv) for dv = dV_from - dV_to.
                qi.g(0, 4 * q + 0) = w.real();
                qi.g(0, 4 * q + 1) = -w.imag();
                qi.g(1, 4 * q + 0) = w.imag();
                qi.g(1, 4 * q + 1) = w.real();
                qi.g(0, 4 * q + 2) = -w.real();
                qi.g(0, 4 * q + 3) = w.imag();
                qi.g(1, 4 * q + 2) = -w.imag();
                qi.g(1, 4 * q + 3) = -w.real();
            }
            qi.d = Eigen::Vector2d(i0(p).real(), i0(p).imag());
            qi.l = Eigen::VectorXd::Zero(4 * np);
            qi.c = -lim.i_max * lim.i_max;
            qi.tag = {ConstraintKind::Thermal, lim.branch, -1};
            assembled.program.add_quadratic(std::move(qi));
        }
    }
}

double round_tap(double a, double step, double lo, double hi) {
    if (!(step > 0.0)) throw std::invalid_argument("round_tap: step must be positive");
    const double k = a / step;
    const double below = std::floor(k);
    const double frac = k - below;
    double r;
    if (std::abs(frac - 0.5) < 1e-9) {
        const double down = below * step;
        const double up = (below + 1.0) * step;
        r = std::abs(down - 1.0) <= std::abs(up - 1.0) ? down : up;
    } else {
        r = std::round(k) * step;
    }
    return std::clamp(r, lo, hi);
}

TapVector round_taps(const TapVector& a, double step, double lo, double hi) {
    TapVector out;
    for (Phase p : {Phase::A, Phase::B, Phase::C}) out.set(p, round_tap(a[p], step, lo, hi));
    return out;
}

Setpoints extract_setpoints(const OpfSolution& sol, const AssembledProgram& assembled, const Setpoints& prev) {
    if (sol.status != SolveStatus::Optimal) {
        throw DivergenceError("cannot extract setpoints from a " + to_string(sol.status) + " solution",
                              sol.kkt.max(), sol.iterations);
    }
    Setpoints next = prev;
    const auto& x = sol.x;
    TapVector cont = prev.tap;
    for (std::size_t k = 0; k < assembled.tf_phases.size(); ++k) {
        const Phase ph = assembled.tf_phases[k];
        const double a = std::clamp(prev.tap[ph] + x(assembled.dtap + static_cast<Eigen::Index>(k)),
                                    assembled.tap_min, assembled.tap_max);
        cont.set(ph, a);
    }
    next.tap_continuous = cont;
    next.tap = cont;
    if (assembled.tap_step > 0.0) {
        for (Phase ph : assembled.tf_phases) {
            next.tap.set(ph, round_tap(cont[ph], assembled.tap_step, assembled.tap_min, assembled.tap_max));
        }
    }
    for (std::size_t g = 0; g < assembled.limits.size(); ++g) {
        const auto& lim = assembled.limits[g];
        const auto gi = static_cast<Eigen::Index>(g);
        const auto i = static_cast<Eigen::Index>(lim.node);
        double p = prev.p_dg(gi) + x(assembled.dp + i);
        double q = prev.q_dg(gi) + x(assembled.dq + i);
        p = std::clamp(p, lim.p_min, std::max(lim.p_min, lim.p_max));
        q = std::clamp(q, lim.q_min, std::max(lim.q_min, lim.q_max));
        const double mag = std::hypot(p, q);
        if (mag > lim.s_max) {
            const double scale = lim.s_max > 0.0 ? lim.s_max / mag : 0.0;
            p *= scale;
            q *= scale;
        }
        next.p_dg(gi) = p;
        next.q_dg(gi) = q;
    }
    for (std::size_t i = 0; i < assembled.source_count; ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        next.v_source(ii) += Complex(x(assembled.dv_re + ii), x(assembled.dv_im + ii));
    }
    return next;
}

bool voltage_constraint_active(const OpfSolution& sol, const AssembledProgram& assembled, double threshold) {
    const auto& lin = assembled.program.inequalities();
    for (std::size_t i = 0; i < lin.size(); ++i) {
        if ((lin[i].tag.kind == ConstraintKind::VoltageLower || lin[i].tag.kind == ConstraintKind::VoltageUpper) &&
            sol.lambda_linear(static_cast<Eigen::Index>(i)) > threshold) {
            return true;
        }
    }
    const auto& quad = assembled.program.quadratics();
    for (std::size_t i = 0; i < quad.size(); ++i) {
        if ((quad[i].tag.kind == ConstraintKind::VoltageLower || quad[i].tag.kind == ConstraintKind::VoltageUpper) &&
            sol.lambda_quadratic(static_cast<Eigen::Index>(i)) > threshold) {
            return true;
        }
    }
    return false;
}

}  // namespace gridopf
