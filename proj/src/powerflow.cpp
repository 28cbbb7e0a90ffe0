#include "gridopf/powerflow.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "gridopf/errors.hpp"

namespace gridopf {

Eigen::VectorXcd ComplexVoltageState::bus() const {
    Eigen::VectorXcd out(source.size() + nodes.size());
    out << source, nodes;
    return out;
}

Eigen::VectorXd ComplexVoltageState::rect() const {
    Eigen::VectorXd out(2 * nodes.size());
    out << nodes.real(), nodes.imag();
    return out;
}

Eigen::VectorXd ComplexVoltageState::bus_rect() const {
    const Eigen::VectorXcd b = bus();
    Eigen::VectorXd out(2 * b.size());
    out << b.real(), b.imag();
    return out;
}

Eigen::VectorXd ComplexVoltageState::magnitudes() const { return nodes.cwiseAbs(); }

Eigen::VectorXd ComplexVoltageState::angles() const {
    return nodes.unaryExpr([](const Complex& z) { return std::arg(z); }).real();
}

ComplexVoltageState ComplexVoltageState::from_bus(const Eigen::VectorXcd& bus, std::size_t source_count) {
    const auto s = static_cast<Eigen::Index>(source_count);
    return {bus.head(s), bus.tail(bus.size() - s)};
}

ComplexVoltageState ComplexVoltageState::from_rect(const Eigen::VectorXcd& source, const Eigen::VectorXd& rect) {
    if (rect.size() % 2 != 0) throw std::invalid_argument("rectangular voltage vector has odd length");
    const Eigen::Index n = rect.size() / 2;
    Eigen::VectorXcd nodes(n);
    for (Eigen::Index i = 0; i < n; ++i) nodes(i) = {rect(i), rect(n + i)};
    return {source, nodes};
}

void ComplexVoltageState::validate() const {
    if (!source.allFinite() || !nodes.allFinite()) throw std::invalid_argument("voltage state is not finite");
    for (Eigen::Index i = 0; i < nodes.size(); ++i) {
        if (std::abs(nodes(i)) == 0.0) {
            throw std::invalid_argument("voltage state has a collapsed node at index " + std::to_string(i));
        }
    }
}

PowerInjection PowerInjection::zeros(const NodeLayout& layout) {
    return {Eigen::VectorXcd::Zero(static_cast<Eigen::Index>(layout.source_count())),
            Eigen::VectorXcd::Zero(static_cast<Eigen::Index>(layout.node_count()))};
}

namespace {

void check_dims(const AdmittanceMatrix& y, const ComplexVoltageState& v) {
    if (v.source.size() != static_cast<Eigen::Index>(y.layout.source_count()) ||
        v.nodes.size() != static_cast<Eigen::Index>(y.layout.node_count()) ||
        y.y.rows() != static_cast<Eigen::Index>(y.layout.size())) {
        throw std::invalid_argument("voltage state does not match admittance dimensions");
    }
}

}  // namespace

PowerInjection compute_injections(const AdmittanceMatrix& y, const ComplexVoltageState& v) {
    check_dims(y, v);
    const Eigen::VectorXcd vb = v.bus();
    const Eigen::VectorXcd s = vb.cwiseProduct((y.y * vb).conjugate());
    const auto ns = v.source.size();
    return {s.head(ns), s.tail(s.size() - ns)};
}

SensitivityMatrix linearize(const AdmittanceMatrix& y_isol, const ComplexVoltageState& v) {
    check_dims(y_isol, v);
    const Eigen::VectorXcd vb = v.bus();
    const Eigen::Index n = vb.size();
    // dS = diag(conj(Y V)) dV + diag(V) conj(Y) conj(dV)
    const Eigen::VectorXcd a = (y_isol.y * vb).conjugate();
    const Eigen::MatrixXcd b = vb.asDiagonal() * y_isol.y.conjugate();

    SensitivityMatrix out{Eigen::MatrixXd(2 * n, 2 * n)};
    auto& m = out.m;
    m.topLeftCorner(n, n) = b.real();
    m.topRightCorner(n, n) = b.imag();
    m.bottomLeftCorner(n, n) = b.imag();
    m.bottomRightCorner(n, n) = -b.real();
    for (Eigen::Index i = 0; i < n; ++i) {
        m(i, i) += a(i).real();
        m(i, n + i) -= a(i).imag();
        m(n + i, i) += a(i).imag();
        m(n + i, n + i) += a(i).real();
    }
    return out;
}

ComplexVoltageState flat_start(const GridModel& grid, const TapVector& tap, const Eigen::VectorXcd& v_source) {
    const auto& layout = grid.layout;
    const auto src_phases = grid.buses[grid.source_bus].phases.phases();
    if (static_cast<std::size_t>(v_source.size()) != src_phases.size()) {
        throw std::invalid_argument("source voltage size does not match source phases");
    }
    auto source_phase_voltage = [&](Phase p) {
        for (std::size_t k = 0; k < src_phases.size(); ++k) {
            if (src_phases[k] == p) return v_source(static_cast<Eigen::Index>(k));
        }
        throw std::logic_error("phase missing at source");
    };
    ComplexVoltageState state{v_source, Eigen::VectorXcd(static_cast<Eigen::Index>(layout.node_count()))};
    for (std::size_t i = 0; i < layout.node_count(); ++i) {
        const std::size_t full = layout.source_count() + i;
        const NodePhase np = layout.at(full);
        Complex v = source_phase_voltage(np.phase);
        const Region r = layout.region(full);
        if (r == Region::Tf2 || r == Region::Sys2) v *= tap[np.phase];
        state.nodes(static_cast<Eigen::Index>(i)) = v;
    }
    return state;
}

PowerflowSolution solve_powerflow(const GridModel& grid, const PowerInjection& loads, const PowerInjection& dg,
                                  const TapVector& tap, const Eigen::VectorXcd& v_source,
                                  const PowerflowOptions& options) {
    const auto& layout = grid.layout;
    const std::size_t s = layout.source_count();
    const std::size_t nn = layout.node_count();
    const Eigen::Index nb = static_cast<Eigen::Index>(layout.size());
    if (loads.nodes.size() != static_cast<Eigen::Index>(nn) || dg.nodes.size() != static_cast<Eigen::Index>(nn)) {
        throw std::invalid_argument("solve_powerflow: injection vectors must cover every node-phase");
    }
    if (grid.transformer) {
        for (double r : tap.values()) {
            if (r < grid.transformer->tap_min - 1e-12 || r > grid.transformer->tap_max + 1e-12) {
                throw std::invalid_argument("solve_powerflow: tap outside transformer bounds");
            }
        }
    }
    const Eigen::VectorXcd spec = loads.nodes + dg.nodes;

    const auto& tf1 = layout.tf_primary();
    const auto& tf2 = layout.tf_secondary();
    for (std::size_t k : tf1) {
        if (std::abs(spec(static_cast<Eigen::Index>(k - s))) != 0.0) {
            throw std::invalid_argument("solve_powerflow: transformer terminals cannot carry load");
        }
    }
    for (std::size_t k : tf2) {
        if (std::abs(spec(static_cast<Eigen::Index>(k - s))) != 0.0) {
            throw std::invalid_argument("solve_powerflow: transformer terminals cannot carry load");
        }
    }

    // Unknowns: every non-source row except the secondary terminals, which
    // follow from the tap relation.
    std::vector<std::size_t> unknowns;
    std::vector<long> partner(layout.size(), -1);  // tf1 row -> tf2 row
    std::vector<Phase> tf_phase(layout.size(), Phase::A);
    for (std::size_t k = 0; k < tf1.size(); ++k) {
        partner[tf1[k]] = static_cast<long>(tf2[k]);
        tf_phase[tf1[k]] = layout.at(tf1[k]).phase;
    }
    for (std::size_t full = s; full < layout.size(); ++full) {
        if (layout.region(full) != Region::Tf2) unknowns.push_back(full);
    }
    const auto nu = static_cast<Eigen::Index>(unknowns.size());

    const AdmittanceMatrix y = build_isolated_admittance(grid);
    ComplexVoltageState state = flat_start(grid, tap, v_source);

    auto sync_secondary = [&](ComplexVoltageState& st) {
        for (std::size_t k = 0; k < tf1.size(); ++k) {
            st.nodes(static_cast<Eigen::Index>(tf2[k] - s)) =
                tap[layout.at(tf1[k]).phase] * st.nodes(static_cast<Eigen::Index>(tf1[k] - s));
        }
    };

    // Equations: injection mismatch on ordinary rows; lossless transfer on
    // each primary/secondary pair (stored on the primary row).
    auto mismatch = [&](const ComplexVoltageState& st) {
        const PowerInjection inj = compute_injections(y, st);
        Eigen::VectorXd f(2 * nu);
        for (Eigen::Index u = 0; u < nu; ++u) {
            const std::size_t full = unknowns[static_cast<std::size_t>(u)];
            Complex r;
            if (layout.region(full) == Region::Tf1) {
                r = inj.nodes(static_cast<Eigen::Index>(full - s)) +
                    inj.nodes(static_cast<Eigen::Index>(partner[full]) - static_cast<Eigen::Index>(s));
            } else {
                r = inj.nodes(static_cast<Eigen::Index>(full - s)) - spec(static_cast<Eigen::Index>(full - s));
            }
            f(u) = r.real();
            f(nu + u) = r.imag();
        }
        return f;
    };

    // Infinity norm over complex mismatches, not over their real and imaginary parts.
    auto complex_norm = [nu](const Eigen::VectorXd& v) {
        double worst = 0.0;
        for (Eigen::Index u = 0; u < nu; ++u) worst = std::max(worst, std::hypot(v(u), v(nu + u)));
        return worst;
    };

    PowerflowSolution out;
    Eigen::VectorXd f = mismatch(state);
    double norm = complex_norm(f);
    for (int it = 0; it <= options.max_iterations; ++it) {
        out.iterations = it;
        if (norm < options.tolerance) {
            out.state = state;
            out.mismatch = norm;
            return out;
        }
        if (it == options.max_iterations) break;

        const Eigen::MatrixXd m = linearize(y, state).m;
        Eigen::MatrixXd jac(2 * nu, 2 * nu);
        for (Eigen::Index cu = 0; cu < nu; ++cu) {
            const std::size_t cfull = unknowns[static_cast<std::size_t>(cu)];
            for (int part = 0; part < 2; ++part) {
                const Eigen::Index col = part * nb + static_cast<Eigen::Index>(cfull);
                Eigen::VectorXd dcol = m.col(col);
                if (partner[cfull] >= 0) {
                    dcol += tap[tf_phase[cfull]] * m.col(part * nb + partner[cfull]);
                }
                for (Eigen::Index ru = 0; ru < nu; ++ru) {
                    const std::size_t rfull = unknowns[static_cast<std::size_t>(ru)];
                    double dp = dcol(static_cast<Eigen::Index>(rfull));
                    double dq = dcol(nb + static_cast<Eigen::Index>(rfull));
                    if (partner[rfull] >= 0) {
                        dp += dcol(partner[rfull]);
                        dq += dcol(nb + partner[rfull]);
                    }
                    jac(ru, part * nu + cu) = dp;
                    jac(nu + ru, part * nu + cu) = dq;
                }
            }
        }
        Eigen::PartialPivLU<Eigen::MatrixXd> lu(jac);
        if (!(lu.rcond() > 1e-14)) {
            throw DivergenceError("power flow Jacobian is singular", norm, it);
        }
        const Eigen::VectorXd dx = lu.solve(-f);
        if (!dx.allFinite()) throw DivergenceError("power flow step is not finite", norm, it);
        for (Eigen::Index u = 0; u < nu; ++u) {
            const auto node = static_cast<Eigen::Index>(unknowns[static_cast<std::size_t>(u)] - s);
            state.nodes(node) += Complex(dx(u), dx(nu + u));
        }
        sync_secondary(state);
        for (Eigen::Index i = 0; i < state.nodes.size(); ++i) {
            const double mag = std::abs(state.nodes(i));
            if (mag < options.collapse_floor) {
                throw LowVoltageError("power flow voltage collapsed at node-phase " + std::to_string(i) +
                                          " (|V| = " + std::to_string(mag) + " p.u.)",
                                      static_cast<std::size_t>(i), mag);
            }
        }
        f = mismatch(state);
        norm = complex_norm(f);
    }
    throw DivergenceError("power flow did not converge (mismatch " + std::to_string(norm) + " p.u.)", norm,
                          options.max_iterations);
}

}  // namespace gridopf
