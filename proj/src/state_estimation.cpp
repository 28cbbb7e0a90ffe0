#include "gridopf/state_estimation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include "gridopf/errors.hpp"

namespace gridopf {

std::string to_string(MeasurementKind kind) {
    switch (kind) {
        case MeasurementKind::VoltagePhasor: return "voltage-phasor";
        case MeasurementKind::VoltageMagnitude: return "voltage-magnitude";
        case MeasurementKind::NodeCurrentPhasor: return "node-current-phasor";
        case MeasurementKind::NodeCurrentMagnitude: return "node-current-magnitude";
        case MeasurementKind::BranchCurrentPhasor: return "branch-current-phasor";
        case MeasurementKind::LoadPseudo: return "load-pseudo";
    }
    return "unknown";
}

MeasurementKind measurement_kind_from_string(const std::string& name) {
    for (auto k : {MeasurementKind::VoltagePhasor, MeasurementKind::VoltageMagnitude,
                   MeasurementKind::NodeCurrentPhasor, MeasurementKind::NodeCurrentMagnitude,
                   MeasurementKind::BranchCurrentPhasor, MeasurementKind::LoadPseudo}) {
        if (to_string(k) == name) return k;
    }
    throw std::invalid_argument("unknown measurement kind '" + name + "'");
}

bool is_phasor(MeasurementKind kind) {
    return kind == MeasurementKind::VoltagePhasor || kind == MeasurementKind::NodeCurrentPhasor ||
           kind == MeasurementKind::BranchCurrentPhasor || kind == MeasurementKind::LoadPseudo;
}

double default_sigma(MeasurementKind kind) {
    switch (kind) {
        case MeasurementKind::VoltagePhasor: return 0.005;
        case MeasurementKind::VoltageMagnitude: return 0.01;
        case MeasurementKind::NodeCurrentPhasor:
        case MeasurementKind::NodeCurrentMagnitude:
        case MeasurementKind::BranchCurrentPhasor: return 0.02;
        case MeasurementKind::LoadPseudo: return 0.0;
    }
    return 0.0;
}

double EstimationResult::var_re(std::size_t i) const {
    return cov(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i));
}

double EstimationResult::var_im(std::size_t i) const {
    const auto n = v_est.size();
    const auto k = n + static_cast<Eigen::Index>(i);
    return cov(k, k);
}

double EstimationResult::sigma_re(std::size_t i) const { return std::sqrt(std::max(0.0, var_re(i))); }
double EstimationResult::sigma_im(std::size_t i) const { return std::sqrt(std::max(0.0, var_im(i))); }

namespace {

// A magnitude cannot be negative. Noise can still push a reading of a small
// current below zero, and fitting (z - |I|)^2 with z < 0 puts the optimum on
// the cone tip at I = 0, where Gauss-Newton only crawls. Censoring the reading
// at zero keeps the objective smooth there.
double magnitude_reading(const Measurement& m) { return std::max(0.0, m.value.real()); }

/// Measured quantity as a function of the full bus voltage, plus its gradient
/// with respect to [Re V_bus; Im V_bus] for each real component.
struct Evaluator {
    const GridModel& grid;
    const AdmittanceMatrix& y;

    Eigen::Index nb() const { return static_cast<Eigen::Index>(grid.layout.size()); }

    void check(const Measurement& m) const {
        if (m.kind == MeasurementKind::BranchCurrentPhasor) {
            if (m.element >= grid.branches.size()) throw ConfigError("measurement on nonexistent branch");
            if (!grid.branches[m.element].phases.contains(m.phase)) {
                throw ConfigError("branch measurement on a phase the branch does not carry");
            }
            return;
        }
        if (m.element >= grid.buses.size()) throw ConfigError("measurement on nonexistent bus");
        auto full = grid.layout.find(m.element, m.phase);
        if (!full) throw ConfigError("measurement on phase missing at bus '" + grid.buses[m.element].id + "'");
        if (grid.layout.region(*full) == Region::Source &&
            (m.kind == MeasurementKind::LoadPseudo)) {
            throw ConfigError("pseudo-measurement at the source bus");
        }
        if (grid.layout.is_transformer_row(*full) &&
            (m.kind == MeasurementKind::NodeCurrentPhasor || m.kind == MeasurementKind::NodeCurrentMagnitude ||
             m.kind == MeasurementKind::LoadPseudo)) {
            throw ConfigError("node injection measurement at a transformer terminal");
        }
    }

    Eigen::Index row(const Measurement& m) const {
        return static_cast<Eigen::Index>(grid.layout.index(m.element, m.phase));
    }

    /// Complex measured value (magnitudes in the real part).
    Complex value(const Measurement& m, const Eigen::VectorXcd& vb, const Eigen::VectorXcd& current) const {
        switch (m.kind) {
            case MeasurementKind::VoltagePhasor: return vb(row(m));
            case MeasurementKind::VoltageMagnitude: return std::abs(vb(row(m)));
            case MeasurementKind::NodeCurrentPhasor: return current(row(m));
            case MeasurementKind::NodeCurrentMagnitude: return std::abs(current(row(m)));
            case MeasurementKind::BranchCurrentPhasor: return branch_current(m, vb);
            case MeasurementKind::LoadPseudo: {
                const auto k = row(m);
                return vb(k) * std::conj(current(k));
            }
        }
        return {};
    }

    Complex branch_current(const Measurement& m, const Eigen::VectorXcd& vb) const {
        const auto& br = grid.branches[m.element];
        const auto phases = br.phases.phases();
        Complex i = 0.0;
        Eigen::Index p_local = -1;
        for (std::size_t q = 0; q < phases.size(); ++q) {
            if (phases[q] == m.phase) p_local = static_cast<Eigen::Index>(q);
        }
        for (std::size_t q = 0; q < phases.size(); ++q) {
            const auto f = static_cast<Eigen::Index>(grid.layout.index(br.from, phases[q]));
            const auto t = static_cast<Eigen::Index>(grid.layout.index(br.to, phases[q]));
            i += br.y(p_local, static_cast<Eigen::Index>(q)) * (vb(f) - vb(t));
        }
        return i;
    }

    /// Gradients of the real and imaginary parts of a linear map I = c^T V.
    void linear_gradient(const Eigen::RowVectorXcd& c, Eigen::RowVectorXd& g_re, Eigen::RowVectorXd& g_im) const {
        const Eigen::Index n = nb();
        g_re.setZero(2 * n);
        g_im.setZero(2 * n);
        g_re.head(n) = c.real();
        g_re.tail(n) = -c.imag();
        g_im.head(n) = c.imag();
        g_im.tail(n) = c.real();
    }

    Eigen::RowVectorXcd branch_row(const Measurement& m) const {
        const auto& br = grid.branches[m.element];
        const auto phases = br.phases.phases();
        Eigen::RowVectorXcd c = Eigen::RowVectorXcd::Zero(nb());
        Eigen::Index p_local = -1;
        for (std::size_t q = 0; q < phases.size(); ++q) {
            if (phases[q] == m.phase) p_local = static_cast<Eigen::Index>(q);
        }
        for (std::size_t q = 0; q < phases.size(); ++q) {
            const auto f = static_cast<Eigen::Index>(grid.layout.index(br.from, phases[q]));
            const auto t = static_cast<Eigen::Index>(grid.layout.index(br.to, phases[q]));
            c(f) += br.y(p_local, static_cast<Eigen::Index>(q));
            c(t) -= br.y(p_local, static_cast<Eigen::Index>(q));
        }
        return c;
    }
};

struct ScalarRow {
    double z;
    double sigma;
    double h;
    Eigen::RowVectorXd grad;  // over the full bus rect coordinates
};

double draw_noise(std::mt19937_64& rng, double sigma, ForecastNoise model) {
    if (sigma == 0.0) return 0.0;
    if (model == ForecastNoise::Uniform) {
        const double half = std::sqrt(3.0) * sigma;
        return std::uniform_real_distribution<double>(-half, half)(rng);
    }
    return std::normal_distribution<double>(0.0, sigma)(rng);
}

}  // namespace

MeasurementSet generate_measurements(const GridModel& grid, const ComplexVoltageState& truth,
                                     const PowerInjection& loads, const PowerInjection& dg,
                                     const MeasurementConfig& config, std::uint64_t seed) {
    const auto& layout = grid.layout;
    if (truth.nodes.size() != static_cast<Eigen::Index>(layout.node_count()) ||
        loads.nodes.size() != truth.nodes.size() || dg.nodes.size() != truth.nodes.size()) {
        throw std::invalid_argument("generate_measurements: dimension mismatch");
    }
    const AdmittanceMatrix y = build_isolated_admittance(grid);
    const Evaluator eval{grid, y};
    const Eigen::VectorXcd vb = truth.bus();
    const Eigen::VectorXcd current = y.y * vb;

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> unit(0.0, 1.0);
    MeasurementSet out;
    for (const auto& pl : config.placements) {
        if (pl.sigma < 0.0 || !std::isfinite(pl.sigma)) throw ConfigError("measurement sigma must be non-negative");
        if (pl.kind == MeasurementKind::LoadPseudo) {
            throw ConfigError("load pseudo-measurements are derived from the load forecast, not placed");
        }
        for (Phase p : pl.phases.phases()) {
            Measurement m{pl.kind, pl.element, p, 0.0, pl.sigma};
            eval.check(m);
            const Complex truth_value = eval.value(m, vb, current);
            if (is_phasor(pl.kind)) {
                const double nr = unit(rng);
                const double ni = unit(rng);
                m.value = truth_value + Complex(pl.sigma * nr, pl.sigma * ni);
            } else {
                m.value = truth_value.real() + pl.sigma * unit(rng);
            }
            out.records.push_back(m);
        }
    }

    for (std::size_t i = 0; i < layout.node_count(); ++i) {
        const std::size_t full = layout.source_count() + i;
        if (layout.is_transformer_row(full)) continue;
        const auto k = static_cast<Eigen::Index>(i);
        const double sigma = std::max(config.pseudo_sigma_frac * std::abs(loads.nodes(k)), config.pseudo_sigma_floor);
        const double nr = draw_noise(rng, sigma, config.forecast_noise);
        const double ni = draw_noise(rng, sigma, config.forecast_noise);
        const NodePhase np = layout.at(full);
        out.records.push_back({MeasurementKind::LoadPseudo, np.bus, np.phase,
                               dg.nodes(k) + loads.nodes(k) + Complex(nr, ni), sigma});
    }
    return out;
}

EstimationResult estimate_state(const GridModel& grid, const MeasurementSet& meas, const TapVector& tap_prev) {
    return estimate_state(grid, meas, tap_prev, grid.source_voltage);
}

EstimationResult estimate_state(const GridModel& grid, const MeasurementSet& meas, const TapVector& tap_prev,
                                const Eigen::VectorXcd& v_source, const EstimatorOptions& options) {
    const auto& layout = grid.layout;
    const std::size_t s = layout.source_count();
    const auto nb = static_cast<Eigen::Index>(layout.size());
    const auto nn = static_cast<Eigen::Index>(layout.node_count());
    const AdmittanceMatrix y = build_isolated_admittance(grid);
    const Evaluator eval{grid, y};

    for (const auto& m : meas.records) {
        if (!(m.sigma > 0.0) || !std::isfinite(m.sigma)) {
            throw std::invalid_argument("estimate_state: every measurement needs sigma > 0");
        }
        eval.check(m);
    }

    const auto& tf1 = layout.tf_primary();
    const auto& tf2 = layout.tf_secondary();
    std::vector<long> partner(layout.size(), -1);
    for (std::size_t k = 0; k < tf1.size(); ++k) partner[tf1[k]] = static_cast<long>(tf2[k]);

    std::vector<std::size_t> unknowns;
    std::vector<long> unknown_of(layout.size(), -1);
    for (std::size_t full = s; full < layout.size(); ++full) {
        if (layout.region(full) == Region::Tf2) continue;
        unknown_of[full] = static_cast<long>(unknowns.size());
        unknowns.push_back(full);
    }
    const auto nu = static_cast<Eigen::Index>(unknowns.size());

    // T maps the reduced state to the non-source rectangular voltages.
    Eigen::MatrixXd t_nodes = Eigen::MatrixXd::Zero(2 * nn, 2 * nu);
    for (std::size_t full = s; full < layout.size(); ++full) {
        const auto i = static_cast<Eigen::Index>(full - s);
        if (layout.region(full) == Region::Tf2) {
            const std::size_t k = static_cast<std::size_t>(std::find(tf2.begin(), tf2.end(), full) - tf2.begin());
            const auto u = unknown_of[tf1[k]];
            const double a = tap_prev[layout.at(full).phase];
            t_nodes(i, u) = a;
            t_nodes(nn + i, nu + u) = a;
        } else {
            const auto u = unknown_of[full];
            t_nodes(i, u) = 1.0;
            t_nodes(nn + i, nu + u) = 1.0;
        }
    }

    ComplexVoltageState state = flat_start(grid, tap_prev, v_source);
    Eigen::VectorXd x(2 * nu);
    for (Eigen::Index u = 0; u < nu; ++u) {
        const Complex v = state.nodes(static_cast<Eigen::Index>(unknowns[static_cast<std::size_t>(u)] - s));
        x(u) = v.real();
        x(nu + u) = v.imag();
    }

    auto node_state = [&](const Eigen::VectorXd& xr) {
        const Eigen::VectorXd rect = t_nodes * xr;
        return ComplexVoltageState::from_rect(v_source, rect);
    };

    auto build_rows = [&](const ComplexVoltageState& st) {
        const Eigen::VectorXcd vb = st.bus();
        const Eigen::VectorXcd current = y.y * vb;
        Eigen::MatrixXd m;
        bool have_m = false;
        auto sens = [&]() -> const Eigen::MatrixXd& {
            if (!have_m) {
                m = linearize(y, st).m;
                have_m = true;
            }
            return m;
        };
        std::vector<ScalarRow> rows;
        rows.reserve(2 * meas.records.size() + 2 * tf1.size());
        Eigen::RowVectorXd g_re, g_im;
        for (const auto& rec : meas.records) {
            const Complex h = eval.value(rec, vb, current);
            const auto k = rec.kind == MeasurementKind::BranchCurrentPhasor ? Eigen::Index{0} : eval.row(rec);
            switch (rec.kind) {
                case MeasurementKind::VoltagePhasor: {
                    g_re.setZero(2 * nb);
                    g_im.setZero(2 * nb);
                    g_re(k) = 1.0;
                    g_im(nb + k) = 1.0;
                    rows.push_back({rec.value.real(), rec.sigma, h.real(), g_re});
                    rows.push_back({rec.value.imag(), rec.sigma, h.imag(), g_im});
                    break;
                }
                case MeasurementKind::VoltageMagnitude: {
                    g_re.setZero(2 * nb);
                    const double mag = std::abs(vb(k));
                    if (mag > 0.0) {
                        g_re(k) = vb(k).real() / mag;
                        g_re(nb + k) = vb(k).imag() / mag;
                    }
                    rows.push_back({magnitude_reading(rec), rec.sigma, h.real(), g_re});
                    break;
                }
                case MeasurementKind::NodeCurrentPhasor:
                case MeasurementKind::NodeCurrentMagnitude:
                case MeasurementKind::BranchCurrentPhasor: {
                    const Eigen::RowVectorXcd c =
                        rec.kind == MeasurementKind::BranchCurrentPhasor ? eval.branch_row(rec) : Eigen::RowVectorXcd(y.y.row(k));
                    eval.linear_gradient(c, g_re, g_im);
                    if (rec.kind == MeasurementKind::NodeCurrentMagnitude) {
                        const Complex i = current(k);
                        const double mag = std::abs(i);
                        Eigen::RowVectorXd g = Eigen::RowVectorXd::Zero(2 * nb);
                        if (mag > 1e-12) g = (i.real() * g_re + i.imag() * g_im) / mag;
                        rows.push_back({magnitude_reading(rec), rec.sigma, h.real(), g});
                    } else {
                        rows.push_back({rec.value.real(), rec.sigma, h.real(), g_re});
                        rows.push_back({rec.value.imag(), rec.sigma, h.imag(), g_im});
                    }
                    break;
                }
                case MeasurementKind::LoadPseudo: {
                    const auto& mm = sens();
                    rows.push_back({rec.value.real(), rec.sigma, h.real(), mm.row(k)});
                    rows.push_back({rec.value.imag(), rec.sigma, h.imag(), mm.row(nb + k)});
                    break;
                }
            }
        }
        if (!tf1.empty()) {
            const auto& mm = sens();
            for (std::size_t p = 0; p < tf1.size(); ++p) {
                const auto a = static_cast<Eigen::Index>(tf1[p]);
                const auto b = static_cast<Eigen::Index>(tf2[p]);
                const Complex sum = vb(a) * std::conj(current(a)) + vb(b) * std::conj(current(b));
                rows.push_back({0.0, options.transformer_sigma, sum.real(), mm.row(a) + mm.row(b)});
                rows.push_back({0.0, options.transformer_sigma, sum.imag(), mm.row(nb + a) + mm.row(nb + b)});
            }
        }
        return rows;
    };

    // Full-rect gradient -> reduced-state gradient.
    auto reduce = [&](const Eigen::RowVectorXd& g) {
        Eigen::RowVectorXd out(2 * nu);
        for (Eigen::Index u = 0; u < nu; ++u) {
            const std::size_t full = unknowns[static_cast<std::size_t>(u)];
            const auto f = static_cast<Eigen::Index>(full);
            double gr = g(f);
            double gi = g(nb + f);
            if (partner[full] >= 0) {
                const double a = tap_prev[layout.at(full).phase];
                gr += a * g(partner[full]);
                gi += a * g(nb + partner[full]);
            }
            out(u) = gr;
            out(nu + u) = gi;
        }
        return out;
    };

    auto assemble = [&](const std::vector<ScalarRow>& rows, Eigen::MatrixXd& info, Eigen::VectorXd& rhs) {
        info.setZero(2 * nu, 2 * nu);
        rhs.setZero(2 * nu);
        for (const auto& r : rows) {
            const Eigen::RowVectorXd h = reduce(r.grad);
            const double w = 1.0 / (r.sigma * r.sigma);
            info.selfadjointView<Eigen::Lower>().rankUpdate(h.transpose(), w);
            rhs += w * (r.z - r.h) * h.transpose();
        }
        info = info.selfadjointView<Eigen::Lower>();
    };

    auto nullity = [&](const Eigen::MatrixXd& info) {
        Eigen::VectorXd d = info.diagonal();
        std::size_t zero_cols = 0;
        Eigen::VectorXd scale(d.size());
        for (Eigen::Index i = 0; i < d.size(); ++i) {
            if (!(d(i) > 0.0)) {
                ++zero_cols;
                scale(i) = 1.0;
            } else {
                scale(i) = 1.0 / std::sqrt(d(i));
            }
        }
        const Eigen::MatrixXd scaled = scale.asDiagonal() * info * scale.asDiagonal();
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(scaled, Eigen::EigenvaluesOnly);
        std::size_t small = 0;
        for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
            if (es.eigenvalues()(i) < 1e-11) ++small;
        }
        return std::max(small, zero_cols);
    };

    auto objective = [](const std::vector<ScalarRow>& rows) {
        double j = 0.0;
        for (const auto& r : rows) j += (r.z - r.h) * (r.z - r.h) / (r.sigma * r.sigma);
        return j;
    };

    Eigen::MatrixXd info;
    Eigen::VectorXd rhs;
    double last_step = std::numeric_limits<double>::infinity();
    state = node_state(x);
    std::vector<ScalarRow> rows = build_rows(state);
    double j_now = objective(rows);
    for (int it = 0; it < options.max_iterations; ++it) {
        assemble(rows, info, rhs);
        if (it == 0) {
            if (const std::size_t k = nullity(info); k > 0) {
                throw UnobservableError("state is unobservable: information matrix has a null space of dimension " +
                                            std::to_string(k),
                                        k);
            }
        }
        Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
        const Eigen::VectorXd dx = ldlt.solve(rhs);
        if (ldlt.info() != Eigen::Success || !dx.allFinite()) {
            throw DivergenceError("state estimation step failed", last_step, it);
        }
        // Backtracking on the weighted residual; the Gauss-Newton decrement
        // rhs . dx is the model's predicted reduction.
        const double decrement = rhs.dot(dx);
        double alpha = 1.0;
        Eigen::VectorXd x_new = x + dx;
        std::vector<ScalarRow> rows_new = build_rows(node_state(x_new));
        double j_new = objective(rows_new);
        while (j_new > j_now - 1e-4 * alpha * decrement && alpha > 1e-6) {
            alpha *= 0.5;
            x_new = x + alpha * dx;
            rows_new = build_rows(node_state(x_new));
            j_new = objective(rows_new);
        }
        x = x_new;
        rows = std::move(rows_new);
        j_now = j_new;
        const double step = alpha * dx.cwiseAbs().maxCoeff();
        // decrement = dx' info dx is the squared step in units of the
        // estimate's own standard deviation; below 1e-10 further iterations
        // cannot move the answer in any statistically visible way.
        const bool stalled = (step < 1e-8 && step >= last_step) || decrement <= options.decrement_tolerance;
        last_step = step;
        if (step < options.tolerance || stalled) {
            EstimationResult out;
            const ComplexVoltageState final_state = node_state(x);
            assemble(build_rows(final_state), info, rhs);
            if (const std::size_t k = nullity(info); k > 0) {
                throw UnobservableError("state is unobservable at the estimate: null space of dimension " +
                                            std::to_string(k),
                                        k);
            }
            Eigen::LDLT<Eigen::MatrixXd> final_ldlt(info);
            const Eigen::MatrixXd cov_x = final_ldlt.solve(Eigen::MatrixXd::Identity(2 * nu, 2 * nu));
            Eigen::MatrixXd cov = t_nodes * cov_x * t_nodes.transpose();
            out.cov = 0.5 * (cov + cov.transpose());
            out.v_est = final_state.nodes;
            out.v_rect = final_state.rect();
            out.iterations = it + 1;
            return out;
        }
    }
    throw DivergenceError("state estimation did not converge", last_step, options.max_iterations);
}

Eigen::MatrixXd polar_to_rect_covariance(const Eigen::VectorXd& magnitudes, const Eigen::VectorXd& angles,
                                         const Eigen::MatrixXd& sigma_polar) {
    const Eigen::Index n = magnitudes.size();
    if (angles.size() != n || sigma_polar.rows() != 2 * n || sigma_polar.cols() != 2 * n) {
        throw std::invalid_argument("polar_to_rect_covariance: dimension mismatch");
    }
    if ((magnitudes.array() <= 0.0).any()) {
        throw std::invalid_argument("polar_to_rect_covariance: magnitudes must be positive");
    }
    Eigen::MatrixXd j = Eigen::MatrixXd::Zero(2 * n, 2 * n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double c = std::cos(angles(i));
        const double s = std::sin(angles(i));
        j(i, i) = c;
        j(i, n + i) = -magnitudes(i) * s;
        j(n + i, i) = s;
        j(n + i, n + i) = magnitudes(i) * c;
    }
    return j * sigma_polar * j.transpose();
}

}  // namespace gridopf
