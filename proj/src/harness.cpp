#include "gridopf/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <future>
#include <limits>

#include "gridopf/chance_constraints.hpp"
#include "gridopf/errors.hpp"
#include "gridopf/powerflow.hpp"
#include "gridopf/state_estimation.hpp"

namespace gridopf {

double band_excursion(double magnitude, double v_min, double v_max) {
    if (magnitude > v_max) return magnitude - v_max;
    if (magnitude < v_min) return v_min - magnitude;
    return 0.0;
}

std::uint64_t step_seed(std::uint64_t seed, int t) {
    // splitmix64 finalizer
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(t) + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

Setpoints fit_to_limits(const Setpoints& sp, const std::vector<EnergyLimit>& limits) {
    Setpoints out = sp;
    for (std::size_t g = 0; g < limits.size(); ++g) {
        const auto& lim = limits[g];
        const auto gi = static_cast<Eigen::Index>(g);
        double p = std::clamp(sp.p_dg(gi), lim.p_min, std::max(lim.p_min, lim.p_max));
        double q = std::clamp(sp.q_dg(gi), lim.q_min, std::max(lim.q_min, lim.q_max));
        const double mag = std::hypot(p, q);
        if (mag > lim.s_max) {
            const double scale = lim.s_max > 0.0 ? lim.s_max / mag : 0.0;
            p *= scale;
            q *= scale;
        }
        out.p_dg(gi) = p;
        out.q_dg(gi) = q;
    }
    return out;
}

namespace {

Eigen::VectorXcd nan_vector(std::size_t n) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    return Eigen::VectorXcd::Constant(static_cast<Eigen::Index>(n), Complex(nan, nan));
}

}  // namespace

StepOutcome run_timestep(const Scenario& sc, int t, const Setpoints& carried, const SolveObserver& observer) {
    const auto start = std::chrono::steady_clock::now();
    const GridModel& grid = sc.grid;
    const std::size_t n = grid.layout.node_count();
    StepOutcome out;
    StepRecord& rec = out.record;
    rec.t = t;
    rec.limits = sc.energy_limits(t);
    const Setpoints prev = fit_to_limits(carried, rec.limits);
    out.carried = prev;
    rec.applied = prev;
    rec.v_true = nan_vector(n);
    rec.v_est = nan_vector(n);
    rec.v_predicted = nan_vector(n);
    rec.v_real = nan_vector(n);
    rec.sigma_re = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    rec.sigma_im = rec.sigma_re;

    auto finish = [&](const std::string& status) {
        rec.status = status;
        rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (!rec.ok && rec.v_true.allFinite()) {
            // Nothing new was applied; the network stays at the truth state.
            rec.v_real = rec.v_true;
        }
        if (rec.v_real.allFinite()) {
            rec.violations = 0;
            rec.worst_excursion = 0.0;
            for (Eigen::Index i = 0; i < rec.v_real.size(); ++i) {
                const double e = band_excursion(std::abs(rec.v_real(i)), sc.v_min, sc.v_max);
                if (e > 0.0) ++rec.violations;
                rec.worst_excursion = std::max(rec.worst_excursion, e);
            }
        }
        return out;
    };

    const PowerInjection loads = sc.load_injection(t);
    PowerflowSolution truth;
    try {
        truth = solve_powerflow(grid, loads, sc.dg_injection(rec.limits, prev), prev.tap, prev.v_source);
    } catch (const Error& e) {
        rec.warnings.emplace_back(e.what());
        return finish("pf-failed");
    }
    rec.v_true = truth.state.nodes;

    EstimationResult est;
    try {
        const MeasurementSet meas = generate_measurements(grid, truth.state, loads, sc.dg_injection(rec.limits, prev),
                                                          sc.measurements, step_seed(sc.seed, t));
        est = estimate_state(grid, meas, prev.tap, prev.v_source);
    } catch (const Error& e) {
        rec.warnings.emplace_back(e.what());
        return finish("se-failed");
    }
    rec.v_est = est.v_est;
    for (std::size_t i = 0; i < n; ++i) {
        rec.sigma_re(static_cast<Eigen::Index>(i)) = est.sigma_re(i);
        rec.sigma_im(static_cast<Eigen::Index>(i)) = est.sigma_im(i);
    }
    rec.cov_trace = est.cov.trace();

    const ChanceSpec spec = sc.case_mode == CaseMode::WithCovariance
                                ? ChanceSpec::from_beta(sc.beta, sc.v_min, sc.v_max)
                                : ChanceSpec::ignoring_uncertainty(sc.beta, sc.v_min, sc.v_max);
    TightenedConstraintSet tightened;
    try {
        tightened = tighten_constraints(est, spec);
    } catch (const Error& e) {
        rec.warnings.emplace_back(e.what());
        return finish("tightening-failed");
    }
    ComplexVoltageState lin_point{prev.v_source, est.v_est};
    const SensitivityMatrix m = linearize(build_isolated_admittance(grid), lin_point);

    auto solve = [&](bool soft) {
        OpfOptions opts = sc.opf_options();
        opts.soft_voltage = soft;
        AssembledProgram assembled = assemble_program(m, est, tightened, grid, rec.limits, prev, opts);
        if (!sc.thermal.empty()) add_thermal_constraints(assembled, grid, est, prev, sc.thermal);
        OpfSolution sol = solve_program(assembled.program);
        return std::make_pair(std::move(assembled), std::move(sol));
    };
    auto [assembled, sol] = solve(false);
    rec.phase1_slack = sol.phase1_slack;
    std::string status = to_string(sol.status);
    if (sol.status == SolveStatus::Infeasible && sc.soft_mode) {
        rec.warnings.push_back("tightened voltage limits infeasible; solved with penalized slacks");
        std::tie(assembled, sol) = solve(true);
        status = sol.status == SolveStatus::Optimal ? "soft" : to_string(sol.status);
    }
    for (const auto& w : sol.warnings) rec.warnings.push_back(w);
    if (observer) observer(t, est, assembled, sol);
    if (sol.status != SolveStatus::Optimal) return finish(status);

    const Setpoints next = extract_setpoints(sol, assembled, prev);
    rec.objective = sol.objective;
    rec.voltage_active = voltage_constraint_active(sol, assembled);
    const Eigen::VectorXd dv = assembled.delta_v_nodes(sol.x);
    for (std::size_t i = 0; i < n; ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        rec.v_predicted(ii) = est.v_est(ii) + Complex(dv(ii), dv(static_cast<Eigen::Index>(n) + ii));
    }

    PowerflowSolution realized;
    try {
        realized = solve_powerflow(grid, loads, sc.dg_injection(rec.limits, next), next.tap, next.v_source);
    } catch (const Error& e) {
        rec.warnings.emplace_back(e.what());
        return finish("pf-failed");
    }
    rec.ok = true;
    rec.applied = next;
    out.carried = next;
    rec.v_real = realized.state.nodes;
    rec.predicted_gap = (rec.v_real - rec.v_predicted).cwiseAbs().maxCoeff();
    for (std::size_t g = 0; g < rec.limits.size(); ++g) {
        const auto& lim = rec.limits[g];
        if (lim.s_max <= sc.opf_options().min_available) continue;
        const auto gi = static_cast<Eigen::Index>(g);
        const double used = std::hypot(next.p_dg(gi), next.q_dg(gi));
        if (lim.s_max - used > 1e-4 * lim.s_max + 1e-7) rec.curtailed = true;
    }
    return finish(status);
}

std::vector<StepRecord> run_scenario(const Scenario& sc, const SolveObserver& observer) {
    std::vector<StepRecord> records;
    records.reserve(static_cast<std::size_t>(sc.horizon));
    std::size_t dg_count = 0;
    for (const auto& d : sc.dg) dg_count += d.phases.size();
    Setpoints carried = initial_setpoints(sc.grid, dg_count);
    for (int t = 0; t < sc.horizon; ++t) {
        StepOutcome step = run_timestep(sc, t, carried, observer);
        carried = step.carried;
        records.push_back(std::move(step.record));
    }
    return records;
}

CaseSummary summarize(const Scenario& sc, const std::vector<StepRecord>& records) {
    CaseSummary s;
    s.mode = sc.case_mode;
    s.steps = static_cast<int>(records.size());
    const double hours = sc.step_minutes / 60.0;
    const double lo = sc.grid.transformer ? sc.grid.transformer->tap_min : 1.0;
    const double hi = sc.grid.transformer ? sc.grid.transformer->tap_max : 1.0;
    for (const auto& r : records) {
        if (!r.ok) ++s.failed_steps;
        if (r.status == "soft") ++s.soft_steps;
        s.violations += r.violations;
        if (r.violations > 0) ++s.steps_with_violation;
        s.worst_excursion = std::max(s.worst_excursion, r.worst_excursion);
        for (std::size_t g = 0; g < r.limits.size(); ++g) {
            s.dg_energy_used += r.applied.p_dg(static_cast<Eigen::Index>(g)) * hours;
            s.dg_energy_available += r.limits[g].s_max * hours;
        }
        if (r.curtailed) {
            ++s.curtailed_steps;
            if (!r.voltage_active) ++s.curtailed_without_active_voltage;
        }
        for (double a : r.applied.tap.values()) {
            if (a < lo - 1e-12 || a > hi + 1e-12) s.taps_within_bounds = false;
        }
        if (r.ok) s.max_predicted_gap = std::max(s.max_predicted_gap, r.predicted_gap);
        s.objective.push_back(r.objective);
        s.wall_seconds += r.wall_seconds;
    }
    return s;
}

Comparison compare_cases(const Scenario& scenario) {
    Scenario with = scenario;
    with.case_mode = CaseMode::WithCovariance;
    Scenario without = scenario;
    without.case_mode = CaseMode::NoCovariance;
    auto future = std::async(std::launch::async, [&] { return run_scenario(without); });
    Comparison c;
    c.with_cov = run_scenario(with);
    c.no_cov = future.get();
    c.with_cov_summary = summarize(with, c.with_cov);
    c.no_cov_summary = summarize(without, c.no_cov);
    return c;
}

}  // namespace gridopf
