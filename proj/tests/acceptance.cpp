// Acceptance checks for the whole pipeline. Prints one PASS/FAIL line per
// criterion and exits non-zero if any fails.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include <fmt/format.h>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "gridopf/chance_constraints.hpp"
#include "gridopf/harness.hpp"
#include "gridopf/powerflow.hpp"

using namespace gridopf;
namespace fs = std::filesystem;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Verdict alpha_check() {
    const double a = compute_alpha(0.95);
    const double ref = oracle::quantile_bisection(1.0 - 0.05 / 8.0);
    const int calls = 10000;
    volatile double sink = 0.0;
    const auto t0 = std::chrono::steady_clock::now();
    for (int k = 0; k < calls; ++k) sink = sink + compute_alpha(0.95);
    const double per_call = seconds_since(t0) / calls;
    const bool pass = a >= 2.49 && a <= 2.51 && std::abs(a - ref) < 1e-6 && per_call < 1e-3;
    return {pass, fmt::format("alpha(0.95) = {:.6f} in [2.49, 2.51]; |alpha - bisection oracle| = {:.1e} (< 1e-6); "
                              "{:.2e} s per call (< 1e-3 s)",
                              a, std::abs(a - ref), per_call)};
}

Verdict linearization_check() {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(20240601);
    const GridModel grid = fixture::reference_grid();
    const auto y = build_isolated_admittance(grid);
    const auto v = fixture::perturbed_state(grid, 0.05, rng);
    const Eigen::MatrixXd m = linearize(y, v).m;
    const Eigen::MatrixXd jac = oracle::numeric_jacobian(y.y, v.bus(), 1e-6);
    const double rel = (m - jac).norm() / jac.norm();

    const Eigen::VectorXcd bus = v.bus();
    const Eigen::VectorXcd s0 = oracle::injections(y.y, bus);
    std::normal_distribution<double> g;
    Eigen::VectorXcd dir(bus.size());
    for (Eigen::Index i = 0; i < dir.size(); ++i) dir(i) = Complex(g(rng), g(rng));
    dir *= 1e-2 / dir.norm();
    auto remainder = [&](double scale) {
        const Eigen::VectorXcd dv = scale * dir;
        Eigen::VectorXd rect(2 * dv.size());
        rect << dv.real(), dv.imag();
        const Eigen::VectorXcd ds = oracle::injections(y.y, bus + dv) - s0;
        Eigen::VectorXd exact(2 * ds.size());
        exact << ds.real(), ds.imag();
        return (exact - m * rect).norm();
    };
    const double ratio = remainder(1.0) / remainder(0.5);
    const double wall = seconds_since(t0);
    return {rel < 1e-6 && ratio >= 3.5 && wall < 1.0,
            fmt::format("relative Jacobian error {:.2e} (< 1e-6); remainder ratio on halving {:.3f} (>= 3.5); "
                        "{:.3f} s (< 1 s)",
                        rel, ratio, wall)};
}

Verdict powerflow_check() {
    std::mt19937_64 rng(777);
    const GridModel grid = fixture::reference_grid();
    const auto zero = PowerInjection::zeros(grid.layout);
    std::uniform_real_distribution<double> tap_draw(0.95, 1.05);
    double worst = 0.0;
    int failures = 0;
    for (int k = 0; k < 100; ++k) {
        const auto loads = fixture::random_loads(grid, 0.15, rng);
        const TapVector tap({tap_draw(rng), tap_draw(rng), tap_draw(rng)});
        try {
            const auto sol = solve_powerflow(grid, loads, zero, tap, grid.source_voltage);
            worst = std::max(worst, oracle::powerflow_residual(grid, loads, zero, tap, sol.state));
        } catch (const std::exception&) {
            ++failures;
        }
    }

    // Two-bus feeder: z conj(S) = |V|^2 - conj(V) with V0 = 1 has the closed-form high-voltage root.
    double two_bus = 0.0;
    for (Complex y : {Complex(10.0, 0.0), Complex(4.0, -8.0), Complex(20.0, -30.0)}) {
        for (Complex load : {Complex(0.2, 0.0), Complex(0.4, 0.15), Complex(0.8, 0.3)}) {
            const GridModel g2 = fixture::chain({y});
            PowerInjection l2 = PowerInjection::zeros(g2.layout);
            l2.nodes(0) = -load;
            const auto sol = solve_powerflow(g2, l2, PowerInjection::zeros(g2.layout), TapVector{}, g2.source_voltage);
            const Complex w = std::conj(-load) / y;
            const double f = w.imag();
            const double e = 0.5 + std::sqrt(0.25 + w.real() - f * f);
            two_bus = std::max(two_bus, std::abs(sol.state.nodes(0) - Complex(e, f)));
        }
    }
    return {failures == 0 && worst < 1e-10 && two_bus < 1e-10,
            fmt::format("100 random load draws: {} failures, max mismatch {:.2e} p.u. (< 1e-10); two-bus closed form "
                        "max error {:.2e} (< 1e-10)",
                        failures, worst, two_bus)};
}

Verdict sufficiency_check() {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(4242);
    const auto spec = ChanceSpec::from_beta(0.95, 0.95, 1.05);
    const std::size_t draws = 100000;
    const double threshold = 0.95 - 3.0 * std::sqrt(0.95 * 0.05 / static_cast<double>(draws));
    int instances = 0;
    int below = 0;
    double worst = 1.0;
    for (int attempt = 0; instances < 50 && attempt < 500; ++attempt) {
        const auto in = fixture::near_boundary(rng, spec, 6);
        if (in.dv.size() == 0) continue;
        const auto set = tighten_constraints(in.est, spec);
        if (!check_corner_sufficiency(in.dv, set, spec)) continue;
        const Eigen::VectorXd p =
            oracle::band_probability(in.est.v_rect + in.dv, in.est.cov, spec.v_min(), spec.v_max(), draws, 10000 + attempt);
        worst = std::min(worst, p.minCoeff());
        for (Eigen::Index i = 0; i < p.size(); ++i) below += p(i) < threshold;
        ++instances;
    }
    const double wall = seconds_since(t0);
    return {instances == 50 && below == 0 && wall < 120.0,
            fmt::format("{} instances x 6 node-phases on the tightened boundary, 1e5 draws: min band probability "
                        "{:.5f}, {} below {:.5f}; {:.1f} s (< 120 s)",
                        instances, worst, below, threshold, wall)};
}

Verdict inner_region_check() {
    std::mt19937_64 rng(31337);
    std::uniform_real_distribution<double> u(-1.2, 1.2);
    std::uniform_real_distribution<double> ang(-3.14159265358979, 3.14159265358979);
    std::uniform_real_distribution<double> vmin_draw(0.85, 1.0);
    long accepted = 0;
    long bad = 0;
    while (accepted < 1000000) {
        const double v_min = vmin_draw(rng);
        const Eigen::Vector2d n = min_halfplane_coeffs(std::polar(0.9 + 0.2 * std::abs(u(rng)), ang(rng)));
        const Eigen::Vector2d x(u(rng), u(rng));
        if (n.dot(x) < v_min) continue;
        ++accepted;
        if (x.norm() < v_min) ++bad;
    }
    return {bad == 0, fmt::format("{} sampled points inside the half-plane, {} with |V| < v_min (must be 0)", accepted, bad)};
}

Verdict solver_check() {
    int optimal = 0;
    int agree = 0;
    double worst_rel = 0.0;
    double worst_kkt = 0.0;
    std::string failures;
    for (std::uint64_t k = 1; k <= 30; ++k) {
        const AssembledProgram a = fixture::desk_program(k);
        const OpfSolution sol = solve_program(a.program);
        const auto ref = oracle::augmented_lagrangian(a.program);
        if (sol.status != SolveStatus::Optimal || !ref.converged) {
            failures += fmt::format(" #{}:{}/{}", k, to_string(sol.status), ref.converged ? "ok" : "oracle-failed");
            continue;
        }
        ++optimal;
        const double rel = std::abs(sol.objective - ref.objective) / std::max(1.0, std::abs(ref.objective));
        worst_rel = std::max(worst_rel, rel);
        worst_kkt = std::max(worst_kkt, sol.kkt.max());
        agree += rel <= 1e-6 && sol.kkt.max() < 1e-6;
    }
    return {agree == 30,
            fmt::format("{}/30 programs optimal and matching the augmented-Lagrangian oracle; max relative objective "
                        "gap {:.2e} (< 1e-6), max KKT residual {:.2e} (< 1e-6){}",
                        agree, worst_rel, worst_kkt, failures.empty() ? "" : ";" + failures)};
}

Verdict case_study_check() {
    const auto t0 = std::chrono::steady_clock::now();
    const Scenario sc = fixture::reference_scenario();
    const Comparison c = compare_cases(sc);
    const double wall = seconds_since(t0);
    const auto& w = c.with_cov_summary;
    const auto& n = c.no_cov_summary;
    const bool setup = sc.horizon == 96 && sc.beta == 0.95 && sc.v_min == 0.95 && sc.v_max == 1.05 &&
                       sc.grid.transformer && sc.grid.transformer->tap_min == 0.9 && sc.grid.transformer->tap_max == 1.1;
    const bool pass = setup && w.violations == 0 && n.violations >= 1 && w.taps_within_bounds && n.taps_within_bounds &&
                      w.curtailed_without_active_voltage == 0 && n.curtailed_without_active_voltage == 0 &&
                      wall < 60.0;
    return {pass, fmt::format("case 1: {} violations (must be 0), {} failed steps; case 2: {} violations (>= 1); taps "
                              "in bounds: {}/{}; curtailed steps without an active voltage limit: {}/{} "
                              "(of {}/{} curtailed); {:.1f} s (< 60 s)",
                              w.violations, w.failed_steps, n.violations, w.taps_within_bounds, n.taps_within_bounds,
                              w.curtailed_without_active_voltage, n.curtailed_without_active_voltage,
                              w.curtailed_steps, n.curtailed_steps, wall)};
}

Verdict estimation_check() {
    const auto t0 = std::chrono::steady_clock::now();
    const Scenario sc = fixture::reference_scenario();
    const int t = 52;
    std::size_t dg_count = 0;
    for (const auto& d : sc.dg) dg_count += d.phases.size();
    const Setpoints sp = initial_setpoints(sc.grid, dg_count);
    const auto loads = sc.load_injection(t);
    const auto dg = sc.dg_injection(sc.energy_limits(t), sp);
    const auto truth = solve_powerflow(sc.grid, loads, dg, sp.tap, sp.v_source).state;
    const Eigen::VectorXd x_true = truth.rect();

    const int replays = 500;
    const auto dim = x_true.size();
    Eigen::MatrixXd errors(dim, replays);
    Eigen::MatrixXd reported = Eigen::MatrixXd::Zero(dim, dim);
    for (int r = 0; r < replays; ++r) {
        const auto meas = generate_measurements(sc.grid, truth, loads, dg, sc.measurements, 5000 + r);
        const auto est = estimate_state(sc.grid, meas, sp.tap, sp.v_source);
        errors.col(r) = est.v_rect - x_true;
        reported += est.cov / replays;
    }
    const Eigen::VectorXd mean = errors.rowwise().mean();
    const Eigen::MatrixXd centered = errors.colwise() - mean;
    const Eigen::MatrixXd empirical = centered * centered.transpose() / (replays - 1.0);
    int biased = 0;
    double worst_z = 0.0;
    for (Eigen::Index i = 0; i < dim; ++i) {
        const double stderr_i = std::sqrt(empirical(i, i) / replays);
        const double z = stderr_i > 0.0 ? std::abs(mean(i)) / stderr_i : 0.0;
        worst_z = std::max(worst_z, z);
        biased += z > 3.0;
    }
    const double frob = (empirical - reported).norm() / reported.norm();
    const double wall = seconds_since(t0);
    return {biased == 0 && frob < 0.3 && wall < 120.0,
            fmt::format("500 replays: {} of {} components with |mean error| > 3 stderr (worst {:.2f}); covariance "
                        "Frobenius-relative gap {:.3f} (< 0.30); {:.1f} s (< 120 s)",
                        biased, dim, worst_z, frob, wall)};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Verdict determinism_check(const std::string& cli) {
    const fs::path dir = fs::temp_directory_path() / "gridopf_acceptance_determinism";
    fs::remove_all(dir);
    const std::string scenario = fixture::data_path("reference_scenario.json").string();
    int codes[2];
    for (int k = 0; k < 2; ++k) {
        const std::string cmd = fmt::format("\"{}\" run --scenario \"{}\" --seed 2 --out \"{}\" > /dev/null 2>&1", cli,
                                            scenario, (dir / std::to_string(k)).string());
        codes[k] = std::system(cmd.c_str());
    }
    const std::string a = slurp(dir / "0" / "steps.csv");
    const std::string b = slurp(dir / "1" / "steps.csv");
    const bool pass = codes[0] == 0 && codes[1] == 0 && !a.empty() && a == b;
    return {pass, fmt::format("two runs with seed 2: exit codes {}/{}, steps.csv {} bytes, byte-identical: {}", codes[0],
                              codes[1], a.size(), a == b && !a.empty())};
}

}  // namespace

int main(int argc, char** argv) {
    const std::string cli = argc > 1 ? argv[1] : GRIDOPF_CLI;
    const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria = {
        {"alpha computation", alpha_check},
        {"linearization fidelity", linearization_check},
        {"exact power flow", powerflow_check},
        {"corner sufficiency soundness", sufficiency_check},
        {"inner-region soundness", inner_region_check},
        {"solver correctness", solver_check},
        {"closed-loop case study", case_study_check},
        {"state estimation sanity", estimation_check},
        {"determinism", [&] { return determinism_check(cli); }},
    };
    int failed = 0;
    for (std::size_t k = 0; k < criteria.size(); ++k) {
        Verdict v;
        try {
            v = criteria[k].second();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        failed += !v.pass;
        fmt::print("[{}] {}. {}: {}\n", v.pass ? "PASS" : "FAIL", k + 1, criteria[k].first, v.detail);
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
