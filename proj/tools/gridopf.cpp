#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "gridopf/chance_constraints.hpp"
#include "gridopf/errors.hpp"
#include "gridopf/harness.hpp"
#include "gridopf/report.hpp"
#include "gridopf/scenario.hpp"

namespace fs = std::filesystem;
using namespace gridopf;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitSolver = 3;

struct CommonArgs {
    std::string grid;
    std::string scenario;
    std::optional<double> beta;
    std::optional<std::uint64_t> seed;
    std::optional<int> horizon;
};

void add_common(CLI::App* cmd, CommonArgs& a) {
    cmd->add_option("--grid", a.grid, "Grid JSON file (overrides the scenario's reference)");
    cmd->add_option("--scenario", a.scenario, "Scenario JSON file")->required();
    cmd->add_option("--beta", a.beta, "Probability threshold in (0, 1)");
    cmd->add_option("--seed", a.seed, "Random seed");
    cmd->add_option("--horizon", a.horizon, "Number of steps to simulate");
}

ScenarioOverrides overrides(const CommonArgs& a) {
    ScenarioOverrides o;
    if (!a.grid.empty()) o.grid = a.grid;
    o.beta = a.beta;
    o.seed = a.seed;
    o.horizon = a.horizon;
    return o;
}

bool solver_failed(const std::vector<StepRecord>& records) {
    for (const auto& r : records) {
        if (!r.ok) return true;
    }
    return false;
}

void print_summary(const CaseSummary& s) {
    fmt::print("{}: {} steps, {} failed, {} violations (worst {:.4f} p.u.), DG energy {:.4f}/{:.4f} p.u.h, "
               "{} curtailed steps, {:.2f} s\n",
               to_string(s.mode), s.steps, s.failed_steps, s.violations, s.worst_excursion, s.dg_energy_used,
               s.dg_energy_available, s.curtailed_steps, s.wall_seconds);
}

void report_failures(const std::vector<StepRecord>& records) {
    for (const auto& r : records) {
        if (r.ok) continue;
        fmt::print(stderr, "step {}: {}", r.t, r.status);
        for (const auto& w : r.warnings) fmt::print(stderr, "; {}", w);
        fmt::print(stderr, "\n");
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Chance-constrained optimal power flow for unbalanced three-phase feeders"};
    app.require_subcommand(1);

    CommonArgs run_args;
    std::string run_case;
    std::string run_out;
    std::string dump_dir;
    auto* run = app.add_subcommand("run", "Simulate one case over the horizon");
    add_common(run, run_args);
    run->add_option("--case", run_case, "with-cov or no-cov");
    run->add_option("--out", run_out, "Output directory")->required();
    run->add_option("--dump-program", dump_dir, "Directory for per-step program and solution JSON");

    CommonArgs cmp_args;
    std::string cmp_out;
    auto* compare = app.add_subcommand("compare", "Simulate both cases on identical noise");
    add_common(compare, cmp_args);
    compare->add_option("--out", cmp_out, "Output directory")->required();

    double alpha_beta = 0.95;
    auto* alpha = app.add_subcommand("alpha", "Print the tightening multiplier for a probability level");
    alpha->add_option("--beta", alpha_beta, "Probability threshold in (0, 1)")->required();

    CommonArgs ver_args;
    std::size_t samples = 100000;
    auto* verify = app.add_subcommand("verify", "Monte-Carlo check of the chance constraints at every step");
    add_common(verify, ver_args);
    verify->add_option("--samples", samples, "Draws per step")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (*alpha) {
            if (!(alpha_beta > 0.0 && alpha_beta < 1.0)) throw ConfigError("--beta must lie in (0, 1)");
            fmt::print("{:.6f}\n", compute_alpha(alpha_beta));
            return 0;
        }
        if (*run) {
            ScenarioOverrides o = overrides(run_args);
            if (!run_case.empty()) o.case_mode = case_mode_from_string(run_case);
            const Scenario sc = load_inputs(run_args.scenario, o);
            SolveObserver observer;
            if (!dump_dir.empty()) {
                fs::create_directories(dump_dir);
                observer = [&](int t, const EstimationResult&, const AssembledProgram& a, const OpfSolution& s) {
                    write_text(fs::path(dump_dir) / fmt::format("program_{:03d}.json", t), a.program.to_json());
                    write_text(fs::path(dump_dir) / fmt::format("solution_{:03d}.json", t), s.to_json());
                };
            }
            const auto records = run_scenario(sc, observer);
            emit_outputs(sc, records, run_out);
            print_summary(summarize(sc, records));
            report_failures(records);
            return solver_failed(records) ? kExitSolver : 0;
        }
        if (*compare) {
            const Scenario sc = load_inputs(cmp_args.scenario, overrides(cmp_args));
            const Comparison c = compare_cases(sc);
            Scenario with = sc;
            with.case_mode = CaseMode::WithCovariance;
            Scenario without = sc;
            without.case_mode = CaseMode::NoCovariance;
            emit_outputs(with, c.with_cov, fs::path(cmp_out) / "with-cov");
            emit_outputs(without, c.no_cov, fs::path(cmp_out) / "no-cov");
            write_text(fs::path(cmp_out) / "comparison.json", comparison_json(sc, c));
            print_summary(c.with_cov_summary);
            print_summary(c.no_cov_summary);
            report_failures(c.with_cov);
            report_failures(c.no_cov);
            return solver_failed(c.with_cov) || solver_failed(c.no_cov) ? kExitSolver : 0;
        }
        if (*verify) {
            if (samples < 1) throw ConfigError("--samples must be at least 1");
            ScenarioOverrides o = overrides(ver_args);
            o.case_mode = CaseMode::WithCovariance;
            const Scenario sc = load_inputs(ver_args.scenario, o);
            const ChanceSpec spec = ChanceSpec::from_beta(sc.beta, sc.v_min, sc.v_max);
            const double n = static_cast<double>(samples);
            const double threshold = sc.beta - 3.0 * std::sqrt(sc.beta * (1.0 - sc.beta) / n);
            int checked = 0;
            int failed = 0;
            double worst = 1.0;
            const auto records = run_scenario(sc, [&](int t, const EstimationResult& est, const AssembledProgram& a,
                                                      const OpfSolution& s) {
                if (s.status != SolveStatus::Optimal || a.soft) return;
                const Eigen::VectorXd prob =
                    verify_chance_satisfaction(a.delta_v_nodes(s.x), est, spec, samples, step_seed(sc.seed, t) ^ 0x5eedULL);
                ++checked;
                worst = std::min(worst, prob.minCoeff());
                if (prob.minCoeff() < threshold) {
                    ++failed;
                    fmt::print("step {}: minimum band probability {:.5f} below {:.5f}\n", t, prob.minCoeff(), threshold);
                }
            });
            fmt::print("verified {} steps with {} draws each: minimum band probability {:.5f} (threshold {:.5f}), "
                       "{} below threshold\n",
                       checked, samples, worst, threshold, failed);
            report_failures(records);
            if (failed > 0) return 1;
            return solver_failed(records) ? kExitSolver : 0;
        }
    } catch (const ConfigError& e) {
        fmt::print(stderr, "configuration error: {}\n", e.what());
        return kExitConfig;
    } catch (const std::exception& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return kExitSolver;
    }
    return 0;
}
