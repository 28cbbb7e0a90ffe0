#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gridopf/opf.hpp"
#include "gridopf/scenario.hpp"

namespace gridopf {

/// Everything observed and decided at one control step. Voltage vectors
/// cover the non-source node-phases in layout order.
struct StepRecord {
    int t = 0;
    std::string status;  // optimal, soft, infeasible, max-iter, pf-failed, se-failed, tightening-failed
    bool ok = false;
    Eigen::VectorXcd v_true;
    Eigen::VectorXcd v_est;
    Eigen::VectorXd sigma_re;
    Eigen::VectorXd sigma_im;
    double cov_trace = 0.0;
    Eigen::VectorXcd v_predicted;
    Eigen::VectorXcd v_real;
    Setpoints applied;
    std::vector<EnergyLimit> limits;
    double objective = 0.0;
    double phase1_slack = 0.0;
    int violations = 0;
    double worst_excursion = 0.0;
    bool curtailed = false;
    bool voltage_active = false;
    double predicted_gap = 0.0;
    double wall_seconds = 0.0;
    std::vector<std::string> warnings;
};

struct StepOutcome {
    StepRecord record;
    Setpoints carried;
};

/// Magnitude of the band excursion (0 inside [v_min, v_max]).
double band_excursion(double magnitude, double v_min, double v_max);

/// Seed for randomness drawn at step t (shared by both case modes).
std::uint64_t step_seed(std::uint64_t seed, int t);

/// Clamp carried generator setpoints into the current availability.
Setpoints fit_to_limits(const Setpoints& sp, const std::vector<EnergyLimit>& limits);

/// Called after every solve with the estimate, program and solution.
using SolveObserver =
    std::function<void(int t, const EstimationResult&, const AssembledProgram&, const OpfSolution&)>;

StepOutcome run_timestep(const Scenario& scenario, int t, const Setpoints& carried,
                         const SolveObserver& observer = {});

std::vector<StepRecord> run_scenario(const Scenario& scenario, const SolveObserver& observer = {});

struct CaseSummary {
    CaseMode mode = CaseMode::WithCovariance;
    int steps = 0;
    int failed_steps = 0;
    int soft_steps = 0;
    int violations = 0;
    int steps_with_violation = 0;
    double worst_excursion = 0.0;
    double dg_energy_used = 0.0;       // p.u. hours
    double dg_energy_available = 0.0;  // p.u. hours
    int curtailed_steps = 0;
    int curtailed_without_active_voltage = 0;
    bool taps_within_bounds = true;
    double max_predicted_gap = 0.0;
    std::vector<double> objective;
    double wall_seconds = 0.0;
};

CaseSummary summarize(const Scenario& scenario, const std::vector<StepRecord>& records);

struct Comparison {
    std::vector<StepRecord> with_cov;
    std::vector<StepRecord> no_cov;
    CaseSummary with_cov_summary;
    CaseSummary no_cov_summary;
};

Comparison compare_cases(const Scenario& scenario);

}  // namespace gridopf
