#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gridopf/grid_model.hpp"
#include "gridopf/opf.hpp"
#include "gridopf/powerflow.hpp"
#include "gridopf/state_estimation.hpp"

namespace gridopf {

enum class CaseMode { WithCovariance, NoCovariance };

std::string to_string(CaseMode mode);
CaseMode case_mode_from_string(const std::string& name);

/// Consumption at one node-phase, p.u. per step (positive = drawn from the grid).
struct LoadProfile {
    std::size_t bus = 0;
    Phase phase = Phase::A;
    std::vector<double> p;
    std::vector<double> q;
};

/// Renewable unit; `s_max` is the per-phase availability per step.
struct DgProfile {
    std::size_t bus = 0;
    PhaseSet phases;
    std::string kind;
    std::vector<double> s_max;
    double p_min = 0.0;
    double q_max_frac = 0.44;
};

struct Scenario {
    std::filesystem::path grid_path;
    GridModel grid;
    int horizon = 96;
    double step_minutes = 15.0;
    std::uint64_t seed = 1;
    CaseMode case_mode = CaseMode::WithCovariance;
    double beta = 0.95;
    double v_min = 0.95;
    double v_max = 1.05;
    bool free_source = false;
    bool soft_mode = false;
    double q_weight = 1.0;
    std::vector<LoadProfile> loads;
    std::vector<DgProfile> dg;
    MeasurementConfig measurements;
    std::vector<ThermalLimit> thermal;

    /// Load injections (consumption negative) on the non-source node-phases.
    PowerInjection load_injection(int t) const;
    /// One limit per generator node-phase, in file order then a-b-c.
    std::vector<EnergyLimit> energy_limits(int t) const;
    /// Generator injections for the given setpoints.
    PowerInjection dg_injection(const std::vector<EnergyLimit>& limits, const Setpoints& sp) const;
    OpfOptions opf_options() const;
};

struct ScenarioOverrides {
    std::optional<std::filesystem::path> grid;
    std::optional<double> beta;
    std::optional<CaseMode> case_mode;
    std::optional<std::uint64_t> seed;
    std::optional<int> horizon;
};

Scenario parse_scenario(const std::string& json_text, const std::string& origin, const GridModel& grid,
                        const ScenarioOverrides& overrides = {});
Scenario load_inputs(const std::filesystem::path& scenario_path, const ScenarioOverrides& overrides = {});

}  // namespace gridopf
