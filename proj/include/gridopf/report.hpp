#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "gridopf/harness.hpp"
#include "gridopf/scenario.hpp"

namespace gridopf {

inline constexpr const char* kStepsHeader =
    "t,node,phase,v_true_mag,v_est_mag,sigma_re,sigma_im,v_real_mag,violation,p_dg,q_dg,tap_a,tap_b,tap_c,objective,"
    "status";

std::string steps_csv(const Scenario& scenario, const std::vector<StepRecord>& records);
std::string summary_json(const Scenario& scenario, const CaseSummary& summary);
std::string comparison_json(const Scenario& scenario, const Comparison& comparison);

std::string voltage_svg(const Scenario& scenario, const std::vector<StepRecord>& records);
std::string tap_svg(const Scenario& scenario, const std::vector<StepRecord>& records);
std::string energy_svg(const Scenario& scenario, const std::vector<StepRecord>& records);

/// steps.csv, summary.json, voltages.svg, taps.svg and energy.svg in `dir`.
void emit_outputs(const Scenario& scenario, const std::vector<StepRecord>& records, const std::filesystem::path& dir);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace gridopf
