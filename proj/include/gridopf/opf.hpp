#pragma once

#include <cstddef>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "gridopf/chance_constraints.hpp"
#include "gridopf/convex_program.hpp"
#include "gridopf/grid_model.hpp"
#include "gridopf/powerflow.hpp"
#include "gridopf/state_estimation.hpp"

namespace gridopf {

/// Operating box of one controllable generator node-phase at the current step.
struct EnergyLimit {
    std::size_t node = 0;  // full layout index
    double p_min = 0.0;
    double p_max = 0.0;
    double q_min = 0.0;
    double q_max = 0.0;
    double s_max = 0.0;
};

/// Absolute control state carried between steps. `p_dg`/`q_dg` follow the
/// order of the energy limit list.
struct Setpoints {
    TapVector tap;
    TapVector tap_continuous;
    Eigen::VectorXd p_dg;
    Eigen::VectorXd q_dg;
    Eigen::VectorXcd v_source;
};

Setpoints initial_setpoints(const GridModel& grid, std::size_t dg_count);

struct OpfOptions {
    double q_weight = 1.0;
    bool free_source = false;
    bool soft_voltage = false;
    double soft_weight = 1e3;
    /// Generators with availability below this are held at zero output.
    double min_available = 1e-9;
};

/// A program together with the variable offsets needed to read it back.
struct AssembledProgram {
    ConvexProgram program;
    std::vector<EnergyLimit> limits;
    std::vector<Phase> tf_phases;
    Eigen::Index dv_re = 0;
    Eigen::Index dv_im = 0;
    Eigen::Index dp = 0;
    Eigen::Index dq = 0;
    Eigen::Index dtap = 0;
    Eigen::Index slack = -1;
    std::size_t full_size = 0;
    std::size_t source_count = 0;
    double tap_min = 1.0;
    double tap_max = 1.0;
    double tap_step = 0.0;
    bool soft = false;

    /// dV on the non-source node-phases, stacked [Re; Im] (length 2N).
    Eigen::VectorXd delta_v_nodes(const Eigen::VectorXd& x) const;
};

AssembledProgram assemble_program(const SensitivityMatrix& m, const EstimationResult& est,
                                  const TightenedConstraintSet& tightened, const GridModel& grid,
                                  const std::vector<EnergyLimit>& limits, const Setpoints& prev,
                                  const OpfOptions& options = {});

struct ThermalLimit {
    std::size_t branch = 0;
    double i_max = std::numeric_limits<double>::infinity();
};

/// Per-phase |w (V_from - V_to)|^2 <= i_max^2 evaluated at the estimate plus dV.
void add_thermal_constraints(AssembledProgram& assembled, const GridModel& grid, const EstimationResult& est,
                             const Setpoints& prev, const std::vector<ThermalLimit>& limits);

/// Nearest multiple of `step`, exact midpoints toward 1, then clamped.
double round_tap(double a, double step, double lo, double hi);
TapVector round_taps(const TapVector& a, double step, double lo, double hi);

Setpoints extract_setpoints(const OpfSolution& sol, const AssembledProgram& assembled, const Setpoints& prev);

/// True if some voltage constraint carries a multiplier above `threshold`.
bool voltage_constraint_active(const OpfSolution& sol, const AssembledProgram& assembled, double threshold = 1e-6);

}  // namespace gridopf
