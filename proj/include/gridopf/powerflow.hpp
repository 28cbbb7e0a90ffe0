#pragma once

#include <Eigen/Dense>

#include "gridopf/grid_model.hpp"

namespace gridopf {

/// Source and non-source node-phase voltages in per-unit, in layout order.
struct ComplexVoltageState {
    Eigen::VectorXcd source;
    Eigen::VectorXcd nodes;

    /// [V_src; V]
    Eigen::VectorXcd bus() const;
    /// [Re V; Im V], length 2N
    Eigen::VectorXd rect() const;
    /// [Re V_src; Re V; Im V_src; Im V]
    Eigen::VectorXd bus_rect() const;
    Eigen::VectorXd magnitudes() const;
    Eigen::VectorXd angles() const;

    static ComplexVoltageState from_bus(const Eigen::VectorXcd& bus, std::size_t source_count);
    static ComplexVoltageState from_rect(const Eigen::VectorXcd& source, const Eigen::VectorXd& rect);

    /// Throws std::invalid_argument on non-finite entries or a collapsed node.
    void validate() const;
};

/// Complex power injected into the network (generation positive).
struct PowerInjection {
    Eigen::VectorXcd source;
    Eigen::VectorXcd nodes;

    static PowerInjection zeros(const NodeLayout& layout);
};

/// Real 2(N+s) x 2(N+s) map from [Re dV_bus; Im dV_bus] to [dP_bus; dQ_bus].
struct SensitivityMatrix {
    Eigen::MatrixXd m;
};

/// S_i = V_i * conj((Y V_bus)_i).
PowerInjection compute_injections(const AdmittanceMatrix& y, const ComplexVoltageState& v);

SensitivityMatrix linearize(const AdmittanceMatrix& y_isol, const ComplexVoltageState& v);

struct PowerflowOptions {
    int max_iterations = 50;
    double tolerance = 1e-10;
    double collapse_floor = 0.3;
};

struct PowerflowSolution {
    ComplexVoltageState state;
    int iterations = 0;
    double mismatch = 0.0;
};

/// Exact three-phase power flow under the isolated-transformer model:
/// Y_isol network equations, V_secondary = diag(tap) V_primary and lossless
/// transfer S_primary + S_secondary = 0. Loads and generation are given as
/// injections (consumption negative) on the non-source node-phases and must
/// vanish on the transformer terminals.
PowerflowSolution solve_powerflow(const GridModel& grid, const PowerInjection& loads,
                                  const PowerInjection& dg, const TapVector& tap,
                                  const Eigen::VectorXcd& v_source, const PowerflowOptions& options = {});

/// Flat start: source phase voltage on every node of that phase, scaled by the
/// tap on the secondary side of the transformer.
ComplexVoltageState flat_start(const GridModel& grid, const TapVector& tap, const Eigen::VectorXcd& v_source);

}  // namespace gridopf
