#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gridopf/chance_constraints.hpp"
#include "gridopf/grid_model.hpp"
#include "gridopf/opf.hpp"
#include "gridopf/scenario.hpp"
#include "gridopf/state_estimation.hpp"

namespace fixture {

using gridopf::Complex;

std::filesystem::path data_path(const std::string& name);

gridopf::GridModel reference_grid();
gridopf::Scenario reference_scenario();

/// Single-phase chain 0-1-...-n with branch admittances y[k] between k and k+1,
/// source 1+0j at bus 0.
gridopf::GridModel chain(const std::vector<Complex>& y);

/// Single-phase src - 1 - tf1 | tf2 - 2 - 3, transformer tf1 -> tf2.
gridopf::GridModel toy_with_transformer();

/// Flat start with each node-phase perturbed by up to `spread` in magnitude and angle.
gridopf::ComplexVoltageState perturbed_state(const gridopf::GridModel& grid, double spread, std::mt19937_64& rng);

gridopf::EstimationResult estimate_from(const Eigen::VectorXcd& v, const Eigen::MatrixXd& cov);

/// Random symmetric PSD matrix with entries of order scale^2.
Eigen::MatrixXd random_covariance(Eigen::Index dim, double scale, std::mt19937_64& rng);

/// Consumption with P uniform in [0, scale] and Q = 0.4 P on every load-capable node-phase.
gridopf::PowerInjection random_loads(const gridopf::GridModel& grid, double scale, std::mt19937_64& rng);

struct ChanceInstance {
    gridopf::EstimationResult est;
    Eigen::VectorXd dv;  // empty if even dV = 0 fails the tightened set
};

/// Random estimate near nominal with a random covariance and a step pushed out
/// to the edge of the tightened region along a random direction.
ChanceInstance near_boundary(std::mt19937_64& rng, const gridopf::ChanceSpec& spec, Eigen::Index n);

/// Program assembled by one closed-loop step of the reference scenario with a
/// randomized seed, step, probability level and case mode.
gridopf::AssembledProgram desk_program(std::uint64_t seed);

}  // namespace fixture
