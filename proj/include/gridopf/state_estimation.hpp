#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gridopf/grid_model.hpp"
#include "gridopf/powerflow.hpp"

namespace gridopf {

enum class MeasurementKind {
    VoltagePhasor,
    VoltageMagnitude,
    NodeCurrentPhasor,
    NodeCurrentMagnitude,
    BranchCurrentPhasor,
    LoadPseudo,
};

std::string to_string(MeasurementKind kind);
MeasurementKind measurement_kind_from_string(const std::string& name);
bool is_phasor(MeasurementKind kind);

/// One sensor reading. `element` is a bus index, or a branch index for
/// BranchCurrentPhasor (current flowing from the branch's `from` bus).
/// Magnitude readings keep their value in the real part. LoadPseudo values
/// are net complex injections (forecast load plus known generation).
struct Measurement {
    MeasurementKind kind = MeasurementKind::VoltagePhasor;
    std::size_t element = 0;
    Phase phase = Phase::A;
    Complex value;
    double sigma = 0.0;
};

struct MeasurementSet {
    std::vector<Measurement> records;
};

struct Placement {
    MeasurementKind kind = MeasurementKind::VoltagePhasor;
    std::size_t element = 0;
    PhaseSet phases = PhaseSet::all();
    double sigma = 0.0;
};

enum class ForecastNoise { Gaussian, Uniform };

struct MeasurementConfig {
    std::vector<Placement> placements;
    double pseudo_sigma_frac = 0.5;
    /// Standard deviation floor for pseudo-measurements, also the accuracy of
    /// the zero-injection knowledge at buses without load.
    double pseudo_sigma_floor = 1e-4;
    ForecastNoise forecast_noise = ForecastNoise::Gaussian;
};

double default_sigma(MeasurementKind kind);

/// Synthesizes sensor readings and load pseudo-measurements from a simulated
/// truth. `loads` and `dg` are injections on the non-source node-phases.
MeasurementSet generate_measurements(const GridModel& grid, const ComplexVoltageState& truth,
                                     const PowerInjection& loads, const PowerInjection& dg,
                                     const MeasurementConfig& config, std::uint64_t seed);

struct EstimationResult {
    Eigen::VectorXcd v_est;   // N
    Eigen::VectorXd v_rect;   // 2N, [Re; Im]
    Eigen::MatrixXd cov;      // 2N x 2N
    int iterations = 0;

    std::size_t size() const { return static_cast<std::size_t>(v_est.size()); }
    double var_re(std::size_t i) const;
    double var_im(std::size_t i) const;
    double sigma_re(std::size_t i) const;
    double sigma_im(std::size_t i) const;
};

struct EstimatorOptions {
    int max_iterations = 200;
    double tolerance = 1e-10;
    /// Stop once the Gauss-Newton decrement (squared step in standard
    /// deviations) drops below this.
    double decrement_tolerance = 1e-10;
    /// Weight of the lossless-transformer virtual measurement.
    double transformer_sigma = 1e-5;
};

/// Weighted-least-squares Gauss-Newton estimate in rectangular coordinates.
/// The source voltage and the tap ratio are treated as known.
EstimationResult estimate_state(const GridModel& grid, const MeasurementSet& meas, const TapVector& tap_prev,
                                const Eigen::VectorXcd& v_source, const EstimatorOptions& options = {});
EstimationResult estimate_state(const GridModel& grid, const MeasurementSet& meas, const TapVector& tap_prev);

/// J * sigma_polar * J^T for (m, theta) -> (m cos theta, m sin theta); both
/// covariances use the stacked [first component; second component] ordering.
Eigen::MatrixXd polar_to_rect_covariance(const Eigen::VectorXd& magnitudes, const Eigen::VectorXd& angles,
                                         const Eigen::MatrixXd& sigma_polar);

}  // namespace gridopf
