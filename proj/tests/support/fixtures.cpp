#include "fixtures.hpp"

#include <cmath>
#include <numbers>
#include <optional>
#include <stdexcept>

#include "gridopf/harness.hpp"
#include "gridopf/powerflow.hpp"

namespace fixture {

using namespace gridopf;

std::filesystem::path data_path(const std::string& name) { return std::filesystem::path(GRIDOPF_DATA_DIR) / name; }

GridModel reference_grid() { return load_grid(data_path("feeder25.json")); }

Scenario reference_scenario() { return load_inputs(data_path("reference_scenario.json")); }

GridModel chain(const std::vector<Complex>& y) {
    GridModel g;
    for (std::size_t k = 0; k <= y.size(); ++k) g.buses.push_back({std::to_string(k), PhaseSet::parse("a")});
    for (std::size_t k = 0; k < y.size(); ++k) {
        Branch br;
        br.from = k;
        br.to = k + 1;
        br.y = Eigen::MatrixXcd::Constant(1, 1, y[k]);
        g.branches.push_back(br);
    }
    g.source_bus = 0;
    g.source_voltage = Eigen::VectorXcd::Constant(1, Complex(1.0, 0.0));
    return finalize_grid(std::move(g));
}

GridModel toy_with_transformer() {
    GridModel g;
    for (const char* id : {"src", "1", "tf1", "tf2", "2", "3"}) g.buses.push_back({id, PhaseSet::parse("a")});
    auto line = [&](std::size_t a, std::size_t b, Complex y) {
        Branch br;
        br.from = a;
        br.to = b;
        br.y = Eigen::MatrixXcd::Constant(1, 1, y);
        g.branches.push_back(br);
    };
    line(0, 1, {4.0, -8.0});
    line(1, 2, {5.0, -10.0});
    line(3, 4, {3.0, -6.0});
    line(4, 5, {2.0, -5.0});
    g.source_bus = 0;
    g.source_voltage = Eigen::VectorXcd::Constant(1, Complex(1.0, 0.0));
    g.transformer = TransformerSpec{2, 3, 0.9, 1.1, 0.0125};
    return finalize_grid(std::move(g));
}

ComplexVoltageState perturbed_state(const GridModel& grid, double spread, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-spread, spread);
    ComplexVoltageState v = flat_start(grid, TapVector{}, grid.source_voltage);
    for (Eigen::Index i = 0; i < v.nodes.size(); ++i) v.nodes(i) *= std::polar(1.0 + u(rng), u(rng));
    return v;
}

EstimationResult estimate_from(const Eigen::VectorXcd& v, const Eigen::MatrixXd& cov) {
    EstimationResult est;
    est.v_est = v;
    est.v_rect.resize(2 * v.size());
    est.v_rect << v.real(), v.imag();
    est.cov = cov;
    return est;
}

Eigen::MatrixXd random_covariance(Eigen::Index dim, double scale, std::mt19937_64& rng) {
    std::normal_distribution<double> g;
    Eigen::MatrixXd a(dim, dim);
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = g(rng);
    return scale * scale * a * a.transpose() / static_cast<double>(dim);
}

PowerInjection random_loads(const GridModel& grid, double scale, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, scale);
    PowerInjection p = PowerInjection::zeros(grid.layout);
    for (std::size_t i = grid.layout.source_count(); i < grid.layout.size(); ++i) {
        if (grid.layout.is_transformer_row(i)) continue;
        const double pl = u(rng);
        p.nodes(static_cast<Eigen::Index>(i - grid.layout.source_count())) = -Complex(pl, 0.4 * pl);
    }
    return p;
}

ChanceInstance near_boundary(std::mt19937_64& rng, const ChanceSpec& spec, Eigen::Index n) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Eigen::VectorXcd v(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        v(i) = std::polar(1.0 + 0.01 * u(rng), -2.0 * std::numbers::pi / 3.0 * static_cast<double>(i) + 0.1 * u(rng));
    }
    ChanceInstance in{estimate_from(v, random_covariance(2 * n, 0.004 * (1.0 + 0.5 * u(rng)), rng)), {}};
    const auto set = tighten_constraints(in.est, spec);
    if (!check_corner_sufficiency(Eigen::VectorXd::Zero(2 * n), set, spec)) return in;
    Eigen::VectorXd dir(2 * n);
    for (Eigen::Index k = 0; k < dir.size(); ++k) dir(k) = 0.1 * u(rng);
    double lo = 0.0;
    double hi = 1.0;
    for (int it = 0; it < 60; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (check_corner_sufficiency(mid * dir, set, spec)) lo = mid;
        else hi = mid;
    }
    in.dv = lo * dir;
    return in;
}

AssembledProgram desk_program(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Scenario sc = reference_scenario();
    sc.seed = seed;
    sc.beta = std::uniform_real_distribution<double>(0.9, 0.99)(rng);
    sc.case_mode = rng() % 2 == 0 ? CaseMode::WithCovariance : CaseMode::NoCovariance;
    const int t = static_cast<int>(rng() % static_cast<std::uint64_t>(sc.horizon));
    std::size_t dg_count = 0;
    for (const auto& d : sc.dg) dg_count += d.phases.size();
    std::optional<AssembledProgram> captured;
    run_timestep(sc, t, initial_setpoints(sc.grid, dg_count),
                 [&](int, const EstimationResult&, const AssembledProgram& a, const OpfSolution&) { captured = a; });
    if (!captured) throw std::runtime_error("step produced no program");
    return *captured;
}

}  // namespace fixture
