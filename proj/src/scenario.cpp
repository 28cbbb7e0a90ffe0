#include "gridopf/scenario.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "gridopf/errors.hpp"
#include "json_reader.hpp"

namespace gridopf {

using detail::Reader;
using nlohmann::json;

std::string to_string(CaseMode mode) { return mode == CaseMode::WithCovariance ? "with-cov" : "no-cov"; }

CaseMode case_mode_from_string(const std::string& name) {
    if (name == "with-cov") return CaseMode::WithCovariance;
    if (name == "no-cov") return CaseMode::NoCovariance;
    throw ConfigError("unknown case '" + name + "' (expected with-cov or no-cov)");
}

PowerInjection Scenario::load_injection(int t) const {
    PowerInjection inj = PowerInjection::zeros(grid.layout);
    const std::size_t s = grid.layout.source_count();
    for (const auto& l : loads) {
        const auto k = static_cast<std::size_t>(t);
        const std::size_t row = grid.layout.index(l.bus, l.phase) - s;
        inj.nodes(static_cast<Eigen::Index>(row)) -= Complex(l.p.at(k), l.q.at(k));
    }
    return inj;
}

std::vector<EnergyLimit> Scenario::energy_limits(int t) const {
    std::vector<EnergyLimit> out;
    for (const auto& d : dg) {
        const double s_max = d.s_max.at(static_cast<std::size_t>(t));
        for (Phase p : d.phases.phases()) {
            EnergyLimit lim;
            lim.node = grid.layout.index(d.bus, p);
            lim.s_max = s_max;
            lim.p_max = s_max;
            lim.p_min = std::min(d.p_min, s_max);
            lim.q_max = d.q_max_frac * s_max;
            lim.q_min = -lim.q_max;
            out.push_back(lim);
        }
    }
    return out;
}

PowerInjection Scenario::dg_injection(const std::vector<EnergyLimit>& limits, const Setpoints& sp) const {
    PowerInjection inj = PowerInjection::zeros(grid.layout);
    const std::size_t s = grid.layout.source_count();
    for (std::size_t g = 0; g < limits.size(); ++g) {
        const auto gi = static_cast<Eigen::Index>(g);
        inj.nodes(static_cast<Eigen::Index>(limits[g].node - s)) += Complex(sp.p_dg(gi), sp.q_dg(gi));
    }
    return inj;
}

OpfOptions Scenario::opf_options() const {
    OpfOptions o;
    o.q_weight = q_weight;
    o.free_source = free_source;
    return o;
}

namespace {

bool boolean(const Reader& r, const json& v, const std::string& field) {
    if (!v.is_boolean()) r.fail(field, "expected true or false");
    return v.get<bool>();
}

std::vector<double> series(const Reader& r, const json& v, const std::string& field) {
    if (!v.is_array()) r.fail(field, "expected an array of numbers");
    std::vector<double> out;
    out.reserve(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double x = r.number(v[i], field + "[" + std::to_string(i) + "]");
        if (!std::isfinite(x)) r.fail(field, "non-finite value");
        out.push_back(x);
    }
    return out;
}

}  // namespace

Scenario parse_scenario(const std::string& json_text, const std::string& origin, const GridModel& grid,
                        const ScenarioOverrides& overrides) {
    Reader r{origin};
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(origin + ": invalid JSON: " + e.what());
    }
    if (!doc.is_object()) r.fail("$", "expected an object");

    Scenario sc;
    sc.grid = grid;
    auto opt_number = [&](const char* key, double fallback) {
        auto it = doc.find(key);
        return it == doc.end() ? fallback : r.number(*it, key);
    };
    const double horizon = r.number(r.get(doc, "horizon", "$"), "horizon");
    if (horizon != std::floor(horizon) || horizon < 1) r.fail("horizon", "expected a positive integer");
    sc.horizon = static_cast<int>(horizon);
    sc.step_minutes = opt_number("step_minutes", 15.0);
    if (!(sc.step_minutes > 0.0)) r.fail("step_minutes", "must be positive");
    if (auto it = doc.find("seed"); it != doc.end()) {
        if (!it->is_number_unsigned()) r.fail("seed", "expected a non-negative integer");
        sc.seed = it->get<std::uint64_t>();
    }
    if (auto it = doc.find("case"); it != doc.end()) {
        if (!it->is_string()) r.fail("case", "expected with-cov or no-cov");
        try {
            sc.case_mode = case_mode_from_string(it->get<std::string>());
        } catch (const ConfigError& e) {
            r.fail("case", e.what());
        }
    }
    sc.beta = opt_number("beta", 0.95);
    sc.v_min = opt_number("v_min", 0.95);
    sc.v_max = opt_number("v_max", 1.05);
    sc.q_weight = opt_number("q_weight", 1.0);
    if (auto it = doc.find("free_source"); it != doc.end()) sc.free_source = boolean(r, *it, "free_source");
    if (auto it = doc.find("soft_mode"); it != doc.end()) sc.soft_mode = boolean(r, *it, "soft_mode");

    if (overrides.horizon) sc.horizon = *overrides.horizon;
    if (overrides.beta) sc.beta = *overrides.beta;
    if (overrides.case_mode) sc.case_mode = *overrides.case_mode;
    if (overrides.seed) sc.seed = *overrides.seed;
    if (sc.horizon < 1) r.fail("horizon", "must be at least 1");
    if (!(sc.beta > 0.0 && sc.beta < 1.0)) r.fail("beta", "must lie in (0, 1)");
    if (!(sc.v_min > 0.0 && sc.v_min < sc.v_max)) r.fail("v_min/v_max", "expected 0 < v_min < v_max");

    const auto hz = static_cast<std::size_t>(sc.horizon);
    auto bus_ref = [&](const json& v, const std::string& field) {
        const std::string id = r.id(v, field);
        auto idx = grid.find_bus(id);
        if (!idx) r.fail(field, "unknown bus '" + id + "'");
        return *idx;
    };
    auto is_tf_bus = [&](std::size_t b) {
        return grid.transformer && (b == grid.transformer->primary || b == grid.transformer->secondary);
    };

    if (auto it = doc.find("loads"); it != doc.end()) {
        if (!it->is_array()) r.fail("loads", "expected an array");
        std::vector<std::pair<std::size_t, Phase>> seen;
        for (std::size_t i = 0; i < it->size(); ++i) {
            const auto& e = (*it)[i];
            const std::string f = "loads[" + std::to_string(i) + "]";
            LoadProfile l;
            l.bus = bus_ref(r.get(e, "bus", f), f + ".bus");
            const PhaseSet ph = r.phases(r.get(e, "phase", f), f + ".phase");
            if (ph.size() != 1) r.fail(f + ".phase", "expected a single phase");
            l.phase = ph.phases().front();
            if (!grid.buses[l.bus].phases.contains(l.phase)) r.fail(f + ".phase", "bus does not carry this phase");
            if (l.bus == grid.source_bus) r.fail(f + ".bus", "loads cannot sit on the source bus");
            if (is_tf_bus(l.bus)) r.fail(f + ".bus", "loads cannot sit on a transformer terminal");
            for (const auto& s : seen) {
                if (s.first == l.bus && s.second == l.phase) r.fail(f, "duplicate load node-phase");
            }
            seen.emplace_back(l.bus, l.phase);
            l.p = series(r, r.get(e, "p", f), f + ".p");
            l.q = series(r, r.get(e, "q", f), f + ".q");
            if (l.p.size() < hz || l.q.size() < hz) r.fail(f, "profile shorter than the horizon");
            sc.loads.push_back(std::move(l));
        }
    }

    if (auto it = doc.find("dg"); it != doc.end()) {
        if (!it->is_array()) r.fail("dg", "expected an array");
        for (std::size_t i = 0; i < it->size(); ++i) {
            const auto& e = (*it)[i];
            const std::string f = "dg[" + std::to_string(i) + "]";
            DgProfile d;
            d.bus = bus_ref(r.get(e, "bus", f), f + ".bus");
            d.phases = r.phases(r.get(e, "phases", f), f + ".phases");
            if (d.phases.empty() || !((d.phases & grid.buses[d.bus].phases) == d.phases)) {
                r.fail(f + ".phases", "bus '" + grid.buses[d.bus].id + "' does not carry these phases");
            }
            if (d.bus == grid.source_bus || is_tf_bus(d.bus)) {
                r.fail(f + ".bus", "generators cannot sit on the source or a transformer terminal");
            }
            if (auto k = e.find("kind"); k != e.end()) {
                if (!k->is_string()) r.fail(f + ".kind", "expected a string");
                d.kind = k->get<std::string>();
            }
            d.s_max = series(r, r.get(e, "s_max", f), f + ".s_max");
            if (d.s_max.size() < hz) r.fail(f + ".s_max", "profile shorter than the horizon");
            for (double v : d.s_max) {
                if (v < 0.0) r.fail(f + ".s_max", "availability must be non-negative");
            }
            if (auto k = e.find("p_min"); k != e.end()) d.p_min = r.number(*k, f + ".p_min");
            if (auto k = e.find("q_max_frac"); k != e.end()) d.q_max_frac = r.number(*k, f + ".q_max_frac");
            if (d.p_min < 0.0) r.fail(f + ".p_min", "must be non-negative");
            if (d.q_max_frac < 0.0) r.fail(f + ".q_max_frac", "must be non-negative");
            for (const auto& other : sc.dg) {
                if (other.bus == d.bus && !(other.phases & d.phases).empty()) r.fail(f, "overlaps another generator");
            }
            sc.dg.push_back(std::move(d));
        }
    }

    if (auto it = doc.find("measurements"); it != doc.end()) {
        if (!it->is_array()) r.fail("measurements", "expected an array");
        for (std::size_t i = 0; i < it->size(); ++i) {
            const auto& e = (*it)[i];
            const std::string f = "measurements[" + std::to_string(i) + "]";
            Placement pl;
            const auto& kind = r.get(e, "kind", f);
            if (!kind.is_string()) r.fail(f + ".kind", "expected a string");
            try {
                pl.kind = measurement_kind_from_string(kind.get<std::string>());
            } catch (const std::exception& ex) {
                r.fail(f + ".kind", ex.what());
            }
            if (pl.kind == MeasurementKind::LoadPseudo) r.fail(f + ".kind", "pseudo-measurements are generated");
            if (pl.kind == MeasurementKind::BranchCurrentPhasor) {
                const auto& br = r.get(e, "branch", f);
                if (!br.is_array() || br.size() != 2) r.fail(f + ".branch", "expected [from, to]");
                const std::size_t from = bus_ref(br[0], f + ".branch[0]");
                const std::size_t to = bus_ref(br[1], f + ".branch[1]");
                auto idx = grid.find_branch(from, to);
                if (!idx) r.fail(f + ".branch", "no such branch");
                if (grid.branches[*idx].from != from) r.fail(f + ".branch", "branch is listed in the other direction");
                pl.element = *idx;
            } else {
                pl.element = bus_ref(r.get(e, "bus", f), f + ".bus");
            }
            if (auto k = e.find("phases"); k != e.end()) pl.phases = r.phases(*k, f + ".phases");
            pl.sigma = default_sigma(pl.kind);
            if (auto k = e.find("sigma"); k != e.end()) pl.sigma = r.number(*k, f + ".sigma");
            if (pl.sigma < 0.0) r.fail(f + ".sigma", "must be non-negative");
            sc.measurements.placements.push_back(pl);
        }
    }
    sc.measurements.pseudo_sigma_frac = opt_number("pseudo_sigma_frac", sc.measurements.pseudo_sigma_frac);
    sc.measurements.pseudo_sigma_floor = opt_number("pseudo_sigma_floor", sc.measurements.pseudo_sigma_floor);
    if (sc.measurements.pseudo_sigma_frac < 0.0) r.fail("pseudo_sigma_frac", "must be non-negative");
    if (!(sc.measurements.pseudo_sigma_floor > 0.0)) r.fail("pseudo_sigma_floor", "must be positive");
    if (auto it = doc.find("forecast_noise"); it != doc.end()) {
        const std::string v = it->is_string() ? it->get<std::string>() : "";
        if (v == "gaussian") {
            sc.measurements.forecast_noise = ForecastNoise::Gaussian;
        } else if (v == "uniform") {
            sc.measurements.forecast_noise = ForecastNoise::Uniform;
        } else {
            r.fail("forecast_noise", "expected gaussian or uniform");
        }
    }

    if (auto it = doc.find("thermal"); it != doc.end()) {
        if (!it->is_array()) r.fail("thermal", "expected an array");
        for (std::size_t i = 0; i < it->size(); ++i) {
            const auto& e = (*it)[i];
            const std::string f = "thermal[" + std::to_string(i) + "]";
            const auto& br = r.get(e, "branch", f);
            if (!br.is_array() || br.size() != 2) r.fail(f + ".branch", "expected [from, to]");
            auto idx = grid.find_branch(bus_ref(br[0], f + ".branch[0]"), bus_ref(br[1], f + ".branch[1]"));
            if (!idx) r.fail(f + ".branch", "no such branch");
            const double i_max = r.number(r.get(e, "i_max", f), f + ".i_max");
            if (!(i_max > 0.0)) r.fail(f + ".i_max", "must be positive");
            sc.thermal.push_back({*idx, i_max});
        }
    }
    return sc;
}

Scenario load_inputs(const std::filesystem::path& scenario_path, const ScenarioOverrides& overrides) {
    std::ifstream in(scenario_path);
    if (!in) throw ConfigError(scenario_path.string() + ": cannot open scenario file");
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string text = ss.str();

    std::filesystem::path grid_path;
    if (overrides.grid) {
        grid_path = *overrides.grid;
    } else {
        json doc;
        try {
            doc = json::parse(text);
        } catch (const json::parse_error& e) {
            throw ConfigError(scenario_path.string() + ": invalid JSON: " + e.what());
        }
        auto it = doc.find("grid");
        if (it == doc.end() || !it->is_string()) {
            throw ConfigError(scenario_path.string() + ": grid: missing grid file reference");
        }
        grid_path = it->get<std::string>();
        if (grid_path.is_relative()) grid_path = scenario_path.parent_path() / grid_path;
    }
    const GridModel grid = load_grid(grid_path);
    Scenario sc = parse_scenario(text, scenario_path.string(), grid, overrides);
    sc.grid_path = grid_path;
    return sc;
}

}  // namespace gridopf
