#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <json.hpp>

#include "fixtures.hpp"
#include "gridopf/errors.hpp"
#include "gridopf/harness.hpp"
#include "gridopf/report.hpp"

using namespace gridopf;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("gridopf_tests_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string("\"") + GRIDOPF_CLI + "\" " + args + " > /dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

// Sensors and forecasts precise enough that the tightening term vanishes.
Scenario quiet(Scenario sc) {
    for (auto& p : sc.measurements.placements) p.sigma = 1e-7;
    sc.measurements.pseudo_sigma_frac = 1e-7;
    sc.measurements.pseudo_sigma_floor = 1e-8;
    return sc;
}

nlohmann::json reference_json() { return nlohmann::json::parse(slurp(fixture::data_path("reference_scenario.json"))); }

}  // namespace

TEST_CASE("scenario loading") {
    const Scenario sc = fixture::reference_scenario();
    CHECK(sc.horizon == 96);
    CHECK(sc.step_minutes == 15.0);
    CHECK(sc.beta == 0.95);

    ScenarioOverrides o;
    o.beta = 0.99;
    o.horizon = 12;
    o.case_mode = CaseMode::NoCovariance;
    const Scenario over = load_inputs(fixture::data_path("reference_scenario.json"), o);
    CHECK(over.beta == 0.99);
    CHECK(over.horizon == 12);
    CHECK(over.case_mode == CaseMode::NoCovariance);

    SUBCASE("generator on a missing bus names the bus") {
        auto j = reference_json();
        j["dg"][0]["bus"] = "bus99";
        try {
            parse_scenario(j.dump(), "scenario.json", sc.grid);
            FAIL("expected a configuration error");
        } catch (const ConfigError& e) {
            CHECK(std::string(e.what()).find("bus99") != std::string::npos);
        }
    }
    SUBCASE("short profile is rejected") {
        auto j = reference_json();
        j["loads"][0]["p"].erase(j["loads"][0]["p"].size() - 1);
        CHECK_THROWS_AS(parse_scenario(j.dump(), "scenario.json", sc.grid), ConfigError);
    }
    SUBCASE("probability outside (0, 1) is rejected") {
        auto j = reference_json();
        j["beta"] = 1.0;
        CHECK_THROWS_AS(parse_scenario(j.dump(), "scenario.json", sc.grid), ConfigError);
    }
}

TEST_CASE("without uncertainty both cases act alike") {
    Scenario sc = quiet(fixture::reference_scenario());
    sc.horizon = 8;
    const Comparison c = compare_cases(sc);
    CHECK(c.with_cov_summary.failed_steps == 0);
    CHECK(c.no_cov_summary.failed_steps == 0);
    CHECK(c.with_cov_summary.violations == c.no_cov_summary.violations);
    for (std::size_t t = 0; t < c.with_cov.size(); ++t) {
        const auto& a = c.with_cov[t].applied;
        const auto& b = c.no_cov[t].applied;
        CHECK((a.p_dg - b.p_dg).cwiseAbs().maxCoeff() < 1e-6);
        CHECK((a.q_dg - b.q_dg).cwiseAbs().maxCoeff() < 1e-6);
        for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(a.tap.values()[k] - b.tap.values()[k]) < 1e-6);
    }
}

TEST_CASE("no availability keeps generators at zero") {
    Scenario sc = fixture::reference_scenario();
    sc.horizon = 6;
    for (auto& d : sc.dg) std::fill(d.s_max.begin(), d.s_max.end(), 0.0);
    const auto records = run_scenario(sc);
    for (const auto& r : records) {
        CHECK(r.ok);
        CHECK(r.applied.p_dg.cwiseAbs().maxCoeff() == 0.0);
        CHECK(r.applied.q_dg.cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("carried setpoints stay inside their bounds") {
    Scenario sc = fixture::reference_scenario();
    sc.horizon = 24;
    const auto records = run_scenario(sc);
    for (const auto& r : records) {
        for (std::size_t g = 0; g < r.limits.size(); ++g) {
            const auto gi = static_cast<Eigen::Index>(g);
            const auto& lim = r.limits[g];
            CHECK(r.applied.p_dg(gi) >= lim.p_min - 1e-6);
            CHECK(r.applied.p_dg(gi) <= lim.p_max + 1e-6);
            CHECK(r.applied.q_dg(gi) >= lim.q_min - 1e-6);
            CHECK(r.applied.q_dg(gi) <= lim.q_max + 1e-6);
            CHECK(std::hypot(r.applied.p_dg(gi), r.applied.q_dg(gi)) <= lim.s_max + 1e-6);
        }
        for (double a : r.applied.tap.values()) {
            CHECK(a >= 0.9);
            CHECK(a <= 1.1);
        }
    }
}

TEST_CASE("noisier forecasts hurt the case that ignores them") {
    Scenario sc = fixture::reference_scenario();
    sc.measurements.pseudo_sigma_frac = 0.8;
    sc.horizon = 48;
    const Comparison c = compare_cases(sc);
    CHECK(c.no_cov_summary.violations > c.with_cov_summary.violations);
}

TEST_CASE("outputs") {
    Scenario sc = fixture::reference_scenario();
    sc.horizon = 5;
    const auto records = run_scenario(sc);
    const fs::path dir = scratch("outputs");
    emit_outputs(sc, records, dir);

    const std::string csv = slurp(dir / "steps.csv");
    std::istringstream lines(csv);
    std::string header;
    std::getline(lines, header);
    CHECK(header == kStepsHeader);
    std::size_t rows = 0;
    for (std::string line; std::getline(lines, line);) ++rows;
    CHECK(rows == 5 * sc.grid.layout.node_count());

    const auto summary = nlohmann::json::parse(slurp(dir / "summary.json"));
    CHECK(summary["violations"].get<int>() == summarize(sc, records).violations);

    for (const char* name : {"voltages.svg", "taps.svg", "energy.svg"}) {
        CAPTURE(name);
        boost::property_tree::ptree tree;
        REQUIRE_NOTHROW(boost::property_tree::read_xml((dir / name).string(), tree));
        std::size_t polylines = 0;
        for (const auto& child : tree.get_child("svg")) polylines += child.first == "polyline";
        const std::size_t expected = std::string(name) == "voltages.svg" ? sc.grid.layout.node_count()
                                     : std::string(name) == "taps.svg"   ? sc.grid.transformer_phases().size()
                                                                         : 2;
        CHECK(polylines == expected);
    }
}

TEST_CASE("summary agrees with the step records") {
    Scenario sc = quiet(fixture::reference_scenario());
    sc.horizon = 4;
    const auto records = run_scenario(sc);
    int total = 0;
    double worst = 0.0;
    for (const auto& r : records) {
        total += r.violations;
        worst = std::max(worst, r.worst_excursion);
    }
    const auto summary = nlohmann::json::parse(summary_json(sc, summarize(sc, records)));
    CHECK(summary["violations"].get<int>() == total);
    // With no uncertainty left only tap rounding and linearization error remain.
    CHECK(worst <= sc.grid.transformer->tap_step);
}

TEST_CASE("command line") {
    const std::string scenario = fixture::data_path("reference_scenario.json").string();
    const fs::path dir = scratch("cli");

    SUBCASE("same seed, same bytes") {
        const std::string common = "run --scenario \"" + scenario + "\" --horizon 6 --seed 17 --out ";
        REQUIRE(run_cli(common + "\"" + (dir / "a").string() + "\"") == 0);
        REQUIRE(run_cli(common + "\"" + (dir / "b").string() + "\"") == 0);
        const std::string a = slurp(dir / "a" / "steps.csv");
        CHECK(!a.empty());
        CHECK(a == slurp(dir / "b" / "steps.csv"));
    }
    SUBCASE("configuration errors exit with 2") {
        CHECK(run_cli("run --scenario \"" + (dir / "missing.json").string() + "\" --out \"" + dir.string() + "\"") == 2);
        CHECK(run_cli("alpha --beta 1.5") == 2);
        CHECK(run_cli("run --scenario \"" + scenario + "\" --case sideways --out \"" + dir.string() + "\"") == 2);
        CHECK(run_cli("frobnicate") == 2);
    }
    SUBCASE("alpha") {
        const std::string out = (dir / "alpha.txt").string();
        const std::string cmd = std::string("\"") + GRIDOPF_CLI + "\" alpha --beta 0.95 > \"" + out + "\"";
        REQUIRE(std::system(cmd.c_str()) == 0);
        CHECK(slurp(out) == "2.497705\n");
    }
}
