#include "gridopf/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <fmt/format.h>
#include <json.hpp>

#include "gridopf/errors.hpp"

namespace gridopf {

namespace {

std::string num(double v) { return fmt::format("{:.10g}", v); }

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

struct Series {
    std::string label;
    std::vector<double> values;
};

struct HLine {
    double y;
    std::string label;
};

std::string plot(const std::string& title, const std::string& y_label, const std::vector<Series>& series,
                 const std::vector<HLine>& lines, double step_minutes) {
    constexpr double W = 900, H = 420, L = 70, R = 20, T = 40, B = 50;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    std::size_t len = 1;
    for (const auto& s : series) {
        len = std::max(len, s.values.size());
        for (double v : s.values) {
            if (std::isfinite(v)) {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        }
    }
    for (const auto& l : lines) {
        lo = std::min(lo, l.y);
        hi = std::max(hi, l.y);
    }
    if (!std::isfinite(lo)) {
        lo = 0.0;
        hi = 1.0;
    }
    if (hi - lo < 1e-9) {
        lo -= 0.5;
        hi += 0.5;
    }
    const double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
    const double x_span = std::max<double>(1.0, static_cast<double>(len - 1));
    auto px = [&](double i) { return L + (W - L - R) * i / x_span; };
    auto py = [&](double v) { return T + (H - T - B) * (hi - v) / (hi - lo); };

    std::string out = fmt::format(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">\n", W, H, W, H);
    out += fmt::format("<rect x=\"0\" y=\"0\" width=\"{}\" height=\"{}\" fill=\"white\"/>\n", W, H);
    out += fmt::format("<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\">{}</text>\n", L, title);
    out += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n", L, T,
                       W - L - R, H - T - B);
    for (int k = 0; k <= 4; ++k) {
        const double v = lo + (hi - lo) * k / 4.0;
        out += fmt::format(
            "<text x=\"{}\" y=\"{:.2f}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{:.4g}</text>\n",
            L - 6, py(v) + 4, v);
    }
    for (int k = 0; k <= 4; ++k) {
        const double i = x_span * k / 4.0;
        const double hours = i * step_minutes / 60.0;
        out += fmt::format(
            "<text x=\"{:.2f}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{:.4g} h</text>\n",
            px(i), H - B + 18, hours);
    }
    out += fmt::format("<text x=\"14\" y=\"{:.2f}\" font-family=\"sans-serif\" font-size=\"12\" "
                       "transform=\"rotate(-90 14 {:.2f})\">{}</text>\n",
                       (H) / 2, (H) / 2, y_label);
    for (const auto& l : lines) {
        out += fmt::format("<line x1=\"{}\" y1=\"{:.2f}\" x2=\"{}\" y2=\"{:.2f}\" stroke=\"black\" "
                           "stroke-dasharray=\"6 4\"><title>{}</title></line>\n",
                           L, py(l.y), W - R, py(l.y), l.label);
    }
    for (std::size_t s = 0; s < series.size(); ++s) {
        std::string pts;
        for (std::size_t i = 0; i < series[s].values.size(); ++i) {
            const double v = series[s].values[i];
            if (!std::isfinite(v)) continue;
            if (!pts.empty()) pts += ' ';
            pts += fmt::format("{:.2f},{:.2f}", px(static_cast<double>(i)), py(v));
        }
        out += fmt::format("<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.2\" points=\"{}\"><title>{}</title>"
                           "</polyline>\n",
                           kPalette[s % std::size(kPalette)], pts, series[s].label);
    }
    out += "</svg>\n";
    return out;
}

std::string node_label(const GridModel& grid, std::size_t full) {
    const auto& np = grid.layout.at(full);
    return grid.buses[np.bus].id + "." + phase_letter(np.phase);
}

nlohmann::json summary_object(const Scenario& sc, const CaseSummary& s) {
    nlohmann::json j;
    j["case"] = to_string(s.mode);
    j["beta"] = sc.beta;
    j["v_min"] = sc.v_min;
    j["v_max"] = sc.v_max;
    j["seed"] = sc.seed;
    j["steps"] = s.steps;
    j["failed_steps"] = s.failed_steps;
    j["soft_steps"] = s.soft_steps;
    j["violations"] = s.violations;
    j["steps_with_violation"] = s.steps_with_violation;
    j["worst_excursion"] = s.worst_excursion;
    j["dg_energy_used"] = s.dg_energy_used;
    j["dg_energy_available"] = s.dg_energy_available;
    j["curtailed_steps"] = s.curtailed_steps;
    j["curtailed_without_active_voltage"] = s.curtailed_without_active_voltage;
    j["taps_within_bounds"] = s.taps_within_bounds;
    j["max_predicted_gap"] = s.max_predicted_gap;
    j["objective"] = s.objective;
    return j;
}

}  // namespace

std::string steps_csv(const Scenario& sc, const std::vector<StepRecord>& records) {
    const GridModel& grid = sc.grid;
    const std::size_t s = grid.layout.source_count();
    const std::size_t n = grid.layout.node_count();
    std::string out = std::string(kStepsHeader) + "\n";
    for (const auto& r : records) {
        std::vector<double> p(n, 0.0);
        std::vector<double> q(n, 0.0);
        for (std::size_t g = 0; g < r.limits.size(); ++g) {
            p[r.limits[g].node - s] = r.applied.p_dg(static_cast<Eigen::Index>(g));
            q[r.limits[g].node - s] = r.applied.q_dg(static_cast<Eigen::Index>(g));
        }
        const auto& taps = r.applied.tap.values();
        for (std::size_t j = 0; j < n; ++j) {
            const auto i = static_cast<Eigen::Index>(j);
            const auto& np = grid.layout.at(s + j);
            const double v_real = std::abs(r.v_real(i));
            const bool violation = std::isfinite(v_real) && band_excursion(v_real, sc.v_min, sc.v_max) > 0.0;
            out += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n", r.t, grid.buses[np.bus].id,
                               phase_letter(np.phase), num(std::abs(r.v_true(i))), num(std::abs(r.v_est(i))),
                               num(r.sigma_re(i)), num(r.sigma_im(i)), num(v_real), violation ? 1 : 0, num(p[j]),
                               num(q[j]), num(taps[0]), num(taps[1]), num(taps[2]), num(r.objective), r.status);
        }
    }
    return out;
}

std::string summary_json(const Scenario& sc, const CaseSummary& summary) {
    return summary_object(sc, summary).dump(2) + "\n";
}

std::string comparison_json(const Scenario& sc, const Comparison& c) {
    nlohmann::json j;
    j["with_cov"] = summary_object(sc, c.with_cov_summary);
    j["no_cov"] = summary_object(sc, c.no_cov_summary);
    return j.dump(2) + "\n";
}

std::string voltage_svg(const Scenario& sc, const std::vector<StepRecord>& records) {
    const std::size_t s = sc.grid.layout.source_count();
    const std::size_t n = sc.grid.layout.node_count();
    std::vector<Series> series(n);
    for (std::size_t j = 0; j < n; ++j) {
        series[j].label = node_label(sc.grid, s + j);
        for (const auto& r : records) series[j].values.push_back(std::abs(r.v_real(static_cast<Eigen::Index>(j))));
    }
    return plot("Realized voltage magnitudes (" + to_string(sc.case_mode) + ")", "|V| (p.u.)", series,
                {{sc.v_min, "v_min"}, {sc.v_max, "v_max"}}, sc.step_minutes);
}

std::string tap_svg(const Scenario& sc, const std::vector<StepRecord>& records) {
    std::vector<Series> series;
    for (Phase p : sc.grid.transformer_phases()) {
        Series s{std::string("tap ") + phase_letter(p), {}};
        for (const auto& r : records) s.values.push_back(r.applied.tap[p]);
        series.push_back(std::move(s));
    }
    std::vector<HLine> lines;
    if (sc.grid.transformer) {
        lines = {{sc.grid.transformer->tap_min, "tap_min"}, {sc.grid.transformer->tap_max, "tap_max"}};
    }
    return plot("Transformer tap ratios", "ratio", series, lines, sc.step_minutes);
}

std::string energy_svg(const Scenario& sc, const std::vector<StepRecord>& records) {
    Series available{"available", {}};
    Series used{"used", {}};
    for (const auto& r : records) {
        double a = 0.0;
        double u = 0.0;
        for (std::size_t g = 0; g < r.limits.size(); ++g) {
            a += r.limits[g].s_max;
            u += std::hypot(r.applied.p_dg(static_cast<Eigen::Index>(g)), r.applied.q_dg(static_cast<Eigen::Index>(g)));
        }
        available.values.push_back(a);
        used.values.push_back(u);
    }
    return plot("Renewable power available and used", "|S| (p.u.)", {available, used}, {}, sc.step_minutes);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(path.string() + ": cannot open for writing");
    out << text;
    if (!out) throw Error(path.string() + ": write failed");
}

void emit_outputs(const Scenario& sc, const std::vector<StepRecord>& records, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error(dir.string() + ": " + ec.message());
    write_text(dir / "steps.csv", steps_csv(sc, records));
    write_text(dir / "summary.json", summary_json(sc, summarize(sc, records)));
    write_text(dir / "voltages.svg", voltage_svg(sc, records));
    write_text(dir / "taps.svg", tap_svg(sc, records));
    write_text(dir / "energy.svg", energy_svg(sc, records));
}

}  // namespace gridopf
