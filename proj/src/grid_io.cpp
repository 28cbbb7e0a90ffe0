#include <fstream>
#include <sstream>

#include "gridopf/errors.hpp"
#include "gridopf/grid_model.hpp"
#include "json_reader.hpp"

namespace gridopf {

using detail::Reader;
using nlohmann::json;

GridModel parse_grid(const std::string& json_text, const std::string& origin) {
    Reader r{origin};
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(origin + ": invalid JSON: " + e.what());
    }

    GridModel g;
    g.base_mva = r.number(r.get(doc, "base_mva", "$"), "base_mva");
    g.base_kv = r.number(r.get(doc, "base_kv", "$"), "base_kv");
    if (!(g.base_mva > 0.0) || !(g.base_kv > 0.0)) r.fail("base_mva/base_kv", "must be positive");
    // Branch admittances are given in siemens.
    const double z_base = g.base_kv * g.base_kv / g.base_mva;

    const auto& buses = r.get(doc, "buses", "$");
    if (!buses.is_array() || buses.empty()) r.fail("buses", "expected a non-empty array");
    for (std::size_t i = 0; i < buses.size(); ++i) {
        const std::string f = "buses[" + std::to_string(i) + "]";
        g.buses.push_back({r.id(r.get(buses[i], "id", f), f + ".id"),
                           r.phases(r.get(buses[i], "phases", f), f + ".phases")});
    }
    auto bus_ref = [&](const json& v, const std::string& field) {
        const std::string id = r.id(v, field);
        auto idx = g.find_bus(id);
        if (!idx) r.fail(field, "unknown bus '" + id + "'");
        return *idx;
    };

    const auto& branches = r.get(doc, "branches", "$");
    if (!branches.is_array()) r.fail("branches", "expected an array");
    for (std::size_t k = 0; k < branches.size(); ++k) {
        const std::string f = "branches[" + std::to_string(k) + "]";
        Branch br;
        br.from = bus_ref(r.get(branches[k], "from", f), f + ".from");
        br.to = bus_ref(r.get(branches[k], "to", f), f + ".to");
        const auto& block = r.get(branches[k], "y_block", f);
        if (!block.is_array() || block.empty()) r.fail(f + ".y_block", "expected a square matrix");
        const auto n = static_cast<Eigen::Index>(block.size());
        br.y.resize(n, n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto& row = block[static_cast<std::size_t>(i)];
            if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != n) {
                r.fail(f + ".y_block", "expected a square matrix");
            }
            for (Eigen::Index j = 0; j < n; ++j) {
                br.y(i, j) = z_base * r.complex(row[static_cast<std::size_t>(j)],
                                                f + ".y_block[" + std::to_string(i) + "][" +
                                                    std::to_string(j) + "]");
            }
        }
        g.branches.push_back(std::move(br));
    }

    const auto& src = r.get(doc, "source", "$");
    g.source_bus = bus_ref(r.get(src, "bus", "source"), "source.bus");
    const auto& v = r.get(src, "v", "source");
    if (!v.is_array()) r.fail("source.v", "expected an array of [re, im]");
    g.source_voltage.resize(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) {
        g.source_voltage(static_cast<Eigen::Index>(i)) = r.complex(v[i], "source.v[" + std::to_string(i) + "]");
    }

    if (auto it = doc.find("transformer"); it != doc.end() && !it->is_null()) {
        TransformerSpec tf;
        tf.primary = bus_ref(r.get(*it, "primary", "transformer"), "transformer.primary");
        tf.secondary = bus_ref(r.get(*it, "secondary", "transformer"), "transformer.secondary");
        tf.tap_min = r.number(r.get(*it, "tap_min", "transformer"), "transformer.tap_min");
        tf.tap_max = r.number(r.get(*it, "tap_max", "transformer"), "transformer.tap_max");
        tf.tap_step = r.number(r.get(*it, "tap_step", "transformer"), "transformer.tap_step");
        g.transformer = tf;
    }

    try {
        return finalize_grid(std::move(g));
    } catch (const ConfigError& e) {
        throw ConfigError(origin + ": " + e.what());
    }
}

GridModel load_grid(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path.string() + ": cannot open grid file");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_grid(ss.str(), path.string());
}

}  // namespace gridopf
