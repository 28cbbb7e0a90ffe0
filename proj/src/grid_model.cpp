#include "gridopf/grid_model.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <set>
#include <stdexcept>
#include <utility>

#include "gridopf/errors.hpp"

namespace gridopf {

char phase_letter(Phase p) { return static_cast<char>('a' + static_cast<int>(p)); }

Phase phase_from_letter(char c) {
    switch (c) {
        case 'a': case 'A': return Phase::A;
        case 'b': case 'B': return Phase::B;
        case 'c': case 'C': return Phase::C;
        default: throw std::invalid_argument(std::string("unknown phase letter '") + c + "'");
    }
}

PhaseSet PhaseSet::parse(std::string_view letters) {
    PhaseSet set;
    for (char c : letters) {
        const Phase p = phase_from_letter(c);
        if (set.contains(p)) {
            throw std::invalid_argument("phase '" + std::string(1, c) + "' listed twice");
        }
        set.insert(p);
    }
    return set;
}

std::size_t PhaseSet::size() const {
    return static_cast<std::size_t>((bits_ & 1U) + ((bits_ >> 1) & 1U) + ((bits_ >> 2) & 1U));
}

std::vector<Phase> PhaseSet::phases() const {
    std::vector<Phase> out;
    for (Phase p : {Phase::A, Phase::B, Phase::C}) {
        if (contains(p)) out.push_back(p);
    }
    return out;
}

std::string PhaseSet::str() const {
    std::string s;
    for (Phase p : phases()) s.push_back(phase_letter(p));
    return s;
}

NodeLayout::NodeLayout(std::vector<NodePhase> rows, std::vector<Region> regions,
                       std::size_t source_count, std::size_t bus_count)
    : rows_(std::move(rows)), regions_(std::move(regions)), source_count_(source_count),
      lookup_(bus_count, std::array<long, 3>{-1, -1, -1}) {
    for (std::size_t i = 0; i < rows_.size(); ++i) {
        lookup_.at(rows_[i].bus)[static_cast<std::size_t>(rows_[i].phase)] = static_cast<long>(i);
        if (regions_[i] == Region::Tf1) tf1_.push_back(i);
        if (regions_[i] == Region::Tf2) tf2_.push_back(i);
    }
}

std::optional<std::size_t> NodeLayout::find(std::size_t bus, Phase p) const {
    if (bus >= lookup_.size()) return std::nullopt;
    const long idx = lookup_[bus][static_cast<std::size_t>(p)];
    if (idx < 0) return std::nullopt;
    return static_cast<std::size_t>(idx);
}

std::size_t NodeLayout::index(std::size_t bus, Phase p) const {
    auto idx = find(bus, p);
    if (!idx) {
        throw std::out_of_range("bus " + std::to_string(bus) + " has no phase " +
                                std::string(1, phase_letter(p)));
    }
    return *idx;
}

bool NodeLayout::is_transformer_row(std::size_t full) const {
    const Region r = region(full);
    return r == Region::Tf1 || r == Region::Tf2;
}

std::optional<std::size_t> GridModel::find_bus(std::string_view id) const {
    for (std::size_t i = 0; i < buses.size(); ++i) {
        if (buses[i].id == id) return i;
    }
    return std::nullopt;
}

std::size_t GridModel::bus_index(std::string_view id) const {
    auto idx = find_bus(id);
    if (!idx) throw ConfigError("unknown bus '" + std::string(id) + "'");
    return *idx;
}

std::optional<std::size_t> GridModel::find_branch(std::size_t from, std::size_t to) const {
    for (std::size_t k = 0; k < branches.size(); ++k) {
        const auto& br = branches[k];
        if ((br.from == from && br.to == to) || (br.from == to && br.to == from)) return k;
    }
    return std::nullopt;
}

std::vector<Phase> GridModel::transformer_phases() const {
    if (!transformer) return {};
    return buses.at(transformer->primary).phases.phases();
}

namespace {

bool is_transformer_pair(const GridModel& g, std::size_t u, std::size_t v) {
    if (!g.transformer) return false;
    const auto& tf = *g.transformer;
    return (u == tf.primary && v == tf.secondary) || (u == tf.secondary && v == tf.primary);
}

std::vector<bool> reachable(const GridModel& g, std::size_t start, bool through_transformer) {
    std::vector<std::vector<std::size_t>> adj(g.buses.size());
    for (const auto& br : g.branches) {
        if (!through_transformer && is_transformer_pair(g, br.from, br.to)) continue;
        adj[br.from].push_back(br.to);
        adj[br.to].push_back(br.from);
    }
    if (through_transformer && g.transformer) {
        adj[g.transformer->primary].push_back(g.transformer->secondary);
        adj[g.transformer->secondary].push_back(g.transformer->primary);
    }
    std::vector<bool> seen(g.buses.size(), false);
    std::deque<std::size_t> queue{start};
    seen[start] = true;
    while (!queue.empty()) {
        const std::size_t u = queue.front();
        queue.pop_front();
        for (std::size_t v : adj[u]) {
            if (!seen[v]) {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    return seen;
}

}  // namespace

GridModel finalize_grid(GridModel g) {
    if (g.buses.empty()) throw ConfigError("grid has no buses");
    if (g.source_bus >= g.buses.size()) throw ConfigError("source bus index out of range");
    if (!(g.base_mva > 0.0) || !(g.base_kv > 0.0)) throw ConfigError("base_mva and base_kv must be positive");

    std::set<std::string> ids;
    for (const auto& b : g.buses) {
        if (b.phases.empty()) throw ConfigError("bus '" + b.id + "' has no phases");
        if (!ids.insert(b.id).second) throw ConfigError("duplicate bus id '" + b.id + "'");
    }

    const PhaseSet src_phases = g.buses[g.source_bus].phases;
    if (static_cast<std::size_t>(g.source_voltage.size()) != src_phases.size()) {
        throw ConfigError("source voltage has " + std::to_string(g.source_voltage.size()) +
                          " entries but source bus carries " + std::to_string(src_phases.size()) +
                          " phases");
    }
    for (const auto& b : g.buses) {
        if ((b.phases & src_phases) != b.phases) {
            throw ConfigError("bus '" + b.id + "' carries a phase not present at the source");
        }
    }

    std::set<std::pair<std::size_t, std::size_t>> seen_pairs;
    for (auto& br : g.branches) {
        if (br.from >= g.buses.size() || br.to >= g.buses.size()) {
            throw ConfigError("branch references a nonexistent bus");
        }
        const std::string label = g.buses[br.from].id + "->" + g.buses[br.to].id;
        if (br.from == br.to) throw ConfigError("branch " + label + " is a self-loop");
        const auto key = std::minmax(br.from, br.to);
        if (!seen_pairs.insert(key).second) throw ConfigError("duplicate branch " + label);
        br.phases = g.buses[br.from].phases & g.buses[br.to].phases;
        const auto n = static_cast<Eigen::Index>(br.phases.size());
        if (n == 0) throw ConfigError("branch " + label + " has no common phase");
        if (br.y.rows() != n || br.y.cols() != n) {
            throw ConfigError("branch " + label + " admittance block must be " +
                              std::to_string(n) + "x" + std::to_string(n));
        }
        if (!br.y.allFinite()) throw ConfigError("branch " + label + " has non-finite admittance");
        const double scale = std::max(1.0, br.y.cwiseAbs().maxCoeff());
        if ((br.y - br.y.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
            throw ConfigError("branch " + label + " admittance block is not symmetric");
        }
    }

    if (g.transformer) {
        const auto& tf = *g.transformer;
        if (tf.primary >= g.buses.size() || tf.secondary >= g.buses.size()) {
            throw ConfigError("transformer references a nonexistent bus");
        }
        if (tf.primary == tf.secondary) throw ConfigError("transformer primary equals secondary");
        if (tf.primary == g.source_bus || tf.secondary == g.source_bus) {
            throw ConfigError("transformer may not terminate at the source bus");
        }
        if (g.buses[tf.primary].phases != g.buses[tf.secondary].phases) {
            throw ConfigError("transformer primary and secondary must carry the same phases");
        }
        if (!(tf.tap_min > 0.0) || !(tf.tap_min <= tf.tap_max)) {
            throw ConfigError("transformer tap bounds must satisfy 0 < tap_min <= tap_max");
        }
        if (!(tf.tap_step > 0.0)) throw ConfigError("transformer tap_step must be positive");
    }

    const auto connected = reachable(g, g.source_bus, true);
    for (std::size_t i = 0; i < g.buses.size(); ++i) {
        if (!connected[i]) throw ConfigError("grid is disconnected: bus '" + g.buses[i].id + "' unreachable");
    }

    g.subsystem.assign(g.buses.size(), 1);
    if (g.transformer) {
        const auto sys1 = reachable(g, g.source_bus, false);
        if (sys1[g.transformer->secondary]) {
            throw ConfigError("removing the transformer does not isolate its secondary side");
        }
        const auto sys2 = reachable(g, g.transformer->secondary, false);
        for (std::size_t i = 0; i < g.buses.size(); ++i) {
            if (sys1[i] == sys2[i]) {
                throw ConfigError("bus '" + g.buses[i].id +
                                  "' does not belong to exactly one side of the transformer");
            }
            g.subsystem[i] = sys1[i] ? 1 : 2;
        }
    }

    std::vector<NodePhase> rows;
    std::vector<Region> regions;
    auto push_bus = [&](std::size_t b, Region r) {
        for (Phase p : g.buses[b].phases.phases()) {
            rows.push_back({b, p});
            regions.push_back(r);
        }
    };
    push_bus(g.source_bus, Region::Source);
    const std::size_t src_count = rows.size();
    const long prim = g.transformer ? static_cast<long>(g.transformer->primary) : -1;
    const long sec = g.transformer ? static_cast<long>(g.transformer->secondary) : -1;
    for (std::size_t b = 0; b < g.buses.size(); ++b) {
        if (b != g.source_bus && g.subsystem[b] == 1 && static_cast<long>(b) != prim) push_bus(b, Region::Sys1);
    }
    if (g.transformer) {
        push_bus(g.transformer->primary, Region::Tf1);
        push_bus(g.transformer->secondary, Region::Tf2);
    }
    for (std::size_t b = 0; b < g.buses.size(); ++b) {
        if (g.subsystem[b] == 2 && static_cast<long>(b) != sec) push_bus(b, Region::Sys2);
    }
    g.layout = NodeLayout(std::move(rows), std::move(regions), src_count, g.buses.size());
    return g;
}

namespace {

void require_finalized(const GridModel& g) {
    if (g.layout.size() == 0) throw std::invalid_argument("grid model was not finalized");
}

AdmittanceMatrix assemble(const GridModel& g, bool isolate) {
    require_finalized(g);
    const auto n = static_cast<Eigen::Index>(g.layout.size());
    AdmittanceMatrix out{Eigen::MatrixXcd::Zero(n, n), g.layout};
    for (const auto& br : g.branches) {
        if (isolate && is_transformer_pair(g, br.from, br.to)) continue;
        const auto phases = br.phases.phases();
        for (std::size_t p = 0; p < phases.size(); ++p) {
            const auto fp = static_cast<Eigen::Index>(g.layout.index(br.from, phases[p]));
            const auto tp = static_cast<Eigen::Index>(g.layout.index(br.to, phases[p]));
            for (std::size_t q = 0; q < phases.size(); ++q) {
                const auto fq = static_cast<Eigen::Index>(g.layout.index(br.from, phases[q]));
                const auto tq = static_cast<Eigen::Index>(g.layout.index(br.to, phases[q]));
                const Complex w = br.y(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(q));
                out.y(fp, fq) += w;
                out.y(tp, tq) += w;
                out.y(fp, tq) -= w;
                out.y(tp, fq) -= w;
            }
        }
    }
    return out;
}

}  // namespace

AdmittanceMatrix build_admittance(const GridModel& grid) { return assemble(grid, false); }

AdmittanceMatrix build_isolated_admittance(const GridModel& grid) {
    if (grid.transformer) {
        const auto& tf = *grid.transformer;
        if (tf.primary >= grid.buses.size() || tf.secondary >= grid.buses.size() ||
            grid.layout.tf_primary().empty()) {
            throw ConfigError("transformer nodes missing from grid");
        }
    }
    return assemble(grid, true);
}

TapVector::TapVector(std::array<double, 3> ratios) {
    for (std::size_t i = 0; i < 3; ++i) set(static_cast<Phase>(i), ratios[i]);
}

void TapVector::set(Phase p, double ratio) {
    if (!(ratio > 0.0) || !std::isfinite(ratio)) {
        throw std::invalid_argument("tap ratio must be positive and finite");
    }
    ratio_[static_cast<std::size_t>(p)] = ratio;
}

TapVector TapVector::clamped(double lo, double hi) const {
    TapVector out;
    for (std::size_t i = 0; i < 3; ++i) out.set(static_cast<Phase>(i), std::clamp(ratio_[i], lo, hi));
    return out;
}

Eigen::VectorXcd apply_tap(const Eigen::VectorXcd& v_primary, const std::vector<Phase>& phases,
                           const TapVector& tap) {
    if (static_cast<std::size_t>(v_primary.size()) != phases.size()) {
        throw std::invalid_argument("apply_tap: voltage and phase list sizes differ");
    }
    Eigen::VectorXcd out(v_primary.size());
    for (Eigen::Index i = 0; i < v_primary.size(); ++i) {
        out(i) = tap[phases[static_cast<std::size_t>(i)]] * v_primary(i);
    }
    return out;
}

Eigen::VectorXcd apply_tap(const Eigen::VectorXcd& v_primary, const TapVector& tap) {
    if (v_primary.size() != 3) throw std::invalid_argument("apply_tap: expected three phases");
    return apply_tap(v_primary, {Phase::A, Phase::B, Phase::C}, tap);
}

}  // namespace gridopf
