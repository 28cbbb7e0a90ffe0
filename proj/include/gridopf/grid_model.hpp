#pragma once

#include <array>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace gridopf {

using Complex = std::complex<double>;

enum class Phase : std::uint8_t { A = 0, B = 1, C = 2 };

char phase_letter(Phase p);
Phase phase_from_letter(char c);

/// Subset of {a, b, c}; iteration order is always a, b, c.
class PhaseSet {
public:
    constexpr PhaseSet() = default;
    static PhaseSet all() { return PhaseSet(0b111); }
    static PhaseSet parse(std::string_view letters);

    bool contains(Phase p) const { return (bits_ >> static_cast<int>(p)) & 1U; }
    void insert(Phase p) { bits_ |= static_cast<std::uint8_t>(1U << static_cast<int>(p)); }
    std::size_t size() const;
    bool empty() const { return bits_ == 0; }
    std::vector<Phase> phases() const;
    std::string str() const;

    PhaseSet operator&(PhaseSet other) const { return PhaseSet(bits_ & other.bits_); }
    bool operator==(const PhaseSet&) const = default;

private:
    explicit constexpr PhaseSet(unsigned bits) : bits_(static_cast<std::uint8_t>(bits)) {}
    std::uint8_t bits_ = 0;
};

struct Bus {
    std::string id;
    PhaseSet phases;
};

/// Series element between two buses. The admittance block acts on the phases
/// common to both ends, in a-b-c order, and is stored in per-unit.
struct Branch {
    std::size_t from = 0;
    std::size_t to = 0;
    Eigen::MatrixXcd y;

    PhaseSet phases;  // filled by finalize_grid
};

struct TransformerSpec {
    std::size_t primary = 0;
    std::size_t secondary = 0;
    double tap_min = 0.9;
    double tap_max = 1.1;
    double tap_step = 0.0125;
};

enum class Region : std::uint8_t { Source, Sys1, Tf1, Tf2, Sys2 };

struct NodePhase {
    std::size_t bus;
    Phase phase;
};

/// Deterministic row ordering of all node-phases:
/// [source; subsystem 1; transformer primary; transformer secondary; subsystem 2].
/// "full" indices cover every row; "node" indices skip the source rows.
class NodeLayout {
public:
    NodeLayout() = default;
    NodeLayout(std::vector<NodePhase> rows, std::vector<Region> regions, std::size_t source_count,
               std::size_t bus_count);

    std::size_t size() const { return rows_.size(); }
    std::size_t source_count() const { return source_count_; }
    std::size_t node_count() const { return rows_.size() - source_count_; }

    const NodePhase& at(std::size_t full) const { return rows_.at(full); }
    Region region(std::size_t full) const { return regions_.at(full); }
    std::optional<std::size_t> find(std::size_t bus, Phase p) const;
    std::size_t index(std::size_t bus, Phase p) const;

    /// Phase-aligned transformer rows (full indices); empty without transformer.
    const std::vector<std::size_t>& tf_primary() const { return tf1_; }
    const std::vector<std::size_t>& tf_secondary() const { return tf2_; }
    bool is_transformer_row(std::size_t full) const;

private:
    std::vector<NodePhase> rows_;
    std::vector<Region> regions_;
    std::size_t source_count_ = 0;
    std::vector<std::array<long, 3>> lookup_;
    std::vector<std::size_t> tf1_;
    std::vector<std::size_t> tf2_;
};

/// Three-phase feeder in per-unit. Construct the raw fields, then pass through
/// finalize_grid() which validates the structure and derives the layout.
struct GridModel {
    double base_mva = 1.0;
    double base_kv = 1.0;
    std::vector<Bus> buses;
    std::vector<Branch> branches;
    std::size_t source_bus = 0;
    Eigen::VectorXcd source_voltage;  // one entry per source phase, a-b-c order
    std::optional<TransformerSpec> transformer;

    NodeLayout layout;
    std::vector<int> subsystem;  // per bus: 1 (with source) or 2

    std::size_t bus_index(std::string_view id) const;
    std::optional<std::size_t> find_bus(std::string_view id) const;
    std::optional<std::size_t> find_branch(std::size_t from, std::size_t to) const;
    std::vector<Phase> transformer_phases() const;
};

GridModel finalize_grid(GridModel grid);

GridModel parse_grid(const std::string& json_text, const std::string& origin = "<grid>");
GridModel load_grid(const std::filesystem::path& path);

struct AdmittanceMatrix {
    Eigen::MatrixXcd y;
    NodeLayout layout;
};

AdmittanceMatrix build_admittance(const GridModel& grid);
AdmittanceMatrix build_isolated_admittance(const GridModel& grid);

/// Per-phase transformer ratio, indexed by phase letter. Phases the
/// transformer does not carry keep the nominal ratio 1.
class TapVector {
public:
    TapVector() = default;
    explicit TapVector(std::array<double, 3> ratios);

    double operator[](Phase p) const { return ratio_[static_cast<std::size_t>(p)]; }
    void set(Phase p, double ratio);
    const std::array<double, 3>& values() const { return ratio_; }
    TapVector clamped(double lo, double hi) const;

    bool operator==(const TapVector&) const = default;

private:
    std::array<double, 3> ratio_{1.0, 1.0, 1.0};
};

/// V_secondary = diag(tap) * V_primary over the listed phases.
Eigen::VectorXcd apply_tap(const Eigen::VectorXcd& v_primary, const std::vector<Phase>& phases,
                           const TapVector& tap);
Eigen::VectorXcd apply_tap(const Eigen::VectorXcd& v_primary, const TapVector& tap);

}  // namespace gridopf
