#include "gridopf/convex_program.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

namespace gridopf {

std::string to_string(ConstraintKind kind) {
    switch (kind) {
        case ConstraintKind::VoltageUpper: return "voltage-upper";
        case ConstraintKind::VoltageLower: return "voltage-lower";
        case ConstraintKind::TapBound: return "tap-bound";
        case ConstraintKind::DgActive: return "dg-active";
        case ConstraintKind::DgReactive: return "dg-reactive";
        case ConstraintKind::DgApparent: return "dg-apparent";
        case ConstraintKind::Thermal: return "thermal";
        case ConstraintKind::SlackBound: return "slack-bound";
        case ConstraintKind::Generic: return "generic";
    }
    return "generic";
}

std::string to_string(SolveStatus status) {
    switch (status) {
        case SolveStatus::Optimal: return "optimal";
        case SolveStatus::Infeasible: return "infeasible";
        case SolveStatus::MaxIterations: return "max-iter";
    }
    return "max-iter";
}

double KktResiduals::max() const { return std::max({stationarity, primal, dual, complementarity}); }

double QuadraticInequality::value(const Eigen::VectorXd& x) const {
    Eigen::VectorXd xv(static_cast<Eigen::Index>(vars.size()));
    for (std::size_t k = 0; k < vars.size(); ++k) xv(static_cast<Eigen::Index>(k)) = x(vars[k]);
    return (g * xv + d).squaredNorm() + l.dot(xv) + c;
}

Eigen::VectorXd QuadraticInequality::gradient(const Eigen::VectorXd& x) const {
    Eigen::VectorXd xv(static_cast<Eigen::Index>(vars.size()));
    for (std::size_t k = 0; k < vars.size(); ++k) xv(static_cast<Eigen::Index>(k)) = x(vars[k]);
    const Eigen::VectorXd gv = 2.0 * g.transpose() * (g * xv + d) + l;
    Eigen::VectorXd out = Eigen::VectorXd::Zero(x.size());
    for (std::size_t k = 0; k < vars.size(); ++k) out(vars[k]) += gv(static_cast<Eigen::Index>(k));
    return out;
}

Eigen::Index ConvexProgram::add_block(const std::string& name, Eigen::Index size) {
    if (size < 0) throw std::invalid_argument("add_block: negative size");
    for (const auto& b : blocks_) {
        if (b.name == name) throw std::invalid_argument("add_block: duplicate block " + name);
    }
    if (!eq_.empty() || !lin_.empty() || !quad_.empty()) {
        throw std::logic_error("add_block: variables must be declared before constraints");
    }
    blocks_.push_back({name, size_, size});
    size_ += size;
    cost_.conservativeResize(size_);
    cost_.tail(size).setZero();
    return blocks_.back().offset;
}

const VariableBlock& ConvexProgram::block(const std::string& name) const {
    for (const auto& b : blocks_) {
        if (b.name == name) return b;
    }
    throw std::out_of_range("no variable block " + name);
}

void ConvexProgram::set_cost(Eigen::Index var, double coeff) {
    if (var < 0 || var >= size_) throw std::out_of_range("set_cost: variable out of range");
    cost_(var) = coeff;
}

void ConvexProgram::check_row(const SparseRow& a) const {
    for (const auto& [j, v] : a) {
        if (j < 0 || j >= size_) throw std::out_of_range("constraint references unknown variable");
        if (!std::isfinite(v)) throw std::invalid_argument("constraint coefficient is not finite");
    }
}

void ConvexProgram::add_equality(SparseRow a, double b) {
    check_row(a);
    eq_.push_back({std::move(a), b});
}

void ConvexProgram::add_inequality(SparseRow a, double b, ConstraintTag tag) {
    check_row(a);
    lin_.push_back({std::move(a), b, tag});
}

void ConvexProgram::add_quadratic(QuadraticInequality q) {
    const auto k = static_cast<Eigen::Index>(q.vars.size());
    if (q.g.cols() != k || q.l.size() != k || q.d.size() != q.g.rows()) {
        throw std::invalid_argument("add_quadratic: inconsistent dimensions");
    }
    for (auto j : q.vars) {
        if (j < 0 || j >= size_) throw std::out_of_range("add_quadratic: unknown variable");
    }
    quad_.push_back(std::move(q));
}

Eigen::MatrixXd ConvexProgram::equality_matrix() const {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(eq_.size()), size_);
    for (std::size_t r = 0; r < eq_.size(); ++r) {
        for (const auto& [j, v] : eq_[r].a) a(static_cast<Eigen::Index>(r), j) += v;
    }
    return a;
}

Eigen::VectorXd ConvexProgram::equality_rhs() const {
    Eigen::VectorXd b(static_cast<Eigen::Index>(eq_.size()));
    for (std::size_t r = 0; r < eq_.size(); ++r) b(static_cast<Eigen::Index>(r)) = eq_[r].b;
    return b;
}

double ConvexProgram::max_violation(const Eigen::VectorXd& x) const {
    double worst = 0.0;
    for (const auto& e : eq_) {
        double s = -e.b;
        for (const auto& [j, v] : e.a) s += v * x(j);
        worst = std::max(worst, std::abs(s));
    }
    for (const auto& r : lin_) {
        double s = -r.b;
        for (const auto& [j, v] : r.a) s += v * x(j);
        worst = std::max(worst, s);
    }
    for (const auto& q : quad_) worst = std::max(worst, q.value(x));
    return worst;
}

namespace {

nlohmann::json row_json(const SparseRow& a) {
    auto out = nlohmann::json::array();
    for (const auto& [j, v] : a) out.push_back({j, v});
    return out;
}

nlohmann::json tag_json(const ConstraintTag& tag) {
    nlohmann::json t{{"kind", to_string(tag.kind)}};
    if (tag.node != kNoNode) t["node"] = tag.node;
    if (tag.corner >= 0) t["corner"] = tag.corner;
    return t;
}

nlohmann::json vec_json(const Eigen::VectorXd& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

}  // namespace

std::string ConvexProgram::to_json() const {
    nlohmann::json j;
    j["variables"] = size_;
    auto layout = nlohmann::json::array();
    for (const auto& b : blocks_) layout.push_back({{"name", b.name}, {"offset", b.offset}, {"size", b.size}});
    j["layout"] = layout;
    j["cost"] = vec_json(cost_);
    auto eqs = nlohmann::json::array();
    for (const auto& e : eq_) eqs.push_back({{"a", row_json(e.a)}, {"b", e.b}});
    j["equalities"] = eqs;
    auto lins = nlohmann::json::array();
    for (const auto& r : lin_) lins.push_back({{"a", row_json(r.a)}, {"b", r.b}, {"tag", tag_json(r.tag)}});
    j["linear_inequalities"] = lins;
    auto quads = nlohmann::json::array();
    for (const auto& q : quad_) {
        auto g = nlohmann::json::array();
        for (Eigen::Index r = 0; r < q.g.rows(); ++r) g.push_back(vec_json(q.g.row(r).transpose()));
        quads.push_back({{"vars", q.vars}, {"g", g}, {"d", vec_json(q.d)}, {"l", vec_json(q.l)}, {"c", q.c},
                         {"tag", tag_json(q.tag)}});
    }
    j["quadratic_inequalities"] = quads;
    return j.dump(1);
}

std::string OpfSolution::to_json() const {
    nlohmann::json j;
    j["status"] = to_string(status);
    j["objective"] = objective;
    j["iterations"] = iterations;
    j["phase1_slack"] = phase1_slack;
    j["x"] = vec_json(x);
    j["lambda_linear"] = vec_json(lambda_linear);
    j["lambda_quadratic"] = vec_json(lambda_quadratic);
    j["nu"] = vec_json(nu);
    j["kkt"] = {{"stationarity", kkt.stationarity},
                {"primal", kkt.primal},
                {"dual", kkt.dual},
                {"complementarity", kkt.complementarity}};
    j["warnings"] = warnings;
    return j.dump(1);
}

}  // namespace gridopf
