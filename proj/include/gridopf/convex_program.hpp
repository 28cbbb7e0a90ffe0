#pragma once

#include <cstddef>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace gridopf {

enum class ConstraintKind {
    VoltageUpper,
    VoltageLower,
    TapBound,
    DgActive,
    DgReactive,
    DgApparent,
    Thermal,
    SlackBound,
    Generic,
};

std::string to_string(ConstraintKind kind);

inline constexpr std::size_t kNoNode = std::numeric_limits<std::size_t>::max();

/// Origin of an inequality; `node` is a full layout index (or a branch index
/// for Thermal), `corner` the tightening corner 0..3.
struct ConstraintTag {
    ConstraintKind kind = ConstraintKind::Generic;
    std::size_t node = kNoNode;
    int corner = -1;
};

using SparseRow = std::vector<std::pair<Eigen::Index, double>>;

/// a . x == b
struct LinearEquality {
    SparseRow a;
    double b = 0.0;
};

/// a . x <= b
struct LinearInequality {
    SparseRow a;
    double b = 0.0;
    ConstraintTag tag;
};

/// sum_r (G_r . x_vars + d_r)^2 + l . x_vars + c <= 0, restricted to `vars`.
/// Convex by construction (Gram form).
struct QuadraticInequality {
    std::vector<Eigen::Index> vars;
    Eigen::MatrixXd g;  // rows x vars.size()
    Eigen::VectorXd d;
    Eigen::VectorXd l;  // vars.size()
    double c = 0.0;
    ConstraintTag tag;

    double value(const Eigen::VectorXd& x) const;
    /// Dense gradient in the full variable space.
    Eigen::VectorXd gradient(const Eigen::VectorXd& x) const;
};

struct VariableBlock {
    std::string name;
    Eigen::Index offset = 0;
    Eigen::Index size = 0;
};

/// min c . x  s.t.  equalities, linear and convex-quadratic inequalities.
class ConvexProgram {
public:
    Eigen::Index add_block(const std::string& name, Eigen::Index size);
    const VariableBlock& block(const std::string& name) const;
    const std::vector<VariableBlock>& blocks() const { return blocks_; }
    Eigen::Index size() const { return size_; }

    void set_cost(Eigen::Index var, double coeff);
    const Eigen::VectorXd& cost() const { return cost_; }

    void add_equality(SparseRow a, double b);
    void add_inequality(SparseRow a, double b, ConstraintTag tag);
    void add_quadratic(QuadraticInequality q);

    const std::vector<LinearEquality>& equalities() const { return eq_; }
    const std::vector<LinearInequality>& inequalities() const { return lin_; }
    const std::vector<QuadraticInequality>& quadratics() const { return quad_; }

    Eigen::MatrixXd equality_matrix() const;
    Eigen::VectorXd equality_rhs() const;

    double objective(const Eigen::VectorXd& x) const { return cost_.dot(x); }
    /// Largest inequality value and absolute equality residual at x.
    double max_violation(const Eigen::VectorXd& x) const;

    std::string to_json() const;

private:
    void check_row(const SparseRow& a) const;

    std::vector<VariableBlock> blocks_;
    Eigen::Index size_ = 0;
    Eigen::VectorXd cost_;
    std::vector<LinearEquality> eq_;
    std::vector<LinearInequality> lin_;
    std::vector<QuadraticInequality> quad_;
};

enum class SolveStatus { Optimal, Infeasible, MaxIterations };

std::string to_string(SolveStatus status);

struct KktResiduals {
    double stationarity = 0.0;
    double primal = 0.0;
    double dual = 0.0;
    double complementarity = 0.0;

    double max() const;
};

struct OpfSolution {
    SolveStatus status = SolveStatus::MaxIterations;
    Eigen::VectorXd x;
    double objective = 0.0;
    Eigen::VectorXd lambda_linear;
    Eigen::VectorXd lambda_quadratic;
    Eigen::VectorXd nu;
    KktResiduals kkt;
    int iterations = 0;
    /// Minimal common slack of the feasibility problem; positive means infeasible.
    double phase1_slack = 0.0;
    std::vector<std::string> warnings;

    std::string to_json() const;
};

struct SolverOptions {
    int max_iterations = 200;
    double tolerance = 1e-8;
    /// Phase I stops once every inequality holds with this margin.
    double phase1_margin = 1e-4;
};

/// Primal-dual interior-point method on the null space of the equalities,
/// with a Phase I feasibility search.
OpfSolution solve_program(const ConvexProgram& prog, const SolverOptions& options = {});

}  // namespace gridopf
