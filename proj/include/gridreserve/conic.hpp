#pragma once

#include <cmath>
#include <cstddef>
#include <iosfwd>
#include <map>
#include <ostream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "gridreserve/common.hpp"

namespace gridreserve::conic {

/// Status of a conic solve.
enum class SolveStatus { Optimal, Infeasible, Unbounded, NumericalError };

inline const char* to_string(SolveStatus s) {
    switch (s) {
    case SolveStatus::Optimal: return "Optimal";
    case SolveStatus::Infeasible: return "Infeasible";
    case SolveStatus::Unbounded: return "Unbounded";
    default: return "NumericalError";
    }
}

/// Result of a solve. `x` is always sized to the program, but only
/// meaningful for status Optimal (residuals refer to that point).
/// Dual values are exposed for sensitivity analysis: `eq_duals` per
/// equality row, `lo_duals`/`hi_duals` per variable bound (zero where the
/// bound is absent or inactive), `cone_duals` per cone in cone order.
struct SolveReport {
    SolveStatus status = SolveStatus::NumericalError;
    std::vector<double> x;
    double objective = 0.0;
    double primal_residual = kInf;  // ||Ax - b||_inf
    double bound_violation = kInf;  // max over variable bounds
    double cone_violation = kInf;   // max over cones of ||(x1..xd)|| - t
    int iterations = 0;
    std::vector<double> eq_duals;
    std::vector<double> lo_duals;
    std::vector<double> hi_duals;
    std::vector<std::vector<double>> cone_duals;

    double worst_residual() const {
        return std::max({primal_residual, bound_violation, cone_violation});
    }
};

/// Standard-form conic program: linear objective, sparse linear equalities,
/// variable bounds and second-order cones over named variables.
///
/// The program grows monotonically; builders never mutate earlier rows.
class ConicProgram {
public:
    struct EqRow {
        std::vector<std::pair<int, double>> coeffs;
        double rhs = 0.0;
    };

    /// Registers a variable. Bounds may be +-inf; lo == hi pins the value.
    int add_var(const std::string& name, double lo, double hi) {
        if (index_.count(name))
            throw DuplicateName("variable '" + name + "' already registered");
        if (lo > hi)
            throw DomainError("variable '" + name + "': lo > hi");
        int idx = static_cast<int>(names_.size());
        index_.emplace(name, idx);
        names_.push_back(name);
        lo_.push_back(lo);
        hi_.push_back(hi);
        cost_.push_back(0.0);
        is_cone_head_.push_back(false);
        return idx;
    }

    /// Adds `coeff` to the objective coefficient of variable `idx`.
    void add_cost(int idx, double coeff) {
        check_index(idx);
        cost_[idx] += coeff;
    }

    /// Adds the equality sum(coeffs) == rhs; returns the row index.
    int add_eq(const std::vector<std::pair<int, double>>& coeffs, double rhs) {
        for (const auto& [idx, c] : coeffs) {
            (void)c;
            check_index(idx);
        }
        eq_rows_.push_back(EqRow{coeffs, rhs});
        return static_cast<int>(eq_rows_.size()) - 1;
    }

    /// Adds the cone ||(x1..xd)||_2 <= t for indices = (t, x1..xd).
    void add_soc(const std::vector<int>& indices) {
        if (indices.size() < 2)
            throw DomainError("add_soc: cone needs a head and at least one member");
        for (int idx : indices) check_index(idx);
        if (is_cone_head_[indices.front()])
            throw DomainError("add_soc: variable '" + names_[indices.front()] +
                              "' already heads another cone");
        is_cone_head_[indices.front()] = true;
        cones_.push_back(indices);
    }

    int var(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw UnknownIndex("unknown variable '" + name + "'");
        return it->second;
    }
    bool has_var(const std::string& name) const { return index_.count(name) != 0; }

    int num_vars() const { return static_cast<int>(names_.size()); }
    int num_eq() const { return static_cast<int>(eq_rows_.size()); }
    int num_cones() const { return static_cast<int>(cones_.size()); }

    const std::string& name(int idx) const { return names_.at(static_cast<size_t>(idx)); }
    double lo(int idx) const { return lo_.at(static_cast<size_t>(idx)); }
    double hi(int idx) const { return hi_.at(static_cast<size_t>(idx)); }
    double cost(int idx) const { return cost_.at(static_cast<size_t>(idx)); }
    const std::vector<double>& costs() const { return cost_; }
    const std::vector<EqRow>& eq_rows() const { return eq_rows_; }
    const std::vector<std::vector<int>>& cones() const { return cones_; }

    /// Overrides bounds of an existing variable (used when re-instantiating a
    /// program family at a perturbed parameter; the structure is unchanged).
    void set_bounds(int idx, double lo, double hi) {
        check_index(idx);
        if (lo > hi) throw DomainError("set_bounds: lo > hi for '" + names_[idx] + "'");
        lo_[static_cast<size_t>(idx)] = lo;
        hi_[static_cast<size_t>(idx)] = hi;
    }

    /// Residuals of a candidate point against this program.
    double eq_residual(const std::vector<double>& x) const {
        double r = 0.0;
        for (const auto& row : eq_rows_) {
            double v = -row.rhs;
            for (const auto& [idx, c] : row.coeffs) v += c * x[static_cast<size_t>(idx)];
            r = std::max(r, std::fabs(v));
        }
        return r;
    }
    double bound_residual(const std::vector<double>& x) const {
        double r = 0.0;
        for (size_t i = 0; i < x.size(); ++i) {
            if (std::isfinite(lo_[i])) r = std::max(r, lo_[i] - x[i]);
            if (std::isfinite(hi_[i])) r = std::max(r, x[i] - hi_[i]);
        }
        return std::max(r, 0.0);
    }
    double cone_residual(const std::vector<double>& x) const {
        double r = 0.0;
        for (const auto& cone : cones_) {
            double nrm = 0.0;
            for (size_t j = 1; j < cone.size(); ++j) {
                double v = x[static_cast<size_t>(cone[j])];
                nrm += v * v;
            }
            r = std::max(r, std::sqrt(nrm) - x[static_cast<size_t>(cone[0])]);
        }
        return std::max(r, 0.0);
    }
    double objective_value(const std::vector<double>& x) const {
        double v = 0.0;
        for (size_t i = 0; i < x.size(); ++i) v += cost_[i] * x[i];
        return v;
    }

    /// Plain-text standard-form listing for cross-checking against external
    /// solvers (--dump-lp).
    void write_listing(std::ostream& os) const {
        os << "minimize\n ";
        bool first = true;
        for (int i = 0; i < num_vars(); ++i) {
            if (cost_[static_cast<size_t>(i)] == 0.0) continue;
            double c = cost_[static_cast<size_t>(i)];
            if (!first) os << (c >= 0 ? " + " : " - ");
            else if (c < 0) os << "-";
            os << std::fabs(c) << " " << names_[static_cast<size_t>(i)];
            first = false;
        }
        if (first) os << "0";
        os << "\nsubject to\n";
        for (size_t r = 0; r < eq_rows_.size(); ++r) {
            os << " e" << r << ": ";
            bool f2 = true;
            for (const auto& [idx, c] : eq_rows_[r].coeffs) {
                if (!f2) os << (c >= 0 ? " + " : " - ");
                else if (c < 0) os << "-";
                os << std::fabs(c) << " " << names_[static_cast<size_t>(idx)];
                f2 = false;
            }
            os << " == " << eq_rows_[r].rhs << "\n";
        }
        os << "bounds\n";
        for (int i = 0; i < num_vars(); ++i) {
            os << " " << lo_[static_cast<size_t>(i)] << " <= "
               << names_[static_cast<size_t>(i)] << " <= " << hi_[static_cast<size_t>(i)]
               << "\n";
        }
        if (!cones_.empty()) os << "cones\n";
        for (const auto& cone : cones_) {
            os << " ||(";
            for (size_t j = 1; j < cone.size(); ++j) {
                if (j > 1) os << ", ";
                os << names_[static_cast<size_t>(cone[j])];
            }
            os << ")|| <= " << names_[static_cast<size_t>(cone[0])] << "\n";
        }
    }

private:
    void check_index(int idx) const {
        if (idx < 0 || idx >= num_vars())
            throw UnknownIndex("variable index " + std::to_string(idx) +
                               " out of range");
    }

    std::vector<std::string> names_;
    std::unordered_map<std::string, int> index_;
    std::vector<double> lo_, hi_, cost_;
    std::vector<bool> is_cone_head_;
    std::vector<EqRow> eq_rows_;
    std::vector<std::vector<int>> cones_;
};

/// Helper: encode sum(coeffs) <= rhs with a named nonnegative slack.
inline int add_ineq_le(ConicProgram& prog, const std::string& slack_name,
                       std::vector<std::pair<int, double>> coeffs, double rhs) {
    int s = prog.add_var(slack_name, 0.0, kInf);
    coeffs.emplace_back(s, 1.0);
    return prog.add_eq(coeffs, rhs);
}

/// Helper: encode sum(coeffs) >= rhs with a named nonnegative surplus.
inline int add_ineq_ge(ConicProgram& prog, const std::string& slack_name,
                       std::vector<std::pair<int, double>> coeffs, double rhs) {
    int s = prog.add_var(slack_name, 0.0, kInf);
    coeffs.emplace_back(s, -1.0);
    return prog.add_eq(coeffs, rhs);
}

/// Upper bound on the optimality gap in percent, (upper - lower)/upper * 100.
/// `upper` comes from a feasible (restricted) solve, `lower` from the conic
/// relaxation.
inline double relaxation_gap(double upper_obj, double lower_obj) {
    double tol = 1e-9 * std::max({1.0, std::fabs(upper_obj), std::fabs(lower_obj)});
    if (upper_obj < lower_obj - tol)
        throw DomainError("relaxation_gap: upper bound " + std::to_string(upper_obj) +
                          " below lower bound " + std::to_string(lower_obj));
    if (upper_obj == 0.0)
        throw DomainError("relaxation_gap: upper bound is zero");
    double gap = (upper_obj - lower_obj) / upper_obj * 100.0;
    return std::max(gap, 0.0);
}

} // namespace gridreserve::conic
