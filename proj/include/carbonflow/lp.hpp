#pragma once

#include "carbonflow/errors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <utility>
#include <vector>

namespace carbonflow::lp {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class Sense { LessEqual, Equal, GreaterEqual };

/// min c'x subject to row constraints and variable bounds.
struct LinearProgram {
    struct Row {
        std::vector<std::pair<std::size_t, double>> terms;
        Sense sense = Sense::Equal;
        double rhs = 0.0;
    };

    std::vector<double> cost;
    std::vector<double> lower;
    std::vector<double> upper;
    std::vector<Row> rows;

    std::size_t add_variable(double c, double lo = 0.0, double hi = kInf) {
        cost.push_back(c);
        lower.push_back(lo);
        upper.push_back(hi);
        return cost.size() - 1;
    }

    std::size_t add_row(std::vector<std::pair<std::size_t, double>> terms, Sense sense, double rhs) {
        rows.push_back({std::move(terms), sense, rhs});
        return rows.size() - 1;
    }

    std::size_t num_variables() const { return cost.size(); }
};

enum class Status { Optimal, Infeasible, Unbounded, IterationLimit };

constexpr const char* to_string(Status s) {
    switch (s) {
    case Status::Optimal: return "optimal";
    case Status::Infeasible: return "infeasible";
    case Status::Unbounded: return "unbounded";
    case Status::IterationLimit: return "iteration_limit";
    }
    return "unknown";
}

struct Solution {
    Status status = Status::Infeasible;
    std::vector<double> x;
    // d(objective)/d(rhs) for every row, in the row's original orientation.
    std::vector<double> row_duals;
    std::vector<double> reduced_costs;
    double objective = 0.0;
    double dual_objective = 0.0;
    std::size_t iterations = 0;
    bool degenerate_duals = false;   // some basic variable sits at zero
    bool alternative_optima = false; // some nonbasic column has zero reduced cost

    double certificate_gap() const {
        return std::abs(objective - dual_objective) / std::max(1.0, std::abs(objective));
    }
};

/// Interface for any deterministic LP routine that returns primal values and duals.
class Solver {
public:
    virtual ~Solver() = default;
    virtual Solution solve(const LinearProgram& problem) const = 0;
};

/// Dense two-phase revised simplex with an explicit basis inverse.
/// Dantzig pricing with lowest-index tie-breaking; falls back to Bland's rule
/// after a run of degenerate pivots.
class RevisedSimplex final : public Solver {
public:
    struct Options {
        double feasibility_tol = 1e-9;
        double optimality_tol = 1e-9;
        double pivot_tol = 1e-11;
        std::size_t max_iterations = 20000;
        std::size_t refactor_every = 50;
        std::size_t degenerate_run_before_bland = 30;
    };

    RevisedSimplex() = default;
    explicit RevisedSimplex(Options options) : options_(options) {}

    Solution solve(const LinearProgram& problem) const override {
        StandardForm sf = to_standard_form(problem);
        Solution out;
        Tableau t(sf, options_);

        // Phase 1: drive artificials to zero.
        Eigen::VectorXd phase1_cost = Eigen::VectorXd::Zero(sf.cols());
        for (std::size_t j = sf.first_artificial; j < sf.cols(); ++j) phase1_cost[static_cast<Eigen::Index>(j)] = 1.0;
        Status s1 = t.run(phase1_cost, /*allow_artificial=*/true);
        out.iterations = t.iterations;
        if (s1 == Status::IterationLimit) {
            out.status = s1;
            return out;
        }
        double infeasibility = 0.0;
        for (std::size_t i = 0; i < t.basis.size(); ++i)
            if (t.basis[i] >= sf.first_artificial) infeasibility += std::max(0.0, t.xb[static_cast<Eigen::Index>(i)]);
        if (infeasibility > options_.feasibility_tol * std::max(1.0, sf.b.lpNorm<Eigen::Infinity>())) {
            out.status = Status::Infeasible;
            return out;
        }
        t.evict_artificials();

        Status s2 = t.run(sf.c, /*allow_artificial=*/false);
        out.iterations = t.iterations;
        out.status = s2;
        if (s2 != Status::Optimal) return out;

        // Standard-form primal values.
        Eigen::VectorXd xs = Eigen::VectorXd::Zero(sf.cols());
        for (std::size_t i = 0; i < t.basis.size(); ++i)
            xs[static_cast<Eigen::Index>(t.basis[i])] = std::max(0.0, t.xb[static_cast<Eigen::Index>(i)]);

        const std::size_t n = problem.num_variables();
        out.x.assign(n, 0.0);
        for (std::size_t j = 0; j < n; ++j) {
            const auto& m = sf.map[j];
            double v = m.offset;
            if (m.pos >= 0) v += m.pos_sign * xs[m.pos];
            if (m.neg >= 0) v -= xs[m.neg];
            out.x[j] = v;
        }

        // Duals of the standard rows; original rows come first.
        Eigen::VectorXd y = t.duals(sf.c);
        out.row_duals.assign(problem.rows.size(), 0.0);
        for (std::size_t r = 0; r < problem.rows.size(); ++r)
            out.row_duals[r] = sf.row_sign[r] * y[static_cast<Eigen::Index>(r)];

        // Certificate in the original space.
        out.objective = 0.0;
        for (std::size_t j = 0; j < n; ++j) out.objective += problem.cost[j] * out.x[j];
        out.reduced_costs = problem.cost;
        for (std::size_t r = 0; r < problem.rows.size(); ++r)
            for (const auto& [j, a] : problem.rows[r].terms) out.reduced_costs[j] -= out.row_duals[r] * a;
        double dual_obj = 0.0;
        for (std::size_t r = 0; r < problem.rows.size(); ++r) dual_obj += out.row_duals[r] * problem.rows[r].rhs;
        const double dtol = options_.optimality_tol * 100.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double d = out.reduced_costs[j];
            if (d > dtol) dual_obj += d * problem.lower[j];
            else if (d < -dtol) dual_obj += d * problem.upper[j];
            else dual_obj += d * out.x[j];
        }
        out.dual_objective = dual_obj;

        // Degeneracy flags.
        std::vector<bool> is_basic(sf.cols(), false);
        for (auto j : t.basis) is_basic[j] = true;
        for (std::size_t i = 0; i < t.basis.size(); ++i)
            if (t.basis[i] < sf.first_artificial &&
                std::abs(t.xb[static_cast<Eigen::Index>(i)]) <= options_.feasibility_tol)
                out.degenerate_duals = true;
        Eigen::VectorXd d = sf.c - sf.a.transpose() * y;
        for (std::size_t j = 0; j < sf.first_artificial; ++j) {
            if (is_basic[j]) continue;
            const int partner = sf.partner[j];
            if (partner >= 0 && is_basic[static_cast<std::size_t>(partner)]) continue;
            if (std::abs(d[static_cast<Eigen::Index>(j)]) <= options_.optimality_tol) out.alternative_optima = true;
        }
        return out;
    }

private:
    struct ColumnMap {
        double offset = 0.0;
        int pos = -1;
        double pos_sign = 1.0;  // -1 when x = upper - x'
        int neg = -1;
    };

    struct StandardForm {
        Eigen::MatrixXd a;
        Eigen::VectorXd b;
        Eigen::VectorXd c;
        std::vector<ColumnMap> map;
        std::vector<double> row_sign;     // +1/-1 per original row
        std::vector<int> initial_basis;   // slack column usable as a starting basis, or -1
        std::vector<int> partner;         // split free-variable partner column
        std::size_t first_artificial = 0;

        std::size_t cols() const { return static_cast<std::size_t>(a.cols()); }
        std::size_t rows() const { return static_cast<std::size_t>(a.rows()); }
    };

    static StandardForm to_standard_form(const LinearProgram& p) {
        const std::size_t n = p.num_variables();
        StandardForm sf;
        sf.map.resize(n);

        std::size_t col = 0;
        std::vector<std::pair<std::size_t, double>> bound_rows;  // (column, range)
        for (std::size_t j = 0; j < n; ++j) {
            const double lo = p.lower[j];
            const double hi = p.upper[j];
            if (lo > hi) throw Error(ErrorKind::Infeasible, "variable bounds cross");
            auto& m = sf.map[j];
            if (std::isfinite(lo)) {
                m.offset = lo;
                m.pos = static_cast<int>(col++);
                if (std::isfinite(hi)) bound_rows.emplace_back(static_cast<std::size_t>(m.pos), hi - lo);
            } else if (std::isfinite(hi)) {
                m.offset = hi;
                m.pos = static_cast<int>(col++);
                m.pos_sign = -1.0;
            } else {
                m.pos = static_cast<int>(col++);
                m.neg = static_cast<int>(col++);
            }
        }
        const std::size_t structural = col;
        const std::size_t m_rows = p.rows.size() + bound_rows.size();

        std::size_t slacks = bound_rows.size();
        for (const auto& row : p.rows)
            if (row.sense != Sense::Equal) ++slacks;
        const std::size_t total_no_art = structural + slacks;

        // Artificial for every row; unused ones are dropped from the basis at start.
        Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m_rows),
                                                  static_cast<Eigen::Index>(total_no_art + m_rows));
        Eigen::VectorXd b = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m_rows));
        Eigen::VectorXd c = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(total_no_art + m_rows));
        sf.partner.assign(total_no_art + m_rows, -1);
        sf.initial_basis.assign(m_rows, -1);
        sf.row_sign.assign(p.rows.size(), 1.0);

        for (std::size_t j = 0; j < n; ++j) {
            const auto& m = sf.map[j];
            c[m.pos] += m.pos_sign * p.cost[j];
            if (m.neg >= 0) {
                c[m.neg] -= p.cost[j];
                sf.partner[static_cast<std::size_t>(m.pos)] = m.neg;
                sf.partner[static_cast<std::size_t>(m.neg)] = m.pos;
            }
        }

        std::size_t slack_col = structural;
        for (std::size_t r = 0; r < p.rows.size(); ++r) {
            const auto ri = static_cast<Eigen::Index>(r);
            const auto& row = p.rows[r];
            double rhs = row.rhs;
            for (const auto& [j, coef] : row.terms) {
                const auto& m = sf.map[j];
                rhs -= coef * m.offset;
                a(ri, m.pos) += m.pos_sign * coef;
                if (m.neg >= 0) a(ri, m.neg) -= coef;
            }
            int slack = -1;
            if (row.sense == Sense::LessEqual) {
                slack = static_cast<int>(slack_col++);
                a(ri, slack) = 1.0;
            } else if (row.sense == Sense::GreaterEqual) {
                slack = static_cast<int>(slack_col++);
                a(ri, slack) = -1.0;
            }
            if (rhs < 0.0) {
                a.row(ri) *= -1.0;
                rhs = -rhs;
                sf.row_sign[r] = -1.0;
            }
            b[ri] = rhs;
            if (slack >= 0 && a(ri, slack) > 0.0) sf.initial_basis[r] = slack;
        }
        for (std::size_t k = 0; k < bound_rows.size(); ++k) {
            const auto ri = static_cast<Eigen::Index>(p.rows.size() + k);
            a(ri, static_cast<Eigen::Index>(bound_rows[k].first)) = 1.0;
            const auto s = static_cast<Eigen::Index>(slack_col++);
            a(ri, s) = 1.0;
            b[ri] = bound_rows[k].second;
            sf.initial_basis[p.rows.size() + k] = static_cast<int>(s);
        }
        sf.first_artificial = total_no_art;
        for (std::size_t r = 0; r < m_rows; ++r)
            a(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(total_no_art + r)) = 1.0;

        sf.a = std::move(a);
        sf.b = std::move(b);
        sf.c = std::move(c);
        return sf;
    }

    struct Tableau {
        const StandardForm& sf;
        const Options& opt;
        std::vector<std::size_t> basis;
        Eigen::MatrixXd binv;
        Eigen::VectorXd xb;
        std::vector<bool> in_basis;
        std::size_t iterations = 0;

        Tableau(const StandardForm& form, const Options& options) : sf(form), opt(options) {
            const std::size_t m = sf.rows();
            basis.resize(m);
            in_basis.assign(sf.cols(), false);
            for (std::size_t r = 0; r < m; ++r) {
                basis[r] = sf.initial_basis[r] >= 0 ? static_cast<std::size_t>(sf.initial_basis[r])
                                                    : sf.first_artificial + r;
                in_basis[basis[r]] = true;
            }
            refactor();
        }

        void refactor() {
            const auto m = static_cast<Eigen::Index>(sf.rows());
            if (m == 0) {
                binv.resize(0, 0);
                xb.resize(0);
                return;
            }
            Eigen::MatrixXd bmat(m, m);
            for (Eigen::Index i = 0; i < m; ++i) bmat.col(i) = sf.a.col(static_cast<Eigen::Index>(basis[static_cast<std::size_t>(i)]));
            binv = bmat.partialPivLu().inverse();
            xb = binv * sf.b;
        }

        Eigen::VectorXd duals(const Eigen::VectorXd& cost) const {
            const auto m = static_cast<Eigen::Index>(sf.rows());
            Eigen::VectorXd cb(m);
            for (Eigen::Index i = 0; i < m; ++i) cb[i] = cost[static_cast<Eigen::Index>(basis[static_cast<std::size_t>(i)])];
            return binv.transpose() * cb;
        }

        void pivot(std::size_t row, std::size_t entering, const Eigen::VectorXd& u) {
            const auto r = static_cast<Eigen::Index>(row);
            const double piv = u[r];
            binv.row(r) /= piv;
            xb[r] /= piv;
            for (Eigen::Index i = 0; i < binv.rows(); ++i) {
                if (i == r || u[i] == 0.0) continue;
                binv.row(i) -= u[i] * binv.row(r);
                xb[i] -= u[i] * xb[r];
            }
            in_basis[basis[row]] = false;
            basis[row] = entering;
            in_basis[entering] = true;
            ++iterations;
            if (iterations % opt.refactor_every == 0) refactor();
        }

        Status run(const Eigen::VectorXd& cost, bool allow_artificial) {
            const std::size_t limit = allow_artificial ? sf.cols() : sf.first_artificial;
            std::size_t degenerate_run = 0;
            bool bland = false;
            while (true) {
                if (iterations >= opt.max_iterations) return Status::IterationLimit;
                Eigen::VectorXd y = duals(cost);

                std::size_t entering = limit;
                double best = -opt.optimality_tol;
                for (std::size_t j = 0; j < limit; ++j) {
                    if (in_basis[j]) continue;
                    const double d = cost[static_cast<Eigen::Index>(j)] - y.dot(sf.a.col(static_cast<Eigen::Index>(j)));
                    if (d < best) {
                        best = d;
                        entering = j;
                        if (bland) break;
                    }
                }
                if (entering == limit) return Status::Optimal;

                Eigen::VectorXd u = binv * sf.a.col(static_cast<Eigen::Index>(entering));
                std::size_t leaving = basis.size();
                double ratio = kInf;
                for (std::size_t i = 0; i < basis.size(); ++i) {
                    const auto ii = static_cast<Eigen::Index>(i);
                    if (u[ii] <= opt.pivot_tol) continue;
                    const double q = std::max(0.0, xb[ii]) / u[ii];
                    if (q < ratio - 1e-12 ||
                        (q <= ratio + 1e-12 && leaving < basis.size() && basis[i] < basis[leaving])) {
                        ratio = std::min(ratio, q);
                        leaving = i;
                    }
                }
                if (leaving == basis.size()) return Status::Unbounded;

                degenerate_run = ratio <= opt.feasibility_tol ? degenerate_run + 1 : 0;
                if (degenerate_run >= opt.degenerate_run_before_bland) bland = true;
                pivot(leaving, entering, u);
            }
        }

        /// Pivots zero-level artificials out of the basis; rows where that is
        /// impossible are redundant and keep their artificial at zero.
        void evict_artificials() {
            for (std::size_t i = 0; i < basis.size(); ++i) {
                if (basis[i] < sf.first_artificial) continue;
                Eigen::RowVectorXd row = binv.row(static_cast<Eigen::Index>(i)) * sf.a.leftCols(static_cast<Eigen::Index>(sf.first_artificial));
                std::size_t best = sf.first_artificial;
                double mag = 1e-9;
                for (std::size_t j = 0; j < sf.first_artificial; ++j) {
                    if (in_basis[j]) continue;
                    if (std::abs(row[static_cast<Eigen::Index>(j)]) > mag) {
                        mag = std::abs(row[static_cast<Eigen::Index>(j)]);
                        best = j;
                    }
                }
                if (best == sf.first_artificial) continue;
                Eigen::VectorXd u = binv * sf.a.col(static_cast<Eigen::Index>(best));
                pivot(i, best, u);
            }
        }
    };

    Options options_;
};

}  // namespace carbonflow::lp
