#pragma once

#include "carbonflow/carbon_flow.hpp"
#include "carbonflow/lp.hpp"
#include "carbonflow/power_flow.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace carbonflow {

struct CopfProblem {
    Snapshot snapshot;
    double carbon_price = 0.0;  // currency / ton
    std::map<std::string, double> nodal_intensity_caps;  // bus id -> ton/MWh
    std::optional<double> total_emission_cap;            // ton/h
    double power_weight = 1.0;
    double carbon_weight = 1.0;
    // Intensity at which scheduled storage discharge enters the carbon flow.
    std::vector<double> storage_intensity;
    std::size_t max_iterations = 50;
    double cap_tolerance = 1e-6;  // ton/MWh
};

struct CapIteration {
    std::size_t iteration = 0;
    double objective = 0.0;
    double max_violation = 0.0;
    std::vector<std::string> violated_buses;
};

struct DispatchResult {
    std::vector<double> gen_mw;  // network generator order
    std::vector<double> line_flow_mw;
    std::vector<double> angle_rad;
    double objective = 0.0;        // currency / h
    double dual_objective = 0.0;
    double total_emissions = 0.0;  // ton / h
    std::vector<double> lmp;       // per bus, dual of nodal balance
    // Marginal value of one more MW of capacity in the direction of flow; >= 0 on
    // lines loaded at +capacity, <= 0 at -capacity, 0 when not binding.
    std::vector<double> line_congestion_dual;
    std::vector<std::string> binding_lines;
    std::optional<double> emission_cap_dual;
    bool degenerate_duals = false;
    bool alternative_optima = false;
    std::size_t lp_iterations = 0;
    std::vector<CapIteration> iteration_log;

    double certificate_gap() const {
        return std::abs(objective - dual_objective) / std::max(1.0, std::abs(objective));
    }
};

/// Raised when capped C-OPF stops at its iteration limit; carries the best iterate.
class NotConvergedError : public Error {
public:
    NotConvergedError(const std::string& message, DispatchResult best)
        : Error(ErrorKind::NotConverged, message), best_(std::move(best)) {}

    const DispatchResult& best_iterate() const { return best_; }

private:
    DispatchResult best_;
};

/// Linear cut  sum_k a_k g_k + sum_b c_b theta_b <= rhs  in MW-space coefficients.
struct LinearCut {
    std::vector<double> gen_coef;    // per generator (network order)
    std::vector<double> theta_coef;  // per bus
    double rhs = 0.0;
};

namespace detail {

struct DispatchLp {
    lp::LinearProgram program;
    std::vector<std::size_t> gen_var;     // network generator -> LP column
    std::vector<int> theta_var;           // bus -> LP column (-1 for slack)
    std::vector<std::size_t> balance_row; // bus -> row
    std::vector<int> upper_row, lower_row;  // line -> row (-1 when unconstrained)
    std::optional<std::size_t> emission_row;
};

inline std::vector<std::size_t> generators_by_id(const Network& net) {
    std::vector<std::size_t> order(net.generators().size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return net.generators()[a].id < net.generators()[b].id; });
    return order;
}

inline DispatchLp build_dispatch_lp(const Network& net, const CopfProblem& problem,
                                    const std::vector<LinearCut>& cuts) {
    const auto& snap = problem.snapshot;
    const std::size_t nb = net.buses().size();
    const std::size_t slack = net.slack_index();
    DispatchLp d;
    auto& p = d.program;

    // Columns in lexicographic generator-id order fix the pivoting preference.
    d.gen_var.assign(net.generators().size(), 0);
    for (auto k : generators_by_id(net)) {
        const auto& g = net.generators()[k];
        const double cost = problem.power_weight * g.marginal_cost + problem.carbon_weight * problem.carbon_price * g.gef;
        d.gen_var[k] = p.add_variable(cost, g.p_min, g.p_max);
    }
    d.theta_var.assign(nb, -1);
    for (std::size_t b = 0; b < nb; ++b)
        if (b != slack) d.theta_var[b] = static_cast<int>(p.add_variable(0.0, -lp::kInf, lp::kInf));

    // Fixed injections: loads, storage schedule, imports, adjustments.
    std::vector<double> fixed(nb, 0.0);
    auto loads = load_vector(net, snap);
    for (std::size_t h = 0; h < loads.size(); ++h) fixed[net.bus_at(net.loads()[h].bus)] -= loads[h];
    auto storage = storage_vector(net, snap);
    for (std::size_t s = 0; s < storage.size(); ++s) fixed[net.bus_at(net.storage_units()[s].bus)] -= storage[s];
    for (const auto& [bus, inj] : snap.imports) fixed[net.bus_at(bus)] += inj.mw;
    for (const auto& [bus, mw] : snap.adjustment_mw) fixed[net.bus_at(bus)] += mw;

    // Flow of line l expressed on theta columns.
    auto flow_terms = [&](std::size_t l, double scale) {
        std::vector<std::pair<std::size_t, double>> terms;
        const double y = scale * net.base_mva() / net.lines()[l].reactance;
        if (d.theta_var[net.from_index(l)] >= 0) terms.emplace_back(d.theta_var[net.from_index(l)], y);
        if (d.theta_var[net.to_index(l)] >= 0) terms.emplace_back(d.theta_var[net.to_index(l)], -y);
        return terms;
    };

    std::vector<std::vector<std::pair<std::size_t, double>>> balance(nb);
    for (std::size_t k = 0; k < net.generators().size(); ++k)
        balance[net.bus_at(net.generators()[k].bus)].emplace_back(d.gen_var[k], 1.0);
    for (std::size_t l = 0; l < net.lines().size(); ++l) {
        for (auto [col, coef] : flow_terms(l, 1.0)) {
            balance[net.from_index(l)].emplace_back(col, -coef);
            balance[net.to_index(l)].emplace_back(col, coef);
        }
    }
    d.balance_row.resize(nb);
    for (std::size_t b = 0; b < nb; ++b) d.balance_row[b] = p.add_row(balance[b], lp::Sense::Equal, -fixed[b]);

    d.upper_row.assign(net.lines().size(), -1);
    d.lower_row.assign(net.lines().size(), -1);
    for (std::size_t l = 0; l < net.lines().size(); ++l) {
        const double cap = net.lines()[l].capacity_mw;
        if (!std::isfinite(cap)) continue;
        d.upper_row[l] = static_cast<int>(p.add_row(flow_terms(l, 1.0), lp::Sense::LessEqual, cap));
        d.lower_row[l] = static_cast<int>(p.add_row(flow_terms(l, 1.0), lp::Sense::GreaterEqual, -cap));
    }

    if (problem.total_emission_cap) {
        std::vector<std::pair<std::size_t, double>> terms;
        for (std::size_t k = 0; k < net.generators().size(); ++k)
            if (net.generators()[k].gef != 0.0) terms.emplace_back(d.gen_var[k], net.generators()[k].gef);
        d.emission_row = p.add_row(terms, lp::Sense::LessEqual, *problem.total_emission_cap);
    }

    for (const auto& cut : cuts) {
        std::vector<std::pair<std::size_t, double>> terms;
        for (std::size_t k = 0; k < cut.gen_coef.size(); ++k)
            if (cut.gen_coef[k] != 0.0) terms.emplace_back(d.gen_var[k], cut.gen_coef[k]);
        for (std::size_t b = 0; b < cut.theta_coef.size(); ++b)
            if (cut.theta_coef[b] != 0.0 && d.theta_var[b] >= 0) terms.emplace_back(d.theta_var[b], cut.theta_coef[b]);
        p.add_row(terms, lp::Sense::LessEqual, cut.rhs);
    }
    return d;
}

inline DispatchResult solve_dispatch(const Network& net, const CopfProblem& problem,
                                     const std::vector<LinearCut>& cuts, const lp::Solver& solver) {
    auto d = build_dispatch_lp(net, problem, cuts);
    auto sol = solver.solve(d.program);
    if (sol.status == lp::Status::Infeasible)
        throw Error(ErrorKind::Infeasible, "dispatch cannot serve the load within generator and line limits");
    if (sol.status == lp::Status::Unbounded) throw Error(ErrorKind::Unbounded, "dispatch objective is unbounded");
    if (sol.status != lp::Status::Optimal) throw Error(ErrorKind::NotConverged, "LP iteration limit reached");

    DispatchResult r;
    const std::size_t nb = net.buses().size();
    r.gen_mw.resize(net.generators().size());
    for (std::size_t k = 0; k < r.gen_mw.size(); ++k) r.gen_mw[k] = sol.x[d.gen_var[k]];
    r.angle_rad.assign(nb, 0.0);
    for (std::size_t b = 0; b < nb; ++b)
        if (d.theta_var[b] >= 0) r.angle_rad[b] = sol.x[static_cast<std::size_t>(d.theta_var[b])];
    r.line_flow_mw.resize(net.lines().size());
    for (std::size_t l = 0; l < net.lines().size(); ++l)
        r.line_flow_mw[l] = net.base_mva() * (r.angle_rad[net.from_index(l)] - r.angle_rad[net.to_index(l)]) /
                            net.lines()[l].reactance;

    r.objective = sol.objective;
    r.dual_objective = sol.dual_objective;
    r.total_emissions = 0.0;
    for (std::size_t k = 0; k < r.gen_mw.size(); ++k) r.total_emissions += net.generators()[k].gef * r.gen_mw[k];
    r.lmp.resize(nb);
    for (std::size_t b = 0; b < nb; ++b) r.lmp[b] = sol.row_duals[d.balance_row[b]];
    r.line_congestion_dual.assign(net.lines().size(), 0.0);
    for (std::size_t l = 0; l < net.lines().size(); ++l) {
        if (d.upper_row[l] < 0) continue;
        const double rho = sol.row_duals[static_cast<std::size_t>(d.upper_row[l])] +
                           sol.row_duals[static_cast<std::size_t>(d.lower_row[l])];
        r.line_congestion_dual[l] = -rho;
        if (std::abs(std::abs(r.line_flow_mw[l]) - net.lines()[l].capacity_mw) <= 1e-6 * std::max(1.0, net.lines()[l].capacity_mw))
            r.binding_lines.push_back(net.lines()[l].id);
    }
    if (d.emission_row) r.emission_cap_dual = sol.row_duals[*d.emission_row];
    r.degenerate_duals = sol.degenerate_duals;
    r.alternative_optima = sol.alternative_optima;
    r.lp_iterations = sol.iterations;
    return r;
}

}  // namespace detail

inline const lp::Solver& default_lp_solver() {
    static const lp::RevisedSimplex solver;
    return solver;
}

/// Lossless FlowSolution implied by a dispatch (for carbon tracing of LP results).
inline FlowSolution flow_from_dispatch(const Network& net, const Snapshot& snap, const DispatchResult& r) {
    FlowSolution f;
    f.gen_mw = r.gen_mw;
    f.load_mw = load_vector(net, snap);
    f.storage_mw = storage_vector(net, snap);
    f.imports = import_vector(net, snap);
    f.adjustment_mw = adjustment_vector(net, snap);
    f.angle_rad = r.angle_rad;
    f.sending_mw = r.line_flow_mw;
    f.receiving_mw = r.line_flow_mw;
    f.loss_mw.assign(net.lines().size(), 0.0);
    return f;
}

/// Least-cost dispatch with the carbon price folded into each unit's cost:
///   min sum_k (w_p c_k + w_c price gef_k) g_k
/// subject to DC nodal balance, line limits, generator limits (and the optional
/// total emission cap).
inline DispatchResult solve_copf_cost_adder(const Network& net, const CopfProblem& problem,
                                            const lp::Solver& solver = default_lp_solver()) {
    require_valid(net);
    require_valid(net, problem.snapshot);
    if (!(problem.carbon_price >= 0.0)) throw Error(ErrorKind::InvalidArgument, "carbon_price must be >= 0");
    if (problem.total_emission_cap && !(*problem.total_emission_cap > 0.0))
        throw Error(ErrorKind::InvalidArgument, "total_emission_cap must be > 0");
    if (!problem.nodal_intensity_caps.empty())
        throw Error(ErrorKind::InvalidArgument, "nodal intensity caps need solve_copf_intensity_capped");
    auto r = detail::solve_dispatch(net, problem, {}, solver);
    r.iteration_log.push_back({1, r.objective, 0.0, {}});
    return r;
}

/// Nodal-intensity caps by successive linearization. Each round traces the
/// carbon flow of the current dispatch and, for every bus above its cap, adds
///   sum_in (w_sender - cap) P_in + sum_src (w_src - cap) P_src <= 0
/// with upstream intensities and flow directions frozen at the current iterate.
inline DispatchResult solve_copf_intensity_capped(const Network& net, const CopfProblem& problem,
                                                  const lp::Solver& solver = default_lp_solver()) {
    require_valid(net);
    require_valid(net, problem.snapshot);
    if (!(problem.carbon_price >= 0.0)) throw Error(ErrorKind::InvalidArgument, "carbon_price must be >= 0");
    std::vector<std::pair<std::size_t, double>> caps;
    for (const auto& [bus, cap] : problem.nodal_intensity_caps) {
        if (!(cap >= 0.0)) throw Error(ErrorKind::InvalidArgument, "cap on " + bus + " must be >= 0");
        caps.emplace_back(net.bus_at(bus), cap);
    }

    const auto& snap = problem.snapshot;
    const auto storage = storage_vector(net, snap);
    const auto imports = import_vector(net, snap);
    auto storage_w = [&](std::size_t s) {
        return s < problem.storage_intensity.size() ? problem.storage_intensity[s] : 0.0;
    };

    std::vector<LinearCut> cuts;
    std::vector<CapIteration> log;
    std::optional<DispatchResult> best;
    double best_violation = kUnbounded;

    for (std::size_t iter = 1; iter <= problem.max_iterations; ++iter) {
        DispatchResult r = detail::solve_dispatch(net, problem, cuts, solver);
        auto flow = flow_from_dispatch(net, snap, r);
        CarbonFlowOptions cf_options;
        cf_options.storage_intensity = problem.storage_intensity;
        auto cf = solve_carbon_flow(net, flow, MixingRule::proportional(), cf_options);

        CapIteration entry{iter, r.objective, 0.0, {}};
        std::vector<LinearCut> new_cuts;
        for (auto [bus, cap] : caps) {
            const double violation = cf.bus_intensity[bus] - cap;
            if (violation <= problem.cap_tolerance) continue;
            entry.max_violation = std::max(entry.max_violation, violation);
            entry.violated_buses.push_back(net.buses()[bus].id);

            LinearCut cut;
            cut.gen_coef.assign(net.generators().size(), 0.0);
            cut.theta_coef.assign(net.buses().size(), 0.0);
            for (auto k : net.generators_at(bus)) cut.gen_coef[k] = net.generators()[k].gef - cap;
            double constant = imports[bus].mw * (imports[bus].intensity - cap);
            for (auto s : net.storage_at(bus))
                if (storage[s] < 0.0) constant += -storage[s] * (storage_w(s) - cap);
            for (std::size_t l = 0; l < net.lines().size(); ++l) {
                const double f = r.line_flow_mw[l];
                std::size_t sender, receiver;
                double w_sender;
                if (f != 0.0) {
                    sender = f > 0.0 ? net.from_index(l) : net.to_index(l);
                    receiver = f > 0.0 ? net.to_index(l) : net.from_index(l);
                    w_sender = cf.bus_intensity[sender];
                } else {
                    // idle line: only counted when the far end could deliver cleaner energy
                    if (net.from_index(l) != bus && net.to_index(l) != bus) continue;
                    receiver = bus;
                    sender = net.from_index(l) == bus ? net.to_index(l) : net.from_index(l);
                    w_sender = cf.bus_intensity[sender];
                    if (cf.zero_throughflow[sender]) {
                        const auto at = net.generators_at(sender);
                        if (at.empty()) continue;
                        w_sender = kUnbounded;
                        for (auto k : at) w_sender = std::min(w_sender, net.generators()[k].gef);
                    }
                    if (w_sender >= cap) continue;
                }
                if (receiver != bus) continue;
                // Oriented inflow = sign * base/x * (theta_from - theta_to).
                const double sign = receiver == net.to_index(l) ? 1.0 : -1.0;
                const double coef = (w_sender - cap) * sign * net.base_mva() / net.lines()[l].reactance;
                cut.theta_coef[net.from_index(l)] += coef;
                cut.theta_coef[net.to_index(l)] -= coef;
            }
            cut.rhs = -constant;
            new_cuts.push_back(std::move(cut));
        }
        log.push_back(entry);
        r.iteration_log = log;

        if (entry.max_violation < best_violation) {
            best_violation = entry.max_violation;
            best = r;
        }
        if (new_cuts.empty()) return r;
        for (auto& c : new_cuts) cuts.push_back(std::move(c));
    }
    best->iteration_log = log;
    throw NotConvergedError("nodal intensity caps still violated by " + std::to_string(best_violation) +
                                " ton/MWh after " + std::to_string(problem.max_iterations) + " iterations",
                            *best);
}

/// LMPs with their energy (slack-bus) and congestion (PTDF-weighted line dual) parts.
struct PriceDecomposition {
    std::vector<double> lmp;
    double energy_component = 0.0;
    std::vector<double> congestion_component;
    bool carbon_aware = false;  // prices include the carbon cost adder (C-LMP)
    double congestion_rent = 0.0;
};

inline PriceDecomposition extract_prices(const Network& net, const DispatchResult& result, const CopfProblem& problem) {
    PriceDecomposition out;
    out.lmp = result.lmp;
    out.carbon_aware = problem.carbon_price > 0.0;
    out.energy_component = result.lmp.at(net.slack_index());
    auto ptdf = compute_ptdf(net);
    out.congestion_component.assign(net.buses().size(), 0.0);
    for (std::size_t b = 0; b < net.buses().size(); ++b)
        for (std::size_t l = 0; l < net.lines().size(); ++l)
            out.congestion_component[b] -= ptdf(l, b) * result.line_congestion_dual[l];
    for (std::size_t l = 0; l < net.lines().size(); ++l)
        out.congestion_rent += result.line_congestion_dual[l] * result.line_flow_mw[l];
    return out;
}

}  // namespace carbonflow
