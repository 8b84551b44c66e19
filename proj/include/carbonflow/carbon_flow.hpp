#pragma once

#include "carbonflow/power_flow.hpp"

#include <Eigen/SparseCore>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace carbonflow {

/// A bilateral delivery claim: `mw` of the source's output is consumed by `load_id`.
struct Contract {
    std::string load_id;
    std::string source_id;  // generator or storage unit
    double mw = 0.0;
};

enum class MixingRuleKind { ProportionalSharing, ContractPriority };

constexpr std::string_view to_string(MixingRuleKind kind) {
    return kind == MixingRuleKind::ProportionalSharing ? "proportional_sharing" : "contract_priority";
}

struct MixingRule {
    MixingRuleKind kind = MixingRuleKind::ProportionalSharing;
    std::vector<Contract> contracts;

    static MixingRule proportional() { return {}; }
    static MixingRule contract_priority(std::vector<Contract> contracts) {
        return {MixingRuleKind::ContractPriority, std::move(contracts)};
    }
};

/// Nodal/branch intensities and every emission-flow quantity of one timestep.
/// Line carbon flows are signed like the power flows they ride on. Rates are ton/h.
struct CarbonFlowSolution {
    MixingRuleKind rule = MixingRuleKind::ProportionalSharing;

    std::vector<double> bus_intensity;      // ton/MWh
    std::vector<bool> zero_throughflow;     // buses where w is defined as 0
    std::vector<double> line_intensity;     // ton/MWh of the sending-end flow
    std::vector<double> line_carbon_sending;
    std::vector<double> line_carbon_receiving;
    std::vector<double> line_carbon_loss;   // >= 0
    std::vector<double> generator_emissions;
    std::vector<double> load_emissions;
    std::vector<double> load_intensity;
    std::vector<double> storage_carbon_in;   // absorbed while charging
    std::vector<double> storage_carbon_out;  // injected while discharging
    std::vector<double> import_emissions;    // per bus
    std::vector<double> adjustment_carbon;   // per bus, carbon leaving with negative adjustments

    double total_source_carbon() const {
        double s = 0.0;
        for (double v : generator_emissions) s += v;
        for (double v : import_emissions) s += v;
        for (double v : storage_carbon_out) s += v;
        return s;
    }

    double total_sink_carbon() const {
        double s = 0.0;
        for (double v : load_emissions) s += v;
        for (double v : line_carbon_loss) s += v;
        for (double v : storage_carbon_in) s += v;
        for (double v : adjustment_carbon) s += v;
        return s;
    }
};

struct CarbonFlowOptions {
    // Intensity of discharging storage units (ton/MWh); missing entries are 0.
    std::vector<double> storage_intensity;
    double consistency_tol_mw = 1e-6;
};

struct DeliverabilityVerdict {
    bool deliverable = false;
    double max_deliverable_mw = 0.0;
    std::vector<std::string> bottleneck_lines;
};

namespace detail {

/// Edmonds-Karp over buses; one arc per line in the realized flow direction.
class MaxFlow {
public:
    MaxFlow(std::size_t nodes) : adj_(nodes) {}

    void add_arc(std::size_t from, std::size_t to, double capacity, std::size_t line) {
        adj_[from].push_back(arcs_.size());
        arcs_.push_back({to, capacity, 0.0, line, true});
        adj_[to].push_back(arcs_.size());
        arcs_.push_back({from, 0.0, 0.0, line, false});
    }

    /// Pushes up to `limit` from source to sink; returns the amount routed.
    double run(std::size_t source, std::size_t sink, double limit, double tol) {
        double total = 0.0;
        while (total < limit - tol) {
            std::vector<std::ptrdiff_t> via(adj_.size(), -1);
            std::vector<bool> seen(adj_.size(), false);
            std::deque<std::size_t> queue{source};
            seen[source] = true;
            while (!queue.empty() && !seen[sink]) {
                auto u = queue.front();
                queue.pop_front();
                for (auto a : adj_[u]) {
                    const auto& arc = arcs_[a];
                    if (!seen[arc.to] && residual(a) > tol) {
                        seen[arc.to] = true;
                        via[arc.to] = static_cast<std::ptrdiff_t>(a);
                        queue.push_back(arc.to);
                    }
                }
            }
            if (!seen[sink]) break;
            double push = limit - total;
            for (auto v = sink; v != source;) {
                auto a = static_cast<std::size_t>(via[v]);
                push = std::min(push, residual(a));
                v = arcs_[a ^ 1U].to;
            }
            for (auto v = sink; v != source;) {
                auto a = static_cast<std::size_t>(via[v]);
                arcs_[a].flow += push;
                arcs_[a ^ 1U].flow -= push;
                v = arcs_[a ^ 1U].to;
            }
            total += push;
        }
        return total;
    }

    /// Net routed flow per line (indexed by line id position).
    std::vector<double> line_flow(std::size_t lines) const {
        std::vector<double> out(lines, 0.0);
        for (const auto& arc : arcs_)
            if (arc.forward) out[arc.line] += arc.flow;
        return out;
    }

    /// Nodes reachable from `source` in the residual graph left by the last run.
    std::vector<bool> reachable(std::size_t source, double tol) const {
        std::vector<bool> seen(adj_.size(), false);
        std::deque<std::size_t> queue{source};
        seen[source] = true;
        while (!queue.empty()) {
            auto u = queue.front();
            queue.pop_front();
            for (auto a : adj_[u])
                if (!seen[arcs_[a].to] && residual(a) > tol) {
                    seen[arcs_[a].to] = true;
                    queue.push_back(arcs_[a].to);
                }
        }
        return seen;
    }

private:
    struct Arc {
        std::size_t to;
        double capacity;
        double flow;
        std::size_t line;
        bool forward;
    };

    double residual(std::size_t a) const { return arcs_[a].capacity - arcs_[a].flow; }

    std::vector<std::vector<std::size_t>> adj_;
    std::vector<Arc> arcs_;
};

inline std::size_t sending_bus(const Network& net, const FlowSolution& flow, std::size_t l) {
    return flow.sending_mw[l] >= 0.0 ? net.from_index(l) : net.to_index(l);
}

inline std::size_t receiving_bus(const Network& net, const FlowSolution& flow, std::size_t l) {
    return flow.sending_mw[l] >= 0.0 ? net.to_index(l) : net.from_index(l);
}

struct ContractSource {
    std::size_t bus;
    double output_mw;
    double intensity;
};

inline ContractSource resolve_source(const Network& net, const FlowSolution& flow, const std::string& id,
                                     std::span<const double> storage_intensity) {
    if (auto k = net.generator_index(id))
        return {net.bus_at(net.generators()[*k].bus), flow.gen_mw[*k], net.generators()[*k].gef};
    if (auto s = net.storage_index(id)) {
        const double discharge = std::max(0.0, -flow.storage_mw[*s]);
        const double w = *s < storage_intensity.size() ? storage_intensity[*s] : 0.0;
        return {net.bus_at(net.storage_units()[*s].bus), discharge, w};
    }
    throw Error(ErrorKind::UnknownId, "unknown contract source '" + id + "'");
}

inline MaxFlow build_flow_graph(const Network& net, const FlowSolution& flow, std::span<const double> capacity) {
    MaxFlow graph(net.buses().size());
    for (std::size_t l = 0; l < net.lines().size(); ++l)
        if (flow.sending_mw[l] != 0.0 && capacity[l] > 0.0)
            graph.add_arc(sending_bus(net, flow, l), receiving_bus(net, flow, l), capacity[l], l);
    return graph;
}

inline std::vector<double> realized_capacity(const FlowSolution& flow) {
    std::vector<double> cap(flow.receiving_mw.size());
    for (std::size_t l = 0; l < cap.size(); ++l) cap[l] = std::abs(flow.receiving_mw[l]);
    return cap;
}

}  // namespace detail

/// Can `contract.mw` travel from the source's bus to the load's bus along
/// realized flow directions without exceeding any line's realized (receiving-end) flow?
inline DeliverabilityVerdict check_deliverability(const Network& net, const FlowSolution& flow,
                                                  const Contract& contract, double tol = 1e-9) {
    auto load = net.load_index(contract.load_id);
    if (!load) throw Error(ErrorKind::UnknownId, "unknown load '" + contract.load_id + "'");
    const auto source = detail::resolve_source(net, flow, contract.source_id, {});
    const auto sink_bus = net.bus_at(net.loads()[*load].bus);

    DeliverabilityVerdict verdict;
    if (contract.mw <= 0.0 || source.bus == sink_bus) {
        verdict.deliverable = true;
        verdict.max_deliverable_mw = source.bus == sink_bus ? kUnbounded : 0.0;
        return verdict;
    }
    auto capacity = detail::realized_capacity(flow);
    auto graph = detail::build_flow_graph(net, flow, capacity);
    verdict.max_deliverable_mw = graph.run(source.bus, sink_bus, kUnbounded, tol);
    verdict.deliverable = verdict.max_deliverable_mw >= contract.mw - tol;
    if (!verdict.deliverable) {
        // Lines across the minimum cut: saturated, idle, or flowing the other way.
        auto side = graph.reachable(source.bus, tol);
        for (std::size_t l = 0; l < net.lines().size(); ++l)
            if (side[net.from_index(l)] != side[net.to_index(l)]) verdict.bottleneck_lines.push_back(net.lines()[l].id);
    }
    return verdict;
}

/// Solves the virtual carbon flow riding on `flow`.
///
/// Proportional sharing: every outflow of bus i carries the nodal intensity w_i with
///   w_i (sum_in P_recv + sum_src P) = sum_in w_sender P_recv + sum_src w_src P.
/// Contract priority: each contract's MW is routed from source to sink along realized
/// flows and carries the source's intensity; the residual flows (with all line
/// losses) mix proportionally.
inline CarbonFlowSolution solve_carbon_flow(const Network& net, const FlowSolution& flow,
                                            const MixingRule& rule = {}, const CarbonFlowOptions& options = {}) {
    const std::size_t nb = net.buses().size();
    const std::size_t nl = net.lines().size();
    const std::size_t ng = net.generators().size();
    const std::size_t nd = net.loads().size();
    const std::size_t ns = net.storage_units().size();

    double scale = 1.0;
    for (double v : flow.gen_mw) scale = std::max(scale, std::abs(v));
    for (double v : flow.load_mw) scale = std::max(scale, std::abs(v));
    for (double v : flow.sending_mw) scale = std::max(scale, std::abs(v));
    {
        auto report = check_flow_consistency(net, flow, options.consistency_tol_mw * scale);
        if (!report.ok())
            throw Error(ErrorKind::InvalidArgument, "inconsistent flow at " + report.violations.front().element_id +
                                                        ": " + report.violations.front().message);
    }
    for (std::size_t k = 0; k < ng; ++k)
        if (flow.gen_mw[k] < -options.consistency_tol_mw * scale)
            throw Error(ErrorKind::InvalidArgument, "negative output of generator " + net.generators()[k].id);
    const double tol = 1e-12 * scale;

    auto storage_w = [&](std::size_t s) {
        return s < options.storage_intensity.size() ? options.storage_intensity[s] : 0.0;
    };

    // Residual quantities start as the physical ones.
    std::vector<double> res_send(nl), res_recv(nl);
    for (std::size_t l = 0; l < nl; ++l) {
        res_send[l] = std::abs(flow.sending_mw[l]);
        res_recv[l] = std::abs(flow.receiving_mw[l]);
    }
    std::vector<double> res_gen(ng);
    for (std::size_t k = 0; k < ng; ++k) res_gen[k] = std::max(0.0, flow.gen_mw[k]);
    std::vector<double> res_discharge(ns);
    for (std::size_t s = 0; s < ns; ++s) res_discharge[s] = std::max(0.0, -flow.storage_mw[s]);
    std::vector<double> res_load = flow.load_mw;

    std::vector<double> contract_line_carbon(nl, 0.0);
    std::vector<double> routed(nl, 0.0);
    std::vector<double> contract_load_carbon(nd, 0.0);

    if (rule.kind == MixingRuleKind::ContractPriority) {
        const double ctol = options.consistency_tol_mw * scale;
        for (const auto& c : rule.contracts) {
            auto h = net.load_index(c.load_id);
            if (!h) throw Error(ErrorKind::UnknownId, "unknown contract load '" + c.load_id + "'");
            const auto src = detail::resolve_source(net, flow, c.source_id, options.storage_intensity);
            if (!(c.mw >= 0.0)) throw Error(ErrorKind::InfeasibleContract, "negative contracted MW");
            if (c.mw == 0.0) continue;

            double* remaining = nullptr;
            if (auto k = net.generator_index(c.source_id)) remaining = &res_gen[*k];
            else remaining = &res_discharge[*net.storage_index(c.source_id)];
            if (c.mw > *remaining + ctol)
                throw Error(ErrorKind::InfeasibleContract,
                            "contracts on " + c.source_id + " exceed its output");
            if (c.mw > res_load[*h] + ctol)
                throw Error(ErrorKind::InfeasibleContract, "contracts on " + c.load_id + " exceed its demand");

            const auto sink_bus = net.bus_at(net.loads()[*h].bus);
            if (src.bus != sink_bus) {
                std::vector<double> capacity(nl);
                for (std::size_t l = 0; l < nl; ++l) capacity[l] = std::max(0.0, res_recv[l]);
                auto graph = detail::build_flow_graph(net, flow, capacity);
                const double moved = graph.run(src.bus, sink_bus, c.mw, tol);
                if (moved < c.mw - ctol)
                    throw Error(ErrorKind::InfeasibleContract,
                                c.source_id + " -> " + c.load_id + " not deliverable (" + std::to_string(moved) +
                                    " of " + std::to_string(c.mw) + " MW)");
                auto path = graph.line_flow(nl);
                for (std::size_t l = 0; l < nl; ++l) {
                    if (path[l] == 0.0) continue;
                    routed[l] += path[l];
                    res_send[l] = std::max(0.0, res_send[l] - path[l]);
                    res_recv[l] = std::max(0.0, res_recv[l] - path[l]);
                    contract_line_carbon[l] += path[l] * src.intensity;
                }
            }
            *remaining = std::max(0.0, *remaining - c.mw);
            res_load[*h] = std::max(0.0, res_load[*h] - c.mw);
            contract_load_carbon[*h] += c.mw * src.intensity;
        }
    }

    // Residual sources and throughflow per bus.
    std::vector<double> source_mw(nb, 0.0), source_carbon(nb, 0.0);
    for (std::size_t k = 0; k < ng; ++k) {
        const auto b = net.bus_at(net.generators()[k].bus);
        source_mw[b] += res_gen[k];
        source_carbon[b] += res_gen[k] * net.generators()[k].gef;
    }
    for (std::size_t s = 0; s < ns; ++s) {
        const auto b = net.bus_at(net.storage_units()[s].bus);
        source_mw[b] += res_discharge[s];
        source_carbon[b] += res_discharge[s] * storage_w(s);
    }
    for (std::size_t b = 0; b < flow.imports.size(); ++b) {
        source_mw[b] += flow.imports[b].mw;
        source_carbon[b] += flow.imports[b].mw * flow.imports[b].intensity;
    }
    for (std::size_t b = 0; b < flow.adjustment_mw.size(); ++b)
        if (flow.adjustment_mw[b] > 0.0) source_mw[b] += flow.adjustment_mw[b];

    std::vector<double> throughflow = source_mw;
    for (std::size_t l = 0; l < nl; ++l)
        if (flow.sending_mw[l] != 0.0) throughflow[detail::receiving_bus(net, flow, l)] += res_recv[l];

    CarbonFlowSolution out;
    out.rule = rule.kind;
    out.bus_intensity.assign(nb, 0.0);
    out.zero_throughflow.assign(nb, false);

    std::vector<int> unknown(nb, -1);
    int dim = 0;
    for (std::size_t b = 0; b < nb; ++b) {
        if (throughflow[b] > tol) unknown[b] = dim++;
        else out.zero_throughflow[b] = true;
    }
    for (std::size_t h = 0; h < nd; ++h) {
        const auto b = net.bus_at(net.loads()[h].bus);
        if (out.zero_throughflow[b] && res_load[h] > options.consistency_tol_mw * scale)
            throw Error(ErrorKind::ZeroThroughflowNode,
                        "load " + net.loads()[h].id + " sits at bus " + net.buses()[b].id + " with no supply");
    }

    // Every energized bus must be reachable from a residual source.
    {
        std::vector<bool> reached(nb, false);
        std::deque<std::size_t> queue;
        for (std::size_t b = 0; b < nb; ++b)
            if (source_mw[b] > tol) {
                reached[b] = true;
                queue.push_back(b);
            }
        std::vector<std::vector<std::size_t>> out_lines(nb);
        for (std::size_t l = 0; l < nl; ++l)
            if (flow.sending_mw[l] != 0.0 && res_recv[l] > 0.0)
                out_lines[detail::sending_bus(net, flow, l)].push_back(l);
        while (!queue.empty()) {
            auto b = queue.front();
            queue.pop_front();
            for (auto l : out_lines[b]) {
                auto r = detail::receiving_bus(net, flow, l);
                if (!reached[r]) {
                    reached[r] = true;
                    queue.push_back(r);
                }
            }
        }
        std::string orphans;
        for (std::size_t b = 0; b < nb; ++b)
            if (unknown[b] >= 0 && !reached[b]) orphans += (orphans.empty() ? "" : ",") + net.buses()[b].id;
        if (!orphans.empty())
            throw Error(ErrorKind::SingularSystem, "no generation reaches buses " + orphans);
    }

    if (dim > 0) {
        std::vector<Eigen::Triplet<double>> entries;
        Eigen::VectorXd rhs(dim);
        for (std::size_t b = 0; b < nb; ++b) {
            if (unknown[b] < 0) continue;
            entries.emplace_back(unknown[b], unknown[b], throughflow[b]);
            rhs[unknown[b]] = source_carbon[b];
        }
        for (std::size_t l = 0; l < nl; ++l) {
            if (flow.sending_mw[l] == 0.0 || res_recv[l] == 0.0) continue;
            const int i = unknown[detail::receiving_bus(net, flow, l)];
            const int m = unknown[detail::sending_bus(net, flow, l)];
            if (i >= 0 && m >= 0) entries.emplace_back(i, m, -res_recv[l]);
        }
        Eigen::SparseMatrix<double> a(dim, dim);
        a.setFromTriplets(entries.begin(), entries.end());
        a.makeCompressed();
        Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
        lu.compute(a);
        if (lu.info() != Eigen::Success) throw Error(ErrorKind::SingularSystem, "carbon flow matrix is singular");
        Eigen::VectorXd w = lu.solve(rhs);
        if (lu.info() != Eigen::Success || !w.allFinite())
            throw Error(ErrorKind::SingularSystem, "carbon flow solve failed");
        for (std::size_t b = 0; b < nb; ++b)
            if (unknown[b] >= 0) out.bus_intensity[b] = std::max(0.0, w[unknown[b]]);
    }

    const auto& w = out.bus_intensity;
    out.line_intensity.assign(nl, 0.0);
    out.line_carbon_sending.assign(nl, 0.0);
    out.line_carbon_receiving.assign(nl, 0.0);
    out.line_carbon_loss.assign(nl, 0.0);
    for (std::size_t l = 0; l < nl; ++l) {
        const double s = flow.sending_mw[l];
        if (s == 0.0) continue;
        const double ws = w[detail::sending_bus(net, flow, l)];
        const double sign = s > 0.0 ? 1.0 : -1.0;
        const double e_send = ws * res_send[l] + contract_line_carbon[l];
        const double e_loss = ws * flow.loss_mw[l];
        out.line_carbon_sending[l] = sign * e_send;
        out.line_carbon_loss[l] = e_loss;
        out.line_carbon_receiving[l] = sign * (e_send - e_loss);
        out.line_intensity[l] = routed[l] == 0.0 ? ws : e_send / std::abs(s);
    }

    out.generator_emissions.resize(ng);
    for (std::size_t k = 0; k < ng; ++k) out.generator_emissions[k] = net.generators()[k].gef * flow.gen_mw[k];

    out.load_emissions.resize(nd);
    out.load_intensity.resize(nd);
    for (std::size_t h = 0; h < nd; ++h) {
        const double wb = w[net.bus_at(net.loads()[h].bus)];
        out.load_emissions[h] = wb * res_load[h] + contract_load_carbon[h];
        out.load_intensity[h] = flow.load_mw[h] > 0.0 ? out.load_emissions[h] / flow.load_mw[h] : wb;
    }

    out.storage_carbon_in.assign(ns, 0.0);
    out.storage_carbon_out.assign(ns, 0.0);
    for (std::size_t s = 0; s < ns; ++s) {
        const double p = flow.storage_mw[s];
        if (p > 0.0) out.storage_carbon_in[s] = w[net.bus_at(net.storage_units()[s].bus)] * p;
        else if (p < 0.0) out.storage_carbon_out[s] = storage_w(s) * -p;
    }

    out.import_emissions.assign(nb, 0.0);
    for (std::size_t b = 0; b < flow.imports.size(); ++b)
        out.import_emissions[b] = flow.imports[b].mw * flow.imports[b].intensity;
    out.adjustment_carbon.assign(nb, 0.0);
    for (std::size_t b = 0; b < flow.adjustment_mw.size(); ++b)
        if (flow.adjustment_mw[b] < 0.0) out.adjustment_carbon[b] = w[b] * -flow.adjustment_mw[b];
    return out;
}

/// Carbon inflow minus outflow at every bus (ton/h).
inline std::vector<double> carbon_balance_residual(const Network& net, const FlowSolution& flow,
                                                   const CarbonFlowSolution& cf) {
    std::vector<double> res(net.buses().size(), 0.0);
    for (std::size_t k = 0; k < cf.generator_emissions.size(); ++k)
        res[net.bus_at(net.generators()[k].bus)] += cf.generator_emissions[k];
    for (std::size_t h = 0; h < cf.load_emissions.size(); ++h)
        res[net.bus_at(net.loads()[h].bus)] -= cf.load_emissions[h];
    for (std::size_t s = 0; s < cf.storage_carbon_in.size(); ++s) {
        const auto b = net.bus_at(net.storage_units()[s].bus);
        res[b] += cf.storage_carbon_out[s] - cf.storage_carbon_in[s];
    }
    for (std::size_t b = 0; b < res.size(); ++b) res[b] += cf.import_emissions[b] - cf.adjustment_carbon[b];
    for (std::size_t l = 0; l < cf.line_carbon_sending.size(); ++l) {
        if (flow.sending_mw[l] == 0.0) continue;
        res[detail::sending_bus(net, flow, l)] -= std::abs(cf.line_carbon_sending[l]);
        res[detail::receiving_bus(net, flow, l)] += std::abs(cf.line_carbon_receiving[l]);
    }
    return res;
}

}  // namespace carbonflow
