#pragma once

#include "carbonflow/copf.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace carbonflow {

enum class PerturbationKind { LoadChange, InjectionChange };

/// One load (or bus injection) change; positive delta_mw means more load
/// (LoadChange) or more injection (InjectionChange).
struct Perturbation {
    std::string target;
    double delta_mw = 0.0;
    PerturbationKind kind = PerturbationKind::LoadChange;
};

struct CefResult {
    double baseline_emissions = 0.0;   // ton/h
    double perturbed_emissions = 0.0;  // ton/h
    double delta_e = 0.0;
    double delta_mw = 0.0;
    double cef = 0.0;  // ton/MWh
    std::vector<std::string> baseline_binding;
    std::vector<std::string> perturbed_binding;
};

struct MefResult {
    double mef = 0.0;       // central difference
    double forward = 0.0;   // one-sided (E(+eps) - E(0)) / eps
    double backward = 0.0;  // one-sided (E(0) - E(-eps)) / eps
    bool breakpoint = false;
    bool one_sided = false;  // load too small for the backward probe; mef is the forward difference
};

inline constexpr double kBreakpointTolerance = 1e-6;  // ton/MWh

/// Least-cost network-constrained dispatch: C-OPF with zero carbon price.
inline DispatchResult dispatch_network_constrained(const Network& net, const Snapshot& snap,
                                                   const lp::Solver& solver = default_lp_solver()) {
    CopfProblem problem;
    problem.snapshot = snap;
    return solve_copf_cost_adder(net, problem, solver);
}

inline Snapshot apply_perturbation(const Network& net, const Snapshot& snap, const Perturbation& p) {
    Snapshot out = snap;
    if (p.kind == PerturbationKind::LoadChange) {
        auto h = net.load_index(p.target);
        if (!h) throw Error(ErrorKind::UnknownId, "unknown load '" + p.target + "'");
        auto current = load_vector(net, snap)[*h];
        const double next = current + p.delta_mw;
        if (next < 0.0)
            throw Error(ErrorKind::InvalidArgument, "perturbed load " + p.target + " would be negative");
        out.load_mw[p.target] = next;
    } else {
        if (!net.bus_index(p.target)) throw Error(ErrorKind::UnknownId, "unknown bus '" + p.target + "'");
        out.adjustment_mw[p.target] += p.delta_mw;
    }
    return out;
}

/// Consequential emission factor: emission change of the re-dispatch divided by the MW change.
inline CefResult compute_cef(const Network& net, const Snapshot& snap, const Perturbation& perturbation,
                             const lp::Solver& solver = default_lp_solver()) {
    if (perturbation.delta_mw == 0.0) throw Error(ErrorKind::ZeroDelta, "perturbation of 0 MW");
    auto base = dispatch_network_constrained(net, snap, solver);
    auto moved = dispatch_network_constrained(net, apply_perturbation(net, snap, perturbation), solver);
    CefResult r;
    r.baseline_emissions = base.total_emissions;
    r.perturbed_emissions = moved.total_emissions;
    r.delta_e = moved.total_emissions - base.total_emissions;
    r.delta_mw = perturbation.delta_mw;
    r.cef = r.delta_e / r.delta_mw;
    r.baseline_binding = base.binding_lines;
    r.perturbed_binding = moved.binding_lines;
    return r;
}

/// Marginal emission factor of demand at a load (load id) or bus (bus id).
inline MefResult compute_mef(const Network& net, const Snapshot& snap, const std::string& target,
                             double epsilon_mw = 1e-3, const lp::Solver& solver = default_lp_solver()) {
    if (!(epsilon_mw > 0.0)) throw Error(ErrorKind::InvalidArgument, "epsilon_mw must be > 0");
    auto probe = [&](double extra_demand) {
        Perturbation p;
        p.target = target;
        if (net.load_index(target)) {
            p.kind = PerturbationKind::LoadChange;
            p.delta_mw = extra_demand;
        } else if (net.bus_index(target)) {
            p.kind = PerturbationKind::InjectionChange;
            p.delta_mw = -extra_demand;
        } else {
            throw Error(ErrorKind::UnknownId, "unknown load or bus '" + target + "'");
        }
        if (extra_demand == 0.0) return dispatch_network_constrained(net, snap, solver).total_emissions;
        return dispatch_network_constrained(net, apply_perturbation(net, snap, p), solver).total_emissions;
    };
    MefResult r;
    if (auto h = net.load_index(target); h && load_vector(net, snap)[*h] < epsilon_mw) {
        const double e_zero = probe(0.0);
        r.forward = r.backward = r.mef = (probe(epsilon_mw) - e_zero) / epsilon_mw;
        r.one_sided = true;
        return r;
    }
    const double e_minus = probe(-epsilon_mw);
    const double e_zero = probe(0.0);
    const double e_plus = probe(epsilon_mw);
    r.mef = (e_plus - e_minus) / (2.0 * epsilon_mw);
    r.forward = (e_plus - e_zero) / epsilon_mw;
    r.backward = (e_zero - e_minus) / epsilon_mw;
    r.breakpoint = std::abs(r.forward - r.backward) > kBreakpointTolerance;
    return r;
}

}  // namespace carbonflow
