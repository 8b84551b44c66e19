#pragma once

#include "carbonflow/accounting.hpp"
#include "carbonflow/carbon_flow.hpp"
#include "carbonflow/consequential.hpp"

#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace carbonflow {

struct StorageState {
    double energy_mwh = 0.0;
    double carbon_ton = 0.0;

    /// Carbon intensity of the stored energy; 0 when empty.
    double intensity() const { return energy_mwh > 0.0 ? carbon_ton / energy_mwh : 0.0; }

    friend bool operator==(const StorageState&, const StorageState&) = default;
};

struct StorageStep {
    StorageState state;
    double attributed_ton = 0.0;  // carbon charged to the owner in this step
};

namespace detail {

inline void check_storage_step(const StorageUnit& unit, const StorageState& state, double power_mw, double dt,
                               double next_energy) {
    const double plim = unit.power_limit_mw * (1.0 + 1e-12) + 1e-9;
    if (std::abs(power_mw) > plim)
        throw Error(ErrorKind::PowerLimitViolated,
                    fmt::format("storage {}: |p| = {} MW exceeds limit {} MW", unit.id, std::abs(power_mw),
                                unit.power_limit_mw));
    const double etol = 1e-9 * std::max(1.0, unit.energy_capacity_mwh);
    if (next_energy < -etol || next_energy > unit.energy_capacity_mwh + etol)
        throw Error(ErrorKind::CapacityViolated,
                    fmt::format("storage {}: energy {} MWh -> {} MWh outside [0, {}] (p = {} MW, dt = {} h)", unit.id,
                                state.energy_mwh, next_energy, unit.energy_capacity_mwh, power_mw, dt));
}

inline double clamp_energy(const StorageUnit& unit, double e) {
    return std::clamp(e, 0.0, unit.energy_capacity_mwh);
}

}  // namespace detail

/// Stored carbon travels with the energy: charging at nodal intensity w adds w*p*dt
/// of carbon, discharging removes carbon at the stored intensity f/e.
/// With efficiency below one only eta of the charged energy is stored, together with
/// eta of its carbon; the remainder is charged to the owner.
inline StorageStep step_water_tank(const StorageState& state, const StorageUnit& unit, double power_mw,
                                   double nodal_intensity, double dt) {
    const double eta = unit.round_trip_efficiency;
    StorageStep out;
    if (power_mw >= 0.0) {
        const double e_next = state.energy_mwh + eta * power_mw * dt;
        detail::check_storage_step(unit, state, power_mw, dt, e_next);
        const double absorbed = nodal_intensity * power_mw * dt;
        out.state.energy_mwh = detail::clamp_energy(unit, e_next);
        out.state.carbon_ton = state.carbon_ton + eta * absorbed;
        out.attributed_ton = (1.0 - eta) * absorbed;
    } else {
        const double drawn = -power_mw * dt;
        const double e_next = state.energy_mwh - drawn;
        detail::check_storage_step(unit, state, power_mw, dt, e_next);
        const double released = state.intensity() * drawn;
        out.state.energy_mwh = detail::clamp_energy(unit, e_next);
        out.state.carbon_ton = std::max(0.0, state.carbon_ton - released);
        if (out.state.energy_mwh <= 1e-12 * std::max(1.0, unit.energy_capacity_mwh)) out.state = {};
        out.attributed_ton = 0.0;
    }
    return out;
}

/// Charging is an ordinary load (emissions w*p*dt go to the owner), discharging is
/// a zero-emission generator; the stored carbon stays zero.
inline StorageStep step_clean_gen_model(const StorageState& state, const StorageUnit& unit, double power_mw,
                                        double nodal_intensity, double dt) {
    StorageStep out;
    if (power_mw >= 0.0) {
        const double e_next = state.energy_mwh + unit.round_trip_efficiency * power_mw * dt;
        detail::check_storage_step(unit, state, power_mw, dt, e_next);
        out.state.energy_mwh = detail::clamp_energy(unit, e_next);
        out.attributed_ton = nodal_intensity * power_mw * dt;
    } else {
        const double e_next = state.energy_mwh + power_mw * dt;
        detail::check_storage_step(unit, state, power_mw, dt, e_next);
        out.state.energy_mwh = detail::clamp_energy(unit, e_next);
    }
    return out;
}

/// Power flow with losses for one snapshot; runs least-cost dispatch when the
/// snapshot does not fix generation.
inline FlowSolution realize_flow(const Network& net, const Snapshot& snap,
                                 const lp::Solver& solver = default_lp_solver(), const PowerFlowOptions& options = {}) {
    if (snap.has_dispatch()) return apply_losses(solve_dc_power_flow(net, snap, options), net, options);
    auto dispatch = dispatch_network_constrained(net, snap, solver);
    Snapshot fixed = snap;
    for (std::size_t k = 0; k < net.generators().size(); ++k) fixed.gen_mw[net.generators()[k].id] = dispatch.gen_mw[k];
    return apply_losses(solve_dc_power_flow(net, fixed, options), net, options);
}

struct HorizonOptions {
    std::optional<StorageModel> model;  // overrides each unit's own model
    MixingRule rule;
    std::vector<StorageState> initial;  // empty: all units start empty
    PowerFlowOptions power_flow;
};

struct HorizonResult {
    std::vector<FlowSolution> flows;
    std::vector<CarbonFlowSolution> carbon;
    std::vector<EmissionReport> reports;
    EmissionReport total;
    std::vector<std::vector<StorageState>> trajectory;  // timesteps + 1 rows, one entry per unit
};

/// Steps every storage unit through the horizon and attributes each timestep.
inline HorizonResult simulate_horizon(const Network& net, const std::vector<Snapshot>& snapshots,
                                      const HorizonOptions& options = {},
                                      const lp::Solver& solver = default_lp_solver()) {
    require_valid(net);
    const auto& units = net.storage_units();
    std::vector<StorageModel> models(units.size());
    for (std::size_t s = 0; s < units.size(); ++s) models[s] = options.model.value_or(units[s].emission_model);
    std::optional<StorageModel> tag;
    if (!units.empty() && std::all_of(models.begin(), models.end(), [&](auto m) { return m == models.front(); }))
        tag = models.front();

    HorizonResult out;
    std::vector<StorageState> state = options.initial;
    if (state.empty()) state.resize(units.size());
    if (state.size() != units.size())
        throw Error(ErrorKind::InvalidArgument, "initial storage states do not match the storage units");
    out.trajectory.push_back(state);

    for (const auto& snap : snapshots) {
        auto flow = realize_flow(net, snap, solver, options.power_flow);
        CarbonFlowOptions cf_options;
        cf_options.storage_intensity.resize(units.size(), 0.0);
        for (std::size_t s = 0; s < units.size(); ++s)
            if (models[s] == StorageModel::WaterTank) cf_options.storage_intensity[s] = state[s].intensity();
        auto cf = solve_carbon_flow(net, flow, options.rule, cf_options);

        auto report = attribute_emissions(net, flow, cf, snap.delta_t, snap.timestep_index, tag);
        for (std::size_t s = 0; s < units.size(); ++s) {
            const double w = cf.bus_intensity[net.bus_at(units[s].bus)];
            StorageStep step;
            try {
                step = models[s] == StorageModel::WaterTank
                           ? step_water_tank(state[s], units[s], flow.storage_mw[s], w, snap.delta_t)
                           : step_clean_gen_model(state[s], units[s], flow.storage_mw[s], w, snap.delta_t);
            } catch (const Error& e) {
                throw Error(ErrorKind::InfeasibleSchedule,
                            fmt::format("timestep {}: {}", snap.timestep_index, e.what()));
            }
            state[s] = step.state;
        }
        out.trajectory.push_back(state);
        out.flows.push_back(std::move(flow));
        out.carbon.push_back(std::move(cf));
        out.reports.push_back(std::move(report));
    }
    out.total = aggregate_horizon(out.reports);
    if (out.reports.empty()) out.total.method = {Method::FlowBased, options.rule.kind, tag};
    return out;
}

}  // namespace carbonflow
