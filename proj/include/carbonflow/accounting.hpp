#pragma once

#include "carbonflow/carbon_flow.hpp"
#include "carbonflow/consequential.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

namespace carbonflow {

enum class Method { AreaAverage, FlowBased, Consequential };

/// How the numbers in a report were produced; reports with different tags never mix.
struct MethodTag {
    Method method = Method::FlowBased;
    std::optional<MixingRuleKind> rule;
    std::optional<StorageModel> storage_model;

    std::string str() const {
        std::string s;
        switch (method) {
        case Method::AreaAverage: s = "area_average"; break;
        case Method::FlowBased: s = "flow_based"; break;
        case Method::Consequential: s = "consequential"; break;
        }
        if (rule) s += ":" + std::string(to_string(*rule));
        if (storage_model) s += ";storage=" + std::string(to_string(*storage_model));
        return s;
    }

    friend bool operator==(const MethodTag&, const MethodTag&) = default;
};

enum class EntityKind { Generator, Load, GridOwner, Storage, Import };

constexpr std::string_view to_string(EntityKind kind) {
    switch (kind) {
    case EntityKind::Generator: return "generator";
    case EntityKind::Load: return "load";
    case EntityKind::GridOwner: return "grid_owner";
    case EntityKind::Storage: return "storage";
    case EntityKind::Import: return "import";
    }
    return "unknown";
}

struct EmissionRecord {
    std::string entity_id;
    EntityKind kind = EntityKind::Load;
    int scope = 2;
    double energy_mwh = 0.0;
    double emissions_ton = 0.0;
};

struct EmissionReport {
    MethodTag method;
    std::optional<std::size_t> first_timestep;
    std::optional<std::size_t> last_timestep;
    double hours = 0.0;
    std::vector<EmissionRecord> records;

    const EmissionRecord* find(std::string_view id, EntityKind kind) const {
        for (const auto& r : records)
            if (r.entity_id == id && r.kind == kind) return &r;
        return nullptr;
    }

    double total(int scope) const {
        double s = 0.0;
        for (const auto& r : records)
            if (r.scope == scope) s += r.emissions_ton;
        return s;
    }

    /// Scope-1 sources minus Scope-2 sinks (including storage net); zero when emissions close.
    double closure_gap() const { return total(1) - total(2); }
};

struct AefOptions {
    std::optional<std::string> area;  // whole grid when empty
    bool consumption_based = false;   // count imports as virtual generators
};

/// Area-average emission factor: sum(GEF * P) / sum(P) over the area's generators.
inline double compute_aef(const Network& net, const FlowSolution& flow, const AefOptions& options = {}) {
    auto in_area = [&](const std::string& bus) {
        return !options.area || net.buses()[net.bus_at(bus)].area == *options.area;
    };
    double emissions = 0.0;
    double generation = 0.0;
    for (std::size_t k = 0; k < net.generators().size(); ++k) {
        const auto& g = net.generators()[k];
        if (!in_area(g.bus)) continue;
        emissions += g.gef * flow.gen_mw[k];
        generation += flow.gen_mw[k];
    }
    if (options.consumption_based)
        for (std::size_t b = 0; b < flow.imports.size(); ++b) {
            if (!in_area(net.buses()[b].id)) continue;
            emissions += flow.imports[b].mw * flow.imports[b].intensity;
            generation += flow.imports[b].mw;
        }
    if (!(generation > 0.0))
        throw Error(ErrorKind::ZeroGeneration,
                    "no generation in " + (options.area ? "area '" + *options.area + "'" : std::string("grid")));
    return emissions / generation;
}

namespace detail {

inline void add_source_records(const Network& net, const FlowSolution& flow, double dt,
                               const std::vector<double>& gen_emissions, EmissionReport& report) {
    for (std::size_t k = 0; k < net.generators().size(); ++k)
        report.records.push_back({net.generators()[k].id, EntityKind::Generator, 1, flow.gen_mw[k] * dt,
                                  gen_emissions[k] * dt});
    for (std::size_t b = 0; b < flow.imports.size(); ++b)
        if (flow.imports[b].mw > 0.0)
            report.records.push_back({"import:" + net.buses()[b].id, EntityKind::Import, 1, flow.imports[b].mw * dt,
                                      flow.imports[b].mw * flow.imports[b].intensity * dt});
}

}  // namespace detail

/// Flow-based attributional report of one timestep: generators Scope 1, loads and
/// the grid owner (losses) Scope 2, storage by its net carbon exchange.
inline EmissionReport attribute_emissions(const Network& net, const FlowSolution& flow, const CarbonFlowSolution& cf,
                                          double delta_t, std::size_t timestep = 0,
                                          std::optional<StorageModel> storage_model = std::nullopt) {
    EmissionReport report;
    report.method = {Method::FlowBased, cf.rule, storage_model};
    report.first_timestep = report.last_timestep = timestep;
    report.hours = delta_t;

    detail::add_source_records(net, flow, delta_t, cf.generator_emissions, report);
    for (std::size_t h = 0; h < net.loads().size(); ++h)
        report.records.push_back({net.loads()[h].id, EntityKind::Load, 2, flow.load_mw[h] * delta_t,
                                  cf.load_emissions[h] * delta_t});
    double loss_carbon = 0.0;
    for (double e : cf.line_carbon_loss) loss_carbon += e;
    report.records.push_back({"grid", EntityKind::GridOwner, 2, flow.total_loss() * delta_t, loss_carbon * delta_t});
    for (std::size_t s = 0; s < net.storage_units().size(); ++s)
        report.records.push_back({net.storage_units()[s].id, EntityKind::Storage, 2, flow.storage_mw[s] * delta_t,
                                  (cf.storage_carbon_in[s] - cf.storage_carbon_out[s]) * delta_t});
    for (std::size_t b = 0; b < cf.adjustment_carbon.size(); ++b)
        if (flow.adjustment_mw[b] < 0.0)
            report.records.push_back({"adjustment:" + net.buses()[b].id, EntityKind::Load, 2,
                                      -flow.adjustment_mw[b] * delta_t, cf.adjustment_carbon[b] * delta_t});
    return report;
}

/// Pool-based report: every consumer is charged the grid-wide average intensity of
/// all sources (generators, imports, discharging storage at the given intensities).
inline EmissionReport attribute_area_average(const Network& net, const FlowSolution& flow, double delta_t,
                                             std::size_t timestep = 0,
                                             const std::vector<double>& storage_intensity = {}) {
    EmissionReport report;
    report.method = {Method::AreaAverage, std::nullopt, std::nullopt};
    report.first_timestep = report.last_timestep = timestep;
    report.hours = delta_t;

    std::vector<double> gen_emissions(net.generators().size());
    double pool_carbon = 0.0;
    double pool_mw = 0.0;
    for (std::size_t k = 0; k < gen_emissions.size(); ++k) {
        gen_emissions[k] = net.generators()[k].gef * flow.gen_mw[k];
        pool_carbon += gen_emissions[k];
        pool_mw += flow.gen_mw[k];
    }
    for (const auto& imp : flow.imports) {
        pool_carbon += imp.mw * imp.intensity;
        pool_mw += imp.mw;
    }
    std::vector<double> out_carbon(net.storage_units().size(), 0.0);
    for (std::size_t s = 0; s < out_carbon.size(); ++s)
        if (flow.storage_mw[s] < 0.0) {
            const double w = s < storage_intensity.size() ? storage_intensity[s] : 0.0;
            out_carbon[s] = -flow.storage_mw[s] * w;
            pool_carbon += out_carbon[s];
            pool_mw += -flow.storage_mw[s];
        }
    if (!(pool_mw > 0.0)) throw Error(ErrorKind::ZeroGeneration, "no generation in grid");
    const double aef = pool_carbon / pool_mw;

    detail::add_source_records(net, flow, delta_t, gen_emissions, report);
    for (std::size_t h = 0; h < net.loads().size(); ++h)
        report.records.push_back({net.loads()[h].id, EntityKind::Load, 2, flow.load_mw[h] * delta_t,
                                  aef * flow.load_mw[h] * delta_t});
    report.records.push_back({"grid", EntityKind::GridOwner, 2, flow.total_loss() * delta_t,
                              aef * flow.total_loss() * delta_t});
    for (std::size_t s = 0; s < net.storage_units().size(); ++s) {
        const double charge = std::max(0.0, flow.storage_mw[s]);
        report.records.push_back({net.storage_units()[s].id, EntityKind::Storage, 2, flow.storage_mw[s] * delta_t,
                                  (aef * charge - out_carbon[s]) * delta_t});
    }
    return report;
}

/// Avoided (negative) or induced (positive) emissions of one action, as a report.
inline EmissionReport consequential_report(const std::string& entity_id, const CefResult& cef, double delta_t,
                                           std::size_t timestep = 0) {
    EmissionReport report;
    report.method = {Method::Consequential, std::nullopt, std::nullopt};
    report.first_timestep = report.last_timestep = timestep;
    report.hours = delta_t;
    report.records.push_back({entity_id, EntityKind::Load, 2, cef.delta_mw * delta_t, cef.delta_e * delta_t});
    return report;
}

/// Entity-wise sum over disjoint timesteps. Refuses to mix accounting methods.
inline EmissionReport aggregate_horizon(const std::vector<EmissionReport>& reports) {
    EmissionReport out;
    if (reports.empty()) return out;
    out.method = reports.front().method;
    using Key = std::tuple<std::string, EntityKind, int>;
    std::map<Key, std::size_t> slot;
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    for (const auto& rep : reports) {
        if (!(rep.method == out.method))
            throw Error(ErrorKind::MixedMethods,
                        "cannot combine '" + out.method.str() + "' with '" + rep.method.str() + "'");
        if (rep.first_timestep) {
            for (auto [a, b] : spans)
                if (*rep.first_timestep <= b && a <= *rep.last_timestep)
                    throw Error(ErrorKind::OverlappingHorizon,
                                "timestep " + std::to_string(*rep.first_timestep) + " counted twice");
            spans.emplace_back(*rep.first_timestep, *rep.last_timestep);
            out.first_timestep = out.first_timestep ? std::min(*out.first_timestep, *rep.first_timestep)
                                                    : *rep.first_timestep;
            out.last_timestep = out.last_timestep ? std::max(*out.last_timestep, *rep.last_timestep)
                                                  : *rep.last_timestep;
        }
        out.hours += rep.hours;
        for (const auto& r : rep.records) {
            Key key{r.entity_id, r.kind, r.scope};
            auto [it, inserted] = slot.emplace(key, out.records.size());
            if (inserted) {
                out.records.push_back(r);
            } else {
                out.records[it->second].energy_mwh += r.energy_mwh;
                out.records[it->second].emissions_ton += r.emissions_ton;
            }
        }
    }
    return out;
}

/// Fixed 9-significant-digit rendering used by every CSV artifact.
inline std::string format_number(double v) {
    if (v == 0.0) v = 0.0;  // drops negative zero
    return fmt::format("{:.9g}", v);
}

inline std::string report_csv(const EmissionReport& report) {
    std::string out = "entity_id,kind,scope,energy_mwh,emissions_ton,method\n";
    const auto method = report.method.str();
    for (const auto& r : report.records)
        out += fmt::format("{},{},{},{},{},{}\n", r.entity_id, to_string(r.kind), r.scope, format_number(r.energy_mwh),
                           format_number(r.emissions_ton), method);
    return out;
}

inline nlohmann::ordered_json report_json(const EmissionReport& report) {
    nlohmann::ordered_json j;
    j["method"] = report.method.str();
    j["first_timestep"] = report.first_timestep ? nlohmann::ordered_json(*report.first_timestep) : nlohmann::ordered_json(nullptr);
    j["last_timestep"] = report.last_timestep ? nlohmann::ordered_json(*report.last_timestep) : nlohmann::ordered_json(nullptr);
    j["hours"] = report.hours;
    j["records"] = nlohmann::ordered_json::array();
    for (const auto& r : report.records)
        j["records"].push_back({{"entity_id", r.entity_id},
                                {"kind", std::string(to_string(r.kind))},
                                {"scope", r.scope},
                                {"energy_mwh", r.energy_mwh},
                                {"emissions_ton", r.emissions_ton}});
    return j;
}

}  // namespace carbonflow
