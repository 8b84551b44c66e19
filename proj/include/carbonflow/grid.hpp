#pragma once

#include "carbonflow/errors.hpp"

#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace carbonflow {

inline constexpr double kUnbounded = std::numeric_limits<double>::infinity();

struct Bus {
    std::string id;
    std::string name;
    std::string area;
};

struct Line {
    std::string id;
    std::string from_bus;
    std::string to_bus;
    double reactance = 0.0;           // per unit
    double capacity_mw = kUnbounded;  // infinite when unconstrained
    double loss_fraction = 0.0;       // share of sending-end flow lost
};

struct Generator {
    std::string id;
    std::string bus;
    double gef = 0.0;  // ton CO2e / MWh
    double p_min = 0.0;
    double p_max = kUnbounded;
    double marginal_cost = 0.0;  // currency / MWh
    std::string fuel_label;
};

struct Load {
    std::string id;
    std::string bus;
    double demand_mw = 0.0;  // default when a snapshot does not override it
};

enum class StorageModel { WaterTank, LoadPlusCleanGen };

constexpr std::string_view to_string(StorageModel model) {
    return model == StorageModel::WaterTank ? "water_tank" : "load_plus_clean_gen";
}

inline std::optional<StorageModel> parse_storage_model(std::string_view text) {
    if (text == "water_tank") return StorageModel::WaterTank;
    if (text == "load_plus_clean_gen") return StorageModel::LoadPlusCleanGen;
    return std::nullopt;
}

struct StorageUnit {
    std::string id;
    std::string bus;
    double energy_capacity_mwh = 0.0;
    double power_limit_mw = 0.0;
    StorageModel emission_model = StorageModel::WaterTank;
    // Applied to stored energy only; 1.0 reproduces the lossless tank.
    double round_trip_efficiency = 1.0;
};

/// Immutable grid description with id lookup tables built once at construction.
class Network {
public:
    Network() = default;

    Network(std::vector<Bus> buses, std::vector<Line> lines, std::vector<Generator> generators,
            std::vector<Load> loads, std::vector<StorageUnit> storage, std::string slack_bus,
            double base_mva = 100.0)
        : buses_(std::move(buses)),
          lines_(std::move(lines)),
          generators_(std::move(generators)),
          loads_(std::move(loads)),
          storage_(std::move(storage)),
          slack_bus_(std::move(slack_bus)),
          base_mva_(base_mva) {
        index_ids(buses_, bus_index_);
        index_ids(lines_, line_index_);
        index_ids(generators_, generator_index_);
        index_ids(loads_, load_index_);
        index_ids(storage_, storage_index_);

        gens_at_.resize(buses_.size());
        loads_at_.resize(buses_.size());
        storage_at_.resize(buses_.size());
        for (std::size_t k = 0; k < generators_.size(); ++k)
            if (auto b = bus_index(generators_[k].bus)) gens_at_[*b].push_back(k);
        for (std::size_t h = 0; h < loads_.size(); ++h)
            if (auto b = bus_index(loads_[h].bus)) loads_at_[*b].push_back(h);
        for (std::size_t s = 0; s < storage_.size(); ++s)
            if (auto b = bus_index(storage_[s].bus)) storage_at_[*b].push_back(s);
    }

    const std::vector<Bus>& buses() const { return buses_; }
    const std::vector<Line>& lines() const { return lines_; }
    const std::vector<Generator>& generators() const { return generators_; }
    const std::vector<Load>& loads() const { return loads_; }
    const std::vector<StorageUnit>& storage_units() const { return storage_; }
    const std::string& slack_bus() const { return slack_bus_; }
    double base_mva() const { return base_mva_; }

    std::optional<std::size_t> bus_index(std::string_view id) const { return find(bus_index_, id); }
    std::optional<std::size_t> line_index(std::string_view id) const { return find(line_index_, id); }
    std::optional<std::size_t> generator_index(std::string_view id) const {
        return find(generator_index_, id);
    }
    std::optional<std::size_t> load_index(std::string_view id) const { return find(load_index_, id); }
    std::optional<std::size_t> storage_index(std::string_view id) const {
        return find(storage_index_, id);
    }

    /// Throwing lookups for solver code that runs on validated networks.
    std::size_t bus_at(std::string_view id) const { return require(bus_index_, id, "bus"); }
    std::size_t slack_index() const { return bus_at(slack_bus_); }

    const std::vector<std::size_t>& generators_at(std::size_t bus) const { return gens_at_[bus]; }
    const std::vector<std::size_t>& loads_at(std::size_t bus) const { return loads_at_[bus]; }
    const std::vector<std::size_t>& storage_at(std::size_t bus) const { return storage_at_[bus]; }

    std::size_t from_index(std::size_t line) const { return bus_at(lines_[line].from_bus); }
    std::size_t to_index(std::size_t line) const { return bus_at(lines_[line].to_bus); }

    friend bool operator==(const Network& a, const Network& b) {
        auto same_bus = [](const Bus& x, const Bus& y) {
            return x.id == y.id && x.name == y.name && x.area == y.area;
        };
        auto same_line = [](const Line& x, const Line& y) {
            return x.id == y.id && x.from_bus == y.from_bus && x.to_bus == y.to_bus &&
                   x.reactance == y.reactance && x.capacity_mw == y.capacity_mw &&
                   x.loss_fraction == y.loss_fraction;
        };
        auto same_gen = [](const Generator& x, const Generator& y) {
            return x.id == y.id && x.bus == y.bus && x.gef == y.gef && x.p_min == y.p_min &&
                   x.p_max == y.p_max && x.marginal_cost == y.marginal_cost &&
                   x.fuel_label == y.fuel_label;
        };
        auto same_load = [](const Load& x, const Load& y) {
            return x.id == y.id && x.bus == y.bus && x.demand_mw == y.demand_mw;
        };
        auto same_storage = [](const StorageUnit& x, const StorageUnit& y) {
            return x.id == y.id && x.bus == y.bus && x.energy_capacity_mwh == y.energy_capacity_mwh &&
                   x.power_limit_mw == y.power_limit_mw && x.emission_model == y.emission_model &&
                   x.round_trip_efficiency == y.round_trip_efficiency;
        };
        return a.slack_bus_ == b.slack_bus_ && a.base_mva_ == b.base_mva_ &&
               equal_by(a.buses_, b.buses_, same_bus) && equal_by(a.lines_, b.lines_, same_line) &&
               equal_by(a.generators_, b.generators_, same_gen) &&
               equal_by(a.loads_, b.loads_, same_load) && equal_by(a.storage_, b.storage_, same_storage);
    }

private:
    using IdMap = std::unordered_map<std::string, std::size_t>;

    template <class T>
    static void index_ids(const std::vector<T>& items, IdMap& map) {
        for (std::size_t i = 0; i < items.size(); ++i) map.emplace(items[i].id, i);
    }

    template <class T, class Eq>
    static bool equal_by(const std::vector<T>& a, const std::vector<T>& b, Eq eq) {
        if (a.size() != b.size()) return false;
        for (std::size_t i = 0; i < a.size(); ++i)
            if (!eq(a[i], b[i])) return false;
        return true;
    }

    static std::optional<std::size_t> find(const IdMap& map, std::string_view id) {
        auto it = map.find(std::string(id));
        if (it == map.end()) return std::nullopt;
        return it->second;
    }

    static std::size_t require(const IdMap& map, std::string_view id, std::string_view what) {
        if (auto idx = find(map, id)) return *idx;
        throw Error(ErrorKind::UnknownId, "unknown " + std::string(what) + " '" + std::string(id) + "'");
    }

    std::vector<Bus> buses_;
    std::vector<Line> lines_;
    std::vector<Generator> generators_;
    std::vector<Load> loads_;
    std::vector<StorageUnit> storage_;
    std::string slack_bus_;
    double base_mva_ = 100.0;

    IdMap bus_index_, line_index_, generator_index_, load_index_, storage_index_;
    std::vector<std::vector<std::size_t>> gens_at_, loads_at_, storage_at_;
};

struct ImportInjection {
    double mw = 0.0;
    double intensity = 0.0;  // ton / MWh declared by the caller
};

/// One timestep of operating data. Maps are ordered so iteration is deterministic.
struct Snapshot {
    std::size_t timestep_index = 0;
    double delta_t = 1.0;  // hours
    std::map<std::string, double> load_mw;
    std::map<std::string, double> gen_mw;  // empty: dispatch is computed
    std::map<std::string, ImportInjection> imports;
    std::map<std::string, double> storage_mw;  // signed, + charge / - discharge
    // Signed net injection changes without attributed emissions (perturbation studies).
    std::map<std::string, double> adjustment_mw;

    bool has_dispatch() const { return !gen_mw.empty(); }
};

struct Violation {
    std::string element_id;
    std::string message;

    friend bool operator==(const Violation&, const Violation&) = default;
};

struct ValidationReport {
    std::vector<Violation> violations;
    std::vector<Violation> warnings;

    bool ok() const { return violations.empty(); }
    void add(std::string id, std::string message) {
        violations.push_back({std::move(id), std::move(message)});
    }
    void warn(std::string id, std::string message) {
        warnings.push_back({std::move(id), std::move(message)});
    }

    friend bool operator==(const ValidationReport&, const ValidationReport&) = default;
};

namespace detail {

template <class T>
void report_duplicates(const std::vector<T>& items, std::string_view kind, ValidationReport& report) {
    std::set<std::string> seen;
    for (const auto& item : items) {
        if (item.id.empty()) report.add(item.id, std::string(kind) + " id is empty");
        if (!seen.insert(item.id).second)
            report.add(item.id, "duplicate " + std::string(kind) + " id '" + item.id + "'");
    }
}

}  // namespace detail

/// Lists every violated structural or physical invariant. Never throws.
inline ValidationReport validate_network(const Network& net) {
    ValidationReport report;
    detail::report_duplicates(net.buses(), "bus", report);
    detail::report_duplicates(net.lines(), "line", report);
    detail::report_duplicates(net.generators(), "generator", report);
    detail::report_duplicates(net.loads(), "load", report);
    detail::report_duplicates(net.storage_units(), "storage", report);

    if (net.buses().empty()) report.add("", "network has no buses");
    if (!(net.base_mva() > 0.0) || !std::isfinite(net.base_mva())) report.add("", "base_mva must be > 0");
    if (!net.bus_index(net.slack_bus()))
        report.add(net.slack_bus(), "slack bus '" + net.slack_bus() + "' does not exist");

    auto check_bus = [&](const std::string& owner, const std::string& bus) {
        if (!net.bus_index(bus)) report.add(owner, "references unknown bus '" + bus + "'");
    };

    for (const auto& line : net.lines()) {
        check_bus(line.id, line.from_bus);
        check_bus(line.id, line.to_bus);
        if (line.from_bus == line.to_bus) report.add(line.id, "from_bus equals to_bus");
        if (!(line.reactance > 0.0) || !std::isfinite(line.reactance))
            report.add(line.id, "reactance must be > 0");
        if (!(line.capacity_mw >= 0.0)) report.add(line.id, "capacity_mw must be >= 0");
        if (!(line.loss_fraction >= 0.0 && line.loss_fraction < 1.0))
            report.add(line.id, "loss_fraction must lie in [0, 1)");
    }
    for (const auto& gen : net.generators()) {
        check_bus(gen.id, gen.bus);
        if (!(gen.gef >= 0.0) || !std::isfinite(gen.gef)) report.add(gen.id, "gef must be >= 0");
        if (!(gen.p_min >= 0.0) || !std::isfinite(gen.p_min)) report.add(gen.id, "p_min must be >= 0");
        if (!(gen.p_max >= gen.p_min)) report.add(gen.id, "p_max must be >= p_min");
        if (!std::isfinite(gen.marginal_cost)) report.add(gen.id, "marginal_cost must be finite");
    }
    for (const auto& load : net.loads()) {
        check_bus(load.id, load.bus);
        if (!(load.demand_mw >= 0.0) || !std::isfinite(load.demand_mw))
            report.add(load.id, "demand_mw must be >= 0");
    }
    for (const auto& unit : net.storage_units()) {
        check_bus(unit.id, unit.bus);
        if (!(unit.energy_capacity_mwh > 0.0)) report.add(unit.id, "energy_capacity_mwh must be > 0");
        if (!(unit.power_limit_mw > 0.0)) report.add(unit.id, "power_limit_mw must be > 0");
        if (!(unit.round_trip_efficiency > 0.0 && unit.round_trip_efficiency <= 1.0))
            report.add(unit.id, "round_trip_efficiency must lie in (0, 1]");
    }

    // Connectivity over lines whose endpoints resolve.
    if (!net.buses().empty()) {
        const std::size_t n = net.buses().size();
        std::vector<std::vector<std::size_t>> adj(n);
        for (const auto& line : net.lines()) {
            auto f = net.bus_index(line.from_bus);
            auto t = net.bus_index(line.to_bus);
            if (f && t && *f != *t) {
                adj[*f].push_back(*t);
                adj[*t].push_back(*f);
            }
        }
        std::vector<bool> seen(n, false);
        std::queue<std::size_t> frontier;
        frontier.push(0);
        seen[0] = true;
        std::size_t reached = 1;
        while (!frontier.empty()) {
            auto b = frontier.front();
            frontier.pop();
            for (auto nb : adj[b])
                if (!seen[nb]) {
                    seen[nb] = true;
                    ++reached;
                    frontier.push(nb);
                }
        }
        if (reached != n) {
            std::string islanded;
            for (std::size_t b = 0; b < n; ++b)
                if (!seen[b]) islanded += (islanded.empty() ? "" : ",") + net.buses()[b].id;
            report.add("", "network not connected (unreached buses: " + islanded + ")");
        }
    }
    return report;
}

inline void require_valid(const Network& net) {
    auto report = validate_network(net);
    if (!report.ok()) {
        const auto& v = report.violations.front();
        throw Error(ErrorKind::ValidationFailed,
                    (v.element_id.empty() ? "" : v.element_id + ": ") + v.message);
    }
}

/// Checks that every id a snapshot references exists and its values are admissible.
inline ValidationReport validate_snapshot(const Network& net, const Snapshot& snap) {
    ValidationReport report;
    if (!(snap.delta_t > 0.0) || !std::isfinite(snap.delta_t)) report.add("", "delta_t must be > 0");
    for (const auto& [id, mw] : snap.load_mw) {
        if (!net.load_index(id)) report.add(id, "unknown load");
        if (!(mw >= 0.0)) report.add(id, "negative load");
    }
    for (const auto& [id, mw] : snap.gen_mw) {
        if (!net.generator_index(id)) report.add(id, "unknown generator");
        if (!std::isfinite(mw)) report.add(id, "generation must be finite");
    }
    for (const auto& [id, inj] : snap.imports) {
        if (!net.bus_index(id)) report.add(id, "unknown import bus");
        if (!(inj.mw >= 0.0)) report.add(id, "import MW must be >= 0");
        if (!(inj.intensity >= 0.0)) report.add(id, "import intensity must be >= 0");
    }
    for (const auto& [id, mw] : snap.storage_mw) {
        if (!net.storage_index(id)) report.add(id, "unknown storage unit");
        if (!std::isfinite(mw)) report.add(id, "storage power must be finite");
    }
    for (const auto& [id, mw] : snap.adjustment_mw)
        if (!net.bus_index(id)) report.add(id, "unknown adjustment bus");
    return report;
}

inline void require_valid(const Network& net, const Snapshot& snap) {
    auto report = validate_snapshot(net, snap);
    if (!report.ok()) {
        const auto& v = report.violations.front();
        throw Error(v.message.find("unknown") != std::string::npos ? ErrorKind::UnknownId
                                                                    : ErrorKind::InvalidArgument,
                    v.element_id + ": " + v.message);
    }
}

// Per-element vectors resolved from a snapshot (network defaults fill the gaps).

inline std::vector<double> load_vector(const Network& net, const Snapshot& snap) {
    std::vector<double> out(net.loads().size());
    for (std::size_t h = 0; h < out.size(); ++h) {
        auto it = snap.load_mw.find(net.loads()[h].id);
        out[h] = it != snap.load_mw.end() ? it->second : net.loads()[h].demand_mw;
    }
    return out;
}

inline std::vector<double> generation_vector(const Network& net, const Snapshot& snap) {
    std::vector<double> out(net.generators().size(), 0.0);
    for (std::size_t k = 0; k < out.size(); ++k) {
        auto it = snap.gen_mw.find(net.generators()[k].id);
        if (it != snap.gen_mw.end()) out[k] = it->second;
    }
    return out;
}

inline std::vector<double> storage_vector(const Network& net, const Snapshot& snap) {
    std::vector<double> out(net.storage_units().size(), 0.0);
    for (std::size_t s = 0; s < out.size(); ++s) {
        auto it = snap.storage_mw.find(net.storage_units()[s].id);
        if (it != snap.storage_mw.end()) out[s] = it->second;
    }
    return out;
}

inline std::vector<ImportInjection> import_vector(const Network& net, const Snapshot& snap) {
    std::vector<ImportInjection> out(net.buses().size());
    for (const auto& [bus, inj] : snap.imports) out[net.bus_at(bus)] = inj;
    return out;
}

inline std::vector<double> adjustment_vector(const Network& net, const Snapshot& snap) {
    std::vector<double> out(net.buses().size(), 0.0);
    for (const auto& [bus, mw] : snap.adjustment_mw) out[net.bus_at(bus)] += mw;
    return out;
}

}  // namespace carbonflow
