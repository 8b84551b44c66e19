#pragma once

#include "carbonflow/accounting.hpp"
#include "carbonflow/carbon_flow.hpp"
#include "carbonflow/grid.hpp"

#include <nlohmann/json.hpp>

#include <charconv>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace carbonflow {

inline constexpr std::string_view kGridSchema = "carbonflow-grid/1";

/// SchemaError or ValidationFailed with every problem found, each prefixed by a JSON pointer.
class GridError : public Error {
public:
    GridError(ErrorKind kind, std::vector<std::string> problems)
        : Error(kind, join(problems)), problems_(std::move(problems)) {}

    const std::vector<std::string>& problems() const { return problems_; }

private:
    static std::string join(const std::vector<std::string>& items) {
        std::string out;
        for (const auto& s : items) out += (out.empty() ? "" : "; ") + s;
        return out;
    }

    std::vector<std::string> problems_;
};

namespace detail {

using json = nlohmann::json;

/// Strict reader of one JSON object: records missing, mistyped and unknown keys.
class ObjectReader {
public:
    ObjectReader(const json& j, std::string pointer, std::vector<std::string>& problems)
        : j_(j), pointer_(std::move(pointer)), problems_(problems) {
        if (!j_.is_object()) problems_.push_back(pointer_ + ": expected an object");
    }

    ~ObjectReader() = default;
    ObjectReader(const ObjectReader&) = delete;
    ObjectReader& operator=(const ObjectReader&) = delete;

    bool ok() const { return j_.is_object(); }

    const json* get(const std::string& key, bool required) {
        seen_.insert(key);
        if (!ok()) return nullptr;
        auto it = j_.find(key);
        if (it == j_.end()) {
            if (required) problems_.push_back(pointer_ + "/" + key + ": missing required key");
            return nullptr;
        }
        return &*it;
    }

    std::string string(const std::string& key, bool required = true, std::string fallback = {}) {
        auto v = get(key, required);
        if (!v) return fallback;
        if (!v->is_string()) {
            problems_.push_back(pointer_ + "/" + key + ": expected a string");
            return fallback;
        }
        return v->get<std::string>();
    }

    /// Numbers; null maps to `null_value` when it is allowed.
    double number(const std::string& key, bool required = true, double fallback = 0.0,
                  std::optional<double> null_value = std::nullopt) {
        auto v = get(key, required);
        if (!v) return fallback;
        if (v->is_null() && null_value) return *null_value;
        if (!v->is_number()) {
            problems_.push_back(pointer_ + "/" + key + (null_value ? ": expected a number or null" : ": expected a number"));
            return fallback;
        }
        return v->get<double>();
    }

    const json* array(const std::string& key, bool required = true) {
        auto v = get(key, required);
        if (v && !v->is_array()) {
            problems_.push_back(pointer_ + "/" + key + ": expected an array");
            return nullptr;
        }
        return v;
    }

    void reject_unknown() {
        if (!ok()) return;
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) problems_.push_back(pointer_ + "/" + it.key() + ": unknown key");
    }

    const std::string& pointer() const { return pointer_; }

private:
    const json& j_;
    std::string pointer_;
    std::vector<std::string>& problems_;
    std::set<std::string> seen_;
};

template <class T, class Fn>
std::vector<T> read_array(ObjectReader& top, const std::string& key, bool required, std::vector<std::string>& problems,
                          Fn&& read_one) {
    std::vector<T> out;
    auto arr = top.array(key, required);
    if (!arr) return out;
    std::map<std::string, std::size_t> first_seen;
    for (std::size_t i = 0; i < arr->size(); ++i) {
        const auto pointer = top.pointer() + "/" + key + "/" + std::to_string(i);
        ObjectReader r((*arr)[i], pointer, problems);
        T item = read_one(r);
        r.reject_unknown();
        if (!r.ok()) continue;
        auto [it, inserted] = first_seen.emplace(item.id, i);
        if (!inserted)
            problems.push_back(pointer + "/id: duplicate id '" + item.id + "' (first at /" + key + "/" +
                               std::to_string(it->second) + ")");
        out.push_back(std::move(item));
    }
    return out;
}

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::ParseError, "cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

}  // namespace detail

/// Builds a Network from a parsed grid document. Structural problems raise
/// SchemaError; with `validate` set, invariant violations raise ValidationFailed.
inline Network grid_from_json(const nlohmann::json& doc, bool validate = true) {
    using detail::ObjectReader;
    std::vector<std::string> problems;
    ObjectReader top(doc, "", problems);
    if (!top.ok()) throw GridError(ErrorKind::SchemaError, {"/: expected an object"});

    if (auto schema = top.get("schema", true)) {
        if (!schema->is_string() || schema->get<std::string>() != kGridSchema)
            problems.push_back("/schema: expected \"" + std::string(kGridSchema) + "\"");
    }
    auto buses = detail::read_array<Bus>(top, "buses", true, problems, [](ObjectReader& r) {
        Bus b;
        b.id = r.string("id");
        b.name = r.string("name", false);
        b.area = r.string("area", false);
        return b;
    });
    auto lines = detail::read_array<Line>(top, "lines", true, problems, [](ObjectReader& r) {
        Line l;
        l.id = r.string("id");
        l.from_bus = r.string("from_bus");
        l.to_bus = r.string("to_bus");
        l.reactance = r.number("reactance");
        l.capacity_mw = r.number("capacity_mw", false, kUnbounded, kUnbounded);
        l.loss_fraction = r.number("loss_fraction", false);
        return l;
    });
    auto gens = detail::read_array<Generator>(top, "generators", true, problems, [](ObjectReader& r) {
        Generator g;
        g.id = r.string("id");
        g.bus = r.string("bus");
        g.gef = r.number("gef");
        g.p_min = r.number("p_min", false);
        g.p_max = r.number("p_max", false, kUnbounded, kUnbounded);
        g.marginal_cost = r.number("marginal_cost", false);
        g.fuel_label = r.string("fuel_label", false);
        return g;
    });
    auto loads = detail::read_array<Load>(top, "loads", true, problems, [](ObjectReader& r) {
        Load d;
        d.id = r.string("id");
        d.bus = r.string("bus");
        d.demand_mw = r.number("demand_mw", false);
        return d;
    });
    auto storage = detail::read_array<StorageUnit>(top, "storage", false, problems, [&problems](ObjectReader& r) {
        StorageUnit s;
        s.id = r.string("id");
        s.bus = r.string("bus");
        s.energy_capacity_mwh = r.number("energy_capacity_mwh");
        s.power_limit_mw = r.number("power_limit_mw");
        const auto model = r.string("emission_model");
        if (auto m = parse_storage_model(model)) s.emission_model = *m;
        else if (!model.empty())
            problems.push_back(r.pointer() + "/emission_model: expected \"water_tank\" or \"load_plus_clean_gen\"");
        s.round_trip_efficiency = r.number("round_trip_efficiency", false, 1.0);
        return s;
    });
    auto slack = top.string("slack_bus");
    auto base = top.number("base_mva", false, 100.0);
    top.reject_unknown();
    if (!problems.empty()) throw GridError(ErrorKind::SchemaError, std::move(problems));

    Network net(std::move(buses), std::move(lines), std::move(gens), std::move(loads), std::move(storage),
                std::move(slack), base);
    if (validate) {
        auto report = validate_network(net);
        if (!report.ok()) {
            std::vector<std::string> items;
            for (const auto& v : report.violations) items.push_back(v.element_id + ": " + v.message);
            throw GridError(ErrorKind::ValidationFailed, std::move(items));
        }
    }
    return net;
}

inline Network parse_grid(std::string_view text, bool validate = true) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorKind::ParseError, e.what());
    }
    return grid_from_json(doc, validate);
}

inline Network load_grid(const std::filesystem::path& path, bool validate = true) {
    return parse_grid(detail::read_text_file(path), validate);
}

inline nlohmann::ordered_json serialize_grid(const Network& net) {
    using oj = nlohmann::ordered_json;
    auto bound = [](double v) { return std::isinf(v) ? oj(nullptr) : oj(v); };
    oj doc;
    doc["schema"] = kGridSchema;
    doc["buses"] = oj::array();
    for (const auto& b : net.buses()) doc["buses"].push_back({{"id", b.id}, {"name", b.name}, {"area", b.area}});
    doc["lines"] = oj::array();
    for (const auto& l : net.lines())
        doc["lines"].push_back({{"id", l.id},
                                {"from_bus", l.from_bus},
                                {"to_bus", l.to_bus},
                                {"reactance", l.reactance},
                                {"capacity_mw", bound(l.capacity_mw)},
                                {"loss_fraction", l.loss_fraction}});
    doc["generators"] = oj::array();
    for (const auto& g : net.generators())
        doc["generators"].push_back({{"id", g.id},
                                     {"bus", g.bus},
                                     {"gef", g.gef},
                                     {"p_min", g.p_min},
                                     {"p_max", bound(g.p_max)},
                                     {"marginal_cost", g.marginal_cost},
                                     {"fuel_label", g.fuel_label}});
    doc["loads"] = oj::array();
    for (const auto& d : net.loads())
        doc["loads"].push_back({{"id", d.id}, {"bus", d.bus}, {"demand_mw", d.demand_mw}});
    doc["storage"] = oj::array();
    for (const auto& s : net.storage_units())
        doc["storage"].push_back({{"id", s.id},
                                  {"bus", s.bus},
                                  {"energy_capacity_mwh", s.energy_capacity_mwh},
                                  {"power_limit_mw", s.power_limit_mw},
                                  {"emission_model", std::string(to_string(s.emission_model))},
                                  {"round_trip_efficiency", s.round_trip_efficiency}});
    doc["slack_bus"] = net.slack_bus();
    doc["base_mva"] = net.base_mva();
    return doc;
}

namespace detail {

inline std::vector<std::string> split_csv_line(std::string_view line) {
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
        auto comma = line.find(',', start);
        auto cell = line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
        while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) cell.remove_prefix(1);
        while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t' || cell.back() == '\r')) cell.remove_suffix(1);
        cells.emplace_back(cell);
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return cells;
}

inline double parse_cell(const std::string& cell, std::size_t row, const std::string& column) {
    double v = 0.0;
    const char* first = cell.data();
    if (!cell.empty() && cell.front() == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, cell.data() + cell.size(), v);
    if (cell.empty() || ec != std::errc{} || ptr != cell.data() + cell.size() || !std::isfinite(v))
        throw Error(ErrorKind::ParseError,
                    "row " + std::to_string(row) + ", column " + column + ": not a number: '" + cell + "'");
    return v;
}

}  // namespace detail

/// One snapshot per data row; columns are `t` followed by `<kind>:<id>` with kinds
/// load, gen, storage, import and import_w (intensity paired with import).
inline std::vector<Snapshot> parse_timeseries(std::istream& in, const Network& net, double delta_t = 1.0) {
    if (!(delta_t > 0.0)) throw Error(ErrorKind::InvalidArgument, "delta_t must be > 0");
    std::string line;
    std::vector<std::string> header;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        header = detail::split_csv_line(line);
        break;
    }
    std::vector<Snapshot> out;
    if (header.empty()) return out;
    if (header.front() != "t") throw Error(ErrorKind::ParseError, "first column must be 't', got '" + header.front() + "'");

    enum class Kind { Load, Gen, Storage, Import, ImportW };
    struct Column {
        Kind kind;
        std::string id;
    };
    std::vector<Column> columns;
    std::set<std::string> seen;
    std::set<std::string> import_buses, intensity_buses;
    for (std::size_t c = 1; c < header.size(); ++c) {
        const auto& name = header[c];
        if (!seen.insert(name).second) throw Error(ErrorKind::ParseError, "duplicate column '" + name + "'");
        auto colon = name.find(':');
        if (colon == std::string::npos) throw Error(ErrorKind::UnknownColumn, "column '" + name + "'");
        const auto kind = name.substr(0, colon);
        const auto id = name.substr(colon + 1);
        Column col{Kind::Load, id};
        bool known = false;
        if (kind == "load") known = net.load_index(id).has_value(), col.kind = Kind::Load;
        else if (kind == "gen") known = net.generator_index(id).has_value(), col.kind = Kind::Gen;
        else if (kind == "storage") known = net.storage_index(id).has_value(), col.kind = Kind::Storage;
        else if (kind == "import") known = net.bus_index(id).has_value(), col.kind = Kind::Import, import_buses.insert(id);
        else if (kind == "import_w")
            known = net.bus_index(id).has_value(), col.kind = Kind::ImportW, intensity_buses.insert(id);
        if (!known) throw Error(ErrorKind::UnknownColumn, "column '" + name + "'");
        columns.push_back(col);
    }
    if (import_buses != intensity_buses)
        throw Error(ErrorKind::ParseError, "every import:<bus> column needs a matching import_w:<bus> column");

    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size())
            throw Error(ErrorKind::ParseError, "row " + std::to_string(row) + ": expected " +
                                                   std::to_string(header.size()) + " cells, got " +
                                                   std::to_string(cells.size()));
        Snapshot snap;
        snap.timestep_index = row;
        snap.delta_t = delta_t;
        for (std::size_t c = 0; c < columns.size(); ++c) {
            const auto& col = columns[c];
            const double v = detail::parse_cell(cells[c + 1], row, header[c + 1]);
            switch (col.kind) {
            case Kind::Load:
                if (v < 0.0)
                    throw Error(ErrorKind::NegativeLoad,
                                "row " + std::to_string(row) + ": load " + col.id + " = " + format_number(v));
                snap.load_mw[col.id] = v;
                break;
            case Kind::Gen: snap.gen_mw[col.id] = v; break;
            case Kind::Storage: snap.storage_mw[col.id] = v; break;
            case Kind::Import: snap.imports[col.id].mw = v; break;
            case Kind::ImportW: snap.imports[col.id].intensity = v; break;
            }
        }
        out.push_back(std::move(snap));
        ++row;
    }
    return out;
}

inline std::vector<Snapshot> load_timeseries(const std::filesystem::path& path, const Network& net,
                                             double delta_t = 1.0) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::ParseError, "cannot open " + path.string());
    return parse_timeseries(in, net, delta_t);
}

struct Tolerances {
    double balance_mw = 1e-6;
    double cap = 1e-6;
    double consistency_mw = 1e-6;
};

struct RunConfig {
    std::filesystem::path grid;
    std::optional<std::filesystem::path> timeseries;
    double delta_t = 1.0;
    MixingRule rule;
    double carbon_price = 0.0;
    std::map<std::string, double> nodal_intensity_caps;
    std::optional<double> total_emission_cap;
    bool consumption_based_aef = false;
    std::optional<std::string> area;
    std::optional<StorageModel> storage_model;
    Tolerances tolerances;
    std::filesystem::path output_dir = "out";
    std::uint64_t seed = 0;
    int max_iterations = 50;
};

/// Reads a run configuration; relative paths resolve against `base_dir`.
inline RunConfig run_config_from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir = {}) {
    using detail::ObjectReader;
    std::vector<std::string> problems;
    ObjectReader r(doc, "", problems);
    RunConfig cfg;
    auto resolve = [&](const std::string& p) {
        std::filesystem::path path(p);
        return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
    };
    cfg.grid = resolve(r.string("grid"));
    if (auto ts = r.get("timeseries", false); ts && !ts->is_null()) {
        if (ts->is_string()) cfg.timeseries = resolve(ts->get<std::string>());
        else problems.push_back("/timeseries: expected a string or null");
    }
    cfg.delta_t = r.number("delta_t_hours", false, 1.0);
    const auto rule = r.string("mixing_rule", false, "proportional_sharing");
    if (rule == "contract_priority") cfg.rule.kind = MixingRuleKind::ContractPriority;
    else if (rule != "proportional_sharing")
        problems.push_back("/mixing_rule: expected \"proportional_sharing\" or \"contract_priority\"");
    if (auto contracts = r.array("contracts", false)) {
        for (std::size_t i = 0; i < contracts->size(); ++i) {
            ObjectReader c((*contracts)[i], "/contracts/" + std::to_string(i), problems);
            Contract k;
            k.load_id = c.string("load");
            k.source_id = c.string("source");
            k.mw = c.number("mw");
            c.reject_unknown();
            cfg.rule.contracts.push_back(k);
        }
    }
    cfg.carbon_price = r.number("carbon_price", false);
    if (auto caps = r.get("nodal_intensity_caps", false)) {
        if (!caps->is_object()) problems.push_back("/nodal_intensity_caps: expected an object");
        else
            for (auto it = caps->begin(); it != caps->end(); ++it) {
                if (it->is_number()) cfg.nodal_intensity_caps[it.key()] = it->get<double>();
                else problems.push_back("/nodal_intensity_caps/" + it.key() + ": expected a number");
            }
    }
    if (auto cap = r.get("total_emission_cap", false); cap && !cap->is_null()) {
        if (cap->is_number()) cfg.total_emission_cap = cap->get<double>();
        else problems.push_back("/total_emission_cap: expected a number or null");
    }
    if (auto flag = r.get("consumption_based_aef", false)) {
        if (flag->is_boolean()) cfg.consumption_based_aef = flag->get<bool>();
        else problems.push_back("/consumption_based_aef: expected a boolean");
    }
    if (auto area = r.get("area", false); area && !area->is_null()) {
        if (area->is_string()) cfg.area = area->get<std::string>();
        else problems.push_back("/area: expected a string or null");
    }
    if (auto model = r.get("storage_model", false); model && !model->is_null()) {
        auto m = model->is_string() ? parse_storage_model(model->get<std::string>()) : std::nullopt;
        if (m) cfg.storage_model = m;
        else problems.push_back("/storage_model: expected \"water_tank\", \"load_plus_clean_gen\" or null");
    }
    if (auto tol = r.get("tolerances", false)) {
        ObjectReader t(*tol, "/tolerances", problems);
        cfg.tolerances.balance_mw = t.number("balance_mw", false, cfg.tolerances.balance_mw);
        cfg.tolerances.cap = t.number("cap", false, cfg.tolerances.cap);
        cfg.tolerances.consistency_mw = t.number("consistency_mw", false, cfg.tolerances.consistency_mw);
        t.reject_unknown();
    }
    if (auto out = r.get("output_dir", false)) {
        if (out->is_string()) cfg.output_dir = resolve(out->get<std::string>());
        else problems.push_back("/output_dir: expected a string");
    }
    if (auto seed = r.get("seed", false)) {
        if (seed->is_number_unsigned()) cfg.seed = seed->get<std::uint64_t>();
        else problems.push_back("/seed: expected a non-negative integer");
    }
    if (auto it = r.get("max_iterations", false)) {
        if (it->is_number_integer() && it->get<int>() > 0) cfg.max_iterations = it->get<int>();
        else problems.push_back("/max_iterations: expected a positive integer");
    }
    r.reject_unknown();

    if (!(cfg.delta_t > 0.0)) problems.push_back("/delta_t_hours: must be > 0");
    if (!(cfg.tolerances.balance_mw > 0.0)) problems.push_back("/tolerances/balance_mw: must be > 0");
    if (!(cfg.tolerances.cap > 0.0)) problems.push_back("/tolerances/cap: must be > 0");
    if (!(cfg.tolerances.consistency_mw > 0.0)) problems.push_back("/tolerances/consistency_mw: must be > 0");
    if (!problems.empty()) throw GridError(ErrorKind::SchemaError, std::move(problems));
    return cfg;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(detail::read_text_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorKind::ParseError, e.what());
    }
    return run_config_from_json(doc, path.parent_path());
}

inline nlohmann::ordered_json run_config_json(const RunConfig& cfg) {
    using oj = nlohmann::ordered_json;
    oj j;
    j["grid"] = cfg.grid.string();
    j["timeseries"] = cfg.timeseries ? oj(cfg.timeseries->string()) : oj(nullptr);
    j["delta_t_hours"] = cfg.delta_t;
    j["mixing_rule"] = std::string(to_string(cfg.rule.kind));
    j["contracts"] = oj::array();
    for (const auto& c : cfg.rule.contracts)
        j["contracts"].push_back({{"load", c.load_id}, {"source", c.source_id}, {"mw", c.mw}});
    j["carbon_price"] = cfg.carbon_price;
    j["nodal_intensity_caps"] = oj::object();
    for (const auto& [bus, cap] : cfg.nodal_intensity_caps) j["nodal_intensity_caps"][bus] = cap;
    j["total_emission_cap"] = cfg.total_emission_cap ? oj(*cfg.total_emission_cap) : oj(nullptr);
    j["consumption_based_aef"] = cfg.consumption_based_aef;
    j["area"] = cfg.area ? oj(*cfg.area) : oj(nullptr);
    j["storage_model"] = cfg.storage_model ? oj(std::string(to_string(*cfg.storage_model))) : oj(nullptr);
    j["tolerances"] = {{"balance_mw", cfg.tolerances.balance_mw},
                       {"cap", cfg.tolerances.cap},
                       {"consistency_mw", cfg.tolerances.consistency_mw}};
    j["output_dir"] = cfg.output_dir.string();
    j["seed"] = cfg.seed;
    j["max_iterations"] = cfg.max_iterations;
    return j;
}

}  // namespace carbonflow
