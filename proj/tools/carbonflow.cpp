#include "carbonflow/carbonflow.hpp"

#include <CLI11.hpp>
#include <openssl/evp.h>

#include <atomic>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

namespace fs = std::filesystem;
using namespace carbonflow;
using ojson = nlohmann::ordered_json;

namespace {

struct Options {
    std::string config;
    std::string grid;
    std::string timeseries;
    std::string out;
    std::optional<double> delta_t;
    int jobs = 1;

    std::string mixing_rule;
    std::vector<std::string> contracts;  // LOAD:SOURCE:MW
    std::optional<double> carbon_price;
    std::vector<std::string> caps;  // BUS=TON_PER_MWH
    std::optional<double> emission_cap;
    std::string area;
    bool consumption_based = false;
    std::string storage_model;
    std::string method = "flow";
    std::optional<int> max_iterations;

    std::string target;
    double delta_mw = 0.0;
    std::string perturbation = "load";
    double epsilon = 1e-3;
    std::optional<std::size_t> timestep;
};

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Artifact {
    std::string name;
    std::string content;
};

std::string sha256_hex(const std::string& data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr);
    std::string hex;
    for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", digest[i]);
    return hex;
}

std::string num(double v) { return format_number(v); }

// Results come back in index order; the first failing index wins so errors do not depend on scheduling.
template <class F>
auto parallel_map(std::size_t n, int jobs, F f) -> std::vector<decltype(f(std::size_t{}))> {
    using R = decltype(f(std::size_t{}));
    std::vector<std::optional<R>> slots(n);
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                slots[i] = f(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const auto threads = static_cast<std::size_t>(std::max(1, jobs));
    if (threads == 1 || n <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < std::min(threads, n); ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    std::vector<R> out;
    out.reserve(n);
    for (auto& s : slots) out.push_back(std::move(*s));
    return out;
}

class Run {
public:
    Run(std::string command, const Options& opt, std::vector<std::string> argv)
        : command_(std::move(command)), opt_(opt), argv_(std::move(argv)) {
        if (!opt.config.empty()) {
            cfg_ = load_run_config(opt.config);
            inputs_.push_back(opt.config);
        } else if (opt.grid.empty()) {
            throw UsageError("either --config or --grid is required");
        }
        if (!opt.grid.empty()) cfg_.grid = opt.grid;
        if (!opt.timeseries.empty()) cfg_.timeseries = fs::path(opt.timeseries);
        if (!opt.out.empty()) cfg_.output_dir = opt.out;
        else if (opt.config.empty()) cfg_.output_dir = "out";
        if (opt.delta_t) cfg_.delta_t = *opt.delta_t;
        if (!(cfg_.delta_t > 0.0)) throw UsageError("--delta-t must be > 0");
        if (opt.jobs < 1) throw UsageError("--jobs must be >= 1");

        if (!opt.mixing_rule.empty()) {
            if (opt.mixing_rule == "proportional_sharing") cfg_.rule.kind = MixingRuleKind::ProportionalSharing;
            else if (opt.mixing_rule == "contract_priority") cfg_.rule.kind = MixingRuleKind::ContractPriority;
            else throw UsageError("--mixing-rule must be proportional_sharing or contract_priority");
        }
        for (const auto& item : opt.contracts) {
            auto a = item.find(':');
            auto b = item.rfind(':');
            if (a == std::string::npos || a == b) throw UsageError("--contract expects LOAD:SOURCE:MW, got " + item);
            cfg_.rule.contracts.push_back({item.substr(0, a), item.substr(a + 1, b - a - 1), parse_double(item.substr(b + 1))});
        }
        if (opt.carbon_price) cfg_.carbon_price = *opt.carbon_price;
        for (const auto& item : opt.caps) {
            auto eq = item.find('=');
            if (eq == std::string::npos) throw UsageError("--cap expects BUS=VALUE, got " + item);
            cfg_.nodal_intensity_caps[item.substr(0, eq)] = parse_double(item.substr(eq + 1));
        }
        if (opt.emission_cap) cfg_.total_emission_cap = *opt.emission_cap;
        if (!opt.area.empty()) cfg_.area = opt.area;
        if (opt.consumption_based) cfg_.consumption_based_aef = true;
        if (!opt.storage_model.empty()) {
            cfg_.storage_model = parse_storage_model(opt.storage_model);
            if (!cfg_.storage_model) throw UsageError("--storage-model must be water_tank or load_plus_clean_gen");
        }
        if (opt.max_iterations) cfg_.max_iterations = *opt.max_iterations;

        net_ = load_grid(cfg_.grid);
        inputs_.push_back(cfg_.grid);
        if (cfg_.timeseries) {
            snapshots_ = load_timeseries(*cfg_.timeseries, net_, cfg_.delta_t);
            inputs_.push_back(*cfg_.timeseries);
        } else {
            Snapshot s;
            s.delta_t = cfg_.delta_t;
            snapshots_.push_back(s);
        }
        if (opt.timestep) {
            if (*opt.timestep >= snapshots_.size())
                throw UsageError(fmt::format("--timestep {} out of range ({} snapshots)", *opt.timestep, snapshots_.size()));
            snapshots_ = {snapshots_[*opt.timestep]};
        }
    }

    const Network& net() const { return net_; }
    const RunConfig& cfg() const { return cfg_; }
    const std::vector<Snapshot>& snapshots() const { return snapshots_; }
    const Options& opt() const { return opt_; }

    void add(std::string name, std::string content) { artifacts_.push_back({std::move(name), std::move(content)}); }
    void add(std::string name, const ojson& j) { add(std::move(name), j.dump(2) + "\n"); }

    PowerFlowOptions pf_options() const {
        PowerFlowOptions o;
        o.balance_tol_mw = cfg_.tolerances.balance_mw;
        return o;
    }

    template <class F>
    auto per_snapshot(F f) const {
        return parallel_map(snapshots_.size(), opt_.jobs, [&](std::size_t i) { return f(snapshots_[i]); });
    }

    void write() const {
        fs::create_directories(cfg_.output_dir);
        ojson manifest;
        manifest["tool"] = "carbonflow";
        manifest["version"] = CARBONFLOW_VERSION;
        manifest["command"] = command_;
        manifest["arguments"] = argv_;
        manifest["config"] = run_config_json(cfg_);
        manifest["inputs"] = ojson::array();
        for (const auto& p : inputs_)
            manifest["inputs"].push_back({{"path", p.string()}, {"sha256", sha256_hex(detail::read_text_file(p))}});
        manifest["outputs"] = ojson::array();
        for (const auto& a : artifacts_) {
            std::ofstream(cfg_.output_dir / a.name, std::ios::binary) << a.content;
            manifest["outputs"].push_back({{"path", a.name}, {"sha256", sha256_hex(a.content)}});
        }
        std::ofstream(cfg_.output_dir / "run_manifest.json", std::ios::binary) << manifest.dump(2) << "\n";
    }

private:
    static double parse_double(const std::string& s) {
        try {
            std::size_t used = 0;
            double v = std::stod(s, &used);
            if (used != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            throw UsageError("not a number: " + s);
        }
    }

    std::string command_;
    Options opt_;
    std::vector<std::string> argv_;
    RunConfig cfg_;
    Network net_{{}, {}, {}, {}, {}, ""};
    std::vector<Snapshot> snapshots_;
    std::vector<fs::path> inputs_;
    std::vector<Artifact> artifacts_;
};

FlowSolution flow_for(const Run& run, const Snapshot& snap) {
    return realize_flow(run.net(), snap, default_lp_solver(), run.pf_options());
}

CarbonFlowOptions cf_options(const Run& run) {
    CarbonFlowOptions o;
    o.consistency_tol_mw = run.cfg().tolerances.consistency_mw;
    return o;
}

// ---- subcommands ----

void cmd_validate(Run& run) {
    auto report = validate_network(run.net());
    std::string csv = "t,element_id,message\n";
    ojson j;
    j["network"] = ojson::array();
    for (const auto& v : report.violations) {
        csv += fmt::format(",{},{}\n", v.element_id, v.message);
        j["network"].push_back({{"element_id", v.element_id}, {"message", v.message}});
    }
    j["snapshots"] = ojson::array();
    std::size_t bad = report.violations.size();
    for (const auto& snap : run.snapshots()) {
        auto sr = validate_snapshot(run.net(), snap);
        for (const auto& v : sr.violations) {
            csv += fmt::format("{},{},{}\n", snap.timestep_index, v.element_id, v.message);
            j["snapshots"].push_back({{"t", snap.timestep_index}, {"element_id", v.element_id}, {"message", v.message}});
        }
        bad += sr.violations.size();
    }
    j["ok"] = bad == 0;
    run.add("validation.json", j);
    run.add("validation.csv", csv);
    run.write();
    if (bad) throw Error(ErrorKind::ValidationFailed, fmt::format("{} violation(s), see validation.csv", bad));
}

void cmd_pf(Run& run) {
    auto flows = run.per_snapshot([&](const Snapshot& s) { return flow_for(run, s); });
    std::string lines = "t,line_id,sending_mw,receiving_mw,loss_mw\n";
    std::string gens = "t,generator_id,mw\n";
    ojson j = ojson::array();
    for (std::size_t i = 0; i < flows.size(); ++i) {
        const auto t = run.snapshots()[i].timestep_index;
        const auto& f = flows[i];
        ojson step{{"t", t}, {"lines", ojson::array()}, {"generators", ojson::object()}};
        for (std::size_t l = 0; l < f.sending_mw.size(); ++l) {
            const auto& id = run.net().lines()[l].id;
            lines += fmt::format("{},{},{},{},{}\n", t, id, num(f.sending_mw[l]), num(f.receiving_mw[l]), num(f.loss_mw[l]));
            step["lines"].push_back({{"id", id}, {"sending_mw", f.sending_mw[l]}, {"receiving_mw", f.receiving_mw[l]},
                                     {"loss_mw", f.loss_mw[l]}});
        }
        for (std::size_t k = 0; k < f.gen_mw.size(); ++k) {
            const auto& id = run.net().generators()[k].id;
            gens += fmt::format("{},{},{}\n", t, id, num(f.gen_mw[k]));
            step["generators"][id] = f.gen_mw[k];
        }
        step["total_loss_mw"] = f.total_loss();
        j.push_back(step);
    }
    run.add("pf.json", j);
    run.add("pf_lines.csv", lines);
    run.add("pf_generators.csv", gens);
    run.write();
}

void cmd_trace(Run& run) {
    struct Traced {
        FlowSolution flow;
        CarbonFlowSolution cf;
    };
    auto traced = run.per_snapshot([&](const Snapshot& s) {
        auto flow = flow_for(run, s);
        auto cf = solve_carbon_flow(run.net(), flow, run.cfg().rule, cf_options(run));
        return Traced{std::move(flow), std::move(cf)};
    });
    const auto& net = run.net();
    std::string csv = "t,kind,id,mw,intensity_ton_per_mwh,emissions_ton_per_h\n";
    ojson j = ojson::array();
    for (std::size_t i = 0; i < traced.size(); ++i) {
        const auto t = run.snapshots()[i].timestep_index;
        const auto& [flow, cf] = traced[i];
        ojson step{{"t", t}, {"mixing_rule", std::string(to_string(cf.rule))}};
        step["buses"] = ojson::array();
        for (std::size_t b = 0; b < net.buses().size(); ++b) {
            csv += fmt::format("{},bus,{},,{},\n", t, net.buses()[b].id, num(cf.bus_intensity[b]));
            step["buses"].push_back({{"id", net.buses()[b].id}, {"intensity", cf.bus_intensity[b]},
                                     {"zero_throughflow", static_cast<bool>(cf.zero_throughflow[b])}});
        }
        step["lines"] = ojson::array();
        for (std::size_t l = 0; l < net.lines().size(); ++l) {
            csv += fmt::format("{},line,{},{},{},{}\n", t, net.lines()[l].id, num(flow.sending_mw[l]),
                               num(cf.line_intensity[l]), num(cf.line_carbon_sending[l]));
            step["lines"].push_back({{"id", net.lines()[l].id}, {"sending_mw", flow.sending_mw[l]},
                                     {"intensity", cf.line_intensity[l]}, {"carbon_sending", cf.line_carbon_sending[l]},
                                     {"carbon_receiving", cf.line_carbon_receiving[l]}, {"carbon_loss", cf.line_carbon_loss[l]}});
        }
        step["loads"] = ojson::array();
        for (std::size_t h = 0; h < net.loads().size(); ++h) {
            csv += fmt::format("{},load,{},{},{},{}\n", t, net.loads()[h].id, num(flow.load_mw[h]),
                               num(cf.load_intensity[h]), num(cf.load_emissions[h]));
            step["loads"].push_back({{"id", net.loads()[h].id}, {"mw", flow.load_mw[h]},
                                     {"intensity", cf.load_intensity[h]}, {"emissions", cf.load_emissions[h]}});
        }
        step["generators"] = ojson::array();
        for (std::size_t k = 0; k < net.generators().size(); ++k) {
            csv += fmt::format("{},generator,{},{},{},{}\n", t, net.generators()[k].id, num(flow.gen_mw[k]),
                               num(net.generators()[k].gef), num(cf.generator_emissions[k]));
            step["generators"].push_back({{"id", net.generators()[k].id}, {"mw", flow.gen_mw[k]},
                                          {"emissions", cf.generator_emissions[k]}});
        }
        j.push_back(step);
    }
    run.add("trace.json", j);
    run.add("trace.csv", csv);
    run.write();
}

void cmd_account(Run& run) {
    EmissionReport total;
    if (run.opt().method == "area") {
        auto reports = run.per_snapshot([&](const Snapshot& s) {
            return attribute_area_average(run.net(), flow_for(run, s), s.delta_t, s.timestep_index);
        });
        total = aggregate_horizon(reports);
        if (reports.empty()) total.method = {Method::AreaAverage, std::nullopt, std::nullopt};
    } else if (run.opt().method == "flow") {
        HorizonOptions h;
        h.model = run.cfg().storage_model;
        h.rule = run.cfg().rule;
        h.power_flow = run.pf_options();
        total = simulate_horizon(run.net(), run.snapshots(), h).total;
    } else {
        throw UsageError("--method must be flow or area");
    }
    run.add("account.json", report_json(total));
    run.add("account.csv", report_csv(total));
    run.write();
}

void cmd_aef(Run& run) {
    AefOptions o{run.cfg().area, run.cfg().consumption_based_aef};
    auto values = run.per_snapshot([&](const Snapshot& s) { return compute_aef(run.net(), flow_for(run, s), o); });
    std::string csv = "t,area,consumption_based,aef_ton_per_mwh\n";
    ojson j = ojson::array();
    for (std::size_t i = 0; i < values.size(); ++i) {
        const auto t = run.snapshots()[i].timestep_index;
        csv += fmt::format("{},{},{},{}\n", t, o.area.value_or(""), o.consumption_based, num(values[i]));
        j.push_back({{"t", t}, {"area", o.area ? ojson(*o.area) : ojson(nullptr)}, {"consumption_based", o.consumption_based},
                     {"aef", values[i]}});
    }
    run.add("aef.json", j);
    run.add("aef.csv", csv);
    run.write();
}

PerturbationKind perturbation_kind(const Options& opt) {
    if (opt.perturbation == "load") return PerturbationKind::LoadChange;
    if (opt.perturbation == "injection") return PerturbationKind::InjectionChange;
    throw UsageError("--kind must be load or injection");
}

void cmd_cef(Run& run) {
    const Perturbation p{run.opt().target, run.opt().delta_mw, perturbation_kind(run.opt())};
    auto results = run.per_snapshot([&](const Snapshot& s) { return compute_cef(run.net(), s, p); });
    std::string csv = "t,target,delta_mw,baseline_emissions,perturbed_emissions,delta_e,cef\n";
    ojson j = ojson::array();
    for (std::size_t i = 0; i < results.size(); ++i) {
        const auto t = run.snapshots()[i].timestep_index;
        const auto& r = results[i];
        csv += fmt::format("{},{},{},{},{},{},{}\n", t, p.target, num(r.delta_mw), num(r.baseline_emissions),
                           num(r.perturbed_emissions), num(r.delta_e), num(r.cef));
        j.push_back({{"t", t}, {"target", p.target}, {"delta_mw", r.delta_mw},
                     {"baseline_emissions", r.baseline_emissions}, {"perturbed_emissions", r.perturbed_emissions},
                     {"delta_e", r.delta_e}, {"cef", r.cef}, {"baseline_binding", r.baseline_binding},
                     {"perturbed_binding", r.perturbed_binding}});
    }
    run.add("cef.json", j);
    run.add("cef.csv", csv);
    run.write();
}

void cmd_mef(Run& run) {
    const auto& target = run.opt().target;
    auto results = run.per_snapshot([&](const Snapshot& s) { return compute_mef(run.net(), s, target, run.opt().epsilon); });
    std::string csv = "t,target,epsilon_mw,mef,forward,backward,breakpoint,one_sided\n";
    ojson j = ojson::array();
    for (std::size_t i = 0; i < results.size(); ++i) {
        const auto t = run.snapshots()[i].timestep_index;
        const auto& r = results[i];
        csv += fmt::format("{},{},{},{},{},{},{},{}\n", t, target, num(run.opt().epsilon), num(r.mef), num(r.forward),
                           num(r.backward), r.breakpoint, r.one_sided);
        j.push_back({{"t", t}, {"target", target}, {"epsilon_mw", run.opt().epsilon}, {"mef", r.mef},
                     {"forward", r.forward}, {"backward", r.backward}, {"breakpoint", r.breakpoint},
                     {"one_sided", r.one_sided}});
    }
    run.add("mef.json", j);
    run.add("mef.csv", csv);
    run.write();
}

void cmd_copf(Run& run) {
    const auto& net = run.net();
    auto problem_for = [&](const Snapshot& s) {
        CopfProblem p;
        p.snapshot = s;
        p.snapshot.gen_mw.clear();
        p.carbon_price = run.cfg().carbon_price;
        p.nodal_intensity_caps = run.cfg().nodal_intensity_caps;
        p.total_emission_cap = run.cfg().total_emission_cap;
        p.cap_tolerance = run.cfg().tolerances.cap;
        p.max_iterations = static_cast<std::size_t>(run.cfg().max_iterations);
        return p;
    };
    struct Solved {
        DispatchResult r;
        PriceDecomposition prices;
    };
    auto solved = run.per_snapshot([&](const Snapshot& s) {
        auto p = problem_for(s);
        auto r = p.nodal_intensity_caps.empty() ? solve_copf_cost_adder(net, p) : solve_copf_intensity_capped(net, p);
        auto prices = extract_prices(net, r, p);
        return Solved{std::move(r), std::move(prices)};
    });
    std::string dispatch = "t,generator_id,mw\n";
    std::string prices = "t,bus_id,lmp,energy_component,congestion_component\n";
    std::string lines = "t,line_id,flow_mw,congestion_dual,binding\n";
    ojson j = ojson::array();
    for (std::size_t i = 0; i < solved.size(); ++i) {
        const auto t = run.snapshots()[i].timestep_index;
        const auto& [r, pr] = solved[i];
        ojson step{{"t", t},
                   {"objective", r.objective},
                   {"total_emissions", r.total_emissions},
                   {"carbon_aware_prices", pr.carbon_aware},
                   {"congestion_rent", pr.congestion_rent},
                   {"certificate_gap", r.certificate_gap()},
                   {"binding_lines", r.binding_lines},
                   {"emission_cap_dual", r.emission_cap_dual ? ojson(*r.emission_cap_dual) : ojson(nullptr)},
                   {"degenerate_duals", r.degenerate_duals},
                   {"alternative_optima", r.alternative_optima}};
        step["generators"] = ojson::object();
        for (std::size_t k = 0; k < r.gen_mw.size(); ++k) {
            dispatch += fmt::format("{},{},{}\n", t, net.generators()[k].id, num(r.gen_mw[k]));
            step["generators"][net.generators()[k].id] = r.gen_mw[k];
        }
        step["buses"] = ojson::array();
        for (std::size_t b = 0; b < r.lmp.size(); ++b) {
            prices += fmt::format("{},{},{},{},{}\n", t, net.buses()[b].id, num(r.lmp[b]), num(pr.energy_component),
                                  num(pr.congestion_component[b]));
            step["buses"].push_back({{"id", net.buses()[b].id}, {"lmp", r.lmp[b]},
                                     {"congestion_component", pr.congestion_component[b]}});
        }
        for (std::size_t l = 0; l < r.line_flow_mw.size(); ++l) {
            const auto& id = net.lines()[l].id;
            const bool binding = std::find(r.binding_lines.begin(), r.binding_lines.end(), id) != r.binding_lines.end();
            lines += fmt::format("{},{},{},{},{}\n", t, id, num(r.line_flow_mw[l]), num(r.line_congestion_dual[l]), binding);
        }
        step["iterations"] = ojson::array();
        for (const auto& it : r.iteration_log)
            step["iterations"].push_back({{"iteration", it.iteration}, {"objective", it.objective},
                                          {"max_violation", it.max_violation}, {"violated_buses", it.violated_buses}});
        j.push_back(step);
    }
    run.add("copf.json", j);
    run.add("copf_dispatch.csv", dispatch);
    run.add("copf_prices.csv", prices);
    run.add("copf_lines.csv", lines);
    run.write();
}

void cmd_storage_sim(Run& run) {
    HorizonOptions h;
    h.model = run.cfg().storage_model;
    h.rule = run.cfg().rule;
    h.power_flow = run.pf_options();
    auto result = simulate_horizon(run.net(), run.snapshots(), h);
    std::string csv = "step,unit_id,energy_mwh,carbon_ton,intensity_ton_per_mwh\n";
    ojson traj = ojson::array();
    for (std::size_t i = 0; i < result.trajectory.size(); ++i) {
        ojson row = ojson::array();
        for (std::size_t s = 0; s < result.trajectory[i].size(); ++s) {
            const auto& st = result.trajectory[i][s];
            const auto& id = run.net().storage_units()[s].id;
            csv += fmt::format("{},{},{},{},{}\n", i, id, num(st.energy_mwh), num(st.carbon_ton), num(st.intensity()));
            row.push_back({{"id", id}, {"energy_mwh", st.energy_mwh}, {"carbon_ton", st.carbon_ton}});
        }
        traj.push_back(row);
    }
    ojson j{{"report", report_json(result.total)}, {"trajectory", traj}};
    run.add("storage_sim.json", j);
    run.add("storage_trajectory.csv", csv);
    run.add("storage_report.csv", report_csv(result.total));
    run.write();
}

void cmd_deliverability(Run& run) {
    const auto& contracts = run.cfg().rule.contracts;
    if (contracts.empty()) throw UsageError("deliverability needs contracts (--contract or config)");
    auto verdicts = run.per_snapshot([&](const Snapshot& s) {
        auto flow = flow_for(run, s);
        std::vector<DeliverabilityVerdict> out;
        for (const auto& c : contracts) out.push_back(check_deliverability(run.net(), flow, c));
        return out;
    });
    std::string csv = "t,load_id,source_id,contract_mw,max_deliverable_mw,deliverable,bottleneck_lines\n";
    ojson j = ojson::array();
    for (std::size_t i = 0; i < verdicts.size(); ++i) {
        const auto t = run.snapshots()[i].timestep_index;
        for (std::size_t c = 0; c < contracts.size(); ++c) {
            const auto& v = verdicts[i][c];
            std::string lines;
            for (const auto& l : v.bottleneck_lines) lines += (lines.empty() ? "" : ";") + l;
            csv += fmt::format("{},{},{},{},{},{},{}\n", t, contracts[c].load_id, contracts[c].source_id,
                               num(contracts[c].mw), num(v.max_deliverable_mw), v.deliverable, lines);
            j.push_back({{"t", t}, {"load", contracts[c].load_id}, {"source", contracts[c].source_id},
                         {"contract_mw", contracts[c].mw},
                         {"max_deliverable_mw", std::isfinite(v.max_deliverable_mw) ? ojson(v.max_deliverable_mw) : ojson(nullptr)},
                         {"deliverable", v.deliverable}, {"bottleneck_lines", v.bottleneck_lines}});
        }
    }
    run.add("deliverability.json", j);
    run.add("deliverability.csv", csv);
    run.write();
}

void print_error(std::string_view kind, std::string_view message, const std::vector<std::string>& problems = {}) {
    ojson e{{"error", kind}, {"message", message}};
    if (!problems.empty()) e["problems"] = problems;
    std::cerr << e.dump() << "\n";
}

std::string strip_kind(const Error& e) {
    std::string msg = e.what();
    const auto prefix = std::string(to_string(e.kind())) + ": ";
    return msg.rfind(prefix, 0) == 0 ? msg.substr(prefix.size()) : msg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Network-aware carbon accounting: carbon flow tracing, attribution, consequential factors and "
                 "carbon-aware dispatch.",
                 "carbonflow"};
    app.set_version_flag("--version", CARBONFLOW_VERSION);
    app.require_subcommand(1);

    Options opt;
    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", opt.config, "Run configuration JSON");
        sub->add_option("--grid", opt.grid, "Grid JSON (overrides the config)");
        sub->add_option("--timeseries", opt.timeseries, "Time-series CSV (overrides the config)");
        sub->add_option("--out", opt.out, "Output directory");
        sub->add_option("--delta-t", opt.delta_t, "Timestep length in hours");
        sub->add_option("--jobs", opt.jobs, "Snapshots solved in parallel")->capture_default_str();
        sub->add_option("--timestep", opt.timestep, "Only run this row of the time series");
        sub->add_option("--mixing-rule", opt.mixing_rule, "proportional_sharing | contract_priority");
        sub->add_option("--contract", opt.contracts, "LOAD:SOURCE:MW, repeatable");
        return sub;
    };

    common(app.add_subcommand("validate", "Check a grid and time series"));
    common(app.add_subcommand("pf", "DC power flow with losses"));
    common(app.add_subcommand("trace", "Carbon flow tracing"));
    auto account = common(app.add_subcommand("account", "Scope 1/2 attribution over the horizon"));
    account->add_option("--method", opt.method, "flow | area")->capture_default_str();
    account->add_option("--storage-model", opt.storage_model, "water_tank | load_plus_clean_gen");
    auto aef = common(app.add_subcommand("aef", "Area-average emission factor"));
    aef->add_option("--area", opt.area, "Area tag (whole grid when omitted)");
    aef->add_flag("--consumption-based", opt.consumption_based, "Count imports as sources");
    auto cef = common(app.add_subcommand("cef", "Consequential emission factor of a finite change"));
    cef->add_option("--target", opt.target, "Load id (or bus id with --kind injection)")->required();
    cef->add_option("--delta", opt.delta_mw, "Change in MW")->required();
    cef->add_option("--kind", opt.perturbation, "load | injection")->capture_default_str();
    auto mef = common(app.add_subcommand("mef", "Marginal emission factor"));
    mef->add_option("--target", opt.target, "Load or bus id")->required();
    mef->add_option("--epsilon", opt.epsilon, "Finite-difference step in MW")->capture_default_str();
    auto copf = common(app.add_subcommand("copf", "Carbon-aware optimal power flow and prices"));
    copf->add_option("--carbon-price", opt.carbon_price, "$/ton");
    copf->add_option("--cap", opt.caps, "BUS=TON_PER_MWH nodal intensity cap, repeatable");
    copf->add_option("--emission-cap", opt.emission_cap, "Total emissions cap, ton/h");
    copf->add_option("--max-iterations", opt.max_iterations, "Cap iteration limit");
    auto storage = common(app.add_subcommand("storage-sim", "Storage emission models over the horizon"));
    storage->add_option("--storage-model", opt.storage_model, "water_tank | load_plus_clean_gen");
    common(app.add_subcommand("deliverability", "Contract deliverability over realized flows"));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    auto* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    std::vector<std::string> args(argv + 1, argv + argc);
    try {
        Run run(name, opt, args);
        if (name == "validate") cmd_validate(run);
        else if (name == "pf") cmd_pf(run);
        else if (name == "trace") cmd_trace(run);
        else if (name == "account") cmd_account(run);
        else if (name == "aef") cmd_aef(run);
        else if (name == "cef") cmd_cef(run);
        else if (name == "mef") cmd_mef(run);
        else if (name == "copf") cmd_copf(run);
        else if (name == "storage-sim") cmd_storage_sim(run);
        else if (name == "deliverability") cmd_deliverability(run);
    } catch (const UsageError& e) {
        std::cerr << "carbonflow " << name << ": " << e.what() << "\n";
        return 2;
    } catch (const GridError& e) {
        print_error(to_string(e.kind()), strip_kind(e), e.problems());
        return 1;
    } catch (const Error& e) {
        print_error(to_string(e.kind()), strip_kind(e));
        return 1;
    } catch (const fs::filesystem_error& e) {
        print_error("IoError", e.what());
        return 1;
    }
    return 0;
}
