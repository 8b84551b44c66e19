#include "oracles.hpp"

#include <catch_amalgamated.hpp>

using namespace carbonflow;
using Catch::Matchers::WithinAbs;

namespace {

struct Case {
    Network net;
    FlowSolution flow;
};

Case fixture(const std::string& grid, const std::string& series, std::size_t row = 0) {
    auto net = load_grid(oracle::data_path(grid));
    auto snaps = load_timeseries(oracle::data_path(series), net);
    return {net, apply_losses(solve_dc_power_flow(net, snaps.at(row)), net)};
}

EmissionReport flow_report(const Case& c, double dt = 1.0, std::size_t t = 0) {
    return attribute_emissions(c.net, c.flow, solve_carbon_flow(c.net, c.flow), dt, t);
}

double scale_of(const EmissionReport& r) {
    double s = 1.0;
    for (const auto& rec : r.records) s = std::max(s, std::abs(rec.emissions_ton));
    return s;
}

}  // namespace

TEST_CASE("half coal, half solar averages to one half") {
    auto c = fixture("fig2_counterexample.json", "fig2_counterexample.csv");
    CHECK_THAT(compute_aef(c.net, c.flow), WithinAbs(0.5, 1e-12));
}

TEST_CASE("one generator sets the average") {
    Network net({{"b", "", ""}}, {}, {{"g", "b", 0.73, 0, kUnbounded, 1, ""}}, {{"d", "b", 12}}, {}, "b");
    auto flow = apply_losses(solve_dc_power_flow(net, Snapshot{.gen_mw = {{"g", 12}}}), net);
    CHECK_THAT(compute_aef(net, flow), WithinAbs(0.73, 1e-12));
}

TEST_CASE("area factors equal those of the separated sub-networks") {
    std::mt19937_64 rng(61);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 50; ++i) {
        auto c = oracle::random_case(rng, {.max_buses = 10});
        auto flow = apply_losses(solve_dc_power_flow(c.net, c.snap), c.net);
        for (const std::string area : {"east", "west"}) {
            double e = 0.0, p = 0.0;
            for (std::size_t k = 0; k < c.net.generators().size(); ++k) {
                const auto& g = c.net.generators()[k];
                if (c.net.buses()[*c.net.bus_index(g.bus)].area != area) continue;
                e += g.gef * flow.gen_mw[k];
                p += flow.gen_mw[k];
            }
            if (p > 0.0) {
                CHECK_THAT(compute_aef(c.net, flow, {area, false}), WithinAbs(e / p, 1e-12));
            } else {
                CHECK_THROWS_AS(compute_aef(c.net, flow, {area, false}), Error);
            }
        }
    }
}

TEST_CASE("consumption-based factor counts imports as sources") {
    Network net({{"b", "", "a"}}, {}, {{"g", "b", 0.2, 0, kUnbounded, 1, ""}}, {{"d", "b", 20}}, {}, "b");
    Snapshot snap;
    snap.gen_mw = {{"g", 10}};
    snap.imports = {{"b", {10, 0.8}}};
    auto flow = apply_losses(solve_dc_power_flow(net, snap), net);
    CHECK_THAT(compute_aef(net, flow), WithinAbs(0.2, 1e-12));
    CHECK_THAT(compute_aef(net, flow, {std::nullopt, true}), WithinAbs(0.5, 1e-12));
}

TEST_CASE("an area without output has no factor") {
    auto c = fixture("fig4_grid1.json", "fig4_grid1.csv");
    try {
        compute_aef(c.net, c.flow, {"nowhere", false});
        FAIL("expected ZeroGeneration");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::ZeroGeneration);
    }
}

TEST_CASE("grid 1: the load next to the clean unit reports nothing") {
    auto c = fixture("fig4_grid1.json", "fig4_grid1.csv");
    auto r = flow_report(c);
    CHECK(r.find("L2", EntityKind::Load)->emissions_ton == 0.0);
    CHECK_THAT(r.find("L1", EntityKind::Load)->emissions_ton, WithinAbs(1.0 * 60.0, 1e-12));
    CHECK_THAT(r.find("G1", EntityKind::Generator)->emissions_ton, WithinAbs(60.0, 1e-12));
    CHECK(r.find("G1", EntityKind::Generator)->scope == 1);
    CHECK(r.find("L1", EntityKind::Load)->scope == 2);
    CHECK(r.find("grid", EntityKind::GridOwner)->emissions_ton == 0.0);
    CHECK(r.method.str() == "flow_based:proportional_sharing");
}

TEST_CASE("grid 2: loads on a shared bus split at the mixed intensity") {
    auto c = fixture("fig4_grid2.json", "fig4_grid2.csv");
    auto r = flow_report(c, 2.0);
    CHECK_THAT(r.find("L1", EntityKind::Load)->emissions_ton, WithinAbs(0.6 * 30.0 * 2.0, 1e-12));
    CHECK_THAT(r.find("L2", EntityKind::Load)->emissions_ton, WithinAbs(0.6 * 70.0 * 2.0, 1e-12));
    CHECK_THAT(r.find("L2", EntityKind::Load)->energy_mwh, WithinAbs(140.0, 1e-12));
    CHECK(r.hours == 2.0);
}

TEST_CASE("pool accounting gives both loads half the emissions") {
    auto c = fixture("fig2_counterexample.json", "fig2_counterexample.csv");
    auto r = attribute_area_average(c.net, c.flow, 1.0);
    CHECK_THAT(r.find("L1", EntityKind::Load)->emissions_ton, WithinAbs(5.0, 1e-12));
    CHECK_THAT(r.find("L2", EntityKind::Load)->emissions_ton, WithinAbs(5.0, 1e-12));
    CHECK(r.method.str() == "area_average");
    CHECK(std::abs(r.closure_gap()) < 1e-12);
}

TEST_CASE("a single bus makes pool and flow accounting coincide") {
    std::mt19937_64 rng(62);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 40; ++i) {
        std::vector<Generator> gens;
        std::vector<Load> loads;
        Snapshot snap;
        double total = 0.0;
        for (int k = 0; k < 4; ++k) {
            gens.push_back({"g" + std::to_string(k), "b", u(rng), 0, kUnbounded, 1, ""});
            snap.gen_mw[gens.back().id] = 1.0 + 20.0 * u(rng);
            total += snap.gen_mw[gens.back().id];
        }
        double rest = total;
        for (int h = 0; h < 3; ++h) {
            const double mw = h == 2 ? rest : rest * u(rng);
            loads.push_back({"d" + std::to_string(h), "b", mw});
            rest -= mw;
        }
        Network net({{"b", "", ""}}, {}, gens, loads, {}, "b");
        auto flow = apply_losses(solve_dc_power_flow(net, snap), net);
        auto cf = solve_carbon_flow(net, flow);
        double weighted = 0.0, demand = 0.0;
        for (std::size_t h = 0; h < loads.size(); ++h) {
            weighted += cf.load_intensity[h] * flow.load_mw[h];
            demand += flow.load_mw[h];
        }
        CHECK_THAT(compute_aef(net, flow), WithinAbs(weighted / demand, 1e-12));
    }
}

TEST_CASE("reports close: sources equal sinks") {
    std::mt19937_64 rng(63);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 200; ++i) {
        auto c = oracle::random_case(rng, {.max_buses = 15, .storage = true, .imports = true});
        auto flow = apply_losses(solve_dc_power_flow(c.net, c.snap), c.net);
        std::vector<double> w(c.net.storage_units().size());
        for (auto& v : w) v = u(rng);
        CarbonFlowOptions opt;
        opt.storage_intensity = w;
        const double dt = 0.25 + u(rng);
        auto cf = solve_carbon_flow(c.net, flow, MixingRule::proportional(), opt);
        auto r = attribute_emissions(c.net, flow, cf, dt);
        CHECK(std::abs(r.closure_gap()) <= 1e-9 * scale_of(r));
        auto pool = attribute_area_average(c.net, flow, dt, 0, w);
        CHECK(std::abs(pool.closure_gap()) <= 1e-9 * scale_of(pool));
        CHECK_THAT(pool.total(1), WithinAbs(r.total(1), 1e-9 * scale_of(r)));
        bool lossless = true;
        for (double l : flow.loss_mw) lossless = lossless && l == 0.0;
        if (lossless) CHECK(r.find("grid", EntityKind::GridOwner)->emissions_ton == 0.0);
    }
}

TEST_CASE("one report aggregates to itself") {
    auto r = flow_report(fixture("fig4_grid2.json", "fig4_grid2.csv"));
    auto total = aggregate_horizon({r});
    REQUIRE(total.records.size() == r.records.size());
    for (std::size_t i = 0; i < r.records.size(); ++i) {
        CHECK(total.records[i].entity_id == r.records[i].entity_id);
        CHECK(total.records[i].emissions_ton == r.records[i].emissions_ton);
        CHECK(total.records[i].energy_mwh == r.records[i].energy_mwh);
    }
    CHECK(total.method == r.method);
}

TEST_CASE("two identical timesteps double every entry") {
    auto c = fixture("fig4_grid2.json", "fig4_grid2.csv");
    auto a = flow_report(c, 1.0, 0);
    auto b = flow_report(c, 1.0, 1);
    auto total = aggregate_horizon({a, b});
    for (std::size_t i = 0; i < a.records.size(); ++i) {
        CHECK(total.records[i].emissions_ton == 2.0 * a.records[i].emissions_ton);
        CHECK(total.records[i].energy_mwh == 2.0 * a.records[i].energy_mwh);
    }
    CHECK(total.first_timestep == 0u);
    CHECK(total.last_timestep == 1u);
    CHECK(total.hours == 2.0);
}

TEST_CASE("methods are never mixed") {
    auto c = fixture("fig2_counterexample.json", "fig2_counterexample.csv");
    auto flow_based = flow_report(c, 1.0, 0);
    auto pool = attribute_area_average(c.net, c.flow, 1.0, 1);
    auto cef = compute_cef(c.net, Snapshot{.load_mw = {{"L1", 10}, {"L2", 10}}}, {"L2", -10.0});
    CHECK_THAT(cef.delta_e, WithinAbs(-10.0, 1e-9));
    auto offset = consequential_report("L2", cef, 1.0, 1);
    CHECK(offset.method.str() == "consequential");
    for (const auto& pair : {std::vector<EmissionReport>{flow_based, offset}, {flow_based, pool}, {pool, offset}}) {
        try {
            aggregate_horizon(pair);
            FAIL("expected MixedMethods");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::MixedMethods);
        }
    }
    auto other_rule = attribute_emissions(c.net, c.flow, solve_carbon_flow(c.net, c.flow, MixingRule::contract_priority({})), 1.0, 1);
    CHECK_THROWS_AS(aggregate_horizon({flow_based, other_rule}), Error);
}

TEST_CASE("a timestep cannot be counted twice") {
    auto r = flow_report(fixture("fig4_grid1.json", "fig4_grid1.csv"), 1.0, 3);
    try {
        aggregate_horizon({r, r});
        FAIL("expected OverlappingHorizon");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::OverlappingHorizon);
    }
}

TEST_CASE("empty horizon aggregates to an empty report") {
    auto total = aggregate_horizon({});
    CHECK(total.records.empty());
    CHECK(total.hours == 0.0);
}

TEST_CASE("aggregation of random horizons keeps closure") {
    std::mt19937_64 rng(64);
    for (int i = 0; i < 20; ++i) {
        auto c = oracle::random_case(rng, {.max_buses = 8, .imports = true});
        std::vector<EmissionReport> reports;
        double expected_l = 0.0;
        for (std::size_t t = 0; t < 5; ++t) {
            Snapshot snap = c.snap;
            const double k = 0.5 + 0.1 * static_cast<double>(t);
            for (auto& [id, mw] : snap.load_mw) mw *= k;
            for (auto& [id, mw] : snap.gen_mw) mw *= k;
            for (auto& [id, imp] : snap.imports) imp.mw *= k;
            auto flow = apply_losses(solve_dc_power_flow(c.net, snap), c.net);
            reports.push_back(attribute_emissions(c.net, flow, solve_carbon_flow(c.net, flow), 1.0, t));
            expected_l += reports.back().find(c.net.loads()[0].id, EntityKind::Load)->emissions_ton;
        }
        auto total = aggregate_horizon(reports);
        CHECK(std::abs(total.closure_gap()) <= 1e-9 * scale_of(total));
        CHECK_THAT(total.find(c.net.loads()[0].id, EntityKind::Load)->emissions_ton, WithinAbs(expected_l, 1e-9));
    }
}

TEST_CASE("csv and json layouts") {
    auto r = flow_report(fixture("fig4_grid1.json", "fig4_grid1.csv"));
    auto csv = report_csv(r);
    CHECK(csv.rfind("entity_id,kind,scope,energy_mwh,emissions_ton,method\n", 0) == 0);
    CHECK(csv.find("G1,generator,1,60,60,flow_based:proportional_sharing\n") != std::string::npos);
    CHECK(csv.find("L2,load,2,40,0,flow_based:proportional_sharing\n") != std::string::npos);
    CHECK(csv.find("grid,grid_owner,2,0,0,") != std::string::npos);
    auto j = report_json(r);
    CHECK(j["method"] == "flow_based:proportional_sharing");
    CHECK(j["first_timestep"] == 0);
    CHECK(j["records"].size() == r.records.size());
    CHECK(j["records"][0]["entity_id"] == "G1");
    CHECK(format_number(-0.0) == "0");
    CHECK(format_number(1.0 / 3.0) == "0.333333333");
    CHECK(format_number(1e-20) == "1e-20");
}
