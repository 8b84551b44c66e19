#include "oracles.hpp"

#include <catch_amalgamated.hpp>

using namespace carbonflow;
using Catch::Matchers::WithinAbs;

namespace {

Network three_node() { return load_grid(oracle::data_path("fig5_three_node.json")); }

Snapshot fig5(double l2) {
    Snapshot s;
    s.load_mw = {{"L2", l2}, {"L3", 300.0}};
    return s;
}

Network single_bus(std::vector<Generator> gens, std::vector<Load> loads) {
    for (auto& g : gens) g.bus = "b";
    for (auto& d : loads) d.bus = "b";
    return Network({{"b", "", ""}}, {}, gens, loads, {}, "b");
}

// Radial network with integer data: dispatch vertices are integral, so a 1 MW grid search is exact.
Network integer_tree(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<int> pmax(5, 20), cap(5, 30), load(0, 12);
    std::vector<Bus> buses;
    for (int i = 0; i < 5; ++i) buses.push_back({"b" + std::to_string(i), "", ""});
    std::vector<Line> lines;
    for (int i = 1; i < 5; ++i) {
        const int parent = std::uniform_int_distribution<int>(0, i - 1)(rng);
        lines.push_back({"l" + std::to_string(i), buses[parent].id, buses[i].id, 0.05 + 0.1 * u(rng),
                         static_cast<double>(cap(rng)), 0.0});
    }
    std::vector<Generator> gens;
    for (int k = 0; k < 4; ++k)
        gens.push_back({"g" + std::to_string(k), buses[std::uniform_int_distribution<int>(0, 4)(rng)].id, u(rng), 0,
                        static_cast<double>(pmax(rng)), 5.0 + 40.0 * u(rng), ""});
    gens.back().p_max = 40.0;
    std::vector<Load> loads;
    for (int i = 0; i < 5; ++i) loads.push_back({"d" + std::to_string(i), buses[i].id, static_cast<double>(load(rng))});
    return Network(buses, lines, gens, loads, {}, "b0");
}

double grid_search_emissions(const Network& net, const Snapshot& snap, bool& found) {
    auto r = oracle::grid_search_dispatch(net, snap, 1.0);
    found = r.found;
    double e = 0.0;
    for (std::size_t k = 0; k < r.gen_mw.size(); ++k) e += net.generators()[k].gef * r.gen_mw[k];
    return e;
}

oracle::RandomCase random_market(std::mt19937_64& rng) {
    auto c = oracle::random_case(rng, {.max_buses = 8, .losses = false});
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double load = 0.0;
    for (const auto& [id, mw] : c.snap.load_mw) load += mw;
    auto lines = c.net.lines();
    for (auto& l : lines) l.capacity_mw = u(rng) < 0.5 ? kUnbounded : load * (0.3 + 0.6 * u(rng));
    auto gens = c.net.generators();
    for (auto& g : gens) {
        g.p_max = g.id == "g00" ? kUnbounded : load * u(rng);
        g.marginal_cost = 5.0 + 45.0 * u(rng);
    }
    Snapshot snap;
    snap.load_mw = c.snap.load_mw;
    return {Network(c.net.buses(), lines, gens, c.net.loads(), {}, c.net.slack_bus()), snap};
}

}  // namespace

TEST_CASE("relieving congestion with more load cuts system emissions") {
    auto net = three_node();
    auto r = compute_cef(net, fig5(0.0), {"L2", 50.0});
    CHECK_THAT(r.baseline_emissions, WithinAbs(150.0, 1e-9));
    CHECK_THAT(r.perturbed_emissions, WithinAbs(100.0, 1e-9));
    CHECK_THAT(r.delta_e, WithinAbs(-50.0, 1e-9));
    CHECK_THAT(r.cef, WithinAbs(-1.0, 1e-9));
    CHECK(r.cef == r.delta_e / r.delta_mw);
    CHECK(r.baseline_binding == std::vector<std::string>{"l23"});
}

TEST_CASE("marginal factor is -1 throughout the congested regime") {
    auto net = three_node();
    for (double l2 : {5.0, 25.0, 45.0}) {
        auto m = compute_mef(net, fig5(l2), "L2");
        CHECK_THAT(m.mef, WithinAbs(-1.0, 1e-6));
        CHECK_FALSE(m.breakpoint);
    }
    auto at_bus = compute_mef(net, fig5(25.0), "n2");
    CHECK_THAT(at_bus.mef, WithinAbs(-1.0, 1e-6));
}

TEST_CASE("the coal unit leaving the dispatch is flagged as a breakpoint") {
    auto net = three_node();
    // G1 = 150 + 2 L2 while line 23 binds, so G3 reaches zero at L2 = 150
    auto m = compute_mef(net, fig5(150.0), "L2");
    CHECK(m.breakpoint);
    CHECK_THAT(m.backward, WithinAbs(-1.0, 1e-6));
    CHECK_THAT(m.forward, WithinAbs(0.0, 1e-6));
    CHECK_FALSE(compute_mef(net, fig5(50.0), "L2").breakpoint);
}

TEST_CASE("single coal unit: every change is charged at its factor") {
    for (double g : {0.3, 0.9, 1.2}) {
        auto net = single_bus({{"coal", "", g, 0, kUnbounded, 30, ""}}, {{"d", "", 80}});
        for (double delta : {-40.0, 1.0, 25.0}) {
            auto r = compute_cef(net, Snapshot{}, {"d", delta});
            CHECK_THAT(r.cef, WithinAbs(g, 1e-12));
        }
    }
}

TEST_CASE("marginal gas unit sets the marginal factor") {
    auto net = single_bus({{"hydro", "", 0.0, 0, 50, 5, ""}, {"gas", "", 0.4, 0, 100, 40, ""},
                           {"oil", "", 0.8, 0, 100, 90, ""}},
                          {{"d", "", 90}});
    auto m = compute_mef(net, Snapshot{}, "d");
    CHECK_THAT(m.mef, WithinAbs(0.4, 1e-9));
    CHECK_FALSE(m.breakpoint);
    auto cut = compute_cef(net, Snapshot{}, {"d", -10.0});
    CHECK(cut.delta_e < 0.0);
}

TEST_CASE("the sign of the factor is not fixed") {
    auto net = three_node();
    CHECK(compute_cef(net, fig5(0.0), {"L2", 50.0}).cef < 0.0);
    auto dirty = single_bus({{"coal", "", 1.0, 0, kUnbounded, 30, ""}}, {{"d", "", 10}});
    CHECK(compute_cef(dirty, Snapshot{}, {"d", 5.0}).cef > 0.0);
    // a load cut at node 2 raises emissions
    auto r = compute_cef(net, fig5(50.0), {"L2", -50.0});
    CHECK(r.delta_e > 0.0);
    CHECK_THAT(r.cef, WithinAbs(-1.0, 1e-9));
}

TEST_CASE("reversing the perturbation from the shifted baseline reverses the change") {
    std::mt19937_64 rng(51);
    int checked = 0;
    for (int i = 0; i < 30; ++i) {
        auto c = random_market(rng);
        const auto& target = c.net.loads().front().id;
        try {
            auto up = compute_cef(c.net, c.snap, {target, 7.5});
            auto shifted = apply_perturbation(c.net, c.snap, {target, 7.5});
            auto down = compute_cef(c.net, shifted, {target, -7.5});
            CHECK_THAT(down.delta_e, WithinAbs(-up.delta_e, 1e-7));
            CHECK_THAT(down.cef, WithinAbs(up.cef, 1e-7));
            ++checked;
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::Infeasible);
        }
    }
    CHECK(checked > 15);
}

TEST_CASE("factor matches exhaustive dispatch on small radial networks") {
    std::mt19937_64 rng(52);
    int compared = 0;
    for (int i = 0; i < 40 && compared < 15; ++i) {
        auto net = integer_tree(rng);
        const auto& target = net.loads()[std::uniform_int_distribution<int>(0, 4)(rng)].id;
        const double delta = std::uniform_int_distribution<int>(1, 5)(rng);
        Snapshot base;
        auto moved = apply_perturbation(net, base, {target, delta});
        bool found_base = false, found_moved = false;
        const double e0 = grid_search_emissions(net, base, found_base);
        const double e1 = grid_search_emissions(net, moved, found_moved);
        if (!found_base || !found_moved) {
            CHECK_THROWS_AS(compute_cef(net, base, {target, delta}), Error);
            continue;
        }
        auto r = compute_cef(net, base, {target, delta});
        CHECK_THAT(r.baseline_emissions, WithinAbs(e0, 1e-6));
        CHECK_THAT(r.perturbed_emissions, WithinAbs(e1, 1e-6));
        CHECK_THAT(r.cef, WithinAbs((e1 - e0) / delta, 1e-6));
        ++compared;
    }
    CHECK(compared >= 10);
}

TEST_CASE("marginal and small finite factors agree away from breakpoints") {
    std::mt19937_64 rng(53);
    int checked = 0;
    for (int i = 0; i < 40; ++i) {
        auto c = random_market(rng);
        const auto& target = c.net.loads().back().id;
        try {
            auto m = compute_mef(c.net, c.snap, target, 1e-2);
            if (m.breakpoint) continue;
            auto r = compute_cef(c.net, c.snap, {target, 1e-2});
            CHECK_THAT(m.mef, WithinAbs(r.cef, 1e-6));
            ++checked;
        } catch (const Error& e) {
            CHECK((e.kind() == ErrorKind::Infeasible || e.kind() == ErrorKind::InvalidArgument));
        }
    }
    CHECK(checked > 15);
}

TEST_CASE("emissions are piecewise linear in one load") {
    std::mt19937_64 rng(54);
    for (int i = 0; i < 6; ++i) {
        auto c = random_market(rng);
        const auto& target = c.net.loads().front().id;
        std::vector<double> e;
        try {
            for (int k = 0; k <= 30; ++k) {
                auto snap = c.snap;
                snap.load_mw[target] = 2.0 * k;
                e.push_back(dispatch_network_constrained(c.net, snap).total_emissions);
            }
        } catch (const Error& err) {
            CHECK(err.kind() == ErrorKind::Infeasible);
        }
        for (std::size_t k = 1; k + 1 < e.size(); ++k) {
            const double left = (e[k] - e[k - 1]) / 2.0, right = (e[k + 1] - e[k]) / 2.0;
            if (std::abs(left - right) > 1e-7) continue;
            auto snap = c.snap;
            snap.load_mw[target] = 2.0 * static_cast<double>(k);
            auto m = compute_mef(c.net, snap, target);
            CHECK_THAT(m.mef, WithinAbs(left, 1e-6));
        }
    }
}

TEST_CASE("a load at zero is probed forward only") {
    auto net = three_node();
    auto m = compute_mef(net, fig5(0.0), "L2");
    CHECK(m.one_sided);
    CHECK_FALSE(m.breakpoint);
    CHECK_THAT(m.mef, WithinAbs(-1.0, 1e-6));
    CHECK_FALSE(compute_mef(net, fig5(25.0), "L2").one_sided);
}

TEST_CASE("bad perturbations are rejected") {
    auto net = three_node();
    try {
        compute_cef(net, fig5(0.0), {"L2", 0.0});
        FAIL("expected ZeroDelta");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::ZeroDelta);
    }
    try {
        compute_cef(net, fig5(0.0), {"nope", 1.0});
        FAIL("expected UnknownId");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::UnknownId);
    }
    CHECK_THROWS_AS(compute_cef(net, fig5(0.0), {"L2", -5.0}), Error);
    CHECK_THROWS_AS(compute_mef(net, fig5(10.0), "L2", 0.0), Error);

    auto small = single_bus({{"g", "", 1.0, 0, 50, 10, ""}}, {{"d", "", 40}});
    try {
        compute_cef(small, Snapshot{}, {"d", 20.0});
        FAIL("expected Infeasible");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Infeasible);
    }
}

TEST_CASE("injection perturbations act like negative load at the bus") {
    auto net = three_node();
    auto load = compute_cef(net, fig5(10.0), {"L2", 20.0});
    auto injection = compute_cef(net, fig5(10.0), {"n2", -20.0, PerturbationKind::InjectionChange});
    CHECK_THAT(load.delta_e, WithinAbs(injection.delta_e, 1e-9));
}
