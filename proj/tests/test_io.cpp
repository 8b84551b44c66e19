#include "oracles.hpp"

#include <catch_amalgamated.hpp>

#include <sstream>

using namespace carbonflow;
using Catch::Matchers::ContainsSubstring;

namespace {

template <class F>
std::vector<std::string> grid_problems(F&& f, ErrorKind expected) {
    try {
        f();
    } catch (const GridError& e) {
        CHECK(e.kind() == expected);
        return e.problems();
    }
    FAIL("expected a grid error");
    return {};
}

bool mentions(const std::vector<std::string>& problems, const std::string& text) {
    return std::any_of(problems.begin(), problems.end(), [&](const auto& p) { return p.find(text) != std::string::npos; });
}

nlohmann::json fig5_doc() { return nlohmann::json::parse(detail::read_text_file(oracle::data_path("fig5_three_node.json"))); }

std::vector<Snapshot> csv(const std::string& text, const Network& net) {
    std::istringstream in(text);
    return parse_timeseries(in, net);
}

}  // namespace

TEST_CASE("bundled three-node grid loads") {
    auto net = load_grid(oracle::data_path("fig5_three_node.json"));
    CHECK(net.buses().size() == 3);
    CHECK(net.lines().size() == 3);
    CHECK(net.lines()[*net.line_index("l23")].capacity_mw == 50.0);
    CHECK(net.lines()[*net.line_index("l12")].capacity_mw == kUnbounded);
    CHECK(net.generators()[*net.generator_index("G1")].p_max == kUnbounded);
    CHECK(net.slack_bus() == "n3");
}

TEST_CASE("every bundled grid round-trips") {
    for (const auto* name : {"fig5_three_node.json", "fig4_grid1.json", "fig4_grid2.json", "fig2_counterexample.json",
                             "storage_shift.json"}) {
        auto net = load_grid(oracle::data_path(name));
        auto again = parse_grid(serialize_grid(net).dump());
        CHECK(again == net);
        CHECK(serialize_grid(again).dump() == serialize_grid(net).dump());
    }
}

TEST_CASE("random grids round-trip") {
    std::mt19937_64 rng(81);
    for (int i = 0; i < 100; ++i) {
        auto c = oracle::random_case(rng, {.storage = i % 2 == 0});
        CHECK(parse_grid(serialize_grid(c.net).dump(2)) == c.net);
    }
}

TEST_CASE("duplicate ids are named") {
    auto doc = fig5_doc();
    doc["buses"][2]["id"] = "n1";
    auto problems = grid_problems([&] { grid_from_json(doc); }, ErrorKind::SchemaError);
    CHECK(mentions(problems, "duplicate id 'n1'"));
    CHECK(mentions(problems, "/buses/2"));
}

TEST_CASE("an empty object lists every required key") {
    auto problems = grid_problems([] { parse_grid("{}"); }, ErrorKind::SchemaError);
    for (const auto* key : {"schema", "buses", "lines", "generators", "loads", "slack_bus"})
        CHECK(mentions(problems, std::string("/") + key + ": missing required key"));
    CHECK_FALSE(mentions(problems, "/storage"));
}

TEST_CASE("unknown keys and wrong types are rejected with their location") {
    auto doc = fig5_doc();
    doc["generators"][1]["gef_typo"] = 1.0;
    doc["lines"][0]["reactance"] = "0.1";
    doc["extra"] = true;
    auto problems = grid_problems([&] { grid_from_json(doc); }, ErrorKind::SchemaError);
    CHECK(mentions(problems, "/generators/1/gef_typo: unknown key"));
    CHECK(mentions(problems, "/lines/0/reactance"));
    CHECK(mentions(problems, "/extra: unknown key"));
    CHECK(problems.size() == 3);
}

TEST_CASE("wrong schema version is a schema error") {
    auto doc = fig5_doc();
    doc["schema"] = "carbonflow-grid/0";
    auto problems = grid_problems([&] { grid_from_json(doc); }, ErrorKind::SchemaError);
    CHECK(mentions(problems, "/schema"));
}

TEST_CASE("well-formed but invalid grids fail validation with the full list") {
    auto doc = fig5_doc();
    doc["generators"][0]["gef"] = -1.0;
    doc["lines"][0]["reactance"] = 0.0;
    auto problems = grid_problems([&] { grid_from_json(doc); }, ErrorKind::ValidationFailed);
    CHECK(problems.size() >= 2);
    CHECK(mentions(problems, "G1"));
    CHECK(mentions(problems, "l12"));
    CHECK_NOTHROW(grid_from_json(doc, false));
}

TEST_CASE("malformed text and missing files are parse errors") {
    try {
        parse_grid("{\"buses\": [");
        FAIL("expected ParseError");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::ParseError);
    }
    try {
        load_grid("/nonexistent/grid.json");
        FAIL("expected ParseError");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::ParseError);
    }
}

TEST_CASE("one snapshot per row, indexed from zero") {
    auto net = load_grid(oracle::data_path("fig5_three_node.json"));
    std::string text = "t,load:L2,load:L3\n";
    for (int h = 0; h < 24; ++h) text += std::to_string(h) + "," + std::to_string(h) + ",300\n";
    auto snaps = csv(text, net);
    REQUIRE(snaps.size() == 24);
    for (std::size_t h = 0; h < 24; ++h) {
        CHECK(snaps[h].timestep_index == h);
        CHECK(snaps[h].delta_t == 1.0);
        CHECK(snaps[h].load_mw.at("L2") == static_cast<double>(h));
        CHECK_FALSE(snaps[h].has_dispatch());
    }
}

TEST_CASE("all column kinds are read") {
    auto net = load_grid(oracle::data_path("storage_shift.json"));
    auto snaps = csv("t,load:L,gen:coal,storage:S1,import:b1,import_w:b1\n0,10,4,-2,4,0.25\n", net);
    REQUIRE(snaps.size() == 1);
    CHECK(snaps[0].gen_mw.at("coal") == 4.0);
    CHECK(snaps[0].storage_mw.at("S1") == -2.0);
    CHECK(snaps[0].imports.at("b1").mw == 4.0);
    CHECK(snaps[0].imports.at("b1").intensity == 0.25);
}

TEST_CASE("time-series errors") {
    auto net = load_grid(oracle::data_path("fig5_three_node.json"));
    auto kind_of = [&](const std::string& text) {
        try {
            csv(text, net);
        } catch (const Error& e) {
            return e.kind();
        }
        return ErrorKind::InvalidArgument;
    };
    CHECK(kind_of("t,load:L2\n0,1\n1,-5\n") == ErrorKind::NegativeLoad);
    try {
        csv("t,load:L2\n0,1\n1,-5\n", net);
    } catch (const Error& e) {
        CHECK_THAT(std::string(e.what()), ContainsSubstring("row 1"));
    }
    CHECK(kind_of("t,load:L9\n0,1\n") == ErrorKind::UnknownColumn);
    CHECK(kind_of("t,wind:G1\n0,1\n") == ErrorKind::UnknownColumn);
    CHECK(kind_of("t,L2\n0,1\n") == ErrorKind::UnknownColumn);
    CHECK(kind_of("t,import:n1\n0,1\n") == ErrorKind::ParseError);
    CHECK(kind_of("t,load:L2\n0,abc\n") == ErrorKind::ParseError);
    CHECK(kind_of("t,load:L2\n0,1,2\n") == ErrorKind::ParseError);
    CHECK(kind_of("load:L2,t\n1,0\n") == ErrorKind::ParseError);
    CHECK(kind_of("t,load:L2,load:L2\n0,1,1\n") == ErrorKind::ParseError);
}

TEST_CASE("empty data section is an empty horizon") {
    auto net = load_grid(oracle::data_path("fig5_three_node.json"));
    CHECK(csv("t,load:L2,load:L3\n", net).empty());
    CHECK(csv("", net).empty());
}

TEST_CASE("run configuration resolves paths beside the config file") {
    auto cfg = load_run_config(oracle::data_path("fig4_grid2_contract.json"));
    CHECK(cfg.grid == std::filesystem::path(oracle::data_path("fig4_grid2.json")));
    REQUIRE(cfg.timeseries);
    CHECK(cfg.rule.kind == MixingRuleKind::ContractPriority);
    REQUIRE(cfg.rule.contracts.size() == 1);
    CHECK(cfg.rule.contracts[0].mw == 30.0);
    CHECK(cfg.delta_t == 1.0);
    CHECK(cfg.tolerances.balance_mw == 1e-6);
    auto echoed = run_config_from_json(nlohmann::json::parse(run_config_json(cfg).dump()));
    CHECK(run_config_json(echoed).dump() == run_config_json(cfg).dump());
}

TEST_CASE("bad run configurations list their problems") {
    auto doc = nlohmann::json::parse(R"({"grid": "g.json", "delta_t_hours": 0, "tolerances": {"cap": -1},
                                         "mixing_rule": "avg", "colour": 1})");
    auto problems = grid_problems([&] { run_config_from_json(doc); }, ErrorKind::SchemaError);
    CHECK(mentions(problems, "/delta_t_hours"));
    CHECK(mentions(problems, "/tolerances/cap"));
    CHECK(mentions(problems, "/mixing_rule"));
    CHECK(mentions(problems, "/colour: unknown key"));
    grid_problems([] { run_config_from_json(nlohmann::json::object()); }, ErrorKind::SchemaError);
}
