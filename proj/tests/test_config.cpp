#include <catch_amalgamated.hpp>

#include <filesystem>

#include "gfmstab/config.hpp"
#include "support.hpp"

using namespace gfmstab;
using Catch::Approx;
using nlohmann::json;

namespace {

json minimal() {
    return json::parse(R"({
      "name": "t",
      "source": {"kind": "droop", "preset": "default"},
      "network": {"mode": "emt", "preset": "default", "c_load": 0.02},
      "load": {"kind": "cil", "preset": "default"}
    })");
}

}  // namespace

TEST_CASE("minimal scenario takes the defaults") {
    const Scenario sc = parse_scenario(minimal());
    CHECK(sc.spec.source.kind == SourceKind::droop);
    CHECK(sc.spec.network.mode == NetworkMode::emt);
    CHECK(sc.spec.network.c_load == 0.02);
    CHECK(sc.spec.load.kind == LoadKind::cil);
    CHECK(sc.spec.parameter == StudyParameter::load);
    CHECK(sc.study.at == 1.0);
    CHECK(sc.study.sweep.from == 0.0);
    CHECK(sc.study.sweep.to == 4.5);
    CHECK(sc.study.sweep.step == 0.01);
    CHECK(sc.study.warm_start);
    CHECK(sc.study.probe.amplitudes.size() == 10);
    CHECK(sc.hash.size() == 16);
}

TEST_CASE("unknown keys are rejected at every level") {
    for (const char* ptr : {"/extra", "/source/extra", "/network/extra", "/load/extra"}) {
        json j = minimal();
        j[json::json_pointer(ptr)] = 1;
        INFO(ptr);
        CHECK_THROWS_AS(parse_scenario(j), ConfigError);
    }
    json j = minimal();
    j["study"] = {{"sweep", {{"from", 0}, {"to", 1}, {"step", 0.1}, {"stride", 2}}}};
    CHECK_THROWS_AS(parse_scenario(j), ConfigError);
    j = minimal();
    j["study"] = {{"tolerances", {{"zero_toll", 1e-4}}}};
    CHECK_THROWS_AS(parse_scenario(j), ConfigError);
}

TEST_CASE("type and value errors") {
    auto bad = [](auto mutate) {
        json j = minimal();
        mutate(j);
        return j;
    };
    CHECK_THROWS_AS(parse_scenario(bad([](json& j) { j["source"]["kind"] = "diesel"; })), ConfigError);
    CHECK_THROWS_AS(parse_scenario(bad([](json& j) { j["source"]["preset"] = "fancy"; })), ConfigError);
    CHECK_THROWS_AS(parse_scenario(bad([](json& j) { j["network"].erase("mode"); })), ConfigError);
    CHECK_THROWS_AS(parse_scenario(bad([](json& j) { j["network"]["c_load"] = "0.02"; })), ConfigError);
    CHECK_THROWS_AS(parse_scenario(bad([](json& j) { j.erase("load"); })), ConfigError);
    CHECK_THROWS_AS(parse_scenario(bad([](json& j) { j["study"] = {{"warm_start", 1}}; })), ConfigError);
    CHECK_THROWS_AS(parse_scenario(bad([](json& j) {
                        j["study"] = {{"sweep", {{"from", 1}, {"to", 0}, {"step", 0.1}}}};
                    })),
                    ConfigError);
    CHECK_THROWS_AS(parse_scenario(bad([](json& j) {
                        j["study"] = {{"probe", {{"amplitudes", {0.2, 0.1}}}}};
                    })),
                    ConfigError);
    CHECK_THROWS_AS(parse_scenario(bad([](json& j) { j["study"] = {{"simulate", {{"record_every", 1.5}}}}; })),
                    ConfigError);
    CHECK_THROWS_AS(parse_scenario_text("{\"name\": "), ConfigError);
    CHECK_THROWS_AS(load_scenario("/nonexistent/scenario.json"), ConfigError);
}

TEST_CASE("overrides reach the scenario spec") {
    json j = minimal();
    j["source"]["v_set"] = 1.02;
    j["source"]["droop"] = {{"m_p", 0.05}};
    j["network"]["line"] = {{"r", 0.02}, {"x", 0.2}};
    j["load"]["q_ratio"] = 0.3;
    j["study"] = {{"at", 0.7}, {"tolerances", {{"zero_tol", 1e-5}, {"refine_tol", 1e-6}}}};
    const Scenario sc = parse_scenario(j);
    CHECK(sc.spec.source.v_set == 1.02);
    CHECK(sc.spec.source.gfm.gains.m_p == 0.05);
    CHECK(sc.spec.network.line.r == 0.02);
    CHECK(sc.spec.network.line.x == 0.2);
    CHECK(sc.spec.load.q_ratio == 0.3);
    CHECK(sc.study.at == 0.7);
    CHECK(sc.study.stability.zero_tol == 1e-5);
    CHECK(sc.study.refine_tol == 1e-6);
}

TEST_CASE("grids: explicit, linear and logarithmic") {
    json j = minimal();
    j["load"] = {{"kind", "zip"}, {"preset", "default"}};
    j["study"] = {{"parameter", "eta"}, {"eta_grid", {0.1, 0.2, 0.3}}};
    Scenario sc = parse_scenario(j);
    CHECK(sc.spec.parameter == StudyParameter::eta);
    CHECK(sc.study.eta_grid == std::vector<double>{0.1, 0.2, 0.3});
    j["study"]["eta_grid"] = {{"from", 0.1}, {"to", 0.9}, {"step", 0.1}};
    sc = parse_scenario(j);
    CHECK(sc.study.eta_grid.size() == 9);
    CHECK(sc.study.eta_grid.back() == Approx(0.9));
    j["study"]["eta_grid"] = {{"lo", 0.01}, {"hi", 1.0}, {"n", 3}};
    sc = parse_scenario(j);
    REQUIRE(sc.study.eta_grid.size() == 3);
    CHECK(sc.study.eta_grid[1] == Approx(0.1));
    j["study"]["eta_grid"] = {{"lo", 0.01}, {"hi", 1.0}, {"n", 2.5}};
    CHECK_THROWS_AS(parse_scenario(j), ConfigError);
}

TEST_CASE("hash is deterministic and content-sensitive") {
    const json a = minimal();
    json b = json::parse(R"({
      "load": {"preset": "default", "kind": "cil"},
      "network": {"c_load": 0.02, "preset": "default", "mode": "emt"},
      "source": {"preset": "default", "kind": "droop"},
      "name": "t"
    })");
    CHECK(parse_scenario(a).hash == parse_scenario(a).hash);
    CHECK(parse_scenario(a).hash == parse_scenario(b).hash);
    b["network"]["c_load"] = 0.03;
    CHECK(parse_scenario(a).hash != parse_scenario(b).hash);
    CHECK(hex64(fnv1a("")) == "cbf29ce484222325");
    CHECK(hex64(fnv1a("a")) == "af63dc4c8601ec8c");
}

TEST_CASE("shipped scenarios parse, assemble and solve") {
    std::size_t n = 0;
    for (const auto& e : std::filesystem::directory_iterator(GFMSTAB_SCENARIOS)) {
        if (e.path().extension() != ".json") continue;
        ++n;
        INFO(e.path().filename().string());
        const Scenario sc = load_scenario(e.path().string());
        CHECK(sc.spec.name == e.path().stem().string());
        const SystemModel sys = assemble(sc.spec);
        const OperatingPoint op = initialize(sys, sc.study.at);
        const Residual r = residual(sys, op.x, op.y, op.theta);
        CHECK(std::max(r.f.lpNorm<Eigen::Infinity>(), r.g.lpNorm<Eigen::Infinity>()) < 1e-8);
    }
    CHECK(n >= 30);
}
