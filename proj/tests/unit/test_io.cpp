#include <filesystem>
#include <fstream>
#include <functional>

#include <gtest/gtest.h>

#include "ctmflow/error.hpp"
#include "ctmflow/io.hpp"
#include "fixtures.hpp"

using namespace ctmflow;
using nlohmann::json;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::InvalidParams;
}

}  // namespace

TEST(Io, NetworkRoundTrip) {
  const NetworkDescription d = grid_description(2, 3);
  const json j = to_json(d);
  EXPECT_EQ(to_json(network_from_json(j)), j);
  EXPECT_EQ(to_json(network_from_json(json::parse(j.dump()))), j);
  const Network net = Network::build(network_from_json(j));
  EXPECT_EQ(net.num_cells(), grid_cell_count(2, 3));
}

TEST(Io, MissingRatioBoundsDefaultToNominal) {
  const json j = json::parse(R"({"cells": [{"id": 1, "source": "O", "sink": "A", "turns": [{"to": 2, "nominal": 1}]},
                                            {"id": 2, "source": "A", "sink": "O", "turns": []}]})");
  const NetworkDescription d = network_from_json(j);
  ASSERT_EQ(d.cells[0].turns.size(), 1u);
  EXPECT_EQ(d.cells[0].turns[0].lower, 1.0);
  EXPECT_EQ(d.cells[0].turns[0].upper, 1.0);
}

TEST(Io, MalformedDocumentsRaiseParseError) {
  EXPECT_EQ(code_of([] { network_from_json(json::parse(R"({"cells": 3})")); }), ErrorCode::ParseError);
  EXPECT_EQ(code_of([] { network_from_json(json::parse(R"({"cells": [{"id": "x"}]})")); }), ErrorCode::ParseError);
  EXPECT_EQ(code_of([] { network_from_json(json::array()); }), ErrorCode::ParseError);
  EXPECT_EQ(code_of([] { scenario_from_json(json::object()); }), ErrorCode::ParseError);
}

TEST(Io, ScenarioRoundTrip) {
  SimConfig cfg;
  cfg.q_in = 120.0;
  Scenario s = experiment_scenario(cfg);
  s.params[1].demand_supply = Tabulated{{0, 100, 200, 300}, {0, 80, 90, 90}, {120, 80, 40, 0}};
  s.params[1].rho_cr = 100.0;
  const json j = to_json(s);
  const Scenario back = scenario_from_json(json::parse(j.dump()));
  EXPECT_EQ(to_json(back), j);
  EXPECT_EQ(back.inputs.mu_nominal, s.inputs.mu_nominal);
  EXPECT_EQ(back.inputs.T, s.inputs.T);

  json missing = j;
  missing["cells"].erase(0);
  EXPECT_EQ(code_of([&] { scenario_from_json(missing); }), ErrorCode::ParseError);
  json unknown = j;
  unknown["cells"][0]["demand_supply"]["type"] = "triangle";
  EXPECT_EQ(code_of([&] { scenario_from_json(unknown); }), ErrorCode::ParseError);
}

TEST(Io, Files) {
  const auto dir = std::filesystem::temp_directory_path() / "ctmflow_io_test";
  std::filesystem::create_directories(dir);
  write_text_file(dir / "a.json", "{\"k\": [1, 2]}");
  EXPECT_EQ(read_json_file(dir / "a.json")["k"][1], 2);
  write_text_file(dir / "b.json", "{not json");
  EXPECT_EQ(code_of([&] { read_json_file(dir / "b.json"); }), ErrorCode::ParseError);
  EXPECT_EQ(code_of([&] { read_json_file(dir / "missing.json"); }), ErrorCode::IoError);
  EXPECT_EQ(code_of([&] { write_text_file(dir / "no" / "such" / "dir.txt", "x"); }), ErrorCode::IoError);
  std::filesystem::remove_all(dir);
}

TEST(Io, SimConfigSerialisesEveryKnob) {
  SimConfig cfg;
  cfg.controller = Controller::Fixed;
  const json j = to_json(cfg);
  EXPECT_EQ(j["controller"], "fixed");
  EXPECT_EQ(j["cycles"], 100);
  EXPECT_DOUBLE_EQ(j["safety"].get<double>(), 0.9);
}
