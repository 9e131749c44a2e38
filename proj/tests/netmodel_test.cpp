#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>

#include "gridreserve/netmodel.hpp"
#include "gridreserve/rng.hpp"
#include "test_support.hpp"

using namespace gridreserve;
using namespace gridreserve::netmodel;
using nlohmann::json;
using testsupport::fixture;

TEST(LoadCase, TwoBusFixture) {
    GridCase c = load_case(fixture("2bus.json"));
    EXPECT_EQ(c.buses.size(), 2u);
    EXPECT_EQ(c.branches.size(), 1u);
    EXPECT_EQ(c.root_id(), "root");
    EXPECT_EQ(c.horizon.steps, 4);
    EXPECT_DOUBLE_EQ(c.device("dg0").smax_pu, 2.0);
}

TEST(LoadCase, UnknownBusReference) {
    json doc = json::parse(R"({
      "name":"bad","base_mva":1.0,
      "horizon":{"steps":1,"dt_hours":1.0},
      "buses":[{"id":"root","phases":["a"],"vmin_pu":0.9,"vmax_pu":1.1,"is_root":true}],
      "branches":[{"id":"b1","from":"root","to":"ghost","phases":["a"],
                   "r_pu":[[0.01]],"x_pu":[[0.02]]}],
      "devices":[],"forecasts":{}
    })");
    // a dangling reference also breaks the B-1 branch count; both are
    // member-naming validation errors
    try {
        parse_case(doc);
        FAIL() << "expected ValidationError";
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("b1"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("ghost"), std::string::npos);
    } catch (const TopologyError&) {
        // acceptable ordering: topology check may run first
    }
}

TEST(LoadCase, StorageBoundsViolation) {
    json doc = testsupport::one_bus_case(2, 1.0);
    doc["devices"].push_back({{"id", "batt"}, {"bus", "root"}, {"kind", "storage"},
                              {"emin", 2.0}, {"emax", 1.0}, {"e0", 1.5},
                              {"pmax", 1.0}, {"eta", 0.9}});
    try {
        parse_case(doc);
        FAIL() << "expected ValidationError";
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("batt"), std::string::npos);
    }
}

TEST(LoadCase, StrictModeRejectsUnknownKeys) {
    json doc = testsupport::one_bus_case(1, 1.0);
    doc["surprise"] = 1;
    EXPECT_THROW(parse_case(doc), ValidationError);
    EXPECT_NO_THROW(parse_case(doc, /*lenient=*/true));
}

TEST(LoadCase, BaseMvaScaling) {
    json doc = testsupport::one_bus_case(1, 1.0);
    doc["base_mva"] = 10.0;
    doc["devices"].push_back(
        {{"id", "dg"}, {"bus", "root"}, {"kind", "dg"}, {"smax", 25.0}});
    GridCase c = parse_case(doc);
    EXPECT_DOUBLE_EQ(c.device("dg").smax_pu, 2.5);
}

TEST(LoadCase, ReversedBranchNormalized) {
    json doc = json::parse(R"({
      "name":"rev","base_mva":1.0,
      "horizon":{"steps":1,"dt_hours":1.0},
      "buses":[{"id":"root","phases":["a"],"vmin_pu":0.9,"vmax_pu":1.1,"is_root":true},
               {"id":"b1","phases":["a"],"vmin_pu":0.9,"vmax_pu":1.1}],
      "branches":[{"id":"br","from":"b1","to":"root","phases":["a"],
                   "r_pu":[[0.01]],"x_pu":[[0.02]]}],
      "devices":[],"forecasts":{}
    })");
    GridCase c = parse_case(doc);
    EXPECT_EQ(c.branches[0].from, "root");
    EXPECT_EQ(c.branches[0].to, "b1");
}

TEST(DownstreamMap, PathGraph) {
    json doc = json::parse(R"({
      "name":"path","base_mva":1.0,
      "horizon":{"steps":1,"dt_hours":1.0},
      "buses":[{"id":"root","phases":["a"],"vmin_pu":0.9,"vmax_pu":1.1,"is_root":true},
               {"id":"b1","phases":["a"],"vmin_pu":0.9,"vmax_pu":1.1},
               {"id":"b2","phases":["a"],"vmin_pu":0.9,"vmax_pu":1.1}],
      "branches":[{"id":"br01","from":"root","to":"b1","phases":["a"],"r_pu":[[0.01]],"x_pu":[[0.01]]},
                  {"id":"br12","from":"b1","to":"b2","phases":["a"],"r_pu":[[0.01]],"x_pu":[[0.01]]}],
      "devices":[],"forecasts":{}
    })");
    GridCase c = parse_case(doc);
    auto dm = downstream_map(c);
    EXPECT_EQ(dm["root"], std::vector<std::string>{"br01"});
    EXPECT_EQ(dm["b1"], std::vector<std::string>{"br12"});
    EXPECT_TRUE(dm["b2"].empty());
}

TEST(DownstreamMap, StarGraphSorted) {
    json doc = json::parse(R"({
      "name":"star","base_mva":1.0,
      "horizon":{"steps":1,"dt_hours":1.0},
      "buses":[{"id":"root","phases":["a"],"vmin_pu":0.9,"vmax_pu":1.1,"is_root":true},
               {"id":"b1","phases":["a"],"vmin_pu":0.9,"vmax_pu":1.1},
               {"id":"b2","phases":["a"],"vmin_pu":0.9,"vmax_pu":1.1}],
      "branches":[{"id":"br2","from":"root","to":"b2","phases":["a"],"r_pu":[[0.01]],"x_pu":[[0.01]]},
                  {"id":"br1","from":"root","to":"b1","phases":["a"],"r_pu":[[0.01]],"x_pu":[[0.01]]}],
      "devices":[],"forecasts":{}
    })");
    GridCase c = parse_case(doc);
    auto dm = downstream_map(c);
    std::vector<std::string> expect{"br1", "br2"};
    EXPECT_EQ(dm["root"], expect);
}

TEST(DownstreamMap, CycleRejected) {
    json doc = json::parse(R"({
      "name":"cyc","base_mva":1.0,
      "horizon":{"steps":1,"dt_hours":1.0},
      "buses":[{"id":"root","phases":["a"],"vmin_pu":0.9,"vmax_pu":1.1,"is_root":true},
               {"id":"b1","phases":["a"],"vmin_pu":0.9,"vmax_pu":1.1}],
      "branches":[{"id":"brA","from":"root","to":"b1","phases":["a"],"r_pu":[[0.01]],"x_pu":[[0.01]]},
                  {"id":"brB","from":"b1","to":"root","phases":["a"],"r_pu":[[0.01]],"x_pu":[[0.01]]}],
      "devices":[],"forecasts":{}
    })");
    EXPECT_THROW(parse_case(doc), TopologyError);
}

TEST(RoundTrip, ExportReloadIdentical) {
    GridCase c = load_case(fixture("4bus.json"));
    std::string tmp = std::string(::testing::TempDir()) + "roundtrip_case.json";
    save_case(c, tmp);
    GridCase c2 = load_case(tmp);
    EXPECT_TRUE(c == c2);
    std::remove(tmp.c_str());
}

TEST(RoundTrip, RadialInvariant) {
    GridCase c = load_case(fixture("4bus.json"));
    EXPECT_EQ(c.branches.size() + 1, c.buses.size());
    auto parents = parent_branch(c);
    EXPECT_EQ(parents.size(), c.buses.size() - 1);  // every non-root has one parent
}

TEST(Fuzz, MalformedFilesAlwaysThrowCleanly) {
    Rng rng(99);
    GridCase base = load_case(fixture("2bus.json"));
    json doc = case_to_json(base);
    std::string text = doc.dump();
    for (int trial = 0; trial < 300; ++trial) {
        std::string mutated = text;
        int edits = 1 + static_cast<int>(rng.uniform01() * 4);
        for (int e = 0; e < edits; ++e) {
            size_t pos = static_cast<size_t>(rng.uniform01() * static_cast<double>(mutated.size()));
            char candidates[] = {'x', '{', '}', '[', ']', '"', ',', '-', '9', ':'};
            mutated[pos] = candidates[rng.next_u64() % sizeof(candidates)];
        }
        std::string tmp = std::string(::testing::TempDir()) + "fuzz_case.json";
        std::ofstream out(tmp);
        out << mutated;
        out.close();
        try {
            GridCase c = load_case(tmp);
            (void)c;  // mutation may still be valid
        } catch (const Error&) {
            // ParseError/ValidationError/TopologyError are the contract
        } catch (const std::exception& ex) {
            FAIL() << "unexpected exception type: " << ex.what();
        }
    }
}
