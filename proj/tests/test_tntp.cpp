#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "odflow/hetero_graph.hpp"
#include "odflow/rng.hpp"
#include "odflow/tntp.hpp"
#include "support.hpp"

using namespace odflow;

TEST_CASE("net parser reads counts, columns and values") {
  net::RoadNetwork n = net::parse_tntp_net(testsupport::tiny_net_text());
  CHECK(n.num_nodes() == 3);
  CHECK(n.num_links() == 3);
  CHECK(n.links[0].from == 1);
  CHECK(n.links[0].to == 2);
  CHECK(n.links[0].capacity == doctest::Approx(1200));
  CHECK(n.links[0].free_flow_time == doctest::Approx(4));
  CHECK(n.links[2].length == doctest::Approx(4));
}

TEST_CASE("net parser honors a permuted column header") {
  std::string text =
      "<NUMBER OF NODES> 2\n<NUMBER OF LINKS> 1\n<END OF METADATA>\n"
      "~ capacity init_node free_flow_time term_node length ;\n"
      "500 1 7 2 3 ;\n";
  net::RoadNetwork n = net::parse_tntp_net(text);
  CHECK(n.links[0].from == 1);
  CHECK(n.links[0].to == 2);
  CHECK(n.links[0].capacity == doctest::Approx(500));
  CHECK(n.links[0].free_flow_time == doctest::Approx(7));
  CHECK(n.links[0].length == doctest::Approx(3));
}

TEST_CASE("declared link count mismatch is an integrity error") {
  std::string text =
      "<NUMBER OF NODES> 3\n<NUMBER OF LINKS> 2\n<END OF METADATA>\n"
      "~ init_node term_node capacity length free_flow_time ;\n"
      "1 2 100 1 1 ;\n2 3 100 1 1 ;\n1 3 100 1 1 ;\n";
  CHECK_THROWS_AS(net::parse_tntp_net(text), integrity_error);
}

TEST_CASE("non-positive capacity names the link") {
  std::string text =
      "<NUMBER OF NODES> 2\n<NUMBER OF LINKS> 1\n<END OF METADATA>\n"
      "~ init_node term_node capacity length free_flow_time ;\n"
      "1 2 0 1 1 ;\n";
  CHECK_THROWS_WITH_AS(net::parse_tntp_net(text),
                       doctest::Contains("link 1"), validation_error);
}

TEST_CASE("missing metadata is a parse error with context") {
  CHECK_THROWS_AS(net::parse_tntp_net("<NUMBER OF NODES> 2\n"), parse_error);
}

TEST_CASE("trips parser accumulates origins and checks the declared total") {
  net::OdMatrix m = net::parse_tntp_trips(testsupport::tiny_trips_text());
  CHECK(m.num_pairs() == 2);
  CHECK(m.total() == doctest::Approx(150));
  CHECK(m.entries.at({1, 2}) == doctest::Approx(100));

  SUBCASE("total mismatch is an integrity error") {
    std::string bad =
        "<NUMBER OF ZONES> 3\n<TOTAL OD FLOW> 140\n<END OF METADATA>\n"
        "Origin 1\n 2 : 100 ; 3 : 50 ;\n";
    CHECK_THROWS_AS(net::parse_tntp_trips(bad), integrity_error);
  }
  SUBCASE("destination outside the zone range is a validation error") {
    std::string bad =
        "<NUMBER OF ZONES> 3\n<TOTAL OD FLOW> 10\n<END OF METADATA>\n"
        "Origin 1\n 9 : 10 ;\n";
    CHECK_THROWS_AS(net::parse_tntp_trips(bad), validation_error);
  }
  SUBCASE("negative flow is a validation error") {
    std::string bad =
        "<NUMBER OF ZONES> 3\n<TOTAL OD FLOW> -10\n<END OF METADATA>\n"
        "Origin 1\n 2 : -10 ;\n";
    CHECK_THROWS_AS(net::parse_tntp_trips(bad), validation_error);
  }
  SUBCASE("an empty origin block contributes nothing") {
    std::string ok =
        "<NUMBER OF ZONES> 3\n<TOTAL OD FLOW> 50\n<END OF METADATA>\n"
        "Origin 2\nOrigin 1\n 3 : 50 ;\n";
    net::OdMatrix m2 = net::parse_tntp_trips(ok);
    CHECK(m2.num_pairs() == 1);
  }
}

TEST_CASE("expand_demand splits static demand over the profile") {
  net::OdMatrix m;
  m.zones = 3;
  m.entries[{1, 2}] = 100.0;

  SUBCASE("uniform") {
    auto d = net::expand_demand(m, {0.25, 0.25, 0.25, 0.25}, 5);
    const auto& s = d.series.at({1, 2});
    for (double v : s) CHECK(v == doctest::Approx(25));
  }
  SUBCASE("point mass") {
    m.entries[{1, 2}] = 60.0;
    auto d = net::expand_demand(m, {1, 0, 0}, 5);
    CHECK(d.series.at({1, 2})[0] == doctest::Approx(60));
    CHECK(d.series.at({1, 2})[1] == doctest::Approx(0));
  }
  SUBCASE("triangular profile sums back to the static entry") {
    m.entries[{1, 2}] = 80.0;
    auto profile = net::demand_profile("peak", 8);
    auto d = net::expand_demand(m, profile, 5);
    double sum = 0.0;
    for (double v : d.series.at({1, 2})) sum += v;
    CHECK(sum == doctest::Approx(80).epsilon(1e-9));
  }
  SUBCASE("bad profiles are rejected") {
    CHECK_THROWS_AS(net::expand_demand(m, {0.5, 0.4}, 5), validation_error);
    CHECK_THROWS_AS(net::expand_demand(m, {1.5, -0.5}, 5), validation_error);
  }
  SUBCASE("positive self demand is rejected") {
    m.entries[{2, 2}] = 5.0;
    CHECK_THROWS_AS(net::expand_demand(m, {1.0}, 5), validation_error);
  }
}

TEST_CASE("round-trip: serialize then parse returns an identical network") {
  rng::Xoshiro256pp gen(42);
  for (int trial = 0; trial < 20; ++trial) {
    net::RoadNetwork n;
    const int nodes = 3 + static_cast<int>(gen.below(6));
    for (int i = 1; i <= nodes; ++i)
      n.nodes.push_back({i, gen.uniform(-5, 5), gen.uniform(-5, 5)});
    // A ring keeps every node on a link, then random chords.
    int id = 1;
    for (int i = 1; i <= nodes; ++i) {
      net::Link l;
      l.id = id++;
      l.from = i;
      l.to = i % nodes + 1;
      l.capacity = gen.uniform(100, 2000);
      l.free_flow_time = gen.uniform(0.5, 10);
      l.length = gen.uniform(0.1, 8);
      n.links.push_back(l);
    }
    for (int extra = static_cast<int>(gen.below(4)); extra > 0; --extra) {
      net::Link l;
      l.id = id++;
      l.from = 1 + static_cast<int>(gen.below(nodes));
      l.to = 1 + static_cast<int>(gen.below(nodes));
      if (l.from == l.to) continue;
      l.capacity = gen.uniform(100, 2000);
      l.free_flow_time = gen.uniform(0.5, 10);
      l.length = gen.uniform(0.1, 8);
      n.links.push_back(l);
    }

    net::RoadNetwork back = net::parse_tntp_net(net::serialize_tntp_net(n));
    net::attach_coordinates(back, net::parse_tntp_nodes(net::serialize_tntp_nodes(n)));
    REQUIRE(back.num_nodes() == n.num_nodes());
    REQUIRE(back.num_links() == n.num_links());
    for (std::size_t i = 0; i < n.nodes.size(); ++i) {
      CHECK(back.nodes[i].id == n.nodes[i].id);
      CHECK(back.nodes[i].x == n.nodes[i].x);
      CHECK(back.nodes[i].y == n.nodes[i].y);
    }
    for (std::size_t i = 0; i < n.links.size(); ++i) {
      CHECK(back.links[i].from == n.links[i].from);
      CHECK(back.links[i].to == n.links[i].to);
      CHECK(back.links[i].capacity == n.links[i].capacity);
      CHECK(back.links[i].free_flow_time == n.links[i].free_flow_time);
      CHECK(back.links[i].length == n.links[i].length);
    }
  }
}

TEST_CASE("hetero graph: OD edges match nonzero pairs and features balance") {
  net::RoadNetwork n = net::parse_tntp_net(testsupport::tiny_net_text());
  net::FeatureScaler scaler = net::FeatureScaler::fit(n);
  net::OdMatrix m = net::parse_tntp_trips(testsupport::tiny_trips_text());
  auto demand = net::expand_demand(m, {0.5, 0.5}, 5);
  net::HeteroGraph g = net::build_hetero_graph(n, demand, scaler);

  CHECK(g.od_edges.size() == m.num_pairs());
  CHECK(g.road_edges.size() == n.num_links());

  double out_sum = 0.0, in_sum = 0.0;
  for (int t = 0; t < g.t_steps; ++t)
    for (int v = 0; v < g.num_nodes; ++v) {
      out_sum += g.feature(t, v, 0);
      in_sum += g.feature(t, v, 1);
    }
  CHECK(out_sum == doctest::Approx(m.total()).epsilon(1e-12));
  CHECK(in_sum == doctest::Approx(m.total()).epsilon(1e-12));

  for (const auto& f : g.road_features) {
    CHECK(f[0] >= 0.0);
    CHECK(f[0] <= 1.0);
    CHECK(f[1] >= 0.0);
    CHECK(f[1] <= 1.0);
  }
}

TEST_CASE("hetero graph: zero demand means zero OD edges and zero features") {
  net::RoadNetwork n = net::parse_tntp_net(testsupport::tiny_net_text());
  net::TemporalODDemand empty;
  empty.horizon_steps = 4;
  empty.interval_minutes = 5;
  net::HeteroGraph g = net::build_hetero_graph(n, empty, net::FeatureScaler::fit(n));
  CHECK(g.od_edges.empty());
  for (int t = 0; t < g.t_steps; ++t)
    for (int v = 0; v < g.num_nodes; ++v) {
      CHECK(g.feature(t, v, 0) == 0.0);
      CHECK(g.feature(t, v, 1) == 0.0);
    }
}

TEST_CASE("hetero graph: single pair bookkeeping") {
  net::RoadNetwork n = net::parse_tntp_net(testsupport::tiny_net_text());
  net::TemporalODDemand d;
  d.horizon_steps = 2;
  d.interval_minutes = 5;
  d.series[{1, 3}] = {10.0, 0.0};
  net::HeteroGraph g = net::build_hetero_graph(n, d, net::FeatureScaler::fit(n));
  REQUIRE(g.od_edges.size() == 1);
  CHECK(g.od_edges[0].first == n.node_index(1));
  CHECK(g.od_edges[0].second == n.node_index(3));
  CHECK(g.feature(0, n.node_index(1), 0) == doctest::Approx(10));
  CHECK(g.feature(0, n.node_index(3), 1) == doctest::Approx(10));
  CHECK(g.feature(1, n.node_index(1), 0) == doctest::Approx(0));
}

TEST_CASE("hetero graph: demand for an unknown node is a validation error") {
  net::RoadNetwork n = net::parse_tntp_net(testsupport::tiny_net_text());
  net::TemporalODDemand d;
  d.horizon_steps = 1;
  d.interval_minutes = 5;
  d.series[{1, 99}] = {5.0};
  CHECK_THROWS_AS(net::build_hetero_graph(n, d, net::FeatureScaler::fit(n)), validation_error);
}

TEST_CASE("constant feature columns normalize to zero") {
  net::RoadNetwork n;
  n.nodes = {{1, 0, 0}, {2, 0, 0}};
  n.links.push_back({1, 1, 2, 500, 3, 1});
  n.links.push_back({2, 2, 1, 500, 3, 1});
  net::FeatureScaler s = net::FeatureScaler::fit(n);
  CHECK(s.capacity.norm(500) == 0.0);
  CHECK(s.free_flow_time.norm(3) == 0.0);
}

TEST_CASE("summary applies the undirected average-degree convention") {
  net::RoadNetwork n = net::parse_tntp_net(testsupport::tiny_net_text());
  // 3 directed links, all distinct unordered pairs -> 2*3/3 = 2.
  CHECK(net::summarize(n, nullptr).avg_degree == doctest::Approx(2.0));
}
