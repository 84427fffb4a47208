#include "odflow/hetero_graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace odflow::net {

double MinMax::norm(double v) const {
  if (hi <= lo) return 0.0;
  return std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
}

FeatureScaler FeatureScaler::fit(const RoadNetwork& network) {
  FeatureScaler s;
  auto init = [](MinMax& m) {
    m.lo = std::numeric_limits<double>::infinity();
    m.hi = -std::numeric_limits<double>::infinity();
  };
  init(s.free_flow_time);
  init(s.capacity);
  init(s.x);
  init(s.y);
  auto grow = [](MinMax& m, double v) {
    m.lo = std::min(m.lo, v);
    m.hi = std::max(m.hi, v);
  };
  for (const Link& l : network.links) {
    grow(s.free_flow_time, l.free_flow_time);
    grow(s.capacity, l.capacity);
  }
  for (const Node& n : network.nodes) {
    grow(s.x, n.x);
    grow(s.y, n.y);
  }
  return s;
}

HeteroGraph build_hetero_graph(const RoadNetwork& network, const TemporalODDemand& demand,
                               const FeatureScaler& scaler) {
  HeteroGraph g;
  g.num_nodes = static_cast<int>(network.num_nodes());
  g.t_steps = demand.horizon_steps;

  g.road_edges.reserve(network.links.size());
  g.road_features.reserve(network.links.size());
  for (const Link& l : network.links) {
    int a = network.node_index(l.from);
    int b = network.node_index(l.to);
    g.road_edges.push_back({a, b});
    g.road_features.push_back(
        {scaler.free_flow_time.norm(l.free_flow_time), scaler.capacity.norm(l.capacity)});
  }

  g.node_features.assign(static_cast<std::size_t>(g.t_steps) * g.num_nodes * 4, 0.0);
  auto feat = [&](int t, int node, int f) -> double& {
    return g.node_features[(static_cast<std::size_t>(t) * g.num_nodes + node) * 4 + f];
  };
  for (int node = 0; node < g.num_nodes; ++node) {
    double nx = scaler.x.norm(network.nodes[node].x);
    double ny = scaler.y.norm(network.nodes[node].y);
    for (int t = 0; t < g.t_steps; ++t) {
      feat(t, node, 2) = nx;
      feat(t, node, 3) = ny;
    }
  }

  for (const auto& [pair, series] : demand.series) {
    int o = network.node_index(pair.first);
    int d = network.node_index(pair.second);
    if (o < 0 || d < 0)
      throw validation_error("demand references unknown node " +
                             std::to_string(o < 0 ? pair.first : pair.second));
    double pair_total = 0.0;
    for (int t = 0; t < g.t_steps; ++t) {
      feat(t, o, 0) += series[t];
      feat(t, d, 1) += series[t];
      pair_total += series[t];
    }
    if (pair_total > 0.0) g.od_edges.push_back({o, d});
  }
  return g;
}

}  // namespace odflow::net
