#pragma once

#include <array>
#include <utility>
#include <vector>

#include "odflow/tntp.hpp"

namespace odflow::net {

// Min-max scaler fitted once on the unperturbed network so that feature
// scales stay comparable across perturbed samples. A constant column
// normalizes to 0; values outside the fitted range clamp into [0, 1].
struct MinMax {
  double lo = 0.0;
  double hi = 0.0;
  double norm(double v) const;
};

struct FeatureScaler {
  MinMax free_flow_time, capacity, x, y;
  static FeatureScaler fit(const RoadNetwork& network);
};

// Node set plus two typed edge sets: real road edges and virtual OD edges
// (one directed edge per OD pair with positive demand over the horizon).
// Edges hold node *indices* into the network's sorted node vector.
//
// Node features per step: [outbound demand, inbound demand, norm x, norm y].
// Road edge features: [norm free-flow time, norm capacity]. OD edges carry
// no intrinsic features.
struct HeteroGraph {
  int num_nodes = 0;
  int t_steps = 0;

  std::vector<std::pair<int, int>> road_edges;
  std::vector<std::array<double, 2>> road_features;
  std::vector<std::pair<int, int>> od_edges;

  // [t * num_nodes * 4 + node * 4 + f]
  std::vector<double> node_features;

  double feature(int t, int node, int f) const {
    return node_features[(static_cast<std::size_t>(t) * num_nodes + node) * 4 + f];
  }
};

HeteroGraph build_hetero_graph(const RoadNetwork& network, const TemporalODDemand& demand,
                               const FeatureScaler& scaler);

}  // namespace odflow::net
