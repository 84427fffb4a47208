#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "odflow/errors.hpp"

// Readers and writers for the TNTP text formats (whitespace-delimited ASCII,
// `~` comment lines, `;` row terminators) plus the temporal demand expansion
// used everywhere downstream. Column order in _net files is taken from the
// `~`-prefixed header line when present, otherwise the canonical TNTP order
// is assumed; unknown extra columns are ignored.

namespace odflow::net {

struct Node {
  int id = 0;
  double x = 0.0;
  double y = 0.0;
};

struct Link {
  int id = 0;  // 1-based position in the file
  int from = 0;
  int to = 0;
  double capacity = 0.0;        // vehicles/hour
  double free_flow_time = 0.0;  // minutes
  double length = 0.0;
};

struct RoadNetwork {
  std::vector<Node> nodes;  // sorted by id
  std::vector<Link> links;  // file order

  int node_index(int node_id) const;  // -1 when absent
  std::size_t num_nodes() const { return nodes.size(); }
  std::size_t num_links() const { return links.size(); }

  // Undirected-degree convention: 2 * |unordered endpoint pairs| / |V|.
  double average_degree() const;
};

struct OdMatrix {
  int zones = 0;  // 0 when the file does not declare zones
  double declared_total = 0.0;
  std::map<std::pair<int, int>, double> entries;  // positive entries only

  double total() const;
  std::size_t num_pairs() const { return entries.size(); }
};

struct TemporalODDemand {
  int horizon_steps = 0;     // T
  int interval_minutes = 0;  // departure interval length
  std::map<std::pair<int, int>, std::vector<double>> series;

  double total() const;
};

RoadNetwork parse_tntp_net(const std::string& text);
std::vector<Node> parse_tntp_nodes(const std::string& text);
OdMatrix parse_tntp_trips(const std::string& text);

// Applies coordinates from a _node file onto a parsed network.
void attach_coordinates(RoadNetwork& network, const std::vector<Node>& coords);

std::string serialize_tntp_net(const RoadNetwork& network);
std::string serialize_tntp_nodes(const RoadNetwork& network);
std::string serialize_tntp_trips(const OdMatrix& matrix);

// demand[(i,j)][t] = static[i][j] * profile[t]. The profile must be
// nonnegative and sum to 1 within 1e-9; positive intrazonal entries are
// rejected because the temporal demand bans self pairs.
TemporalODDemand expand_demand(const OdMatrix& matrix, const std::vector<double>& profile,
                               int interval_minutes);

// Built-in departure profiles for the CLI: "uniform" or "peak" (triangular).
std::vector<double> demand_profile(const std::string& name, int steps);

struct NetworkSummary {
  std::size_t node_count = 0;
  std::size_t link_count = 0;
  double avg_degree = 0.0;
  double total_demand = 0.0;
};

NetworkSummary summarize(const RoadNetwork& network, const OdMatrix* trips);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

// Shortest round-trip decimal rendering; used by every text artifact so that
// reruns are byte-identical and parsed values reload bit-exactly.
std::string format_double(double v);

}  // namespace odflow::net
