#pragma once

#include <optional>
#include <string>
#include <vector>

#include "odflow/tntp.hpp"

// Dynamic-user-equilibrium oracle: time-dependent shortest paths over
// piecewise-constant link times, point-queue network loading at fixed step
// resolution, and method-of-successive-averages equilibration with per-
// departure-interval route choice.
//
// The point-queue model: vehicles traverse a link in its free-flow time and
// then wait in a vertical queue served at the link's exit capacity
// (capacity * step/60 vehicles per step), FIFO, with no spillback. Flow
// entering a link during step s reaches the queue after the free-flow
// offset; a sub-step offset lands no earlier than the next step, so every
// link takes at least one step to traverse.

namespace odflow::dta {

struct SimConfig {
  int step_minutes = 1;
  int horizon_minutes = 480;
  int aggregate_minutes = 5;
  int max_msa_iterations = 100;
  double gap_tolerance = 1e-2;

  int num_steps() const { return horizon_minutes / step_minutes; }
  int num_buckets() const { return horizon_minutes / aggregate_minutes; }
  void validate() const;
};

// Piecewise-constant per-link travel times in minutes; times beyond the
// final step are frozen at the last value.
struct LinkTimes {
  int step_minutes = 1;
  std::vector<std::vector<double>> minutes;  // [link][step]

  double at(int link, double time_minutes) const;
};

LinkTimes free_flow_times(const net::RoadNetwork& network, const SimConfig& config);

using Path = std::vector<int>;  // link indices into RoadNetwork::links

struct PathResult {
  Path links;
  std::vector<int> nodes;  // node indices origin..destination
  double arrival_minutes = 0.0;
};

// Least-arrival-time path under FIFO link times, departing at
// departure_step * step_minutes. Equal-arrival ties resolve to the
// lexicographically smaller node sequence so results are deterministic.
std::optional<PathResult> td_shortest_path(const net::RoadNetwork& network, const LinkTimes& times,
                                           int origin, int destination, int departure_step);

// One-to-all shortest-path tree for a departure time, reused across cells.
struct ShortestTree {
  std::vector<double> arrival;  // minutes; +inf when unreachable
  std::vector<int> pred_link;   // -1 at origin / unreachable
  std::vector<int> pred_node;
};

ShortestTree td_shortest_tree(const net::RoadNetwork& network, const LinkTimes& times, int origin,
                              double departure_minutes);

struct PathFlow {
  Path links;
  double flow = 0.0;
};

struct Cell {
  int origin = 0;  // node indices
  int destination = 0;
  int interval = 0;  // departure interval (aggregate_minutes wide)
  double demand = 0.0;
  std::vector<PathFlow> paths;
};

struct PathFlowSolution {
  int interval_minutes = 5;  // width of a departure interval
  std::vector<Cell> cells;   // sorted by (origin, destination, interval)

  void validate_flows() const;  // per-cell flows must sum to demand (1e-6 rel)
};

struct FlowRecord {
  int interval_minutes = 0;
  int num_links = 0;
  int num_steps = 0;
  std::vector<double> flow;         // [link * num_steps + t], vehicles per interval
  std::vector<double> utilization;  // flow / (capacity * interval/60)
  double total_loaded = 0.0;
  double total_arrived = 0.0;
  double residual = 0.0;  // vehicles still in the network at horizon end

  double flow_at(int link, int t) const {
    return flow[static_cast<std::size_t>(link) * num_steps + t];
  }
  double util_at(int link, int t) const {
    return utilization[static_cast<std::size_t>(link) * num_steps + t];
  }
};

// Per-packet arrival events, recorded when loading runs with detail enabled.
struct ArrivalEvent {
  int cell = 0;
  int path = 0;
  int step = 0;
  double flow = 0.0;
};

struct LoadResult {
  FlowRecord per_step;  // entry counts per loading step (no t=0 pad)
  LinkTimes times;      // experienced times for the next iteration
  std::vector<double> cell_arrivals;
  std::vector<ArrivalEvent> detail;
};

LoadResult network_loading(const net::RoadNetwork& network, const PathFlowSolution& solution,
                           const SimConfig& config, bool record_detail = false);

// gap = sum flow*(path_time - shortest_time) / sum demand*shortest_time,
// 0 when there is no demand.
double relative_gap(const net::RoadNetwork& network, const PathFlowSolution& solution,
                    const LinkTimes& times);

double path_travel_minutes(const LinkTimes& times, const Path& path, double departure_minutes);

// Sums step-resolution flows into aggregate buckets and prepends an all-zero
// snapshot, giving horizon/aggregate + 1 snapshots. Utilization averages.
FlowRecord aggregate_flows(const FlowRecord& per_step, int aggregate_minutes);

struct GapTrace {
  std::vector<double> gaps;  // one entry per completed iteration
  int iterations = 0;
  bool converged = false;
};

struct EquilibriumResult {
  PathFlowSolution solution;
  FlowRecord record;    // aggregated, with the t=0 snapshot
  FlowRecord per_step;  // loading-step resolution
  LinkTimes times;
  GapTrace trace;
};

// MSA: all-or-nothing on free-flow times, then shift 1/k of each cell's
// demand onto its current shortest path until the relative gap meets the
// tolerance or the iteration cap. Unreachable positive-demand pairs fail
// fast, listing the offending pairs.
EquilibriumResult msa_equilibrium(const net::RoadNetwork& network,
                                  const net::TemporalODDemand& demand, const SimConfig& config,
                                  int threads = 1);

std::string flow_record_csv(const FlowRecord& record, const net::RoadNetwork& network);
FlowRecord parse_flow_record_csv(const std::string& text, int interval_minutes);

}  // namespace odflow::dta
