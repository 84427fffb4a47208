#include "odflow/dta.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <deque>
#include <limits>
#include <map>
#include <queue>
#include <sstream>
#include <thread>

namespace odflow::dta {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<std::vector<int>> out_links(const net::RoadNetwork& network) {
  std::vector<std::vector<int>> out(network.num_nodes());
  for (std::size_t l = 0; l < network.links.size(); ++l) {
    int from = network.node_index(network.links[l].from);
    out[from].push_back(static_cast<int>(l));
  }
  return out;
}

}  // namespace

void SimConfig::validate() const {
  if (step_minutes <= 0 || horizon_minutes <= 0 || aggregate_minutes <= 0)
    throw validation_error("simulation step, horizon and aggregate must be positive");
  if (horizon_minutes % step_minutes != 0)
    throw validation_error("horizon must be divisible by the loading step");
  if (horizon_minutes % aggregate_minutes != 0)
    throw validation_error("horizon must be divisible by the aggregation interval");
  if (aggregate_minutes % step_minutes != 0)
    throw validation_error("aggregation interval must be divisible by the loading step");
  if (gap_tolerance <= 0.0) throw validation_error("gap tolerance must be positive");
  if (max_msa_iterations < 1) throw validation_error("max iterations must be at least 1");
}

double LinkTimes::at(int link, double time_minutes) const {
  const auto& profile = minutes[link];
  if (profile.empty()) throw contract_error("empty link time profile");
  long step = static_cast<long>(std::floor(time_minutes / step_minutes));
  step = std::clamp(step, 0L, static_cast<long>(profile.size()) - 1);
  return profile[step];
}

LinkTimes free_flow_times(const net::RoadNetwork& network, const SimConfig& config) {
  LinkTimes t;
  t.step_minutes = config.step_minutes;
  t.minutes.resize(network.num_links());
  for (std::size_t l = 0; l < network.links.size(); ++l)
    t.minutes[l].assign(config.num_steps(), network.links[l].free_flow_time);
  return t;
}

namespace {

// Node sequence of the tentative path into `node`, origin first.
std::vector<int> chain_of(const ShortestTree& tree, int node) {
  std::vector<int> seq;
  for (int v = node; v != -1; v = tree.pred_node[v]) seq.push_back(v);
  std::reverse(seq.begin(), seq.end());
  return seq;
}

bool lex_smaller(const std::vector<int>& a, const std::vector<int>& b) {
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

}  // namespace

ShortestTree td_shortest_tree(const net::RoadNetwork& network, const LinkTimes& times, int origin,
                              double departure_minutes) {
  const int n = static_cast<int>(network.num_nodes());
  ShortestTree tree;
  tree.arrival.assign(n, kInf);
  tree.pred_link.assign(n, -1);
  tree.pred_node.assign(n, -1);
  tree.arrival[origin] = departure_minutes;

  auto adjacency = out_links(network);
  using Entry = std::pair<double, int>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> heap;
  heap.push({departure_minutes, origin});
  std::vector<std::uint8_t> done(n, 0);

  while (!heap.empty()) {
    auto [arr, u] = heap.top();
    heap.pop();
    if (done[u] || arr > tree.arrival[u]) continue;
    done[u] = 1;
    for (int l : adjacency[u]) {
      const int v = network.node_index(network.links[l].to);
      const double t_arr = tree.arrival[u] + times.at(l, tree.arrival[u]);
      if (t_arr < tree.arrival[v]) {
        tree.arrival[v] = t_arr;
        tree.pred_link[v] = l;
        tree.pred_node[v] = u;
        heap.push({t_arr, v});
      } else if (t_arr == tree.arrival[v] && !done[v]) {
        // Equal arrival: keep the lexicographically smaller node sequence,
        // then the smaller entering link id.
        auto current = chain_of(tree, v);
        auto candidate = chain_of(tree, u);
        candidate.push_back(v);
        bool replace = lex_smaller(candidate, current);
        if (!replace && candidate == current && tree.pred_link[v] >= 0 &&
            network.links[l].id < network.links[tree.pred_link[v]].id)
          replace = true;
        if (replace) {
          tree.pred_link[v] = l;
          tree.pred_node[v] = u;
        }
      }
    }
  }
  return tree;
}

namespace {

Path tree_path(const ShortestTree& tree, int destination) {
  Path path;
  for (int v = destination; tree.pred_link[v] != -1; v = tree.pred_node[v])
    path.push_back(tree.pred_link[v]);
  std::reverse(path.begin(), path.end());
  return path;
}

}  // namespace

std::optional<PathResult> td_shortest_path(const net::RoadNetwork& network, const LinkTimes& times,
                                           int origin, int destination, int departure_step) {
  ShortestTree tree =
      td_shortest_tree(network, times, origin, departure_step * times.step_minutes);
  if (!std::isfinite(tree.arrival[destination])) return std::nullopt;
  PathResult r;
  r.links = tree_path(tree, destination);
  r.nodes = chain_of(tree, destination);
  r.arrival_minutes = tree.arrival[destination];
  return r;
}

void PathFlowSolution::validate_flows() const {
  for (const Cell& c : cells) {
    double sum = 0.0;
    for (const PathFlow& p : c.paths) {
      if (p.flow < 0.0) throw validation_error("negative path flow");
      sum += p.flow;
    }
    if (std::abs(sum - c.demand) > 1e-6 * std::max(1.0, c.demand))
      throw integrity_error("cell path flows sum to " + net::format_double(sum) +
                            ", demand is " + net::format_double(c.demand));
  }
}

LoadResult network_loading(const net::RoadNetwork& network, const PathFlowSolution& solution,
                           const SimConfig& config, bool record_detail) {
  config.validate();
  solution.validate_flows();
  const int S = config.num_steps();
  const int L = static_cast<int>(network.num_links());
  const int steps_per_interval = solution.interval_minutes / config.step_minutes;
  if (steps_per_interval < 1 || solution.interval_minutes % config.step_minutes != 0)
    throw validation_error("departure interval must be a positive multiple of the loading step");

  // Free-flow offset in steps: whole part k plus fractional split; a
  // sub-step traversal still takes one full step.
  std::vector<int> shift_k(L);
  std::vector<double> shift_frac(L);
  std::vector<double> exit_cap(L);  // vehicles per step
  for (int l = 0; l < L; ++l) {
    const double steps = network.links[l].free_flow_time / config.step_minutes;
    int k = static_cast<int>(std::floor(steps));
    double frac = steps - k;
    if (k == 0) {
      k = 1;
      frac = 0.0;
    }
    shift_k[l] = k;
    shift_frac[l] = frac < 1e-12 ? 0.0 : frac;
    exit_cap[l] = network.links[l].capacity * config.step_minutes / 60.0;
  }

  struct Packet {
    double flow;
    int cell;
    int path;
    int leg;
  };

  std::vector<std::vector<std::vector<Packet>>> arrive(
      L, std::vector<std::vector<Packet>>(S));
  std::vector<std::deque<Packet>> queue(L);
  std::vector<double> queue_len(L, 0.0);
  std::vector<double> entry(static_cast<std::size_t>(L) * S, 0.0);
  std::vector<double> delay_steps(static_cast<std::size_t>(L) * S, 0.0);

  LoadResult result;
  result.cell_arrivals.assign(solution.cells.size(), 0.0);

  double overflow = 0.0;  // flow scheduled past the horizon
  auto schedule = [&](int link, int from_step, double flow, int cell, int path, int leg) {
    const int s1 = from_step + shift_k[link];
    const double frac = shift_frac[link];
    const double first = flow * (1.0 - frac);
    if (first > 0.0) {
      if (s1 < S)
        arrive[link][s1].push_back({first, cell, path, leg});
      else
        overflow += first;
    }
    if (frac > 0.0) {
      const double second = flow * frac;
      if (s1 + 1 < S)
        arrive[link][s1 + 1].push_back({second, cell, path, leg});
      else
        overflow += second;
    }
  };

  // Injections: departures spread uniformly over each interval's steps.
  double total_loaded = 0.0;
  for (std::size_t ci = 0; ci < solution.cells.size(); ++ci) {
    const Cell& cell = solution.cells[ci];
    const int s0 = cell.interval * steps_per_interval;
    for (std::size_t pi = 0; pi < cell.paths.size(); ++pi) {
      const PathFlow& pf = cell.paths[pi];
      if (pf.flow <= 0.0) continue;
      if (pf.links.empty()) throw validation_error("empty path in solution");
      total_loaded += pf.flow;
      const double q = pf.flow / steps_per_interval;
      const int first_link = pf.links.front();
      for (int ss = 0; ss < steps_per_interval; ++ss) {
        const int s = s0 + ss;
        if (s >= S)
          throw validation_error("departure interval extends past the simulation horizon");
        entry[static_cast<std::size_t>(first_link) * S + s] += q;
        schedule(first_link, s, q, static_cast<int>(ci), static_cast<int>(pi), 0);
      }
    }
  }

  double total_arrived = 0.0;
  for (int s = 0; s < S; ++s) {
    for (int l = 0; l < L; ++l) {
      for (Packet& p : arrive[l][s]) {
        queue_len[l] += p.flow;
        queue[l].push_back(p);
      }
      arrive[l][s].clear();

      double remaining = exit_cap[l];
      while (remaining > 1e-12 && !queue[l].empty()) {
        Packet& front = queue[l].front();
        double take = std::min(front.flow, remaining);
        if (front.flow - take < 1e-12) take = front.flow;  // absorb crumbs
        remaining -= take;
        queue_len[l] -= take;
        front.flow -= take;

        const Cell& cell = solution.cells[front.cell];
        const Path& path = cell.paths[front.path].links;
        if (front.leg + 1 == static_cast<int>(path.size())) {
          total_arrived += take;
          result.cell_arrivals[front.cell] += take;
          if (record_detail) result.detail.push_back({front.cell, front.path, s, take});
        } else {
          const int next = path[front.leg + 1];
          entry[static_cast<std::size_t>(next) * S + s] += take;
          schedule(next, s, take, front.cell, front.path, front.leg + 1);
        }
        if (front.flow <= 0.0) queue[l].pop_front();
      }
      delay_steps[static_cast<std::size_t>(l) * S + s] = queue_len[l] / exit_cap[l];
    }
  }

  FlowRecord& rec = result.per_step;
  rec.interval_minutes = config.step_minutes;
  rec.num_links = L;
  rec.num_steps = S;
  rec.flow = std::move(entry);
  rec.utilization.assign(rec.flow.size(), 0.0);
  for (int l = 0; l < L; ++l)
    for (int s = 0; s < S; ++s)
      rec.utilization[static_cast<std::size_t>(l) * S + s] =
          rec.flow[static_cast<std::size_t>(l) * S + s] / exit_cap[l];
  rec.total_loaded = total_loaded;
  rec.total_arrived = total_arrived;
  rec.residual = total_loaded - total_arrived;

  result.times.step_minutes = config.step_minutes;
  result.times.minutes.assign(L, std::vector<double>(S, 0.0));
  for (int l = 0; l < L; ++l) {
    const double fft = network.links[l].free_flow_time;
    for (int s = 0; s < S; ++s) {
      const int sigma = std::min(s + shift_k[l], S - 1);
      double d = delay_steps[static_cast<std::size_t>(l) * S + sigma];
      if (shift_frac[l] > 0.0) {
        const int sigma2 = std::min(sigma + 1, S - 1);
        d = (1.0 - shift_frac[l]) * d +
            shift_frac[l] * delay_steps[static_cast<std::size_t>(l) * S + sigma2];
      }
      result.times.minutes[l][s] = fft + d * config.step_minutes;
    }
  }
  return result;
}

double path_travel_minutes(const LinkTimes& times, const Path& path, double departure_minutes) {
  double t = departure_minutes;
  for (int l : path) t += times.at(l, t);
  return t - departure_minutes;
}

double relative_gap(const net::RoadNetwork& network, const PathFlowSolution& solution,
                    const LinkTimes& times) {
  // One shortest-path tree per (origin, departure interval) group.
  std::map<std::pair<int, int>, ShortestTree> trees;
  double numerator = 0.0, denominator = 0.0;
  for (const Cell& c : solution.cells) {
    const double dep = static_cast<double>(c.interval) * solution.interval_minutes;
    auto key = std::make_pair(c.origin, c.interval);
    auto it = trees.find(key);
    if (it == trees.end())
      it = trees.emplace(key, td_shortest_tree(network, times, c.origin, dep)).first;
    const double shortest = it->second.arrival[c.destination] - dep;
    if (!std::isfinite(shortest)) throw validation_error("unreachable destination in solution");
    for (const PathFlow& p : c.paths) {
      if (p.flow <= 0.0) continue;
      const double pt = path_travel_minutes(times, p.links, dep);
      numerator += p.flow * std::max(0.0, pt - shortest);
    }
    denominator += c.demand * shortest;
  }
  if (denominator <= 0.0) return 0.0;
  return numerator / denominator;
}

FlowRecord aggregate_flows(const FlowRecord& per_step, int aggregate_minutes) {
  if (aggregate_minutes <= 0 || aggregate_minutes % per_step.interval_minutes != 0)
    throw validation_error("aggregate interval must be a positive multiple of the step interval");
  const int per_bucket = aggregate_minutes / per_step.interval_minutes;
  if (per_step.num_steps % per_bucket != 0)
    throw validation_error("horizon is not divisible by the aggregation interval");
  const int buckets = per_step.num_steps / per_bucket;

  FlowRecord out;
  out.interval_minutes = aggregate_minutes;
  out.num_links = per_step.num_links;
  out.num_steps = buckets + 1;  // all-zero snapshot at t=0
  out.flow.assign(static_cast<std::size_t>(out.num_links) * out.num_steps, 0.0);
  out.utilization.assign(out.flow.size(), 0.0);
  for (int l = 0; l < per_step.num_links; ++l)
    for (int b = 0; b < buckets; ++b) {
      double f = 0.0, u = 0.0;
      for (int s = 0; s < per_bucket; ++s) {
        f += per_step.flow_at(l, b * per_bucket + s);
        u += per_step.util_at(l, b * per_bucket + s);
      }
      out.flow[static_cast<std::size_t>(l) * out.num_steps + b + 1] = f;
      out.utilization[static_cast<std::size_t>(l) * out.num_steps + b + 1] = u / per_bucket;
    }
  out.total_loaded = per_step.total_loaded;
  out.total_arrived = per_step.total_arrived;
  out.residual = per_step.residual;
  return out;
}

namespace {

struct TreeJob {
  int origin;
  int interval;
};

// Deterministic regardless of thread count: results land in indexed slots.
std::vector<ShortestTree> compute_trees(const net::RoadNetwork& network, const LinkTimes& times,
                                        const std::vector<TreeJob>& jobs, int interval_minutes,
                                        int threads) {
  std::vector<ShortestTree> out(jobs.size());
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i)
      out[i] = td_shortest_tree(network, times, jobs[i].origin,
                                static_cast<double>(jobs[i].interval) * interval_minutes);
  };
  if (threads <= 1 || jobs.size() < 2) {
    work(0, jobs.size());
  } else {
    const std::size_t n = jobs.size();
    const std::size_t workers = std::min<std::size_t>(threads, n);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t begin = n * w / workers;
      const std::size_t end = n * (w + 1) / workers;
      pool.emplace_back(work, begin, end);
    }
    for (auto& th : pool) th.join();
  }
  return out;
}

}  // namespace

EquilibriumResult msa_equilibrium(const net::RoadNetwork& network,
                                  const net::TemporalODDemand& demand, const SimConfig& config,
                                  int threads) {
  config.validate();
  if (demand.interval_minutes != config.aggregate_minutes)
    throw validation_error("demand interval must equal the aggregation interval");
  if (demand.horizon_steps * demand.interval_minutes > config.horizon_minutes)
    throw validation_error("demand window extends past the simulation horizon");

  PathFlowSolution solution;
  solution.interval_minutes = config.aggregate_minutes;
  for (const auto& [pair, series] : demand.series) {
    const int o = network.node_index(pair.first);
    const int d = network.node_index(pair.second);
    if (o < 0 || d < 0)
      throw validation_error("demand references unknown node " +
                             std::to_string(o < 0 ? pair.first : pair.second));
    for (int t = 0; t < demand.horizon_steps; ++t)
      if (series[t] > 1e-12) solution.cells.push_back({o, d, t, series[t], {}});
  }

  // Reachability check on free-flow times, per distinct origin.
  LinkTimes ff = free_flow_times(network, config);
  {
    std::map<int, ShortestTree> ff_trees;
    std::string unreachable;
    int count = 0;
    for (const Cell& c : solution.cells) {
      auto it = ff_trees.find(c.origin);
      if (it == ff_trees.end())
        it = ff_trees.emplace(c.origin, td_shortest_tree(network, ff, c.origin, 0.0)).first;
      if (!std::isfinite(it->second.arrival[c.destination])) {
        if (count < 10)
          unreachable += " " + std::to_string(network.nodes[c.origin].id) + "->" +
                         std::to_string(network.nodes[c.destination].id);
        ++count;
      }
    }
    if (count > 0)
      throw validation_error("unreachable OD pairs with positive demand (" +
                             std::to_string(count) + "):" + unreachable);
  }

  std::vector<TreeJob> jobs;
  std::map<std::pair<int, int>, std::size_t> job_index;
  for (const Cell& c : solution.cells) {
    auto key = std::make_pair(c.origin, c.interval);
    if (job_index.emplace(key, jobs.size()).second) jobs.push_back({c.origin, c.interval});
  }

  auto assign_shortest = [&](const std::vector<ShortestTree>& trees, double step_fraction) {
    for (Cell& c : solution.cells) {
      const ShortestTree& tree = trees[job_index.at({c.origin, c.interval})];
      Path p = tree_path(tree, c.destination);
      if (step_fraction >= 1.0) {
        c.paths.clear();
        c.paths.push_back({std::move(p), c.demand});
        continue;
      }
      for (PathFlow& pf : c.paths) pf.flow *= (1.0 - step_fraction);
      bool merged = false;
      for (PathFlow& pf : c.paths)
        if (pf.links == p) {
          pf.flow += step_fraction * c.demand;
          merged = true;
          break;
        }
      if (!merged) c.paths.push_back({std::move(p), step_fraction * c.demand});
      // Prune dust and fold it into the largest path to keep the sum exact.
      double pruned = 0.0;
      std::size_t largest = 0;
      for (std::size_t i = 0; i < c.paths.size(); ++i)
        if (c.paths[i].flow > c.paths[largest].flow) largest = i;
      std::vector<PathFlow> kept;
      std::size_t largest_in_kept = 0;
      for (std::size_t i = 0; i < c.paths.size(); ++i) {
        if (i != largest && c.paths[i].flow < 1e-9 * c.demand) {
          pruned += c.paths[i].flow;
        } else {
          if (i == largest) largest_in_kept = kept.size();
          kept.push_back(std::move(c.paths[i]));
        }
      }
      kept[largest_in_kept].flow += pruned;
      c.paths = std::move(kept);
    }
  };

  EquilibriumResult result;
  auto ff_trees = compute_trees(network, ff, jobs, config.aggregate_minutes, threads);
  assign_shortest(ff_trees, 1.0);
  LoadResult load = network_loading(network, solution, config);

  result.trace.iterations = 1;
  for (int k = 2; k <= config.max_msa_iterations; ++k) {
    auto trees = compute_trees(network, load.times, jobs, config.aggregate_minutes, threads);
    double numerator = 0.0, denominator = 0.0;
    for (const Cell& c : solution.cells) {
      const ShortestTree& tree = trees[job_index.at({c.origin, c.interval})];
      const double dep = static_cast<double>(c.interval) * config.aggregate_minutes;
      const double shortest = tree.arrival[c.destination] - dep;
      for (const PathFlow& p : c.paths) {
        if (p.flow <= 0.0) continue;
        numerator += p.flow * std::max(0.0, path_travel_minutes(load.times, p.links, dep) - shortest);
      }
      denominator += c.demand * shortest;
    }
    const double gap = denominator > 0.0 ? numerator / denominator : 0.0;
    result.trace.gaps.push_back(gap);
    if (gap <= config.gap_tolerance) {
      result.trace.converged = true;
      break;
    }
    assign_shortest(trees, 1.0 / k);
    load = network_loading(network, solution, config);
    result.trace.iterations = k;
  }
  if (!result.trace.converged && result.trace.iterations >= config.max_msa_iterations) {
    const double gap = relative_gap(network, solution, load.times);
    result.trace.gaps.push_back(gap);
    result.trace.converged = gap <= config.gap_tolerance;
  }

  result.solution = std::move(solution);
  result.per_step = load.per_step;
  result.record = aggregate_flows(load.per_step, config.aggregate_minutes);
  result.times = std::move(load.times);
  return result;
}

std::string flow_record_csv(const FlowRecord& record, const net::RoadNetwork& network) {
  if (static_cast<std::size_t>(record.num_links) != network.num_links())
    throw contract_error("flow record does not match the network link count");
  std::string out = "link_id,t,flow,utilization\n";
  for (int l = 0; l < record.num_links; ++l)
    for (int t = 0; t < record.num_steps; ++t)
      out += std::to_string(network.links[l].id) + "," + std::to_string(t) + "," +
             net::format_double(record.flow_at(l, t)) + "," +
             net::format_double(record.util_at(l, t)) + "\n";
  return out;
}

FlowRecord parse_flow_record_csv(const std::string& text, int interval_minutes) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "link_id,t,flow,utilization")
    throw parse_error("bad flow CSV header");
  struct Row {
    int link, t;
    double flow, util;
  };
  std::vector<Row> rows;
  int max_link = 0, max_t = -1;
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    Row r{};
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    if (!(ls >> r.link >> r.t >> r.flow >> r.util))
      throw parse_error("bad flow CSV row", line_no);
    max_link = std::max(max_link, r.link);
    max_t = std::max(max_t, r.t);
    rows.push_back(r);
  }
  FlowRecord rec;
  rec.interval_minutes = interval_minutes;
  rec.num_links = max_link;  // link ids are 1-based and dense
  rec.num_steps = max_t + 1;
  rec.flow.assign(static_cast<std::size_t>(rec.num_links) * rec.num_steps, 0.0);
  rec.utilization.assign(rec.flow.size(), 0.0);
  for (const Row& r : rows) {
    rec.flow[static_cast<std::size_t>(r.link - 1) * rec.num_steps + r.t] = r.flow;
    rec.utilization[static_cast<std::size_t>(r.link - 1) * rec.num_steps + r.t] = r.util;
  }
  return rec;
}

}  // namespace odflow::dta
