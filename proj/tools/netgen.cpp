// Generates the bundled TNTP instances under data/. The three networks
// reproduce the published size characteristics of the classic Sioux Falls,
// Anaheim and Chicago-sketch benchmarks: node/link counts, undirected
// average degree and total OD demand. Sioux Falls uses the standard 38-pair
// topology; the larger two are synthetic grids built around a directed
// Hamiltonian cycle (so every OD pair is routable) with the exact mix of
// one-way and two-way links needed to hit the published average degree.
//
// Everything is drawn from fixed seeds; rerunning the tool rewrites
// identical files.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "odflow/rng.hpp"
#include "odflow/tntp.hpp"

using namespace odflow;

namespace {

struct Spec {
  std::string name;
  int zones;
  double total_demand;
  int target_pairs;
};

double round_to(double v, double unit) { return std::round(v / unit) * unit; }

struct Builder {
  net::RoadNetwork network;
  rng::Xoshiro256pp gen;

  explicit Builder(std::uint64_t seed) : gen(seed) {}

  void add_node(int id, double x, double y) { network.nodes.push_back({id, x, y}); }

  void sort_nodes() {
    std::sort(network.nodes.begin(), network.nodes.end(),
              [](const net::Node& a, const net::Node& b) { return a.id < b.id; });
  }

  void add_link(int from, int to, double cap_lo, double cap_hi, double speed_km_min) {
    const net::Node& a = network.nodes[network.node_index(from)];
    const net::Node& b = network.nodes[network.node_index(to)];
    const double dist = std::hypot(a.x - b.x, a.y - b.y);
    net::Link l;
    l.id = static_cast<int>(network.links.size()) + 1;
    l.from = from;
    l.to = to;
    l.capacity = round_to(gen.uniform(cap_lo, cap_hi), 100.0);
    l.length = round_to(std::max(0.3, dist * gen.uniform(0.95, 1.1)), 0.01);
    l.free_flow_time =
        round_to(std::max(1.0, l.length / speed_km_min * gen.uniform(0.9, 1.15)), 0.1);
    network.links.push_back(l);
  }
};

net::OdMatrix make_trips(const net::RoadNetwork& network, const Spec& spec, std::uint64_t seed) {
  rng::Xoshiro256pp gen(seed);
  struct Pair {
    int o, d;
    double w;
  };
  std::vector<Pair> pairs;
  const double keep = static_cast<double>(spec.target_pairs) /
                      (static_cast<double>(spec.zones) * (spec.zones - 1));
  for (int o = 1; o <= spec.zones; ++o)
    for (int d = 1; d <= spec.zones; ++d) {
      if (o == d) continue;
      const double u = gen.uniform();
      const double w = gen.uniform(0.5, 2.0);
      if (u >= keep) continue;
      const net::Node& a = network.nodes[network.node_index(o)];
      const net::Node& b = network.nodes[network.node_index(d)];
      const double dist = std::hypot(a.x - b.x, a.y - b.y);
      pairs.push_back({o, d, w / (1.0 + 0.15 * dist)});
    }
  double wsum = 0.0;
  for (const Pair& p : pairs) wsum += p.w;

  net::OdMatrix m;
  m.zones = spec.zones;
  double assigned = 0.0;
  std::size_t largest = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    double v = round_to(spec.total_demand * pairs[i].w / wsum, 0.1);
    v = std::max(v, 0.1);
    m.entries[{pairs[i].o, pairs[i].d}] = v;
    assigned += v;
    if (pairs[i].w > pairs[largest].w) largest = i;
  }
  // Absorb rounding drift into the heaviest pair so the total is exact.
  auto& big = m.entries.at({pairs[largest].o, pairs[largest].d});
  big = round_to(big + spec.total_demand - assigned, 0.1);
  m.declared_total = m.total();
  return m;
}

// Sioux Falls demand: a derangement of the nodes, so every node originates
// exactly one OD pair and receives exactly one. With this structure the
// per-node demand aggregates carry each pair's demand series directly,
// which keeps the desk-scale learning experiments well-posed.
net::OdMatrix make_sparse_trips(const net::RoadNetwork& network, int zones, double total,
                                std::uint64_t seed) {
  rng::Xoshiro256pp gen(seed);
  struct Pair {
    int o, d;
    double w;
  };
  std::vector<int> dest(zones);
  for (int i = 0; i < zones; ++i) dest[i] = i + 1;
  bool ok = false;
  while (!ok) {
    for (int i = 0; i + 1 < zones; ++i) {
      const int j = i + static_cast<int>(gen.below(static_cast<std::uint64_t>(zones - i)));
      std::swap(dest[i], dest[j]);
    }
    ok = true;
    for (int i = 0; i < zones; ++i) ok = ok && dest[i] != i + 1;
  }
  std::vector<Pair> pairs;
  for (int o = 1; o <= zones; ++o) pairs.push_back({o, dest[o - 1], gen.uniform(0.6, 1.8)});
  double wsum = 0.0;
  for (const Pair& p : pairs) wsum += p.w;
  net::OdMatrix m;
  m.zones = zones;
  double assigned = 0.0;
  std::size_t largest = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    double v = round_to(total * pairs[i].w / wsum, 0.1);
    m.entries[{pairs[i].o, pairs[i].d}] = v;
    assigned += v;
    if (pairs[i].w > pairs[largest].w) largest = i;
  }
  auto& big = m.entries.at({pairs[largest].o, pairs[largest].d});
  big = round_to(big + total - assigned, 0.1);
  m.declared_total = m.total();
  return m;
}

net::RoadNetwork make_sioux_falls() {
  Builder b(0x51057ull);
  const std::array<std::array<double, 3>, 24> coords = {{
      {1, 0.0, 18.0},  {2, 7.0, 18.0},  {3, 0.0, 15.0},   {4, 2.5, 15.0},  {5, 5.0, 15.0},
      {6, 7.0, 15.0},  {7, 10.0, 12.0}, {8, 7.0, 12.0},   {9, 5.0, 12.0},  {10, 5.0, 10.0},
      {11, 2.5, 10.0}, {12, 0.0, 10.0}, {13, 0.0, 2.0},   {14, 2.5, 7.0},  {15, 5.0, 7.0},
      {16, 7.0, 10.0}, {17, 7.0, 8.5},  {18, 10.0, 10.0}, {19, 7.0, 7.0},  {20, 7.0, 4.5},
      {21, 5.0, 2.0},  {22, 5.0, 4.5},  {23, 2.5, 4.5},   {24, 2.5, 2.0},
  }};
  for (const auto& c : coords) b.add_node(static_cast<int>(c[0]), c[1], c[2]);
  b.sort_nodes();
  const std::array<std::pair<int, int>, 38> pairs = {{
      {1, 2},   {1, 3},   {2, 6},   {3, 4},   {3, 12},  {4, 5},   {4, 11},  {5, 6},
      {5, 9},   {6, 8},   {7, 8},   {7, 18},  {8, 9},   {8, 16},  {9, 10},  {10, 11},
      {10, 15}, {10, 16}, {10, 17}, {11, 12}, {11, 14}, {12, 13}, {13, 24}, {14, 15},
      {14, 23}, {15, 19}, {15, 22}, {16, 17}, {16, 18}, {17, 19}, {18, 20}, {19, 20},
      {20, 21}, {20, 22}, {21, 22}, {21, 24}, {22, 23}, {23, 24},
  }};
  for (const auto& [u, v] : pairs) {
    b.add_link(u, v, 26000, 44000, 2.2);
    b.add_link(v, u, 26000, 44000, 2.2);
  }
  return b.network;
}

// Grid network around a boustrophedon Hamiltonian cycle. `cycle_two_way` of
// the cycle's steps and `chord_two_way` of the chords carry both directions;
// the cycle keeps every node reachable from every other.
net::RoadNetwork make_grid_network(std::uint64_t seed, int rows, int cols, int extra_nodes,
                                   int cycle_two_way, int chords, int chord_two_way,
                                   double spacing, double cap_lo, double cap_hi) {
  Builder b(seed);
  const int n = rows * cols + extra_nodes;

  // Node ids are assigned along the snake so consecutive cycle nodes are
  // grid neighbors; extras extend the cycle along the top edge.
  std::vector<std::vector<int>> id_at(rows, std::vector<int>(cols));
  {
    int next = 1;
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) {
        const int col = (r % 2 == 0) ? c : cols - 1 - c;
        id_at[r][col] = next;
        b.add_node(next, col * spacing + b.gen.uniform(-0.2, 0.2),
                   r * spacing + b.gen.uniform(-0.2, 0.2));
        ++next;
      }
    for (int e = 0; e < extra_nodes; ++e) {
      b.add_node(next, e * spacing + b.gen.uniform(-0.2, 0.2), rows * spacing);
      ++next;
    }
  }
  b.sort_nodes();

  std::vector<std::uint8_t> two_way(n, 0);
  {
    std::vector<int> steps(n);
    for (int i = 0; i < n; ++i) steps[i] = i;
    for (int i = 0; i < cycle_two_way; ++i) {
      const int j = i + static_cast<int>(b.gen.below(static_cast<std::uint64_t>(n - i)));
      std::swap(steps[i], steps[j]);
      two_way[steps[i]] = 1;
    }
  }
  for (int i = 0; i < n; ++i) {
    const int u = i + 1, v = (i + 1) % n + 1;
    b.add_link(u, v, cap_lo, cap_hi, 0.8);
    if (two_way[i]) b.add_link(v, u, cap_lo, cap_hi, 0.8);
  }

  // Chords: vertical grid neighbors not already on the cycle, then same-row
  // skip links if more are needed.
  std::vector<std::pair<int, int>> candidates;
  for (int r = 0; r + 1 < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const bool on_cycle = (r % 2 == 0) ? (c == cols - 1) : (c == 0);
      if (!on_cycle) candidates.push_back({id_at[r][c], id_at[r + 1][c]});
    }
  for (int r = 0; r < rows && static_cast<int>(candidates.size()) < chords + 32; ++r)
    for (int c = 0; c + 2 < cols; ++c) candidates.push_back({id_at[r][c], id_at[r][c + 2]});
  if (static_cast<int>(candidates.size()) < chords)
    throw std::runtime_error("not enough chord candidates for the requested link count");
  for (std::size_t i = 0; i + 1 < candidates.size(); ++i) {
    const std::size_t j = i + b.gen.below(candidates.size() - i);
    std::swap(candidates[i], candidates[j]);
  }
  for (int i = 0; i < chords; ++i) {
    auto [u, v] = candidates[i];
    if (b.gen.below(2)) std::swap(u, v);
    b.add_link(u, v, cap_lo, cap_hi, 0.8);
    if (i < chord_two_way) b.add_link(v, u, cap_lo, cap_hi, 0.8);
  }
  return b.network;
}

void emit(const std::string& dir, const std::string& name, const net::RoadNetwork& network,
          const net::OdMatrix& trips) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  net::write_file((fs::path(dir) / (name + "_net.tntp")).string(),
                  net::serialize_tntp_net(network));
  net::write_file((fs::path(dir) / (name + "_node.tntp")).string(),
                  net::serialize_tntp_nodes(network));
  net::write_file((fs::path(dir) / (name + "_trips.tntp")).string(),
                  net::serialize_tntp_trips(trips));
  const net::NetworkSummary s = net::summarize(network, &trips);
  std::cout << name << ": nodes=" << s.node_count << " links=" << s.link_count
            << " avg_degree=" << s.avg_degree << " total_demand=" << s.total_demand
            << " od_pairs=" << trips.num_pairs() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  std::string out = "data";
  if (argc > 1) out = argv[1];
  try {
    {
      net::RoadNetwork n = make_sioux_falls();
      emit(out, "SiouxFalls", n, make_sparse_trips(n, 24, 188960.0, 0x5F01ull));
    }
    {
      // 416 nodes, 914 links, 634 unordered pairs -> average degree ~3.05.
      net::RoadNetwork n = make_grid_network(0xA41ull, 26, 16, 0, 62, 218, 218, 2.0, 6000, 16000);
      emit(out, "Anaheim", n, make_trips(n, {"Anaheim", 38, 226279.0, 420}, 0xA42ull));
    }
    {
      // 933 nodes, 2560 links, 1810 unordered pairs -> average degree ~3.88.
      net::RoadNetwork n =
          make_grid_network(0xC41ull, 31, 30, 3, 200, 877, 550, 2.0, 8000, 20000);
      emit(out, "Chicago", n, make_trips(n, {"Chicago", 93, 980226.0, 900}, 0xC42ull));
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
