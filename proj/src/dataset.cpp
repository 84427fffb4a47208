#include "odflow/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <thread>

#include "odflow/rng.hpp"

namespace fs = std::filesystem;

namespace odflow::harness {

namespace {

constexpr std::uint64_t kSplitTag = 0x53504C4954ull;  // "SPLIT"
constexpr std::uint64_t kMaskTag = 0x4D41534Bull;     // "MASK"

}  // namespace

dta::SimConfig GenConfig::sim() const {
  dta::SimConfig c;
  c.step_minutes = 1;
  c.horizon_minutes = horizon_minutes;
  c.aggregate_minutes = interval_minutes;
  c.max_msa_iterations = max_msa_iterations;
  c.gap_tolerance = gap_tolerance;
  return c;
}

nlohmann::json GenConfig::to_json() const {
  return {{"demand_steps", demand_steps},
          {"interval_minutes", interval_minutes},
          {"horizon_minutes", horizon_minutes},
          {"profile", profile},
          {"max_msa_iterations", max_msa_iterations},
          {"gap_tolerance", gap_tolerance}};
}

GenConfig GenConfig::from_json(const nlohmann::json& j) {
  GenConfig g;
  g.demand_steps = j.at("demand_steps").get<int>();
  g.interval_minutes = j.at("interval_minutes").get<int>();
  g.horizon_minutes = j.at("horizon_minutes").get<int>();
  g.profile = j.at("profile").get<std::string>();
  g.max_msa_iterations = j.at("max_msa_iterations").get<int>();
  g.gap_tolerance = j.at("gap_tolerance").get<double>();
  return g;
}

net::TemporalODDemand Sample::observed_demand() const {
  if (!mask) return demand;
  net::TemporalODDemand d = demand;
  for (const auto& pair : mask->pairs) {
    auto it = d.series.find(pair);
    if (it != d.series.end()) d.series.erase(it);
  }
  return d;
}

net::RoadNetwork Dataset::sample_network(int index) const {
  net::RoadNetwork n = base_network;
  const Sample& s = samples.at(index);
  if (s.capacities.size() != n.links.size())
    throw integrity_error("sample capacity count does not match the network");
  for (std::size_t l = 0; l < n.links.size(); ++l) n.links[l].capacity = s.capacities[l];
  return n;
}

Dataset generate_samples(const net::RoadNetwork& network, const net::OdMatrix& base_trips, int n,
                         std::uint64_t master_seed, const GenConfig& gen,
                         const std::string& network_id) {
  if (n < 1) throw validation_error("sample count must be at least 1");
  Dataset d;
  d.network_id = network_id;
  d.master_seed = master_seed;
  d.gen = gen;
  d.base_network = network;
  d.base_trips = base_trips;
  d.scaler = net::FeatureScaler::fit(network);

  const auto profile = net::demand_profile(gen.profile, gen.demand_steps);
  const net::TemporalODDemand base_demand =
      net::expand_demand(base_trips, profile, gen.interval_minutes);
  const dta::SimConfig sim = gen.sim();
  sim.validate();

  struct Work {
    Sample sample;
    bool converged = false;
  };
  std::vector<Work> work(n);

  auto run_one = [&](int k) {
    Sample s;
    s.seed = rng::child_seed(master_seed, static_cast<std::uint64_t>(k));
    rng::Xoshiro256pp gen_rng(s.seed);

    s.demand = base_demand;
    for (auto& [pair, series] : s.demand.series)
      for (double& v : series) v *= gen_rng.uniform(0.5, 1.5);

    net::RoadNetwork perturbed = network;
    s.capacities.resize(perturbed.links.size());
    for (std::size_t l = 0; l < perturbed.links.size(); ++l) {
      perturbed.links[l].capacity *= gen_rng.uniform(0.9, 1.0);
      s.capacities[l] = perturbed.links[l].capacity;
    }

    dta::EquilibriumResult eq = dta::msa_equilibrium(perturbed, s.demand, sim);
    s.truth = std::move(eq.record);
    s.final_gap = eq.trace.gaps.empty() ? 0.0 : eq.trace.gaps.back();
    s.iterations = eq.trace.iterations;
    work[k].sample = std::move(s);
    work[k].converged = eq.trace.converged;
  };

  if (gen.threads > 1 && n > 1) {
    const int workers = std::min(gen.threads, n);
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (int k = w; k < n; k += workers) run_one(k);
      });
    for (auto& th : pool) th.join();
  } else {
    for (int k = 0; k < n; ++k) run_one(k);
  }

  for (int k = 0; k < n; ++k) {
    if (work[k].converged) {
      d.samples.push_back(std::move(work[k].sample));
    } else {
      d.excluded_seeds.push_back(work[k].sample.seed);
      std::cerr << "warning: sample " << k << " (seed " << work[k].sample.seed
                << ") did not reach the gap tolerance; excluded\n";
    }
  }
  split_dataset(d);
  return d;
}

void apply_od_mask(Sample& sample, double ratio, std::uint64_t seed) {
  if (ratio < 0.0 || ratio >= 1.0) throw validation_error("missing ratio must lie in [0, 1)");
  SampleMask mask;
  mask.ratio = ratio;
  mask.seed = seed;
  if (ratio > 0.0) {
    std::vector<std::pair<int, int>> pairs;
    for (const auto& [pair, series] : sample.demand.series) {
      double total = 0.0;
      for (double v : series) total += v;
      if (total > 0.0) pairs.push_back(pair);
    }
    const auto count = static_cast<std::size_t>(
        std::llround(ratio * static_cast<double>(pairs.size())));
    rng::Xoshiro256pp gen(seed);
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t j = i + gen.below(pairs.size() - i);
      std::swap(pairs[i], pairs[j]);
    }
    pairs.resize(count);
    std::sort(pairs.begin(), pairs.end());
    mask.pairs = std::move(pairs);
  }
  sample.mask = std::move(mask);
}

void mask_dataset(Dataset& dataset, double ratio, std::uint64_t mask_seed) {
  for (std::size_t k = 0; k < dataset.samples.size(); ++k)
    apply_od_mask(dataset.samples[k], ratio,
                  rng::child_seed(mask_seed ^ kMaskTag, static_cast<std::uint64_t>(k)));
}

void split_dataset(Dataset& dataset) {
  const int n = static_cast<int>(dataset.samples.size());
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  rng::Xoshiro256pp gen(rng::child_seed(dataset.master_seed, kSplitTag));
  for (int i = 0; i < n - 1; ++i) {
    const int j = i + static_cast<int>(gen.below(static_cast<std::uint64_t>(n - i)));
    std::swap(order[i], order[j]);
  }
  const int n_val = static_cast<int>(std::llround(n / 10.0));
  const int n_test = static_cast<int>(std::llround(n / 10.0));
  const int n_train = n - n_val - n_test;
  dataset.train_idx.assign(order.begin(), order.begin() + n_train);
  dataset.val_idx.assign(order.begin() + n_train, order.begin() + n_train + n_val);
  dataset.test_idx.assign(order.begin() + n_train + n_val, order.end());
}

namespace {

std::string demand_csv(const net::TemporalODDemand& d) {
  std::string out = "origin,destination,t,value\n";
  for (const auto& [pair, series] : d.series)
    for (std::size_t t = 0; t < series.size(); ++t)
      out += std::to_string(pair.first) + "," + std::to_string(pair.second) + "," +
             std::to_string(t) + "," + net::format_double(series[t]) + "\n";
  return out;
}

net::TemporalODDemand parse_demand_csv(const std::string& text, int steps, int interval_minutes) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "origin,destination,t,value")
    throw parse_error("bad demand CSV header");
  net::TemporalODDemand d;
  d.horizon_steps = steps;
  d.interval_minutes = interval_minutes;
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    int o, dst, t;
    double v;
    if (!(ls >> o >> dst >> t >> v)) throw parse_error("bad demand CSV row", line_no);
    auto& series = d.series[{o, dst}];
    if (series.empty()) series.assign(steps, 0.0);
    if (t < 0 || t >= steps) throw parse_error("demand step out of range", line_no);
    series[t] = v;
  }
  return d;
}

}  // namespace

void save_dataset(const Dataset& dataset, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "samples");
  net::write_file((fs::path(dir) / "network_net.tntp").string(),
                  net::serialize_tntp_net(dataset.base_network));
  net::write_file((fs::path(dir) / "network_node.tntp").string(),
                  net::serialize_tntp_nodes(dataset.base_network));
  net::write_file((fs::path(dir) / "network_trips.tntp").string(),
                  net::serialize_tntp_trips(dataset.base_trips));

  nlohmann::json manifest;
  manifest["network_id"] = dataset.network_id;
  manifest["master_seed"] = dataset.master_seed;
  manifest["generation"] = dataset.gen.to_json();
  manifest["excluded_seeds"] = dataset.excluded_seeds;
  manifest["split"] = {{"train", dataset.train_idx},
                       {"val", dataset.val_idx},
                       {"test", dataset.test_idx}};
  nlohmann::json samples = nlohmann::json::array();
  for (std::size_t k = 0; k < dataset.samples.size(); ++k) {
    const Sample& s = dataset.samples[k];
    nlohmann::json js;
    js["seed"] = s.seed;
    js["final_gap"] = s.final_gap;
    js["iterations"] = s.iterations;
    if (s.mask) {
      js["mask"] = {{"ratio", s.mask->ratio}, {"seed", s.mask->seed}};
    }
    samples.push_back(js);

    const fs::path sdir = fs::path(dir) / "samples" / ("sample_" + std::to_string(k));
    fs::create_directories(sdir);
    net::write_file((sdir / "demand.csv").string(), demand_csv(s.demand));
    std::string cap = "link_id,value\n";
    for (std::size_t l = 0; l < s.capacities.size(); ++l)
      cap += std::to_string(dataset.base_network.links[l].id) + "," +
             net::format_double(s.capacities[l]) + "\n";
    net::write_file((sdir / "capacity.csv").string(), cap);
    net::write_file((sdir / "flows.csv").string(),
                    dta::flow_record_csv(s.truth, dataset.base_network));
    if (s.mask) {
      std::string mask = "origin,destination\n";
      for (const auto& pair : s.mask->pairs)
        mask += std::to_string(pair.first) + "," + std::to_string(pair.second) + "\n";
      net::write_file((sdir / "mask.csv").string(), mask);
    }
  }
  manifest["samples"] = samples;
  net::write_file((fs::path(dir) / "manifest.json").string(), manifest.dump(2) + "\n");
}

Dataset load_dataset(const std::string& dir) {
  Dataset d;
  nlohmann::json manifest =
      nlohmann::json::parse(net::read_file((fs::path(dir) / "manifest.json").string()));
  if (manifest.contains("dataset")) manifest = manifest.at("dataset");
  d.network_id = manifest.at("network_id").get<std::string>();
  d.master_seed = manifest.at("master_seed").get<std::uint64_t>();
  d.gen = GenConfig::from_json(manifest.at("generation"));
  d.excluded_seeds = manifest.at("excluded_seeds").get<std::vector<std::uint64_t>>();
  d.train_idx = manifest.at("split").at("train").get<std::vector<int>>();
  d.val_idx = manifest.at("split").at("val").get<std::vector<int>>();
  d.test_idx = manifest.at("split").at("test").get<std::vector<int>>();

  d.base_network = net::parse_tntp_net(net::read_file((fs::path(dir) / "network_net.tntp").string()));
  net::attach_coordinates(
      d.base_network, net::parse_tntp_nodes(net::read_file((fs::path(dir) / "network_node.tntp").string())));
  d.base_trips = net::parse_tntp_trips(net::read_file((fs::path(dir) / "network_trips.tntp").string()));
  d.scaler = net::FeatureScaler::fit(d.base_network);

  const auto& samples = manifest.at("samples");
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const fs::path sdir = fs::path(dir) / "samples" / ("sample_" + std::to_string(k));
    Sample s;
    s.seed = samples[k].at("seed").get<std::uint64_t>();
    s.final_gap = samples[k].at("final_gap").get<double>();
    s.iterations = samples[k].at("iterations").get<int>();
    s.demand = parse_demand_csv(net::read_file((sdir / "demand.csv").string()),
                                d.gen.demand_steps, d.gen.interval_minutes);
    {
      std::istringstream in(net::read_file((sdir / "capacity.csv").string()));
      std::string line;
      if (!std::getline(in, line) || line != "link_id,value")
        throw parse_error("bad capacity CSV header");
      s.capacities.assign(d.base_network.links.size(), 0.0);
      long line_no = 1;
      while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream ls(line);
        int id;
        double v;
        if (!(ls >> id >> v)) throw parse_error("bad capacity CSV row", line_no);
        if (id < 1 || id > static_cast<int>(s.capacities.size()))
          throw parse_error("capacity row for unknown link", line_no);
        s.capacities[id - 1] = v;
      }
    }
    s.truth = dta::parse_flow_record_csv(net::read_file((sdir / "flows.csv").string()),
                                         d.gen.interval_minutes);
    if (samples[k].contains("mask")) {
      SampleMask mask;
      mask.ratio = samples[k]["mask"].at("ratio").get<double>();
      mask.seed = samples[k]["mask"].at("seed").get<std::uint64_t>();
      std::istringstream in(net::read_file((sdir / "mask.csv").string()));
      std::string line;
      if (!std::getline(in, line) || line != "origin,destination")
        throw parse_error("bad mask CSV header");
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream ls(line);
        int o, dst;
        if (!(ls >> o >> dst)) throw parse_error("bad mask CSV row");
        mask.pairs.push_back({o, dst});
      }
      s.mask = std::move(mask);
    }
    d.samples.push_back(std::move(s));
  }
  return d;
}

net::HeteroGraph prepend_zero_step(net::HeteroGraph graph) {
  std::vector<double> features(static_cast<std::size_t>(graph.t_steps + 1) * graph.num_nodes * 4,
                               0.0);
  // The t=0 snapshot keeps coordinates but carries zero demand.
  for (int v = 0; v < graph.num_nodes; ++v) {
    features[static_cast<std::size_t>(v) * 4 + 2] = graph.feature(0, v, 2);
    features[static_cast<std::size_t>(v) * 4 + 3] = graph.feature(0, v, 3);
  }
  std::copy(graph.node_features.begin(), graph.node_features.end(),
            features.begin() + static_cast<std::ptrdiff_t>(graph.num_nodes) * 4);
  graph.node_features = std::move(features);
  graph.t_steps += 1;
  return graph;
}

dta::FlowRecord slice_steps(const dta::FlowRecord& record, int t_steps) {
  if (t_steps < 1 || t_steps > record.num_steps)
    throw contract_error("slice_steps range outside the record");
  dta::FlowRecord out;
  out.interval_minutes = record.interval_minutes;
  out.num_links = record.num_links;
  out.num_steps = t_steps;
  out.flow.resize(static_cast<std::size_t>(out.num_links) * t_steps);
  out.utilization.resize(out.flow.size());
  for (int l = 0; l < record.num_links; ++l)
    for (int t = 0; t < t_steps; ++t) {
      out.flow[static_cast<std::size_t>(l) * t_steps + t] = record.flow_at(l, t);
      out.utilization[static_cast<std::size_t>(l) * t_steps + t] = record.util_at(l, t);
    }
  out.total_loaded = record.total_loaded;
  out.total_arrived = record.total_arrived;
  out.residual = record.residual;
  return out;
}

}  // namespace odflow::harness
