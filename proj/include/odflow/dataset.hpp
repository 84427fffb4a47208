#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "odflow/dta.hpp"
#include "odflow/hetero_graph.hpp"
#include "odflow/tntp.hpp"

// Sample generation and on-disk datasets. Each sample scales the base
// demand per (pair, step) by U(0.5, 1.5) and each link capacity by
// U(0.9, 1.0) (constant over time), then runs the DUE oracle for ground
// truth. Draw order per sample: demand factors over pairs in sorted order
// with steps innermost, then capacity factors in link order, from
// xoshiro256++ seeded with child_seed(master, sample_index).
//
// Non-convergent samples are excluded and logged, never kept. Masking
// zeroes a sample's observed demand for a drawn set of OD pairs; the
// ground-truth flows are untouched (missing information, not less traffic).

namespace odflow::harness {

struct GenConfig {
  int demand_steps = 12;
  int interval_minutes = 5;
  int horizon_minutes = 120;
  std::string profile = "uniform";
  int max_msa_iterations = 100;
  double gap_tolerance = 1e-2;
  int threads = 1;

  dta::SimConfig sim() const;
  nlohmann::json to_json() const;
  static GenConfig from_json(const nlohmann::json& j);
};

struct SampleMask {
  double ratio = 0.0;
  std::uint64_t seed = 0;
  std::vector<std::pair<int, int>> pairs;  // masked OD pairs (node ids)
};

struct Sample {
  std::uint64_t seed = 0;
  net::TemporalODDemand demand;      // perturbed, unmasked
  std::vector<double> capacities;    // perturbed, link order
  dta::FlowRecord truth;             // aggregated, t=0 snapshot included
  std::optional<SampleMask> mask;
  double final_gap = 0.0;
  int iterations = 0;

  // Observed demand: the perturbed demand with masked pairs zeroed out.
  net::TemporalODDemand observed_demand() const;
};

struct Dataset {
  std::string network_id;
  std::uint64_t master_seed = 0;
  GenConfig gen;
  net::RoadNetwork base_network;
  net::OdMatrix base_trips;
  net::FeatureScaler scaler;
  std::vector<Sample> samples;
  std::vector<std::uint64_t> excluded_seeds;
  std::vector<int> train_idx, val_idx, test_idx;

  net::RoadNetwork sample_network(int index) const;  // perturbed capacities
};

Dataset generate_samples(const net::RoadNetwork& network, const net::OdMatrix& base_trips, int n,
                         std::uint64_t master_seed, const GenConfig& gen,
                         const std::string& network_id);

// Masks round(ratio * nonzero pairs) pairs, drawn uniformly without
// replacement; ratio must lie in [0, 1).
void apply_od_mask(Sample& sample, double ratio, std::uint64_t seed);
void mask_dataset(Dataset& dataset, double ratio, std::uint64_t mask_seed);

// 8:1:1 split by count: val and test get round(n/10), train the remainder.
void split_dataset(Dataset& dataset);

void save_dataset(const Dataset& dataset, const std::string& dir);
Dataset load_dataset(const std::string& dir);

// Training sequences carry a leading all-zero snapshot so node features line
// up with the FlowRecord's t=0 snapshot.
net::HeteroGraph prepend_zero_step(net::HeteroGraph graph);

// First `t_steps` snapshots of a record.
dta::FlowRecord slice_steps(const dta::FlowRecord& record, int t_steps);

}  // namespace odflow::harness
