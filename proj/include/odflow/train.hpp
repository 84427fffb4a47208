#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "odflow/dataset.hpp"
#include "odflow/hstgsn.hpp"

namespace odflow::harness {

// Samples lowered to model inputs once, shared across epochs, seeds and
// variants. Input/output conditioning constants come from the train split.
struct PreparedSample {
  model::ModelInput input;
  dta::FlowRecord truth;  // sliced to the training window
};

struct PreparedData {
  int t_steps = 0;  // demand steps + 1 (leading zero snapshot)
  std::vector<PreparedSample> samples;
  std::array<double, 4> input_scale{1.0, 1.0, 1.0, 1.0};
  double flow_scale = 1.0;
  double util_scale = 1.0;
  std::vector<double> flow_offset;  // train-split mean pattern, [link * t + t]
  std::vector<double> util_offset;
};

PreparedData prepare_data(const Dataset& dataset);

struct TrainConfig {
  int epochs = 30;
  double lr = 1e-3;
  std::string lr_schedule = "cosine";  // "constant" or "cosine" (decay to lr/50)
  std::uint64_t seed = 0;
  double loss_weight_utilization = 1.0;
};

struct TrainResult {
  std::vector<double> train_curve;
  std::vector<double> val_curve;
  int best_epoch = 0;  // 0-based epoch whose validation loss was retained
};

// Trains in place; on return the model holds the best-validation parameters.
// Epoch order reshuffles deterministically from the seed; a non-finite loss
// aborts with the offending sample and step in the message.
TrainResult train(model::Hstgsn& m, const PreparedData& data, const Dataset& dataset,
                  const TrainConfig& cfg);

struct Metrics {
  double flow_mae = 0.0;
  double flow_rmse = 0.0;
  double util_mae_pct = 0.0;  // percent
  double util_rmse_pct = 0.0;
  nlohmann::json to_json() const;
};

struct EvalResult {
  Metrics metrics;
  std::vector<double> per_sample_flow_mae;  // paired-test input, index order
};

EvalResult evaluate(const model::Hstgsn& m, const PreparedData& data,
                    const std::vector<int>& indices);

// Historical mean over the train split, the stand-in comparison model.
struct MeanBaseline {
  int num_links = 0, t_steps = 0;
  std::vector<double> flow_mean, util_mean;
};

MeanBaseline fit_mean_baseline(const PreparedData& data, const std::vector<int>& train_indices);
EvalResult evaluate_baseline(const MeanBaseline& b, const PreparedData& data,
                             const std::vector<int>& indices);

// Fills conditioning scales and constructs a ready-to-train model.
model::ModelConfig desk_model_config(const PreparedData& data);

struct RunMetrics {
  std::uint64_t seed = 0;
  Metrics test;
  std::vector<double> per_sample_flow_mae;
  std::vector<double> val_curve;
  std::vector<double> train_curve;
  int best_epoch = 0;
};

struct ModelReport {
  std::string name;
  long param_count = 0;
  std::vector<RunMetrics> runs;
  Metrics mean;
  nlohmann::json to_json() const;
};

Metrics mean_metrics(const std::vector<RunMetrics>& runs);

// Trains and evaluates one variant across the given seeds (identical data).
ModelReport run_variant(const Dataset& dataset, const PreparedData& data, model::Variant variant,
                        const model::ModelConfig& base_config, const TrainConfig& base_train,
                        const std::vector<std::uint64_t>& seeds,
                        const std::string& checkpoint_dir = "");

std::vector<ModelReport> run_ablation(const Dataset& dataset, const PreparedData& data,
                                      const std::vector<model::Variant>& variants,
                                      const model::ModelConfig& base_config,
                                      const TrainConfig& base_train,
                                      const std::vector<std::uint64_t>& seeds);

std::string report_csv(const std::vector<ModelReport>& reports);
std::string report_long_csv(const std::vector<ModelReport>& reports,
                            const std::string& network_id);

}  // namespace odflow::harness
