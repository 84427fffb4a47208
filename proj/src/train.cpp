#include "odflow/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>

#include "odflow/optim.hpp"
#include "odflow/rng.hpp"

namespace odflow::harness {

using model::Hstgsn;
using model::ModelInput;

PreparedData prepare_data(const Dataset& dataset) {
  PreparedData out;
  out.t_steps = dataset.gen.demand_steps + 1;
  for (std::size_t k = 0; k < dataset.samples.size(); ++k) {
    const Sample& s = dataset.samples[k];
    net::RoadNetwork network = dataset.sample_network(static_cast<int>(k));
    net::HeteroGraph graph = prepend_zero_step(
        net::build_hetero_graph(network, s.observed_demand(), dataset.scaler));
    PreparedSample ps;
    ps.input = model::make_model_input(graph);
    ps.truth = slice_steps(s.truth, out.t_steps);
    out.samples.push_back(std::move(ps));
  }

  // Conditioning constants from the train split only: demand features are
  // standardized per (node, step) so the per-sample deviation is the signal
  // the network actually sees, and outputs are parameterized as deviations
  // from the train-mean flow pattern. Coordinates stay min-max normalized.
  if (!dataset.train_idx.empty() && !out.samples.empty()) {
    const int n = out.samples.front().input.num_nodes;
    const int t_steps = out.t_steps;
    std::vector<double> mean(static_cast<std::size_t>(t_steps) * n * 2, 0.0);
    std::vector<double> sq(mean.size(), 0.0);
    for (int idx : dataset.train_idx) {
      const PreparedSample& ps = out.samples.at(idx);
      for (int t = 0; t < t_steps; ++t)
        for (int v = 0; v < n; ++v)
          for (int f = 0; f < 2; ++f) {
            const double x = ps.input.node_feats[t].at(v, f);
            mean[(static_cast<std::size_t>(t) * n + v) * 2 + f] += x;
            sq[(static_cast<std::size_t>(t) * n + v) * 2 + f] += x * x;
          }
    }
    const double m = static_cast<double>(dataset.train_idx.size());
    std::vector<double> scale(mean.size(), 1.0);
    for (std::size_t i = 0; i < mean.size(); ++i) {
      mean[i] /= m;
      const double var = std::max(0.0, sq[i] / m - mean[i] * mean[i]);
      scale[i] = var > 1e-12 ? 1.0 / std::sqrt(var) : 1.0;
    }
    for (PreparedSample& ps : out.samples)
      for (int t = 0; t < t_steps; ++t)
        for (int v = 0; v < n; ++v)
          for (int f = 0; f < 2; ++f) {
            const std::size_t i = (static_cast<std::size_t>(t) * n + v) * 2 + f;
            auto& vals = ps.input.node_feats[t].values();
            vals[static_cast<std::size_t>(v) * 4 + f] =
                (vals[static_cast<std::size_t>(v) * 4 + f] - mean[i]) * scale[i];
          }
  }

  if (!dataset.train_idx.empty() && !out.samples.empty()) {
    const std::size_t cells = out.samples.front().truth.flow.size();
    out.flow_offset.assign(cells, 0.0);
    out.util_offset.assign(cells, 0.0);
    for (int idx : dataset.train_idx) {
      const dta::FlowRecord& r = out.samples.at(idx).truth;
      for (std::size_t i = 0; i < cells; ++i) {
        out.flow_offset[i] += r.flow[i];
        out.util_offset[i] += r.utilization[i];
      }
    }
    for (std::size_t i = 0; i < cells; ++i) {
      out.flow_offset[i] /= dataset.train_idx.size();
      out.util_offset[i] /= dataset.train_idx.size();
    }
    // Deviation scales use the mean absolute deviation: with the max the
    // network's output noise at init dwarfs the signal and the optimizer
    // settles on ignoring the inputs entirely.
    double flow_dev = 0.0, util_dev = 0.0;
    for (int idx : dataset.train_idx) {
      const dta::FlowRecord& r = out.samples.at(idx).truth;
      for (std::size_t i = 0; i < cells; ++i) {
        flow_dev += std::abs(r.flow[i] - out.flow_offset[i]);
        util_dev += std::abs(r.utilization[i] - out.util_offset[i]);
      }
    }
    const double denom = static_cast<double>(cells) * dataset.train_idx.size();
    out.flow_scale = std::max(1.0, flow_dev / denom);
    out.util_scale = std::max(0.01, util_dev / denom);
  }
  return out;
}

model::ModelConfig desk_model_config(const PreparedData& data) {
  model::ModelConfig cfg;
  cfg.input_scale = data.input_scale;
  cfg.flow_scale = data.flow_scale;
  cfg.util_scale = data.util_scale;
  cfg.flow_offset = data.flow_offset;
  cfg.util_offset = data.util_offset;
  return cfg;
}

TrainResult train(Hstgsn& m, const PreparedData& data, const Dataset& dataset,
                  const TrainConfig& cfg) {
  if (dataset.train_idx.empty()) throw validation_error("dataset has an empty train split");
  TrainResult result;
  ad::AdamState adam;
  adam.init(m.parameters());

  auto epoch_loss = [&](const std::vector<int>& indices) {
    double total = 0.0;
    for (int idx : indices) {
      ad::Tape tape;
      auto pred = m.forward(tape, data.samples.at(idx).input);
      total += m.loss(tape, pred, data.samples.at(idx).truth).item();
    }
    return indices.empty() ? 0.0 : total / indices.size();
  };

  if (cfg.lr_schedule != "constant" && cfg.lr_schedule != "cosine")
    throw validation_error("unknown lr schedule '" + cfg.lr_schedule + "'");
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> best_values = m.snapshot_values();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double lr = cfg.lr;
    if (cfg.lr_schedule == "cosine" && cfg.epochs > 1) {
      const double progress = static_cast<double>(epoch) / (cfg.epochs - 1);
      const double floor = cfg.lr / 50.0;
      lr = floor + 0.5 * (cfg.lr - floor) * (1.0 + std::cos(progress * 3.14159265358979323846));
    }
    std::vector<int> order = dataset.train_idx;
    rng::Xoshiro256pp shuffle(rng::child_seed(cfg.seed, 10000ull + epoch));
    for (std::size_t i = 0; i + 1 < order.size(); ++i) {
      const std::size_t j = i + shuffle.below(order.size() - i);
      std::swap(order[i], order[j]);
    }

    double train_total = 0.0;
    for (std::size_t step = 0; step < order.size(); ++step) {
      const int idx = order[step];
      ad::Tape tape;
      auto pred = m.forward(tape, data.samples.at(idx).input);
      ad::Tensor loss = m.loss(tape, pred, data.samples.at(idx).truth);
      if (!std::isfinite(loss.item()))
        throw validation_error("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                               std::to_string(step) + ", sample " + std::to_string(idx));
      train_total += loss.item();
      ad::zero_grad(m.parameters());
      tape.backward(loss);
      ad::adam_step(m.parameters(), adam, lr);
    }
    result.train_curve.push_back(train_total / order.size());

    const double val = dataset.val_idx.empty() ? result.train_curve.back()
                                               : epoch_loss(dataset.val_idx);
    result.val_curve.push_back(val);
    if (val < best_val) {
      best_val = val;
      best_values = m.snapshot_values();
      result.best_epoch = epoch;
    }
  }
  m.restore_values(best_values);
  return result;
}

namespace {

struct ErrorAccum {
  double abs_sum = 0.0;
  double sq_sum = 0.0;
  std::size_t count = 0;
  void add(double err) {
    abs_sum += std::abs(err);
    sq_sum += err * err;
    ++count;
  }
  double mae() const { return count ? abs_sum / count : 0.0; }
  double rmse() const { return count ? std::sqrt(sq_sum / count) : 0.0; }
};

}  // namespace

nlohmann::json Metrics::to_json() const {
  return {{"flow_mae", flow_mae},
          {"flow_rmse", flow_rmse},
          {"util_mae_pct", util_mae_pct},
          {"util_rmse_pct", util_rmse_pct}};
}

EvalResult evaluate(const Hstgsn& m, const PreparedData& data, const std::vector<int>& indices) {
  if (indices.empty()) throw validation_error("evaluation split is empty");
  EvalResult out;
  ErrorAccum flow, util;
  for (int idx : indices) {
    const PreparedSample& ps = data.samples.at(idx);
    ad::Tape tape;
    auto pred = m.forward(tape, ps.input);
    ErrorAccum sample_flow;
    for (int t = 0; t < ps.truth.num_steps; ++t) {
      const auto& f = pred.flow_steps.at(t).values();
      const auto& u = pred.util_steps.at(t).values();
      for (int l = 0; l < ps.truth.num_links; ++l) {
        const double fe = f[l] - ps.truth.flow_at(l, t);
        const double ue = u[l] - ps.truth.util_at(l, t);
        flow.add(fe);
        util.add(ue);
        sample_flow.add(fe);
      }
    }
    out.per_sample_flow_mae.push_back(sample_flow.mae());
  }
  out.metrics.flow_mae = flow.mae();
  out.metrics.flow_rmse = flow.rmse();
  out.metrics.util_mae_pct = 100.0 * util.mae();
  out.metrics.util_rmse_pct = 100.0 * util.rmse();
  if (out.metrics.flow_rmse < out.metrics.flow_mae ||
      out.metrics.util_rmse_pct < out.metrics.util_mae_pct)
    throw integrity_error("RMSE fell below MAE; metric computation is broken");
  return out;
}

MeanBaseline fit_mean_baseline(const PreparedData& data, const std::vector<int>& train_indices) {
  if (train_indices.empty()) throw validation_error("baseline needs a nonempty train split");
  const dta::FlowRecord& first = data.samples.at(train_indices[0]).truth;
  MeanBaseline b;
  b.num_links = first.num_links;
  b.t_steps = first.num_steps;
  b.flow_mean.assign(static_cast<std::size_t>(b.num_links) * b.t_steps, 0.0);
  b.util_mean.assign(b.flow_mean.size(), 0.0);
  for (int idx : train_indices) {
    const dta::FlowRecord& r = data.samples.at(idx).truth;
    for (std::size_t i = 0; i < b.flow_mean.size(); ++i) {
      b.flow_mean[i] += r.flow[i];
      b.util_mean[i] += r.utilization[i];
    }
  }
  for (std::size_t i = 0; i < b.flow_mean.size(); ++i) {
    b.flow_mean[i] /= train_indices.size();
    b.util_mean[i] /= train_indices.size();
  }
  return b;
}

EvalResult evaluate_baseline(const MeanBaseline& b, const PreparedData& data,
                             const std::vector<int>& indices) {
  if (indices.empty()) throw validation_error("evaluation split is empty");
  EvalResult out;
  ErrorAccum flow, util;
  for (int idx : indices) {
    const dta::FlowRecord& r = data.samples.at(idx).truth;
    ErrorAccum sample_flow;
    for (std::size_t i = 0; i < b.flow_mean.size(); ++i) {
      const double fe = b.flow_mean[i] - r.flow[i];
      const double ue = b.util_mean[i] - r.utilization[i];
      flow.add(fe);
      util.add(ue);
      sample_flow.add(fe);
    }
    out.per_sample_flow_mae.push_back(sample_flow.mae());
  }
  out.metrics.flow_mae = flow.mae();
  out.metrics.flow_rmse = flow.rmse();
  out.metrics.util_mae_pct = 100.0 * util.mae();
  out.metrics.util_rmse_pct = 100.0 * util.rmse();
  return out;
}

Metrics mean_metrics(const std::vector<RunMetrics>& runs) {
  Metrics m;
  if (runs.empty()) return m;
  for (const RunMetrics& r : runs) {
    m.flow_mae += r.test.flow_mae;
    m.flow_rmse += r.test.flow_rmse;
    m.util_mae_pct += r.test.util_mae_pct;
    m.util_rmse_pct += r.test.util_rmse_pct;
  }
  m.flow_mae /= runs.size();
  m.flow_rmse /= runs.size();
  m.util_mae_pct /= runs.size();
  m.util_rmse_pct /= runs.size();
  return m;
}

nlohmann::json ModelReport::to_json() const {
  nlohmann::json j;
  j["name"] = name;
  j["param_count"] = param_count;
  j["mean"] = mean.to_json();
  nlohmann::json runs_json = nlohmann::json::array();
  for (const RunMetrics& r : runs) {
    nlohmann::json rj;
    rj["seed"] = r.seed;
    rj["test"] = r.test.to_json();
    rj["per_sample_flow_mae"] = r.per_sample_flow_mae;
    rj["best_epoch"] = r.best_epoch;
    rj["train_curve"] = r.train_curve;
    rj["val_curve"] = r.val_curve;
    runs_json.push_back(rj);
  }
  j["runs"] = runs_json;
  return j;
}

ModelReport run_variant(const Dataset& dataset, const PreparedData& data, model::Variant variant,
                        const model::ModelConfig& base_config, const TrainConfig& base_train,
                        const std::vector<std::uint64_t>& seeds,
                        const std::string& checkpoint_dir) {
  ModelReport report;
  report.name = model::variant_name(variant);
  for (std::uint64_t seed : seeds) {
    model::ModelConfig cfg = base_config;
    cfg.variant = variant;
    cfg.loss_weight_utilization = base_train.loss_weight_utilization;
    Hstgsn m(cfg, seed);
    report.param_count = m.param_count();

    TrainConfig tc = base_train;
    tc.seed = seed;
    TrainResult tr = train(m, data, dataset, tc);
    EvalResult ev = evaluate(m, data, dataset.test_idx);

    RunMetrics rm;
    rm.seed = seed;
    rm.test = ev.metrics;
    rm.per_sample_flow_mae = ev.per_sample_flow_mae;
    rm.val_curve = tr.val_curve;
    rm.train_curve = tr.train_curve;
    rm.best_epoch = tr.best_epoch;
    report.runs.push_back(std::move(rm));

    if (!checkpoint_dir.empty()) {
      std::filesystem::create_directories(checkpoint_dir);
      m.save((std::filesystem::path(checkpoint_dir) /
              (report.name + "_seed" + std::to_string(seed)))
                 .string(),
             base_train.epochs);
    }
  }
  report.mean = mean_metrics(report.runs);
  return report;
}

std::vector<ModelReport> run_ablation(const Dataset& dataset, const PreparedData& data,
                                      const std::vector<model::Variant>& variants,
                                      const model::ModelConfig& base_config,
                                      const TrainConfig& base_train,
                                      const std::vector<std::uint64_t>& seeds) {
  std::vector<ModelReport> reports;
  for (model::Variant v : variants)
    reports.push_back(run_variant(dataset, data, v, base_config, base_train, seeds));
  return reports;
}

std::string report_csv(const std::vector<ModelReport>& reports) {
  std::string out = "model,param_count,flow_mae,flow_rmse,util_mae_pct,util_rmse_pct\n";
  for (const ModelReport& r : reports)
    out += r.name + "," + std::to_string(r.param_count) + "," +
           net::format_double(r.mean.flow_mae) + "," + net::format_double(r.mean.flow_rmse) + "," +
           net::format_double(r.mean.util_mae_pct) + "," +
           net::format_double(r.mean.util_rmse_pct) + "\n";
  return out;
}

std::string report_long_csv(const std::vector<ModelReport>& reports,
                            const std::string& network_id) {
  std::string out = "network,model,seed,metric,value\n";
  for (const ModelReport& r : reports)
    for (const RunMetrics& run : r.runs) {
      const std::string prefix = network_id + "," + r.name + "," + std::to_string(run.seed) + ",";
      out += prefix + "flow_mae," + net::format_double(run.test.flow_mae) + "\n";
      out += prefix + "flow_rmse," + net::format_double(run.test.flow_rmse) + "\n";
      out += prefix + "util_mae_pct," + net::format_double(run.test.util_mae_pct) + "\n";
      out += prefix + "util_rmse_pct," + net::format_double(run.test.util_rmse_pct) + "\n";
    }
  return out;
}

}  // namespace odflow::harness
