// odflow: parse TNTP networks, simulate dynamic user equilibrium, generate
// datasets, train and evaluate the flow prediction model, and export report
// tables. Every subcommand that touches randomness takes an explicit --seed,
// and every artifact directory receives a manifest.json describing the run.

#include <chrono>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "odflow/dataset.hpp"
#include "odflow/dta.hpp"
#include "odflow/hetero_graph.hpp"
#include "odflow/hstgsn.hpp"
#include "odflow/manifest.hpp"
#include "odflow/rng.hpp"
#include "odflow/stats.hpp"
#include "odflow/tntp.hpp"
#include "odflow/train.hpp"

using namespace odflow;
namespace fs = std::filesystem;

namespace {

struct Timer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
};

// Plain key=value configuration files. Keys are long option names without
// the leading dashes; a value feeds the matching option unless the flag was
// also given on the command line, in which case the flag wins with a
// warning. Unknown keys are errors.
void apply_config_file(CLI::App& app, const std::string& path,
                       const std::vector<std::string>& raw_args) {
  const std::string text = net::read_file(path);
  std::istringstream in(text);
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      const auto e = s.find_last_not_of(" \t\r");
      return s.substr(b, e - b + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw parse_error("config line is not key=value", line_no);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    CLI::Option* opt = nullptr;
    try {
      opt = app.get_option("--" + key);
    } catch (const CLI::OptionNotFound&) {
      throw validation_error("unknown config key '" + key + "' in " + path);
    }
    const bool on_cli = std::find(raw_args.begin(), raw_args.end(), "--" + key) != raw_args.end();
    if (on_cli) {
      std::cerr << "warning: config key '" << key << "' overridden by command-line flag\n";
      continue;
    }
    opt->clear();
    opt->add_result(value);
    opt->run_callback();
  }
}

net::RoadNetwork load_network(const std::string& net_path, const std::string& node_path) {
  net::RoadNetwork network = net::parse_tntp_net(net::read_file(net_path));
  if (!node_path.empty())
    net::attach_coordinates(network, net::parse_tntp_nodes(net::read_file(node_path)));
  return network;
}

std::vector<std::uint64_t> derive_run_seeds(std::uint64_t master, int runs) {
  std::vector<std::uint64_t> seeds;
  for (int r = 0; r < runs; ++r) seeds.push_back(rng::child_seed(master, 7000ull + r));
  return seeds;
}

nlohmann::json summary_json(const net::NetworkSummary& s) {
  return {{"node_count", s.node_count},
          {"link_count", s.link_count},
          {"total_demand", s.total_demand},
          {"avg_degree", s.avg_degree}};
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> raw_args(argv, argv + argc);

  CLI::App app{
      "Dynamic-user-equilibrium traffic lab: TNTP parsing, DUE simulation, "
      "dataset generation, and heterogeneous graph sequence model training"};
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path, "key=value configuration file; flags win on conflict");

  // ---- net inspect ----------------------------------------------------------
  auto* net_cmd = app.add_subcommand("net", "network file utilities");
  net_cmd->require_subcommand(1);
  auto* inspect = net_cmd->add_subcommand("inspect", "summarize a TNTP network");
  struct {
    std::string net, trips, node, json_out;
  } ins;
  inspect->add_option("--net", ins.net, "TNTP _net file")->required();
  inspect->add_option("--trips", ins.trips, "TNTP _trips file");
  inspect->add_option("--node", ins.node, "TNTP _node file");
  inspect->add_option("--json", ins.json_out, "write the JSON summary to this path");

  // ---- dta run --------------------------------------------------------------
  auto* dta_cmd = app.add_subcommand("dta", "dynamic traffic assignment");
  dta_cmd->require_subcommand(1);
  auto* dta_run = dta_cmd->add_subcommand("run", "solve dynamic user equilibrium");
  struct {
    std::string net, trips, node, out, profile = "uniform";
    int steps = 12, interval = 5, horizon = 120, max_iters = 100;
    double gap_tol = 1e-2;
    int threads = 1;
  } dr;
  dta_run->add_option("--net", dr.net)->required();
  dta_run->add_option("--trips", dr.trips)->required();
  dta_run->add_option("--node", dr.node);
  dta_run->add_option("--out", dr.out, "artifact directory")->required();
  dta_run->add_option("--profile", dr.profile, "departure profile: uniform or peak")
      ->capture_default_str();
  dta_run->add_option("--steps", dr.steps, "demand steps")->capture_default_str();
  dta_run->add_option("--interval", dr.interval, "demand interval minutes")->capture_default_str();
  dta_run->add_option("--horizon", dr.horizon, "simulation horizon minutes")->capture_default_str();
  dta_run->add_option("--max-iters", dr.max_iters, "MSA iteration cap")->capture_default_str();
  dta_run->add_option("--gap-tol", dr.gap_tol, "relative gap tolerance")->capture_default_str();
  dta_run->add_option("--threads", dr.threads, "worker cap; results are schedule-independent")
      ->capture_default_str();

  // ---- data gen --------------------------------------------------------------
  auto* data_cmd = app.add_subcommand("data", "dataset utilities");
  data_cmd->require_subcommand(1);
  auto* data_gen = data_cmd->add_subcommand("gen", "generate a perturbed-sample dataset");
  struct {
    std::string net, trips, node, out, network_id = "network", profile = "uniform";
    int n = 64, steps = 12, interval = 5, horizon = 120, max_iters = 100;
    double gap_tol = 1e-2, mask_ratio = 0.0;
    std::uint64_t seed = 0, mask_seed = 0;
    int threads = 1;
  } dg;
  data_gen->add_option("--net", dg.net)->required();
  data_gen->add_option("--trips", dg.trips)->required();
  data_gen->add_option("--node", dg.node);
  data_gen->add_option("--out", dg.out, "dataset directory")->required();
  data_gen->add_option("--network-id", dg.network_id)->capture_default_str();
  data_gen->add_option("--n", dg.n, "sample count")->capture_default_str();
  data_gen->add_option("--seed", dg.seed, "master seed (required)")->required();
  data_gen->add_option("--profile", dg.profile)->capture_default_str();
  data_gen->add_option("--steps", dg.steps)->capture_default_str();
  data_gen->add_option("--interval", dg.interval)->capture_default_str();
  data_gen->add_option("--horizon", dg.horizon)->capture_default_str();
  data_gen->add_option("--max-iters", dg.max_iters)->capture_default_str();
  data_gen->add_option("--gap-tol", dg.gap_tol)->capture_default_str();
  data_gen->add_option("--mask-ratio", dg.mask_ratio, "fraction of OD pairs hidden per sample")
      ->capture_default_str();
  data_gen->add_option("--mask-seed", dg.mask_seed, "seed for the mask draw (defaults to --seed)");
  data_gen->add_option("--threads", dg.threads)->capture_default_str();

  // ---- train ------------------------------------------------------------------
  auto* train_cmd = app.add_subcommand("train", "train the flow prediction model");
  struct {
    std::string dataset, out, variant = "full";
    std::string lr_schedule = "cosine";
    int epochs = 30, runs = 3;
    double lr = 1e-2, util_weight = 1.0;
    std::uint64_t seed = 0;
    int embed_dim = 64, attn_dim = 16, heads = 4, svge_layers = 2, srge_layers = 2,
        srgd_layers = -1;
  } tr;
  train_cmd->add_option("--dataset", tr.dataset, "dataset directory")->required();
  train_cmd->add_option("--out", tr.out, "artifact directory")->required();
  train_cmd->add_option("--seed", tr.seed, "master seed (required); run seeds derive from it")
      ->required();
  train_cmd->add_option("--runs", tr.runs, "independent seeds to train")->capture_default_str();
  train_cmd->add_option("--epochs", tr.epochs)->capture_default_str();
  train_cmd->add_option("--lr", tr.lr, "Adam learning rate")->capture_default_str();
  train_cmd->add_option("--lr-schedule", tr.lr_schedule, "constant or cosine")
      ->capture_default_str();
  train_cmd->add_option("--variant", tr.variant, "full, no_link_feat, no_od_link or no_adaptive")
      ->capture_default_str();
  train_cmd->add_option("--util-weight", tr.util_weight, "utilization term weight in the loss")
      ->capture_default_str();
  train_cmd->add_option("--embed-dim", tr.embed_dim)->capture_default_str();
  train_cmd->add_option("--attn-dim", tr.attn_dim)->capture_default_str();
  train_cmd->add_option("--heads", tr.heads)->capture_default_str();
  train_cmd->add_option("--svge-layers", tr.svge_layers)->capture_default_str();
  train_cmd->add_option("--srge-layers", tr.srge_layers)->capture_default_str();
  train_cmd->add_option("--srgd-layers", tr.srgd_layers, "-1 mirrors --srge-layers")
      ->capture_default_str();

  // ---- eval --------------------------------------------------------------------
  auto* eval_cmd = app.add_subcommand("eval", "evaluate trained checkpoints on the test split");
  struct {
    std::string dataset, model_dir, out;
  } ev;
  eval_cmd->add_option("--dataset", ev.dataset)->required();
  eval_cmd->add_option("--model", ev.model_dir, "train artifact directory")->required();
  eval_cmd->add_option("--out", ev.out)->required();

  // ---- ablate ------------------------------------------------------------------
  auto* ablate_cmd = app.add_subcommand("ablate", "train and compare model variants");
  struct {
    std::string dataset, out, variants = "full,no_link_feat,no_od_link,no_adaptive";
    std::string lr_schedule = "cosine";
    int epochs = 30, runs = 3;
    double lr = 1e-2, util_weight = 1.0;
    std::uint64_t seed = 0;
  } ab;
  ablate_cmd->add_option("--dataset", ab.dataset)->required();
  ablate_cmd->add_option("--out", ab.out)->required();
  ablate_cmd->add_option("--seed", ab.seed, "master seed (required)")->required();
  ablate_cmd->add_option("--variants", ab.variants, "comma-separated variant list")
      ->capture_default_str();
  ablate_cmd->add_option("--epochs", ab.epochs)->capture_default_str();
  ablate_cmd->add_option("--runs", ab.runs)->capture_default_str();
  ablate_cmd->add_option("--lr", ab.lr)->capture_default_str();
  ablate_cmd->add_option("--lr-schedule", ab.lr_schedule, "constant or cosine")
      ->capture_default_str();
  ablate_cmd->add_option("--util-weight", ab.util_weight)->capture_default_str();

  // ---- export ------------------------------------------------------------------
  auto* export_cmd = app.add_subcommand("export", "collect reports into comparison tables");
  struct {
    std::vector<std::string> runs;
    std::string out;
  } ex;
  export_cmd->add_option("--runs", ex.runs, "report directories (train/eval/ablate artifacts)")
      ->required()
      ->delimiter(',');
  export_cmd->add_option("--out", ex.out)->required();

  // ---- model describe -------------------------------------------------------
  auto* model_cmd = app.add_subcommand("model", "model utilities");
  model_cmd->require_subcommand(1);
  auto* describe =
      model_cmd->add_subcommand("describe", "print layer shapes and parameter counts as JSON");
  struct {
    std::string checkpoint;
    int embed_dim = 64, attn_dim = 16, heads = 4, svge_layers = 2, srge_layers = 2,
        srgd_layers = -1;
    std::string variant = "full";
  } md;
  describe->add_option("--checkpoint", md.checkpoint, "checkpoint stem to describe");
  describe->add_option("--embed-dim", md.embed_dim)->capture_default_str();
  describe->add_option("--attn-dim", md.attn_dim)->capture_default_str();
  describe->add_option("--heads", md.heads)->capture_default_str();
  describe->add_option("--svge-layers", md.svge_layers)->capture_default_str();
  describe->add_option("--srge-layers", md.srge_layers)->capture_default_str();
  describe->add_option("--srgd-layers", md.srgd_layers)->capture_default_str();
  describe->add_option("--variant", md.variant)->capture_default_str();

  try {
    app.parse(argc, argv);
    if (!config_path.empty()) {
      CLI::App* sub = app.get_subcommands().front();
      while (!sub->get_subcommands().empty()) sub = sub->get_subcommands().front();
      apply_config_file(*sub, config_path, raw_args);
    }
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    Timer total;
    cli::RunManifest manifest;
    manifest.command = raw_args;
    manifest.version = cli::version_string();

    if (inspect->parsed()) {
      Timer t;
      net::RoadNetwork network = load_network(ins.net, ins.node);
      std::optional<net::OdMatrix> trips;
      if (!ins.trips.empty()) trips = net::parse_tntp_trips(net::read_file(ins.trips));
      net::NetworkSummary s = net::summarize(network, trips ? &*trips : nullptr);
      std::cout << "network: " << ins.net << "\n"
                << "  nodes:        " << s.node_count << "\n"
                << "  links:        " << s.link_count << "\n"
                << "  avg degree:   " << s.avg_degree << "\n"
                << "  total demand: " << s.total_demand << "\n"
                << "  parse time:   " << t.seconds() << " s\n";
      if (!ins.json_out.empty()) net::write_file(ins.json_out, summary_json(s).dump(2) + "\n");
      return 0;
    }

    if (dta_run->parsed()) {
      manifest.subcommand = "dta run";
      net::RoadNetwork network = load_network(dr.net, dr.node);
      net::OdMatrix trips = net::parse_tntp_trips(net::read_file(dr.trips));
      auto demand =
          net::expand_demand(trips, net::demand_profile(dr.profile, dr.steps), dr.interval);
      dta::SimConfig cfg;
      cfg.step_minutes = 1;
      cfg.horizon_minutes = dr.horizon;
      cfg.aggregate_minutes = dr.interval;
      cfg.max_msa_iterations = dr.max_iters;
      cfg.gap_tolerance = dr.gap_tol;
      Timer t;
      dta::EquilibriumResult r = dta::msa_equilibrium(network, demand, cfg, dr.threads);
      fs::create_directories(dr.out);
      net::write_file((fs::path(dr.out) / "flows.csv").string(),
                      dta::flow_record_csv(r.record, network));
      manifest.hash_input(dr.net);
      manifest.hash_input(dr.trips);
      if (!dr.node.empty()) manifest.hash_input(dr.node);
      manifest.config = {{"profile", dr.profile},
                         {"steps", dr.steps},
                         {"interval", dr.interval},
                         {"horizon", dr.horizon},
                         {"max_iters", dr.max_iters},
                         {"gap_tol", dr.gap_tol},
                         {"gap_trace", r.trace.gaps},
                         {"iterations", r.trace.iterations},
                         {"converged", r.trace.converged},
                         {"total_loaded", r.record.total_loaded},
                         {"total_arrived", r.record.total_arrived},
                         {"residual", r.record.residual}};
      manifest.timings_seconds["equilibrium"] = t.seconds();
      manifest.timings_seconds["total"] = total.seconds();
      manifest.write(dr.out);
      std::cout << (r.trace.converged ? "converged" : "hit iteration cap") << " after "
                << r.trace.iterations << " iterations, gap "
                << (r.trace.gaps.empty() ? 0.0 : r.trace.gaps.back()) << "\n";
      if (!r.trace.converged) throw validation_error("equilibrium did not converge");
      return 0;
    }

    if (data_gen->parsed()) {
      manifest.subcommand = "data gen";
      net::RoadNetwork network = load_network(dg.net, dg.node);
      net::OdMatrix trips = net::parse_tntp_trips(net::read_file(dg.trips));
      harness::GenConfig gen;
      gen.demand_steps = dg.steps;
      gen.interval_minutes = dg.interval;
      gen.horizon_minutes = dg.horizon;
      gen.profile = dg.profile;
      gen.max_msa_iterations = dg.max_iters;
      gen.gap_tolerance = dg.gap_tol;
      gen.threads = dg.threads;
      harness::Dataset dataset =
          harness::generate_samples(network, trips, dg.n, dg.seed, gen, dg.network_id);
      if (dg.mask_ratio > 0.0)
        harness::mask_dataset(dataset, dg.mask_ratio, dg.mask_seed ? dg.mask_seed : dg.seed);
      harness::save_dataset(dataset, dg.out);
      manifest.hash_input(dg.net);
      manifest.hash_input(dg.trips);
      if (!dg.node.empty()) manifest.hash_input(dg.node);
      manifest.seeds = {dg.seed};
      manifest.config = {{"n", dg.n},
                         {"network_id", dg.network_id},
                         {"mask_ratio", dg.mask_ratio},
                         {"mask_seed", dg.mask_seed ? dg.mask_seed : dg.seed},
                         {"generation", gen.to_json()},
                         {"kept_samples", dataset.samples.size()},
                         {"excluded", dataset.excluded_seeds.size()}};
      manifest.timings_seconds["total"] = total.seconds();
      manifest.write(dg.out);
      std::cout << "dataset: " << dataset.samples.size() << " samples ("
                << dataset.excluded_seeds.size() << " excluded) -> " << dg.out << "\n";
      return 0;
    }

    if (train_cmd->parsed()) {
      manifest.subcommand = "train";
      harness::Dataset dataset = harness::load_dataset(tr.dataset);
      harness::PreparedData data = harness::prepare_data(dataset);
      model::ModelConfig cfg = harness::desk_model_config(data);
      cfg.embed_dim = tr.embed_dim;
      cfg.attn_dim = tr.attn_dim;
      cfg.heads = tr.heads;
      cfg.svge_layers = tr.svge_layers;
      cfg.srge_layers = tr.srge_layers;
      cfg.srgd_layers = tr.srgd_layers;
      harness::TrainConfig base;
      base.epochs = tr.epochs;
      base.lr = tr.lr;
      base.lr_schedule = tr.lr_schedule;
      base.loss_weight_utilization = tr.util_weight;
      const auto seeds = derive_run_seeds(tr.seed, tr.runs);
      harness::ModelReport report = harness::run_variant(
          dataset, data, model::variant_from_string(tr.variant), cfg, base, seeds, tr.out);
      fs::create_directories(tr.out);
      net::write_file((fs::path(tr.out) / "report.json").string(),
                      report.to_json().dump(2) + "\n");
      net::write_file((fs::path(tr.out) / "report.csv").string(), harness::report_csv({report}));
      std::string curves = "run,seed,epoch,train_loss,val_loss\n";
      for (std::size_t r = 0; r < report.runs.size(); ++r)
        for (std::size_t e = 0; e < report.runs[r].train_curve.size(); ++e)
          curves += std::to_string(r) + "," + std::to_string(report.runs[r].seed) + "," +
                    std::to_string(e) + "," + net::format_double(report.runs[r].train_curve[e]) +
                    "," + net::format_double(report.runs[r].val_curve[e]) + "\n";
      net::write_file((fs::path(tr.out) / "curves.csv").string(), curves);
      manifest.seeds = seeds;
      manifest.config = {{"dataset", tr.dataset},  {"variant", tr.variant},
                         {"epochs", tr.epochs},    {"lr", tr.lr},
                         {"lr_schedule", tr.lr_schedule},
                         {"runs", tr.runs},        {"util_weight", tr.util_weight},
                         {"model", cfg.to_json()}, {"master_seed", tr.seed}};
      manifest.timings_seconds["total"] = total.seconds();
      manifest.write(tr.out);
      std::cout << "trained " << tr.variant << " on " << seeds.size()
                << " seed(s); mean test flow MAE " << report.mean.flow_mae << "\n";
      return 0;
    }

    if (eval_cmd->parsed()) {
      manifest.subcommand = "eval";
      harness::Dataset dataset = harness::load_dataset(ev.dataset);
      harness::PreparedData data = harness::prepare_data(dataset);

      nlohmann::json train_report =
          nlohmann::json::parse(net::read_file((fs::path(ev.model_dir) / "report.json").string()));
      const std::string variant = train_report.at("name").get<std::string>();
      std::vector<harness::RunMetrics> runs;
      nlohmann::json out_runs = nlohmann::json::array();
      for (const auto& run : train_report.at("runs")) {
        const std::uint64_t seed = run.at("seed").get<std::uint64_t>();
        const std::string stem =
            (fs::path(ev.model_dir) / (variant + "_seed" + std::to_string(seed))).string();
        model::Hstgsn m = model::Hstgsn::load(stem);
        harness::EvalResult result = harness::evaluate(m, data, dataset.test_idx);
        harness::RunMetrics rm;
        rm.seed = seed;
        rm.test = result.metrics;
        rm.per_sample_flow_mae = result.per_sample_flow_mae;
        runs.push_back(rm);
        nlohmann::json rj;
        rj["seed"] = seed;
        rj["test"] = result.metrics.to_json();
        rj["per_sample_flow_mae"] = result.per_sample_flow_mae;
        out_runs.push_back(rj);
      }
      harness::MeanBaseline baseline = harness::fit_mean_baseline(data, dataset.train_idx);
      harness::EvalResult bl = harness::evaluate_baseline(baseline, data, dataset.test_idx);

      nlohmann::json out;
      out["variant"] = variant;
      out["runs"] = out_runs;
      out["mean"] = harness::mean_metrics(runs).to_json();
      out["baseline"] = bl.metrics.to_json();
      out["baseline_per_sample_flow_mae"] = bl.per_sample_flow_mae;
      fs::create_directories(ev.out);
      net::write_file((fs::path(ev.out) / "metrics.json").string(), out.dump(2) + "\n");
      std::string csv = "model,seed,flow_mae,flow_rmse,util_mae_pct,util_rmse_pct\n";
      for (const auto& r : runs)
        csv += variant + "," + std::to_string(r.seed) + "," + net::format_double(r.test.flow_mae) +
               "," + net::format_double(r.test.flow_rmse) + "," +
               net::format_double(r.test.util_mae_pct) + "," +
               net::format_double(r.test.util_rmse_pct) + "\n";
      csv += "historical_mean,-," + net::format_double(bl.metrics.flow_mae) + "," +
             net::format_double(bl.metrics.flow_rmse) + "," +
             net::format_double(bl.metrics.util_mae_pct) + "," +
             net::format_double(bl.metrics.util_rmse_pct) + "\n";
      net::write_file((fs::path(ev.out) / "metrics.csv").string(), csv);
      manifest.config = {{"dataset", ev.dataset}, {"model", ev.model_dir}};
      manifest.timings_seconds["total"] = total.seconds();
      manifest.write(ev.out);
      std::cout << "eval " << variant << ": mean flow MAE " << harness::mean_metrics(runs).flow_mae
                << " (baseline " << bl.metrics.flow_mae << ")\n";
      return 0;
    }

    if (ablate_cmd->parsed()) {
      manifest.subcommand = "ablate";
      harness::Dataset dataset = harness::load_dataset(ab.dataset);
      harness::PreparedData data = harness::prepare_data(dataset);
      model::ModelConfig cfg = harness::desk_model_config(data);
      harness::TrainConfig base;
      base.epochs = ab.epochs;
      base.lr = ab.lr;
      base.lr_schedule = ab.lr_schedule;
      base.loss_weight_utilization = ab.util_weight;
      std::vector<model::Variant> variants;
      {
        std::istringstream in(ab.variants);
        std::string tok;
        while (std::getline(in, tok, ',')) variants.push_back(model::variant_from_string(tok));
      }
      const auto seeds = derive_run_seeds(ab.seed, ab.runs);
      auto reports = harness::run_ablation(dataset, data, variants, cfg, base, seeds);

      harness::MeanBaseline baseline = harness::fit_mean_baseline(data, dataset.train_idx);
      harness::EvalResult bl = harness::evaluate_baseline(baseline, data, dataset.test_idx);

      fs::create_directories(ab.out);
      nlohmann::json out;
      out["baseline"] = bl.metrics.to_json();
      nlohmann::json rows = nlohmann::json::array();
      for (const auto& r : reports) rows.push_back(r.to_json());
      out["variants"] = rows;
      net::write_file((fs::path(ab.out) / "ablation.json").string(), out.dump(2) + "\n");
      net::write_file((fs::path(ab.out) / "ablation.csv").string(), harness::report_csv(reports));
      net::write_file((fs::path(ab.out) / "ablation_long.csv").string(),
                      harness::report_long_csv(reports, dataset.network_id));
      manifest.seeds = seeds;
      manifest.config = {{"dataset", ab.dataset}, {"variants", ab.variants},
                         {"epochs", ab.epochs},   {"lr", ab.lr},
                         {"lr_schedule", ab.lr_schedule},
                         {"runs", ab.runs},       {"master_seed", ab.seed}};
      manifest.timings_seconds["total"] = total.seconds();
      manifest.write(ab.out);
      std::cout << harness::report_csv(reports);
      return 0;
    }

    if (export_cmd->parsed()) {
      manifest.subcommand = "export";
      std::string comparison = "source,model,flow_mae,flow_rmse,util_mae_pct,util_rmse_pct\n";
      std::string long_rows = "source,model,seed,metric,value\n";
      auto add_metrics = [&](const std::string& source, const std::string& name,
                             const nlohmann::json& metrics) {
        comparison += source + "," + name + "," +
                      net::format_double(metrics.at("flow_mae").get<double>()) + "," +
                      net::format_double(metrics.at("flow_rmse").get<double>()) + "," +
                      net::format_double(metrics.at("util_mae_pct").get<double>()) + "," +
                      net::format_double(metrics.at("util_rmse_pct").get<double>()) + "\n";
      };
      auto add_runs = [&](const std::string& source, const std::string& name,
                          const nlohmann::json& runs_json) {
        for (const auto& run : runs_json) {
          const std::string seed = std::to_string(run.at("seed").get<std::uint64_t>());
          const auto& m = run.at("test");
          for (const char* key : {"flow_mae", "flow_rmse", "util_mae_pct", "util_rmse_pct"})
            long_rows += source + "," + name + "," + seed + "," + key + "," +
                         net::format_double(m.at(key).get<double>()) + "\n";
        }
      };
      for (const std::string& dir : ex.runs) {
        const std::string source = fs::path(dir).filename().string();
        if (fs::exists(fs::path(dir) / "ablation.json")) {
          auto j =
              nlohmann::json::parse(net::read_file((fs::path(dir) / "ablation.json").string()));
          add_metrics(source, "historical_mean", j.at("baseline"));
          for (const auto& row : j.at("variants")) {
            add_metrics(source, row.at("name").get<std::string>(), row.at("mean"));
            add_runs(source, row.at("name").get<std::string>(), row.at("runs"));
          }
        } else if (fs::exists(fs::path(dir) / "metrics.json")) {
          auto j = nlohmann::json::parse(net::read_file((fs::path(dir) / "metrics.json").string()));
          add_metrics(source, j.at("variant").get<std::string>(), j.at("mean"));
          add_metrics(source, "historical_mean", j.at("baseline"));
          add_runs(source, j.at("variant").get<std::string>(), j.at("runs"));
        } else if (fs::exists(fs::path(dir) / "report.json")) {
          auto j = nlohmann::json::parse(net::read_file((fs::path(dir) / "report.json").string()));
          add_metrics(source, j.at("name").get<std::string>(), j.at("mean"));
          add_runs(source, j.at("name").get<std::string>(), j.at("runs"));
        } else {
          throw validation_error("no report found under " + dir);
        }
      }
      fs::create_directories(ex.out);
      net::write_file((fs::path(ex.out) / "comparison.csv").string(), comparison);
      net::write_file((fs::path(ex.out) / "long.csv").string(), long_rows);
      manifest.config = {{"runs", ex.runs}};
      manifest.timings_seconds["total"] = total.seconds();
      manifest.write(ex.out);
      std::cout << "exported " << ex.runs.size() << " report(s) -> " << ex.out << "\n";
      return 0;
    }

    if (describe->parsed()) {
      if (!md.checkpoint.empty()) {
        model::Hstgsn m = model::Hstgsn::load(md.checkpoint);
        std::cout << m.describe().dump(2) << "\n";
      } else {
        model::ModelConfig cfg;
        cfg.embed_dim = md.embed_dim;
        cfg.attn_dim = md.attn_dim;
        cfg.heads = md.heads;
        cfg.svge_layers = md.svge_layers;
        cfg.srge_layers = md.srge_layers;
        cfg.srgd_layers = md.srgd_layers;
        cfg.variant = model::variant_from_string(md.variant);
        model::Hstgsn m(cfg, 0);
        std::cout << m.describe().dump(2) << "\n";
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
