#include "odflow/hstgsn.hpp"

#include <cmath>

#include "odflow/rng.hpp"

namespace odflow::model {

using ad::Tape;
using ad::Tensor;

Variant variant_from_string(const std::string& name) {
  if (name == "full") return Variant::full;
  if (name == "no_link_feat") return Variant::no_link_feat;
  if (name == "no_od_link") return Variant::no_od_link;
  if (name == "no_adaptive") return Variant::no_adaptive;
  throw validation_error("unknown model variant '" + name +
                         "' (use full, no_link_feat, no_od_link or no_adaptive)");
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_link_feat: return "no_link_feat";
    case Variant::no_od_link: return "no_od_link";
    case Variant::no_adaptive: return "no_adaptive";
  }
  return "full";
}

nlohmann::json ModelConfig::to_json() const {
  nlohmann::json j;
  j["node_feat_dim"] = node_feat_dim;
  j["edge_feat_dim"] = edge_feat_dim;
  j["embed_dim"] = embed_dim;
  j["attn_dim"] = attn_dim;
  j["heads"] = heads;
  j["svge_layers"] = svge_layers;
  j["srge_layers"] = srge_layers;
  j["srgd_layers"] = srgd_layers;
  j["loss_weight_utilization"] = loss_weight_utilization;
  j["variant"] = variant_name(variant);
  j["input_scale"] = input_scale;
  j["flow_scale"] = flow_scale;
  j["util_scale"] = util_scale;
  j["flow_offset"] = flow_offset;
  j["util_offset"] = util_offset;
  return j;
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.node_feat_dim = j.at("node_feat_dim").get<int>();
  c.edge_feat_dim = j.at("edge_feat_dim").get<int>();
  c.embed_dim = j.at("embed_dim").get<int>();
  c.attn_dim = j.at("attn_dim").get<int>();
  c.heads = j.at("heads").get<int>();
  c.svge_layers = j.at("svge_layers").get<int>();
  c.srge_layers = j.at("srge_layers").get<int>();
  c.srgd_layers = j.at("srgd_layers").get<int>();
  c.loss_weight_utilization = j.at("loss_weight_utilization").get<double>();
  c.variant = variant_from_string(j.at("variant").get<std::string>());
  c.input_scale = j.at("input_scale").get<std::array<double, 4>>();
  c.flow_scale = j.at("flow_scale").get<double>();
  c.util_scale = j.at("util_scale").get<double>();
  c.flow_offset = j.value("flow_offset", std::vector<double>{});
  c.util_offset = j.value("util_offset", std::vector<double>{});
  return c;
}

ModelInput make_model_input(const net::HeteroGraph& graph) {
  ModelInput in;
  in.num_nodes = graph.num_nodes;
  in.t_steps = graph.t_steps;
  const int n = graph.num_nodes;

  for (int t = 0; t < graph.t_steps; ++t) {
    std::vector<double> vals(static_cast<std::size_t>(n) * 4);
    for (int v = 0; v < n; ++v)
      for (int f = 0; f < 4; ++f) vals[static_cast<std::size_t>(v) * 4 + f] = graph.feature(t, v, f);
    in.node_feats.push_back(Tensor::from({n, 4}, std::move(vals)));
  }

  const int num_edges = static_cast<int>(graph.road_edges.size());
  const int p = 2;
  std::vector<double> ef(static_cast<std::size_t>(num_edges) * p);
  for (int e = 0; e < num_edges; ++e) {
    ef[static_cast<std::size_t>(e) * p] = graph.road_features[e][0];
    ef[static_cast<std::size_t>(e) * p + 1] = graph.road_features[e][1];
    in.road_from.push_back(graph.road_edges[e].first);
    in.road_to.push_back(graph.road_edges[e].second);
  }
  in.edge_feats = Tensor::from({num_edges, p}, std::move(ef));
  in.edge_feats_ones = Tensor::full({num_edges, p}, 1.0);

  std::vector<double> update(n, 0.0);
  for (const auto& [o, d] : graph.od_edges) {
    in.od_origin.push_back(o);
    in.od_dest.push_back(d);
    update[o] = 1.0;
  }
  std::vector<double> keep(n);
  for (int v = 0; v < n; ++v) keep[v] = 1.0 - update[v];
  in.od_update_mask = Tensor::from({n}, std::move(update));
  in.od_keep_mask = Tensor::from({n}, std::move(keep));

  // Road attention edges: reversed road edges (node attends over its
  // in-neighbors), then one self-loop per node.
  std::vector<double> weight;
  for (int e = 0; e < num_edges; ++e) {
    in.attn_query.push_back(graph.road_edges[e].second);
    in.attn_key.push_back(graph.road_edges[e].first);
    weight.push_back(graph.road_features[e][0] + graph.road_features[e][1]);
  }
  for (int v = 0; v < n; ++v) {
    in.attn_query.push_back(v);
    in.attn_key.push_back(v);
    weight.push_back(static_cast<double>(p));
  }
  const int attn_edges = static_cast<int>(weight.size());
  in.attn_weight = Tensor::from({attn_edges}, std::move(weight));
  in.attn_weight_ones = Tensor::full({attn_edges}, static_cast<double>(p));
  return in;
}

namespace {

Tensor xavier(rng::Xoshiro256pp& gen, int fan_in, int fan_out, ad::Shape shape) {
  const double a = std::sqrt(6.0 / (fan_in + fan_out));
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (double& v : t.values()) v = gen.uniform(-a, a);
  return t;
}

}  // namespace

Hstgsn::Hstgsn(ModelConfig config, std::uint64_t init_seed) : cfg_(config) {
  if (cfg_.embed_dim < 1 || cfg_.attn_dim < 1 || cfg_.heads < 1)
    throw validation_error("model dimensions must be at least 1");
  if (cfg_.svge_layers < 0 || cfg_.srge_layers < 0)
    throw validation_error("layer counts must be nonnegative");

  rng::Xoshiro256pp gen(init_seed);
  const int nd = cfg_.embed_dim, nq = cfg_.attn_dim, nv = cfg_.node_feat_dim,
            p = cfg_.edge_feat_dim;
  const bool adaptive = cfg_.variant != Variant::no_adaptive;

  auto reg = [&](const std::string& name, Tensor t) {
    params_.push_back({name, t});
    return t;
  };
  auto zeros = [&](const std::string& name, ad::Shape shape) {
    return reg(name, Tensor::zeros(std::move(shape), true));
  };
  auto ones = [&](const std::string& name, ad::Shape shape) {
    return reg(name, Tensor::full(std::move(shape), 1.0, true));
  };

  pre_w1_ = reg("pre.w1", xavier(gen, nv, nd, {nv, nd}));
  pre_b1_ = zeros("pre.b1", {nd});
  pre_w2_ = reg("pre.w2", xavier(gen, nd, nd, {nd, nd}));
  pre_b2_ = zeros("pre.b2", {nd});

  auto make_spatial = [&](const std::string& prefix, bool with_beta) {
    SpatialLayer layer;
    for (int h = 0; h < cfg_.heads; ++h) {
      const std::string hp = prefix + ".h" + std::to_string(h) + ".";
      HeadParams head;
      head.w_q = reg(hp + "wq", xavier(gen, nd, nq, {nd, nq}));
      head.w_k = reg(hp + "wk", xavier(gen, nd, nq, {nd, nq}));
      head.w_v = reg(hp + "wv", xavier(gen, nd, nq, {nd, nq}));
      if (adaptive) {
        head.w_att = reg(hp + "watt", xavier(gen, nq, nq, {nq, nq}));
        if (with_beta) head.beta = ones(hp + "beta", {1});
      }
      head.ff_w1 = reg(hp + "ff_w1", xavier(gen, nq, nq, {nq, nq}));
      head.ff_b1 = zeros(hp + "ff_b1", {nq});
      head.ff_w2 = reg(hp + "ff_w2", xavier(gen, nq, nq, {nq, nq}));
      head.ff_b2 = zeros(hp + "ff_b2", {nq});
      head.ln_g = ones(hp + "ln_g", {nq});
      head.ln_b = zeros(hp + "ln_b", {nq});
      layer.heads.push_back(head);
    }
    // Zero-initialized branch projection: every spatial layer starts as an
    // exact identity and the attention branch only enters as its gradients
    // cohere. Xavier here makes the stack untrainable at desk step budgets.
    layer.w_out = zeros(prefix + ".w_out", {cfg_.heads * nq, nd});
    layer.b_out = zeros(prefix + ".b_out", {nd});
    return layer;
  };

  if (cfg_.variant != Variant::no_od_link)
    for (int l = 0; l < cfg_.svge_layers; ++l)
      svge_.push_back(make_spatial("svge" + std::to_string(l), true));
  for (int l = 0; l < cfg_.srge_layers; ++l)
    srge_.push_back(make_spatial("srge" + std::to_string(l), false));
  for (int l = 0; l < cfg_.decoder_spatial_layers(); ++l)
    srgd_.push_back(make_spatial("srgd" + std::to_string(l), false));

  auto make_lstm = [&](const std::string& prefix) {
    LstmParams p;
    p.w_g = reg(prefix + ".wg", xavier(gen, 2 * nd, nd, {2 * nd, nd}));
    p.b_g = zeros(prefix + ".bg", {nd});
    p.w_i = reg(prefix + ".wi", xavier(gen, 2 * nd, nd, {2 * nd, nd}));
    p.b_i = zeros(prefix + ".bi", {nd});
    p.w_c = reg(prefix + ".wc", xavier(gen, 2 * nd, nd, {2 * nd, nd}));
    p.b_c = zeros(prefix + ".bc", {nd});
    p.w_o = reg(prefix + ".wo", xavier(gen, 2 * nd, nd, {2 * nd, nd}));
    p.b_o = zeros(prefix + ".bo", {nd});
    return p;
  };
  trge_ = make_lstm("trge");
  trgd_ = make_lstm("trgd");

  head_w1_ = reg("head.w1", xavier(gen, 2 * nd + p, nd, {2 * nd + p, nd}));
  head_b1_ = zeros("head.b1", {nd});
  head_w2_ = reg("head.w2", xavier(gen, nd, 2, {nd, 2}));
  head_b2_ = zeros("head.b2", {2});
}

long Hstgsn::param_count() const {
  long n = 0;
  for (const auto& p : params_) n += static_cast<long>(p.tensor.numel());
  return n;
}

Tensor Hstgsn::spatial_layer(Tape& tape, const SpatialLayer& layer, const Tensor& x,
                             const std::vector<int>& query, const std::vector<int>& key,
                             const Tensor* edge_weight, const Tensor* update_masks, int num_nodes,
                             const char* name, int step, ForwardTrace* trace,
                             const Tensor& fused_qkv) const {
  const int nq = cfg_.attn_dim;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(nq));
  // One wide projection for every head's Q, K and V.
  Tensor qkv = matmul(tape, x, fused_qkv);
  std::vector<Tensor> head_out;
  for (std::size_t h = 0; h < layer.heads.size(); ++h) {
    const HeadParams& hp = layer.heads[h];
    const int base = static_cast<int>(h) * 3 * nq;
    Tensor q = slice_cols(tape, qkv, base, base + nq);
    Tensor k = slice_cols(tape, qkv, base + nq, base + 2 * nq);
    Tensor v = slice_cols(tape, qkv, base + 2 * nq, base + 3 * nq);
    Tensor qw = hp.w_att.defined() ? matmul(tape, q, hp.w_att) : q;
    Tensor qe = gather_rows(tape, qw, query);
    Tensor ke = gather_rows(tape, k, key);
    Tensor logits = scalar_scale(tape, row_sum(tape, hadamard(tape, qe, ke)), inv_sqrt_d);
    if (edge_weight) logits = hadamard(tape, logits, *edge_weight);
    if (hp.beta.defined()) logits = mul_scalar_tensor(tape, logits, hp.beta);
    Tensor alpha = segment_softmax(tape, logits, query, num_nodes);
    if (trace)
      trace->attention.push_back(
          {name, step, static_cast<int>(h), query, alpha.values()});
    Tensor ve = gather_rows(tape, v, key);
    Tensor att = scatter_add(tape, scale_rows(tape, ve, alpha), query, num_nodes);
    // Pre-norm feed-forward with residual: the identity path keeps the
    // attention output's magnitude intact through stacked layers.
    Tensor normed = layer_norm(tape, att, hp.ln_g, hp.ln_b);
    Tensor ff = add_rowvec(tape, matmul(tape, tanh_op(tape, add_rowvec(tape, matmul(tape, normed, hp.ff_w1), hp.ff_b1)), hp.ff_w2), hp.ff_b2);
    head_out.push_back(add(tape, att, ff));
  }
  Tensor merged = head_out.size() == 1 ? head_out[0] : concat(tape, head_out, 1);
  // Projected multi-head update plus the residual to the layer input, as in
  // the heterogeneous graph transformer this attention follows.
  Tensor out = add(tape, add_rowvec(tape, matmul(tape, merged, layer.w_out), layer.b_out), x);
  if (update_masks) {
    // update_masks points at {update, keep}; keep rows pass through exactly.
    out = add(tape, scale_rows(tape, out, update_masks[0]),
              scale_rows(tape, x, update_masks[1]));
  }
  return out;
}

std::vector<Tensor> Hstgsn::lstm_forward(Tape& tape, const LstmParams& p,
                                         const std::vector<Tensor>& inputs) const {
  const int n = inputs.at(0).rows();
  const int nd = cfg_.embed_dim;
  if (inputs[0].cols() != nd)
    throw contract_error("LSTM input width " + std::to_string(inputs[0].cols()) +
                         " does not match hidden size " + std::to_string(nd));
  // All four gate projections in one matmul per step.
  Tensor fused = concat(tape, {p.w_g, p.w_i, p.w_c, p.w_o}, 1);
  Tensor h = Tensor::zeros({n, nd});
  Tensor c = Tensor::zeros({n, nd});
  std::vector<Tensor> out;
  for (const Tensor& e : inputs) {
    Tensor he = concat(tape, {h, e}, 1);
    Tensor gates = matmul(tape, he, fused);
    Tensor g = sigmoid_op(tape, add_rowvec(tape, slice_cols(tape, gates, 0, nd), p.b_g));
    Tensor i = sigmoid_op(tape, add_rowvec(tape, slice_cols(tape, gates, nd, 2 * nd), p.b_i));
    Tensor ct = tanh_op(tape, add_rowvec(tape, slice_cols(tape, gates, 2 * nd, 3 * nd), p.b_c));
    c = add(tape, hadamard(tape, g, c), hadamard(tape, i, ct));
    Tensor o = sigmoid_op(tape, add_rowvec(tape, slice_cols(tape, gates, 3 * nd, 4 * nd), p.b_o));
    h = hadamard(tape, o, tanh_op(tape, c));
    out.push_back(h);
  }
  return out;
}

EdgePrediction Hstgsn::forward(Tape& tape, const ModelInput& input, ForwardTrace* trace) const {
  const int n = input.num_nodes;
  const bool use_od = cfg_.variant != Variant::no_od_link && !input.od_origin.empty();
  const bool plain_features = cfg_.variant == Variant::no_link_feat;
  const Tensor& attn_weight = plain_features ? input.attn_weight_ones : input.attn_weight;
  const Tensor& head_edge_feats = plain_features ? input.edge_feats_ones : input.edge_feats;
  Tensor input_scale = Tensor::from(
      {cfg_.node_feat_dim},
      std::vector<double>(cfg_.input_scale.begin(), cfg_.input_scale.end()));
  const Tensor masks[2] = {input.od_update_mask, input.od_keep_mask};

  // Per-layer fused [w_q0 w_k0 w_v0 w_q1 ...] projections, shared by all steps.
  auto fuse_qkv = [&](const std::vector<SpatialLayer>& layers) {
    std::vector<Tensor> fused;
    for (const SpatialLayer& layer : layers) {
      std::vector<Tensor> parts;
      for (const HeadParams& hp : layer.heads) {
        parts.push_back(hp.w_q);
        parts.push_back(hp.w_k);
        parts.push_back(hp.w_v);
      }
      fused.push_back(concat(tape, parts, 1));
    }
    return fused;
  };
  const std::vector<Tensor> svge_qkv = use_od ? fuse_qkv(svge_) : std::vector<Tensor>{};
  const std::vector<Tensor> srge_qkv = fuse_qkv(srge_);
  const std::vector<Tensor> srgd_qkv = fuse_qkv(srgd_);

  std::vector<Tensor> encoded;
  for (int t = 0; t < input.t_steps; ++t) {
    Tensor x0 = mul_rowvec(tape, input.node_feats[t], input_scale);
    Tensor hidden = tanh_op(tape, add_rowvec(tape, matmul(tape, x0, pre_w1_), pre_b1_));
    Tensor x = add_rowvec(tape, matmul(tape, hidden, pre_w2_), pre_b2_);
    if (use_od)
      for (std::size_t l = 0; l < svge_.size(); ++l) {
        if (trace)
          trace->embeddings.push_back({"svge" + std::to_string(l) + ".in", t, x.values()});
        x = spatial_layer(tape, svge_[l], x, input.od_origin, input.od_dest, nullptr, masks, n,
                          "svge", t, trace, svge_qkv[l]);
        if (trace)
          trace->embeddings.push_back({"svge" + std::to_string(l) + ".out", t, x.values()});
      }
    for (std::size_t l = 0; l < srge_.size(); ++l)
      x = spatial_layer(tape, srge_[l], x, input.attn_query, input.attn_key, &attn_weight, nullptr,
                        n, "srge", t, trace, srge_qkv[l]);
    encoded.push_back(x);
  }

  std::vector<Tensor> p_seq = lstm_forward(tape, trge_, encoded);

  std::vector<Tensor> d_seq;
  for (int t = 0; t < input.t_steps; ++t) {
    Tensor x = p_seq[t];
    for (std::size_t l = 0; l < srgd_.size(); ++l)
      x = spatial_layer(tape, srgd_[l], x, input.attn_query, input.attn_key, &attn_weight, nullptr,
                        n, "srgd", t, trace, srgd_qkv[l]);
    d_seq.push_back(x);
  }
  std::vector<Tensor> z_seq = lstm_forward(tape, trgd_, d_seq);

  const int num_edges = static_cast<int>(input.road_from.size());
  const bool offsets = !cfg_.flow_offset.empty();
  if (offsets && (cfg_.flow_offset.size() != static_cast<std::size_t>(num_edges) * input.t_steps ||
                  cfg_.util_offset.size() != cfg_.flow_offset.size()))
    throw contract_error("output offsets do not match this graph's links and steps");
  auto offset_column = [&](const std::vector<double>& offset, int t) {
    std::vector<double> col(num_edges);
    for (int e = 0; e < num_edges; ++e)
      col[e] = offset[static_cast<std::size_t>(e) * input.t_steps + t];
    return Tensor::from({num_edges, 1}, std::move(col));
  };

  EdgePrediction pred;
  for (int t = 0; t < input.t_steps; ++t) {
    Tensor z1 = gather_rows(tape, z_seq[t], input.road_from);
    Tensor z2 = gather_rows(tape, z_seq[t], input.road_to);
    Tensor s = concat(tape, {z1, z2, head_edge_feats}, 1);
    Tensor hidden = tanh_op(tape, add_rowvec(tape, matmul(tape, s, head_w1_), head_b1_));
    Tensor out2 = add_rowvec(tape, matmul(tape, hidden, head_w2_), head_b2_);
    Tensor f = scalar_scale(tape, slice_cols(tape, out2, 0, 1), cfg_.flow_scale);
    Tensor u = scalar_scale(tape, slice_cols(tape, out2, 1, 2), cfg_.util_scale);
    if (offsets) {
      f = add(tape, f, offset_column(cfg_.flow_offset, t));
      u = add(tape, u, offset_column(cfg_.util_offset, t));
    }
    pred.flow_steps.push_back(f);
    pred.util_steps.push_back(u);
  }
  return pred;
}

Tensor Hstgsn::loss(Tape& tape, const EdgePrediction& pred, const dta::FlowRecord& truth) const {
  const int t_steps = static_cast<int>(pred.flow_steps.size());
  if (truth.num_steps != t_steps)
    throw contract_error("truth has " + std::to_string(truth.num_steps) + " steps, prediction has " +
                         std::to_string(t_steps));
  const int e = pred.flow_steps[0].rows();
  if (truth.num_links != e)
    throw contract_error("truth has " + std::to_string(truth.num_links) + " links, prediction has " +
                         std::to_string(e));

  Tensor total;
  for (int t = 0; t < t_steps; ++t) {
    std::vector<double> f(e), u(e);
    for (int l = 0; l < e; ++l) {
      f[l] = truth.flow_at(l, t);
      u[l] = truth.util_at(l, t);
    }
    Tensor truth_f = Tensor::from({e, 1}, std::move(f));
    Tensor truth_u = Tensor::from({e, 1}, std::move(u));
    Tensor step = l1_mean(tape, pred.flow_steps[t], truth_f);
    if (cfg_.loss_weight_utilization != 0.0)
      step = add(tape, step,
                 scalar_scale(tape, l1_mean(tape, pred.util_steps[t], truth_u),
                              cfg_.loss_weight_utilization));
    total = total.defined() ? add(tape, total, step) : step;
  }
  return scalar_scale(tape, total, 1.0 / t_steps);
}

nlohmann::json Hstgsn::describe() const {
  nlohmann::json j;
  j["config"] = cfg_.to_json();
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& p : params_) {
    nlohmann::json e;
    e["name"] = p.name;
    e["shape"] = p.tensor.shape();
    e["count"] = p.tensor.numel();
    layers.push_back(e);
  }
  j["parameters"] = layers;
  j["total_parameters"] = param_count();
  return j;
}

void Hstgsn::save(const std::string& stem, long step) const {
  nlohmann::json extra;
  extra["model"] = cfg_.to_json();
  ad::save_checkpoint(stem, params_, step, extra);
}

Hstgsn Hstgsn::load(const std::string& stem) {
  ad::Checkpoint ck = ad::load_checkpoint(stem);
  ModelConfig cfg = ModelConfig::from_json(ck.extra.at("model"));
  Hstgsn model(cfg, 0);
  if (ck.params.size() != model.params_.size())
    throw integrity_error("checkpoint has " + std::to_string(ck.params.size()) +
                          " tensors, model expects " + std::to_string(model.params_.size()));
  for (std::size_t i = 0; i < ck.params.size(); ++i) {
    if (ck.params[i].name != model.params_[i].name)
      throw integrity_error("checkpoint tensor '" + ck.params[i].name + "' does not match '" +
                            model.params_[i].name + "'");
    if (ck.params[i].tensor.shape() != model.params_[i].tensor.shape())
      throw integrity_error("checkpoint tensor '" + ck.params[i].name + "' has the wrong shape");
    model.params_[i].tensor.values() = ck.params[i].tensor.values();
  }
  return model;
}

std::vector<std::vector<double>> Hstgsn::snapshot_values() const {
  std::vector<std::vector<double>> out;
  for (const auto& p : params_) out.push_back(p.tensor.values());
  return out;
}

void Hstgsn::restore_values(const std::vector<std::vector<double>>& values) {
  if (values.size() != params_.size()) throw contract_error("snapshot size mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) params_[i].tensor.values() = values[i];
}

}  // namespace odflow::model
