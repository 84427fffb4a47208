#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <map>

#include "odflow/hstgsn.hpp"
#include "odflow/rng.hpp"
#include "support.hpp"

using namespace odflow;
using model::Hstgsn;
using model::ModelConfig;
using model::ModelInput;
using model::Variant;

namespace {

ModelConfig tiny_config(Variant v = Variant::full) {
  ModelConfig c;
  c.embed_dim = 6;
  c.attn_dim = 3;
  c.heads = 2;
  c.svge_layers = 1;
  c.srge_layers = 1;
  c.srgd_layers = 1;
  c.variant = v;
  return c;
}

// 4 nodes, 5 road edges, 2 OD edges, T steps of pseudo-random features.
net::HeteroGraph toy_graph(int t_steps, std::uint64_t seed = 77) {
  net::HeteroGraph g;
  g.num_nodes = 4;
  g.t_steps = t_steps;
  g.road_edges = {{0, 1}, {1, 2}, {2, 3}, {0, 2}, {3, 0}};
  g.road_features = {{0.2, 0.9}, {0.5, 0.4}, {1.0, 0.0}, {0.3, 0.7}, {0.8, 0.6}};
  g.od_edges = {{0, 3}, {2, 1}};
  rng::Xoshiro256pp gen(seed);
  g.node_features.resize(static_cast<std::size_t>(t_steps) * 4 * 4);
  for (double& v : g.node_features) v = gen.uniform(0.0, 1.0);
  return g;
}

dta::FlowRecord toy_truth(int links, int steps, std::uint64_t seed = 5) {
  dta::FlowRecord r;
  r.interval_minutes = 5;
  r.num_links = links;
  r.num_steps = steps;
  r.flow.resize(static_cast<std::size_t>(links) * steps);
  r.utilization.resize(r.flow.size());
  rng::Xoshiro256pp gen(seed);
  for (double& v : r.flow) v = gen.uniform(0, 10);
  for (double& v : r.utilization) v = gen.uniform(0, 1);
  return r;
}

void set_all_params(Hstgsn& m, double value) {
  for (auto& p : m.parameters())
    for (double& v : p.tensor.values()) v = value;
}

using Matrix = std::vector<std::vector<double>>;

struct ParamView {
  std::map<std::string, std::pair<ad::Shape, std::vector<double>>> by_name;

  explicit ParamView(const Hstgsn& m) {
    for (const auto& p : m.parameters())
      by_name[p.name] = {p.tensor.shape(), p.tensor.values()};
  }
  bool has(const std::string& name) const { return by_name.count(name) > 0; }
  Matrix mat(const std::string& name) const {
    const auto& [shape, vals] = by_name.at(name);
    REQUIRE(shape.size() == 2);
    Matrix m(shape[0], std::vector<double>(shape[1]));
    for (int i = 0; i < shape[0]; ++i)
      for (int j = 0; j < shape[1]; ++j) m[i][j] = vals[static_cast<std::size_t>(i) * shape[1] + j];
    return m;
  }
  std::vector<double> vec(const std::string& name) const { return by_name.at(name).second; }
};

Matrix mat_mul(const Matrix& a, const Matrix& b) {
  Matrix c(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < b.size(); ++k)
      for (std::size_t j = 0; j < b[0].size(); ++j) c[i][j] += a[i][k] * b[k][j];
  return c;
}

Matrix affine(const Matrix& x, const Matrix& w, const std::vector<double>& b) {
  Matrix y = mat_mul(x, w);
  for (auto& row : y)
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += b[j];
  return y;
}

Matrix tanh_m(Matrix x) {
  for (auto& row : x)
    for (double& v : row) v = std::tanh(v);
  return x;
}

Matrix sigmoid_m(Matrix x) {
  for (auto& row : x)
    for (double& v : row) v = 1.0 / (1.0 + std::exp(-v));
  return x;
}

// Reference forward pass: dense masked attention, per-node scalar loops, no
// tape. Mirrors the published equations rather than the kernel code.
struct DenseReference {
  const ModelConfig& cfg;
  const ParamView& pv;
  const net::HeteroGraph& g;

  Matrix spatial(const std::string& prefix, const Matrix& x,
                 const std::vector<std::pair<int, int>>& edges,
                 const std::vector<double>* edge_weight, bool od_semantics) const {
    const int n = static_cast<int>(x.size());
    const int nq = cfg.attn_dim;
    Matrix merged(n, std::vector<double>(0));
    for (int h = 0; h < cfg.heads; ++h) {
      const std::string hp = prefix + ".h" + std::to_string(h) + ".";
      Matrix q = mat_mul(x, pv.mat(hp + "wq"));
      Matrix k = mat_mul(x, pv.mat(hp + "wk"));
      Matrix v = mat_mul(x, pv.mat(hp + "wv"));
      Matrix qa = pv.has(hp + "watt") ? mat_mul(q, pv.mat(hp + "watt")) : q;
      const double beta = pv.has(hp + "beta") ? pv.vec(hp + "beta")[0] : 1.0;

      // Dense per-query logits restricted to the typed adjacency.
      Matrix att(n, std::vector<double>(nq, 0.0));
      for (int node = 0; node < n; ++node) {
        std::vector<std::pair<int, double>> incident;  // (key node, logit)
        for (std::size_t e = 0; e < edges.size(); ++e) {
          if (edges[e].first != node) continue;
          double logit = 0.0;
          for (int c = 0; c < nq; ++c) logit += qa[node][c] * k[edges[e].second][c];
          logit /= std::sqrt(static_cast<double>(nq));
          if (edge_weight) logit *= (*edge_weight)[e];
          logit *= beta;
          incident.push_back({edges[e].second, logit});
        }
        if (incident.empty()) continue;
        double mx = incident[0].second;
        for (const auto& [kk, l] : incident) mx = std::max(mx, l);
        double sum = 0.0;
        for (auto& [kk, l] : incident) {
          l = std::exp(l - mx);
          sum += l;
        }
        for (const auto& [kk, l] : incident)
          for (int c = 0; c < nq; ++c) att[node][c] += l / sum * v[kk][c];
      }

      // Pre-norm feed-forward with residual.
      const auto ln_g = pv.vec(hp + "ln_g");
      const auto ln_b = pv.vec(hp + "ln_b");
      Matrix normed = att;
      for (int node = 0; node < n; ++node) {
        double mu = 0.0;
        for (double vv : att[node]) mu += vv;
        mu /= nq;
        double var = 0.0;
        for (double vv : att[node]) var += (vv - mu) * (vv - mu);
        var /= nq;
        for (int c = 0; c < nq; ++c)
          normed[node][c] = (att[node][c] - mu) / std::sqrt(var + 1e-5) * ln_g[c] + ln_b[c];
      }
      Matrix mlp = affine(tanh_m(affine(normed, pv.mat(hp + "ff_w1"), pv.vec(hp + "ff_b1"))),
                          pv.mat(hp + "ff_w2"), pv.vec(hp + "ff_b2"));
      for (int node = 0; node < n; ++node)
        for (int c = 0; c < nq; ++c) att[node][c] += mlp[node][c];
      for (int node = 0; node < n; ++node)
        merged[node].insert(merged[node].end(), att[node].begin(), att[node].end());
    }
    Matrix out = affine(merged, pv.mat(prefix + ".w_out"), pv.vec(prefix + ".b_out"));
    for (int node = 0; node < n; ++node)
      for (std::size_t j = 0; j < out[node].size(); ++j) out[node][j] += x[node][j];
    if (od_semantics) {
      for (int node = 0; node < n; ++node) {
        bool origin = false;
        for (const auto& [o, d] : edges) origin = origin || o == node;
        if (!origin) out[node] = x[node];
      }
    }
    return out;
  }

  std::vector<Matrix> lstm(const std::string& prefix, const std::vector<Matrix>& inputs) const {
    const int n = static_cast<int>(inputs[0].size());
    const int nd = cfg.embed_dim;
    Matrix h(n, std::vector<double>(nd, 0.0)), c = h;
    std::vector<Matrix> out;
    for (const Matrix& e : inputs) {
      Matrix he(n, std::vector<double>(2 * nd));
      for (int node = 0; node < n; ++node) {
        for (int j = 0; j < nd; ++j) {
          he[node][j] = h[node][j];
          he[node][nd + j] = e[node][j];
        }
      }
      Matrix gf = sigmoid_m(affine(he, pv.mat(prefix + ".wg"), pv.vec(prefix + ".bg")));
      Matrix gi = sigmoid_m(affine(he, pv.mat(prefix + ".wi"), pv.vec(prefix + ".bi")));
      Matrix ct = tanh_m(affine(he, pv.mat(prefix + ".wc"), pv.vec(prefix + ".bc")));
      Matrix go = sigmoid_m(affine(he, pv.mat(prefix + ".wo"), pv.vec(prefix + ".bo")));
      for (int node = 0; node < n; ++node)
        for (int j = 0; j < nd; ++j) {
          c[node][j] = gf[node][j] * c[node][j] + gi[node][j] * ct[node][j];
          h[node][j] = go[node][j] * std::tanh(c[node][j]);
        }
      out.push_back(h);
    }
    return out;
  }

  // Returns per-step [E x 2] predictions (flow, utilization).
  std::vector<Matrix> run() const {
    const int n = g.num_nodes;
    const bool plain = cfg.variant == Variant::no_link_feat;

    std::vector<std::pair<int, int>> road_attn;
    std::vector<double> weights;
    for (std::size_t e = 0; e < g.road_edges.size(); ++e) {
      road_attn.push_back({g.road_edges[e].second, g.road_edges[e].first});
      weights.push_back(plain ? 2.0 : g.road_features[e][0] + g.road_features[e][1]);
    }
    for (int v = 0; v < n; ++v) {
      road_attn.push_back({v, v});
      weights.push_back(2.0);
    }

    std::vector<Matrix> encoded;
    for (int t = 0; t < g.t_steps; ++t) {
      Matrix x0(n, std::vector<double>(4));
      for (int v = 0; v < n; ++v)
        for (int f = 0; f < 4; ++f) x0[v][f] = g.feature(t, v, f) * cfg.input_scale[f];
      Matrix x = affine(tanh_m(affine(x0, pv.mat("pre.w1"), pv.vec("pre.b1"))), pv.mat("pre.w2"),
                        pv.vec("pre.b2"));
      if (cfg.variant != Variant::no_od_link && !g.od_edges.empty())
        for (int l = 0; l < cfg.svge_layers; ++l)
          x = spatial("svge" + std::to_string(l), x, g.od_edges, nullptr, true);
      for (int l = 0; l < cfg.srge_layers; ++l)
        x = spatial("srge" + std::to_string(l), x, road_attn, &weights, false);
      encoded.push_back(x);
    }
    std::vector<Matrix> p_seq = lstm("trge", encoded);
    std::vector<Matrix> d_seq;
    for (int t = 0; t < g.t_steps; ++t) {
      Matrix x = p_seq[t];
      for (int l = 0; l < cfg.decoder_spatial_layers(); ++l)
        x = spatial("srgd" + std::to_string(l), x, road_attn, &weights, false);
      d_seq.push_back(x);
    }
    std::vector<Matrix> z_seq = lstm("trgd", d_seq);

    std::vector<Matrix> preds;
    for (int t = 0; t < g.t_steps; ++t) {
      Matrix s(g.road_edges.size(), std::vector<double>(2 * cfg.embed_dim + 2));
      for (std::size_t e = 0; e < g.road_edges.size(); ++e) {
        const auto& [a, b] = g.road_edges[e];
        for (int j = 0; j < cfg.embed_dim; ++j) {
          s[e][j] = z_seq[t][a][j];
          s[e][cfg.embed_dim + j] = z_seq[t][b][j];
        }
        s[e][2 * cfg.embed_dim] = plain ? 1.0 : g.road_features[e][0];
        s[e][2 * cfg.embed_dim + 1] = plain ? 1.0 : g.road_features[e][1];
      }
      Matrix out = affine(tanh_m(affine(s, pv.mat("head.w1"), pv.vec("head.b1"))),
                          pv.mat("head.w2"), pv.vec("head.b2"));
      for (auto& row : out) {
        row[0] *= cfg.flow_scale;
        row[1] *= cfg.util_scale;
      }
      preds.push_back(out);
    }
    return preds;
  }
};

long formula_param_count(const ModelConfig& c) {
  const long nd = c.embed_dim, nq = c.attn_dim, nh = c.heads, nv = c.node_feat_dim,
             p = c.edge_feat_dim;
  const bool adaptive = c.variant != Variant::no_adaptive;
  const long head_common = 3 * nd * nq + 2 * (nq * nq + nq) + 2 * nq;
  const long head_svge = head_common + (adaptive ? nq * nq + 1 : 0);
  const long head_srge = head_common + (adaptive ? nq * nq : 0);
  const long proj = nh * nq * nd + nd;
  const long svge_layer = nh * head_svge + proj;
  const long srge_layer = nh * head_srge + proj;
  const long pre = nv * nd + nd + nd * nd + nd;
  const long lstm = 4 * (2 * nd * nd + nd);
  const long head = (2 * nd + p) * nd + nd + nd * 2 + 2;
  const long svge_total = c.variant == Variant::no_od_link ? 0 : c.svge_layers * svge_layer;
  return pre + svge_total + (c.srge_layers + c.decoder_spatial_layers()) * srge_layer + 2 * lstm +
         head;
}

}  // namespace

TEST_CASE("zero parameters give zero predictions and the trivial LSTM fixed point") {
  Hstgsn m(tiny_config(), 1);
  set_all_params(m, 0.0);
  auto input = model::make_model_input(toy_graph(3));
  ad::Tape tape;
  auto pred = m.forward(tape, input);
  for (int t = 0; t < 3; ++t) {
    for (double v : pred.flow_steps[t].values()) CHECK(v == doctest::Approx(0.0));
    for (double v : pred.util_steps[t].values()) CHECK(v == doctest::Approx(0.0));
  }
}

TEST_CASE("full forward matches the dense reference implementation") {
  for (Variant v : {Variant::full, Variant::no_link_feat, Variant::no_od_link,
                    Variant::no_adaptive}) {
    CAPTURE(model::variant_name(v));
    ModelConfig cfg = tiny_config(v);
    cfg.input_scale = {0.7, 1.3, 1.0, 0.5};
    cfg.flow_scale = 11.0;
    cfg.util_scale = 1.7;
    Hstgsn m(cfg, 99);
    net::HeteroGraph g = toy_graph(3);
    auto input = model::make_model_input(g);
    ad::Tape tape;
    auto pred = m.forward(tape, input);

    ParamView pv(m);
    DenseReference ref{cfg, pv, g};
    auto want = ref.run();
    for (int t = 0; t < 3; ++t)
      for (std::size_t e = 0; e < g.road_edges.size(); ++e) {
        CHECK(pred.flow_steps[t].values()[e] == doctest::Approx(want[t][e][0]).epsilon(1e-9));
        CHECK(pred.util_steps[t].values()[e] == doctest::Approx(want[t][e][1]).epsilon(1e-9));
      }
  }
}

TEST_CASE("a graph with zero OD edges makes the OD stack an identity") {
  ModelConfig cfg = tiny_config();
  Hstgsn m(cfg, 7);
  net::HeteroGraph g = toy_graph(2);
  g.od_edges.clear();
  auto input = model::make_model_input(g);
  ad::Tape tape;
  model::ForwardTrace trace;
  auto pred = m.forward(tape, input, &trace);
  // No OD attention was recorded and no svge embeddings were captured.
  for (const auto& a : trace.attention) CHECK(a.layer != "svge");
  CHECK(trace.embeddings.empty());
  (void)pred;
}

TEST_CASE("OD pass-through: non-origin nodes keep their embeddings exactly") {
  Hstgsn m(tiny_config(), 3);
  net::HeteroGraph g = toy_graph(2);
  auto input = model::make_model_input(g);
  ad::Tape tape;
  model::ForwardTrace trace;
  m.forward(tape, input, &trace);
  REQUIRE(!trace.embeddings.empty());
  const int nd = m.config().embed_dim;
  // od edges originate at nodes 0 and 2; nodes 1 and 3 must pass through.
  for (std::size_t i = 0; i + 1 < trace.embeddings.size(); i += 2) {
    const auto& before = trace.embeddings[i];
    const auto& after = trace.embeddings[i + 1];
    REQUIRE(before.tag.ends_with(".in"));
    REQUIRE(after.tag.ends_with(".out"));
    for (int node : {1, 3})
      for (int j = 0; j < nd; ++j)
        CHECK(after.values[node * nd + j] == before.values[node * nd + j]);
  }
}

TEST_CASE("attention weights sum to 1 per query node") {
  Hstgsn m(tiny_config(), 13);
  auto input = model::make_model_input(toy_graph(2));
  ad::Tape tape;
  model::ForwardTrace trace;
  m.forward(tape, input, &trace);
  REQUIRE(!trace.attention.empty());
  for (const auto& att : trace.attention) {
    std::map<int, double> sums;
    for (std::size_t e = 0; e < att.segment.size(); ++e) sums[att.segment[e]] += att.weights[e];
    for (const auto& [seg, sum] : sums) CHECK(std::abs(sum - 1.0) < 1e-9);
  }
}

TEST_CASE("node relabeling equivariance is exact") {
  ModelConfig cfg = tiny_config();
  Hstgsn m(cfg, 21);
  net::HeteroGraph g = toy_graph(3);
  const std::vector<int> perm = {2, 0, 3, 1};  // new index of each old node

  net::HeteroGraph gp;
  gp.num_nodes = 4;
  gp.t_steps = g.t_steps;
  for (const auto& [a, b] : g.road_edges) gp.road_edges.push_back({perm[a], perm[b]});
  gp.road_features = g.road_features;
  for (const auto& [a, b] : g.od_edges) gp.od_edges.push_back({perm[a], perm[b]});
  gp.node_features.resize(g.node_features.size());
  for (int t = 0; t < g.t_steps; ++t)
    for (int v = 0; v < 4; ++v)
      for (int f = 0; f < 4; ++f)
        gp.node_features[(static_cast<std::size_t>(t) * 4 + perm[v]) * 4 + f] = g.feature(t, v, f);

  ad::Tape ta, tb;
  auto pa = m.forward(ta, model::make_model_input(g));
  auto pb = m.forward(tb, model::make_model_input(gp));
  for (int t = 0; t < g.t_steps; ++t) {
    CHECK(pa.flow_steps[t].values() == pb.flow_steps[t].values());
    CHECK(pa.util_steps[t].values() == pb.util_steps[t].values());
  }
}

TEST_CASE("permuting edge order permutes predictions identically") {
  ModelConfig cfg = tiny_config();
  Hstgsn m(cfg, 31);
  net::HeteroGraph g = toy_graph(2);
  net::HeteroGraph ge = g;
  const std::vector<int> eperm = {3, 1, 4, 0, 2};  // position of old edge e in the new list
  for (std::size_t e = 0; e < g.road_edges.size(); ++e) {
    ge.road_edges[eperm[e]] = g.road_edges[e];
    ge.road_features[eperm[e]] = g.road_features[e];
  }
  ad::Tape ta, tb;
  auto pa = m.forward(ta, model::make_model_input(g));
  auto pb = m.forward(tb, model::make_model_input(ge));
  for (int t = 0; t < g.t_steps; ++t)
    for (std::size_t e = 0; e < g.road_edges.size(); ++e)
      CHECK(pa.flow_steps[t].values()[e] ==
            doctest::Approx(pb.flow_steps[t].values()[eperm[e]]).epsilon(1e-12));
}

TEST_CASE("loss is the mean L1 over links and steps") {
  ModelConfig cfg = tiny_config();
  Hstgsn m(cfg, 11);
  net::HeteroGraph g = toy_graph(3);
  auto input = model::make_model_input(g);

  SUBCASE("prediction equal to truth gives zero") {
    ad::Tape tape;
    auto pred = m.forward(tape, input);
    dta::FlowRecord truth;
    truth.interval_minutes = 5;
    truth.num_links = 5;
    truth.num_steps = 3;
    truth.flow.resize(15);
    truth.utilization.resize(15);
    for (int l = 0; l < 5; ++l)
      for (int t = 0; t < 3; ++t) {
        truth.flow[static_cast<std::size_t>(l) * 3 + t] = pred.flow_steps[t].values()[l];
        truth.utilization[static_cast<std::size_t>(l) * 3 + t] = pred.util_steps[t].values()[l];
      }
    CHECK(m.loss(tape, pred, truth).item() == doctest::Approx(0.0));
  }

  SUBCASE("constant flow offset with zero utilization weight gives the offset") {
    ModelConfig cfg0 = cfg;
    cfg0.loss_weight_utilization = 0.0;
    Hstgsn m0(cfg0, 11);
    ad::Tape tape;
    auto pred = m0.forward(tape, input);
    dta::FlowRecord truth;
    truth.interval_minutes = 5;
    truth.num_links = 5;
    truth.num_steps = 3;
    truth.flow.resize(15);
    truth.utilization.assign(15, 0.0);
    for (int l = 0; l < 5; ++l)
      for (int t = 0; t < 3; ++t)
        truth.flow[static_cast<std::size_t>(l) * 3 + t] = pred.flow_steps[t].values()[l] + 5.0;
    CHECK(m0.loss(tape, pred, truth).item() == doctest::Approx(5.0).epsilon(1e-9));
  }

  SUBCASE("random case matches a naive double loop") {
    ad::Tape tape;
    auto pred = m.forward(tape, input);
    dta::FlowRecord truth = toy_truth(5, 3);
    double want = 0.0;
    for (int t = 0; t < 3; ++t)
      for (int l = 0; l < 5; ++l)
        want += std::abs(pred.flow_steps[t].values()[l] - truth.flow_at(l, t)) +
                cfg.loss_weight_utilization *
                    std::abs(pred.util_steps[t].values()[l] - truth.util_at(l, t));
    want /= 15.0;
    CHECK(m.loss(tape, pred, truth).item() == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("end-to-end gradients pass finite differences on the toy instance") {
  ad::set_debug_checks(true);
  ModelConfig cfg = tiny_config();
  cfg.flow_scale = 3.0;
  Hstgsn m(cfg, 2027);
  net::HeteroGraph g = toy_graph(3);
  auto input = model::make_model_input(g);
  dta::FlowRecord truth = toy_truth(5, 3);

  auto loss_value = [&]() {
    ad::Tape tape;
    auto pred = m.forward(tape, input);
    return m.loss(tape, pred, truth).item();
  };
  {
    ad::Tape tape;
    auto pred = m.forward(tape, input);
    ad::Tensor loss = m.loss(tape, pred, truth);
    ad::zero_grad(m.parameters());
    tape.backward(loss);
  }
  CHECK(testsupport::max_grad_rel_error(m.parameters(), loss_value) < 1e-4);
  ad::set_debug_checks(false);
}

TEST_CASE("variants") {
  SUBCASE("no_od_link ignores OD edges entirely") {
    ModelConfig cfg = tiny_config(Variant::no_od_link);
    Hstgsn m(cfg, 5);
    net::HeteroGraph g = toy_graph(2);
    net::HeteroGraph g_no_od = g;
    g_no_od.od_edges.clear();
    ad::Tape ta, tb;
    auto pa = m.forward(ta, model::make_model_input(g));
    auto pb = m.forward(tb, model::make_model_input(g_no_od));
    for (int t = 0; t < 2; ++t) CHECK(pa.flow_steps[t].values() == pb.flow_steps[t].values());
  }

  SUBCASE("no_link_feat equals running with all link features set to 1") {
    ModelConfig cfg = tiny_config(Variant::no_link_feat);
    Hstgsn m(cfg, 5);
    net::HeteroGraph g = toy_graph(2);
    net::HeteroGraph g_ones = g;
    for (auto& f : g_ones.road_features) f = {1.0, 1.0};

    ModelConfig cfg_full = tiny_config(Variant::full);
    Hstgsn m_full(cfg_full, 5);
    // Identical parameters: same seed, same registration order.
    ad::Tape ta, tb;
    auto pa = m.forward(ta, model::make_model_input(g));
    auto pb = m_full.forward(tb, model::make_model_input(g_ones));
    for (int t = 0; t < 2; ++t)
      for (int e = 0; e < 5; ++e)
        CHECK(pa.flow_steps[t].values()[e] ==
              doctest::Approx(pb.flow_steps[t].values()[e]).epsilon(1e-12));
  }

  SUBCASE("unknown variant names are rejected") {
    CHECK_THROWS_AS(model::variant_from_string("bogus"), validation_error);
  }

  SUBCASE("no_adaptive removes exactly the attention tensors from the count") {
    ModelConfig cfg = tiny_config(Variant::full);
    ModelConfig cfg_na = tiny_config(Variant::no_adaptive);
    Hstgsn full(cfg, 1), na(cfg_na, 1);
    const long nq = cfg.attn_dim;
    const long frozen = cfg.heads * (nq * nq + 1) * cfg.svge_layers +
                        cfg.heads * nq * nq * (cfg.srge_layers + cfg.decoder_spatial_layers());
    CHECK(full.param_count() - na.param_count() == frozen);
  }
}

TEST_CASE("published parameter-count formula matches the runtime audit") {
  std::vector<ModelConfig> configs;
  configs.push_back(tiny_config());
  {
    ModelConfig c;
    c.embed_dim = 8;
    c.attn_dim = 4;
    c.heads = 3;
    c.svge_layers = 2;
    c.srge_layers = 2;
    c.srgd_layers = 2;
    configs.push_back(c);
  }
  {
    ModelConfig c = tiny_config();
    c.srgd_layers = 0;
    configs.push_back(c);
  }
  for (ModelConfig base : configs)
    for (Variant v : {Variant::full, Variant::no_link_feat, Variant::no_od_link,
                      Variant::no_adaptive}) {
      ModelConfig c = base;
      c.variant = v;
      Hstgsn m(c, 1);
      CAPTURE(model::variant_name(v));
      CHECK(m.param_count() == formula_param_count(c));
    }
}

TEST_CASE("depth-0 spatial decoder records no srgd attention") {
  ModelConfig cfg = tiny_config();
  cfg.srgd_layers = 0;
  Hstgsn m(cfg, 9);
  auto input = model::make_model_input(toy_graph(2));
  ad::Tape tape;
  model::ForwardTrace trace;
  m.forward(tape, input, &trace);
  for (const auto& a : trace.attention) CHECK(a.layer != "srgd");
}

TEST_CASE("describe reports every tensor and the audit total") {
  Hstgsn m(tiny_config(), 4);
  auto j = m.describe();
  CHECK(j.at("total_parameters").get<long>() == m.param_count());
  CHECK(j.at("parameters").size() == m.parameters().size());
}

TEST_CASE("checkpoint save/load restores the model bit-exactly") {
  ModelConfig cfg = tiny_config();
  cfg.flow_scale = 123.0;
  Hstgsn m(cfg, 55);
  auto dir = std::filesystem::temp_directory_path() / "odflow_model_ck";
  std::filesystem::create_directories(dir);
  m.save((dir / "model").string(), 17);
  Hstgsn back = Hstgsn::load((dir / "model").string());
  CHECK(back.config().flow_scale == 123.0);
  REQUIRE(back.parameters().size() == m.parameters().size());
  for (std::size_t i = 0; i < m.parameters().size(); ++i)
    CHECK(back.parameters()[i].tensor.values() == m.parameters()[i].tensor.values());
  std::filesystem::remove_all(dir);
}
