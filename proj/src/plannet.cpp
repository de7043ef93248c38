#include "ndt/plannet.hpp"

#include <algorithm>
#include <stdexcept>

#include "ndt/errors.hpp"
#include "ndt/rng.hpp"

namespace ndt {

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kPlanNet: return "plan_net";
    case Variant::kLinkPathOnly: return "link_path_only";
    case Variant::kGenericGnn: return "generic_gnn";
  }
  return "unknown";
}

Variant variant_from_name(const std::string& name) {
  if (name == "plan_net") return Variant::kPlanNet;
  if (name == "link_path_only") return Variant::kLinkPathOnly;
  if (name == "generic_gnn") return Variant::kGenericGnn;
  throw std::invalid_argument("unknown model variant: " + name);
}

void ModelConfig::validate() const {
  if (iterations < 1) throw std::invalid_argument("model: iterations must be >= 1");
  if (path_dim < 1 || link_dim < 1 || node_dim < 1)
    throw std::invalid_argument("model: embedding dims must be >= 1");
  for (int h : link_mlp_hidden) {
    if (h < 1) throw std::invalid_argument("model: link mlp hidden dims must be >= 1");
  }
  for (int h : readout_hidden) {
    if (h < 1) throw std::invalid_argument("model: readout hidden dims must be >= 1");
  }
}

Tensor build_gnn_features(const Scenario& scenario) {
  const int n = scenario.graph.node_count();
  const int p = static_cast<int>(scenario.paths.size());
  Tensor feats = Tensor::zeros({n, 2 * p});
  for (int k = 0; k < p; ++k) {
    const auto& path = scenario.paths[k];
    std::vector<uint8_t> on_path(n, 0);
    for (int li : path.links) {
      on_path[scenario.graph.links[li].src] = 1;
      on_path[scenario.graph.links[li].dst] = 1;
    }
    for (int j = 0; j < n; ++j) {
      if (!on_path[j]) continue;
      feats(j, 2 * k) = scenario.traffic.rows[k].tau_on_s;
      feats(j, 2 * k + 1) = scenario.traffic.rows[k].tau_off_s;
    }
  }
  return feats;
}

ScenarioPlan build_plan(const Scenario& scenario, const FeatureScales& scales) {
  if (scenario.traffic.rows.size() != scenario.paths.size())
    throw std::invalid_argument("scenario: traffic rows must match path count");
  for (const auto& p : scenario.paths) validate_path(scenario.graph, p);

  ScenarioPlan plan;
  plan.num_paths = static_cast<int>(scenario.paths.size());
  plan.num_links = scenario.graph.link_count();
  plan.num_nodes = scenario.graph.node_count();

  for (const auto& row : scenario.traffic.rows) {
    plan.path_tau.push_back({row.tau_on_s / scales.tau, row.tau_off_s / scales.tau});
  }
  for (const auto& l : scenario.graph.links) {
    plan.link_cap.push_back(l.capacity_kbps / scales.capacity);
    plan.link_src.push_back(l.src);
  }
  for (int d : scenario.graph.out_degrees()) {
    plan.node_deg.push_back(d / scales.degree);
  }

  for (const auto& p : scenario.paths) {
    plan.max_len = std::max(plan.max_len, static_cast<int>(p.links.size()));
  }
  plan.step_paths.resize(plan.max_len);
  plan.step_links.resize(plan.max_len);
  for (int s = 0; s < plan.max_len; ++s) {
    for (int p = 0; p < plan.num_paths; ++p) {
      const auto& links = scenario.paths[p].links;
      if (s < static_cast<int>(links.size())) {
        plan.step_paths[s].push_back(p);
        plan.step_links[s].push_back(links[s]);
        plan.msg_path.push_back(p);
        plan.msg_pos.push_back(s);
        plan.msg_link.push_back(links[s]);
      }
    }
  }
  plan.adj = build_conv_adjacency(scenario.graph);
  plan.gnn_features = build_gnn_features(scenario);
  plan.tau_scale = scales.tau;
  return plan;
}

namespace {

std::string iter_prefix(const ModelConfig& config, int t) {
  return config.share_weights ? std::string("shared") : "it" + std::to_string(t);
}

void add_gru_params(ParamStore& store, const std::string& prefix, int hidden, int input,
                    Rng& rng) {
  for (const char* gate : {"z", "r", "h"}) {
    store.add_glorot(prefix + "/gru/w" + gate, hidden, input, rng);
    store.add_glorot(prefix + "/gru/u" + gate, hidden, hidden, rng);
    store.add_zeros(prefix + "/gru/b" + gate, {hidden});
  }
}

void add_mlp_params(ParamStore& store, const std::string& prefix, int in,
                    const std::vector<int>& hidden, int out, Rng& rng) {
  int cur = in;
  int layer = 0;
  for (int h : hidden) {
    store.add_glorot(prefix + "/w" + std::to_string(layer), h, cur, rng);
    store.add_zeros(prefix + "/b" + std::to_string(layer), {h});
    cur = h;
    ++layer;
  }
  store.add_glorot(prefix + "/w" + std::to_string(layer), out, cur, rng);
  store.add_zeros(prefix + "/b" + std::to_string(layer), {out});
}

VarId lookup(const ParamStore& params, const std::vector<VarId>& bound, const std::string& name) {
  const int i = params.index_of(name);
  if (i < 0) throw std::invalid_argument("missing model parameter: " + name);
  return bound[i];
}

// Dense chain with ReLU hidden layers and the given final activation.
VarId mlp_chain(Tape& tape, VarId x, const ParamStore& params, const std::vector<VarId>& bound,
                const std::string& prefix, int num_layers, Activation final_act) {
  VarId cur = x;
  for (int layer = 0; layer < num_layers; ++layer) {
    const VarId w = lookup(params, bound, prefix + "/w" + std::to_string(layer));
    const VarId b = lookup(params, bound, prefix + "/b" + std::to_string(layer));
    const Activation act = layer + 1 == num_layers ? final_act : Activation::kRelu;
    cur = tape.dense(cur, w, b, act);
  }
  return cur;
}

}  // namespace

ParamStore init_params(const ModelConfig& config, uint64_t seed) {
  config.validate();
  ParamStore store;
  Rng rng(seed);
  if (config.variant == Variant::kGenericGnn) {
    const int in = 2 * config.gnn_output_paths;
    store.add_glorot("conv0/self", config.gnn_conv_dim, in, rng);
    store.add_glorot("conv0/nb", config.gnn_conv_dim, in, rng);
    store.add_glorot("conv1/self", config.gnn_conv_dim, config.gnn_conv_dim, rng);
    store.add_glorot("conv1/nb", config.gnn_conv_dim, config.gnn_conv_dim, rng);
    add_mlp_params(store, "readout", config.gnn_conv_dim, config.readout_hidden,
                   config.gnn_output_paths, rng);
    return store;
  }
  const int rounds = config.share_weights ? 1 : config.iterations;
  const int gru_input = config.link_dim + config.node_dim;
  const int link_in = config.link_dim + config.node_dim + config.path_dim;
  for (int t = 0; t < rounds; ++t) {
    const std::string prefix = iter_prefix(config, t);
    add_gru_params(store, prefix, config.path_dim, gru_input, rng);
    add_mlp_params(store, prefix + "/link_mlp", link_in, config.link_mlp_hidden, config.link_dim,
                   rng);
    if (config.variant == Variant::kPlanNet) {
      store.add_glorot(prefix + "/gcn/self", config.node_dim, config.node_dim + config.link_dim,
                       rng);
      store.add_glorot(prefix + "/gcn/nb", config.node_dim, config.node_dim + config.link_dim,
                       rng);
    }
  }
  add_mlp_params(store, "readout", config.path_dim, config.readout_hidden, 1, rng);
  return store;
}

IterVars resolve_iter_vars(const ParamStore& params, const std::vector<VarId>& bound,
                           const ModelConfig& config, int iteration) {
  const std::string prefix = iter_prefix(config, iteration);
  IterVars iv;
  int g = 0;
  for (const char* gate : {"z", "r", "h"}) {
    iv.gru[g++] = lookup(params, bound, prefix + "/gru/w" + gate);
    iv.gru[g++] = lookup(params, bound, prefix + "/gru/u" + gate);
    iv.gru[g++] = lookup(params, bound, prefix + "/gru/b" + gate);
  }
  const int mlp_layers = static_cast<int>(config.link_mlp_hidden.size()) + 1;
  for (int layer = 0; layer < mlp_layers; ++layer) {
    iv.link_mlp.push_back(
        {lookup(params, bound, prefix + "/link_mlp/w" + std::to_string(layer)),
         lookup(params, bound, prefix + "/link_mlp/b" + std::to_string(layer))});
  }
  if (config.variant == Variant::kPlanNet) {
    iv.gcn_self = lookup(params, bound, prefix + "/gcn/self");
    iv.gcn_nb = lookup(params, bound, prefix + "/gcn/nb");
  }
  return iv;
}

EmbeddingState init_embeddings(Tape& tape, const ScenarioPlan& plan, const ModelConfig& config) {
  Tensor hp = Tensor::zeros({plan.num_paths, config.path_dim});
  for (int p = 0; p < plan.num_paths; ++p) {
    hp(p, 0) = plan.path_tau[p].first;
    if (config.path_dim > 1) hp(p, 1) = plan.path_tau[p].second;
  }
  Tensor hl = Tensor::zeros({plan.num_links, config.link_dim});
  for (int l = 0; l < plan.num_links; ++l) hl(l, 0) = plan.link_cap[l];
  Tensor hn = Tensor::zeros({plan.num_nodes, config.node_dim});
  if (config.variant != Variant::kLinkPathOnly) {
    for (int n = 0; n < plan.num_nodes; ++n) hn(n, 0) = plan.node_deg[n];
  }
  EmbeddingState state;
  state.h_p = tape.constant(std::move(hp));
  state.h_l = tape.constant(std::move(hl));
  state.h_n = tape.constant(std::move(hn));
  return state;
}

void update_paths(Tape& tape, EmbeddingState& state, const ScenarioPlan& plan,
                  const IterVars& iv) {
  const int path_dim = tape.value(state.h_p).cols();
  VarId states = state.h_p;
  std::vector<VarId> msg_parts;
  for (int s = 0; s < plan.max_len; ++s) {
    const auto& pidx = plan.step_paths[s];
    const auto& lidx = plan.step_links[s];
    std::vector<int> src_ids;
    src_ids.reserve(lidx.size());
    for (int li : lidx) src_ids.push_back(plan.link_src[li]);
    const VarId cur = tape.gather_rows(states, pidx);
    const std::array<VarId, 2> cat{tape.gather_rows(state.h_l, lidx),
                                   tape.gather_rows(state.h_n, src_ids)};
    const VarId input = tape.hcat(cat);
    const VarId next = tape.gru_cell(cur, input, iv.gru);
    msg_parts.push_back(next);
    states = tape.scatter_update_rows(states, pidx, next);
  }
  state.h_p = states;
  if (msg_parts.empty()) {
    state.messages = tape.constant(Tensor::zeros({0, path_dim}));
  } else if (msg_parts.size() == 1) {
    state.messages = msg_parts[0];
  } else {
    state.messages = tape.vcat(msg_parts);
  }
}

void update_links(Tape& tape, EmbeddingState& state, const ScenarioPlan& plan,
                  const IterVars& iv) {
  if (state.messages < 0) throw std::logic_error("update_links: run update_paths first");
  const VarId agg = tape.segment_sum(state.messages, plan.msg_link, plan.num_links);
  const VarId hn_src = tape.gather_rows(state.h_n, plan.link_src);
  const std::array<VarId, 3> cat{state.h_l, hn_src, agg};
  VarId x = tape.hcat(cat);
  for (const auto& [w, b] : iv.link_mlp) {
    x = tape.dense(x, w, b, Activation::kRelu);
  }
  state.h_l = x;
}

void update_nodes(Tape& tape, EmbeddingState& state, const ScenarioPlan& plan,
                  const IterVars& iv) {
  const VarId out_sum = tape.segment_sum(state.h_l, plan.link_src, plan.num_nodes);
  const std::array<VarId, 2> cat{state.h_n, out_sum};
  const VarId z = tape.hcat(cat);
  state.h_n = tape.graph_conv(z, iv.gcn_self, iv.gcn_nb, plan.adj);
}

VarId forward(Tape& tape, const ScenarioPlan& plan, const std::vector<VarId>& bound,
              const ParamStore& params, const ModelConfig& config) {
  config.validate();
  if (config.variant == Variant::kGenericGnn)
    return generic_gnn_forward(tape, plan, bound, params, config);
  EmbeddingState state = init_embeddings(tape, plan, config);
  for (int t = 0; t < config.iterations; ++t) {
    const IterVars iv = resolve_iter_vars(params, bound, config, t);
    update_paths(tape, state, plan, iv);
    update_links(tape, state, plan, iv);
    if (config.variant == Variant::kPlanNet) update_nodes(tape, state, plan, iv);
  }
  const int readout_layers = static_cast<int>(config.readout_hidden.size()) + 1;
  const VarId out =
      mlp_chain(tape, state.h_p, params, bound, "readout", readout_layers, Activation::kIdentity);
  return tape.reshape(out, {plan.num_paths});
}

VarId generic_gnn_forward(Tape& tape, const ScenarioPlan& plan, const std::vector<VarId>& bound,
                          const ParamStore& params, const ModelConfig& config) {
  if (plan.num_paths != config.gnn_output_paths)
    throw FixedOutputWidthError("generic_gnn: model was built for " +
                                std::to_string(config.gnn_output_paths) + " paths, scenario has " +
                                std::to_string(plan.num_paths));
  Tensor feats = plan.gnn_features;
  for (double& v : feats.data) v /= plan.tau_scale;
  VarId x = tape.constant(std::move(feats));
  x = tape.graph_conv(x, lookup(params, bound, "conv0/self"), lookup(params, bound, "conv0/nb"),
                      plan.adj);
  x = tape.graph_conv(x, lookup(params, bound, "conv1/self"), lookup(params, bound, "conv1/nb"),
                      plan.adj);
  x = tape.mean_rows(x);
  const int readout_layers = static_cast<int>(config.readout_hidden.size()) + 1;
  return mlp_chain(tape, x, params, bound, "readout", readout_layers, Activation::kIdentity);
}

std::vector<double> forward_values(const ParamStore& params, const ModelConfig& config,
                                   const ScenarioPlan& plan) {
  Tape tape(false);
  const auto bound = bind_params(tape, params);
  const VarId out = forward(tape, plan, bound, params, config);
  return tape.value(out).data;
}

std::vector<double> forward_values(const ParamStore& params, const ModelConfig& config,
                                   const FeatureScales& scales, const Scenario& scenario) {
  return forward_values(params, config, build_plan(scenario, scales));
}

}  // namespace ndt
