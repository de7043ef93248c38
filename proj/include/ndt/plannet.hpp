#ifndef NDT_PLANNET_HPP_
#define NDT_PLANNET_HPP_

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ndt/autodiff.hpp"
#include "ndt/netmodel.hpp"

namespace ndt {

enum class Variant : uint8_t { kPlanNet, kLinkPathOnly, kGenericGnn };

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);

struct ModelConfig {
  int iterations{3};
  int path_dim{32};
  int link_dim{16};
  int node_dim{16};
  std::vector<int> link_mlp_hidden{32, 64, 128, 32};
  std::vector<int> readout_hidden{64, 32, 16};
  Variant variant{Variant::kPlanNet};
  bool share_weights{false};
  // Fixed-width baseline knobs; unused by the message-passing variants.
  int gnn_output_paths{10};
  int gnn_conv_dim{32};

  void validate() const;
};

// Input feature scaling, fixed at training time and stored with the model.
struct FeatureScales {
  double tau{20.0};
  double capacity{6000.0};
  double degree{4.0};
};

struct Scenario {
  NetworkGraph graph;
  std::vector<PathSpec> paths;
  TrafficMatrix traffic;
};

// Preprocessed per-scenario structure, reusable across forward passes.
struct ScenarioPlan {
  int num_paths{0};
  int num_links{0};
  int num_nodes{0};
  std::vector<std::pair<double, double>> path_tau;  // scaled (on, off)
  std::vector<double> link_cap;                     // scaled
  std::vector<double> node_deg;                     // scaled out-degree
  std::vector<int> link_src;
  int max_len{0};
  std::vector<std::vector<int>> step_paths;  // active path ids per step
  std::vector<std::vector<int>> step_links;  // link id walked at that step
  std::vector<int> msg_path;  // per message row, step-major
  std::vector<int> msg_pos;
  std::vector<int> msg_link;
  ConvAdjacency adj;
  Tensor gnn_features;  // [N, 2P], raw tau values
  double tau_scale{20.0};
};

ScenarioPlan build_plan(const Scenario& scenario, const FeatureScales& scales);

// Per-node traffic features for the fixed-width baseline: column 2k holds
// tau_on of path k if the node lies on that path, column 2k+1 tau_off.
Tensor build_gnn_features(const Scenario& scenario);

ParamStore init_params(const ModelConfig& config, uint64_t seed);

// Tape variables of one message-passing iteration.
struct IterVars {
  std::array<VarId, 9> gru{};
  std::vector<std::pair<VarId, VarId>> link_mlp;  // (weights, bias) per layer
  VarId gcn_self{-1};
  VarId gcn_nb{-1};
};

IterVars resolve_iter_vars(const ParamStore& params, const std::vector<VarId>& bound,
                           const ModelConfig& config, int iteration);

struct EmbeddingState {
  VarId h_p{-1};
  VarId h_l{-1};
  VarId h_n{-1};
  VarId messages{-1};  // [M, path_dim]; row r belongs to (msg_path[r], msg_pos[r])
};

EmbeddingState init_embeddings(Tape& tape, const ScenarioPlan& plan, const ModelConfig& config);

// Walks every path with the iteration's recurrent cell; records intermediate
// states as messages and the final state as the new path embedding.
void update_paths(Tape& tape, EmbeddingState& state, const ScenarioPlan& plan,
                  const IterVars& iv);

// Per link: sum of incident path messages, concatenated with the link and
// source-node embeddings, through the link MLP.
void update_links(Tape& tape, EmbeddingState& state, const ScenarioPlan& plan,
                  const IterVars& iv);

// Per node: sum of outgoing link embeddings joined to the node embedding,
// then one weighted graph convolution.
void update_nodes(Tape& tape, EmbeddingState& state, const ScenarioPlan& plan,
                  const IterVars& iv);

// Full model: embeddings, T update rounds, readout. One scalar per path.
VarId forward(Tape& tape, const ScenarioPlan& plan, const std::vector<VarId>& bound,
              const ParamStore& params, const ModelConfig& config);

VarId generic_gnn_forward(Tape& tape, const ScenarioPlan& plan, const std::vector<VarId>& bound,
                          const ParamStore& params, const ModelConfig& config);

// Convenience inference path (no gradients).
std::vector<double> forward_values(const ParamStore& params, const ModelConfig& config,
                                   const ScenarioPlan& plan);
std::vector<double> forward_values(const ParamStore& params, const ModelConfig& config,
                                   const FeatureScales& scales, const Scenario& scenario);

}  // namespace ndt

#endif  // NDT_PLANNET_HPP_
