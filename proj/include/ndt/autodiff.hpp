#ifndef NDT_AUTODIFF_HPP_
#define NDT_AUTODIFF_HPP_

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ndt/netmodel.hpp"
#include "ndt/rng.hpp"

namespace ndt {

// Dense row-major tensor of doubles. Rank 1 or 2 is all the model needs.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {}

  static Tensor zeros(std::vector<int> shape);

  int numel() const {
    int n = 1;
    for (int s : shape) n *= s;
    return n;
  }
  int rank() const { return static_cast<int>(shape.size()); }
  int rows() const { return rank() == 2 ? shape[0] : 1; }
  int cols() const { return rank() == 2 ? shape[1] : shape[0]; }
  double& operator()(int r, int c) { return data[static_cast<size_t>(r) * cols() + c]; }
  double operator()(int r, int c) const { return data[static_cast<size_t>(r) * cols() + c]; }
};

enum class Activation : uint8_t { kIdentity, kRelu };

// Precomputed symmetric-normalized incoming neighborhoods for graph
// convolution: for node n, pairs (m, e_mn / sqrt(degw(m) * degw(n))).
struct ConvAdjacency {
  int num_nodes{0};
  std::vector<std::vector<std::pair<int, double>>> in_neighbors;
};

ConvAdjacency build_conv_adjacency(const NetworkGraph& g);

using VarId = int32_t;

// Reverse-mode tape. Values are computed eagerly; backward() walks the node
// list in reverse and accumulates gradients, so parameters shared by many
// ops (the same cell applied along a path, say) pick up every contribution.
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  VarId constant(Tensor value);              // never receives gradient
  VarId leaf(Tensor value);                  // gradient tracked

  // y = act(x * W^T + b); x may be rank 1 [in] or rank 2 [B, in].
  VarId dense(VarId x, VarId w, VarId b, Activation act);

  // Gated recurrent cell. state [B,H] (or [H]), input [B,D] (or [D]).
  // Params: wz,uz,bz, wr,ur,br, wh,uh,bh with w* [H,D], u* [H,H], b* [H].
  VarId gru_cell(VarId state, VarId input, const std::array<VarId, 9>& params);

  // One-hop edge-conditioned convolution with ReLU:
  //   out_n = relu(theta_self * z_n + sum_m ehat_mn * theta_nb * z_m).
  VarId graph_conv(VarId z, VarId theta_self, VarId theta_nb, const ConvAdjacency& adj);

  VarId hcat(std::span<const VarId> parts);           // column-wise concat
  VarId vcat(std::span<const VarId> parts);           // row-wise concat
  VarId add_n(std::span<const VarId> terms);          // same-shape sum
  VarId gather_rows(VarId x, std::vector<int> idx);
  VarId scatter_update_rows(VarId base, std::vector<int> idx, VarId rows);
  VarId segment_sum(VarId x, std::vector<int> segment_of_row, int num_segments);
  VarId mean_rows(VarId x);                           // [N,F] -> [F]
  VarId reshape(VarId x, std::vector<int> shape);

  // Mean of squared errors over mask-valid entries plus lambda * sum of
  // squared parameter values; gradient flows to pred and every param.
  VarId mse_l2_loss(VarId pred, const Tensor& target, const std::vector<uint8_t>& mask,
                    std::span<const VarId> params, double lambda);

  const Tensor& value(VarId id) const { return nodes_[id].value; }
  double scalar(VarId id) const { return nodes_[id].value.data.at(0); }
  bool has_grad(VarId id) const;
  const Tensor& grad(VarId id) const;
  bool grad_enabled() const { return grad_enabled_; }

  void backward(VarId loss);
  size_t size() const { return nodes_.size(); }

 private:
  enum class Op : uint8_t {
    kLeaf, kConst, kDense, kGru, kGraphConv, kHcat, kVcat, kAddN,
    kGatherRows, kScatterUpdate, kSegmentSum, kMeanRows, kReshape, kMseL2
  };

  struct Node {
    Op op;
    Tensor value;
    std::vector<VarId> args;
    bool needs_grad{false};
    Activation act{Activation::kIdentity};
    const ConvAdjacency* adj{nullptr};
    std::vector<int> idx;     // gather / scatter / segment map
    std::vector<Tensor> saved;
    Tensor target;
    std::vector<uint8_t> mask;
    double lambda{0};
    int aux_int{0};
  };

  VarId add_node(Node n);
  bool any_needs_grad(std::span<const VarId> args) const;
  void backward_node(VarId id);
  Tensor& grad_buffer(VarId id);

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::vector<uint8_t> touched_;
  bool grad_enabled_;
};

// Named parameter tensors with Adam moment buffers and a shared step counter.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    Tensor m;
    Tensor v;
  };

  // Adds a parameter initialized uniformly in +-sqrt(6/(fan_in+fan_out)).
  Tensor& add_glorot(const std::string& name, int fan_out, int fan_in, Rng& rng);
  Tensor& add_zeros(const std::string& name, std::vector<int> shape);

  int index_of(const std::string& name) const;  // -1 if absent
  const Entry& entry(int i) const { return entries_[i]; }
  Entry& entry(int i) { return entries_[i]; }
  int size() const { return static_cast<int>(entries_.size()); }
  int64_t step() const { return step_; }
  void set_step(int64_t s) { step_ = s; }

  int64_t total_param_count() const;

  // Flat parameter vector view, in entry order; used by gradient checking.
  std::vector<double> flatten() const;
  void unflatten(std::span<const double> flat);

  friend void adam_step(ParamStore& params, const std::vector<Tensor>& grads, double lr,
                        double beta1, double beta2, double eps);

 private:
  std::vector<Entry> entries_;
  int64_t step_{0};
};

// Binds every parameter as a tape leaf; vars align with entry indices.
std::vector<VarId> bind_params(Tape& tape, const ParamStore& params);

// Collects gradients for bound params after backward (zeros where untouched).
std::vector<Tensor> collect_grads(const Tape& tape, const std::vector<VarId>& vars,
                                  const ParamStore& params);

// Standard bias-corrected Adam update; increments the step counter.
void adam_step(ParamStore& params, const std::vector<Tensor>& grads, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

// Central finite differences against the analytic gradient. `f` evaluates the
// scalar objective at x and, when grad_out is non-empty, also writes the
// analytic gradient. Returns max_i |a_i - n_i| / max(1e-8, |a_i| + |n_i|).
double grad_check(const std::function<double(std::span<const double>, std::span<double>)>& f,
                  std::vector<double> point, double h);

}  // namespace ndt

#endif  // NDT_AUTODIFF_HPP_
