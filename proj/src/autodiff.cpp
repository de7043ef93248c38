#include "ndt/autodiff.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace ndt {

Tensor Tensor::zeros(std::vector<int> shape) {
  Tensor t;
  t.shape = std::move(shape);
  int n = 1;
  for (int s : t.shape) n *= s;
  t.data.assign(static_cast<size_t>(n), 0.0);
  return t;
}

ConvAdjacency build_conv_adjacency(const NetworkGraph& g) {
  ConvAdjacency adj;
  adj.num_nodes = g.node_count();
  adj.in_neighbors.resize(g.node_count());
  std::vector<double> degw(g.node_count(), 0.0);
  std::vector<double> degw_in(g.node_count(), 0.0);
  for (const auto& l : g.links) {
    degw[l.src] += l.weight;
    degw_in[l.dst] += l.weight;
  }
  // Pure sinks (in-links only) have zero weighted out-degree; normalize those
  // by their in-degree so the factor stays finite. Symmetric graphs never
  // take this branch.
  for (int n = 0; n < g.node_count(); ++n) {
    if (degw[n] == 0) degw[n] = degw_in[n];
  }
  for (const auto& l : g.links) {
    const double norm = std::sqrt(degw[l.src] * degw[l.dst]);
    adj.in_neighbors[l.dst].push_back({l.src, l.weight / norm});
  }
  return adj;
}

namespace {

// C[m,n] += A[m,k] * B[n,k]^T
// Four fixed-order accumulators per dot product; deterministic and roughly
// twice as fast as a single-chain reduction at -O2/-O3 without fast math.
void matmul_nt_acc(const double* a, int m, int k, const double* b, int n, double* c) {
  const int k4 = k - k % 4;
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<size_t>(i) * k;
    double* ci = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* bj = b + static_cast<size_t>(j) * k;
      double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
      for (int t = 0; t < k4; t += 4) {
        s0 += ai[t] * bj[t];
        s1 += ai[t + 1] * bj[t + 1];
        s2 += ai[t + 2] * bj[t + 2];
        s3 += ai[t + 3] * bj[t + 3];
      }
      double acc = (s0 + s1) + (s2 + s3);
      for (int t = k4; t < k; ++t) acc += ai[t] * bj[t];
      ci[j] += acc;
    }
  }
}

// C[m,n] += A[m,k] * B[k,n]
void matmul_nn_acc(const double* a, int m, int k, const double* b, int n, double* c) {
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<size_t>(i) * k;
    double* ci = c + static_cast<size_t>(i) * n;
    for (int t = 0; t < k; ++t) {
      const double av = ai[t];
      if (av == 0) continue;
      const double* bt = b + static_cast<size_t>(t) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bt[j];
    }
  }
}

// C[m,n] += A[k,m]^T * B[k,n]
void matmul_tn_acc(const double* a, int m, int k, const double* b, int n, double* c) {
  for (int t = 0; t < k; ++t) {
    const double* at = a + static_cast<size_t>(t) * m;
    const double* bt = b + static_cast<size_t>(t) * n;
    for (int i = 0; i < m; ++i) {
      const double av = at[i];
      if (av == 0) continue;
      double* ci = c + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bt[j];
    }
  }
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void check_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 1 && t.rank() != 2) throw std::invalid_argument(std::string(what) + ": rank must be 1 or 2");
}

}  // namespace

VarId Tape::add_node(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<VarId>(nodes_.size() - 1);
}

bool Tape::any_needs_grad(std::span<const VarId> args) const {
  if (!grad_enabled_) return false;
  for (VarId a : args) {
    if (nodes_[a].needs_grad) return true;
  }
  return false;
}

VarId Tape::constant(Tensor value) {
  Node n;
  n.op = Op::kConst;
  n.value = std::move(value);
  return add_node(std::move(n));
}

VarId Tape::leaf(Tensor value) {
  Node n;
  n.op = Op::kLeaf;
  n.value = std::move(value);
  n.needs_grad = grad_enabled_;
  return add_node(std::move(n));
}

VarId Tape::dense(VarId x, VarId w, VarId b, Activation act) {
  const Tensor& xv = nodes_[x].value;
  const Tensor& wv = nodes_[w].value;
  const Tensor& bv = nodes_[b].value;
  check_matrix(xv, "dense input");
  if (wv.rank() != 2) throw std::invalid_argument("dense: weights must be rank 2");
  const int in = xv.cols();
  const int rows = xv.rows();
  const int out = wv.shape[0];
  if (wv.shape[1] != in) throw std::invalid_argument("dense: weight shape mismatch");
  if (bv.numel() != out) throw std::invalid_argument("dense: bias shape mismatch");

  Node n;
  n.op = Op::kDense;
  n.args = {x, w, b};
  n.act = act;
  n.value = xv.rank() == 1 ? Tensor::zeros({out}) : Tensor::zeros({rows, out});
  for (int i = 0; i < rows; ++i) {
    double* row = n.value.data.data() + static_cast<size_t>(i) * out;
    for (int j = 0; j < out; ++j) row[j] = bv.data[j];
  }
  matmul_nt_acc(xv.data.data(), rows, in, wv.data.data(), out, n.value.data.data());
  if (act == Activation::kRelu) {
    for (double& v : n.value.data) v = v > 0 ? v : 0.0;
  }
  n.needs_grad = any_needs_grad(n.args);
  return add_node(std::move(n));
}

VarId Tape::gru_cell(VarId state, VarId input, const std::array<VarId, 9>& params) {
  const Tensor& hv = nodes_[state].value;
  const Tensor& xv = nodes_[input].value;
  check_matrix(hv, "gru state");
  check_matrix(xv, "gru input");
  const int rows = hv.rows();
  if (xv.rows() != rows) throw std::invalid_argument("gru: row count mismatch");
  const int H = hv.cols();
  const int D = xv.cols();
  const Tensor& wz = nodes_[params[0]].value;
  const Tensor& uz = nodes_[params[1]].value;
  const Tensor& bz = nodes_[params[2]].value;
  const Tensor& wr = nodes_[params[3]].value;
  const Tensor& ur = nodes_[params[4]].value;
  const Tensor& br = nodes_[params[5]].value;
  const Tensor& wh = nodes_[params[6]].value;
  const Tensor& uh = nodes_[params[7]].value;
  const Tensor& bh = nodes_[params[8]].value;
  auto check_gate = [&](const Tensor& w, const Tensor& u, const Tensor& b) {
    if (w.rank() != 2 || w.shape[0] != H || w.shape[1] != D || u.rank() != 2 ||
        u.shape[0] != H || u.shape[1] != H || b.numel() != H)
      throw std::invalid_argument("gru: parameter shape mismatch");
  };
  check_gate(wz, uz, bz);
  check_gate(wr, ur, br);
  check_gate(wh, uh, bh);

  auto gate_pre = [&](const Tensor& w, const Tensor& u, const Tensor& b, const double* other) {
    Tensor pre = hv.rank() == 1 ? Tensor::zeros({H}) : Tensor::zeros({rows, H});
    for (int i = 0; i < rows; ++i) {
      double* row = pre.data.data() + static_cast<size_t>(i) * H;
      for (int j = 0; j < H; ++j) row[j] = b.data[j];
    }
    matmul_nt_acc(xv.data.data(), rows, D, w.data.data(), H, pre.data.data());
    matmul_nt_acc(other, rows, H, u.data.data(), H, pre.data.data());
    return pre;
  };

  Tensor z = gate_pre(wz, uz, bz, hv.data.data());
  Tensor r = gate_pre(wr, ur, br, hv.data.data());
  for (double& v : z.data) v = sigmoid(v);
  for (double& v : r.data) v = sigmoid(v);
  Tensor rh = hv;
  for (size_t i = 0; i < rh.data.size(); ++i) rh.data[i] *= r.data[i];
  Tensor c = gate_pre(wh, uh, bh, rh.data.data());
  for (double& v : c.data) v = std::tanh(v);

  Node n;
  n.op = Op::kGru;
  n.args = {state, input, params[0], params[1], params[2], params[3],
            params[4], params[5], params[6], params[7], params[8]};
  n.value = hv;
  for (size_t i = 0; i < n.value.data.size(); ++i) {
    n.value.data[i] = (1.0 - z.data[i]) * c.data[i] + z.data[i] * hv.data[i];
  }
  n.needs_grad = any_needs_grad(n.args);
  if (n.needs_grad) {
    n.saved.push_back(std::move(z));
    n.saved.push_back(std::move(r));
    n.saved.push_back(std::move(c));
    n.saved.push_back(std::move(rh));
  }
  return add_node(std::move(n));
}

VarId Tape::graph_conv(VarId z, VarId theta_self, VarId theta_nb, const ConvAdjacency& adj) {
  const Tensor& zv = nodes_[z].value;
  const Tensor& tsv = nodes_[theta_self].value;
  const Tensor& tnv = nodes_[theta_nb].value;
  if (zv.rank() != 2) throw std::invalid_argument("graph_conv: input must be rank 2");
  if (zv.shape[0] != adj.num_nodes)
    throw std::invalid_argument("graph_conv: row count must equal node count");
  const int fin = zv.shape[1];
  if (tsv.rank() != 2 || tnv.rank() != 2 || tsv.shape[1] != fin || tnv.shape[1] != fin ||
      tsv.shape[0] != tnv.shape[0])
    throw std::invalid_argument("graph_conv: theta shape mismatch");
  const int fout = tsv.shape[0];
  const int nn = adj.num_nodes;

  // AZ[n] = sum over incoming neighbors m of ehat_mn * z_m
  Tensor az = Tensor::zeros({nn, fin});
  for (int n = 0; n < nn; ++n) {
    double* row = az.data.data() + static_cast<size_t>(n) * fin;
    for (const auto& [m, w] : adj.in_neighbors[n]) {
      const double* zm = zv.data.data() + static_cast<size_t>(m) * fin;
      for (int f = 0; f < fin; ++f) row[f] += w * zm[f];
    }
  }
  Node node;
  node.op = Op::kGraphConv;
  node.args = {z, theta_self, theta_nb};
  node.adj = &adj;
  node.value = Tensor::zeros({nn, fout});
  matmul_nt_acc(zv.data.data(), nn, fin, tsv.data.data(), fout, node.value.data.data());
  matmul_nt_acc(az.data.data(), nn, fin, tnv.data.data(), fout, node.value.data.data());
  for (double& v : node.value.data) v = v > 0 ? v : 0.0;
  node.needs_grad = any_needs_grad(node.args);
  if (node.needs_grad) node.saved.push_back(std::move(az));
  return add_node(std::move(node));
}

VarId Tape::hcat(std::span<const VarId> parts) {
  if (parts.empty()) throw std::invalid_argument("hcat: empty");
  const int rows = nodes_[parts[0]].value.rows();
  bool all_rank1 = true;
  int total = 0;
  for (VarId p : parts) {
    const Tensor& t = nodes_[p].value;
    check_matrix(t, "hcat");
    if (t.rows() != rows) throw std::invalid_argument("hcat: row mismatch");
    if (t.rank() != 1) all_rank1 = false;
    total += t.cols();
  }
  Node n;
  n.op = Op::kHcat;
  n.args.assign(parts.begin(), parts.end());
  n.value = all_rank1 && rows == 1 ? Tensor::zeros({total}) : Tensor::zeros({rows, total});
  int off = 0;
  for (VarId p : parts) {
    const Tensor& t = nodes_[p].value;
    const int c = t.cols();
    for (int i = 0; i < rows; ++i) {
      std::memcpy(n.value.data.data() + static_cast<size_t>(i) * total + off,
                  t.data.data() + static_cast<size_t>(i) * c, sizeof(double) * c);
    }
    off += c;
  }
  n.needs_grad = any_needs_grad(n.args);
  return add_node(std::move(n));
}

VarId Tape::vcat(std::span<const VarId> parts) {
  if (parts.empty()) throw std::invalid_argument("vcat: empty");
  const int cols = nodes_[parts[0]].value.cols();
  int total = 0;
  for (VarId p : parts) {
    const Tensor& t = nodes_[p].value;
    if (t.rank() != 2) throw std::invalid_argument("vcat: inputs must be rank 2");
    if (t.cols() != cols) throw std::invalid_argument("vcat: column mismatch");
    total += t.rows();
  }
  Node n;
  n.op = Op::kVcat;
  n.args.assign(parts.begin(), parts.end());
  n.value = Tensor::zeros({total, cols});
  size_t off = 0;
  for (VarId p : parts) {
    const Tensor& t = nodes_[p].value;
    std::memcpy(n.value.data.data() + off, t.data.data(), sizeof(double) * t.data.size());
    off += t.data.size();
  }
  n.needs_grad = any_needs_grad(n.args);
  return add_node(std::move(n));
}

VarId Tape::add_n(std::span<const VarId> terms) {
  if (terms.empty()) throw std::invalid_argument("add_n: empty");
  Node n;
  n.op = Op::kAddN;
  n.args.assign(terms.begin(), terms.end());
  n.value = nodes_[terms[0]].value;
  for (size_t k = 1; k < terms.size(); ++k) {
    const Tensor& t = nodes_[terms[k]].value;
    if (t.shape != n.value.shape) throw std::invalid_argument("add_n: shape mismatch");
    for (size_t i = 0; i < t.data.size(); ++i) n.value.data[i] += t.data[i];
  }
  n.needs_grad = any_needs_grad(n.args);
  return add_node(std::move(n));
}

VarId Tape::gather_rows(VarId x, std::vector<int> idx) {
  const Tensor& xv = nodes_[x].value;
  if (xv.rank() != 2) throw std::invalid_argument("gather_rows: input must be rank 2");
  const int cols = xv.shape[1];
  Node n;
  n.op = Op::kGatherRows;
  n.args = {x};
  n.value = Tensor::zeros({static_cast<int>(idx.size()), cols});
  for (size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] < 0 || idx[k] >= xv.shape[0]) throw std::invalid_argument("gather_rows: index out of range");
    std::memcpy(n.value.data.data() + k * cols,
                xv.data.data() + static_cast<size_t>(idx[k]) * cols, sizeof(double) * cols);
  }
  n.idx = std::move(idx);
  n.needs_grad = any_needs_grad(n.args);
  return add_node(std::move(n));
}

VarId Tape::scatter_update_rows(VarId base, std::vector<int> idx, VarId rows) {
  const Tensor& bv = nodes_[base].value;
  const Tensor& rv = nodes_[rows].value;
  if (bv.rank() != 2 || rv.rank() != 2) throw std::invalid_argument("scatter_update_rows: rank 2 required");
  if (rv.shape[0] != static_cast<int>(idx.size()) || rv.shape[1] != bv.shape[1])
    throw std::invalid_argument("scatter_update_rows: shape mismatch");
  Node n;
  n.op = Op::kScatterUpdate;
  n.args = {base, rows};
  n.value = bv;
  const int cols = bv.shape[1];
  for (size_t k = 0; k < idx.size(); ++k) {
    std::memcpy(n.value.data.data() + static_cast<size_t>(idx[k]) * cols,
                rv.data.data() + k * cols, sizeof(double) * cols);
  }
  n.idx = std::move(idx);
  n.needs_grad = any_needs_grad(n.args);
  return add_node(std::move(n));
}

VarId Tape::segment_sum(VarId x, std::vector<int> segment_of_row, int num_segments) {
  const Tensor& xv = nodes_[x].value;
  if (xv.rank() != 2) throw std::invalid_argument("segment_sum: input must be rank 2");
  if (static_cast<int>(segment_of_row.size()) != xv.shape[0])
    throw std::invalid_argument("segment_sum: segment map size mismatch");
  const int cols = xv.shape[1];
  Node n;
  n.op = Op::kSegmentSum;
  n.args = {x};
  n.value = Tensor::zeros({num_segments, cols});
  for (size_t k = 0; k < segment_of_row.size(); ++k) {
    const int s = segment_of_row[k];
    if (s < 0 || s >= num_segments) throw std::invalid_argument("segment_sum: segment out of range");
    double* dst = n.value.data.data() + static_cast<size_t>(s) * cols;
    const double* src = xv.data.data() + k * cols;
    for (int f = 0; f < cols; ++f) dst[f] += src[f];
  }
  n.idx = std::move(segment_of_row);
  n.needs_grad = any_needs_grad(n.args);
  return add_node(std::move(n));
}

VarId Tape::mean_rows(VarId x) {
  const Tensor& xv = nodes_[x].value;
  if (xv.rank() != 2 || xv.shape[0] < 1) throw std::invalid_argument("mean_rows: nonempty rank-2 input required");
  const int rows = xv.shape[0];
  const int cols = xv.shape[1];
  Node n;
  n.op = Op::kMeanRows;
  n.args = {x};
  n.value = Tensor::zeros({cols});
  for (int i = 0; i < rows; ++i) {
    for (int f = 0; f < cols; ++f) n.value.data[f] += xv(i, f);
  }
  for (double& v : n.value.data) v /= rows;
  n.needs_grad = any_needs_grad(n.args);
  return add_node(std::move(n));
}

VarId Tape::reshape(VarId x, std::vector<int> shape) {
  const Tensor& xv = nodes_[x].value;
  int n = 1;
  for (int s : shape) n *= s;
  if (n != xv.numel()) throw std::invalid_argument("reshape: element count mismatch");
  Node node;
  node.op = Op::kReshape;
  node.args = {x};
  node.value.shape = std::move(shape);
  node.value.data = xv.data;
  node.needs_grad = any_needs_grad(node.args);
  return add_node(std::move(node));
}

VarId Tape::mse_l2_loss(VarId pred, const Tensor& target, const std::vector<uint8_t>& mask,
                        std::span<const VarId> params, double lambda) {
  const Tensor& pv = nodes_[pred].value;
  if (pv.numel() != target.numel()) throw std::invalid_argument("mse_l2_loss: shape mismatch");
  if (mask.size() != static_cast<size_t>(pv.numel()))
    throw std::invalid_argument("mse_l2_loss: mask size mismatch");
  if (lambda < 0) throw std::invalid_argument("mse_l2_loss: lambda must be >= 0");
  int n_valid = 0;
  for (uint8_t m : mask) n_valid += m ? 1 : 0;
  if (n_valid == 0) throw std::invalid_argument("mse_l2_loss: no valid target entries");

  double loss = 0;
  for (int i = 0; i < pv.numel(); ++i) {
    if (!mask[i]) continue;
    const double d = pv.data[i] - target.data[i];
    loss += d * d;
  }
  loss /= n_valid;
  for (VarId p : params) {
    for (double v : nodes_[p].value.data) loss += lambda * v * v;
  }
  Node n;
  n.op = Op::kMseL2;
  n.args.push_back(pred);
  n.args.insert(n.args.end(), params.begin(), params.end());
  n.value = Tensor({1}, {loss});
  n.target = target;
  n.mask = mask;
  n.lambda = lambda;
  n.aux_int = n_valid;
  n.needs_grad = any_needs_grad(n.args);
  return add_node(std::move(n));
}

bool Tape::has_grad(VarId id) const {
  return id >= 0 && static_cast<size_t>(id) < grads_.size() && touched_[id];
}

const Tensor& Tape::grad(VarId id) const {
  if (!has_grad(id)) throw std::logic_error("grad: no gradient recorded for this variable");
  return grads_[id];
}

Tensor& Tape::grad_buffer(VarId id) {
  if (!touched_[id]) {
    grads_[id] = Tensor::zeros(nodes_[id].value.shape);
    touched_[id] = 1;
  }
  return grads_[id];
}

void Tape::backward(VarId loss) {
  if (!grad_enabled_) throw std::logic_error("backward: tape built with gradients disabled");
  if (nodes_[loss].value.numel() != 1) throw std::invalid_argument("backward: loss must be scalar");
  grads_.assign(nodes_.size(), Tensor{});
  touched_.assign(nodes_.size(), 0);
  grad_buffer(loss).data[0] = 1.0;
  for (VarId id = loss; id >= 0; --id) {
    if (!touched_[id] || !nodes_[id].needs_grad) continue;
    backward_node(id);
  }
}

void Tape::backward_node(VarId id) {
  Node& n = nodes_[id];
  const Tensor& g = grads_[id];
  auto maybe = [&](VarId a) -> Tensor* {
    return nodes_[a].needs_grad ? &grad_buffer(a) : nullptr;
  };

  switch (n.op) {
    case Op::kLeaf:
    case Op::kConst:
      break;

    case Op::kDense: {
      const Tensor& xv = nodes_[n.args[0]].value;
      const Tensor& wv = nodes_[n.args[1]].value;
      const int rows = xv.rows();
      const int in = xv.cols();
      const int out = wv.shape[0];
      Tensor dpre = g;
      if (n.act == Activation::kRelu) {
        for (size_t i = 0; i < dpre.data.size(); ++i) {
          if (n.value.data[i] <= 0) dpre.data[i] = 0;
        }
      }
      if (Tensor* dx = maybe(n.args[0]))
        matmul_nn_acc(dpre.data.data(), rows, out, wv.data.data(), in, dx->data.data());
      if (Tensor* dw = maybe(n.args[1]))
        matmul_tn_acc(dpre.data.data(), out, rows, xv.data.data(), in, dw->data.data());
      if (Tensor* db = maybe(n.args[2])) {
        for (int i = 0; i < rows; ++i) {
          for (int j = 0; j < out; ++j) db->data[j] += dpre.data[static_cast<size_t>(i) * out + j];
        }
      }
      break;
    }

    case Op::kGru: {
      const Tensor& hv = nodes_[n.args[0]].value;
      const Tensor& xv = nodes_[n.args[1]].value;
      const Tensor& z = n.saved[0];
      const Tensor& r = n.saved[1];
      const Tensor& c = n.saved[2];
      const Tensor& rh = n.saved[3];
      const int rows = hv.rows();
      const int H = hv.cols();
      const int D = xv.cols();
      const size_t total = hv.data.size();

      Tensor daz = Tensor::zeros(hv.shape);
      Tensor dar = Tensor::zeros(hv.shape);
      Tensor dac = Tensor::zeros(hv.shape);
      Tensor dh_direct = Tensor::zeros(hv.shape);
      // h' = (1-z) c + z h
      for (size_t i = 0; i < total; ++i) {
        const double gi = g.data[i];
        const double dz = gi * (hv.data[i] - c.data[i]);
        daz.data[i] = dz * z.data[i] * (1.0 - z.data[i]);
        dac.data[i] = gi * (1.0 - z.data[i]) * (1.0 - c.data[i] * c.data[i]);
        dh_direct.data[i] = gi * z.data[i];
      }
      // args: {state, input, wz, uz, bz, wr, ur, br, wh, uh, bh}
      const VarId wz_id = n.args[2], uz_id = n.args[3], bz_id = n.args[4];
      const VarId wr_id = n.args[5], ur_id = n.args[6], br_id = n.args[7];
      const VarId wh_id = n.args[8], uh_id = n.args[9], bh_id = n.args[10];

      // through candidate: d(r*h) = dac * Uh
      Tensor drh = Tensor::zeros(hv.shape);
      matmul_nn_acc(dac.data.data(), rows, H, nodes_[uh_id].value.data.data(), H,
                    drh.data.data());
      for (size_t i = 0; i < total; ++i) {
        const double dr = drh.data[i] * hv.data[i];
        dar.data[i] = dr * r.data[i] * (1.0 - r.data[i]);
      }

      if (Tensor* dh = maybe(n.args[0])) {
        for (size_t i = 0; i < total; ++i)
          dh->data[i] += dh_direct.data[i] + drh.data[i] * r.data[i];
        matmul_nn_acc(daz.data.data(), rows, H, nodes_[uz_id].value.data.data(), H,
                      dh->data.data());
        matmul_nn_acc(dar.data.data(), rows, H, nodes_[ur_id].value.data.data(), H,
                      dh->data.data());
      }
      if (Tensor* dx = maybe(n.args[1])) {
        matmul_nn_acc(daz.data.data(), rows, H, nodes_[wz_id].value.data.data(), D,
                      dx->data.data());
        matmul_nn_acc(dar.data.data(), rows, H, nodes_[wr_id].value.data.data(), D,
                      dx->data.data());
        matmul_nn_acc(dac.data.data(), rows, H, nodes_[wh_id].value.data.data(), D,
                      dx->data.data());
      }
      auto gate_param_grads = [&](const Tensor& da, VarId w_id, VarId u_id, VarId b_id,
                                  const Tensor& u_input) {
        if (Tensor* dw = maybe(w_id))
          matmul_tn_acc(da.data.data(), H, rows, xv.data.data(), D, dw->data.data());
        if (Tensor* du = maybe(u_id))
          matmul_tn_acc(da.data.data(), H, rows, u_input.data.data(), H, du->data.data());
        if (Tensor* db = maybe(b_id)) {
          for (int i = 0; i < rows; ++i)
            for (int j = 0; j < H; ++j) db->data[j] += da.data[static_cast<size_t>(i) * H + j];
        }
      };
      gate_param_grads(daz, wz_id, uz_id, bz_id, hv);
      gate_param_grads(dar, wr_id, ur_id, br_id, hv);
      gate_param_grads(dac, wh_id, uh_id, bh_id, rh);
      break;
    }

    case Op::kGraphConv: {
      const Tensor& zv = nodes_[n.args[0]].value;
      const Tensor& tsv = nodes_[n.args[1]].value;
      const Tensor& tnv = nodes_[n.args[2]].value;
      const Tensor& az = n.saved[0];
      const int nn = zv.shape[0];
      const int fin = zv.shape[1];
      const int fout = tsv.shape[0];
      Tensor dpre = g;
      for (size_t i = 0; i < dpre.data.size(); ++i) {
        if (n.value.data[i] <= 0) dpre.data[i] = 0;
      }
      if (Tensor* dts = maybe(n.args[1]))
        matmul_tn_acc(dpre.data.data(), fout, nn, zv.data.data(), fin, dts->data.data());
      if (Tensor* dtn = maybe(n.args[2]))
        matmul_tn_acc(dpre.data.data(), fout, nn, az.data.data(), fin, dtn->data.data());
      if (Tensor* dz = maybe(n.args[0])) {
        matmul_nn_acc(dpre.data.data(), nn, fout, tsv.data.data(), fin, dz->data.data());
        Tensor dy = Tensor::zeros({nn, fin});  // dpre * theta_nb
        matmul_nn_acc(dpre.data.data(), nn, fout, tnv.data.data(), fin, dy.data.data());
        for (int v = 0; v < nn; ++v) {
          const double* dyv = dy.data.data() + static_cast<size_t>(v) * fin;
          for (const auto& [m, w] : n.adj->in_neighbors[v]) {
            double* dzm = dz->data.data() + static_cast<size_t>(m) * fin;
            for (int f = 0; f < fin; ++f) dzm[f] += w * dyv[f];
          }
        }
      }
      break;
    }

    case Op::kHcat: {
      const int rows = n.value.rows();
      const int total = n.value.cols();
      int off = 0;
      for (VarId a : n.args) {
        const int c = nodes_[a].value.cols();
        if (Tensor* da = maybe(a)) {
          for (int i = 0; i < rows; ++i) {
            const double* src = g.data.data() + static_cast<size_t>(i) * total + off;
            double* dst = da->data.data() + static_cast<size_t>(i) * c;
            for (int f = 0; f < c; ++f) dst[f] += src[f];
          }
        }
        off += c;
      }
      break;
    }

    case Op::kVcat: {
      size_t off = 0;
      for (VarId a : n.args) {
        const size_t count = nodes_[a].value.data.size();
        if (Tensor* da = maybe(a)) {
          for (size_t i = 0; i < count; ++i) da->data[i] += g.data[off + i];
        }
        off += count;
      }
      break;
    }

    case Op::kAddN:
      for (VarId a : n.args) {
        if (Tensor* da = maybe(a)) {
          for (size_t i = 0; i < g.data.size(); ++i) da->data[i] += g.data[i];
        }
      }
      break;

    case Op::kGatherRows: {
      if (Tensor* dx = maybe(n.args[0])) {
        const int cols = n.value.cols();
        for (size_t k = 0; k < n.idx.size(); ++k) {
          double* dst = dx->data.data() + static_cast<size_t>(n.idx[k]) * cols;
          const double* src = g.data.data() + k * cols;
          for (int f = 0; f < cols; ++f) dst[f] += src[f];
        }
      }
      break;
    }

    case Op::kScatterUpdate: {
      const int cols = n.value.cols();
      if (Tensor* drows = maybe(n.args[1])) {
        for (size_t k = 0; k < n.idx.size(); ++k) {
          const double* src = g.data.data() + static_cast<size_t>(n.idx[k]) * cols;
          double* dst = drows->data.data() + k * cols;
          for (int f = 0; f < cols; ++f) dst[f] += src[f];
        }
      }
      if (Tensor* dbase = maybe(n.args[0])) {
        std::vector<uint8_t> replaced(n.value.rows(), 0);
        for (int r : n.idx) replaced[r] = 1;
        for (int i = 0; i < n.value.rows(); ++i) {
          if (replaced[i]) continue;
          const double* src = g.data.data() + static_cast<size_t>(i) * cols;
          double* dst = dbase->data.data() + static_cast<size_t>(i) * cols;
          for (int f = 0; f < cols; ++f) dst[f] += src[f];
        }
      }
      break;
    }

    case Op::kSegmentSum: {
      if (Tensor* dx = maybe(n.args[0])) {
        const int cols = n.value.cols();
        for (size_t k = 0; k < n.idx.size(); ++k) {
          const double* src = g.data.data() + static_cast<size_t>(n.idx[k]) * cols;
          double* dst = dx->data.data() + k * cols;
          for (int f = 0; f < cols; ++f) dst[f] += src[f];
        }
      }
      break;
    }

    case Op::kMeanRows: {
      if (Tensor* dx = maybe(n.args[0])) {
        const int rows = nodes_[n.args[0]].value.shape[0];
        const int cols = n.value.numel();
        for (int i = 0; i < rows; ++i) {
          for (int f = 0; f < cols; ++f)
            dx->data[static_cast<size_t>(i) * cols + f] += g.data[f] / rows;
        }
      }
      break;
    }

    case Op::kReshape: {
      if (Tensor* dx = maybe(n.args[0])) {
        for (size_t i = 0; i < g.data.size(); ++i) dx->data[i] += g.data[i];
      }
      break;
    }

    case Op::kMseL2: {
      const double gl = g.data[0];
      const Tensor& pv = nodes_[n.args[0]].value;
      if (Tensor* dp = maybe(n.args[0])) {
        for (int i = 0; i < pv.numel(); ++i) {
          if (!n.mask[i]) continue;
          dp->data[i] += gl * 2.0 * (pv.data[i] - n.target.data[i]) / n.aux_int;
        }
      }
      for (size_t k = 1; k < n.args.size(); ++k) {
        if (Tensor* dp = maybe(n.args[k])) {
          const Tensor& theta = nodes_[n.args[k]].value;
          for (size_t i = 0; i < theta.data.size(); ++i)
            dp->data[i] += gl * 2.0 * n.lambda * theta.data[i];
        }
      }
      break;
    }
  }
}

Tensor& ParamStore::add_glorot(const std::string& name, int fan_out, int fan_in, Rng& rng) {
  Entry e;
  e.name = name;
  e.value = Tensor::zeros({fan_out, fan_in});
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  for (double& v : e.value.data) v = rng.uniform(-bound, bound);
  e.m = Tensor::zeros(e.value.shape);
  e.v = Tensor::zeros(e.value.shape);
  entries_.push_back(std::move(e));
  return entries_.back().value;
}

Tensor& ParamStore::add_zeros(const std::string& name, std::vector<int> shape) {
  Entry e;
  e.name = name;
  e.value = Tensor::zeros(shape);
  e.m = Tensor::zeros(shape);
  e.v = Tensor::zeros(std::move(shape));
  entries_.push_back(std::move(e));
  return entries_.back().value;
}

int ParamStore::index_of(const std::string& name) const {
  for (int i = 0; i < size(); ++i) {
    if (entries_[i].name == name) return i;
  }
  return -1;
}

int64_t ParamStore::total_param_count() const {
  int64_t n = 0;
  for (const auto& e : entries_) n += e.value.numel();
  return n;
}

std::vector<double> ParamStore::flatten() const {
  std::vector<double> flat;
  flat.reserve(total_param_count());
  for (const auto& e : entries_) flat.insert(flat.end(), e.value.data.begin(), e.value.data.end());
  return flat;
}

void ParamStore::unflatten(std::span<const double> flat) {
  size_t off = 0;
  for (auto& e : entries_) {
    if (off + e.value.data.size() > flat.size()) throw std::invalid_argument("unflatten: size mismatch");
    std::copy(flat.begin() + off, flat.begin() + off + e.value.data.size(), e.value.data.begin());
    off += e.value.data.size();
  }
  if (off != flat.size()) throw std::invalid_argument("unflatten: size mismatch");
}

std::vector<VarId> bind_params(Tape& tape, const ParamStore& params) {
  std::vector<VarId> vars;
  vars.reserve(params.size());
  for (int i = 0; i < params.size(); ++i) vars.push_back(tape.leaf(params.entry(i).value));
  return vars;
}

std::vector<Tensor> collect_grads(const Tape& tape, const std::vector<VarId>& vars,
                                  const ParamStore& params) {
  std::vector<Tensor> grads;
  grads.reserve(vars.size());
  for (size_t i = 0; i < vars.size(); ++i) {
    if (tape.has_grad(vars[i])) {
      grads.push_back(tape.grad(vars[i]));
    } else {
      grads.push_back(Tensor::zeros(params.entry(static_cast<int>(i)).value.shape));
    }
  }
  return grads;
}

void adam_step(ParamStore& params, const std::vector<Tensor>& grads, double lr, double beta1,
               double beta2, double eps) {
  if (!(lr > 0)) throw std::invalid_argument("adam_step: lr must be positive");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
    throw std::invalid_argument("adam_step: betas must be in [0,1)");
  if (static_cast<int>(grads.size()) != params.size())
    throw std::invalid_argument("adam_step: gradient count mismatch");
  params.step_++;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(params.step_));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(params.step_));
  for (int i = 0; i < params.size(); ++i) {
    auto& e = params.entries_[i];
    const auto& gd = grads[i].data;
    if (gd.size() != e.value.data.size()) throw std::invalid_argument("adam_step: gradient shape mismatch");
    for (size_t k = 0; k < gd.size(); ++k) {
      e.m.data[k] = beta1 * e.m.data[k] + (1.0 - beta1) * gd[k];
      e.v.data[k] = beta2 * e.v.data[k] + (1.0 - beta2) * gd[k] * gd[k];
      const double mhat = e.m.data[k] / bc1;
      const double vhat = e.v.data[k] / bc2;
      e.value.data[k] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

double grad_check(const std::function<double(std::span<const double>, std::span<double>)>& f,
                  std::vector<double> point, double h) {
  if (!(h > 0)) throw std::invalid_argument("grad_check: h must be positive");
  std::vector<double> analytic(point.size(), 0.0);
  f(point, analytic);
  double max_err = 0;
  std::vector<double> none;
  for (size_t i = 0; i < point.size(); ++i) {
    const double orig = point[i];
    point[i] = orig + h;
    const double fp = f(point, none);
    point[i] = orig - h;
    const double fm = f(point, none);
    point[i] = orig;
    const double numeric = (fp - fm) / (2.0 * h);
    const double err =
        std::abs(analytic[i] - numeric) / std::max(1e-8, std::abs(analytic[i]) + std::abs(numeric));
    max_err = std::max(max_err, err);
  }
  return max_err;
}

}  // namespace ndt
