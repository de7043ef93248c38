#include <doctest.h>

#include <array>
#include <cmath>
#include <numeric>

#include "ndt/autodiff.hpp"
#include "ndt/netmodel.hpp"
#include "ndt/rng.hpp"
#include "ndt/serialize.hpp"

using namespace ndt;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.data) v = rng.uniform(-scale, scale);
  return t;
}

// Wraps a tape computation over a flat parameter vector for grad_check.
// `build` receives a tape plus the leaf var of each tensor slot and must
// return a scalar loss var.
template <typename Build>
std::function<double(std::span<const double>, std::span<double>)> tape_objective(
    std::vector<Tensor> slots, Build build) {
  return [slots, build](std::span<const double> x, std::span<double> grad_out) mutable {
    size_t off = 0;
    std::vector<Tensor> local = slots;
    for (auto& t : local) {
      std::copy(x.begin() + off, x.begin() + off + t.data.size(), t.data.begin());
      off += t.data.size();
    }
    Tape tape;
    std::vector<VarId> vars;
    for (auto& t : local) vars.push_back(tape.leaf(t));
    const VarId loss = build(tape, vars);
    if (!grad_out.empty()) {
      tape.backward(loss);
      size_t go = 0;
      for (size_t i = 0; i < vars.size(); ++i) {
        if (tape.has_grad(vars[i])) {
          const auto& g = tape.grad(vars[i]).data;
          std::copy(g.begin(), g.end(), grad_out.begin() + go);
        } else {
          std::fill(grad_out.begin() + go, grad_out.begin() + go + local[i].data.size(), 0.0);
        }
        go += local[i].data.size();
      }
    }
    return tape.scalar(loss);
  };
}

std::vector<double> flatten_all(const std::vector<Tensor>& slots) {
  std::vector<double> flat;
  for (const auto& t : slots) flat.insert(flat.end(), t.data.begin(), t.data.end());
  return flat;
}

// Reduce any tensor to a scalar through a fixed quadratic-free mixing
// vector, so gradient errors cannot cancel.
VarId mix_to_scalar(Tape& tape, VarId x) {
  const Tensor& v = tape.value(x);
  Tensor w = Tensor::zeros({1, v.cols()});
  for (int i = 0; i < v.cols(); ++i) w.data[i] = 0.3 + 0.1 * i;
  Tensor b = Tensor::zeros({1});
  VarId flat = v.rank() == 2 && v.rows() > 1
                   ? tape.mean_rows(x)
                   : tape.reshape(x, {v.numel()});
  const VarId wq = tape.constant(std::move(w));
  const VarId bq = tape.constant(std::move(b));
  return tape.dense(flat, wq, bq, Activation::kIdentity);
}

}  // namespace

TEST_CASE("dense layer forward cases") {
  Tape tape;
  SUBCASE("identity weights, zero bias, identity activation") {
    Tensor w = Tensor::zeros({3, 3});
    for (int i = 0; i < 3; ++i) w(i, i) = 1.0;
    const VarId x = tape.leaf(Tensor({3}, {1.5, -2.0, 0.25}));
    const VarId y = tape.dense(x, tape.constant(w), tape.constant(Tensor::zeros({3})),
                               Activation::kIdentity);
    CHECK(tape.value(y).data == std::vector<double>{1.5, -2.0, 0.25});
  }
  SUBCASE("zero weights leave the activated bias") {
    const VarId x = tape.leaf(Tensor({2}, {3.0, 4.0}));
    const VarId y = tape.dense(x, tape.constant(Tensor::zeros({3, 2})),
                               tape.constant(Tensor({3}, {1.0, -2.0, 0.5})), Activation::kRelu);
    CHECK(tape.value(y).data == std::vector<double>{1.0, 0.0, 0.5});
  }
  SUBCASE("shape mismatch") {
    const VarId x = tape.leaf(Tensor({3}, {1, 2, 3}));
    CHECK_THROWS_AS(tape.dense(x, tape.constant(Tensor::zeros({2, 4})),
                               tape.constant(Tensor::zeros({2})), Activation::kIdentity),
                    std::invalid_argument);
  }
}

TEST_CASE("dense gradient matches finite differences") {
  Rng rng(31);
  std::vector<Tensor> slots = {random_tensor({4}, rng), random_tensor({3, 4}, rng),
                               random_tensor({3}, rng)};
  auto f = tape_objective(slots, [](Tape& tape, const std::vector<VarId>& v) {
    const VarId y = tape.dense(v[0], v[1], v[2], Activation::kRelu);
    return mix_to_scalar(tape, y);
  });
  CHECK(grad_check(f, flatten_all(slots), 1e-6) < 1e-5);
}

TEST_CASE("gru cell closed forms at degenerate parameters") {
  const int H = 4;
  Tape tape;
  std::array<VarId, 9> zero_params{};
  // order: wz,uz,bz, wr,ur,br, wh,uh,bh
  for (int i = 0; i < 9; ++i) {
    const bool is_bias = i % 3 == 2;
    zero_params[i] = tape.constant(is_bias ? Tensor::zeros({H}) : Tensor::zeros({H, H}));
  }
  const VarId h = tape.leaf(Tensor({H}, {1.0, -2.0, 3.0, 0.5}));
  const VarId x = tape.leaf(Tensor({H}, {0.3, 0.1, -0.7, 0.9}));

  SUBCASE("all-zero parameters halve the state") {
    const VarId out = tape.gru_cell(h, x, zero_params);
    for (int i = 0; i < H; ++i) {
      CHECK(tape.value(out).data[i] == doctest::Approx(0.5 * tape.value(h).data[i]).epsilon(1e-12));
    }
  }
  SUBCASE("saturated update gate keeps the state") {
    auto params = zero_params;
    params[2] = tape.constant(Tensor({H}, {30, 30, 30, 30}));  // bz >> 0 so z ~ 1
    const VarId out = tape.gru_cell(h, x, params);
    for (int i = 0; i < H; ++i) {
      CHECK(tape.value(out).data[i] ==
            doctest::Approx(tape.value(h).data[i]).epsilon(1e-9));
    }
  }
}

TEST_CASE("gru gradients match finite differences (state, input, parameters)") {
  Rng rng(77);
  const int H = 8, D = 8, B = 3;
  std::vector<Tensor> slots;
  slots.push_back(random_tensor({B, H}, rng));  // state
  slots.push_back(random_tensor({B, D}, rng));  // input
  for (int g = 0; g < 3; ++g) {
    slots.push_back(random_tensor({H, D}, rng, 0.6));
    slots.push_back(random_tensor({H, H}, rng, 0.6));
    slots.push_back(random_tensor({H}, rng, 0.3));
  }
  auto f = tape_objective(slots, [](Tape& tape, const std::vector<VarId>& v) {
    std::array<VarId, 9> params;
    for (int i = 0; i < 9; ++i) params[i] = v[2 + i];
    const VarId y = tape.gru_cell(v[0], v[1], params);
    return mix_to_scalar(tape, y);
  });
  // h = 1e-5 keeps the difference quotient clear of roundoff for the
  // coordinates with near-zero gradient
  CHECK(grad_check(f, flatten_all(slots), 1e-5) < 1e-5);
}

TEST_CASE("weighted graph conv behaves on simple graphs") {
  SUBCASE("zero neighbor weights with identity self map pass positive input through") {
    NetworkGraph g;
    g.nodes = {{0, {0, 0}}, {1, {10, 0}}};
    g.links = {{0, 1, 100, 1.0}, {1, 0, 100, 1.0}};
    const ConvAdjacency adj = build_conv_adjacency(g);
    Tensor eye = Tensor::zeros({3, 3});
    for (int i = 0; i < 3; ++i) eye(i, i) = 1.0;
    Tape tape;
    const VarId z = tape.leaf(Tensor({2, 3}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6}));
    const VarId out = tape.graph_conv(z, tape.constant(eye),
                                      tape.constant(Tensor::zeros({3, 3})), adj);
    CHECK(tape.value(out).data == tape.value(z).data);
  }

  SUBCASE("two symmetric nodes stay symmetric") {
    NetworkGraph g;
    g.nodes = {{0, {0, 0}}, {1, {10, 0}}};
    g.links = {{0, 1, 100, 1.0}, {1, 0, 100, 1.0}};
    const ConvAdjacency adj = build_conv_adjacency(g);
    Rng rng(3);
    const Tensor ts = random_tensor({2, 3}, rng);
    const Tensor tn = random_tensor({2, 3}, rng);
    Tape tape;
    const VarId z = tape.leaf(Tensor({2, 3}, {0.7, -0.1, 0.4, 0.7, -0.1, 0.4}));
    const VarId out = tape.graph_conv(z, tape.constant(ts), tape.constant(tn), adj);
    for (int f = 0; f < 2; ++f) {
      CHECK(tape.value(out)(0, f) == doctest::Approx(tape.value(out)(1, f)).epsilon(1e-12));
    }
  }

  SUBCASE("isolated node keeps only its self term") {
    NetworkGraph g;
    g.nodes = {{0, {0, 0}}, {1, {10, 0}}, {2, {500, 500}}};
    g.links = {{0, 1, 100, 1.0}, {1, 0, 100, 1.0}};
    const ConvAdjacency adj = build_conv_adjacency(g);
    Rng rng(4);
    const Tensor ts = random_tensor({2, 2}, rng);
    Tape tape;
    Tensor zt = random_tensor({3, 2}, rng);
    const VarId z = tape.leaf(zt);
    const VarId out = tape.graph_conv(z, tape.constant(ts),
                                      tape.constant(random_tensor({2, 2}, rng)), adj);
    for (int f = 0; f < 2; ++f) {
      double pre = 0;
      for (int c = 0; c < 2; ++c) pre += ts(f, c) * zt(2, c);
      CHECK(tape.value(out)(2, f) == doctest::Approx(std::max(0.0, pre)).epsilon(1e-12));
    }
  }
}

TEST_CASE("graph conv gradient matches finite differences on a weighted graph") {
  // 5 nodes, mixed weights, includes an asymmetric-degree layout
  NetworkGraph g;
  for (int i = 0; i < 5; ++i) g.nodes.push_back({i, {i * 20.0, (i % 2) * 15.0}});
  auto add = [&](int a, int b, double w) {
    g.links.push_back({a, b, 100, w});
    g.links.push_back({b, a, 100, w});
  };
  add(0, 1, 0.8);
  add(1, 2, 1.5);
  add(2, 3, 0.4);
  add(3, 4, 2.0);
  add(0, 4, 0.6);
  add(1, 3, 1.1);
  const ConvAdjacency adj = build_conv_adjacency(g);

  Rng rng(19);
  std::vector<Tensor> slots = {random_tensor({5, 4}, rng), random_tensor({3, 4}, rng),
                               random_tensor({3, 4}, rng)};
  auto f = tape_objective(slots, [&adj](Tape& tape, const std::vector<VarId>& v) {
    const VarId y = tape.graph_conv(v[0], v[1], v[2], adj);
    return mix_to_scalar(tape, y);
  });
  CHECK(grad_check(f, flatten_all(slots), 1e-6) < 1e-5);
}

TEST_CASE("structural ops gradients match finite differences") {
  Rng rng(23);
  SUBCASE("gather, scatter, segment sum, concat") {
    std::vector<Tensor> slots = {random_tensor({4, 3}, rng), random_tensor({2, 3}, rng)};
    auto f = tape_objective(slots, [](Tape& tape, const std::vector<VarId>& v) {
      const VarId gathered = tape.gather_rows(v[0], {0, 2, 2, 3});
      const VarId seg = tape.segment_sum(gathered, {0, 1, 0, 1}, 2);
      const VarId updated = tape.scatter_update_rows(v[0], {1, 3}, v[1]);
      const std::array<VarId, 2> parts{seg, tape.gather_rows(updated, {0, 1})};
      const VarId cat = tape.hcat(parts);
      const std::array<VarId, 2> vparts{cat, cat};
      return mix_to_scalar(tape, tape.vcat(vparts));
    });
    CHECK(grad_check(f, flatten_all(slots), 1e-6) < 1e-5);
  }
  SUBCASE("add_n and mean_rows") {
    std::vector<Tensor> slots = {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)};
    auto f = tape_objective(slots, [](Tape& tape, const std::vector<VarId>& v) {
      const std::array<VarId, 3> terms{v[0], v[1], v[0]};
      return mix_to_scalar(tape, tape.mean_rows(tape.add_n(terms)));
    });
    CHECK(grad_check(f, flatten_all(slots), 1e-6) < 1e-5);
  }
}

TEST_CASE("mse_l2_loss values and gradient") {
  SUBCASE("exact zero at a perfect fit") {
    Tape tape;
    const VarId pred = tape.leaf(Tensor({3}, {1, 2, 3}));
    const VarId loss = tape.mse_l2_loss(pred, Tensor({3}, {1, 2, 3}), {1, 1, 1}, {}, 0.0);
    CHECK(tape.scalar(loss) == 0.0);
  }
  SUBCASE("mean of squares") {
    Tape tape;
    const VarId pred = tape.leaf(Tensor({2}, {2, 3}));
    const VarId loss = tape.mse_l2_loss(pred, Tensor({2}, {1, 2}), {1, 1}, {}, 0.0);
    CHECK(tape.scalar(loss) == doctest::Approx(1.0).epsilon(1e-15));
  }
  SUBCASE("matches a brute-force recomputation with regularization") {
    Rng rng(41);
    Tensor pred = random_tensor({6}, rng);
    Tensor target = random_tensor({6}, rng);
    Tensor theta = random_tensor({3, 2}, rng);
    const std::vector<uint8_t> mask = {1, 0, 1, 1, 0, 1};
    const double lambda = 1e-4;

    Tape tape;
    const VarId p = tape.leaf(pred);
    const VarId th = tape.leaf(theta);
    const std::array<VarId, 1> params{th};
    const VarId loss = tape.mse_l2_loss(p, target, mask, params, lambda);

    double expect = 0;
    int nv = 0;
    for (int i = 0; i < 6; ++i) {
      if (mask[i]) {
        expect += (pred.data[i] - target.data[i]) * (pred.data[i] - target.data[i]);
        nv++;
      }
    }
    expect /= nv;
    for (double v : theta.data) expect += lambda * v * v;
    CHECK(tape.scalar(loss) == doctest::Approx(expect).epsilon(1e-12));
  }
  SUBCASE("no valid entries") {
    Tape tape;
    const VarId pred = tape.leaf(Tensor({2}, {1, 2}));
    CHECK_THROWS_AS(tape.mse_l2_loss(pred, Tensor({2}, {0, 0}), {0, 0}, {}, 0.0),
                    std::invalid_argument);
  }
  SUBCASE("gradient flows to predictions and parameters") {
    Rng rng(43);
    std::vector<Tensor> slots = {random_tensor({5}, rng), random_tensor({2, 3}, rng)};
    const Tensor target = random_tensor({5}, rng);
    auto f = tape_objective(slots, [target](Tape& tape, const std::vector<VarId>& v) {
      const std::array<VarId, 1> params{v[1]};
      return tape.mse_l2_loss(v[0], target, {1, 1, 0, 1, 1}, params, 0.01);
    });
    CHECK(grad_check(f, flatten_all(slots), 1e-6) < 1e-5);
  }
}

TEST_CASE("shared parameters accumulate gradient across uses") {
  Rng rng(53);
  std::vector<Tensor> slots = {random_tensor({3}, rng), random_tensor({3}, rng),
                               random_tensor({3, 3}, rng)};
  auto f = tape_objective(slots, [](Tape& tape, const std::vector<VarId>& v) {
    const VarId b = tape.constant(Tensor::zeros({3}));
    const VarId y1 = tape.dense(v[0], v[2], b, Activation::kIdentity);
    const VarId y2 = tape.dense(v[1], v[2], b, Activation::kIdentity);
    // the same weight matrix also reused in sequence
    const VarId y3 = tape.dense(y1, v[2], b, Activation::kIdentity);
    const std::array<VarId, 2> parts{y3, y2};
    return mix_to_scalar(tape, tape.add_n(std::span<const VarId>(parts)));
  });
  CHECK(grad_check(f, flatten_all(slots), 1e-6) < 1e-5);
}

TEST_CASE("tape replay is deterministic") {
  Rng rng(61);
  const Tensor x = random_tensor({4}, rng);
  const Tensor w = random_tensor({4, 4}, rng);
  const Tensor target = random_tensor({4}, rng);
  auto run = [&] {
    Tape tape;
    const VarId xv = tape.leaf(x);
    const VarId wv = tape.leaf(w);
    const VarId y = tape.dense(xv, wv, tape.constant(Tensor::zeros({4})), Activation::kRelu);
    const std::array<VarId, 1> params{wv};
    const VarId loss = tape.mse_l2_loss(y, target, {1, 1, 1, 1}, params, 1e-3);
    tape.backward(loss);
    auto g = tape.grad(wv).data;
    g.push_back(tape.scalar(loss));
    return g;
  };
  CHECK(run() == run());
}

TEST_CASE("adam optimizer") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    Rng rng(1);
    ParamStore store;
    store.add_glorot("w", 3, 3, rng);
    const auto before = store.flatten();
    adam_step(store, {Tensor::zeros({3, 3})}, 0.01);
    CHECK(store.flatten() == before);
    CHECK(store.step() == 1);
  }
  SUBCASE("first step moves opposite the gradient with magnitude lr") {
    ParamStore store;
    store.add_zeros("w", {2});
    Tensor g = Tensor({2}, {0.5, -2.0});
    adam_step(store, {g}, 0.1, 0.9, 0.999, 1e-8);
    const auto w = store.flatten();
    // update = lr * g / (|g| + eps)
    CHECK(w[0] == doctest::Approx(-0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-9));
    CHECK(w[1] == doctest::Approx(0.1 * 2.0 / (2.0 + 1e-8)).epsilon(1e-9));
  }
  SUBCASE("descends a convex quadratic monotonically after warmup") {
    // f(w) = 0.5 * sum a_i w_i^2, a_i in [0.5, 2]
    ParamStore store;
    auto& w = store.add_zeros("w", {6});
    std::vector<double> a = {0.5, 0.8, 1.1, 1.4, 1.7, 2.0};
    Rng rng(9);
    for (double& v : w.data) v = rng.uniform(-2, 2);
    auto loss_of = [&] {
      double acc = 0;
      for (int i = 0; i < 6; ++i) acc += 0.5 * a[i] * w.data[i] * w.data[i];
      return acc;
    };
    std::vector<double> losses;
    for (int step = 0; step < 100; ++step) {
      losses.push_back(loss_of());
      Tensor g = Tensor::zeros({6});
      for (int i = 0; i < 6; ++i) g.data[i] = a[i] * w.data[i];
      adam_step(store, {g}, 0.05);
    }
    for (size_t i = 6; i < losses.size(); ++i) CHECK(losses[i] <= losses[i - 1]);
  }
  SUBCASE("hyperparameter validation") {
    ParamStore store;
    store.add_zeros("w", {1});
    CHECK_THROWS_AS(adam_step(store, {Tensor::zeros({1})}, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(adam_step(store, {Tensor::zeros({1})}, 0.1, 1.0), std::invalid_argument);
  }
}

TEST_CASE("grad_check harness calibration") {
  SUBCASE("linear function is exact") {
    auto f = [](std::span<const double> x, std::span<double> g) {
      double acc = 0;
      for (size_t i = 0; i < x.size(); ++i) acc += (0.5 + 0.25 * i) * x[i];
      if (!g.empty()) {
        for (size_t i = 0; i < x.size(); ++i) g[i] = 0.5 + 0.25 * i;
      }
      return acc;
    };
    CHECK(grad_check(f, {1.0, -2.0, 0.5}, 1e-6) < 1e-10);
  }
  SUBCASE("a planted 10% gradient fault is detected") {
    auto f = [](std::span<const double> x, std::span<double> g) {
      double acc = 0;
      for (double v : x) acc += v * v;
      if (!g.empty()) {
        for (size_t i = 0; i < x.size(); ++i) g[i] = 2.0 * x[i] * 1.1;  // corrupted
      }
      return acc;
    };
    CHECK(grad_check(f, {1.0, 2.0, -1.5}, 1e-6) > 1e-2);
  }
}

TEST_CASE("checkpoint round trip preserves parameters and optimizer state") {
  Rng rng(71);
  ParamStore store;
  store.add_glorot("layer0/w", 4, 3, rng);
  store.add_zeros("layer0/b", {4});
  store.add_glorot("layer1/w", 2, 4, rng);
  // dirty the moments with one step
  std::vector<Tensor> grads;
  for (int i = 0; i < store.size(); ++i) {
    Tensor g = Tensor::zeros(store.entry(i).value.shape);
    for (double& v : g.data) v = rng.uniform(-1, 1);
    grads.push_back(g);
  }
  adam_step(store, grads, 0.01);

  const std::string path = "/tmp/ndt_test_ckpt.bin";
  save_checkpoint(path, store);
  const ParamStore back = load_checkpoint(path);
  REQUIRE(back.size() == store.size());
  CHECK(back.step() == store.step());
  for (int i = 0; i < store.size(); ++i) {
    CHECK(back.entry(i).name == store.entry(i).name);
    CHECK(back.entry(i).value.shape == store.entry(i).value.shape);
    CHECK(back.entry(i).value.data == store.entry(i).value.data);
    CHECK(back.entry(i).m.data == store.entry(i).m.data);
    CHECK(back.entry(i).v.data == store.entry(i).v.data);
  }
}
