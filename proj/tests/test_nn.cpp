#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "test_util.hpp"
#include "vpo/errors.hpp"
#include "vpo/nn.hpp"
#include "vpo/rng.hpp"

using namespace vpo;
using nn::Activation;

namespace {

nn::DenseNet single_layer(std::vector<double> w, std::vector<double> b, int out,
                          int in, Activation act) {
  nn::DenseNet net;
  nn::Layer layer;
  layer.out = out;
  layer.in = in;
  layer.w = std::move(w);
  layer.b = std::move(b);
  layer.act = act;
  net.layers.push_back(std::move(layer));
  return net;
}

nn::DenseNet random_net(Rng& rng, int max_layers = 3, int max_width = 16) {
  int n_layers = 1 + rng.uniform_int(max_layers);
  std::vector<int> widths;
  widths.push_back(1 + rng.uniform_int(max_width));
  std::vector<Activation> acts;
  const Activation pool[3] = {Activation::linear, Activation::tanh,
                              Activation::silu};
  for (int l = 0; l < n_layers; ++l) {
    widths.push_back(1 + rng.uniform_int(max_width));
    acts.push_back(pool[rng.uniform_int(3)]);
  }
  return nn::make_dense_net(widths, acts, rng.next_u64());
}

}  // namespace

TEST_CASE("forward: identity linear layer") {
  auto net = single_layer({1, 0, 0, 1}, {0, 0}, 2, 2, Activation::linear);
  std::vector<double> x = {1.0, 2.0};
  auto y = nn::forward(net, x);
  CHECK(y[0] == doctest::Approx(1.0));
  CHECK(y[1] == doctest::Approx(2.0));
}

TEST_CASE("forward: diagonal weights with bias") {
  auto net = single_layer({2, 0, 0, 3}, {1, 1}, 2, 2, Activation::linear);
  std::vector<double> x = {1.0, 1.0};
  auto y = nn::forward(net, x);
  // direct matrix arithmetic: [2*1+1, 3*1+1]
  CHECK(y[0] == doctest::Approx(3.0));
  CHECK(y[1] == doctest::Approx(4.0));
}

TEST_CASE("forward: tanh of zero input is zero") {
  auto net = single_layer({0.5, -0.25, 1.5, 0.75}, {0, 0}, 2, 2, Activation::tanh);
  std::vector<double> x = {0.0, 0.0};
  auto y = nn::forward(net, x);
  CHECK(y[0] == 0.0);
  CHECK(y[1] == 0.0);
}

TEST_CASE("forward: dimension mismatch raises ShapeError") {
  auto net = single_layer({1, 0, 0, 1}, {0, 0}, 2, 2, Activation::linear);
  std::vector<double> x = {1.0, 2.0, 3.0};
  CHECK_THROWS_AS(nn::forward(net, x), ShapeError);
}

TEST_CASE("forward: deterministic repeat") {
  Rng rng(7);
  auto net = random_net(rng);
  std::vector<double> x(static_cast<std::size_t>(net.input_width()));
  for (double& v : x) v = rng.normal();
  auto y1 = nn::forward(net, x);
  auto y2 = nn::forward(net, x);
  CHECK(y1 == y2);
}

TEST_CASE("backward: linear layer gradient is outer product") {
  auto net = single_layer({0.1, 0.2, 0.3, 0.4, 0.5, 0.6}, {0, 0}, 2, 3,
                          Activation::linear);
  std::vector<double> x = {1.0, -2.0, 3.0};
  std::vector<double> g = {2.0, -1.0};
  nn::ForwardTrace trace;
  nn::forward(net, x, &trace);
  auto tape = nn::make_tape(net);
  nn::backward(net, trace, g, tape);
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 3; ++j) {
      CHECK(tape.layers[0].dw[static_cast<std::size_t>(i * 3 + j)] ==
            doctest::Approx(g[static_cast<std::size_t>(i)] * x[static_cast<std::size_t>(j)]));
    }
    CHECK(tape.layers[0].db[static_cast<std::size_t>(i)] ==
          doctest::Approx(g[static_cast<std::size_t>(i)]));
  }
}

TEST_CASE("backward: zero upstream leaves a zero tape") {
  Rng rng(11);
  auto net = random_net(rng);
  std::vector<double> x(static_cast<std::size_t>(net.input_width()));
  for (double& v : x) v = rng.normal();
  std::vector<double> g(static_cast<std::size_t>(net.output_width()), 0.0);
  nn::ForwardTrace trace;
  nn::forward(net, x, &trace);
  auto tape = nn::make_tape(net);
  nn::backward(net, trace, g, tape);
  for (const auto& lg : tape.layers) {
    for (double v : lg.dw) CHECK(v == 0.0);
    for (double v : lg.db) CHECK(v == 0.0);
  }
}

TEST_CASE("backward: without a forward pass raises StateError") {
  Rng rng(3);
  auto net = random_net(rng);
  std::vector<double> g(static_cast<std::size_t>(net.output_width()), 1.0);
  nn::ForwardTrace trace;  // never filled
  auto tape = nn::make_tape(net);
  CHECK_THROWS_AS(nn::backward(net, trace, g, tape), StateError);
}

TEST_CASE("backward: matches central finite differences on random nets") {
  Rng rng(42);
  for (int trial = 0; trial < 20; ++trial) {
    auto net = random_net(rng);
    std::vector<double> x(static_cast<std::size_t>(net.input_width()));
    for (double& v : x) v = rng.normal();
    std::vector<double> g(static_cast<std::size_t>(net.output_width()));
    for (double& v : g) v = rng.normal();

    nn::ForwardTrace trace;
    nn::forward(net, x, &trace);
    auto tape = nn::make_tape(net);
    nn::backward(net, trace, g, tape);

    auto loss = [&]() {
      auto y = nn::forward(net, x);
      double acc = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) acc += g[i] * y[i];
      return acc;
    };
    auto res = testutil::check_gradients(net, tape, loss);
    CHECK_MESSAGE(res.ok, "trial ", trial, " max_rel_err=", res.max_rel_err);
  }
}

TEST_CASE("backward: accumulates across calls until cleared") {
  Rng rng(5);
  auto net = random_net(rng);
  std::vector<double> x(static_cast<std::size_t>(net.input_width()));
  for (double& v : x) v = rng.normal();
  std::vector<double> g(static_cast<std::size_t>(net.output_width()), 0.5);
  nn::ForwardTrace trace;
  nn::forward(net, x, &trace);
  auto tape1 = nn::make_tape(net);
  nn::backward(net, trace, g, tape1);
  auto tape2 = nn::make_tape(net);
  nn::backward(net, trace, g, tape2);
  nn::backward(net, trace, g, tape2);
  CHECK(tape2.accum_count == 2);
  for (std::size_t l = 0; l < tape1.layers.size(); ++l) {
    for (std::size_t i = 0; i < tape1.layers[l].dw.size(); ++i) {
      CHECK(tape2.layers[l].dw[i] == doctest::Approx(2.0 * tape1.layers[l].dw[i]));
    }
  }
  tape2.clear();
  CHECK(tape2.accum_count == 0);
  for (const auto& lg : tape2.layers) {
    for (double v : lg.dw) CHECK(v == 0.0);
  }
}

TEST_CASE("adam: first step moves each coordinate by about lr") {
  Rng rng(19);
  auto net = random_net(rng);
  auto before = nn::clone_params(net);
  auto tape = nn::make_tape(net);
  // inject a nonzero gradient everywhere
  for (auto& lg : tape.layers) {
    for (double& v : lg.dw) v = rng.normal() + (rng.uniform01() < 0.5 ? 2.0 : -2.0);
    for (double& v : lg.db) v = rng.normal() + (rng.uniform01() < 0.5 ? 2.0 : -2.0);
  }
  tape.accum_count = 1;
  nn::AdamConfig cfg;
  auto state = nn::make_adam(net, cfg);
  nn::adam_step(net, tape, state);
  CHECK(state.step == 1);
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    for (std::size_t i = 0; i < net.layers[l].w.size(); ++i) {
      double delta = net.layers[l].w[i] - before.layers[l].w[i];
      // bias-corrected m/sqrt(v) is sign(g) at step 1, up to eps
      CHECK(std::abs(delta) == doctest::Approx(cfg.lr).epsilon(1e-4));
    }
  }
  // tape zeroed afterwards
  CHECK(tape.accum_count == 0);
  for (const auto& lg : tape.layers) {
    for (double v : lg.dw) CHECK(v == 0.0);
  }
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  Rng rng(23);
  auto net = random_net(rng);
  auto before = nn::clone_params(net);
  auto tape = nn::make_tape(net);
  tape.accum_count = 1;
  auto state = nn::make_adam(net);
  nn::adam_step(net, tape, state);
  CHECK(nn::params_equal(net, before));
}

TEST_CASE("adam: two identical gradients, second step no larger than first") {
  Rng rng(29);
  auto net = random_net(rng);
  auto tape = nn::make_tape(net);
  auto grads = nn::make_tape(net);
  for (auto& lg : grads.layers) {
    for (double& v : lg.dw) v = rng.normal();
    for (double& v : lg.db) v = rng.normal();
  }
  auto state = nn::make_adam(net);
  auto snapshot0 = nn::clone_params(net);
  auto inject = [&]() {
    for (std::size_t l = 0; l < tape.layers.size(); ++l) {
      tape.layers[l].dw = grads.layers[l].dw;
      tape.layers[l].db = grads.layers[l].db;
    }
    tape.accum_count = 1;
  };
  inject();
  nn::adam_step(net, tape, state);
  auto snapshot1 = nn::clone_params(net);
  inject();
  nn::adam_step(net, tape, state);
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    for (std::size_t i = 0; i < net.layers[l].w.size(); ++i) {
      double d1 = std::abs(snapshot1.layers[l].w[i] - snapshot0.layers[l].w[i]);
      double d2 = std::abs(net.layers[l].w[i] - snapshot1.layers[l].w[i]);
      CHECK(d2 <= d1 + 1e-12);
    }
  }
}

TEST_CASE("adam: update trajectory matches the scalar recurrence oracle") {
  Rng rng(31);
  auto net = single_layer({0.5}, {0.25}, 1, 1, Activation::linear);
  auto tape = nn::make_tape(net);
  nn::AdamConfig cfg;
  cfg.lr = 0.05;
  auto state = nn::make_adam(net, cfg);
  testutil::ScalarAdam oracle_w, oracle_b;
  double w = 0.5, b = 0.25;
  for (int step = 0; step < 25; ++step) {
    double gw = rng.normal();
    double gb = rng.normal();
    tape.layers[0].dw[0] = gw;
    tape.layers[0].db[0] = gb;
    tape.accum_count = 1;
    nn::adam_step(net, tape, state);
    w += oracle_w.update(gw, cfg);
    b += oracle_b.update(gb, cfg);
    CHECK(net.layers[0].w[0] == doctest::Approx(w).epsilon(1e-12));
    CHECK(net.layers[0].b[0] == doctest::Approx(b).epsilon(1e-12));
  }
}

TEST_CASE("adam: non-finite gradient raises NumericError") {
  Rng rng(37);
  auto net = random_net(rng);
  auto tape = nn::make_tape(net);
  tape.layers[0].dw[0] = std::numeric_limits<double>::quiet_NaN();
  tape.accum_count = 1;
  auto state = nn::make_adam(net);
  CHECK_THROWS_AS(nn::adam_step(net, tape, state), NumericError);
}

TEST_CASE("adam: trajectory depends only on init, gradients, and hyperparams") {
  Rng rng(41);
  auto net_a = random_net(rng);
  auto net_b = nn::clone_params(net_a);
  auto state_a = nn::make_adam(net_a);
  auto state_b = nn::make_adam(net_b);
  auto tape_a = nn::make_tape(net_a);
  auto tape_b = nn::make_tape(net_b);
  Rng gs(59);
  for (int step = 0; step < 10; ++step) {
    for (std::size_t l = 0; l < tape_a.layers.size(); ++l) {
      for (std::size_t i = 0; i < tape_a.layers[l].dw.size(); ++i) {
        double g = gs.normal();
        tape_a.layers[l].dw[i] = g;
        tape_b.layers[l].dw[i] = g;
      }
      for (std::size_t i = 0; i < tape_a.layers[l].db.size(); ++i) {
        double g = gs.normal();
        tape_a.layers[l].db[i] = g;
        tape_b.layers[l].db[i] = g;
      }
    }
    tape_a.accum_count = tape_b.accum_count = 1;
    nn::adam_step(net_a, tape_a, state_a);
    nn::adam_step(net_b, tape_b, state_b);
  }
  CHECK(nn::params_equal(net_a, net_b));
}

TEST_CASE("clone: mutation independence and bit-exact forwards") {
  Rng rng(43);
  auto net = random_net(rng);
  auto copy = nn::clone_params(net);
  CHECK(nn::params_equal(net, copy));

  std::vector<double> x(static_cast<std::size_t>(net.input_width()));
  for (double& v : x) v = rng.normal();
  auto y_orig = nn::forward(net, x);
  auto y_copy = nn::forward(copy, x);
  CHECK(y_orig == y_copy);  // bit-exact

  net.layers[0].w[0] += 100.0;
  CHECK_FALSE(nn::params_equal(net, copy));
  auto y_copy2 = nn::forward(copy, x);
  CHECK(y_copy == y_copy2);
}

TEST_CASE("checkpoint: exact round trip") {
  Rng rng(47);
  auto net = random_net(rng);
  auto path = std::filesystem::temp_directory_path() / "vpo_ckpt_test.txt";
  nn::save_checkpoint(net, path.string());
  auto loaded = nn::load_checkpoint(path.string());
  CHECK(nn::params_equal(net, loaded));
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint: missing file raises ConfigError") {
  CHECK_THROWS_AS(nn::load_checkpoint("/nonexistent/path/net.ckpt"), ConfigError);
}

TEST_CASE("make_dense_net: seeded init is reproducible and fan-in scaled") {
  auto a = nn::make_dense_net({4, 8, 2}, {Activation::silu, Activation::linear}, 99);
  auto b = nn::make_dense_net({4, 8, 2}, {Activation::silu, Activation::linear}, 99);
  CHECK(nn::params_equal(a, b));
  for (double w : a.layers[0].w) CHECK(std::abs(w) <= 0.5);  // 1/sqrt(4)
  for (double bias : a.layers[0].b) CHECK(bias == 0.0);
}
