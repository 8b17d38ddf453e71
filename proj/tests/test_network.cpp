#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "eprop/network.hpp"

using namespace eprop;

namespace {

NetworkConfig tiny_config(int n_layers = 1, int n_total = 20) {
  NetworkConfig cfg;
  cfg.n_layers = n_layers;
  cfg.n_total = n_total;
  cfg.n_inputs = 7;
  cfg.n_outputs = 5;
  return cfg;
}

bool params_equal(const NetworkParams& a, const NetworkParams& b) {
  if (a.layers.size() != b.layers.size()) return false;
  for (size_t r = 0; r < a.layers.size(); ++r) {
    if (!(a.layers[r].w_in == b.layers[r].w_in)) return false;
    if (!(a.layers[r].w_rec == b.layers[r].w_rec)) return false;
    if (a.layers[r].mask_in != b.layers[r].mask_in) return false;
    if (a.layers[r].mask_rec != b.layers[r].mask_rec) return false;
    if (a.layers[r].beta_per_neuron != b.layers[r].beta_per_neuron) return false;
    if (!(a.b_feedback[r] == b.b_feedback[r])) return false;
  }
  return a.w_out == b.w_out && a.bias == b.bias;
}

}  // namespace

TEST_CASE("init is deterministic in the seed") {
  const NetworkConfig cfg = tiny_config();
  const NetworkParams a = init_network(cfg, 42);
  const NetworkParams b = init_network(cfg, 42);
  const NetworkParams c = init_network(cfg, 43);
  CHECK(params_equal(a, b));
  CHECK_FALSE(params_equal(a, c));
}

TEST_CASE("recurrent matrix: zero diagonal plus exact sparsity count") {
  NetworkConfig cfg = tiny_config(1, 50);
  const NetworkParams net = init_network(cfg, 1);
  const LayerParams& l = net.layers[0];
  const int n = l.n_neurons();

  int masked_off_diagonal = 0;
  for (int j = 0; j < n; ++j) {
    CHECK(l.w_rec(j, j) == 0.0);
    CHECK(l.mask_rec[j * n + j] == 0);
    for (int i = 0; i < n; ++i)
      if (i != j && l.mask_rec[j * n + i] == 0) {
        CHECK(l.w_rec(j, i) == 0.0);
        masked_off_diagonal++;
      }
  }
  CHECK(masked_off_diagonal == static_cast<int>(0.8 * n * n));

  int masked_in = 0;
  for (uint8_t m : l.mask_in)
    if (!m) masked_in++;
  CHECK(masked_in == static_cast<int>(0.8 * n * cfg.n_inputs));
}

TEST_CASE("lif subset size is round(0.25 N)") {
  for (int n : {20, 50, 27}) {
    const NetworkParams net = init_network(tiny_config(1, n), 3);
    int n_lif = 0;
    for (double b : net.layers[0].beta_per_neuron)
      if (b == 0.0) n_lif++;
    CHECK(n_lif == static_cast<int>(std::lround(0.25 * n)));
  }
}

TEST_CASE("three-layer split uses 266 neurons per layer at the default size") {
  NetworkConfig cfg;
  cfg.n_layers = 3;
  cfg.n_total = 800;
  const NetworkParams net = init_network(cfg, 1);
  REQUIRE(net.layers.size() == 3);
  for (const auto& l : net.layers) CHECK(l.n_neurons() == 266);
  CHECK(net.w_out.cols() == 798);
}

TEST_CASE("config validation") {
  NetworkConfig cfg = tiny_config();
  cfg.n_layers = 4;
  CHECK_THROWS_AS(init_network(cfg, 1), ConfigError);
  cfg = tiny_config();
  cfg.n_total = 0;
  CHECK_THROWS_AS(init_network(cfg, 1), ConfigError);
  cfg = tiny_config();
  cfg.n_inputs = -1;
  CHECK_THROWS_AS(init_network(cfg, 1), ConfigError);
}

TEST_CASE("symmetric feedback equals the readout transpose at init") {
  NetworkConfig cfg = tiny_config(2, 16);
  cfg.broadcast = BroadcastMode::Symmetric;
  const NetworkParams net = init_network(cfg, 9);
  for (size_t r = 0; r < net.layers.size(); ++r) {
    const int off = net.layer_offset(static_cast<int>(r));
    for (int j = 0; j < net.layers[r].n_neurons(); ++j)
      for (int k = 0; k < net.n_outputs(); ++k)
        REQUIRE(net.b_feedback[r](j, k) == net.w_out(k, off + j));
  }
}

TEST_CASE("forward: all-zero weights give a uniform softmax") {
  NetworkConfig cfg = tiny_config();
  NetworkParams net = init_network(cfg, 5);
  for (auto& l : net.layers) {
    l.w_in.fill(0.0);
    l.w_rec.fill(0.0);
  }
  net.w_out.fill(0.0);
  std::fill(net.bias.begin(), net.bias.end(), 0.0);

  std::vector<LayerState> states;
  for (const auto& l : net.layers) states.emplace_back(l.n_neurons(), net.model_kind);
  ReadoutState out(net.n_outputs());
  const std::vector<double> x(cfg.n_inputs, 1.0);
  for (int t = 0; t < 5; ++t) {
    forward_step(net, states, x, out);
    for (double pi : out.pi) CHECK(pi == Catch::Approx(1.0 / cfg.n_outputs));
  }
}

TEST_CASE("forward: wrong input length raises a shape error") {
  const NetworkParams net = init_network(tiny_config(), 5);
  std::vector<LayerState> states;
  states.emplace_back(net.layers[0].n_neurons(), net.model_kind);
  ReadoutState out(net.n_outputs());
  const std::vector<double> bad(3, 0.0);
  CHECK_THROWS_AS(forward_step(net, states, bad, out), ShapeError);
}

TEST_CASE("readout accumulator approaches c / (1 - kappa) under constant drive") {
  // y' = kappa y + c with c = bias; fixed point c / (1 - kappa) = 5c.
  NetworkConfig cfg = tiny_config();
  NetworkParams net = init_network(cfg, 5);
  for (auto& l : net.layers) {
    l.w_in.fill(0.0);
    l.w_rec.fill(0.0);
  }
  net.w_out.fill(0.0);
  const double c = 0.37;
  std::fill(net.bias.begin(), net.bias.end(), c);

  std::vector<LayerState> states;
  states.emplace_back(net.layers[0].n_neurons(), net.model_kind);
  ReadoutState out(net.n_outputs());
  const std::vector<double> x(cfg.n_inputs, 0.0);
  for (int t = 0; t < 200; ++t) forward_step(net, states, x, out);
  for (double y : out.y) CHECK(y == Catch::Approx(5.0 * c).epsilon(1e-9));
}

TEST_CASE("softmax: normalization and shift invariance of the argmax") {
  std::mt19937_64 rng(123);
  std::normal_distribution<double> gauss(0.0, 3.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> y(61);
    for (auto& v : y) v = gauss(rng);
    std::vector<double> pi(61);
    softmax(y, pi);
    double sum = 0.0;
    for (double p : pi) {
      CHECK(p > 0.0);
      sum += p;
    }
    REQUIRE(sum == Catch::Approx(1.0).margin(1e-12));

    std::vector<double> shifted = y;
    for (auto& v : shifted) v += 17.5;
    std::vector<double> pi2(61);
    softmax(shifted, pi2);
    const auto arg1 = std::max_element(pi.begin(), pi.end()) - pi.begin();
    const auto arg2 = std::max_element(pi2.begin(), pi2.end()) - pi2.begin();
    REQUIRE(arg1 == arg2);
  }
}

TEST_CASE("layer causality: a deeper layer cannot influence a shallower one") {
  NetworkConfig cfg = tiny_config(2, 16);
  const NetworkParams net = init_network(cfg, 77);
  std::mt19937_64 rng(7);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<LayerState> a, b;
  for (const auto& l : net.layers) {
    a.emplace_back(l.n_neurons(), net.model_kind);
    b.emplace_back(l.n_neurons(), net.model_kind);
  }
  // Perturb the deep layer's state in b only.
  for (auto& h : b[1].h) {
    h.v = 5.0;
    h.spike_history = 1;
  }
  ReadoutState out_a(net.n_outputs()), out_b(net.n_outputs());
  std::vector<double> x(cfg.n_inputs);
  for (int t = 0; t < 10; ++t) {
    for (auto& v : x) v = gauss(rng);
    forward_step(net, a, x, out_a);
    forward_step(net, b, x, out_b);
    for (int j = 0; j < net.layers[0].n_neurons(); ++j) {
      REQUIRE(a[0].h[j].v == b[0].h[j].v);
      REQUIRE(a[0].z[j] == b[0].z[j]);
    }
  }
}

TEST_CASE("learning signal") {
  Matrix b(3, 4);
  std::vector<double> pi{0.3, 0.2, 0.4, 0.1};
  std::vector<double> out;

  // pi == target -> zero signal.
  learning_signal(b, pi, pi, out);
  for (double l : out) CHECK(l == 0.0);

  // Unit row picks out one residual.
  b(1, 2) = 1.0;
  std::vector<double> target{0.3, 0.2, 0.2, 0.3};
  learning_signal(b, pi, target, out);
  CHECK(out[0] == 0.0);
  CHECK(out[1] == Catch::Approx(0.2));

  // Adding a constant to a full feedback row changes nothing because the
  // residual sums to zero.
  std::mt19937_64 rng(15);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix b1(3, 4), b2(3, 4);
  for (int j = 0; j < 3; ++j)
    for (int k = 0; k < 4; ++k) {
      b1(j, k) = gauss(rng);
      b2(j, k) = b1(j, k) + 3.14;
    }
  std::vector<double> pi_rand{0.25, 0.25, 0.3, 0.2};
  std::vector<double> tgt{0.0, 1.0, 0.0, 0.0};
  std::vector<double> l1, l2;
  learning_signal(b1, pi_rand, tgt, l1);
  learning_signal(b2, pi_rand, tgt, l2);
  for (int j = 0; j < 3; ++j) REQUIRE(l1[j] == Catch::Approx(l2[j]).margin(1e-12));
}

TEST_CASE("update_broadcast modes") {
  NetworkConfig cfg = tiny_config();
  Matrix delta(cfg.n_outputs, cfg.n_total);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> gauss(0.0, 0.1);
  for (size_t i = 0; i < delta.size(); ++i) delta.data()[i] = gauss(rng);

  SECTION("random: feedback never moves") {
    cfg.broadcast = BroadcastMode::Random;
    NetworkParams net = init_network(cfg, 4);
    const Matrix before = net.b_feedback[0];
    for (size_t i = 0; i < net.w_out.size(); ++i) net.w_out.data()[i] += delta.data()[i];
    update_broadcast(net, delta);
    CHECK(net.b_feedback[0] == before);
  }
  SECTION("symmetric: re-tied to the transpose after every update") {
    cfg.broadcast = BroadcastMode::Symmetric;
    NetworkParams net = init_network(cfg, 4);
    for (size_t i = 0; i < net.w_out.size(); ++i) net.w_out.data()[i] += delta.data()[i];
    update_broadcast(net, delta);
    for (int j = 0; j < net.b_feedback[0].rows(); ++j)
      for (int k = 0; k < net.b_feedback[0].cols(); ++k)
        REQUIRE(net.b_feedback[0](j, k) == net.w_out(k, j));
  }
  SECTION("adaptive: accumulates the transposed delta; zero delta is a no-op") {
    cfg.broadcast = BroadcastMode::Adaptive;
    NetworkParams net = init_network(cfg, 4);
    const Matrix before = net.b_feedback[0];
    Matrix zero(cfg.n_outputs, cfg.n_total);
    update_broadcast(net, zero);
    CHECK(net.b_feedback[0] == before);
    update_broadcast(net, delta);
    for (int j = 0; j < net.b_feedback[0].rows(); ++j)
      for (int k = 0; k < net.b_feedback[0].cols(); ++k)
        REQUIRE(net.b_feedback[0](j, k) == Catch::Approx(before(j, k) + delta(k, j)));
  }
}
