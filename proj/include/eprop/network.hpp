#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "eprop/matrix.hpp"
#include "eprop/neuron.hpp"

namespace eprop {

enum class BroadcastMode { Random, Symmetric, Adaptive };

inline const char* to_string(BroadcastMode m) {
  switch (m) {
    case BroadcastMode::Random: return "random";
    case BroadcastMode::Symmetric: return "symmetric";
    case BroadcastMode::Adaptive: return "adaptive";
  }
  return "?";
}

inline BroadcastMode broadcast_mode_from_string(const std::string& s) {
  if (s == "random") return BroadcastMode::Random;
  if (s == "symmetric") return BroadcastMode::Symmetric;
  if (s == "adaptive") return BroadcastMode::Adaptive;
  throw ConfigError("unknown broadcast mode: " + s);
}

/// One recurrent layer: fan-in weights from the input (or previous layer),
/// intra-layer recurrent weights, and the per-neuron adaptation strength
/// (0 for the LIF subset). Masks mark the trainable entries; masked
/// entries are zero and stay zero.
struct LayerParams {
  Matrix w_in;
  Matrix w_rec;
  std::vector<uint8_t> mask_in;   // row-major, 1 = trainable
  std::vector<uint8_t> mask_rec;
  SparsityPattern active_in;      // derived from mask_in
  SparsityPattern active_rec;
  std::vector<double> beta_per_neuron;

  int n_neurons() const { return w_rec.rows(); }
  int fan_in() const { return w_in.cols(); }

  void rebuild_patterns() {
    active_in = SparsityPattern::from_mask(mask_in, w_in.rows(), w_in.cols());
    active_rec = SparsityPattern::from_mask(mask_rec, w_rec.rows(), w_rec.cols());
  }
};

struct NetworkConfig {
  int n_layers = 1;
  int n_total = 800;   // neurons across all layers
  int n_inputs = 39;
  int n_outputs = 61;
  ModelKind model = ModelKind::Alif;
  BroadcastMode broadcast = BroadcastMode::Symmetric;
  double sparsity = 0.8;       // fraction of entries masked off at init
  double lif_fraction = 0.25;  // fraction of neurons with beta = 0
  bool clip_eligibility = true;
  NeuronParams neuron;

  void validate() const {
    if (n_layers < 1 || n_layers > 3) throw ConfigError("n_layers must be 1, 2 or 3");
    if (n_total < n_layers) throw ConfigError("n_total must be positive per layer");
    if (n_inputs <= 0 || n_outputs <= 0) throw ConfigError("sizes must be positive");
    if (sparsity < 0.0 || sparsity >= 1.0) throw ConfigError("sparsity must be in [0,1)");
    if (lif_fraction < 0.0 || lif_fraction > 1.0) throw ConfigError("lif_fraction in [0,1]");
    neuron.validate();
  }
};

/// All trainable parameters plus the fixed sparsity structure.
struct NetworkParams {
  std::vector<LayerParams> layers;
  Matrix w_out;                    // n_outputs x n_total
  std::vector<double> bias;        // n_outputs
  std::vector<Matrix> b_feedback;  // per layer, n_neurons x n_outputs
  BroadcastMode broadcast_mode = BroadcastMode::Symmetric;
  ModelKind model_kind = ModelKind::Alif;
  bool clip_eligibility = true;
  NeuronParams neuron;

  int n_outputs() const { return w_out.rows(); }
  int n_inputs() const { return layers.empty() ? 0 : layers.front().fan_in(); }
  int n_total_neurons() const {
    int n = 0;
    for (const auto& l : layers) n += l.n_neurons();
    return n;
  }
  /// Column offset of layer r's neurons inside w_out.
  int layer_offset(int r) const {
    int off = 0;
    for (int i = 0; i < r; ++i) off += layers[i].n_neurons();
    return off;
  }
};

namespace detail {

/// Sample every entry from N(0, 1/fan_in), then zero out `n_masked`
/// uniformly chosen positions (excluding `forbidden` positions, which are
/// masked unconditionally — used for the recurrent diagonal).
inline void init_weight_matrix(Matrix& w, std::vector<uint8_t>& mask, int fan_in,
                               double sparsity, bool zero_diagonal, std::mt19937_64& rng) {
  const int rows = w.rows(), cols = w.cols();
  std::normal_distribution<double> gauss(0.0, 1.0 / std::sqrt(static_cast<double>(fan_in)));
  mask.assign(w.size(), 1);
  for (size_t i = 0; i < w.size(); ++i) w.data()[i] = gauss(rng);

  std::vector<int> candidates;
  candidates.reserve(w.size());
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      if (zero_diagonal && r == c) {
        w(r, c) = 0.0;
        mask[static_cast<size_t>(r) * cols + c] = 0;
      } else {
        candidates.push_back(r * cols + c);
      }
    }
  const auto n_masked = static_cast<size_t>(sparsity * static_cast<double>(rows) * cols);
  if (n_masked > candidates.size())
    throw ConfigError("sparsity too high for matrix with zeroed diagonal");
  std::shuffle(candidates.begin(), candidates.end(), rng);
  for (size_t i = 0; i < n_masked; ++i) {
    w.data()[candidates[i]] = 0.0;
    mask[candidates[i]] = 0;
  }
}

}  // namespace detail

/// Build a network: Gaussian init with standard deviation 1/sqrt(fan-in),
/// 80% of the input/recurrent entries masked off (plus the recurrent
/// diagonal), a random quarter of each layer set to beta = 0, and
/// feedback weights per broadcast mode. Deterministic in `seed`.
inline NetworkParams init_network(const NetworkConfig& cfg, uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  NetworkParams net;
  net.broadcast_mode = cfg.broadcast;
  net.model_kind = cfg.model;
  net.clip_eligibility = cfg.clip_eligibility;
  net.neuron = cfg.neuron;

  const int per_layer = cfg.n_total / cfg.n_layers;
  if (per_layer <= 0) throw ConfigError("n_total too small for n_layers");

  for (int r = 0; r < cfg.n_layers; ++r) {
    LayerParams layer;
    const int fan_in = r == 0 ? cfg.n_inputs : per_layer;
    layer.w_in = Matrix(per_layer, fan_in);
    layer.w_rec = Matrix(per_layer, per_layer);
    detail::init_weight_matrix(layer.w_in, layer.mask_in, fan_in, cfg.sparsity, false, rng);
    detail::init_weight_matrix(layer.w_rec, layer.mask_rec, per_layer - 1 > 0 ? per_layer - 1 : 1,
                               cfg.sparsity, true, rng);
    layer.rebuild_patterns();

    layer.beta_per_neuron.assign(per_layer, cfg.neuron.beta);
    std::vector<int> order(per_layer);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_lif = static_cast<size_t>(std::lround(cfg.lif_fraction * per_layer));
    for (size_t i = 0; i < n_lif && i < order.size(); ++i) layer.beta_per_neuron[order[i]] = 0.0;

    net.layers.push_back(std::move(layer));
  }

  const int n_total = net.n_total_neurons();
  net.w_out = Matrix(cfg.n_outputs, n_total);
  {
    std::normal_distribution<double> gauss(0.0, 1.0 / std::sqrt(static_cast<double>(n_total)));
    for (size_t i = 0; i < net.w_out.size(); ++i) net.w_out.data()[i] = gauss(rng);
  }
  net.bias.assign(cfg.n_outputs, 0.0);

  for (int r = 0; r < cfg.n_layers; ++r) {
    Matrix b(per_layer, cfg.n_outputs);
    if (cfg.broadcast == BroadcastMode::Symmetric) {
      const int off = net.layer_offset(r);
      for (int j = 0; j < per_layer; ++j)
        for (int k = 0; k < cfg.n_outputs; ++k) b(j, k) = net.w_out(k, off + j);
    } else {
      // Same scale as w_out so learning-signal magnitudes are comparable
      // across the three modes.
      std::normal_distribution<double> gauss(0.0, 1.0 / std::sqrt(static_cast<double>(n_total)));
      for (size_t i = 0; i < b.size(); ++i) b.data()[i] = gauss(rng);
    }
    net.b_feedback.push_back(std::move(b));
  }
  return net;
}

/// Leaky softmax readout state.
struct ReadoutState {
  std::vector<double> y;
  std::vector<double> pi;

  explicit ReadoutState(int n_outputs = 0)
      : y(n_outputs, 0.0), pi(n_outputs, n_outputs > 0 ? 1.0 / n_outputs : 0.0) {}
};

inline void softmax(const std::vector<double>& y, std::vector<double>& pi) {
  const double y_max = *std::max_element(y.begin(), y.end());
  double sum = 0.0;
  for (size_t k = 0; k < y.size(); ++k) {
    pi[k] = std::exp(y[k] - y_max);
    sum += pi[k];
  }
  for (auto& v : pi) v /= sum;
}

/// Per-layer dynamic state for one sample.
struct LayerState {
  std::vector<HiddenState> h;
  std::vector<double> z;         // spikes of the current step
  std::vector<double> z_prev;    // spikes of the previous step
  std::vector<double> psi;       // pseudo-derivative of the current step
  std::vector<double> psi_prev;  // previous step's pseudo-derivative
  std::vector<double> v_prev;    // activation before the current step

  LayerState(int n, ModelKind kind)
      : h(n, HiddenState::initial(kind)), z(n, 0.0), z_prev(n, 0.0), psi(n, 0.0),
        psi_prev(n, 0.0), v_prev(n, HiddenState::initial(kind).v) {}
};

/// Advance every layer by one step (shallow to deep, so deeper layers see
/// the current spikes of the layer below), then update the leaky readout
/// from the spikes of all layers.
inline void forward_step(const NetworkParams& net, std::vector<LayerState>& states,
                         const std::vector<double>& input_vec, ReadoutState& out) {
  if (static_cast<int>(input_vec.size()) != net.n_inputs())
    throw ShapeError("forward_step: input length != network input size");

  NeuronParams p = net.neuron;
  for (size_t r = 0; r < net.layers.size(); ++r) {
    const LayerParams& layer = net.layers[r];
    LayerState& st = states[r];
    const int n = layer.n_neurons();
    std::swap(st.z, st.z_prev);
    std::swap(st.psi, st.psi_prev);

    const std::vector<double>& fan_in_sig = r == 0 ? input_vec : states[r - 1].z;
    for (int j = 0; j < n; ++j) {
      double drive = 0.0;
      const auto& ain = layer.active_in;
      for (int s = ain.row_offsets[j]; s < ain.row_offsets[j + 1]; ++s)
        drive += layer.w_in(j, ain.col_index[s]) * fan_in_sig[ain.col_index[s]];
      const auto& arec = layer.active_rec;
      for (int s = arec.row_offsets[j]; s < arec.row_offsets[j + 1]; ++s)
        drive += layer.w_rec(j, arec.col_index[s]) * st.z_prev[arec.col_index[s]];

      p.beta = layer.beta_per_neuron[j];
      st.v_prev[j] = st.h[j].v;
      const NeuronStepResult res = neuron_step(net.model_kind, st.h[j], drive, p);
      st.h[j] = res.state;
      st.z[j] = res.spike;
      st.psi[j] = res.psi;
    }
  }

  const int n_out = net.n_outputs();
  for (int k = 0; k < n_out; ++k) {
    double acc = net.neuron.kappa * out.y[k] + net.bias[k];
    int col = 0;
    for (const auto& st : states)
      for (double z : st.z) {
        if (z != 0.0) acc += net.w_out(k, col);
        ++col;
      }
    out.y[k] = acc;
  }
  softmax(out.y, out.pi);
}

/// Per-neuron learning signal L_j = sum_k B_jk (pi_k - pi*_k).
inline void learning_signal(const Matrix& b_feedback, const std::vector<double>& pi,
                            const std::vector<double>& pi_target, std::vector<double>& out) {
  const int n = b_feedback.rows(), k_max = b_feedback.cols();
  out.assign(n, 0.0);
  for (int j = 0; j < n; ++j) {
    double acc = 0.0;
    for (int k = 0; k < k_max; ++k) acc += b_feedback(j, k) * (pi[k] - pi_target[k]);
    out[j] = acc;
  }
}

/// Keep the feedback weights in sync with the readout: no-op for random
/// mode, re-tied transpose for symmetric, transposed delta for adaptive.
inline void update_broadcast(NetworkParams& net, const Matrix& delta_w_out) {
  if (net.broadcast_mode == BroadcastMode::Random) return;
  for (size_t r = 0; r < net.layers.size(); ++r) {
    const int off = net.layer_offset(static_cast<int>(r));
    Matrix& b = net.b_feedback[r];
    for (int j = 0; j < b.rows(); ++j)
      for (int k = 0; k < b.cols(); ++k) {
        if (net.broadcast_mode == BroadcastMode::Symmetric)
          b(j, k) = net.w_out(k, off + j);
        else
          b(j, k) += delta_w_out(k, off + j);
      }
  }
}

}  // namespace eprop
