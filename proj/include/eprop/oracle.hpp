#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "eprop/network.hpp"
#include "eprop/trainer.hpp"
#include "eprop/utterance.hpp"

namespace eprop {

/// Gradients of the accumulated cross-entropy for a single-layer network.
struct OracleGrads {
  Matrix w_in;   // n_neurons x n_inputs (dense, includes masked positions)
  Matrix w_rec;  // n_neurons x n_neurons
  Matrix w_out;  // n_outputs x n_neurons
  std::vector<double> bias;
};

struct GradientEntry {
  std::string name;
  double max_abs_diff = 0.0;
  double rel_error = 0.0;  // ||a - b|| / ||b||
  double cosine = 1.0;
};

struct GradientReport {
  std::vector<GradientEntry> entries;

  const GradientEntry& operator[](const std::string& name) const {
    for (const auto& e : entries)
      if (e.name == name) return e;
    throw ShapeError("no gradient entry named " + name);
  }
};

/// Elementwise comparison of two flattened gradients.
inline GradientEntry compare_flat(const std::string& name, const double* a, const double* b,
                                  size_t n) {
  GradientEntry e;
  e.name = name;
  double dot = 0.0, na = 0.0, nb = 0.0, diff2 = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i];
    e.max_abs_diff = std::max(e.max_abs_diff, std::abs(d));
    diff2 += d * d;
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  e.rel_error = nb > 0.0 ? std::sqrt(diff2) / std::sqrt(nb)
                         : (na > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
  e.cosine = (na > 0.0 && nb > 0.0) ? dot / (std::sqrt(na) * std::sqrt(nb)) : 1.0;
  return e;
}

namespace oracle_detail {

/// Everything the reverse pass needs, captured step by step from the same
/// forward_step the trainer uses.
struct ForwardTape {
  int n_steps = 0, n_neurons = 0, n_outputs = 0;
  std::vector<std::vector<double>> z, psi, v;       // [t][j], post-update
  std::vector<std::vector<double>> pi;              // [t][k]
  std::vector<std::vector<double>> target;          // [t][k] one-hot
};

inline ForwardTape run_forward(const NetworkParams& net, const Utterance& utt) {
  ForwardTape tape;
  tape.n_steps = utt.n_frames();
  tape.n_neurons = net.n_total_neurons();
  tape.n_outputs = net.n_outputs();

  std::vector<LayerState> states;
  states.emplace_back(net.layers[0].n_neurons(), net.model_kind);
  ReadoutState readout(net.n_outputs());
  std::vector<double> input(net.n_inputs());

  for (int t = 0; t < tape.n_steps; ++t) {
    for (int c = 0; c < utt.n_channels(); ++c) input[c] = utt.features(t, c);
    forward_step(net, states, input, readout);
    tape.z.push_back(states[0].z);
    tape.psi.push_back(states[0].psi);
    std::vector<double> v_now(tape.n_neurons);
    for (int j = 0; j < tape.n_neurons; ++j) v_now[j] = states[0].h[j].v;
    tape.v.push_back(std::move(v_now));
    tape.pi.push_back(readout.pi);
    std::vector<double> target(tape.n_outputs, 0.0);
    target[utt.labels[t]] = 1.0;
    tape.target.push_back(std::move(target));
  }
  return tape;
}

}  // namespace oracle_detail

/// Reverse-mode gradients through the unrolled single-layer network, with
/// the spike function replaced by the model's pseudo-derivative and the
/// spike's effect on its own reset treated as a constant (the same
/// factorization the per-synapse recursions are built on). Set
/// `detach_reset = false` to also differentiate the reset paths; that
/// variant exists for illustration only.
inline OracleGrads bptt_gradient(const NetworkParams& net, const Utterance& utt,
                                 bool detach_reset = true) {
  if (net.layers.size() != 1) throw ShapeError("bptt_gradient: single-layer networks only");
  if (net.n_total_neurons() > 32) throw ShapeError("bptt_gradient: at most 32 neurons");
  if (utt.n_frames() > 64) throw ShapeError("bptt_gradient: at most 64 steps");

  const LayerParams& layer = net.layers[0];
  const NeuronParams& p = net.neuron;
  const int n = net.n_total_neurons();
  const int n_out = net.n_outputs();
  const int t_max = utt.n_frames();
  const ModelKind kind = net.model_kind;

  const oracle_detail::ForwardTape tape = oracle_detail::run_forward(net, utt);

  auto z_at = [&](int t, int j) { return t >= 0 ? tape.z[t][j] : 0.0; };

  OracleGrads g;
  g.w_in = Matrix(n, net.n_inputs());
  g.w_rec = Matrix(n, n);
  g.w_out = Matrix(n_out, n);
  g.bias.assign(n_out, 0.0);

  // lambda[t] per neuron, kept for all steps because the non-detached
  // STDP-ALIF reset couples z^t to step t + t_refr + 1.
  std::vector<std::vector<double>> lam_v(t_max + 2, std::vector<double>(n, 0.0));
  std::vector<std::vector<double>> lam_a(t_max + 2, std::vector<double>(n, 0.0));
  std::vector<double> g_y(n_out, 0.0);

  for (int t = t_max - 1; t >= 0; --t) {
    for (int k = 0; k < n_out; ++k)
      g_y[k] = (tape.pi[t][k] - tape.target[t][k]) + p.kappa * g_y[k];

    for (int k = 0; k < n_out; ++k) {
      for (int j = 0; j < n; ++j) g.w_out(k, j) += g_y[k] * tape.z[t][j];
      g.bias[k] += g_y[k];
    }

    for (int j = 0; j < n; ++j) {
      const double beta_j = layer.beta_per_neuron[j];
      const double psi_t = tape.psi[t][j];

      // Total derivative wrt z^t_j: readout, recurrent drive into the
      // next step, and (ALIF family) the adaptation increment.
      double gz = 0.0;
      for (int k = 0; k < n_out; ++k) gz += net.w_out(k, j) * g_y[k];
      if (t + 1 < t_max) {
        for (int i = 0; i < n; ++i)
          if (i != j) gz += layer.w_rec(i, j) * lam_v[t + 1][i];
        if (kind != ModelKind::Izhikevich) gz += lam_a[t + 1][j];
      }

      if (!detach_reset && t + 1 < t_max) {
        switch (kind) {
          case ModelKind::Alif:
            gz += -p.v_th * lam_v[t + 1][j];
            break;
          case ModelKind::StdpAlif: {
            gz += -p.alpha * tape.v[t][j] * lam_v[t + 1][j];
            const int t_future = t + p.t_refr;
            if (p.t_refr >= 1 && t_future + 1 < t_max)
              gz += -p.alpha * tape.v[t_future][j] * lam_v[t_future + 1][j];
            break;
          }
          case ModelKind::Izhikevich: {
            const double v_t = tape.v[t][j];
            const double v_tilde = v_t - (v_t + 65.0) * tape.z[t][j];
            gz += lam_v[t + 1][j] * ((6.0 + 0.08 * v_tilde) * -(v_t + 65.0) - 2.0);
            gz += lam_a[t + 1][j] * (-0.004 * (v_t + 65.0) + 1.96);
            break;
          }
        }
      }

      // Direct hidden-to-hidden transition t -> t+1 (z-paths excluded;
      // they are carried by gz via the pseudo-derivative below).
      double j_vv = 0.0, j_va = 0.0, j_av = 0.0, j_aa = 0.0;
      switch (kind) {
        case ModelKind::Alif:
          j_vv = p.alpha;
          j_aa = p.rho;
          break;
        case ModelKind::StdpAlif: {
          const double z_refr_ago = p.t_refr >= 1 ? z_at(t - p.t_refr, j) : 0.0;
          j_vv = p.alpha * (1.0 - tape.z[t][j] - z_refr_ago);
          j_aa = p.rho;
          break;
        }
        case ModelKind::Izhikevich:
          j_vv = (1.0 - tape.z[t][j]) * (6.0 + 0.08 * tape.v[t][j]);
          j_va = -1.0;
          j_av = 0.004 * (1.0 - tape.z[t][j]);
          j_aa = 0.98;
          break;
      }

      const double dz_dv = psi_t;
      const double dz_da = kind == ModelKind::Izhikevich ? 0.0 : -beta_j * psi_t;
      lam_v[t][j] = dz_dv * gz + j_vv * lam_v[t + 1][j] + j_av * lam_a[t + 1][j];
      lam_a[t][j] = dz_da * gz + j_va * lam_v[t + 1][j] + j_aa * lam_a[t + 1][j];

      for (int i = 0; i < net.n_inputs(); ++i)
        g.w_in(j, i) += lam_v[t][j] * utt.features(t, i);
      for (int i = 0; i < n; ++i)
        if (i != j) g.w_rec(j, i) += lam_v[t][j] * z_at(t - 1, i);
    }
  }
  return g;
}

/// Central finite differences of the cross-entropy with respect to the
/// readout parameters. Spikes do not depend on the readout, so they are
/// recorded once and the loss is re-evaluated from the recorded trains.
struct ReadoutGrads {
  Matrix w_out;
  std::vector<double> bias;
};

inline ReadoutGrads finite_difference_readout(const NetworkParams& net, const Utterance& utt,
                                              double h = 1e-5) {
  const oracle_detail::ForwardTape tape = [&] {
    if (net.layers.size() != 1) throw ShapeError("finite_difference_readout: single layer only");
    return oracle_detail::run_forward(net, utt);
  }();
  const int n = tape.n_neurons, n_out = tape.n_outputs, t_max = tape.n_steps;

  auto loss = [&](const Matrix& w_out, const std::vector<double>& bias) {
    std::vector<double> y(n_out, 0.0), pi(n_out, 0.0);
    double e = 0.0;
    for (int t = 0; t < t_max; ++t) {
      for (int k = 0; k < n_out; ++k) {
        double acc = net.neuron.kappa * y[k] + bias[k];
        for (int j = 0; j < n; ++j) acc += w_out(k, j) * tape.z[t][j];
        y[k] = acc;
      }
      softmax(y, pi);
      for (int k = 0; k < n_out; ++k)
        e -= tape.target[t][k] * std::log(std::max(pi[k], 1e-12));
    }
    return e;
  };

  ReadoutGrads g;
  g.w_out = Matrix(n_out, n);
  g.bias.assign(n_out, 0.0);
  Matrix w = net.w_out;
  std::vector<double> b = net.bias;
  for (int k = 0; k < n_out; ++k) {
    for (int j = 0; j < n; ++j) {
      const double orig = w(k, j);
      w(k, j) = orig + h;
      const double e_plus = loss(w, b);
      w(k, j) = orig - h;
      const double e_minus = loss(w, b);
      w(k, j) = orig;
      g.w_out(k, j) = (e_plus - e_minus) / (2.0 * h);
    }
    const double orig = b[k];
    b[k] = orig + h;
    const double e_plus = loss(w, b);
    b[k] = orig - h;
    const double e_minus = loss(w, b);
    b[k] = orig;
    g.bias[k] = (e_plus - e_minus) / (2.0 * h);
  }
  return g;
}

/// Scatter per-synapse e-prop gradient accumulators into dense matrices
/// so they line up with the oracle's output.
inline Matrix densify(const std::vector<double>& grads, const SparsityPattern& pattern,
                      int rows, int cols) {
  Matrix out(rows, cols);
  for (int j = 0; j < rows; ++j)
    for (int s = pattern.row_offsets[j]; s < pattern.row_offsets[j + 1]; ++s)
      out(j, pattern.col_index[s]) = grads[s];
  return out;
}

/// Compare e-prop gradients against oracle gradients matrix by matrix.
/// Masked positions are excluded (they are frozen, not approximated).
inline GradientReport compare(const NetworkParams& net, const GradBuffers& eprop_grads,
                              const OracleGrads& oracle_grads) {
  GradientReport report;
  const LayerParams& layer = net.layers[0];

  auto masked_compare = [&](const std::string& name, const std::vector<double>& sparse,
                            const SparsityPattern& pattern, const Matrix& dense) {
    std::vector<double> a, b;
    a.reserve(sparse.size());
    b.reserve(sparse.size());
    for (int j = 0; j < dense.rows(); ++j)
      for (int s = pattern.row_offsets[j]; s < pattern.row_offsets[j + 1]; ++s) {
        a.push_back(sparse[s]);
        b.push_back(dense(j, pattern.col_index[s]));
      }
    report.entries.push_back(compare_flat(name, a.data(), b.data(), a.size()));
  };

  masked_compare("w_in", eprop_grads.layers[0].g_in, layer.active_in, oracle_grads.w_in);
  masked_compare("w_rec", eprop_grads.layers[0].g_rec, layer.active_rec, oracle_grads.w_rec);
  report.entries.push_back(compare_flat("w_out", eprop_grads.g_out.data(),
                                        oracle_grads.w_out.data(), eprop_grads.g_out.size()));
  report.entries.push_back(compare_flat("bias", eprop_grads.g_b.data(),
                                        oracle_grads.bias.data(), eprop_grads.g_b.size()));
  return report;
}

}  // namespace eprop
