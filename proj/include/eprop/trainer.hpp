#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "eprop/network.hpp"
#include "eprop/utterance.hpp"

namespace eprop {

struct TrainConfig {
  double eta = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int batch_size = 32;
  int epochs = 10;
  int eval_every = 25;  // minibatches between validation evaluations
  uint64_t seed = 1;
  double c_reg = 50.0;     // firing-rate regularization strength
  double c_l2 = 1e-5;      // L2 regularization strength
  double f_target = 0.01;  // target firing rate per step
  int n_threads = 0;       // 0 = hardware concurrency

  void validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
    if (!(eta > 0.0)) throw ConfigError("eta must be > 0");
  }
};

struct MetricsRecord {
  long iter = 0;
  double xent = 0.0;          // mean cross-entropy per frame
  double miscls_pct = 0.0;    // % of frames with argmax != label
  double mean_rate_hz = 0.0;  // mean per-neuron firing rate
  double reg_err = 0.0;       // mean firing-rate regularization error
};

/// Appends MetricsRecord rows to a CSV file with a stable header.
class MetricsWriter {
 public:
  MetricsWriter() = default;
  explicit MetricsWriter(const std::string& path) { open(path); }

  void open(const std::string& path) {
    const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
    out_.open(path, std::ios::app);
    if (!out_) throw IoError("cannot open metrics file: " + path);
    if (fresh) out_ << "iter,split,xent,miscls_pct,mean_rate_hz,reg_err\n";
  }

  void append(const MetricsRecord& m, const std::string& split) {
    if (!out_.is_open()) return;
    char line[256];
    std::snprintf(line, sizeof(line), "%ld,%s,%.9g,%.9g,%.9g,%.9g\n", m.iter, split.c_str(),
                  m.xent, m.miscls_pct, m.mean_rate_hz, m.reg_err);
    out_ << line;
    out_.flush();
  }

 private:
  std::ofstream out_;
};

/// Total cross-entropy over a sequence of probability vectors against
/// dense targets, with the probability floored at 1e-12 inside the log.
inline double cross_entropy(const std::vector<std::vector<double>>& pi_seq,
                            const std::vector<std::vector<double>>& target_seq) {
  if (pi_seq.size() != target_seq.size())
    throw ShapeError("cross_entropy: sequence lengths differ");
  double e = 0.0;
  for (size_t t = 0; t < pi_seq.size(); ++t) {
    if (pi_seq[t].size() != target_seq[t].size())
      throw ShapeError("cross_entropy: vector lengths differ");
    for (size_t k = 0; k < pi_seq[t].size(); ++k)
      e -= target_seq[t][k] * std::log(std::max(pi_seq[t][k], 1e-12));
  }
  return e;
}

/// Linear learning-rate ramp over the first epoch, constant afterwards.
inline double lr_warmup(long iter_index, long iters_per_epoch, double eta) {
  return eta * std::min(1.0, static_cast<double>(iter_index + 1) /
                                 static_cast<double>(iters_per_epoch));
}

/// Per-sample firing-rate bookkeeping. `reg_sum` integrates the running
/// average's deviation from the target, which at sample end becomes the
/// shared gradient contribution of every afferent weight of that neuron.
struct RegState {
  std::vector<double> z_total;
  std::vector<double> reg_sum;
  long t_elapsed = 0;

  void reset(int n_neurons) {
    z_total.assign(n_neurons, 0.0);
    reg_sum.assign(n_neurons, 0.0);
    t_elapsed = 0;
  }

  void accumulate(const std::vector<double>& z, int offset, double f_target) {
    for (size_t j = 0; j < z.size(); ++j) {
      z_total[offset + j] += z[j];
      reg_sum[offset + j] +=
          z_total[offset + j] / static_cast<double>(t_elapsed + 1) - f_target;
    }
  }

  double f_av(int j) const {
    return t_elapsed > 0 ? z_total[j] / static_cast<double>(t_elapsed) : 0.0;
  }
};

/// Gradient contribution of the firing-rate regularizer, one value per
/// neuron (to be added to every unmasked afferent weight).
inline std::vector<double> firing_rate_reg(const RegState& reg, double c_reg) {
  if (reg.t_elapsed == 0) throw NumericError("firing_rate_reg: no elapsed steps");
  std::vector<double> out(reg.reg_sum.size());
  for (size_t j = 0; j < out.size(); ++j) out[j] = c_reg * reg.reg_sum[j];
  return out;
}

/// Firing-rate regularization error at sample end.
inline double firing_rate_reg_error(const RegState& reg, double f_target) {
  double e = 0.0;
  for (size_t j = 0; j < reg.z_total.size(); ++j) {
    const double d = f_target - reg.f_av(static_cast<int>(j));
    e += 0.5 * d * d;
  }
  return e;
}

/// L2 gradient contribution for one weight.
inline double l2_reg(double w, double c_l2) { return c_l2 * w; }

/// Adam moment pair for one parameter array.
struct AdamState {
  std::vector<double> m;
  std::vector<double> v2;

  void reset(size_t n) {
    m.assign(n, 0.0);
    v2.assign(n, 0.0);
  }
};

/// One Adam update: updates the moments, writes the weight deltas.
/// `step_index` is the 0-based count of previously applied updates.
inline void adam_apply(AdamState& st, std::span<const double> grad, double eta_eff,
                       double beta1, double beta2, long step_index,
                       std::span<double> delta_out) {
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_index + 1));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_index + 1));
  for (size_t i = 0; i < grad.size(); ++i) {
    st.m[i] = beta1 * st.m[i] + (1.0 - beta1) * grad[i];
    st.v2[i] = beta2 * st.v2[i] + (1.0 - beta2) * grad[i] * grad[i];
    const double m_hat = st.m[i] / bc1;
    const double v_hat = st.v2[i] / bc2;
    delta_out[i] = -eta_eff * m_hat / (std::sqrt(v_hat) + 1e-5);
  }
}

/// Full optimizer state: one moment pair per parameter array plus the
/// shared update counter.
struct OptimizerState {
  struct PerLayer {
    AdamState in, rec;
  };
  std::vector<PerLayer> layers;
  AdamState out, bias;
  long step_count = 0;

  void reset(const NetworkParams& net) {
    layers.resize(net.layers.size());
    for (size_t r = 0; r < net.layers.size(); ++r) {
      layers[r].in.reset(net.layers[r].active_in.col_index.size());
      layers[r].rec.reset(net.layers[r].active_rec.col_index.size());
    }
    out.reset(net.w_out.size());
    bias.reset(net.bias.size());
    step_count = 0;
  }
};

/// Per-sample gradient accumulators. Input/recurrent gradients are stored
/// per active synapse, aligned with the layer's sparsity patterns.
struct GradBuffers {
  struct PerLayer {
    std::vector<double> g_in, g_rec;
  };
  std::vector<PerLayer> layers;
  Matrix g_out;
  std::vector<double> g_b;

  void reset(const NetworkParams& net) {
    layers.resize(net.layers.size());
    for (size_t r = 0; r < net.layers.size(); ++r) {
      layers[r].g_in.assign(net.layers[r].active_in.col_index.size(), 0.0);
      layers[r].g_rec.assign(net.layers[r].active_rec.col_index.size(), 0.0);
    }
    if (!g_out.same_shape(net.w_out)) g_out = Matrix(net.w_out.rows(), net.w_out.cols());
    g_out.fill(0.0);
    g_b.assign(net.bias.size(), 0.0);
  }

  void add(const GradBuffers& o) {
    for (size_t r = 0; r < layers.size(); ++r) {
      for (size_t i = 0; i < layers[r].g_in.size(); ++i) layers[r].g_in[i] += o.layers[r].g_in[i];
      for (size_t i = 0; i < layers[r].g_rec.size(); ++i)
        layers[r].g_rec[i] += o.layers[r].g_rec[i];
    }
    for (size_t i = 0; i < g_out.size(); ++i) g_out.data()[i] += o.g_out.data()[i];
    for (size_t i = 0; i < g_b.size(); ++i) g_b[i] += o.g_b[i];
  }

  void scale(double s) {
    for (auto& l : layers) {
      for (auto& g : l.g_in) g *= s;
      for (auto& g : l.g_rec) g *= s;
    }
    for (size_t i = 0; i < g_out.size(); ++i) g_out.data()[i] *= s;
    for (auto& g : g_b) g *= s;
  }
};

enum class RunMode { Train, Eval };

struct SampleStats {
  double xent = 0.0;
  long frames = 0;
  long wrong = 0;
  double mean_rate = 0.0;  // per step, averaged over neurons
  double reg_err = 0.0;
};

/// Test hooks for run_sample. The learning-signal override receives
/// (layer, neuron, broadcast value) and returns the value to use; the
/// step observer sees the accumulated gradients after each step.
struct RunHooks {
  std::function<double(int, int, double)> learning_signal_override;
  std::function<void(int, const GradBuffers&)> on_step;
};

/// Reusable per-sample scratch: eligibility panels, learning signals,
/// filtered spike traces.
struct SampleWorkspace {
  struct Panel {
    std::vector<double> eps_v, eps_a, ebar;
    void reset(size_t nnz) {
      eps_v.assign(nnz, 0.0);
      eps_a.assign(nnz, 0.0);
      ebar.assign(nnz, 0.0);
    }
  };
  struct PerLayer {
    Panel in, rec;
    std::vector<double> learning_signal;
  };
  std::vector<LayerState> states;
  ReadoutState readout;
  std::vector<PerLayer> layers;
  std::vector<double> zbar;       // kappa-filtered spikes, all neurons
  double onebar = 0.0;            // kappa-filtered constant 1 (bias trace)
  std::vector<double> pi_target;
  RegState reg;

  void reset(const NetworkParams& net, bool with_panels) {
    states.clear();
    for (const auto& l : net.layers) states.emplace_back(l.n_neurons(), net.model_kind);
    readout = ReadoutState(net.n_outputs());
    layers.resize(net.layers.size());
    for (size_t r = 0; r < net.layers.size(); ++r) {
      if (with_panels) {
        layers[r].in.reset(net.layers[r].active_in.col_index.size());
        layers[r].rec.reset(net.layers[r].active_rec.col_index.size());
      }
      layers[r].learning_signal.assign(net.layers[r].n_neurons(), 0.0);
    }
    zbar.assign(net.n_total_neurons(), 0.0);
    onebar = 0.0;
    pi_target.assign(net.n_outputs(), 0.0);
    reg.reset(net.n_total_neurons());
  }
};

namespace detail {

/// Advance the eligibility panel of one weight matrix by one step and
/// accumulate gradients. `presyn` indexes by the pattern's column ids.
inline void eligibility_pass(const NetworkParams& net, const LayerParams& layer,
                             const SparsityPattern& pattern, const LayerState& st,
                             const std::vector<double>& presyn,
                             const std::vector<double>& learning, SampleWorkspace::Panel& panel,
                             std::vector<double>* grads) {
  NeuronParams p = net.neuron;
  const int n = layer.n_neurons();
  for (int j = 0; j < n; ++j) {
    p.beta = layer.beta_per_neuron[j];
    const double psi_prev = st.psi_prev[j];
    const double psi_now = st.psi[j];
    const double l_j = learning[j];
    const double z_prev_j = st.z_prev[j];
    const double z_refr_ago_j =
        p.t_refr >= 1 ? st.h[j].z_steps_ago(1 + p.t_refr) : 0.0;
    const double v_prev_j = st.v_prev[j];

    for (int s = pattern.row_offsets[j]; s < pattern.row_offsets[j + 1]; ++s) {
      EligibilityState e{panel.eps_v[s], panel.eps_a[s], panel.ebar[s]};
      EligStepResult res;
      switch (net.model_kind) {
        case ModelKind::Alif:
          res = alif_eligibility_step(e, psi_prev, psi_now, presyn[pattern.col_index[s]], p);
          break;
        case ModelKind::StdpAlif:
          res = stdp_alif_eligibility_step(e, psi_prev, psi_now, presyn[pattern.col_index[s]],
                                           z_prev_j, z_refr_ago_j, p);
          break;
        case ModelKind::Izhikevich:
          res = izhikevich_eligibility_step(e, psi_now, presyn[pattern.col_index[s]], z_prev_j,
                                            v_prev_j, p, net.clip_eligibility);
          break;
      }
      panel.eps_v[s] = res.state.eps_v;
      panel.eps_a[s] = res.state.eps_a;
      panel.ebar[s] = res.state.trace_filtered;
      if (grads) (*grads)[s] += l_j * res.state.trace_filtered;
    }
  }
}

}  // namespace detail

/// Run one utterance through the network. In train mode the per-weight
/// gradient accumulators (loss + regularizers) are written into `grads`;
/// in eval mode only statistics are produced.
inline SampleStats run_sample(const NetworkParams& net, const Utterance& utt, RunMode mode,
                              const TrainConfig& tc, SampleWorkspace& ws,
                              GradBuffers* grads = nullptr, const RunHooks* hooks = nullptr) {
  if (utt.n_frames() == 0) throw ShapeError("run_sample: empty utterance");
  const bool train = mode == RunMode::Train;
  if (train && grads == nullptr) throw ShapeError("run_sample: train mode needs grad buffers");

  ws.reset(net, train);
  if (train) grads->reset(net);

  const int n_out = net.n_outputs();
  const int n_total = net.n_total_neurons();
  SampleStats stats;
  std::vector<double> input(net.n_inputs());

  for (int t = 0; t < utt.n_frames(); ++t) {
    for (int c = 0; c < utt.n_channels(); ++c) input[c] = utt.features(t, c);
    forward_step(net, ws.states, input, ws.readout);

    const int label = utt.labels[t];
    if (label < 0 || label >= n_out) throw ShapeError("run_sample: label out of range");
    std::fill(ws.pi_target.begin(), ws.pi_target.end(), 0.0);
    ws.pi_target[label] = 1.0;

    if (train) {
      // Learning signals, then per-synapse eligibility + gradient updates.
      for (size_t r = 0; r < net.layers.size(); ++r) {
        learning_signal(net.b_feedback[r], ws.readout.pi, ws.pi_target,
                        ws.layers[r].learning_signal);
        if (hooks && hooks->learning_signal_override) {
          auto& ls = ws.layers[r].learning_signal;
          for (size_t j = 0; j < ls.size(); ++j)
            ls[j] = hooks->learning_signal_override(static_cast<int>(r), static_cast<int>(j),
                                                    ls[j]);
        }
      }
      for (size_t r = 0; r < net.layers.size(); ++r) {
        const LayerParams& layer = net.layers[r];
        const LayerState& st = ws.states[r];
        const std::vector<double>& fan_in_sig = r == 0 ? input : ws.states[r - 1].z;
        detail::eligibility_pass(net, layer, layer.active_in, st, fan_in_sig,
                                 ws.layers[r].learning_signal, ws.layers[r].in,
                                 &grads->layers[r].g_in);
        detail::eligibility_pass(net, layer, layer.active_rec, st, st.z_prev,
                                 ws.layers[r].learning_signal, ws.layers[r].rec,
                                 &grads->layers[r].g_rec);
      }

      // Readout gradients pair the residual with kappa-filtered traces of
      // the spikes (and of the constant 1 for the bias), which makes them
      // the exact gradients of the accumulated cross-entropy.
      ws.onebar = net.neuron.kappa * ws.onebar + 1.0;
      {
        int col = 0;
        for (const auto& st : ws.states)
          for (double z : st.z) {
            ws.zbar[col] = net.neuron.kappa * ws.zbar[col] + z;
            ++col;
          }
      }
      for (int k = 0; k < n_out; ++k) {
        const double resid = ws.readout.pi[k] - ws.pi_target[k];
        for (int j = 0; j < n_total; ++j) grads->g_out(k, j) += resid * ws.zbar[j];
        grads->g_b[k] += resid * ws.onebar;
      }
    }

    // Firing-rate bookkeeping and frame metrics.
    {
      int off = 0;
      for (const auto& st : ws.states) {
        ws.reg.accumulate(st.z, off, tc.f_target);
        off += static_cast<int>(st.z.size());
      }
      ws.reg.t_elapsed++;
    }
    stats.xent -= std::log(std::max(ws.readout.pi[label], 1e-12));
    const int argmax = static_cast<int>(
        std::max_element(ws.readout.pi.begin(), ws.readout.pi.end()) - ws.readout.pi.begin());
    if (argmax != label) stats.wrong++;
    stats.frames++;

    if (hooks && hooks->on_step && grads) hooks->on_step(t, *grads);
  }

  if (train) {
    const std::vector<double> reg_grad = firing_rate_reg(ws.reg, tc.c_reg);
    for (size_t r = 0; r < net.layers.size(); ++r) {
      const LayerParams& layer = net.layers[r];
      const int off = net.layer_offset(static_cast<int>(r));
      const auto& ain = layer.active_in;
      const auto& arec = layer.active_rec;
      for (int j = 0; j < layer.n_neurons(); ++j) {
        for (int s = ain.row_offsets[j]; s < ain.row_offsets[j + 1]; ++s)
          grads->layers[r].g_in[s] +=
              reg_grad[off + j] + l2_reg(layer.w_in(j, ain.col_index[s]), tc.c_l2);
        for (int s = arec.row_offsets[j]; s < arec.row_offsets[j + 1]; ++s)
          grads->layers[r].g_rec[s] +=
              reg_grad[off + j] + l2_reg(layer.w_rec(j, arec.col_index[s]), tc.c_l2);
      }
    }
    for (int k = 0; k < n_out; ++k)
      for (int j = 0; j < n_total; ++j) grads->g_out(k, j) += l2_reg(net.w_out(k, j), tc.c_l2);
  }

  double rate = 0.0;
  for (int j = 0; j < n_total; ++j) rate += ws.reg.f_av(j);
  stats.mean_rate = rate / n_total;
  stats.reg_err = firing_rate_reg_error(ws.reg, tc.f_target);
  return stats;
}

/// Aggregate eval-mode statistics over a split.
inline MetricsRecord evaluate(const NetworkParams& net, const std::vector<Utterance>& split,
                              const TrainConfig& tc) {
  if (split.empty()) throw ShapeError("evaluate: empty split");
  SampleWorkspace ws;
  double xent = 0.0, rate = 0.0, reg_err = 0.0;
  long frames = 0, wrong = 0;
  for (const auto& utt : split) {
    const SampleStats s = run_sample(net, utt, RunMode::Eval, tc, ws);
    xent += s.xent;
    frames += s.frames;
    wrong += s.wrong;
    rate += s.mean_rate;
    reg_err += s.reg_err;
  }
  MetricsRecord m;
  m.xent = xent / static_cast<double>(frames);
  m.miscls_pct = 100.0 * static_cast<double>(wrong) / static_cast<double>(frames);
  m.mean_rate_hz = rate / static_cast<double>(split.size()) / net.neuron.dt;
  m.reg_err = reg_err / static_cast<double>(split.size());
  return m;
}

/// Apply one Adam update from minibatch-mean gradients; returns the
/// readout delta so the caller can update adaptive feedback weights.
inline Matrix apply_update(NetworkParams& net, OptimizerState& opt, const GradBuffers& grads,
                           double eta_eff, const TrainConfig& tc) {
  std::vector<double> delta;
  for (size_t r = 0; r < net.layers.size(); ++r) {
    LayerParams& layer = net.layers[r];
    delta.resize(grads.layers[r].g_in.size());
    adam_apply(opt.layers[r].in, grads.layers[r].g_in, eta_eff, tc.beta1, tc.beta2,
               opt.step_count, delta);
    const auto& ain = layer.active_in;
    for (int j = 0; j < layer.n_neurons(); ++j)
      for (int s = ain.row_offsets[j]; s < ain.row_offsets[j + 1]; ++s)
        layer.w_in(j, ain.col_index[s]) += delta[s];

    delta.resize(grads.layers[r].g_rec.size());
    adam_apply(opt.layers[r].rec, grads.layers[r].g_rec, eta_eff, tc.beta1, tc.beta2,
               opt.step_count, delta);
    const auto& arec = layer.active_rec;
    for (int j = 0; j < layer.n_neurons(); ++j)
      for (int s = arec.row_offsets[j]; s < arec.row_offsets[j + 1]; ++s)
        layer.w_rec(j, arec.col_index[s]) += delta[s];
  }

  Matrix delta_out(net.w_out.rows(), net.w_out.cols());
  adam_apply(opt.out, std::span<const double>(grads.g_out.data(), grads.g_out.size()), eta_eff,
             tc.beta1, tc.beta2, opt.step_count,
             std::span<double>(delta_out.data(), delta_out.size()));
  for (size_t i = 0; i < net.w_out.size(); ++i) net.w_out.data()[i] += delta_out.data()[i];

  delta.resize(grads.g_b.size());
  adam_apply(opt.bias, grads.g_b, eta_eff, tc.beta1, tc.beta2, opt.step_count, delta);
  for (size_t i = 0; i < net.bias.size(); ++i) net.bias[i] += delta[i];

  opt.step_count++;
  update_broadcast(net, delta_out);
  return delta_out;
}

/// Run the samples of one minibatch (possibly in parallel) and reduce the
/// per-sample gradients to their mean, always in sample order so results
/// do not depend on the number of threads.
class BatchRunner {
 public:
  BatchRunner(const TrainConfig& tc, int n_slots)
      : n_slots_(std::max(1, n_slots)), grads_(n_slots_), workspaces_(n_slots_) {
    (void)tc;
  }

  /// `batch` holds pointers to the utterances of this minibatch.
  SampleStats run(const NetworkParams& net, const std::vector<const Utterance*>& batch,
                  const TrainConfig& tc, GradBuffers& mean_out) {
    mean_out.reset(net);
    SampleStats total;
    std::vector<SampleStats> stats(batch.size());

    for (size_t base = 0; base < batch.size(); base += n_slots_) {
      const size_t chunk = std::min(static_cast<size_t>(n_slots_), batch.size() - base);
      if (chunk == 1) {
        stats[base] = run_sample(net, *batch[base], RunMode::Train, tc, workspaces_[0],
                                 &grads_[0]);
      } else {
        std::vector<std::thread> threads;
        threads.reserve(chunk);
        for (size_t s = 0; s < chunk; ++s)
          threads.emplace_back([&, s] {
            stats[base + s] = run_sample(net, *batch[base + s], RunMode::Train, tc,
                                         workspaces_[s], &grads_[s]);
          });
        for (auto& th : threads) th.join();
      }
      for (size_t s = 0; s < chunk; ++s) mean_out.add(grads_[s]);
    }
    mean_out.scale(1.0 / static_cast<double>(batch.size()));

    for (const auto& s : stats) {
      total.xent += s.xent;
      total.frames += s.frames;
      total.wrong += s.wrong;
      total.mean_rate += s.mean_rate;
      total.reg_err += s.reg_err;
    }
    return total;
  }

 private:
  int n_slots_;
  std::vector<GradBuffers> grads_;
  std::vector<SampleWorkspace> workspaces_;
};

/// Full training driver. Sample order is a seeded shuffle derived from
/// (seed, epoch) alone, so a run can resume from a checkpoint and remain
/// bit-identical to an uninterrupted run.
class Trainer {
 public:
  Trainer(NetworkParams net, TrainConfig tc) : net_(std::move(net)), tc_(tc) {
    tc_.validate();
    opt_.reset(net_);
    const unsigned hw = std::thread::hardware_concurrency();
    n_threads_ = tc_.n_threads > 0 ? tc_.n_threads : static_cast<int>(hw ? hw : 1);
  }

  NetworkParams& net() { return net_; }
  const NetworkParams& net() const { return net_; }
  OptimizerState& optimizer() { return opt_; }
  const OptimizerState& optimizer() const { return opt_; }
  long iteration() const { return iter_; }
  void set_iteration(long it) { iter_ = it; }
  double best_val_miscls() const { return best_val_miscls_; }
  void set_best_val_miscls(double v) { best_val_miscls_ = v; }

  static std::vector<int> epoch_order(uint64_t seed, long epoch, int n) {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed ^ (0x9e3779b97f4a7c15ull * static_cast<uint64_t>(epoch + 1)));
    std::shuffle(order.begin(), order.end(), rng);
    return order;
  }

  long iters_per_epoch(size_t n_train) const {
    return std::max<long>(1, static_cast<long>(n_train) / tc_.batch_size);
  }

  /// Called after every validation evaluation with (trainer, val metrics,
  /// is_best). Checkpoint writing lives in the CLI layer.
  using EvalCallback = std::function<void(const Trainer&, const MetricsRecord&, bool)>;

  /// Train for `max_iters` minibatch updates (capped by epochs in the
  /// config). Returns the last validation metrics.
  MetricsRecord fit(const std::vector<Utterance>& train_set,
                    const std::vector<Utterance>& val_set, long max_iters,
                    MetricsWriter* metrics = nullptr, EvalCallback on_eval = {}) {
    if (train_set.empty()) throw ShapeError("fit: empty training set");
    const long ipe = iters_per_epoch(train_set.size());
    const long budget = std::min<long>(max_iters, static_cast<long>(tc_.epochs) * ipe);
    BatchRunner runner(tc_, std::min<int>(n_threads_, tc_.batch_size));
    GradBuffers mean_grads;

    MetricsRecord val{};
    if (!val_set.empty() && iter_ == 0) {
      val = evaluate(net_, val_set, tc_);
      val.iter = 0;
      if (metrics) metrics->append(val, "val");
      maybe_best(val, on_eval);
    }

    while (iter_ < budget) {
      const long epoch = iter_ / ipe;
      const long pos = (iter_ % ipe) * tc_.batch_size;
      const std::vector<int> order = epoch_order(tc_.seed, epoch, static_cast<int>(train_set.size()));
      std::vector<const Utterance*> batch;
      batch.reserve(tc_.batch_size);
      for (int s = 0; s < tc_.batch_size; ++s)
        batch.push_back(&train_set[order[(pos + s) % order.size()]]);

      const SampleStats bs = runner.run(net_, batch, tc_, mean_grads);
      const double eta_eff = lr_warmup(iter_, ipe, tc_.eta);
      apply_update(net_, opt_, mean_grads, eta_eff, tc_);
      iter_++;

      if (metrics) {
        MetricsRecord tr;
        tr.iter = iter_;
        tr.xent = bs.xent / static_cast<double>(bs.frames);
        tr.miscls_pct = 100.0 * static_cast<double>(bs.wrong) / static_cast<double>(bs.frames);
        tr.mean_rate_hz = bs.mean_rate / static_cast<double>(batch.size()) / net_.neuron.dt;
        tr.reg_err = bs.reg_err / static_cast<double>(batch.size());
        metrics->append(tr, "train");
      }

      if (!val_set.empty() && (iter_ % tc_.eval_every == 0 || iter_ == budget)) {
        val = evaluate(net_, val_set, tc_);
        val.iter = iter_;
        if (metrics) metrics->append(val, "val");
        maybe_best(val, on_eval);
      }
    }
    return val;
  }

 private:
  void maybe_best(const MetricsRecord& val, const EvalCallback& on_eval) {
    const bool best = val.miscls_pct < best_val_miscls_;
    if (best) best_val_miscls_ = val.miscls_pct;
    if (on_eval) on_eval(*this, val, best);
  }

  NetworkParams net_;
  TrainConfig tc_;
  OptimizerState opt_;
  long iter_ = 0;
  int n_threads_ = 1;
  double best_val_miscls_ = std::numeric_limits<double>::infinity();
};

}  // namespace eprop
