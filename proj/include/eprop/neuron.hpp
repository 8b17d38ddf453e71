#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

#include "eprop/errors.hpp"

namespace eprop {

enum class ModelKind { Alif, StdpAlif, Izhikevich };

inline const char* to_string(ModelKind m) {
  switch (m) {
    case ModelKind::Alif: return "alif";
    case ModelKind::StdpAlif: return "stdp-alif";
    case ModelKind::Izhikevich: return "izhikevich";
  }
  return "?";
}

inline ModelKind model_kind_from_string(const std::string& s) {
  if (s == "alif") return ModelKind::Alif;
  if (s == "stdp-alif" || s == "stdp_alif") return ModelKind::StdpAlif;
  if (s == "izhikevich" || s == "izh") return ModelKind::Izhikevich;
  throw ConfigError("unknown neuron model: " + s);
}

/// Per-neuron constants. Defaults are the values used for every network
/// in this project; Izhikevich dynamics ignore alpha/rho/v_th/t_refr.
struct NeuronParams {
  double alpha = 0.8;    // activity decay per step
  double rho = 0.975;    // threshold-adaptation decay
  double beta = 0.184;   // adaptation strength (0 = plain LIF)
  double kappa = 0.8;    // output / trace filter decay
  double gamma = 0.3;    // pseudo-derivative dampening
  double v_th = 0.95;    // base threshold
  int t_refr = 2;        // refractory duration in steps
  double dt = 1e-3;      // step duration in seconds

  void validate() const {
    if (!(alpha >= 0.0 && alpha < 1.0)) throw ConfigError("alpha must be in [0,1)");
    if (!(rho >= 0.0 && rho < 1.0)) throw ConfigError("rho must be in [0,1)");
    if (!(beta >= 0.0)) throw ConfigError("beta must be >= 0");
    if (!(gamma > 0.0)) throw ConfigError("gamma must be > 0");
    if (!(v_th > 0.0)) throw ConfigError("v_th must be > 0");
    if (t_refr < 0 || t_refr > 30) throw ConfigError("t_refr must be in [0,30]");
    if (!(dt > 0.0)) throw ConfigError("dt must be > 0");
  }
};

/// Hidden state of one neuron. `a` is the threshold adaptation for the
/// ALIF family and the recovery variable for Izhikevich. `spike_history`
/// keeps recent spikes as bits (bit 0 = last step) so the STDP-ALIF reset
/// can look back t_refr+1 steps without unbounded timestamps.
struct HiddenState {
  double v = 0.0;
  double a = 0.0;
  int refr_remaining = 0;
  uint32_t spike_history = 0;

  double last_z() const { return static_cast<double>(spike_history & 1u); }
  double z_steps_ago(int k) const { return static_cast<double>((spike_history >> k) & 1u); }

  static HiddenState initial(ModelKind kind) {
    HiddenState s;
    if (kind == ModelKind::Izhikevich) {
      // Izhikevich rest state; the reset value -65 is the baseline.
      s.v = -65.0;
      s.a = -13.0;
    }
    return s;
  }
};

/// Per-synapse eligibility memory: the two eligibility-vector components
/// plus the kappa-filtered trace.
struct EligibilityState {
  double eps_v = 0.0;
  double eps_a = 0.0;
  double trace_filtered = 0.0;
};

struct NeuronStepResult {
  HiddenState state;
  double spike = 0.0;  // binary
  double psi = 0.0;    // pseudo-derivative at the post-update state
};

struct EligStepResult {
  EligibilityState state;
  double trace = 0.0;  // e, before filtering; state.trace_filtered holds ebar
};

namespace detail {
inline void check_finite(double x, const char* what) {
  if (!std::isfinite(x)) throw NumericError(std::string(what) + " is not finite");
}
}  // namespace detail

/// Triangular pseudo-derivative of the ALIF spike function, evaluated at
/// activation v and adaptation a. 1*gamma at the effective threshold,
/// linearly decaying to zero on both sides.
inline double alif_pseudo_derivative(double v, double a, const NeuronParams& p) {
  return p.gamma * std::max(0.0, 1.0 - std::abs((v - p.v_th - p.beta * a) / p.v_th));
}

/// One ALIF step. `weighted_in` is the already-summed synaptic drive.
/// The soft reset subtracts v_th at the step after a spike; spikes are
/// suppressed (and psi forced to 0) for t_refr steps after each spike.
inline NeuronStepResult alif_step(const HiddenState& s, double weighted_in,
                                  const NeuronParams& p) {
  detail::check_finite(weighted_in, "weighted_in");
  NeuronStepResult r;
  const double z_prev = s.last_z();
  const bool refractory = s.refr_remaining > 0;

  r.state.v = p.alpha * s.v + weighted_in - z_prev * p.v_th;
  r.state.a = p.rho * s.a + z_prev;
  const double gap = r.state.v - p.v_th - p.beta * r.state.a;
  r.spike = (!refractory && gap >= 0.0) ? 1.0 : 0.0;
  r.psi = refractory ? 0.0 : alif_pseudo_derivative(r.state.v, r.state.a, p);

  r.state.refr_remaining = r.spike > 0.0 ? p.t_refr : std::max(s.refr_remaining - 1, 0);
  r.state.spike_history = (s.spike_history << 1) | (r.spike > 0.0 ? 1u : 0u);
  return r;
}

/// ALIF eligibility update for one synapse.
///
/// `psi_prev` enters the adaptation row (it belongs to the hidden-state
/// transition that produced the current state), `psi_now` contracts the
/// updated vector into the trace. The adaptation component is written
/// before the activation component; it only reads the old eps_v, so the
/// update can run in place.
inline EligStepResult alif_eligibility_step(const EligibilityState& e, double psi_prev,
                                            double psi_now, double presyn,
                                            const NeuronParams& p) {
  EligStepResult r;
  r.state.eps_a = psi_prev * e.eps_v + (p.rho - psi_prev * p.beta) * e.eps_a;
  r.state.eps_v = p.alpha * e.eps_v + presyn;
  r.trace = psi_now * (r.state.eps_v - p.beta * r.state.eps_a);
  r.state.trace_filtered = p.kappa * e.trace_filtered + r.trace;
  return r;
}

/// STDP-ALIF pseudo-derivative: clamped to -gamma inside the refractory
/// window, otherwise the ALIF triangle without the adaptation term.
inline double stdp_alif_pseudo_derivative(double v, bool refractory, const NeuronParams& p) {
  if (refractory) return -p.gamma;
  return p.gamma * std::max(0.0, 1.0 - std::abs((v - p.v_th) / p.v_th));
}

/// One STDP-ALIF step. The activation is hard-reset to zero (up to new
/// drive) at a spike and again when the refractory window ends; the two
/// reset terms are never simultaneously active.
inline NeuronStepResult stdp_alif_step(const HiddenState& s, double weighted_in,
                                       const NeuronParams& p) {
  detail::check_finite(weighted_in, "weighted_in");
  NeuronStepResult r;
  const double z_prev = s.last_z();
  // With t_refr == 0 the look-back would alias the last spike; the second
  // reset term only exists for a real refractory window.
  const double z_refr_ago = p.t_refr >= 1 ? s.z_steps_ago(p.t_refr) : 0.0;
  const bool refractory = s.refr_remaining > 0;

  r.state.v = p.alpha * s.v * (1.0 - z_prev - z_refr_ago) + weighted_in;
  r.state.a = p.rho * s.a + z_prev;
  const double gap = r.state.v - p.v_th - p.beta * r.state.a;
  r.spike = (!refractory && gap >= 0.0) ? 1.0 : 0.0;
  r.psi = stdp_alif_pseudo_derivative(r.state.v, refractory, p);

  r.state.refr_remaining = r.spike > 0.0 ? p.t_refr : std::max(s.refr_remaining - 1, 0);
  r.state.spike_history = (s.spike_history << 1) | (r.spike > 0.0 ? 1u : 0u);
  return r;
}

/// STDP-ALIF eligibility update. `z_prev` / `z_refr_ago` are the efferent
/// neuron's spikes one and t_refr+1 steps back; they erase the activation
/// history exactly when the activation itself was reset. psi may be
/// negative here, which is what produces the depression branch.
inline EligStepResult stdp_alif_eligibility_step(const EligibilityState& e, double psi_prev,
                                                 double psi_now, double presyn, double z_prev,
                                                 double z_refr_ago, const NeuronParams& p) {
  EligStepResult r;
  r.state.eps_a = psi_prev * e.eps_v + (p.rho - psi_prev * p.beta) * e.eps_a;
  r.state.eps_v = p.alpha * (1.0 - z_prev - z_refr_ago) * e.eps_v + presyn;
  r.trace = psi_now * (r.state.eps_v - p.beta * r.state.eps_a);
  r.state.trace_filtered = p.kappa * e.trace_filtered + r.trace;
  return r;
}

/// Izhikevich spike threshold (membrane peak). The pseudo-derivative caps
/// v at this value, and the spike condition tests against it.
inline constexpr double kIzhikevichSpikeThreshold = 30.0;

inline double izhikevich_pseudo_derivative(double v, const NeuronParams& p) {
  return p.gamma * std::exp((std::min(v, kIzhikevichSpikeThreshold) - 30.0) / 30.0);
}

/// One Izhikevich step. A spike at the previous step resets the
/// activation to -65 and bumps the recovery variable by 2 before the
/// quadratic dynamics run; refractoriness is implicit in the dynamics.
inline NeuronStepResult izhikevich_step(const HiddenState& s, double weighted_in,
                                        const NeuronParams& p) {
  detail::check_finite(weighted_in, "weighted_in");
  detail::check_finite(s.v, "izhikevich state v");
  detail::check_finite(s.a, "izhikevich state a");
  NeuronStepResult r;
  const double z_prev = s.last_z();
  const double v_tilde = s.v - (s.v + 65.0) * z_prev;
  const double a_tilde = s.a + 2.0 * z_prev;

  r.state.v = v_tilde + 0.04 * v_tilde * v_tilde + 5.0 * v_tilde + 140.0 - a_tilde + weighted_in;
  r.state.a = a_tilde + 0.004 * v_tilde - 0.02 * a_tilde;
  r.spike = r.state.v >= kIzhikevichSpikeThreshold ? 1.0 : 0.0;
  r.psi = izhikevich_pseudo_derivative(r.state.v, p);

  r.state.refr_remaining = 0;
  r.state.spike_history = (s.spike_history << 1) | (r.spike > 0.0 ? 1u : 0u);
  return r;
}

inline double clip(double x, double lo, double hi) { return std::min(std::max(x, lo), hi); }

inline constexpr double kIzhEpsVClip = 3.0;
inline constexpr double kIzhEpsAClip = 0.005;

/// Izhikevich eligibility update. `v_prev` / `z_prev` come from the
/// efferent neuron's pre-update state. Both components are clipped after
/// every update unless `clip_enabled` is false (the uncorrected variant
/// diverges, which is reproducible behavior, not an error). Both rows
/// read the old components, so this one cannot run in place.
inline EligStepResult izhikevich_eligibility_step(const EligibilityState& e, double psi_now,
                                                  double presyn, double z_prev, double v_prev,
                                                  const NeuronParams& p,
                                                  bool clip_enabled = true) {
  EligStepResult r;
  const double gate = 1.0 - z_prev;
  double eps_v = gate * (6.0 + 0.08 * v_prev) * e.eps_v - e.eps_a + presyn;
  double eps_a = 0.004 * gate * e.eps_v + 0.98 * e.eps_a;
  if (clip_enabled) {
    eps_v = clip(eps_v, -kIzhEpsVClip, kIzhEpsVClip);
    eps_a = clip(eps_a, -kIzhEpsAClip, kIzhEpsAClip);
  }
  r.state.eps_v = eps_v;
  r.state.eps_a = eps_a;
  r.trace = psi_now * eps_v;
  r.state.trace_filtered = p.kappa * e.trace_filtered + r.trace;
  return r;
}

/// Dispatch helpers used by the trainer and the demo driver.
inline NeuronStepResult neuron_step(ModelKind kind, const HiddenState& s, double weighted_in,
                                    const NeuronParams& p) {
  switch (kind) {
    case ModelKind::Alif: return alif_step(s, weighted_in, p);
    case ModelKind::StdpAlif: return stdp_alif_step(s, weighted_in, p);
    case ModelKind::Izhikevich: return izhikevich_step(s, weighted_in, p);
  }
  throw ConfigError("bad model kind");
}

}  // namespace eprop
