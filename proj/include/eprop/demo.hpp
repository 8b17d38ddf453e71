#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "eprop/neuron.hpp"

namespace eprop {

/// Scripted current injection: `amplitude` added to the drive of one of
/// the two neurons for every step in [t_begin, t_end].
struct CurrentPulse {
  int t_begin = 0;
  int t_end = 0;  // inclusive
  double amplitude = 0.0;
  bool to_post = true;
};

struct DemoProtocol {
  std::vector<CurrentPulse> pulses;
  int n_steps = 0;

  double current(int t, bool post) const {
    double acc = 0.0;
    for (const auto& p : pulses)
      if (p.to_post == post && t >= p.t_begin && t <= p.t_end) acc += p.amplitude;
    return acc;
  }
};

/// Parse a protocol file. Each non-comment line is either
///   <t> <amplitude> <pre|post>
/// or
///   <t1>..<t2> <amplitude> <pre|post>
inline DemoProtocol load_protocol(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open protocol file: " + path);
  DemoProtocol proto;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ls(line);
    std::string t_spec, target;
    double amplitude;
    if (!(ls >> t_spec)) continue;
    if (!(ls >> amplitude >> target))
      throw IoError(path + ":" + std::to_string(line_no) + ": malformed protocol line");
    CurrentPulse pulse;
    pulse.amplitude = amplitude;
    const size_t dots = t_spec.find("..");
    if (dots != std::string::npos) {
      pulse.t_begin = std::stoi(t_spec.substr(0, dots));
      pulse.t_end = std::stoi(t_spec.substr(dots + 2));
    } else {
      pulse.t_begin = pulse.t_end = std::stoi(t_spec);
    }
    if (target == "pre")
      pulse.to_post = false;
    else if (target == "post")
      pulse.to_post = true;
    else
      throw IoError(path + ":" + std::to_string(line_no) + ": target must be pre or post");
    proto.n_steps = std::max(proto.n_steps, pulse.t_end + 1);
    proto.pulses.push_back(pulse);
  }
  if (proto.pulses.empty()) throw IoError("empty protocol: " + path);
  return proto;
}

/// One row of the demo trace.
struct DemoStep {
  int t = 0;
  double current = 0.0;  // total current injected this step
  double v_pre = 0.0, v_post = 0.0;
  double z_pre = 0.0, z_post = 0.0;
  double eps_v = 0.0, eps_a = 0.0;
  double e = 0.0, ebar = 0.0;
  double acc_dw = 0.0;
};

struct DemoConfig {
  ModelKind model = ModelKind::Alif;
  NeuronParams neuron;
  bool clip_eligibility = true;
  double learning_signal = 1.0;  // constant L paired with the filtered trace
  double synapse_weight = 0.0;   // pre spike drive into post (scripts usually carry it)
  int extra_steps = 20;          // tail after the last scripted pulse
};

/// Drive a pre/post neuron pair with a scripted protocol and record the
/// synaptic variables of the single pre->post synapse. The accumulated
/// weight change integrates L * ebar per step.
inline std::vector<DemoStep> run_demo(const DemoConfig& cfg, const DemoProtocol& proto) {
  cfg.neuron.validate();
  HiddenState pre = HiddenState::initial(cfg.model);
  HiddenState post = HiddenState::initial(cfg.model);
  EligibilityState elig;
  double psi_prev = 0.0;
  double acc_dw = 0.0;

  std::vector<DemoStep> trace;
  const int t_max = proto.n_steps + cfg.extra_steps;
  for (int t = 0; t < t_max; ++t) {
    const double i_pre = proto.current(t, false);
    const double i_post = proto.current(t, true) + cfg.synapse_weight * pre.last_z();
    const double presyn = pre.last_z();  // z_i^{t-1}, recurrent-class synapse
    const double z_prev_post = post.last_z();
    const double z_refr_ago_post =
        cfg.neuron.t_refr >= 1 ? post.z_steps_ago(cfg.neuron.t_refr) : 0.0;
    const double v_prev_post = post.v;

    const NeuronStepResult pre_res = neuron_step(cfg.model, pre, i_pre, cfg.neuron);
    const NeuronStepResult post_res = neuron_step(cfg.model, post, i_post, cfg.neuron);

    EligStepResult er;
    switch (cfg.model) {
      case ModelKind::Alif:
        er = alif_eligibility_step(elig, psi_prev, post_res.psi, presyn, cfg.neuron);
        break;
      case ModelKind::StdpAlif:
        er = stdp_alif_eligibility_step(elig, psi_prev, post_res.psi, presyn, z_prev_post,
                                        z_refr_ago_post, cfg.neuron);
        break;
      case ModelKind::Izhikevich:
        er = izhikevich_eligibility_step(elig, post_res.psi, presyn, z_prev_post, v_prev_post,
                                         cfg.neuron, cfg.clip_eligibility);
        break;
    }

    pre = pre_res.state;
    post = post_res.state;
    elig = er.state;
    psi_prev = post_res.psi;
    acc_dw += cfg.learning_signal * elig.trace_filtered;

    DemoStep row;
    row.t = t;
    row.current = i_pre + i_post;
    row.v_pre = pre.v;
    row.v_post = post.v;
    row.z_pre = pre_res.spike;
    row.z_post = post_res.spike;
    row.eps_v = elig.eps_v;
    row.eps_a = elig.eps_a;
    row.e = er.trace;
    row.ebar = elig.trace_filtered;
    row.acc_dw = acc_dw;
    trace.push_back(row);
  }
  return trace;
}

inline void write_demo_csv(const std::string& path, const std::vector<DemoStep>& trace) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write demo csv: " + path);
  out << "t,I,v_pre,v_post,z_pre,z_post,eps_v,eps_a,e,ebar,acc_dW\n";
  char line[512];
  for (const auto& s : trace) {
    std::snprintf(line, sizeof(line), "%d,%.9g,%.9g,%.9g,%g,%g,%.9g,%.9g,%.9g,%.9g,%.9g\n", s.t,
                  s.current, s.v_pre, s.v_post, s.z_pre, s.z_post, s.eps_v, s.eps_a, s.e, s.ebar,
                  s.acc_dw);
    out << line;
  }
}

}  // namespace eprop
