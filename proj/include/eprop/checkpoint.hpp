#pragma once

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "eprop/network.hpp"
#include "eprop/trainer.hpp"

namespace eprop {

/// Everything needed to resume a run exactly: parameters, optimizer
/// moments, progress counters and the seed the data order derives from.
struct Checkpoint {
  NetworkParams net;
  OptimizerState opt;
  long iteration = 0;
  uint64_t seed = 0;
  double best_val_miscls = 0.0;
};

namespace checkpoint_detail {

inline constexpr uint32_t kVersion = 1;

inline void put_f64(std::vector<uint8_t>& out, const double* data, size_t n) {
  for (size_t i = 0; i < n; ++i) {
    uint64_t bits;
    std::memcpy(&bits, &data[i], 8);
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<uint8_t>(bits >> (8 * b)));
  }
}

inline void get_f64(const uint8_t* in, double* data, size_t n) {
  for (size_t i = 0; i < n; ++i) {
    uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<uint64_t>(in[8 * i + b]) << (8 * b);
    std::memcpy(&data[i], &bits, 8);
  }
}

}  // namespace checkpoint_detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  using nlohmann::json;
  const NetworkParams& net = ck.net;

  json header;
  header["format_version"] = checkpoint_detail::kVersion;
  header["iteration"] = ck.iteration;
  header["seed"] = ck.seed;
  header["best_val_miscls"] = ck.best_val_miscls;
  header["model"] = to_string(net.model_kind);
  header["broadcast"] = to_string(net.broadcast_mode);
  header["clip_eligibility"] = net.clip_eligibility;
  header["step_count"] = ck.opt.step_count;
  header["neuron"] = {{"alpha", net.neuron.alpha}, {"rho", net.neuron.rho},
                      {"beta", net.neuron.beta},   {"kappa", net.neuron.kappa},
                      {"gamma", net.neuron.gamma}, {"v_th", net.neuron.v_th},
                      {"t_refr", net.neuron.t_refr}, {"dt", net.neuron.dt}};

  std::vector<uint8_t> payload;
  json tensors = json::array();
  auto add = [&](const std::string& name, const double* data, size_t n, int rows, int cols) {
    tensors.push_back({{"name", name}, {"rows", rows}, {"cols", cols}, {"count", n}});
    checkpoint_detail::put_f64(payload, data, n);
  };
  auto add_vec = [&](const std::string& name, const std::vector<double>& v) {
    add(name, v.data(), v.size(), static_cast<int>(v.size()), 1);
  };
  auto add_mask = [&](const std::string& name, const std::vector<uint8_t>& m, int rows,
                      int cols) {
    std::vector<double> as_f64(m.begin(), m.end());
    add(name, as_f64.data(), as_f64.size(), rows, cols);
  };

  header["n_layers"] = net.layers.size();
  for (size_t r = 0; r < net.layers.size(); ++r) {
    const LayerParams& l = net.layers[r];
    const std::string pfx = "layer" + std::to_string(r) + ".";
    add(pfx + "w_in", l.w_in.data(), l.w_in.size(), l.w_in.rows(), l.w_in.cols());
    add_mask(pfx + "mask_in", l.mask_in, l.w_in.rows(), l.w_in.cols());
    add(pfx + "w_rec", l.w_rec.data(), l.w_rec.size(), l.w_rec.rows(), l.w_rec.cols());
    add_mask(pfx + "mask_rec", l.mask_rec, l.w_rec.rows(), l.w_rec.cols());
    add_vec(pfx + "beta", l.beta_per_neuron);
    add(pfx + "b_feedback", net.b_feedback[r].data(), net.b_feedback[r].size(),
        net.b_feedback[r].rows(), net.b_feedback[r].cols());
    add_vec(pfx + "adam_in.m", ck.opt.layers[r].in.m);
    add_vec(pfx + "adam_in.v2", ck.opt.layers[r].in.v2);
    add_vec(pfx + "adam_rec.m", ck.opt.layers[r].rec.m);
    add_vec(pfx + "adam_rec.v2", ck.opt.layers[r].rec.v2);
  }
  add("w_out", net.w_out.data(), net.w_out.size(), net.w_out.rows(), net.w_out.cols());
  add_vec("bias", net.bias);
  add_vec("adam_out.m", ck.opt.out.m);
  add_vec("adam_out.v2", ck.opt.out.v2);
  add_vec("adam_bias.m", ck.opt.bias.m);
  add_vec("adam_bias.v2", ck.opt.bias.v2);
  header["tensors"] = tensors;

  const std::string header_str = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out.write("EPCK", 4);
  const uint64_t json_len = header_str.size();
  uint8_t framing[12];
  for (int b = 0; b < 4; ++b) framing[b] = static_cast<uint8_t>(checkpoint_detail::kVersion >> (8 * b));
  for (int b = 0; b < 8; ++b) framing[4 + b] = static_cast<uint8_t>(json_len >> (8 * b));
  out.write(reinterpret_cast<const char*>(framing), 12);
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size()));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  using nlohmann::json;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), "EPCK", 4) != 0)
    throw IoError("not a checkpoint file: " + path);
  uint32_t version = 0;
  uint64_t json_len = 0;
  for (int b = 0; b < 4; ++b) version |= static_cast<uint32_t>(bytes[4 + b]) << (8 * b);
  for (int b = 0; b < 8; ++b) json_len |= static_cast<uint64_t>(bytes[8 + b]) << (8 * b);
  if (version != checkpoint_detail::kVersion) throw IoError("unsupported checkpoint version");
  if (16 + json_len > bytes.size()) throw IoError("truncated checkpoint header");
  const json header = json::parse(bytes.begin() + 16, bytes.begin() + 16 + json_len);

  Checkpoint ck;
  ck.iteration = header.at("iteration").get<long>();
  ck.seed = header.at("seed").get<uint64_t>();
  ck.best_val_miscls = header.at("best_val_miscls").get<double>();
  ck.opt.step_count = header.at("step_count").get<long>();
  NetworkParams& net = ck.net;
  net.model_kind = model_kind_from_string(header.at("model").get<std::string>());
  net.broadcast_mode = broadcast_mode_from_string(header.at("broadcast").get<std::string>());
  net.clip_eligibility = header.at("clip_eligibility").get<bool>();
  const json& np = header.at("neuron");
  net.neuron.alpha = np.at("alpha").get<double>();
  net.neuron.rho = np.at("rho").get<double>();
  net.neuron.beta = np.at("beta").get<double>();
  net.neuron.kappa = np.at("kappa").get<double>();
  net.neuron.gamma = np.at("gamma").get<double>();
  net.neuron.v_th = np.at("v_th").get<double>();
  net.neuron.t_refr = np.at("t_refr").get<int>();
  net.neuron.dt = np.at("dt").get<double>();

  size_t pos = 16 + json_len;
  auto take = [&](size_t count) {
    if (pos + 8 * count > bytes.size()) throw IoError("truncated checkpoint payload");
    const uint8_t* p = bytes.data() + pos;
    pos += 8 * count;
    return p;
  };
  size_t tensor_idx = 0;
  const json& tensors = header.at("tensors");
  auto next = [&](Matrix& m) {
    const json& t = tensors.at(tensor_idx++);
    m = Matrix(t.at("rows").get<int>(), t.at("cols").get<int>());
    checkpoint_detail::get_f64(take(m.size()), m.data(), m.size());
  };
  auto next_vec = [&](std::vector<double>& v) {
    const json& t = tensors.at(tensor_idx++);
    v.resize(t.at("count").get<size_t>());
    checkpoint_detail::get_f64(take(v.size()), v.data(), v.size());
  };
  auto next_mask = [&](std::vector<uint8_t>& m) {
    std::vector<double> as_f64;
    next_vec(as_f64);
    m.resize(as_f64.size());
    for (size_t i = 0; i < m.size(); ++i) m[i] = as_f64[i] != 0.0 ? 1 : 0;
  };

  const size_t n_layers = header.at("n_layers").get<size_t>();
  net.layers.resize(n_layers);
  net.b_feedback.resize(n_layers);
  ck.opt.layers.resize(n_layers);
  for (size_t r = 0; r < n_layers; ++r) {
    LayerParams& l = net.layers[r];
    next(l.w_in);
    next_mask(l.mask_in);
    next(l.w_rec);
    next_mask(l.mask_rec);
    next_vec(l.beta_per_neuron);
    next(net.b_feedback[r]);
    next_vec(ck.opt.layers[r].in.m);
    next_vec(ck.opt.layers[r].in.v2);
    next_vec(ck.opt.layers[r].rec.m);
    next_vec(ck.opt.layers[r].rec.v2);
    l.rebuild_patterns();
  }
  next(net.w_out);
  next_vec(net.bias);
  next_vec(ck.opt.out.m);
  next_vec(ck.opt.out.v2);
  next_vec(ck.opt.bias.m);
  next_vec(ck.opt.bias.v2);
  return ck;
}

}  // namespace eprop
