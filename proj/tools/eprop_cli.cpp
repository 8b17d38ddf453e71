// Command-line front end: feature extraction, training, evaluation and the
// single-synapse demo traces.

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "eprop/checkpoint.hpp"
#include "eprop/dataset.hpp"
#include "eprop/demo.hpp"
#include "eprop/features.hpp"
#include "eprop/network.hpp"
#include "eprop/trainer.hpp"

namespace fs = std::filesystem;
using namespace eprop;

namespace {

/// Everything a run needs; field names mirror the hyperparameter table
/// and double as the TOML keys.
struct RunConfig {
  // neuron
  double alpha = 0.8, beta = 0.184, rho = 0.975, kappa = 0.8, gamma = 0.3, v_th = 0.95;
  int t_refr = 2;
  // optimizer and regularizers
  double eta = 0.01, beta1 = 0.9, beta2 = 0.999, c_reg = 50.0, c_l2 = 1e-5, f_target = 0.01;
  int batch_size = 32, epochs = 40, eval_every = 25, n_threads = 0;
  long max_iters = 100000;
  uint64_t seed = 1;
  // topology
  int n_neurons = 800, n_layers = 1;
  std::string model = "alif";
  std::string broadcast = "symmetric";
  bool clip_eligibility = true;
  // data
  std::string cache_dir;
  std::string out_dir = "runs/default";
  bool synthetic = false;
  int synth_classes = 4, synth_train = 256, synth_val = 128, synth_t_len = 50;
  double synth_separation = 1.5, synth_noise = 0.5, synth_baseline = 0.0;

  NeuronParams neuron_params() const {
    NeuronParams p;
    p.alpha = alpha;
    p.beta = beta;
    p.rho = rho;
    p.kappa = kappa;
    p.gamma = gamma;
    p.v_th = v_th;
    p.t_refr = t_refr;
    return p;
  }

  TrainConfig train_config() const {
    TrainConfig tc;
    tc.eta = eta;
    tc.beta1 = beta1;
    tc.beta2 = beta2;
    tc.batch_size = batch_size;
    tc.epochs = epochs;
    tc.eval_every = eval_every;
    tc.seed = seed;
    tc.c_reg = c_reg;
    tc.c_l2 = c_l2;
    tc.f_target = f_target;
    tc.n_threads = n_threads;
    return tc;
  }
};

void add_run_options(CLI::App* cmd, RunConfig& cfg) {
  cmd->add_option("--alpha", cfg.alpha, "activity decay per step");
  cmd->add_option("--beta", cfg.beta, "threshold adaptation strength");
  cmd->add_option("--rho", cfg.rho, "adaptation decay");
  cmd->add_option("--kappa", cfg.kappa, "output/trace filter decay");
  cmd->add_option("--gamma", cfg.gamma, "pseudo-derivative dampening");
  cmd->add_option("--v_th", cfg.v_th, "base threshold");
  cmd->add_option("--t_refr", cfg.t_refr, "refractory steps");
  cmd->add_option("--eta", cfg.eta, "learning rate");
  cmd->add_option("--beta1", cfg.beta1, "Adam first-moment decay");
  cmd->add_option("--beta2", cfg.beta2, "Adam second-moment decay");
  cmd->add_option("--c_reg", cfg.c_reg, "firing-rate regularization strength");
  cmd->add_option("--c_l2", cfg.c_l2, "L2 regularization strength");
  cmd->add_option("--f_target", cfg.f_target, "target firing rate per step");
  cmd->add_option("--batch_size", cfg.batch_size, "minibatch size");
  cmd->add_option("--epochs", cfg.epochs, "maximum epochs");
  cmd->add_option("--eval_every", cfg.eval_every, "minibatches between validation runs");
  cmd->add_option("--max_iters", cfg.max_iters, "maximum minibatch updates");
  cmd->add_option("--n_threads", cfg.n_threads, "worker threads (0 = hardware)");
  cmd->add_option("--seed", cfg.seed, "random seed");
  cmd->add_option("--n_neurons", cfg.n_neurons, "total recurrent neurons");
  cmd->add_option("--n_layers", cfg.n_layers, "number of recurrent layers (1-3)");
  cmd->add_option("--model", cfg.model, "neuron model: alif | stdp-alif | izhikevich");
  cmd->add_option("--broadcast", cfg.broadcast, "feedback mode: random | symmetric | adaptive");
  cmd->add_flag("--clip_eligibility,!--no-clip_eligibility", cfg.clip_eligibility,
                "clip Izhikevich eligibility components");
  cmd->add_option("--cache", cfg.cache_dir, "feature cache directory")
      ->envname("EPROP_DATA_ROOT");
  cmd->add_option("--out", cfg.out_dir, "output directory for metrics and checkpoints");
  cmd->add_flag("--synthetic", cfg.synthetic, "train on the synthetic task instead of caches");
  cmd->add_option("--synth_classes", cfg.synth_classes, "synthetic task classes");
  cmd->add_option("--synth_train", cfg.synth_train, "synthetic training samples");
  cmd->add_option("--synth_val", cfg.synth_val, "synthetic validation samples");
  cmd->add_option("--synth_t_len", cfg.synth_t_len, "synthetic frames per sample");
  cmd->add_option("--synth_separation", cfg.synth_separation, "synthetic class separation");
  cmd->add_option("--synth_noise", cfg.synth_noise, "synthetic noise level");
  cmd->add_option("--synth_baseline", cfg.synth_baseline, "synthetic constant input offset");
}

struct LoadedData {
  std::vector<Utterance> train, val, test;
  int n_inputs = 39;
  int n_outputs = 61;
};

LoadedData load_data(const RunConfig& cfg, bool need_train) {
  LoadedData data;
  if (cfg.synthetic) {
    SyntheticConfig sc;
    sc.seed = cfg.seed;
    sc.n_classes = cfg.synth_classes;
    sc.n_train = cfg.synth_train;
    sc.n_val = cfg.synth_val;
    sc.t_len = cfg.synth_t_len;
    sc.separation = cfg.synth_separation;
    sc.noise = cfg.synth_noise;
    sc.baseline = cfg.synth_baseline;
    SyntheticDataset synth = synthetic_task(sc);
    data.train = std::move(synth.train);
    data.val = std::move(synth.val);
    data.test = data.val;
    data.n_outputs = sc.n_classes;
    return data;
  }
  if (cfg.cache_dir.empty())
    throw ConfigError("no feature cache directory given (--cache or EPROP_DATA_ROOT)");
  const FeatureConfig fc;
  const CacheManifest manifest =
      CacheManifest::load((fs::path(cfg.cache_dir) / "manifest.json").string(), &fc);
  if (need_train) data.train = load_cached_split(cfg.cache_dir, manifest, "train");
  data.val = load_cached_split(cfg.cache_dir, manifest, "val");
  data.test = load_cached_split(cfg.cache_dir, manifest, "test");
  return data;
}

NetworkConfig network_config(const RunConfig& cfg, const LoadedData& data) {
  NetworkConfig nc;
  nc.n_layers = cfg.n_layers;
  nc.n_total = cfg.n_neurons;
  nc.n_inputs = data.n_inputs;
  nc.n_outputs = data.n_outputs;
  nc.model = model_kind_from_string(cfg.model);
  nc.broadcast = broadcast_mode_from_string(cfg.broadcast);
  nc.clip_eligibility = cfg.clip_eligibility;
  nc.neuron = cfg.neuron_params();
  return nc;
}

// ---------------------------------------------------------------- features

int cmd_features(const std::string& timit_dir, const std::string& out_dir, uint64_t seed,
                 bool force, int n_threads) {
  const FeatureConfig fc;
  fs::create_directories(out_dir);
  const std::string manifest_path = (fs::path(out_dir) / "manifest.json").string();
  if (!force && fs::exists(manifest_path)) {
    try {
      CacheManifest::load(manifest_path, &fc);
      std::cout << "cache at " << out_dir << " is up to date (use --force to rebuild)\n";
      return 0;
    } catch (const IoError&) {
      // stale or mismatched manifest: rebuild below
    }
  }

  const CorpusIndex index = index_corpus(timit_dir, seed);
  const Matrix filterbank = mel_filterbank(fc);

  struct Item {
    const UtteranceRecord* rec;
    Matrix features;
    std::vector<uint16_t> labels;
    std::string cache_name;
  };
  std::vector<Item> items(index.utterances.size());
  for (size_t i = 0; i < items.size(); ++i) items[i].rec = &index.utterances[i];

  // Phone labels are assigned in deterministic index order; the signal
  // work then fans out over threads.
  PhoneMap phones;
  std::vector<std::string> warnings;
  std::vector<std::vector<PhoneInterval>> intervals(items.size());
  for (size_t i = 0; i < items.size(); ++i)
    intervals[i] = read_phones(items[i].rec->phone_path, phones, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";

  std::atomic<size_t> cursor{0};
  auto worker = [&] {
    for (size_t i = cursor.fetch_add(1); i < items.size(); i = cursor.fetch_add(1)) {
      Item& item = items[i];
      const std::vector<double> samples = read_audio(item.rec->audio_path);
      item.features = extract_features(samples, fc, &filterbank);
      item.labels = align_targets(intervals[i], item.features.rows(), fc);
      item.cache_name = item.rec->speaker + "_" + item.rec->sentence + ".epft";
    }
  };
  const unsigned hw = std::thread::hardware_concurrency();
  const int workers = n_threads > 0 ? n_threads : static_cast<int>(hw ? hw : 1);
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  std::vector<Matrix> train_features;
  for (const auto& item : items)
    if (item.rec->split == "train") train_features.push_back(item.features);
  const ChannelStats stats = compute_stats(train_features);

  CacheManifest manifest;
  manifest.feature_config_hash = fc.hash();
  manifest.phones = phones;
  manifest.stats = stats;
  size_t n_train = 0, n_val = 0, n_test = 0;
  for (const auto& item : items) {
    Utterance u;
    u.features = item.features;
    u.labels = item.labels;
    write_cache((fs::path(out_dir) / item.cache_name).string(), u);
    if (item.rec->split == "train") {
      manifest.train_files.push_back(item.cache_name);
      n_train++;
    } else if (item.rec->split == "val") {
      manifest.val_files.push_back(item.cache_name);
      n_val++;
    } else {
      manifest.test_files.push_back(item.cache_name);
      n_test++;
    }
  }
  manifest.save(manifest_path);
  std::cout << "indexed " << items.size() << " utterances, " << phones.size()
            << " phone classes\n";
  std::cout << "splits train/val/test: " << n_train << "/" << n_val << "/" << n_test << "\n";
  return 0;
}

// ------------------------------------------------------------------- train

int cmd_train(RunConfig& cfg, const std::string& resume_path) {
  const LoadedData data = load_data(cfg, true);
  fs::create_directories(cfg.out_dir);

  TrainConfig tc = cfg.train_config();
  NetworkParams net;
  OptimizerState opt;
  long start_iter = 0;
  double best = std::numeric_limits<double>::infinity();
  if (!resume_path.empty()) {
    Checkpoint ck = load_checkpoint(resume_path);
    net = std::move(ck.net);
    opt = std::move(ck.opt);
    start_iter = ck.iteration;
    best = ck.best_val_miscls;
    tc.seed = ck.seed;  // keep the original data order
    std::cout << "resumed from " << resume_path << " at iteration " << start_iter << "\n";
  } else {
    net = init_network(network_config(cfg, data), cfg.seed);
  }

  Trainer trainer(std::move(net), tc);
  if (!resume_path.empty()) {
    trainer.optimizer() = std::move(opt);
    trainer.set_iteration(start_iter);
    trainer.set_best_val_miscls(best);
  }

  MetricsWriter metrics((fs::path(cfg.out_dir) / "metrics.csv").string());
  const std::string last_path = (fs::path(cfg.out_dir) / "last.ckpt").string();
  const std::string best_path = (fs::path(cfg.out_dir) / "best.ckpt").string();
  auto on_eval = [&](const Trainer& t, const MetricsRecord& m, bool is_best) {
    Checkpoint ck{t.net(), t.optimizer(), t.iteration(), tc.seed, t.best_val_miscls()};
    save_checkpoint(last_path, ck);
    if (is_best) save_checkpoint(best_path, ck);
    std::printf("iter %ld: val miscls %.2f%%, xent %.4f, rate %.1f Hz, reg %.4g%s\n", m.iter,
                m.miscls_pct, m.xent, m.mean_rate_hz, m.reg_err, is_best ? " (best)" : "");
    std::fflush(stdout);
  };

  const MetricsRecord final_val =
      trainer.fit(data.train, data.val, cfg.max_iters, &metrics, on_eval);
  std::printf("done at iteration %ld: best val miscls %.2f%%, last val miscls %.2f%%\n",
              trainer.iteration(), trainer.best_val_miscls(), final_val.miscls_pct);
  return 0;
}

// -------------------------------------------------------------------- eval

int cmd_eval(RunConfig& cfg, const std::string& checkpoint_path, const std::string& split) {
  const Checkpoint ck = load_checkpoint(checkpoint_path);
  const LoadedData data = load_data(cfg, split == "train");
  const std::vector<Utterance>* utts = nullptr;
  if (split == "train")
    utts = &data.train;
  else if (split == "val")
    utts = &data.val;
  else if (split == "test")
    utts = &data.test;
  else
    throw ConfigError("unknown split: " + split);

  MetricsRecord m = evaluate(ck.net, *utts, cfg.train_config());
  m.iter = ck.iteration;
  std::printf("%s: miscls %.2f%%, xent %.4f, mean rate %.1f Hz, reg err %.4g\n", split.c_str(),
              m.miscls_pct, m.xent, m.mean_rate_hz, m.reg_err);
  fs::create_directories(cfg.out_dir);
  MetricsWriter metrics((fs::path(cfg.out_dir) / "metrics.csv").string());
  metrics.append(m, split);
  return 0;
}

// -------------------------------------------------------------------- demo

int cmd_demo(const std::string& model, const std::string& protocol_path,
             const std::string& out_csv, double learning_signal) {
  DemoConfig cfg;
  if (model == "izh-unclipped") {
    cfg.model = ModelKind::Izhikevich;
    cfg.clip_eligibility = false;
  } else {
    cfg.model = model_kind_from_string(model);
  }
  cfg.learning_signal = learning_signal;
  const DemoProtocol proto = load_protocol(protocol_path);
  const auto trace = run_demo(cfg, proto);
  write_demo_csv(out_csv, trace);
  std::cout << "wrote " << trace.size() << " steps to " << out_csv << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"eligibility-propagation training for recurrent spiking networks"};
  app.require_subcommand(1);

  // features
  auto* features = app.add_subcommand("features", "extract MFCC features from a TIMIT layout");
  std::string timit_dir, feat_out;
  uint64_t feat_seed = 1;
  bool force = false;
  int feat_threads = 0;
  features->add_option("--timit", timit_dir, "corpus root directory")
      ->envname("EPROP_DATA_ROOT")
      ->required();
  features->add_option("--out", feat_out, "cache output directory")->required();
  features->add_option("--seed", feat_seed, "split shuffle seed");
  features->add_option("--n_threads", feat_threads, "worker threads (0 = hardware)");
  features->add_flag("--force", force, "rebuild even if the cache is current");

  // train
  auto* train = app.add_subcommand("train", "train a network with e-prop");
  RunConfig train_cfg;
  std::string resume_path;
  train->set_config("--config", "", "TOML config file");
  train->allow_config_extras(false);
  add_run_options(train, train_cfg);
  train->add_option("--resume", resume_path, "checkpoint to resume from");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  RunConfig eval_cfg;
  std::string checkpoint_path, split = "test";
  eval->set_config("--config", "", "TOML config file");
  eval->allow_config_extras(false);
  add_run_options(eval, eval_cfg);
  eval->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
  eval->add_option("--split", split, "train | val | test");

  // demo
  auto* demo = app.add_subcommand("demo", "single-synapse trace with a scripted protocol");
  std::string demo_model = "alif", protocol_path, demo_out = "demo.csv";
  double learning_signal = 1.0;
  demo->add_option("--model", demo_model, "alif | stdp-alif | izh | izh-unclipped");
  demo->add_option("--protocol", protocol_path, "protocol file")->required();
  demo->add_option("--out", demo_out, "output CSV path");
  demo->add_option("--learning-signal", learning_signal, "constant learning signal");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*features) return cmd_features(timit_dir, feat_out, feat_seed, force, feat_threads);
    if (*train) return cmd_train(train_cfg, resume_path);
    if (*eval) return cmd_eval(eval_cfg, checkpoint_path, split);
    if (*demo) return cmd_demo(demo_model, protocol_path, demo_out, learning_signal);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "run failed: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
