#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "eprop/features.hpp"
#include "eprop/utterance.hpp"

namespace eprop {

namespace fs = std::filesystem;

/// Bidirectional phone-string <-> class-index map, capped at 61 classes.
/// Indices are assigned in encounter order and persisted in the cache
/// manifest so they stay stable across runs.
class PhoneMap {
 public:
  static constexpr int kMaxPhones = 61;

  int add_or_get(const std::string& phone) {
    auto it = by_name_.find(phone);
    if (it != by_name_.end()) return it->second;
    if (static_cast<int>(by_index_.size()) >= kMaxPhones)
      throw IoError("phone map full (61 classes), cannot add: " + phone);
    const int idx = static_cast<int>(by_index_.size());
    by_index_.push_back(phone);
    by_name_.emplace(phone, idx);
    return idx;
  }

  int get(const std::string& phone) const {
    auto it = by_name_.find(phone);
    if (it == by_name_.end()) throw IoError("unknown phone: " + phone);
    return it->second;
  }

  const std::string& name(int idx) const { return by_index_.at(idx); }
  int size() const { return static_cast<int>(by_index_.size()); }
  const std::vector<std::string>& names() const { return by_index_; }

  static PhoneMap from_names(const std::vector<std::string>& names) {
    PhoneMap m;
    for (const auto& n : names) m.add_or_get(n);
    return m;
  }

 private:
  std::vector<std::string> by_index_;
  std::unordered_map<std::string, int> by_name_;
};

/// One corpus entry: paired audio + phone transcript plus the metadata
/// the splitter needs.
struct UtteranceRecord {
  std::string audio_path;
  std::string phone_path;
  std::string speaker;     // e.g. MDAB0
  std::string dialect;     // e.g. DR1
  std::string sentence;    // e.g. SX49
  std::string split;       // train | val | test
};

struct CorpusIndex {
  std::vector<UtteranceRecord> utterances;

  std::vector<const UtteranceRecord*> split(const std::string& name) const {
    std::vector<const UtteranceRecord*> out;
    for (const auto& u : utterances)
      if (u.split == name) out.push_back(&u);
    return out;
  }
  size_t count(const std::string& name) const { return split(name).size(); }
};

/// The 24 speakers of the TIMIT core test set (2 male + 1 female per
/// dialect region, per the corpus documentation).
inline const std::vector<std::string>& core_test_speakers() {
  static const std::vector<std::string> speakers = {
      "MDAB0", "MWBT0", "FELC0",  // DR1
      "MTAS1", "MWEW0", "FPAS0",  // DR2
      "MJMP0", "MLNT0", "FPKT0",  // DR3
      "MLLL0", "MTLS0", "FJLM0",  // DR4
      "MBPM0", "MKLT0", "FNLP0",  // DR5
      "MCMJ0", "MJDH0", "FMGD0",  // DR6
      "MGRT0", "MNJM0", "FDHC0",  // DR7
      "MJLN0", "MPAM0", "FMLD0",  // DR8
  };
  return speakers;
}

namespace detail {

inline std::string upper(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

inline bool has_suffix_ci(const std::string& name, const std::string& suffix) {
  if (name.size() < suffix.size()) return false;
  return upper(name.substr(name.size() - suffix.size())) == upper(suffix);
}

inline uint16_t read_u16le(const uint8_t* p) { return static_cast<uint16_t>(p[0] | p[1] << 8); }
inline uint32_t read_u32le(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | static_cast<uint32_t>(p[1]) << 8 |
         static_cast<uint32_t>(p[2]) << 16 | static_cast<uint32_t>(p[3]) << 24;
}

}  // namespace detail

/// Scan a TIMIT-layout directory (TRAIN/TEST -> dialect -> speaker ->
/// sentence.{wav,phn}) and build the train/val/test split: the core test
/// speakers form the 192-sentence test set, SA sentences are dropped, and
/// the remaining utterances are shuffled by `seed` into 3696 train + 400
/// validation.
inline CorpusIndex index_corpus(const std::string& root_dir, uint64_t seed = 1,
                                int n_train = 3696, int n_val = 400) {
  if (!fs::is_directory(root_dir)) throw IoError("corpus root is not a directory: " + root_dir);
  const std::vector<std::string>& core = core_test_speakers();

  std::vector<UtteranceRecord> all;
  std::vector<std::string> problems;
  for (const char* section : {"TRAIN", "TEST", "train", "test"}) {
    const fs::path sec = fs::path(root_dir) / section;
    if (!fs::is_directory(sec)) continue;
    for (const auto& dialect : fs::directory_iterator(sec)) {
      if (!dialect.is_directory()) continue;
      for (const auto& speaker : fs::directory_iterator(dialect.path())) {
        if (!speaker.is_directory()) continue;
        for (const auto& file : fs::directory_iterator(speaker.path())) {
          const std::string name = file.path().filename().string();
          if (!detail::has_suffix_ci(name, ".wav")) continue;
          UtteranceRecord rec;
          rec.audio_path = file.path().string();
          rec.speaker = detail::upper(speaker.path().filename().string());
          rec.dialect = detail::upper(dialect.path().filename().string());
          rec.sentence = detail::upper(name.substr(0, name.size() - 4));
          fs::path phn = file.path();
          phn.replace_extension(name.back() == 'V' ? "PHN" : "phn");
          if (!fs::exists(phn)) {
            phn.replace_extension(name.back() == 'V' ? "phn" : "PHN");
          }
          if (!fs::exists(phn)) {
            problems.push_back("missing transcript for " + rec.audio_path);
            continue;
          }
          rec.phone_path = phn.string();
          all.push_back(std::move(rec));
        }
      }
    }
  }
  if (!problems.empty()) {
    std::string msg = "corpus indexing failed:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw IoError(msg);
  }
  if (all.empty()) throw IoError("no utterances found under " + root_dir);

  std::sort(all.begin(), all.end(), [](const UtteranceRecord& a, const UtteranceRecord& b) {
    return std::tie(a.speaker, a.sentence) < std::tie(b.speaker, b.sentence);
  });

  CorpusIndex index;
  std::vector<UtteranceRecord> pool;
  for (auto& rec : all) {
    const bool is_sa = rec.sentence.rfind("SA", 0) == 0;
    const bool is_core =
        std::find(core.begin(), core.end(), rec.speaker) != core.end();
    if (is_core) {
      if (!is_sa) {
        rec.split = "test";
        index.utterances.push_back(rec);
      }
    } else if (!is_sa) {
      pool.push_back(rec);
    }
  }

  if (static_cast<int>(pool.size()) < n_train + n_val)
    throw IoError("not enough non-test utterances for the requested split sizes");
  std::mt19937_64 rng(seed);
  std::shuffle(pool.begin(), pool.end(), rng);
  for (int i = 0; i < n_train + n_val; ++i) {
    pool[i].split = i < n_train ? "train" : "val";
    index.utterances.push_back(pool[i]);
  }
  return index;
}

/// Read a 16 kHz mono 16-bit PCM file with either a RIFF WAV or a NIST
/// SPHERE header (TIMIT ships SPHERE files under the .wav suffix).
inline std::vector<double> read_audio(const std::string& path, int expected_rate = 16000) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open audio file: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  if (bytes.size() < 16) throw IoError("audio file too short: " + path);

  auto to_samples = [&](size_t offset, size_t count, bool big_endian) {
    if (offset + 2 * count > bytes.size())
      throw IoError("audio payload shorter than declared: " + path);
    std::vector<double> samples(count);
    for (size_t i = 0; i < count; ++i) {
      const uint8_t lo = bytes[offset + 2 * i + (big_endian ? 1 : 0)];
      const uint8_t hi = bytes[offset + 2 * i + (big_endian ? 0 : 1)];
      samples[i] = static_cast<double>(static_cast<int16_t>(lo | hi << 8));
    }
    return samples;
  };

  if (std::memcmp(bytes.data(), "RIFF", 4) == 0) {
    if (bytes.size() < 44 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
      throw IoError("malformed RIFF file: " + path);
    size_t pos = 12;
    int channels = 0, rate = 0, bits = 0;
    while (pos + 8 <= bytes.size()) {
      const uint32_t chunk_size = detail::read_u32le(&bytes[pos + 4]);
      if (std::memcmp(&bytes[pos], "fmt ", 4) == 0) {
        if (pos + 24 > bytes.size()) throw IoError("truncated fmt chunk: " + path);
        const uint16_t format = detail::read_u16le(&bytes[pos + 8]);
        channels = detail::read_u16le(&bytes[pos + 10]);
        rate = static_cast<int>(detail::read_u32le(&bytes[pos + 12]));
        bits = detail::read_u16le(&bytes[pos + 22]);
        if (format != 1) throw IoError("unsupported WAV encoding (not PCM): " + path);
      } else if (std::memcmp(&bytes[pos], "data", 4) == 0) {
        if (channels != 1 || bits != 16)
          throw IoError("expected 16-bit mono PCM: " + path);
        if (rate != expected_rate)
          throw IoError("unexpected sample rate " + std::to_string(rate) + " in " + path);
        return to_samples(pos + 8, chunk_size / 2, false);
      }
      pos += 8 + chunk_size + (chunk_size & 1);
    }
    throw IoError("RIFF file has no data chunk: " + path);
  }

  if (std::memcmp(bytes.data(), "NIST_1A", 7) == 0) {
    // Line 2 of the header carries the total header byte count.
    const std::string head(bytes.begin(), bytes.begin() + std::min<size_t>(bytes.size(), 1024));
    std::istringstream hs(head);
    std::string magic, size_line;
    std::getline(hs, magic);
    std::getline(hs, size_line);
    const size_t header_size = static_cast<size_t>(std::stoul(size_line));
    if (header_size > bytes.size()) throw IoError("SPHERE header size exceeds file: " + path);

    const std::string full_head(bytes.begin(), bytes.begin() + header_size);
    auto field = [&](const std::string& key) -> std::string {
      const size_t at = full_head.find(key);
      if (at == std::string::npos) return "";
      std::istringstream line(full_head.substr(at));
      std::string k, type, value;
      line >> k >> type >> value;
      return value;
    };
    const std::string rate_s = field("sample_rate");
    const std::string count_s = field("sample_count");
    const std::string channels_s = field("channel_count");
    const std::string nbytes_s = field("sample_n_bytes");
    const std::string byte_fmt = field("sample_byte_format");
    if (!rate_s.empty() && std::stoi(rate_s) != expected_rate)
      throw IoError("unexpected sample rate " + rate_s + " in " + path);
    if (!channels_s.empty() && std::stoi(channels_s) != 1)
      throw IoError("expected mono audio: " + path);
    if (!nbytes_s.empty() && std::stoi(nbytes_s) != 2)
      throw IoError("expected 16-bit samples: " + path);
    const bool big_endian = byte_fmt == "10";
    const size_t count = count_s.empty() ? (bytes.size() - header_size) / 2
                                         : static_cast<size_t>(std::stoul(count_s));
    return to_samples(header_size, count, big_endian);
  }

  throw IoError("unsupported audio container (not RIFF or NIST SPHERE): " + path);
}

/// Parse a TIMIT .phn transcript ("start end phone" per line) into
/// sample intervals. Out-of-order lines are sorted; overlaps or gaps are
/// reported through the optional warning sink.
inline std::vector<PhoneInterval> read_phones(const std::string& path, PhoneMap& phones,
                                              std::vector<std::string>* warnings = nullptr) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open phone file: " + path);
  std::vector<PhoneInterval> intervals;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    long start, end;
    std::string phone;
    if (!(ls >> start >> end >> phone)) throw IoError("malformed phone line in " + path);
    intervals.push_back({start, end, phones.add_or_get(phone)});
  }
  if (intervals.empty()) throw IoError("empty phone file: " + path);

  const bool sorted = std::is_sorted(intervals.begin(), intervals.end(),
                                     [](const auto& a, const auto& b) { return a.start < b.start; });
  if (!sorted) {
    std::sort(intervals.begin(), intervals.end(),
              [](const auto& a, const auto& b) { return a.start < b.start; });
    if (warnings) warnings->push_back(path + ": phone intervals were out of order");
  }
  for (size_t i = 1; i < intervals.size(); ++i) {
    if (intervals[i].start != intervals[i - 1].end && warnings)
      warnings->push_back(path + ": gap or overlap between phone intervals");
  }
  return intervals;
}

struct SyntheticConfig {
  uint64_t seed = 1;
  int n_classes = 4;
  int n_train = 256;
  int n_val = 128;
  int t_len = 50;
  int n_channels = 39;
  double separation = 1.5;   // scale of the per-class mean patterns
  double noise = 0.5;        // pre-smoothing noise sigma
  double baseline = 0.0;     // constant positive offset on every channel
  int smooth_window = 5;
};

struct SyntheticDataset {
  std::vector<Utterance> train;
  std::vector<Utterance> val;
  int n_classes = 0;
};

/// Desk-scale stand-in for the speech data: class-conditional Gaussian
/// sequences around fixed per-class channel patterns, constant label per
/// sample, deterministic per seed.
inline SyntheticDataset synthetic_task(const SyntheticConfig& cfg) {
  if (cfg.n_classes < 1 || cfg.t_len < 1 || cfg.n_channels < 1)
    throw ConfigError("synthetic_task: sizes must be positive");
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<std::vector<double>> mu(cfg.n_classes, std::vector<double>(cfg.n_channels));
  for (auto& row : mu)
    for (auto& v : row) v = cfg.separation * gauss(rng);

  auto make_sample = [&](int cls) {
    Utterance u;
    u.features = Matrix(cfg.t_len, cfg.n_channels);
    Matrix raw(cfg.t_len, cfg.n_channels);
    for (int t = 0; t < cfg.t_len; ++t)
      for (int c = 0; c < cfg.n_channels; ++c) raw(t, c) = cfg.noise * gauss(rng);
    const int w = std::max(1, cfg.smooth_window);
    for (int t = 0; t < cfg.t_len; ++t)
      for (int c = 0; c < cfg.n_channels; ++c) {
        double acc = 0.0;
        int n = 0;
        for (int s = t - w / 2; s <= t + w / 2; ++s)
          if (s >= 0 && s < cfg.t_len) {
            acc += raw(s, c);
            ++n;
          }
        u.features(t, c) = cfg.baseline + mu[cls][c] + acc / n;
      }
    u.labels.assign(cfg.t_len, static_cast<uint16_t>(cls));
    return u;
  };

  SyntheticDataset out;
  out.n_classes = cfg.n_classes;
  for (int i = 0; i < cfg.n_train; ++i) out.train.push_back(make_sample(i % cfg.n_classes));
  for (int i = 0; i < cfg.n_val; ++i) out.val.push_back(make_sample(i % cfg.n_classes));
  return out;
}

// ---------------------------------------------------------------------
// Feature cache files: "EPFT" magic, version, counts, float32 LE frames
// row-major, then uint16 labels.
// ---------------------------------------------------------------------

inline constexpr uint32_t kCacheFormatVersion = 1;

inline void write_cache(const std::string& path, const Utterance& utt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write cache file: " + path);
  auto put_u32 = [&](uint32_t v) {
    uint8_t b[4] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8),
                    static_cast<uint8_t>(v >> 16), static_cast<uint8_t>(v >> 24)};
    out.write(reinterpret_cast<char*>(b), 4);
  };
  out.write("EPFT", 4);
  put_u32(kCacheFormatVersion);
  put_u32(static_cast<uint32_t>(utt.n_frames()));
  put_u32(static_cast<uint32_t>(utt.n_channels()));
  const uint8_t has_labels = utt.labels.empty() ? 0 : 1;
  out.write(reinterpret_cast<const char*>(&has_labels), 1);
  for (int t = 0; t < utt.n_frames(); ++t)
    for (int c = 0; c < utt.n_channels(); ++c) {
      const float f = static_cast<float>(utt.features(t, c));
      uint32_t bits;
      std::memcpy(&bits, &f, 4);
      put_u32(bits);
    }
  if (has_labels) {
    for (uint16_t l : utt.labels) {
      uint8_t b[2] = {static_cast<uint8_t>(l), static_cast<uint8_t>(l >> 8)};
      out.write(reinterpret_cast<char*>(b), 2);
    }
  }
}

inline Utterance read_cache(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open cache file: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  if (bytes.size() < 17 || std::memcmp(bytes.data(), "EPFT", 4) != 0)
    throw IoError("not a feature cache file: " + path);
  const uint32_t version = detail::read_u32le(&bytes[4]);
  if (version != kCacheFormatVersion)
    throw IoError("unsupported cache version in " + path);
  const uint32_t n_frames = detail::read_u32le(&bytes[8]);
  const uint32_t n_channels = detail::read_u32le(&bytes[12]);
  const uint8_t has_labels = bytes[16];
  const size_t payload = 17 + 4ull * n_frames * n_channels + (has_labels ? 2ull * n_frames : 0);
  if (bytes.size() != payload)
    throw IoError("cache payload length mismatch in " + path);

  Utterance utt;
  utt.features = Matrix(static_cast<int>(n_frames), static_cast<int>(n_channels));
  size_t pos = 17;
  for (uint32_t t = 0; t < n_frames; ++t)
    for (uint32_t c = 0; c < n_channels; ++c) {
      const uint32_t bits = detail::read_u32le(&bytes[pos]);
      float f;
      std::memcpy(&f, &bits, 4);
      utt.features(static_cast<int>(t), static_cast<int>(c)) = f;
      pos += 4;
    }
  if (has_labels) {
    utt.labels.resize(n_frames);
    for (uint32_t t = 0; t < n_frames; ++t) {
      utt.labels[t] = detail::read_u16le(&bytes[pos]);
      pos += 2;
    }
  }
  return utt;
}

/// JSON manifest describing a cache directory: phone map, channel stats,
/// split membership and the feature-config hash that produced it.
struct CacheManifest {
  uint64_t feature_config_hash = 0;
  PhoneMap phones;
  ChannelStats stats;
  std::vector<std::string> train_files, val_files, test_files;

  void save(const std::string& path) const {
    nlohmann::json j;
    j["format_version"] = 1;
    j["feature_config_hash"] = feature_config_hash;
    j["phones"] = phones.names();
    j["channel_mean"] = stats.mean;
    j["channel_std"] = stats.std_dev;
    j["splits"]["train"] = train_files;
    j["splits"]["val"] = val_files;
    j["splits"]["test"] = test_files;
    std::ofstream out(path);
    if (!out) throw IoError("cannot write manifest: " + path);
    out << j.dump(2) << "\n";
  }

  static CacheManifest load(const std::string& path, const FeatureConfig* expect_cfg = nullptr) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest: " + path);
    nlohmann::json j;
    in >> j;
    CacheManifest m;
    m.feature_config_hash = j.at("feature_config_hash").get<uint64_t>();
    if (expect_cfg && m.feature_config_hash != expect_cfg->hash())
      throw IoError("manifest was built with a different feature configuration: " + path);
    m.phones = PhoneMap::from_names(j.at("phones").get<std::vector<std::string>>());
    m.stats.mean = j.at("channel_mean").get<std::vector<double>>();
    m.stats.std_dev = j.at("channel_std").get<std::vector<double>>();
    m.train_files = j.at("splits").at("train").get<std::vector<std::string>>();
    m.val_files = j.at("splits").at("val").get<std::vector<std::string>>();
    m.test_files = j.at("splits").at("test").get<std::vector<std::string>>();
    return m;
  }
};

/// Load one split from a cache directory, standardized with the stats
/// stored in the manifest.
inline std::vector<Utterance> load_cached_split(const std::string& cache_dir,
                                                const CacheManifest& manifest,
                                                const std::string& split) {
  const std::vector<std::string>* files = nullptr;
  if (split == "train")
    files = &manifest.train_files;
  else if (split == "val")
    files = &manifest.val_files;
  else if (split == "test")
    files = &manifest.test_files;
  else
    throw ConfigError("unknown split: " + split);
  std::vector<Utterance> out;
  out.reserve(files->size());
  for (const auto& f : *files) {
    Utterance u = read_cache((fs::path(cache_dir) / f).string());
    standardize(u.features, manifest.stats);
    out.push_back(std::move(u));
  }
  return out;
}

}  // namespace eprop
