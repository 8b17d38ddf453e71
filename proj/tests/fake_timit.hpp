#pragma once

// Builders for synthetic TIMIT-layout corpora and crafted audio files,
// shared by the dataset, CLI and acceptance tests.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

namespace fake_timit {

namespace fs = std::filesystem;

inline std::vector<uint8_t> sphere_bytes(const std::vector<int16_t>& samples, int rate = 16000,
                                         bool big_endian = false) {
  std::string header = "NIST_1A\n   1024\n";
  header += "sample_rate -i " + std::to_string(rate) + "\n";
  header += "channel_count -i 1\n";
  header += "sample_n_bytes -i 2\n";
  header += std::string("sample_byte_format -s2 ") + (big_endian ? "10" : "01") + "\n";
  header += "sample_count -i " + std::to_string(samples.size()) + "\n";
  header += "end_head\n";
  header.resize(1024, ' ');
  std::vector<uint8_t> bytes(header.begin(), header.end());
  for (int16_t s : samples) {
    const auto u = static_cast<uint16_t>(s);
    if (big_endian) {
      bytes.push_back(static_cast<uint8_t>(u >> 8));
      bytes.push_back(static_cast<uint8_t>(u));
    } else {
      bytes.push_back(static_cast<uint8_t>(u));
      bytes.push_back(static_cast<uint8_t>(u >> 8));
    }
  }
  return bytes;
}

inline std::vector<uint8_t> riff_bytes(const std::vector<int16_t>& samples, int rate = 16000) {
  std::vector<uint8_t> b;
  auto put32 = [&](uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<uint8_t>(v >> (8 * i)));
  };
  auto put16 = [&](uint16_t v) {
    b.push_back(static_cast<uint8_t>(v));
    b.push_back(static_cast<uint8_t>(v >> 8));
  };
  auto tag = [&](const char* t) { b.insert(b.end(), t, t + 4); };
  const uint32_t data_size = static_cast<uint32_t>(2 * samples.size());
  tag("RIFF");
  put32(36 + data_size);
  tag("WAVE");
  tag("fmt ");
  put32(16);
  put16(1);  // PCM
  put16(1);  // mono
  put32(static_cast<uint32_t>(rate));
  put32(static_cast<uint32_t>(rate * 2));
  put16(2);
  put16(16);
  tag("data");
  put32(data_size);
  for (int16_t s : samples) put16(static_cast<uint16_t>(s));
  return b;
}

inline void write_file(const fs::path& path, const std::vector<uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

/// The 61 TIMIT phone symbols.
inline const std::vector<std::string>& phone_inventory() {
  static const std::vector<std::string> phones = {
      "h#",  "aa", "ae",  "ah",  "ao",  "aw",  "ax",  "ax-h", "axr", "ay", "b",  "bcl", "ch",
      "d",   "dcl", "dh", "dx",  "eh",  "el",  "em",  "en",   "eng", "epi", "er", "ey", "f",
      "g",   "gcl", "hh", "hv",  "ih",  "ix",  "iy",  "jh",   "k",   "kcl", "l",  "m",  "n",
      "ng",  "nx",  "ow", "oy",  "p",   "pau", "pcl", "q",    "r",   "s",   "sh", "t",  "tcl",
      "th",  "uh",  "uw", "ux",  "v",   "w",   "y",   "z",    "zh"};
  return phones;
}

struct CorpusSpec {
  int train_speakers_per_dialect = 58;  // 8 dialects -> 464 total unless trimmed
  int extra_test_speakers_per_dialect = 18;
  int samples_per_utterance = 1200;
  bool full_size = true;  // 462 train speakers, as in the real layout
};

/// Lay out a complete synthetic corpus: TRAIN/TEST -> DR1..DR8 -> speaker
/// -> {SA1,SA2,SX0..SX4,SI0..SI2}.{WAV,PHN}. Audio is SPHERE 16 kHz.
inline void build_corpus(const fs::path& root, const CorpusSpec& spec = {}) {
  std::mt19937_64 rng(12345);
  std::uniform_int_distribution<int16_t> amp(-2000, 2000);
  std::uniform_int_distribution<int> phone_pick(1, 60);

  const std::vector<std::string> core = {
      "MDAB0", "MWBT0", "FELC0", "MTAS1", "MWEW0", "FPAS0", "MJMP0", "MLNT0",
      "FPKT0", "MLLL0", "MTLS0", "FJLM0", "MBPM0", "MKLT0", "FNLP0", "MCMJ0",
      "MJDH0", "FMGD0", "MGRT0", "MNJM0", "FDHC0", "MJLN0", "MPAM0", "FMLD0"};

  auto write_utterance = [&](const fs::path& dir, const std::string& sentence) {
    std::vector<int16_t> samples(spec.samples_per_utterance);
    for (auto& s : samples) s = amp(rng);
    write_file(dir / (sentence + ".WAV"), sphere_bytes(samples));
    const long mid = spec.samples_per_utterance / 2;
    std::ofstream phn(dir / (sentence + ".PHN"));
    phn << "0 " << mid << " h#\n";
    phn << mid << " " << spec.samples_per_utterance << " "
        << phone_inventory()[phone_pick(rng)] << "\n";
  };

  auto write_speaker = [&](const fs::path& dialect_dir, const std::string& name) {
    const fs::path dir = dialect_dir / name;
    fs::create_directories(dir);
    for (const char* s : {"SA1", "SA2"}) write_utterance(dir, s);
    for (int i = 0; i < 5; ++i) write_utterance(dir, "SX" + std::to_string(i));
    for (int i = 0; i < 3; ++i) write_utterance(dir, "SI" + std::to_string(i));
  };

  int train_budget = spec.full_size ? 462 : spec.train_speakers_per_dialect * 8;
  for (int d = 1; d <= 8; ++d) {
    const fs::path dialect = root / "TRAIN" / ("DR" + std::to_string(d));
    const int here = std::min(train_budget, spec.train_speakers_per_dialect);
    for (int s = 0; s < here; ++s) {
      char name[16];
      std::snprintf(name, sizeof(name), "%cTR%c%d", s % 3 == 0 ? 'F' : 'M', 'A' + d - 1, s);
      write_speaker(dialect, name);
    }
    train_budget -= here;
  }
  for (int d = 1; d <= 8; ++d) {
    const fs::path dialect = root / "TEST" / ("DR" + std::to_string(d));
    for (int c = 0; c < 3; ++c) write_speaker(dialect, core[(d - 1) * 3 + c]);
    for (int s = 0; s < spec.extra_test_speakers_per_dialect; ++s) {
      char name[16];
      std::snprintf(name, sizeof(name), "%cTE%c%d", s % 3 == 0 ? 'F' : 'M', 'A' + d - 1, s);
      write_speaker(dialect, name);
    }
  }
}

}  // namespace fake_timit
