#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <vector>

#include "eprop/matrix.hpp"
#include "eprop/utterance.hpp"

namespace eprop {

struct FeatureConfig {
  double preemph = 0.97;
  int frame_len = 400;    // samples (25 ms at 16 kHz)
  int frame_step = 160;   // samples (10 ms)
  int fft_size = 512;
  int n_filters = 40;
  int n_ceps_kept = 13;   // cepstral indices 1..13 after dropping index 0
  int sample_rate = 16000;

  void validate() const {
    if (frame_len <= 0 || frame_step <= 0 || fft_size <= 0 || n_filters <= 0 ||
        n_ceps_kept <= 0 || sample_rate <= 0)
      throw ConfigError("feature config values must be positive");
    if (frame_len > fft_size) throw ConfigError("frame_len must be <= fft_size");
    if ((fft_size & (fft_size - 1)) != 0) throw ConfigError("fft_size must be a power of two");
    if (n_ceps_kept >= n_filters) throw ConfigError("n_ceps_kept must be < n_filters");
  }

  int n_feature_channels() const { return 3 * n_ceps_kept; }

  /// Stable hash over all fields; cache manifests use it to refuse loads
  /// produced with a different configuration.
  uint64_t hash() const {
    uint64_t h = 1469598103934665603ull;  // FNV-1a
    auto mix = [&h](uint64_t v) {
      for (int i = 0; i < 8; ++i) {
        h ^= (v >> (8 * i)) & 0xff;
        h *= 1099511628211ull;
      }
    };
    uint64_t pe;
    static_assert(sizeof(pe) == sizeof(preemph));
    std::memcpy(&pe, &preemph, sizeof(pe));
    mix(pe);
    mix(static_cast<uint64_t>(frame_len));
    mix(static_cast<uint64_t>(frame_step));
    mix(static_cast<uint64_t>(fft_size));
    mix(static_cast<uint64_t>(n_filters));
    mix(static_cast<uint64_t>(n_ceps_kept));
    mix(static_cast<uint64_t>(sample_rate));
    return h;
  }
};

/// y(0) = x(0), y(t) = x(t) - preemph * x(t-1).
inline std::vector<double> pre_emphasis(const std::vector<double>& x, double preemph = 0.97) {
  std::vector<double> y(x.size());
  if (x.empty()) return y;
  y[0] = x[0];
  for (size_t t = 1; t < x.size(); ++t) y[t] = x[t] - preemph * x[t - 1];
  return y;
}

inline double hamming_coefficient(double n, int window_len) {
  return 0.53836 - 0.46164 * std::cos(2.0 * M_PI * n / (window_len - 1));
}

inline int frame_count(size_t n_samples, const FeatureConfig& cfg) {
  const long extra = static_cast<long>(n_samples) - cfg.frame_len;
  if (extra <= 0) return 1;
  return 1 + static_cast<int>((extra + cfg.frame_step - 1) / cfg.frame_step);
}

/// Slice into overlapping frames (zero-padded at the end) and apply the
/// Hamming window. Returns n_frames x frame_len.
inline Matrix frame_and_window(const std::vector<double>& y, const FeatureConfig& cfg,
                               bool window = true) {
  const int n_frames = frame_count(y.size(), cfg);
  Matrix frames(n_frames, cfg.frame_len);
  for (int i = 0; i < n_frames; ++i) {
    const size_t start = static_cast<size_t>(i) * cfg.frame_step;
    for (int n = 0; n < cfg.frame_len; ++n) {
      const size_t idx = start + n;
      double v = idx < y.size() ? y[idx] : 0.0;
      if (window) v *= hamming_coefficient(n, cfg.frame_len);
      frames(i, n) = v;
    }
  }
  return frames;
}

namespace detail {

/// In-place iterative radix-2 FFT (decimation in time).
inline void fft_radix2(std::vector<std::complex<double>>& a) {
  const size_t n = a.size();
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * M_PI / static_cast<double>(len);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0);
      for (size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> u = a[i + k];
        const std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

}  // namespace detail

/// Power spectrum of one frame over the non-negative frequency bins:
/// P_k = |X_k|^2 / K for k = 0..K/2, where X is the K-point DFT of the
/// (zero-padded) frame.
inline std::vector<double> power_spectrum(const double* frame, int frame_len,
                                          const FeatureConfig& cfg) {
  std::vector<std::complex<double>> buf(cfg.fft_size, 0.0);
  for (int n = 0; n < frame_len; ++n) buf[n] = frame[n];
  detail::fft_radix2(buf);
  std::vector<double> p(cfg.fft_size / 2 + 1);
  for (size_t k = 0; k < p.size(); ++k) p[k] = std::norm(buf[k]) / cfg.fft_size;
  return p;
}

inline std::vector<double> power_spectrum(const std::vector<double>& frame,
                                          const FeatureConfig& cfg) {
  return power_spectrum(frame.data(), static_cast<int>(frame.size()), cfg);
}

// Mel conversion constants matching the filterbank tables this pipeline
// reproduces (8 kHz <-> ~2835 Mel).
inline double hz_to_mel(double f) { return 1125.0 * std::log(1.0 + f / 700.0); }
inline double mel_to_hz(double m) { return 700.0 * (std::exp(m / 1125.0) - 1.0); }

/// Triangular Mel filterbank, n_filters x (fft_size/2 + 1). Filter i
/// rises from bin b_i to 1 at b_{i+1} and falls to zero at b_{i+2}, where
/// the b are the FFT bins of n_filters+2 linearly spaced Mel points
/// between 0 and sample_rate/2.
inline Matrix mel_filterbank(const FeatureConfig& cfg) {
  const int n_bins = cfg.fft_size / 2 + 1;
  const double mel_max = hz_to_mel(cfg.sample_rate / 2.0);
  std::vector<int> bins(cfg.n_filters + 2);
  for (int i = 0; i < cfg.n_filters + 2; ++i) {
    const double mel = mel_max * i / (cfg.n_filters + 1);
    const double hz = mel_to_hz(mel);
    bins[i] = static_cast<int>(std::floor((cfg.fft_size + 1) * hz / cfg.sample_rate));
  }
  Matrix h(cfg.n_filters, n_bins);
  for (int i = 0; i < cfg.n_filters; ++i) {
    const int lo = bins[i], peak = bins[i + 1], hi = bins[i + 2];
    for (int k = lo; k <= hi && k < n_bins; ++k) {
      if (k < peak)
        h(i, k) = static_cast<double>(k - lo) / (peak - lo);
      else if (k == peak)
        h(i, k) = 1.0;
      else
        h(i, k) = static_cast<double>(hi - k) / (hi - peak);
    }
  }
  return h;
}

/// Orthonormal DCT-II over the log filterbank energies; coefficient 0 is
/// dropped and indices 1..n_ceps_kept are returned, so the result is
/// n_frames x n_ceps_kept.
inline Matrix mfcc(const Matrix& log_energies, const FeatureConfig& cfg) {
  const int n = log_energies.cols();
  Matrix out(log_energies.rows(), cfg.n_ceps_kept);
  for (int t = 0; t < log_energies.rows(); ++t) {
    for (int k = 1; k <= cfg.n_ceps_kept; ++k) {
      const double c = std::sqrt(1.0 / (2.0 * n));  // k > 0 scaling
      double acc = 0.0;
      for (int i = 0; i < n; ++i)
        acc += log_energies(t, i) * std::cos(M_PI * k * (2.0 * i + 1.0) / (2.0 * n));
      out(t, k - 1) = 2.0 * c * acc;
    }
  }
  return out;
}

/// Centered first differences with edge clamping, applied twice; returns
/// [c | delta | delta-delta], T x 3*n_ceps.
inline Matrix deltas(const Matrix& ceps) {
  const int t_max = ceps.rows(), n = ceps.cols();
  Matrix out(t_max, 3 * n);
  auto diff = [&](auto get, int t, int c) {
    const double next = get(std::min(t + 1, t_max - 1), c);
    const double prev = get(std::max(t - 1, 0), c);
    return (next - prev) / 2.0;
  };
  for (int t = 0; t < t_max; ++t)
    for (int c = 0; c < n; ++c) out(t, c) = ceps(t, c);
  for (int t = 0; t < t_max; ++t)
    for (int c = 0; c < n; ++c)
      out(t, n + c) = diff([&](int tt, int cc) { return ceps(tt, cc); }, t, c);
  for (int t = 0; t < t_max; ++t)
    for (int c = 0; c < n; ++c)
      out(t, 2 * n + c) = diff([&](int tt, int cc) { return out(tt, n + cc); }, t, c);
  return out;
}

/// Per-channel mean/std computed on the training split only and reused
/// verbatim for validation and test data.
struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> std_dev;
};

inline ChannelStats compute_stats(const std::vector<Matrix>& train_features) {
  if (train_features.empty()) throw ShapeError("compute_stats: no training features");
  const int n_ch = train_features.front().cols();
  ChannelStats st;
  st.mean.assign(n_ch, 0.0);
  st.std_dev.assign(n_ch, 0.0);
  long n = 0;
  for (const auto& f : train_features) {
    if (f.cols() != n_ch) throw ShapeError("compute_stats: channel count mismatch");
    for (int t = 0; t < f.rows(); ++t)
      for (int c = 0; c < n_ch; ++c) st.mean[c] += f(t, c);
    n += f.rows();
  }
  for (auto& m : st.mean) m /= static_cast<double>(n);
  for (const auto& f : train_features)
    for (int t = 0; t < f.rows(); ++t)
      for (int c = 0; c < n_ch; ++c) {
        const double d = f(t, c) - st.mean[c];
        st.std_dev[c] += d * d;
      }
  for (auto& s : st.std_dev) s = std::max(std::sqrt(s / static_cast<double>(n)), 1e-8);
  return st;
}

inline void standardize(Matrix& features, const ChannelStats& st) {
  if (features.cols() != static_cast<int>(st.mean.size()))
    throw ShapeError("standardize: channel count mismatch");
  for (int t = 0; t < features.rows(); ++t)
    for (int c = 0; c < features.cols(); ++c)
      features(t, c) = (features(t, c) - st.mean[c]) / st.std_dev[c];
}

struct PhoneInterval {
  long start = 0;  // sample index, inclusive
  long end = 0;    // sample index, exclusive
  int label = 0;
};

/// Frame i takes the label of the phone interval containing the frame's
/// center sample; centers past the last interval (zero-pad region) reuse
/// the last label.
inline std::vector<uint16_t> align_targets(const std::vector<PhoneInterval>& intervals,
                                           int n_frames, const FeatureConfig& cfg) {
  if (intervals.empty()) throw ShapeError("align_targets: no phone intervals");
  std::vector<uint16_t> labels(n_frames);
  for (int i = 0; i < n_frames; ++i) {
    const long center = static_cast<long>(i) * cfg.frame_step + cfg.frame_len / 2;
    int label = intervals.back().label;
    for (const auto& iv : intervals) {
      if (center >= iv.start && center < iv.end) {
        label = iv.label;
        break;
      }
    }
    labels[i] = static_cast<uint16_t>(label);
  }
  return labels;
}

/// Full pipeline: waveform samples -> T x 39 (un-standardized) features.
inline Matrix extract_features(const std::vector<double>& samples, const FeatureConfig& cfg,
                               const Matrix* filterbank = nullptr) {
  cfg.validate();
  Matrix fb_local;
  if (!filterbank) {
    fb_local = mel_filterbank(cfg);
    filterbank = &fb_local;
  }
  const std::vector<double> emphasized = pre_emphasis(samples, cfg.preemph);
  const Matrix frames = frame_and_window(emphasized, cfg);
  const int n_bins = cfg.fft_size / 2 + 1;
  Matrix log_energies(frames.rows(), cfg.n_filters);
  for (int t = 0; t < frames.rows(); ++t) {
    const std::vector<double> p =
        power_spectrum(frames.data() + static_cast<size_t>(t) * frames.cols(), cfg.frame_len,
                       cfg);
    for (int i = 0; i < cfg.n_filters; ++i) {
      double acc = 0.0;
      for (int k = 0; k < n_bins; ++k) acc += (*filterbank)(i, k) * p[k];
      log_energies(t, i) = std::log(std::max(acc, 1e-10));
    }
  }
  return deltas(mfcc(log_energies, cfg));
}

}  // namespace eprop
