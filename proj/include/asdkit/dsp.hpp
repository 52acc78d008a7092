#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "asdkit/common.hpp"

// Waveform -> log-Mel spectrogram + STFT phase angles -> center-removed
// model windows. Everything here is a pure function of its inputs.
namespace asdkit::dsp {

struct FeatureConfig {
  int sample_rate = 16000;
  int n_fft = 1024;
  int hop = 512;
  int n_mels = 128;
  double f_min = 0.0;
  double f_max = 8000.0;

  int bins() const { return n_fft / 2 + 1; }

  /// FNV-1a over the fields; used to key the feature cache.
  uint64_t hash() const {
    uint64_t h = 1469598103934665603ull;
    auto mix = [&h](uint64_t x) {
      for (int i = 0; i < 8; ++i) {
        h ^= (x >> (8 * i)) & 0xff;
        h *= 1099511628211ull;
      }
    };
    mix(uint64_t(sample_rate));
    mix(uint64_t(n_fft));
    mix(uint64_t(hop));
    mix(uint64_t(n_mels));
    uint64_t fm, fx;
    std::memcpy(&fm, &f_min, 8);
    std::memcpy(&fx, &f_max, 8);
    mix(fm);
    mix(fx);
    return h;
  }
};

struct ComplexSpectrogram {
  int frames = 0;
  int bins = 0;  // n_fft/2 + 1
  std::vector<double> re, im;

  double real(int t, int b) const { return re[size_t(t) * bins + b]; }
  double imag(int t, int b) const { return im[size_t(t) * bins + b]; }
  double power(int t, int b) const {
    const double r = real(t, b), i = imag(t, b);
    return r * r + i * i;
  }
};

struct LogMelSpectrogram {
  int frames = 0;
  int mel_bins = 0;
  std::vector<double> v;  // row-major frames x mel_bins

  double at(int t, int m) const { return v[size_t(t) * mel_bins + m]; }
  double& at(int t, int m) { return v[size_t(t) * mel_bins + m]; }
};

struct PhaseFrames {
  int frames = 0;
  int bins = 0;
  std::vector<double> v;  // radians, row-major frames x bins

  double at(int t, int b) const { return v[size_t(t) * bins + b]; }
};

/// One model input: the context frames with the center removed, the matching
/// phase context, and the held-out center frame as prediction target.
struct FrameWindow {
  int clip_index = 0;   // window offset within its clip
  int context_rows = 0; // n - 1
  int mel_bins = 0;
  int phase_bins = 0;
  std::vector<double> context;        // (n-1) x mel_bins
  std::vector<double> phase_context;  // (n-1) x phase_bins
  std::vector<double> center;         // mel_bins
};

namespace detail {

// Iterative radix-2 complex FFT, in place. n must be a power of two.
inline void fft_inplace(std::vector<std::complex<double>>& a) {
  const size_t n = a.size();
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * M_PI / double(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t j = 0; j < len / 2; ++j) {
        const std::complex<double> u = a[i + j];
        const std::complex<double> t = w * a[i + j + len / 2];
        a[i + j] = u + t;
        a[i + j + len / 2] = u - t;
        w *= wl;
      }
    }
  }
}

inline bool is_pow2(int x) { return x > 0 && (x & (x - 1)) == 0; }

}  // namespace detail

/// Periodic Hann window of length n.
inline std::vector<double> hann_window(int n) {
  std::vector<double> w(size_t(n), 0.0);
  for (int i = 0; i < n; ++i)
    w[size_t(i)] = 0.5 - 0.5 * std::cos(2.0 * M_PI * double(i) / double(n));
  return w;
}

inline int stft_frame_count(int64_t samples, int n_fft, int hop) {
  return int((samples - n_fft) / hop) + 1;
}

/// Hann-windowed, non-centered STFT (no padding): frame t covers samples
/// [t*hop, t*hop + n_fft).
inline ComplexSpectrogram stft(std::span<const double> waveform, int n_fft, int hop) {
  if (!detail::is_pow2(n_fft)) throw ContractError("stft: n_fft must be a power of two");
  if (hop <= 0) throw ContractError("stft: hop must be positive");
  if (int64_t(waveform.size()) < n_fft)
    throw ContractError("clip too short: " + std::to_string(waveform.size()) +
                        " samples < n_fft " + std::to_string(n_fft));
  const std::vector<double> win = hann_window(n_fft);
  ComplexSpectrogram spec;
  spec.frames = stft_frame_count(int64_t(waveform.size()), n_fft, hop);
  spec.bins = n_fft / 2 + 1;
  spec.re.assign(size_t(spec.frames) * spec.bins, 0.0);
  spec.im.assign(size_t(spec.frames) * spec.bins, 0.0);

  std::vector<std::complex<double>> buf(size_t(n_fft), {0.0, 0.0});
  for (int t = 0; t < spec.frames; ++t) {
    const size_t off = size_t(t) * size_t(hop);
    for (int i = 0; i < n_fft; ++i)
      buf[size_t(i)] = {waveform[off + size_t(i)] * win[size_t(i)], 0.0};
    detail::fft_inplace(buf);
    for (int b = 0; b < spec.bins; ++b) {
      spec.re[size_t(t) * spec.bins + b] = buf[size_t(b)].real();
      spec.im[size_t(t) * spec.bins + b] = buf[size_t(b)].imag();
    }
  }
  return spec;
}

/// HTK mel scale.
inline double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
inline double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

struct MelFilterbank {
  int n_mels = 0;
  int bins = 0;
  std::vector<double> w;  // row-major n_mels x bins

  double at(int m, int b) const { return w[size_t(m) * bins + b]; }
};

/// Triangular filters with band edges equally spaced on the mel scale.
/// Throws ConfigError if any filter ends up with no nonzero weight.
inline MelFilterbank mel_filterbank(int n_fft, int n_mels, double sample_rate,
                                    double f_min, double f_max) {
  if (!(0.0 <= f_min && f_min < f_max && f_max <= sample_rate / 2.0))
    throw ConfigError("mel_filterbank: need 0 <= f_min < f_max <= sample_rate/2");
  if (n_mels < 1) throw ConfigError("mel_filterbank: n_mels must be >= 1");
  MelFilterbank fb;
  fb.n_mels = n_mels;
  fb.bins = n_fft / 2 + 1;
  fb.w.assign(size_t(n_mels) * fb.bins, 0.0);

  const double mel_lo = hz_to_mel(f_min), mel_hi = hz_to_mel(f_max);
  std::vector<double> edge_hz(size_t(n_mels) + 2);
  for (int i = 0; i < n_mels + 2; ++i)
    edge_hz[size_t(i)] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * double(i) / double(n_mels + 1));

  for (int m = 0; m < n_mels; ++m) {
    const double lo = edge_hz[size_t(m)], mid = edge_hz[size_t(m) + 1], hi = edge_hz[size_t(m) + 2];
    bool any = false;
    for (int b = 0; b < fb.bins; ++b) {
      const double f = double(b) * sample_rate / double(n_fft);
      double v = 0.0;
      if (f > lo && f < hi)
        v = f <= mid ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
      if (v > 0.0) any = true;
      fb.w[size_t(m) * fb.bins + b] = v;
    }
    if (!any)
      throw ConfigError("mel_filterbank: filter " + std::to_string(m) +
                        " has no spectral support (n_mels too large for n_fft)");
  }
  return fb;
}

constexpr double kLogMelEps = 1e-12;

/// value(t, m) = 10*log10(sum_b fb[m,b] * |spec[t,b]|^2 + eps)
inline LogMelSpectrogram log_mel(const ComplexSpectrogram& spec, const MelFilterbank& fb) {
  if (fb.bins != spec.bins)
    throw ContractError("log_mel: filterbank bins " + std::to_string(fb.bins) +
                        " != spectrogram bins " + std::to_string(spec.bins));
  LogMelSpectrogram out;
  out.frames = spec.frames;
  out.mel_bins = fb.n_mels;
  out.v.assign(size_t(out.frames) * out.mel_bins, 0.0);
  std::vector<double> power(size_t(spec.bins));
  for (int t = 0; t < spec.frames; ++t) {
    for (int b = 0; b < spec.bins; ++b) power[size_t(b)] = spec.power(t, b);
    for (int m = 0; m < fb.n_mels; ++m) {
      double acc = 0.0;
      const double* row = &fb.w[size_t(m) * fb.bins];
      for (int b = 0; b < spec.bins; ++b) acc += row[b] * power[size_t(b)];
      out.at(t, m) = 10.0 * std::log10(acc + kLogMelEps);
    }
  }
  return out;
}

inline PhaseFrames phase_angles(const ComplexSpectrogram& spec) {
  PhaseFrames out;
  out.frames = spec.frames;
  out.bins = spec.bins;
  out.v.assign(size_t(out.frames) * out.bins, 0.0);
  for (int t = 0; t < spec.frames; ++t)
    for (int b = 0; b < spec.bins; ++b)
      out.v[size_t(t) * out.bins + b] = std::atan2(spec.imag(t, b), spec.real(t, b));
  return out;
}

inline int window_count(int frames, int n, int stride) {
  return (frames - n) / stride + 1;
}

/// Slice aligned log-mel and phase streams into n-frame windows, removing the
/// center frame (1-based index (n+1)/2) from both streams and keeping the
/// removed log-mel frame as the prediction target.
inline std::vector<FrameWindow> window_frames(const LogMelSpectrogram& logmel,
                                              const PhaseFrames& phase, int n = 5,
                                              int stride = 1) {
  if (n < 1 || n % 2 == 0) throw ContractError("window_frames: n must be odd");
  if (stride < 1) throw ContractError("window_frames: stride must be >= 1");
  if (phase.frames != logmel.frames)
    throw ContractError("window_frames: phase frames " + std::to_string(phase.frames) +
                        " != log-mel frames " + std::to_string(logmel.frames));
  if (logmel.frames < n)
    throw ContractError("clip too short: " + std::to_string(logmel.frames) +
                        " frames < window " + std::to_string(n));
  const int count = window_count(logmel.frames, n, stride);
  const int center = (n - 1) / 2;  // 0-based offset of the removed frame
  std::vector<FrameWindow> out{size_t(count)};
  for (int w = 0; w < count; ++w) {
    FrameWindow& fw = out[size_t(w)];
    fw.clip_index = w;
    fw.context_rows = n - 1;
    fw.mel_bins = logmel.mel_bins;
    fw.phase_bins = phase.bins;
    fw.context.reserve(size_t(n - 1) * logmel.mel_bins);
    fw.phase_context.reserve(size_t(n - 1) * phase.bins);
    const int base = w * stride;
    for (int i = 0; i < n; ++i) {
      if (i == center) continue;
      const double* mrow = &logmel.v[size_t(base + i) * logmel.mel_bins];
      fw.context.insert(fw.context.end(), mrow, mrow + logmel.mel_bins);
      const double* prow = &phase.v[size_t(base + i) * phase.bins];
      fw.phase_context.insert(fw.phase_context.end(), prow, prow + phase.bins);
    }
    const double* crow = &logmel.v[size_t(base + center) * logmel.mel_bins];
    fw.center.assign(crow, crow + logmel.mel_bins);
  }
  return out;
}

struct ClipFeatures {
  LogMelSpectrogram logmel;
  PhaseFrames phase;
};

inline ClipFeatures featurize(std::span<const double> waveform, const FeatureConfig& cfg,
                              const MelFilterbank& fb) {
  const ComplexSpectrogram spec = stft(waveform, cfg.n_fft, cfg.hop);
  return {log_mel(spec, fb), phase_angles(spec)};
}

// --- feature cache file ---
//
// Little-endian binary: magic "ASDF", version u32, frames u32, mel u32,
// phase_bins u32, then a row-major float32 log-mel block and a row-major
// float32 phase block.

constexpr uint32_t kFeatureFileVersion = 1;

inline void write_feature_file(const std::string& path, const ClipFeatures& feat) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write feature file: " + path);
  auto put_u32 = [&out](uint32_t x) { out.write(reinterpret_cast<const char*>(&x), 4); };
  out.write("ASDF", 4);
  put_u32(kFeatureFileVersion);
  put_u32(uint32_t(feat.logmel.frames));
  put_u32(uint32_t(feat.logmel.mel_bins));
  put_u32(uint32_t(feat.phase.bins));
  auto put_block = [&out](const std::vector<double>& v) {
    std::vector<float> f(v.size());
    for (size_t i = 0; i < v.size(); ++i) f[i] = float(v[i]);
    out.write(reinterpret_cast<const char*>(f.data()), std::streamsize(f.size() * 4));
  };
  put_block(feat.logmel.v);
  put_block(feat.phase.v);
  if (!out) throw IoError("short write on feature file: " + path);
}

inline ClipFeatures read_feature_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open feature file: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "ASDF", 4) != 0)
    throw IoError("bad feature file magic: " + path);
  auto get_u32 = [&in, &path]() {
    uint32_t x = 0;
    in.read(reinterpret_cast<char*>(&x), 4);
    if (!in) throw IoError("truncated feature file: " + path);
    return x;
  };
  const uint32_t version = get_u32();
  if (version != kFeatureFileVersion)
    throw IoError("unsupported feature file version " + std::to_string(version) + ": " + path);
  const uint32_t frames = get_u32(), mel = get_u32(), phase_bins = get_u32();
  ClipFeatures feat;
  feat.logmel.frames = int(frames);
  feat.logmel.mel_bins = int(mel);
  feat.phase.frames = int(frames);
  feat.phase.bins = int(phase_bins);
  auto get_block = [&in, &path](std::vector<double>& v, size_t n) {
    std::vector<float> f(n);
    in.read(reinterpret_cast<char*>(f.data()), std::streamsize(n * 4));
    if (!in) throw IoError("truncated feature file: " + path);
    v.resize(n);
    for (size_t i = 0; i < n; ++i) v[i] = double(f[i]);
  };
  get_block(feat.logmel.v, size_t(frames) * mel);
  get_block(feat.phase.v, size_t(frames) * phase_bins);
  return feat;
}

}  // namespace asdkit::dsp
