#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "asdkit/common.hpp"
#include "asdkit/dsp.hpp"

// Corpus ingestion (DCASE 2020 Task2 layout), strict 16-bit PCM WAV reading,
// the synthetic desk-scale corpus generator, and the feature cache.
namespace asdkit::dataio {

namespace fs = std::filesystem;

struct AudioClip {
  int sample_rate = 0;
  std::vector<double> samples;  // mono, scaled to [-1, 1)
};

// --- WAV ---

namespace detail {
inline uint32_t rd_u32(const uint8_t* p) {
  return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 | uint32_t(p[3]) << 24;
}
inline uint16_t rd_u16(const uint8_t* p) { return uint16_t(p[0]) | uint16_t(p[1]) << 8; }
}  // namespace detail

/// Read a RIFF/WAVE file. Only 16-bit PCM, mono, 16 kHz is accepted; anything
/// else is rejected rather than silently converted. Samples are scaled by
/// 1/32768.
inline AudioClip read_wav(const std::string& path, int required_rate = 16000) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open wav: " + path);
  std::vector<uint8_t> raw((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
  if (raw.size() < 44 || std::memcmp(raw.data(), "RIFF", 4) != 0 ||
      std::memcmp(raw.data() + 8, "WAVE", 4) != 0)
    throw IoError("not a RIFF/WAVE file: " + path);

  int channels = 0, bits = 0, rate = 0, format = 0;
  const uint8_t* data = nullptr;
  size_t data_len = 0;
  size_t off = 12;
  while (off + 8 <= raw.size()) {
    const char* id = reinterpret_cast<const char*>(raw.data() + off);
    const uint32_t len = detail::rd_u32(raw.data() + off + 4);
    if (off + 8 + len > raw.size()) throw IoError("truncated wav chunk: " + path);
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (len < 16) throw IoError("malformed fmt chunk: " + path);
      const uint8_t* f = raw.data() + off + 8;
      format = detail::rd_u16(f);
      channels = detail::rd_u16(f + 2);
      rate = int(detail::rd_u32(f + 4));
      bits = detail::rd_u16(f + 14);
    } else if (std::memcmp(id, "data", 4) == 0) {
      data = raw.data() + off + 8;
      data_len = len;
    }
    off += 8 + len + (len & 1);  // chunks are word-aligned
  }
  if (!data) throw IoError("wav has no data chunk: " + path);
  if (format != 1) throw IoError("wav is not PCM (format " + std::to_string(format) + "): " + path);
  if (bits != 16) throw IoError("wav is not 16-bit (" + std::to_string(bits) + " bits): " + path);
  if (channels != 1)
    throw IoError("wav is not mono (" + std::to_string(channels) + " channels): " + path);
  if (rate != required_rate)
    throw IoError("wav sample rate " + std::to_string(rate) + " != required " +
                  std::to_string(required_rate) + " (no resampling): " + path);

  AudioClip clip;
  clip.sample_rate = rate;
  const size_t n = data_len / 2;
  clip.samples.resize(n);
  for (size_t i = 0; i < n; ++i) {
    const int16_t s = int16_t(uint16_t(data[2 * i]) | uint16_t(data[2 * i + 1]) << 8);
    clip.samples[i] = double(s) / 32768.0;
  }
  return clip;
}

/// Write mono 16-bit PCM: round(x * 32768), clamped to the int16 range. This
/// is the exact inverse of the read scaling.
inline void write_wav_pcm16(const std::string& path, const std::vector<double>& samples,
                            int sample_rate) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write wav: " + path);
  const uint32_t data_len = uint32_t(samples.size() * 2);
  auto put_u32 = [&out](uint32_t x) { out.write(reinterpret_cast<const char*>(&x), 4); };
  auto put_u16 = [&out](uint16_t x) { out.write(reinterpret_cast<const char*>(&x), 2); };
  out.write("RIFF", 4);
  put_u32(36 + data_len);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  put_u32(16);
  put_u16(1);  // PCM
  put_u16(1);  // mono
  put_u32(uint32_t(sample_rate));
  put_u32(uint32_t(sample_rate) * 2);
  put_u16(2);
  put_u16(16);
  out.write("data", 4);
  put_u32(data_len);
  for (double x : samples) {
    const long long v = std::llround(x * 32768.0);
    const int16_t s = int16_t(std::clamp<long long>(v, -32768, 32767));
    out.write(reinterpret_cast<const char*>(&s), 2);
  }
  if (!out) throw IoError("short write on wav: " + path);
}

// --- corpus layout ---

enum class Condition { normal, anomaly, unknown };
enum class Split { train, test };

inline const char* to_string(Condition c) {
  switch (c) {
    case Condition::normal: return "normal";
    case Condition::anomaly: return "anomaly";
    default: return "unknown";
  }
}
inline const char* to_string(Split s) { return s == Split::train ? "train" : "test"; }

struct ClipMeta {
  std::string path;
  std::string machine_type;
  std::string machine_id;  // e.g. "id_02"
  Condition condition = Condition::unknown;
  Split split = Split::train;
};

struct ScanResult {
  std::vector<ClipMeta> clips;
  std::vector<std::string> warnings;
};

namespace detail {

/// DCASE directory names are lowercase for the MIMII machines; report the
/// canonical capitalized names, pass anything else through untouched.
inline std::string canonical_machine_type(std::string dir) {
  std::string low = dir;
  std::transform(low.begin(), low.end(), low.begin(), [](unsigned char c) {
    return char(std::tolower(c));
  });
  static const std::map<std::string, std::string> known = {
      {"fan", "Fan"},           {"pump", "Pump"},   {"slider", "Slider"},
      {"valve", "Valve"},       {"toycar", "ToyCar"}, {"toyconveyor", "ToyConveyor"}};
  auto it = known.find(low);
  return it == known.end() ? dir : it->second;
}

/// Parse "{normal|anomaly}_id_XX_########.wav" into condition and machine id.
inline bool parse_clip_name(const std::string& stem, Condition& cond, std::string& id) {
  size_t rest = 0;
  if (starts_with(stem, "normal_")) {
    cond = Condition::normal;
    rest = 7;
  } else if (starts_with(stem, "anomaly_")) {
    cond = Condition::anomaly;
    rest = 8;
  } else {
    return false;
  }
  const std::string tail = stem.substr(rest);
  if (!starts_with(tail, "id_")) return false;
  const size_t us = tail.find('_', 3);
  if (us == std::string::npos || us == 3) return false;
  for (size_t i = 3; i < us; ++i)
    if (!std::isdigit(static_cast<unsigned char>(tail[i]))) return false;
  id = tail.substr(0, us);
  return true;
}

}  // namespace detail

/// Walk `<machine_type>/{train,test}/*.wav` under root. Unparseable names and
/// anomaly files inside a train split are skipped, each with a warning record.
/// The clip list is sorted lexicographically by path.
inline ScanResult scan_corpus(const std::string& root) {
  if (!fs::is_directory(root)) throw ConfigError("corpus root does not exist: " + root);
  ScanResult out;
  std::vector<std::string> type_dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) type_dirs.push_back(e.path().filename().string());
  std::sort(type_dirs.begin(), type_dirs.end());

  for (const auto& tdir : type_dirs) {
    for (Split split : {Split::train, Split::test}) {
      const fs::path dir = fs::path(root) / tdir / to_string(split);
      if (!fs::is_directory(dir)) continue;
      std::vector<std::string> names;
      for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".wav")
          names.push_back(e.path().filename().string());
      std::sort(names.begin(), names.end());
      for (const auto& name : names) {
        const std::string stem = name.substr(0, name.size() - 4);
        ClipMeta meta;
        meta.path = (dir / name).string();
        meta.machine_type = detail::canonical_machine_type(tdir);
        meta.split = split;
        if (!detail::parse_clip_name(stem, meta.condition, meta.machine_id)) {
          out.warnings.push_back("unparseable clip name skipped: " + meta.path);
          continue;
        }
        if (split == Split::train && meta.condition == Condition::anomaly) {
          out.warnings.push_back("anomaly clip in train split skipped: " + meta.path);
          continue;
        }
        out.clips.push_back(std::move(meta));
      }
    }
  }
  std::sort(out.clips.begin(), out.clips.end(),
            [](const ClipMeta& a, const ClipMeta& b) { return a.path < b.path; });
  return out;
}

// --- synthetic corpus ---

struct IdProfile {
  double f0 = 110.0;                  // fundamental, Hz
  std::vector<double> harmonics;      // amplitude per harmonic of f0
  double noise_floor = 0.02;          // gaussian noise RMS
};

enum class AnomalyKind { transient_burst, detune };

inline AnomalyKind anomaly_kind_from_string(const std::string& s) {
  if (s == "transient_burst") return AnomalyKind::transient_burst;
  if (s == "detune") return AnomalyKind::detune;
  throw ConfigError("unknown anomaly kind: " + s + " (transient_burst|detune)");
}
inline const char* to_string(AnomalyKind k) {
  return k == AnomalyKind::transient_burst ? "transient_burst" : "detune";
}

struct SynthSpec {
  int num_ids = 4;
  int train_clips_per_id = 60;
  int test_normal_per_id = 20;
  int test_anomaly_per_id = 20;
  double duration_s = 6.0;
  int sample_rate = 16000;
  std::vector<IdProfile> id_profiles;  // defaulted per id when empty
  AnomalyKind anomaly_kind = AnomalyKind::transient_burst;
  double anomaly_duration_s = 0.5;
  double burst_gain = 0.4;      // burst RMS relative to full scale
  double detune_ratio = 1.07;   // fundamental shift applied mid-clip

  static std::vector<IdProfile> default_profiles(int k) {
    std::vector<IdProfile> out;
    for (int i = 0; i < k; ++i) {
      IdProfile p;
      p.f0 = 110.0 * std::pow(1.45, double(i));
      p.harmonics = {0.5, 0.3, 0.18, 0.1, 0.05};
      // spectral tilt differs per id so the ids are separable beyond pitch
      const double tilt = 0.8 + 0.15 * double(i % 3);
      for (size_t h = 1; h < p.harmonics.size(); ++h)
        p.harmonics[h] *= std::pow(tilt, double(h));
      p.noise_floor = 0.02;
      out.push_back(std::move(p));
    }
    return out;
  }

  IdProfile profile(int id_index) const {
    if (!id_profiles.empty()) return id_profiles[size_t(id_index)];
    return default_profiles(num_ids)[size_t(id_index)];
  }

  void validate(int n_fft = 1024, int frames = 5) const {
    if (num_ids < 1) throw ConfigError("synth: num_ids must be >= 1");
    if (!id_profiles.empty() && int(id_profiles.size()) != num_ids)
      throw ConfigError("synth: id_profiles size must match num_ids");
    if (duration_s * sample_rate < double(n_fft) * (frames + 2))
      throw ConfigError("synth: duration too short for the analysis window");
    if (anomaly_duration_s > duration_s)
      throw ConfigError("synth: anomaly duration exceeds clip duration");
  }
};

/// Deterministic synthetic machine clip: a harmonic stack with per-clip
/// random phases, small per-clip gain jitter and a gaussian noise floor.
/// Anomalies add either a band-limited noise burst at a random onset or a
/// mid-clip detune of the fundamental.
inline AudioClip synth_clip(const SynthSpec& spec, int id_index, Condition cond,
                            uint64_t seed) {
  if (id_index < 0 || id_index >= spec.num_ids)
    throw ContractError("synth_clip: id_index out of range");
  const IdProfile prof = spec.profile(id_index);
  const int n = int(spec.duration_s * spec.sample_rate);
  const double dt = 1.0 / spec.sample_rate;

  Rng rng(mix_seed(seed, uint64_t(id_index), uint64_t(cond), 0x73796e7468ull));
  AudioClip clip;
  clip.sample_rate = spec.sample_rate;
  clip.samples.assign(size_t(n), 0.0);

  const bool detuned = cond == Condition::anomaly && spec.anomaly_kind == AnomalyKind::detune;
  const int half = n / 2;
  for (size_t h = 0; h < prof.harmonics.size(); ++h) {
    const double amp = prof.harmonics[h] * rng.uniform(0.85, 1.15);
    const double phase0 = rng.uniform(0.0, 2.0 * M_PI);
    const double w1 = 2.0 * M_PI * prof.f0 * double(h + 1);
    const double w2 = w1 * (detuned ? spec.detune_ratio : 1.0);
    // phase-continuous frequency switch at mid-clip
    for (int i = 0; i < n; ++i) {
      const double t = double(i) * dt;
      const double ph = i < half ? w1 * t : w1 * (half * dt) + w2 * (t - half * dt);
      clip.samples[size_t(i)] += amp * std::sin(ph + phase0);
    }
  }
  for (int i = 0; i < n; ++i) clip.samples[size_t(i)] += prof.noise_floor * rng.gaussian();

  if (cond == Condition::anomaly && spec.anomaly_kind == AnomalyKind::transient_burst) {
    const int burst_len = int(spec.anomaly_duration_s * spec.sample_rate);
    const int max_onset = std::max(1, n - burst_len);
    const int onset = int(rng.bounded(uint64_t(max_onset)));
    const double fc = rng.uniform(2500.0, 5500.0);  // band center, Hz
    // band-limited noise: white noise through a wide 2nd-order resonator
    const double q = 1.5;
    const double w0 = 2.0 * M_PI * fc / spec.sample_rate;
    const double alpha = std::sin(w0) / (2.0 * q);
    const double b0 = alpha, b2 = -alpha;
    const double a0 = 1.0 + alpha, a1 = -2.0 * std::cos(w0), a2 = 1.0 - alpha;
    double x1 = 0.0, x2 = 0.0, y1 = 0.0, y2 = 0.0;
    std::vector<double> burst(size_t(burst_len), 0.0);
    double rms = 0.0;
    for (int i = 0; i < burst_len; ++i) {
      const double x = rng.gaussian();
      const double y = (b0 * x + b2 * x2 - a1 * y1 - a2 * y2) / a0;
      x2 = x1;
      x1 = x;
      y2 = y1;
      y1 = y;
      burst[size_t(i)] = y;
      rms += y * y;
    }
    rms = std::sqrt(rms / burst_len);
    const double gain = rms > 0.0 ? spec.burst_gain / rms : 0.0;
    // short raised-cosine ramps keep the on/offset abrupt at frame scale
    const int ramp = std::min(burst_len / 4, spec.sample_rate / 125);
    for (int i = 0; i < burst_len && onset + i < n; ++i) {
      double env = 1.0;
      if (i < ramp)
        env = 0.5 - 0.5 * std::cos(M_PI * double(i) / double(ramp));
      else if (i >= burst_len - ramp)
        env = 0.5 - 0.5 * std::cos(M_PI * double(burst_len - 1 - i) / double(ramp));
      clip.samples[size_t(onset + i)] += gain * env * burst[size_t(i)];
    }
  }
  return clip;
}

struct SynthWriteReport {
  int files = 0;
  std::vector<std::string> id_labels;
};

/// Materialize a DCASE-layout synthetic corpus:
/// <root>/<machine_type>/{train,test}/{normal|anomaly}_id_XX_########.wav
inline SynthWriteReport write_synth_corpus(const SynthSpec& spec,
                                           const std::string& machine_type,
                                           const std::string& out_root, uint64_t seed) {
  spec.validate();
  SynthWriteReport rep;
  char name[64];
  for (int id = 0; id < spec.num_ids; ++id) {
    std::snprintf(name, sizeof(name), "id_%02d", id);
    rep.id_labels.push_back(name);
  }
  const fs::path base = fs::path(out_root) / machine_type;
  fs::create_directories(base / "train");
  fs::create_directories(base / "test");
  auto emit = [&](Split split, Condition cond, int id, int serial, uint64_t clip_seed) {
    std::snprintf(name, sizeof(name), "%s_id_%02d_%08d.wav", to_string(cond), id, serial);
    const AudioClip clip = synth_clip(spec, id, cond, clip_seed);
    write_wav_pcm16((base / to_string(split) / name).string(), clip.samples, clip.sample_rate);
    ++rep.files;
  };
  for (int id = 0; id < spec.num_ids; ++id) {
    for (int i = 0; i < spec.train_clips_per_id; ++i)
      emit(Split::train, Condition::normal, id, i, mix_seed(seed, 1, uint64_t(id), uint64_t(i)));
    for (int i = 0; i < spec.test_normal_per_id; ++i)
      emit(Split::test, Condition::normal, id, i, mix_seed(seed, 2, uint64_t(id), uint64_t(i)));
    for (int i = 0; i < spec.test_anomaly_per_id; ++i)
      emit(Split::test, Condition::anomaly, id, i, mix_seed(seed, 3, uint64_t(id), uint64_t(i)));
  }
  return rep;
}

// --- feature cache ---

struct CacheReport {
  int computed = 0;
  int reused = 0;
  int recomputed_on_mismatch = 0;
  std::string manifest_path;
};

inline std::string cache_path_for(const std::string& cache_root, const ClipMeta& meta) {
  const fs::path p(meta.path);
  return (fs::path(cache_root) / meta.machine_type / to_string(meta.split) /
          (p.stem().string() + ".feat"))
      .string();
}

/// Featurize clips into per-clip cache files plus a manifest CSV keyed by the
/// feature-config hash. A rerun with the same config is a no-op; a config
/// change recomputes everything (with a warning entry in the report).
inline CacheReport cache_features(const std::vector<ClipMeta>& clips,
                                  const dsp::FeatureConfig& cfg,
                                  const std::string& cache_root) {
  fs::create_directories(cache_root);
  const std::string manifest = (fs::path(cache_root) / "manifest.csv").string();
  const std::string hash = std::to_string(cfg.hash());

  std::map<std::string, std::pair<std::string, std::string>> old_rows;  // clip -> (cache, hash)
  if (fs::exists(manifest)) {
    std::ifstream in(manifest);
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
      std::stringstream ss(line);
      std::string clip, cache, h;
      if (std::getline(ss, clip, ',') && std::getline(ss, cache, ',') && std::getline(ss, h))
        old_rows[clip] = {cache, h};
    }
  }

  const auto fb = dsp::mel_filterbank(cfg.n_fft, cfg.n_mels, cfg.sample_rate, cfg.f_min, cfg.f_max);
  CacheReport rep;
  rep.manifest_path = manifest;
  auto rows = old_rows;  // rows for clips outside this invocation survive
  for (const auto& meta : clips) {
    const std::string cache = cache_path_for(cache_root, meta);
    auto it = old_rows.find(meta.path);
    const bool fresh = it != old_rows.end() && it->second.second == hash && fs::exists(cache);
    if (!fresh) {
      if (it != old_rows.end() && it->second.second != hash) rep.recomputed_on_mismatch += 1;
      fs::create_directories(fs::path(cache).parent_path());
      const AudioClip clip = read_wav(meta.path, cfg.sample_rate);
      dsp::ClipFeatures feat = dsp::featurize(clip.samples, cfg, fb);
      dsp::write_feature_file(cache, feat);
      rep.computed += 1;
    } else {
      rep.reused += 1;
    }
    rows[meta.path] = {cache, hash};
  }
  std::ofstream out(manifest, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest: " + manifest);
  out << "clip_path,cache_path,config_hash\n";
  for (const auto& [clip, entry] : rows)
    out << clip << "," << entry.first << "," << entry.second << "\n";
  return rep;
}

}  // namespace asdkit::dataio
