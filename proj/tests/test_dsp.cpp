#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "asdkit/dsp.hpp"
#include "testutil.hpp"

using namespace asdkit;
using Catch::Approx;

namespace {

std::vector<double> sinusoid(double freq, double seconds, int sr, double amp = 1.0) {
  std::vector<double> x(size_t(seconds * sr), 0.0);
  for (size_t i = 0; i < x.size(); ++i)
    x[i] = amp * std::sin(2.0 * M_PI * freq * double(i) / sr);
  return x;
}

}  // namespace

TEST_CASE("stft frame arithmetic and zero input") {
  std::vector<double> zeros(160000, 0.0);
  const auto spec = dsp::stft(zeros, 1024, 512);
  CHECK(spec.frames == 311);  // (160000 - 1024) / 512 + 1
  CHECK(spec.bins == 513);
  double peak = 0.0;
  for (size_t i = 0; i < spec.re.size(); ++i)
    peak = std::max({peak, std::fabs(spec.re[i]), std::fabs(spec.im[i])});
  CHECK(peak == 0.0);

  std::vector<double> exact(1024 + 512 * 4, 0.0);
  CHECK(dsp::stft(exact, 1024, 512).frames == 5);
}

TEST_CASE("stft rejects short clips and bad geometry") {
  std::vector<double> x(1000, 0.0);
  CHECK_THROWS_AS(dsp::stft(x, 1024, 512), ContractError);
  std::vector<double> y(4096, 0.0);
  CHECK_THROWS_AS(dsp::stft(y, 1000, 512), ContractError);  // not a power of two
  CHECK_THROWS_AS(dsp::stft(y, 1024, 0), ContractError);
}

TEST_CASE("stft of a bin-centered sinusoid concentrates at that bin") {
  const int k = 32;  // 500 Hz at 16 kHz / 1024
  const auto x = sinusoid(double(k) * 16000.0 / 1024.0, 1.0, 16000);
  const auto spec = dsp::stft(x, 1024, 512);
  for (int t = 0; t < spec.frames; ++t) {
    double total = 0.0, local = 0.0;
    for (int b = 0; b < spec.bins; ++b) {
      const double w = (b == 0 || b == spec.bins - 1) ? 1.0 : 2.0;
      const double p = w * spec.power(t, b);
      total += p;
      if (b >= k - 1 && b <= k + 1) local += p;
    }
    REQUIRE(total > 0.0);
    CHECK(local / total >= 0.95);
  }
}

TEST_CASE("stft satisfies Parseval per frame") {
  Rng rng(42);
  std::vector<double> x(2048, 0.0);
  for (double& v : x) v = rng.uniform(-1.0, 1.0);
  const int n = 1024, hop = 512;
  const auto spec = dsp::stft(x, n, hop);
  const auto win = dsp::hann_window(n);
  for (int t = 0; t < spec.frames; ++t) {
    double windowed_energy = 0.0;
    for (int i = 0; i < n; ++i) {
      const double s = x[size_t(t * hop + i)] * win[size_t(i)];
      windowed_energy += s * s;
    }
    double spectral = 0.0;
    for (int b = 0; b < spec.bins; ++b) {
      const double w = (b == 0 || b == spec.bins - 1) ? 1.0 : 2.0;
      spectral += w * spec.power(t, b);
    }
    CHECK(spectral / double(n) == Approx(windowed_energy).epsilon(1e-6));
  }
}

TEST_CASE("mel scale formula") {
  CHECK(dsp::hz_to_mel(700.0) == Approx(2595.0 * std::log10(2.0)).epsilon(1e-12));
  CHECK(dsp::hz_to_mel(700.0) == Approx(781.17).margin(0.01));
  CHECK(dsp::mel_to_hz(dsp::hz_to_mel(1234.5)) == Approx(1234.5).epsilon(1e-9));
}

TEST_CASE("mel filterbank construction") {
  const auto fb = dsp::mel_filterbank(1024, 128, 16000, 0.0, 8000.0);
  CHECK(fb.n_mels == 128);
  CHECK(fb.bins == 513);
  int prev_peak = -1;
  for (int m = 0; m < fb.n_mels; ++m) {
    double sum = 0.0;
    int peak = 0;
    for (int b = 0; b < fb.bins; ++b) {
      CHECK(fb.at(m, b) >= 0.0);
      sum += fb.at(m, b);
      if (fb.at(m, b) > fb.at(m, peak)) peak = b;
    }
    CHECK(sum > 0.0);
    CHECK(peak >= prev_peak);
    prev_peak = peak;
  }
}

TEST_CASE("mel filterbank rejects unresolvable configurations") {
  CHECK_THROWS_AS(dsp::mel_filterbank(64, 128, 16000, 0.0, 8000.0), ConfigError);
  CHECK_THROWS_AS(dsp::mel_filterbank(1024, 128, 16000, 4000.0, 1000.0), ConfigError);
  CHECK_THROWS_AS(dsp::mel_filterbank(1024, 128, 16000, 0.0, 9000.0), ConfigError);
}

TEST_CASE("log_mel of silence is exactly the epsilon floor") {
  std::vector<double> zeros(4096, 0.0);
  const auto spec = dsp::stft(zeros, 1024, 512);
  const auto fb = dsp::mel_filterbank(1024, 128, 16000, 0.0, 8000.0);
  const auto lm = dsp::log_mel(spec, fb);
  CHECK(lm.frames == spec.frames);
  CHECK(lm.mel_bins == 128);
  const double floor = 10.0 * std::log10(1e-12);
  CHECK(floor == Approx(-120.0).margin(1e-9));
  for (double v : lm.v) CHECK(v == floor);
}

TEST_CASE("log_mel gains 6.02 dB when the waveform doubles") {
  const auto x1 = sinusoid(500.0, 0.5, 16000, 0.25);
  const auto x2 = sinusoid(500.0, 0.5, 16000, 0.5);
  const auto fb = dsp::mel_filterbank(1024, 128, 16000, 0.0, 8000.0);
  const auto a = dsp::log_mel(dsp::stft(x1, 1024, 512), fb);
  const auto b = dsp::log_mel(dsp::stft(x2, 1024, 512), fb);
  const double expected = 20.0 * std::log10(2.0);
  int checked = 0;
  for (size_t i = 0; i < a.v.size(); ++i) {
    if (a.v[i] < -60.0) continue;  // power comparable to the epsilon floor
    CHECK(b.v[i] - a.v[i] == Approx(expected).margin(1e-3));
    ++checked;
  }
  CHECK(checked > 0);
}

TEST_CASE("log_mel is monotone in input power") {
  Rng rng(43);
  dsp::ComplexSpectrogram spec;
  spec.frames = 3;
  spec.bins = 513;
  spec.re.resize(size_t(spec.frames) * spec.bins);
  spec.im.resize(spec.re.size());
  for (size_t i = 0; i < spec.re.size(); ++i) {
    spec.re[i] = rng.uniform(0.1, 1.0);
    spec.im[i] = rng.uniform(0.1, 1.0);
  }
  auto boosted = spec;
  for (size_t i = 0; i < boosted.re.size(); ++i) {
    boosted.re[i] *= 1.1;
    boosted.im[i] *= 1.1;
  }
  const auto fb = dsp::mel_filterbank(1024, 128, 16000, 0.0, 8000.0);
  const auto lo = dsp::log_mel(spec, fb);
  const auto hi = dsp::log_mel(boosted, fb);
  for (size_t i = 0; i < lo.v.size(); ++i) CHECK(hi.v[i] > lo.v[i]);
}

TEST_CASE("phase angles") {
  dsp::ComplexSpectrogram spec;
  spec.frames = 1;
  spec.bins = 3;
  spec.re = {2.0, 0.0, -1.0};
  spec.im = {0.0, 3.0, 0.0};
  const auto ph = dsp::phase_angles(spec);
  CHECK(ph.at(0, 0) == 0.0);
  CHECK(ph.at(0, 1) == Approx(M_PI / 2.0));
  CHECK(ph.at(0, 2) == Approx(M_PI));
}

TEST_CASE("phase angles of a real clip stay in [-pi, pi]") {
  const auto x = sinusoid(440.0, 0.5, 16000);
  const auto spec = dsp::stft(x, 1024, 512);
  const auto ph = dsp::phase_angles(spec);
  CHECK(ph.frames == spec.frames);
  CHECK(ph.bins == 513);
  for (double v : ph.v) {
    CHECK(v >= -M_PI);
    CHECK(v <= M_PI);
  }
}

namespace {

dsp::LogMelSpectrogram make_logmel(int frames, int mel) {
  dsp::LogMelSpectrogram lm;
  lm.frames = frames;
  lm.mel_bins = mel;
  lm.v.resize(size_t(frames) * mel);
  for (size_t i = 0; i < lm.v.size(); ++i) lm.v[i] = double(i);
  return lm;
}

dsp::PhaseFrames make_phase(int frames, int bins) {
  dsp::PhaseFrames ph;
  ph.frames = frames;
  ph.bins = bins;
  ph.v.resize(size_t(frames) * bins);
  for (size_t i = 0; i < ph.v.size(); ++i) ph.v[i] = double(i) * 1e-3;
  return ph;
}

}  // namespace

TEST_CASE("window_frames counts and layout") {
  const auto lm = make_logmel(311, 8);
  const auto ph = make_phase(311, 16);
  CHECK(dsp::window_frames(lm, ph, 5, 1).size() == 307);

  const auto one = dsp::window_frames(make_logmel(5, 8), make_phase(5, 16), 5, 1);
  REQUIRE(one.size() == 1);
  const auto& w = one[0];
  CHECK(w.context_rows == 4);
  // context = frames {1,2,4,5} (1-based), target = frame 3
  const auto lm5 = make_logmel(5, 8);
  for (int j = 0; j < 8; ++j) {
    CHECK(w.context[size_t(0 * 8 + j)] == lm5.at(0, j));
    CHECK(w.context[size_t(1 * 8 + j)] == lm5.at(1, j));
    CHECK(w.context[size_t(2 * 8 + j)] == lm5.at(3, j));
    CHECK(w.context[size_t(3 * 8 + j)] == lm5.at(4, j));
    CHECK(w.center[size_t(j)] == lm5.at(2, j));
  }
  const auto ph5 = make_phase(5, 16);
  for (int j = 0; j < 16; ++j) {
    CHECK(w.phase_context[size_t(0 * 16 + j)] == ph5.at(0, j));
    CHECK(w.phase_context[size_t(3 * 16 + j)] == ph5.at(4, j));
  }
}

TEST_CASE("window_frames errors") {
  CHECK_THROWS_AS(dsp::window_frames(make_logmel(4, 8), make_phase(4, 16), 5, 1), ContractError);
  CHECK_THROWS_AS(dsp::window_frames(make_logmel(10, 8), make_phase(10, 16), 4, 1), ContractError);
  CHECK_THROWS_AS(dsp::window_frames(make_logmel(10, 8), make_phase(9, 16), 5, 1), ContractError);
}

TEST_CASE("stride-1 windows reassemble the original frame sequence") {
  const int frames = 23, mel = 6, bins = 11, n = 5;
  const auto lm = make_logmel(frames, mel);
  const auto ph = make_phase(frames, bins);
  const auto windows = dsp::window_frames(lm, ph, n, 1);
  REQUIRE(int(windows.size()) == frames - n + 1);
  for (int w = 0; w < int(windows.size()); ++w) {
    const auto& fw = windows[size_t(w)];
    const int sources[4] = {w, w + 1, w + 3, w + 4};
    for (int row = 0; row < 4; ++row)
      for (int j = 0; j < mel; ++j)
        REQUIRE(fw.context[size_t(row * mel + j)] == lm.at(sources[row], j));
    for (int j = 0; j < mel; ++j) REQUIRE(fw.center[size_t(j)] == lm.at(w + 2, j));
    for (int row = 0; row < 4; ++row)
      for (int j = 0; j < bins; ++j)
        REQUIRE(fw.phase_context[size_t(row * bins + j)] == ph.at(sources[row], j));
  }
}

TEST_CASE("window stride reduces the window count") {
  const auto lm = make_logmel(186, 8);
  const auto ph = make_phase(186, 16);
  CHECK(dsp::window_frames(lm, ph, 5, 1).size() == 182);
  CHECK(dsp::window_frames(lm, ph, 5, 16).size() == 12);
  CHECK(dsp::window_count(186, 5, 16) == 12);
}

TEST_CASE("feature cache file round trip") {
  testutil::TempDir tmp("asdkit_dsp_cache");
  const auto x = sinusoid(777.0, 0.4, 16000, 0.3);
  const auto fb = dsp::mel_filterbank(1024, 128, 16000, 0.0, 8000.0);
  dsp::FeatureConfig cfg;
  const dsp::ClipFeatures feat = dsp::featurize(x, cfg, fb);

  const std::string p1 = tmp.sub("a.feat"), p2 = tmp.sub("b.feat");
  dsp::write_feature_file(p1, feat);
  const dsp::ClipFeatures back = dsp::read_feature_file(p1);
  CHECK(back.logmel.frames == feat.logmel.frames);
  CHECK(back.logmel.mel_bins == feat.logmel.mel_bins);
  CHECK(back.phase.bins == feat.phase.bins);
  for (size_t i = 0; i < feat.logmel.v.size(); ++i)
    REQUIRE(back.logmel.v[i] == double(float(feat.logmel.v[i])));
  for (size_t i = 0; i < feat.phase.v.size(); ++i)
    REQUIRE(back.phase.v[i] == double(float(feat.phase.v[i])));

  // a second write of the read-back features is byte-identical
  dsp::write_feature_file(p2, back);
  CHECK(testutil::read_file(p1) == testutil::read_file(p2));

  CHECK_THROWS_AS(dsp::read_feature_file(tmp.sub("missing.feat")), IoError);
}

TEST_CASE("feature config hash tracks every field") {
  dsp::FeatureConfig a;
  dsp::FeatureConfig b = a;
  CHECK(a.hash() == b.hash());
  b.n_mels = 64;
  CHECK(a.hash() != b.hash());
  b = a;
  b.f_max = 7000.0;
  CHECK(a.hash() != b.hash());
}
