#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <vector>

#include "asdkit/dataio.hpp"
#include "asdkit/trainer.hpp"
#include "testutil.hpp"

using namespace asdkit;
using Catch::Approx;
using testutil::random_tensor;

namespace {

model::ModelConfig cfg_for(int k) {
  model::ModelConfig cfg;
  cfg.num_ids = k;
  return cfg;
}

/// Small two-id window set from real synthetic clips.
trainer::WindowSet synth_windows(int clips_per_id = 2, int stride = 24, uint64_t seed = 11) {
  dataio::SynthSpec spec;
  spec.num_ids = 2;
  spec.duration_s = 2.0;
  dsp::FeatureConfig fcfg;
  const auto fb =
      dsp::mel_filterbank(fcfg.n_fft, fcfg.n_mels, fcfg.sample_rate, fcfg.f_min, fcfg.f_max);
  trainer::WindowSet set;
  set.num_classes = 2;
  for (int id = 0; id < 2; ++id)
    for (int i = 0; i < clips_per_id; ++i) {
      const auto clip =
          dataio::synth_clip(spec, id, dataio::Condition::normal, mix_seed(seed, id, i));
      const auto feat = dsp::featurize(clip.samples, fcfg, fb);
      for (const auto& w : dsp::window_frames(feat.logmel, feat.phase, 5, stride))
        set.add(w, id);
    }
  return set;
}

trainer::WindowSet random_windows(int count, int classes, uint64_t seed) {
  Rng rng(seed);
  trainer::WindowSet set;
  set.num_classes = classes;
  for (int i = 0; i < count; ++i) {
    dsp::FrameWindow w;
    w.context_rows = 4;
    w.mel_bins = 128;
    w.phase_bins = 513;
    w.context = random_tensor({4, 128}, rng).v;
    w.phase_context = random_tensor({4, 513}, rng, -M_PI, M_PI).v;
    w.center = random_tensor({1, 128}, rng).v;
    set.add(w, i % classes);
  }
  return set;
}

std::vector<std::vector<double>> classifier_snapshot(const model::Model& m) {
  std::vector<std::vector<double>> snap;
  for (const char* name : {"cls.fc1.w", "cls.fc1.b", "cls.fc2.w", "cls.fc2.b"})
    snap.push_back(m.params.get(name).value.v);
  return snap;
}

}  // namespace

TEST_CASE("fit validates its inputs") {
  model::Model m(cfg_for(2), 1);
  trainer::WindowSet empty;
  empty.num_classes = 2;
  trainer::TrainConfig tc;
  tc.epochs = 1;
  CHECK_THROWS_AS(trainer::fit(m, empty, tc), ContractError);

  auto set = random_windows(8, 1, 3);
  model::Model m1(cfg_for(1), 1);
  trainer::TrainConfig tc1;
  tc1.epochs = 1;
  tc1.alpha = 0.3;
  CHECK_THROWS_AS(trainer::fit(m1, set, tc1), ConfigError);  // K < 2 with alpha > 0
}

TEST_CASE("classifier parameters change exactly on the joint epochs") {
  auto set = synth_windows();
  model::Model m(cfg_for(2), 21);
  m.stats = trainer::compute_feature_stats(set.ctx, 128);

  trainer::TrainConfig tc;
  tc.epochs = 30;
  tc.batch_size = 16;
  tc.classifier_period = 10;
  tc.alpha = 0.3;
  tc.seed = 9;

  std::map<int, std::vector<std::vector<double>>> snaps;
  snaps[0] = classifier_snapshot(m);
  const auto log = trainer::fit(m, set, tc, [&](int epoch, const model::Model& mm) {
    snaps[epoch] = classifier_snapshot(mm);
  });

  REQUIRE(log.epochs.size() == 30);
  for (int e = 1; e <= 30; ++e) {
    const bool joint = e % 10 == 0;
    CHECK(log.epochs[size_t(e - 1)].joint == joint);
    CHECK(std::isfinite(log.epochs[size_t(e - 1)].loss_r));
    if (joint) {
      CHECK(std::isfinite(log.epochs[size_t(e - 1)].loss_c));
      CHECK(snaps[e] != snaps[e - 1]);
    } else {
      CHECK(std::isnan(log.epochs[size_t(e - 1)].loss_c));
      CHECK(snaps[e] == snaps[e - 1]);  // bitwise
    }
  }
}

TEST_CASE("alpha = 0 trains reconstruction only") {
  auto set = synth_windows(1, 32);
  model::Model m(cfg_for(2), 22);
  m.stats = trainer::compute_feature_stats(set.ctx, 128);
  const auto before = classifier_snapshot(m);
  const auto ae_before = m.params.get("enc0.attn.q.w").value.v;

  trainer::TrainConfig tc;
  tc.epochs = 12;
  tc.batch_size = 8;
  tc.alpha = 0.0;
  tc.seed = 2;
  const auto log = trainer::fit(m, set, tc);
  CHECK(classifier_snapshot(m) == before);
  CHECK(m.params.get("enc0.attn.q.w").value.v != ae_before);
  for (const auto& e : log.epochs) CHECK_FALSE(e.joint);
}

TEST_CASE("training is bitwise deterministic under a fixed seed") {
  auto run = [] {
    auto set = synth_windows(1, 32, 5);
    model::Model m(cfg_for(2), 23);
    m.stats = trainer::compute_feature_stats(set.ctx, 128);
    trainer::TrainConfig tc;
    tc.epochs = 11;
    tc.batch_size = 8;
    tc.seed = 77;
    const auto log = trainer::fit(m, set, tc);
    std::vector<double> out;
    for (size_t i = 0; i < m.params.size(); ++i)
      out.insert(out.end(), m.params.at(i).value.v.begin(), m.params.at(i).value.v.end());
    for (const auto& e : log.epochs) {
      out.push_back(e.loss_r);
      out.push_back(e.joint ? e.loss_c : -1.0);
    }
    return out;
  };
  CHECK(run() == run());
}

TEST_CASE("reconstruction loss trends down on the synthetic set") {
  auto set = synth_windows(2, 12);
  model::Model m(cfg_for(2), 24);
  m.stats = trainer::compute_feature_stats(set.ctx, 128);
  trainer::TrainConfig tc;
  tc.epochs = 30;
  tc.batch_size = 16;
  tc.seed = 3;
  const auto log = trainer::fit(m, set, tc);
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 10; ++i) {
    first += log.epochs[size_t(i)].loss_r;
    last += log.epochs[log.epochs.size() - 1 - size_t(i)].loss_r;
  }
  INFO("first-10 mean " << first / 10 << ", last-10 mean " << last / 10);
  CHECK(last < first);
}

TEST_CASE("evaluate: chance-level accuracy for an untrained model") {
  auto set = random_windows(400, 4, 31);
  model::Model m(cfg_for(4), 25);
  const auto em = trainer::evaluate(m, set);
  CHECK(em.accuracy == Approx(0.25).margin(0.15));
  CHECK(em.loss_r > 0.0);
  CHECK(em.loss_c > 0.0);
}

TEST_CASE("evaluate is repeatable and mutation-free") {
  auto set = synth_windows(1, 32);
  model::Model m(cfg_for(2), 26);
  m.stats = trainer::compute_feature_stats(set.ctx, 128);
  std::vector<std::vector<double>> before;
  for (size_t i = 0; i < m.params.size(); ++i) before.push_back(m.params.at(i).value.v);
  const auto a = trainer::evaluate(m, set);
  const auto b = trainer::evaluate(m, set);
  CHECK(a.loss_r == b.loss_r);
  CHECK(a.loss_c == b.loss_c);
  CHECK(a.accuracy == b.accuracy);
  for (size_t i = 0; i < m.params.size(); ++i) REQUIRE(m.params.at(i).value.v == before[size_t(i)]);
}

TEST_CASE("a uniform classifier scores ln K") {
  auto set = random_windows(32, 4, 33);
  model::Model m(cfg_for(4), 27);
  auto& W = m.params.get("cls.fc2.w").value;
  auto& b = m.params.get("cls.fc2.b").value;
  std::fill(W.v.begin(), W.v.end(), 0.0);
  std::fill(b.v.begin(), b.v.end(), 0.0);
  const auto em = trainer::evaluate(m, set);
  CHECK(em.loss_c == Approx(std::log(4.0)).epsilon(1e-9));
}

TEST_CASE("train log CSV layout") {
  testutil::TempDir tmp("asdkit_trainlog");
  trainer::TrainLog log;
  log.epochs.push_back({1, false, 2.5, std::numeric_limits<double>::quiet_NaN(), 0.1});
  log.epochs.push_back({2, true, 1.5, 0.7, 0.2});
  const std::string path = tmp.sub("train_log.csv");
  trainer::write_train_log_csv(path, log);
  const std::string text = testutil::read_file(path);
  CHECK(text.find("epoch,mode,loss_r,loss_c,seconds") == 0);
  CHECK(text.find("1,recon,2.5,nan") != std::string::npos);
  CHECK(text.find("2,joint,1.5,0.7") != std::string::npos);
}
