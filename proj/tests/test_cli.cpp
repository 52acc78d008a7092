#include <catch2/catch_amalgamated.hpp>

#include <fstream>

#include "asdkit/checkpoint.hpp"
#include "asdkit/cli.hpp"
#include "testutil.hpp"

using namespace asdkit;
using Catch::Approx;

TEST_CASE("config defaults mirror the published operating points") {
  config::RunConfig cfg;
  CHECK(cfg.geti("n_fft") == 1024);
  CHECK(cfg.geti("n_mels") == 128);
  CHECK(cfg.geti("hop") == 512);
  CHECK(cfg.geti("frames") == 5);
  CHECK(cfg.getd("alpha") == 0.3);
  CHECK(cfg.getd("lr") == 0.0001);
  CHECK(cfg.geti("classifier_period") == 10);

  CHECK(cfg.resolve_r("Fan") == 1.00);
  CHECK(cfg.resolve_r("Slider") == 0.96);
  CHECK(cfg.resolve_r("Valve") == 0.92);
  CHECK(cfg.resolve_beta("Fan") == 0.84);
  CHECK(cfg.resolve_beta("Pump") == 0.82);
  CHECK(cfg.resolve_beta("Slider") == 0.80);
  CHECK(cfg.resolve_beta("Valve") == 0.72);
  CHECK(cfg.resolve_beta("ToyCar") == 0.62);
  CHECK(cfg.resolve_beta("ToyConveyor") == 0.98);

  cfg.set("r", "0.33");
  cfg.set("beta", "0.11");
  CHECK(cfg.resolve_r("Valve") == 0.33);
  CHECK(cfg.resolve_beta("Valve") == 0.11);
}

TEST_CASE("config rejects unknown keys and malformed values") {
  config::RunConfig cfg;
  CHECK_THROWS_AS(cfg.set("no_such_key", "1"), ConfigError);
  CHECK_THROWS_AS(cfg.set_assignment("novalue"), ConfigError);
  cfg.set("epochs", "12x");
  CHECK_THROWS_AS(cfg.geti("epochs"), ConfigError);
  cfg.set("lr", "fast");
  CHECK_THROWS_AS(cfg.getd("lr"), ConfigError);
  cfg.set("standardize", "maybe");
  CHECK_THROWS_AS(cfg.getb("standardize"), ConfigError);
}

TEST_CASE("config files round-trip losslessly") {
  testutil::TempDir tmp("asdkit_cfg");
  config::RunConfig cfg;
  cfg.set("epochs", "300");
  cfg.set("batch_size", "2000");  // paper-scale values stay configurable
  cfg.set("r", "0.92");
  const std::string text = cfg.to_text();
  {
    std::ofstream out(tmp.sub("run.cfg"));
    out << text;
  }
  config::RunConfig back;
  back.load_file(tmp.sub("run.cfg"));
  CHECK(back.to_text() == text);
  CHECK(back.geti("epochs") == 300);
  CHECK(back.geti("batch_size") == 2000);

  {
    std::ofstream out(tmp.sub("bad.cfg"));
    out << "# comment\nepochs = 10\nbogus_key = 1\n";
  }
  config::RunConfig rejecting;
  CHECK_THROWS_AS(rejecting.load_file(tmp.sub("bad.cfg")), ConfigError);
}

TEST_CASE("checkpoint round trip preserves the model bitwise") {
  testutil::TempDir tmp("asdkit_ckpt");
  model::ModelConfig mc;
  mc.num_ids = 3;
  model::Model m(mc, 42);
  Rng rng(1);
  m.stats.mean.assign(128, 0.0);
  m.stats.stdev.assign(128, 1.0);
  for (int i = 0; i < 128; ++i) {
    m.stats.mean[size_t(i)] = rng.uniform(-5.0, 5.0);
    m.stats.stdev[size_t(i)] = rng.uniform(0.5, 2.0);
  }
  model::IdVocab vocab;
  vocab.labels = {"id_00", "id_03", "id_07"};
  checkpoint::save(tmp.str(), m, vocab, "epochs = 7\n");

  const auto loaded = checkpoint::load(tmp.str());
  CHECK(loaded.config_echo == "epochs = 7\n");
  CHECK(loaded.vocab.labels == vocab.labels);
  CHECK(loaded.model.cfg.num_ids == 3);
  CHECK(loaded.model.stats.mean == m.stats.mean);
  CHECK(loaded.model.stats.stdev == m.stats.stdev);
  REQUIRE(loaded.model.params.size() == m.params.size());
  for (size_t i = 0; i < m.params.size(); ++i) {
    REQUIRE(loaded.model.params.at(i).name == m.params.at(i).name);
    REQUIRE(loaded.model.params.at(i).value.v == m.params.at(i).value.v);
  }
  CHECK_THROWS_AS(checkpoint::load(tmp.sub("nope")), IoError);
}

TEST_CASE("usage and config errors exit with code 2") {
  CHECK(cli::run({"featurize", "--corpus", "/no/such/corpus"}) == 2);
  CHECK(cli::run({"no_such_command"}) == 2);
  CHECK(cli::run({}) == 2);
  CHECK(cli::run({"synth"}) == 2);  // missing --out
  testutil::TempDir tmp("asdkit_cli_badset");
  CHECK(cli::run({"synth", "--out", tmp.str(), "--set", "bogus=1"}) == 2);
  CHECK(cli::run({"--help"}) == 0);
}

TEST_CASE("synth/featurize/train/score/eval pipeline on a miniature corpus") {
  testutil::TempDir tmp("asdkit_cli_pipe");
  const std::string corpus = tmp.sub("corpus");
  const std::vector<std::string> small = {
      "--set", "synth_num_ids=2",   "--set", "synth_train_per_id=3",
      "--set", "synth_test_normal_per_id=2", "--set", "synth_test_anomaly_per_id=2",
      "--set", "synth_duration_s=1"};

  auto synth_args = std::vector<std::string>{"synth", "--out", corpus, "--seed", "4"};
  synth_args.insert(synth_args.end(), small.begin(), small.end());
  REQUIRE(cli::run(synth_args) == 0);
  const auto scan = dataio::scan_corpus(corpus);
  CHECK(scan.clips.size() == 2 * (3 + 2 + 2));

  REQUIRE(cli::run({"featurize", "--corpus", corpus}) == 0);
  REQUIRE(std::filesystem::exists(corpus + "/_cache/manifest.csv"));

  const std::string model_dir = tmp.sub("model");
  REQUIRE(cli::run({"train", "--corpus", corpus, "--machine-type", "synth_burst", "--out",
                    model_dir, "--seed", "4", "--set", "epochs=3", "--set", "batch_size=8",
                    "--set", "train_stride=8", "--set", "synth_duration_s=1"}) == 0);
  REQUIRE(std::filesystem::exists(model_dir + "/model.asdp"));
  REQUIRE(std::filesystem::exists(model_dir + "/model.json"));
  REQUIRE(std::filesystem::exists(model_dir + "/train_log.csv"));

  const auto loaded = checkpoint::load(model_dir);
  CHECK(loaded.model.cfg.num_ids == 2);
  CHECK(loaded.vocab.labels == std::vector<std::string>{"id_00", "id_01"});
  CHECK(loaded.config_echo.find("epochs = 3") != std::string::npos);

  const std::string scores_mean = tmp.sub("scores_mean");
  REQUIRE(cli::run({"score", "--model", model_dir, "--corpus", corpus, "--machine-type",
                    "synth_burst", "--out", scores_mean, "--set", "r=1", "--set", "beta=0"}) == 0);
  const auto recs = scorer::read_scores_csv(scores_mean + "/scores.csv");
  REQUIRE(recs.size() == 8);  // 2 ids x (2 normal + 2 anomaly)
  for (const auto& r : recs) {
    CHECK(r.score_weighted == Approx(r.score_mean).epsilon(1e-12));  // r=1, beta=0
    CHECK(r.window_count == 26);  // 1 s at 16 kHz -> 30 frames -> 26 windows
  }
  {
    std::ifstream in(scores_mean + "/scores.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header ==
          "clip_path,machine_type,machine_id,label,I,score_mean,score_max,score_gwrp,"
          "loss_c,score_weighted");
  }

  const std::string scores_max = tmp.sub("scores_max");
  REQUIRE(cli::run({"score", "--model", model_dir, "--corpus", corpus, "--machine-type",
                    "synth_burst", "--out", scores_max, "--set", "r=0", "--set", "beta=0",
                    "--set", "theta=0.5"}) == 0);
  for (const auto& r : scorer::read_scores_csv(scores_max + "/scores.csv"))
    CHECK(r.score_weighted == Approx(r.score_max).epsilon(1e-12));
  REQUIRE(std::filesystem::exists(scores_max + "/decisions.csv"));

  const std::string report = tmp.sub("report");
  REQUIRE(cli::run({"eval", "--scores", scores_mean, "--out", report, "--r-grid"}) == 0);
  REQUIRE(std::filesystem::exists(report + "/report.csv"));
  REQUIRE(std::filesystem::exists(report + "/roc_synth_burst.csv"));
  REQUIRE(std::filesystem::exists(report + "/roc_synth_burst.svg"));
  REQUIRE(std::filesystem::exists(report + "/hist_synth_burst.csv"));
  REQUIRE(std::filesystem::exists(report + "/hist_synth_burst.svg"));
  REQUIRE(std::filesystem::exists(report + "/r_sweep_synth_burst.csv"));

  std::ifstream rin(report + "/report.csv");
  std::string line;
  std::getline(rin, line);
  CHECK(line == "machine_type,machine_id,metric,value");
  int mauc_rows = 0, all_rows = 0, id_rows = 0;
  while (std::getline(rin, line)) {
    if (line.find(",mAUC,") != std::string::npos) ++mauc_rows;
    if (line.find(",ALL,") != std::string::npos) ++all_rows;
    if (line.find(",id_0") != std::string::npos) ++id_rows;
  }
  CHECK(mauc_rows == 1);
  CHECK(all_rows == 3);  // AUC, pAUC, mAUC
  CHECK(id_rows == 4);   // 2 ids x (AUC, pAUC)

  // histogram bins sum to the per-class sample counts
  std::ifstream hin(report + "/hist_synth_burst.csv");
  std::getline(hin, line);  // header
  long long n_sum = 0, a_sum = 0;
  while (std::getline(hin, line)) {
    const auto c3 = line.rfind(',');
    const auto c2 = line.rfind(',', c3 - 1);
    a_sum += std::stoll(line.substr(c3 + 1));
    n_sum += std::stoll(line.substr(c2 + 1, c3 - c2 - 1));
  }
  CHECK(n_sum == 4);
  CHECK(a_sum == 4);

  // featurize rerun is a no-op; rescoring is byte-identical
  REQUIRE(cli::run({"featurize", "--corpus", corpus}) == 0);
  const std::string scores_again = tmp.sub("scores_again");
  REQUIRE(cli::run({"score", "--model", model_dir, "--corpus", corpus, "--machine-type",
                    "synth_burst", "--out", scores_again, "--set", "r=1", "--set", "beta=0"}) == 0);
  CHECK(testutil::read_file(scores_again + "/scores.csv") ==
        testutil::read_file(scores_mean + "/scores.csv"));

  // scoring an unknown machine type is a usage error
  CHECK(cli::run({"score", "--model", model_dir, "--corpus", corpus, "--machine-type", "Gadget",
                  "--out", tmp.sub("nope")}) == 2);
}
