#pragma once

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "asdkit/checkpoint.hpp"
#include "asdkit/config.hpp"
#include "asdkit/dataio.hpp"
#include "asdkit/metrics.hpp"
#include "asdkit/plot.hpp"
#include "asdkit/scorer.hpp"
#include "asdkit/trainer.hpp"

// Command-line surface: synth -> featurize -> train -> score -> eval.
// Exit codes: 0 success, 1 internal error, 2 usage/config error.
namespace asdkit::cli {

namespace fs = std::filesystem;

struct CommonOpts {
  std::string config_file;
  std::vector<std::string> sets;
  std::string seed;
  std::string machine_type;
};

inline void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_file, "key=value config file");
  cmd->add_option("--set", opts.sets, "override a config key (repeatable)");
  cmd->add_option("--seed", opts.seed, "override the seed config key");
}

inline config::RunConfig build_config(const CommonOpts& opts) {
  config::RunConfig cfg;
  if (!opts.config_file.empty()) cfg.load_file(opts.config_file);
  for (const auto& kv : opts.sets) cfg.set_assignment(kv);
  if (!opts.seed.empty()) cfg.set("seed", opts.seed);
  return cfg;
}

inline std::string default_cache_dir(const std::string& corpus) { return corpus + "/_cache"; }

inline std::string canonical_type(const std::string& t) {
  return dataio::detail::canonical_machine_type(t);
}

inline std::vector<dataio::ClipMeta> clips_of(const dataio::ScanResult& scan,
                                              const std::string& machine_type,
                                              dataio::Split split) {
  const std::string want = canonical_type(machine_type);
  std::vector<dataio::ClipMeta> out;
  for (const auto& c : scan.clips)
    if (c.machine_type == want && c.split == split) out.push_back(c);
  return out;
}

inline void print_warnings(const dataio::ScanResult& scan) {
  for (const auto& w : scan.warnings) std::cerr << "warning: " << w << "\n";
}

// --- synth ---

inline dataio::SynthSpec synth_spec_from(const config::RunConfig& cfg) {
  dataio::SynthSpec spec;
  spec.num_ids = cfg.geti("synth_num_ids");
  spec.train_clips_per_id = cfg.geti("synth_train_per_id");
  spec.test_normal_per_id = cfg.geti("synth_test_normal_per_id");
  spec.test_anomaly_per_id = cfg.geti("synth_test_anomaly_per_id");
  spec.duration_s = cfg.getd("synth_duration_s");
  spec.sample_rate = cfg.geti("sample_rate");
  spec.anomaly_kind = dataio::anomaly_kind_from_string(cfg.gets("synth_anomaly_kind"));
  spec.anomaly_duration_s = cfg.getd("synth_anomaly_duration_s");
  spec.burst_gain = cfg.getd("synth_burst_gain");
  spec.id_profiles = dataio::SynthSpec::default_profiles(spec.num_ids);
  const double noise = cfg.getd("synth_noise_floor");
  for (auto& p : spec.id_profiles) p.noise_floor = noise;
  return spec;
}

inline std::string synth_machine_type(const config::RunConfig& cfg) {
  const std::string t = cfg.gets("synth_machine_type");
  if (t != "auto") return t;
  return cfg.gets("synth_anomaly_kind") == "detune" ? "synth_detune" : "synth_burst";
}

inline int cmd_synth(const config::RunConfig& cfg, const std::string& out_dir) {
  const dataio::SynthSpec spec = synth_spec_from(cfg);
  spec.validate(cfg.geti("n_fft"), cfg.geti("frames"));
  const std::string mtype = synth_machine_type(cfg);
  const auto rep = dataio::write_synth_corpus(spec, mtype, out_dir, cfg.seed());
  std::cout << "synth: wrote " << rep.files << " clips for machine type " << mtype << " under "
            << out_dir << "\n";
  return 0;
}

// --- featurize ---

inline int cmd_featurize(const config::RunConfig& cfg, const std::string& corpus,
                         const std::string& cache_dir) {
  const auto scan = dataio::scan_corpus(corpus);
  print_warnings(scan);
  const auto rep = dataio::cache_features(scan.clips, cfg.feature_config(), cache_dir);
  std::cout << "featurize: " << rep.computed << " computed, " << rep.reused << " reused";
  if (rep.recomputed_on_mismatch)
    std::cout << " (" << rep.recomputed_on_mismatch << " recomputed after config change)";
  std::cout << ", manifest " << rep.manifest_path << "\n";
  return 0;
}

// --- train ---

struct TrainInputs {
  trainer::WindowSet windows;
  model::IdVocab vocab;
  model::FeatureStats stats;
};

/// Load cached features of the train split, derive the ID vocabulary and the
/// standardization statistics, and window every clip at the training stride.
inline TrainInputs load_train_inputs(const config::RunConfig& cfg, const std::string& corpus,
                                     const std::string& machine_type,
                                     const std::string& cache_dir) {
  const auto scan = dataio::scan_corpus(corpus);
  print_warnings(scan);
  const auto train_clips = clips_of(scan, machine_type, dataio::Split::train);
  if (train_clips.empty())
    throw ConfigError("no training clips for machine type '" + machine_type + "' under " + corpus);
  dataio::cache_features(train_clips, cfg.feature_config(), cache_dir);

  TrainInputs in;
  std::set<std::string> ids;
  for (const auto& c : train_clips) ids.insert(c.machine_id);
  in.vocab.labels.assign(ids.begin(), ids.end());

  const int n = cfg.geti("frames");
  const int stride = cfg.geti("train_stride");
  std::vector<double> all_frames;
  std::vector<std::pair<dsp::ClipFeatures, int>> feats;
  feats.reserve(train_clips.size());
  for (const auto& c : train_clips) {
    dsp::ClipFeatures f = dsp::read_feature_file(dataio::cache_path_for(cache_dir, c));
    all_frames.insert(all_frames.end(), f.logmel.v.begin(), f.logmel.v.end());
    feats.emplace_back(std::move(f), in.vocab.index_of(c.machine_id));
  }
  in.stats = cfg.getb("standardize")
                 ? trainer::compute_feature_stats(all_frames, cfg.geti("n_mels"))
                 : model::FeatureStats::identity(cfg.geti("n_mels"));
  in.windows.num_classes = in.vocab.size();
  for (const auto& [f, label] : feats)
    for (const auto& w : dsp::window_frames(f.logmel, f.phase, n, stride))
      in.windows.add(w, label);
  return in;
}

inline int cmd_train(const config::RunConfig& cfg, const std::string& corpus,
                     const std::string& machine_type, const std::string& out_dir,
                     const std::string& cache_dir) {
  TrainInputs in = load_train_inputs(cfg, corpus, machine_type, cache_dir);
  model::Model m(cfg.model_config(in.vocab.size()), cfg.seed());
  m.stats = in.stats;
  std::cout << "train: " << in.windows.count << " windows, " << in.vocab.size()
            << " machine ids, " << m.params.trainable_count() << " parameters\n";
  const trainer::TrainLog log = trainer::fit(m, in.windows, cfg.train_config());
  fs::create_directories(out_dir);
  checkpoint::save(out_dir, m, in.vocab, cfg.to_text());
  trainer::write_train_log_csv(out_dir + "/train_log.csv", log);
  const auto& last = log.epochs.back();
  std::cout << "train: done, final loss_r " << last.loss_r << " (epoch " << last.epoch << "), "
            << "checkpoint in " << out_dir << "\n";
  return 0;
}

// --- score ---

inline int cmd_score(const config::RunConfig& cfg, const std::string& model_dir,
                     const std::string& corpus, const std::string& machine_type,
                     const std::string& out_dir, const std::string& cache_dir) {
  auto loaded = checkpoint::load(model_dir);
  const auto scan = dataio::scan_corpus(corpus);
  print_warnings(scan);
  const auto test_clips = clips_of(scan, machine_type, dataio::Split::test);
  if (test_clips.empty())
    throw ConfigError("no test clips for machine type '" + machine_type + "' under " + corpus);
  dataio::cache_features(test_clips, cfg.feature_config(), cache_dir);

  scorer::ScoreConfig sc;
  sc.r = cfg.resolve_r(canonical_type(machine_type));
  sc.beta = cfg.resolve_beta(canonical_type(machine_type));
  if (cfg.has_theta()) sc.theta = cfg.getd("theta");
  sc.validate();

  std::vector<scorer::ScoreRecord> records;
  std::vector<scorer::ErrorSequence> errors;
  records.reserve(test_clips.size());
  for (const auto& c : test_clips) {
    const dsp::ClipFeatures feat = dsp::read_feature_file(dataio::cache_path_for(cache_dir, c));
    scorer::ErrorSequence seq;
    scorer::ScoreRecord rec =
        scorer::score_clip(loaded.model, feat, loaded.vocab.index_of(c.machine_id), sc, &seq);
    rec.clip_path = c.path;
    rec.machine_type = c.machine_type;
    rec.machine_id = c.machine_id;
    rec.anomaly = c.condition == dataio::Condition::anomaly;
    seq.clip_path = c.path;
    seq.machine_type = c.machine_type;
    seq.machine_id = c.machine_id;
    seq.anomaly = rec.anomaly;
    records.push_back(std::move(rec));
    errors.push_back(std::move(seq));
  }
  fs::create_directories(out_dir);
  scorer::write_scores_csv(out_dir + "/scores.csv", records);
  scorer::write_errors_csv(out_dir + "/errors.csv", errors);
  if (cfg.has_theta()) {
    std::ofstream out(out_dir + "/decisions.csv", std::ios::trunc);
    if (!out) throw IoError("cannot write decisions.csv");
    out << "clip_path,score_weighted,decision\n";
    char buf[512];
    for (const auto& r : records) {
      std::snprintf(buf, sizeof(buf), "%s,%.17g,%d\n", r.clip_path.c_str(), r.score_weighted,
                    scorer::decide(r.score_weighted, sc.theta));
      out << buf;
    }
  }
  std::cout << "score: " << records.size() << " clips (r=" << sc.r << ", beta=" << sc.beta
            << ") -> " << out_dir << "/scores.csv\n";
  return 0;
}

// --- eval ---

namespace detail {

inline double record_score(const scorer::ScoreRecord& r, const std::string& column) {
  if (column == "score_mean") return r.score_mean;
  if (column == "score_max") return r.score_max;
  if (column == "score_gwrp") return r.score_gwrp;
  if (column == "loss_c") return r.loss_c;
  if (column == "score_weighted") return r.score_weighted;
  throw ConfigError("unknown score_column: " + column);
}

struct ReportRow {
  std::string machine_type, machine_id, metric;
  double value;
};

}  // namespace detail

inline int cmd_eval(const config::RunConfig& cfg, const std::string& scores_dir,
                    const std::string& out_dir, bool r_grid) {
  const auto records = scorer::read_scores_csv(scores_dir + "/scores.csv");
  if (records.empty()) throw ConfigError("no score rows in " + scores_dir);
  const std::string column = cfg.gets("score_column");
  const double p = cfg.getd("pauc_p");
  fs::create_directories(out_dir);

  std::map<std::string, std::map<std::string, metrics::LabeledScores>> by_type_id;
  std::map<std::string, metrics::LabeledScores> by_type;
  for (const auto& r : records) {
    const double s = detail::record_score(r, column);
    by_type_id[r.machine_type][r.machine_id].add(s, r.anomaly ? 1 : 0);
    by_type[r.machine_type].add(s, r.anomaly ? 1 : 0);
  }

  std::vector<detail::ReportRow> rows;
  for (const auto& [mtype, ids] : by_type_id) {
    std::vector<std::pair<std::string, metrics::LabeledScores>> groups(ids.begin(), ids.end());
    for (const auto& [mid, scores] : groups) {
      rows.push_back({mtype, mid, "AUC", metrics::auc(scores)});
      rows.push_back({mtype, mid, "pAUC", metrics::pauc(scores, p)});
    }
    rows.push_back({mtype, "ALL", "AUC", metrics::auc(by_type[mtype])});
    rows.push_back({mtype, "ALL", "pAUC", metrics::pauc(by_type[mtype], p)});
    rows.push_back({mtype, "ALL", "mAUC", metrics::mauc(groups)});

    const auto roc = metrics::roc_curve(by_type[mtype]);
    std::ofstream rc(out_dir + "/roc_" + mtype + ".csv", std::ios::trunc);
    rc << "fpr,tpr\n";
    char buf[96];
    for (const auto& pt : roc) {
      std::snprintf(buf, sizeof(buf), "%.17g,%.17g\n", pt.fpr, pt.tpr);
      rc << buf;
    }
    plot::write_roc_svg(out_dir + "/roc_" + mtype + ".svg", roc, "ROC " + mtype);

    const auto hist = metrics::make_histogram(by_type[mtype], cfg.geti("hist_bins"));
    std::ofstream hc(out_dir + "/hist_" + mtype + ".csv", std::ios::trunc);
    if (hist.degenerate) hc << "# degenerate score range, single bin\n";
    hc << "bin_lo,bin_hi,count_normal,count_anomaly\n";
    for (int b = 0; b < hist.bins; ++b) {
      std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%lld,%lld\n", double(b) / hist.bins,
                    double(b + 1) / hist.bins, (long long)hist.normal[size_t(b)],
                    (long long)hist.anomaly[size_t(b)]);
      hc << buf;
    }
    plot::write_histogram_svg(out_dir + "/hist_" + mtype + ".svg", hist, "Scores " + mtype);
  }

  std::ofstream rep(out_dir + "/report.csv", std::ios::trunc);
  if (!rep) throw IoError("cannot write report.csv");
  rep << "machine_type,machine_id,metric,value\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%s,%s,%.17g\n", r.machine_type.c_str(),
                  r.machine_id.c_str(), r.metric.c_str(), r.value);
    rep << buf;
  }

  if (r_grid) {
    const auto errors = scorer::read_errors_csv(scores_dir + "/errors.csv");
    std::map<std::string, std::vector<const scorer::ErrorSequence*>> seq_by_type;
    for (const auto& s : errors) seq_by_type[s.machine_type].push_back(&s);
    for (const auto& [mtype, seqs] : seq_by_type) {
      std::ofstream out(out_dir + "/r_sweep_" + mtype + ".csv", std::ios::trunc);
      out << "r,auc,pauc\n";
      for (int step = 0; step <= 20; ++step) {
        const double r = double(step) / 20.0;
        metrics::LabeledScores ls;
        for (const auto* s : seqs) ls.add(scorer::score_gwrp(s->e, r), s->anomaly ? 1 : 0);
        std::snprintf(buf, sizeof(buf), "%.2f,%.17g,%.17g\n", r, metrics::auc(ls),
                      metrics::pauc(ls, p));
        out << buf;
      }
    }
  }

  for (const auto& r : rows)
    if (r.machine_id == "ALL")
      std::cout << "eval: " << r.machine_type << " " << r.metric << " = " << r.value << "\n";
  std::cout << "eval: report in " << out_dir << "/report.csv\n";
  return 0;
}

// --- entry point ---

inline int run(std::vector<std::string> args) {
  CLI::App app{"Machine-sound anomaly detection toolkit"};
  app.require_subcommand(1);

  CommonOpts synth_o, feat_o, train_o, score_o, eval_o;
  std::string synth_out;
  std::string feat_corpus, feat_cache;
  std::string train_corpus, train_out, train_cache;
  std::string score_model, score_corpus, score_out, score_cache;
  std::string eval_scores, eval_out;
  bool eval_rgrid = false;

  auto* synth = app.add_subcommand("synth", "generate the synthetic corpus");
  add_common(synth, synth_o);
  synth->add_option("--out", synth_out, "corpus output directory")->required();

  auto* feat = app.add_subcommand("featurize", "cache log-mel + phase features");
  add_common(feat, feat_o);
  feat->add_option("--corpus", feat_corpus, "corpus root")->required();
  feat->add_option("--cache", feat_cache, "feature cache directory (default <corpus>/_cache)");

  auto* train = app.add_subcommand("train", "train one model for a machine type");
  add_common(train, train_o);
  train->add_option("--corpus", train_corpus, "corpus root")->required();
  train->add_option("--machine-type", train_o.machine_type, "machine type to train")->required();
  train->add_option("--out", train_out, "checkpoint output directory")->required();
  train->add_option("--cache", train_cache, "feature cache directory");

  auto* score = app.add_subcommand("score", "score the test split of a machine type");
  add_common(score, score_o);
  score->add_option("--model", score_model, "checkpoint directory")->required();
  score->add_option("--corpus", score_corpus, "corpus root")->required();
  score->add_option("--machine-type", score_o.machine_type, "machine type to score")->required();
  score->add_option("--out", score_out, "output directory for scores.csv")->required();
  score->add_option("--cache", score_cache, "feature cache directory");

  auto* eval = app.add_subcommand("eval", "compute AUC/pAUC/mAUC report and plots");
  add_common(eval, eval_o);
  eval->add_option("--scores", eval_scores, "directory holding scores.csv")->required();
  eval->add_option("--out", eval_out, "report output directory")->required();
  eval->add_flag("--r-grid", eval_rgrid, "sweep the GWRP decay over [0,1] from errors.csv");

  try {
    std::vector<const char*> argv;
    argv.push_back("asdkit");
    for (const auto& a : args) argv.push_back(a.c_str());
    app.parse(int(argv.size()), argv.data());

    if (*synth) return cmd_synth(build_config(synth_o), synth_out);
    if (*feat) {
      if (feat_cache.empty()) feat_cache = default_cache_dir(feat_corpus);
      return cmd_featurize(build_config(feat_o), feat_corpus, feat_cache);
    }
    if (*train) {
      if (train_cache.empty()) train_cache = default_cache_dir(train_corpus);
      return cmd_train(build_config(train_o), train_corpus, train_o.machine_type, train_out,
                       train_cache);
    }
    if (*score) {
      if (score_cache.empty()) score_cache = default_cache_dir(score_corpus);
      return cmd_score(build_config(score_o), score_model, score_corpus, score_o.machine_type,
                       score_out, score_cache);
    }
    if (*eval) return cmd_eval(build_config(eval_o), eval_scores, eval_out, eval_rgrid);
    return 2;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace asdkit::cli
