#pragma once

// Command implementations behind the `mosforge` executable. Kept in the
// library so tests can drive every command in-process.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mosforge/common.hpp"
#include "mosforge/corpus.hpp"
#include "mosforge/ensemble.hpp"
#include "mosforge/featureio.hpp"
#include "mosforge/gbm.hpp"
#include "mosforge/metrics.hpp"
#include "mosforge/nn.hpp"
#include "mosforge/synthetic.hpp"

namespace mosforge::cli {

namespace fs = std::filesystem;
using ensemble::Backend;
using ensemble::ComponentId;
using ensemble::Selection;

enum class HeadKind { pool_linear, conv, classifier };

inline HeadKind parse_head(std::string_view s) {
  if (s == "pool_linear") return HeadKind::pool_linear;
  if (s == "conv") return HeadKind::conv;
  if (s == "classifier") return HeadKind::classifier;
  throw Error(ErrorCode::invalid_argument, "unknown head '" + std::string(s) + "' (expected pool_linear, conv or classifier)");
}

inline const char* to_string(HeadKind h) {
  switch (h) {
    case HeadKind::pool_linear: return "pool_linear";
    case HeadKind::conv: return "conv";
    case HeadKind::classifier: return "classifier";
  }
  return "?";
}

// Per-module seeds are fixed offsets from the run seed.
inline constexpr uint64_t kHeadSeedOffset[] = {1, 2, 3};
inline constexpr uint64_t kEnsembleSeedOffset = 10;

struct RunConfig {
  fs::path corpus;
  fs::path features_dir;
  fs::path embedding_dir;
  std::vector<fs::path> scalar_tables;
  fs::path output_dir = "out";
  fs::path model_dir;
  fs::path answer_file;
  uint64_t seed = 42;
  Backend backend = Backend::gbm;
  Selection selection = ensemble::parse_selection("ABCD");
  bool clip = false;
  bool standardize = true;
  double max_seconds = kDefaultMaxSeconds;
  double frames_per_second = kDefaultFramesPerSecond;
  HeadKind head = HeadKind::pool_linear;
  Split split = Split::test;
  std::string label_name = "synthetic";
  nn::TrainConfig train;
  gbm::GbmParams gbm;
  std::vector<Selection> ablation = ensemble::reference_combinations();

  fs::path bundle_dir() const { return model_dir.empty() ? output_dir / "ensemble" : model_dir; }
  fs::path answer_path() const {
    return answer_file.empty() ? output_dir / ("answer_" + std::string(mosforge::to_string(split)) + ".csv") : answer_file;
  }
};

/// Relative paths resolve against the config file's directory.
inline RunConfig load_config(const fs::path& path) {
  RunConfig c;
  nlohmann::json j = ensemble::read_json_file(path);
  const fs::path base = path.parent_path();
  auto p = [&](const std::string& key) -> fs::path {
    if (!j.contains(key)) return {};
    fs::path v = j[key].get<std::string>();
    return v.is_absolute() ? v : base / v;
  };
  try {
    c.corpus = p("corpus");
    c.features_dir = p("features_dir");
    c.embedding_dir = p("embedding_dir");
    if (j.contains("output_dir")) c.output_dir = p("output_dir");
    else c.output_dir = base / "out";
    c.model_dir = p("model_dir");
    c.answer_file = p("answer_file");
    for (const auto& t : j.value("scalar_tables", nlohmann::json::array())) {
      fs::path v = t.get<std::string>();
      c.scalar_tables.push_back(v.is_absolute() ? v : base / v);
    }
    c.seed = j.value("seed", c.seed);
    if (j.contains("backend")) c.backend = ensemble::parse_backend(j["backend"].get<std::string>());
    if (j.contains("components")) c.selection = ensemble::parse_selection(j["components"].get<std::string>());
    c.clip = j.value("clip", c.clip);
    c.standardize = j.value("standardize", c.standardize);
    c.max_seconds = j.value("max_seconds", c.max_seconds);
    c.frames_per_second = j.value("frames_per_second", c.frames_per_second);
    if (j.contains("head")) c.head = parse_head(j["head"].get<std::string>());
    if (j.contains("split")) {
      auto s = parse_split(j["split"].get<std::string>());
      if (!s) throw Error(ErrorCode::invalid_argument, "unknown split in config");
      c.split = *s;
    }
    c.label_name = j.value("label_name", c.label_name);
    if (j.contains("train")) c.train = nn::train_config_from_json(j["train"], c.train);
    if (j.contains("gbm")) c.gbm = gbm::params_from_json(j["gbm"], c.gbm);
    if (j.contains("ablation")) {
      c.ablation.clear();
      for (const auto& s : j["ablation"]) c.ablation.push_back(ensemble::parse_selection(s.get<std::string>()));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse_error, path.string() + ": " + e.what());
  }
  if (c.embedding_dir.empty()) c.embedding_dir = c.features_dir;
  if (c.corpus.empty()) throw Error(ErrorCode::invalid_argument, "config lacks 'corpus'");
  if (!fs::exists(c.corpus)) throw Error(ErrorCode::io_error, "corpus not found: " + c.corpus.string());
  for (const auto& t : c.scalar_tables) {
    if (!fs::exists(t)) throw Error(ErrorCode::io_error, "scalar table not found: " + t.string());
  }
  return c;
}

inline Corpus load_corpus(const RunConfig& c, Diagnostics* diagnostics = nullptr) {
  std::ifstream in(c.corpus);
  if (!in) throw Error(ErrorCode::io_error, "cannot open " + c.corpus.string());
  return parse_metadata(in, diagnostics);
}

inline ScalarIndex load_scalars(const RunConfig& c) {
  ScalarIndex idx;
  for (const auto& t : c.scalar_tables) {
    std::ifstream in(t);
    if (!in) throw Error(ErrorCode::io_error, "cannot open " + t.string());
    try {
      idx.add(read_scalar_table(in));
    } catch (const Error& e) {
      throw Error(e.code(), t.string() + ": " + e.what());
    }
  }
  return idx;
}

inline std::string id_list(const std::vector<std::string>& ids) {
  std::string s;
  for (const auto& id : ids) s += " " + id;
  return s;
}

/// Loads and truncates the feature files of the given utterances.
inline std::vector<FeatureMatrix> load_features(const RunConfig& c, const fs::path& dir,
                                                const std::vector<const UtteranceRecord*>& recs) {
  std::vector<std::string> missing;
  for (const auto* r : recs) {
    if (!fs::exists(dir / (r->utterance_id + ".mosf"))) missing.push_back(r->utterance_id);
  }
  if (!missing.empty()) {
    throw Error(ErrorCode::missing_data, "missing feature files for " + std::to_string(missing.size()) + " utterance(s):" + id_list(missing));
  }
  std::vector<FeatureMatrix> out;
  for (const auto* r : recs) {
    auto m = load_feature_file(dir / (r->utterance_id + ".mosf"));
    if (m.utterance_id != r->utterance_id) {
      throw Error(ErrorCode::invalid_argument, "feature file for " + r->utterance_id + " declares id " + m.utterance_id);
    }
    out.push_back(truncate_frames(m, c.max_seconds, c.frames_per_second));
  }
  return out;
}

/// Component vectors for one split, with only the selected blocks filled.
inline ensemble::LabeledSet build_split(const RunConfig& c, const Corpus& corpus, Split split, const Selection& sel,
                                        const ScalarIndex& scalars) {
  auto recs = corpus.in_split(split);
  ensemble::LabeledSet set;
  std::vector<FeatureMatrix> feats;
  if (sel.count(ComponentId::B_baseline_embedding)) feats = load_features(c, c.embedding_dir, recs);
  std::vector<std::string> missing;
  for (size_t i = 0; i < recs.size(); ++i) {
    const auto& id = recs[i]->utterance_id;
    ensemble::ComponentVector v;
    v.utterance_id = id;
    if (sel.count(ComponentId::A_asr_confidence)) {
      const auto* s = scalars.find(std::string(kAsrConfidence), id);
      if (s && !s->missing) v.blocks[ComponentId::A_asr_confidence] = {s->value, 0.0};
      else v.blocks[ComponentId::A_asr_confidence] = {0.0, 1.0};
    }
    if (sel.count(ComponentId::B_baseline_embedding)) v.blocks[ComponentId::B_baseline_embedding] = mean_pool(feats[i]);
    for (auto [comp, name] : {std::pair{ComponentId::C_ft_linear, "pred_C"}, std::pair{ComponentId::D_ft_conv, "pred_D"}}) {
      if (!sel.count(comp)) continue;
      const auto* s = scalars.find(name, id);
      if (!s || s->missing) {
        missing.push_back(std::string(name) + ":" + id);
        continue;
      }
      v.blocks[comp] = {s->value};
    }
    set.vectors.push_back(std::move(v));
    set.targets.push_back(recs[i]->mos);
  }
  if (!missing.empty()) {
    throw Error(ErrorCode::missing_data, "missing component predictions for " + std::to_string(missing.size()) + " utterance(s):" + id_list(missing));
  }
  return set;
}

inline ensemble::EnsembleParams ensemble_params(const RunConfig& c) {
  ensemble::EnsembleParams p;
  p.backend = c.backend;
  p.gbm = c.gbm;
  p.neural = c.train;
  p.standardize = c.standardize;
  p.clip = c.clip;
  p.seed = c.seed + kEnsembleSeedOffset;
  return p;
}

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io_error, "cannot write " + path.string());
  out << text;
}

// ---------------------------------------------------------------------------
// Commands

inline int cmd_validate(const RunConfig& c, std::ostream& out, std::ostream& err) {
  Diagnostics diags;
  Corpus corpus = load_corpus(c, &diags);
  nlohmann::json report;
  for (Split s : {Split::train, Split::dev, Split::test}) {
    report["splits"][mosforge::to_string(s)] = {{"utterances", corpus.in_split(s).size()}, {"systems", corpus.systems_in(s).size()}};
  }
  report["systems"] = corpus.systems().size();
  report["utterances"] = corpus.size();
  report["listener_count_anomalies"] = diags.size();
  size_t single = 0;
  for (Split s : {Split::dev, Split::test}) {
    for (const auto& a : aggregate_by_system(corpus.truth(s), corpus, s)) single += a.n_utterances == 1;
  }
  report["single_utterance_systems"] = single;
  for (size_t i = 0; i < diags.size() && i < 10; ++i) err << "note: " << diags[i] << '\n';
  if (diags.size() > 10) err << "note: ... " << diags.size() - 10 << " more listener-count notes\n";
  if (corpus.in_split(Split::dev).empty()) err << "warning: dev split is empty; early stopping unavailable\n";
  out << report.dump(2) << '\n';
  return 0;
}

inline int cmd_train_head(const RunConfig& c, std::ostream& out, std::ostream&) {
  Corpus corpus = load_corpus(c);
  if (c.features_dir.empty()) throw Error(ErrorCode::invalid_argument, "config lacks 'features_dir'");
  const bool classifier = c.head == HeadKind::classifier;
  ScalarIndex scalars;
  if (classifier) scalars = load_scalars(c);

  auto train_recs = corpus.in_split(Split::train);
  auto dev_recs = corpus.in_split(Split::dev);
  if (train_recs.empty() || dev_recs.empty()) throw Error(ErrorCode::invalid_argument, "train-head needs non-empty train and dev splits");

  auto to_input = [&](const FeatureMatrix& m) { return c.head == HeadKind::conv ? nn::image_tensor(m) : nn::frames_tensor(m); };
  auto target_of = [&](const UtteranceRecord& r) {
    if (!classifier) return r.mos;
    const auto* s = scalars.find(c.label_name, r.utterance_id);
    if (!s || s->missing || (s->value != 0.0 && s->value != 1.0)) {
      throw Error(ErrorCode::missing_data, "no 0/1 '" + c.label_name + "' label for " + r.utterance_id);
    }
    return s->value;
  };
  auto samples = [&](const std::vector<const UtteranceRecord*>& recs) {
    auto feats = load_features(c, c.features_dir, recs);
    std::vector<nn::Sample> out;
    for (size_t i = 0; i < recs.size(); ++i) out.push_back({to_input(feats[i]), nn::Tensor::scalar(target_of(*recs[i]))});
    return std::pair{std::move(out), feats.empty() ? size_t{0} : feats.front().dim};
  };
  auto [train_set, dim] = samples(train_recs);
  auto [dev_set, dev_dim] = samples(dev_recs);
  if (dim != dev_dim) throw Error(ErrorCode::shape_mismatch, "train and dev embeddings differ in dim");

  nn::Model model = c.head == HeadKind::pool_linear ? nn::make_pool_linear_head(dim)
                    : c.head == HeadKind::conv      ? nn::make_conv_head(dim)
                                                    : nn::make_binary_classifier(dim);
  const uint64_t seed = c.seed + kHeadSeedOffset[static_cast<int>(c.head)];
  nn::initialize_parameters(model, seed);
  auto cfg = c.train;
  cfg.seed = seed;
  const auto loss = classifier ? nn::LossKind::binary_cross_entropy : nn::LossKind::mse;
  auto trained = nn::train(std::move(model), train_set, dev_set, loss, cfg);

  fs::create_directories(c.output_dir);
  const std::string stem = std::string("head_") + to_string(c.head);
  const fs::path ckpt = c.output_dir / (stem + ".mosm");
  {
    std::ofstream f(ckpt, std::ios::binary);
    nn::write_model(trained.model, f);
  }
  write_text(c.output_dir / (stem + ".json"), nn::history_json(trained, cfg).dump(2) + "\n");

  // Predictions for every utterance become a scalar table for the ensemble.
  const std::string pred_name = c.head == HeadKind::pool_linear ? "pred_C" : c.head == HeadKind::conv ? "pred_D" : "p_" + c.label_name;
  std::vector<const UtteranceRecord*> all;
  for (const auto& r : corpus.records()) all.push_back(&r);
  auto feats = load_features(c, c.features_dir, all);
  std::vector<ScalarFeature> preds;
  std::set<std::string> seen;
  for (size_t i = 0; i < all.size(); ++i) {
    if (!seen.insert(all[i]->utterance_id).second) continue;
    preds.push_back({all[i]->utterance_id, pred_name, nn::forward(trained.model, to_input(feats[i])).data[0], false});
  }
  {
    std::ofstream f(c.output_dir / (pred_name + ".csv"));
    write_scalar_table(preds, f);
  }

  nlohmann::json summary = {{"head", to_string(c.head)},
                            {"checkpoint", ckpt.string()},
                            {"best_epoch", trained.best_epoch},
                            {"epochs_run", trained.history.size()},
                            {"best_dev_loss", trained.history[trained.best_epoch].dev_loss}};
  if (classifier) {
    size_t correct = 0;
    for (const auto& s : dev_set) correct += (nn::forward(trained.model, s.input).data[0] >= 0.5) == (s.target.data[0] == 1.0);
    summary["dev_accuracy"] = static_cast<double>(correct) / static_cast<double>(dev_set.size());
  } else {
    summary["best_dev_mse"] = trained.history[trained.best_epoch].dev_loss;
  }
  out << summary.dump(2) << '\n';
  return 0;
}

inline int cmd_train_ensemble(const RunConfig& c, std::ostream& out, std::ostream&) {
  Corpus corpus = load_corpus(c);
  auto scalars = load_scalars(c);
  auto train = build_split(c, corpus, Split::train, c.selection, scalars);
  auto dev = build_split(c, corpus, Split::dev, c.selection, scalars);
  auto model = ensemble::train_ensemble(train, dev, c.selection, ensemble_params(c));
  ensemble::save_bundle(model, c.bundle_dir());
  auto report = evaluate(ensemble::predict_ensemble(model, dev.vectors), corpus, Split::dev);
  nlohmann::json summary = {{"bundle", c.bundle_dir().string()},
                            {"selection", ensemble::selection_label(c.selection)},
                            {"backend", ensemble::to_string(c.backend)},
                            {"dev", to_json(report)}};
  out << summary.dump(2) << '\n';
  return 0;
}

inline int cmd_predict(const RunConfig& c, std::ostream& out, std::ostream&) {
  Corpus corpus = load_corpus(c);
  auto scalars = load_scalars(c);
  auto model = ensemble::load_bundle(c.bundle_dir());
  if (c.clip) model.clip = true;
  auto set = build_split(c, corpus, c.split, model.selection, scalars);
  auto preds = ensemble::predict_ensemble(model, set.vectors);
  std::ostringstream buf;
  write_answer_file(preds, buf);
  write_text(c.answer_path(), buf.str());
  nlohmann::json summary = {{"answer_file", c.answer_path().string()}, {"split", mosforge::to_string(c.split)}, {"predictions", preds.size()}};
  out << summary.dump(2) << '\n';
  return 0;
}

inline int cmd_evaluate(const RunConfig& c, std::ostream& out, std::ostream&) {
  Corpus corpus = load_corpus(c);
  std::ifstream in(c.answer_path());
  if (!in) throw Error(ErrorCode::io_error, "cannot open answer file " + c.answer_path().string());
  auto preds = read_answer_file(in);
  auto report = evaluate(preds, corpus, c.split, c.clip);
  out << to_json(report).dump(2) << '\n';
  return 0;
}

inline int cmd_ablate(const RunConfig& c, std::ostream& out, std::ostream&) {
  Corpus corpus = load_corpus(c);
  auto scalars = load_scalars(c);
  Selection needed;
  for (const auto& s : c.ablation) needed.insert(s.begin(), s.end());
  auto train = build_split(c, corpus, Split::train, needed, scalars);
  auto dev = build_split(c, corpus, Split::dev, needed, scalars);
  std::optional<ensemble::LabeledSet> test;
  if (!corpus.in_split(Split::test).empty()) test = build_split(c, corpus, Split::test, needed, scalars);
  auto result = ensemble::run_ablation(train, dev, c.ablation, ensemble_params(c), corpus, test ? &*test : nullptr);

  std::ostringstream dev_csv;
  ensemble::write_ablation_csv(result.dev, dev_csv);
  write_text(c.output_dir / "ablation_dev.csv", dev_csv.str());
  if (test) {
    std::ostringstream test_csv;
    ensemble::write_ablation_csv(result.test, test_csv);
    write_text(c.output_dir / "ablation_test.csv", test_csv.str());
  }
  out << dev_csv.str();
  return 0;
}

inline int cmd_synth(const std::string& kind, const fs::path& dir, uint64_t seed, std::ostream& out) {
  if (kind == "toy") {
    synthetic::ToyOptions opt;
    opt.seed = seed;
    synthetic::write_toy_workspace(dir, opt);
  } else if (kind == "voicemos") {
    synthetic::write_voicemos_like_workspace(dir, seed);
  } else {
    throw Error(ErrorCode::invalid_argument, "unknown synth kind '" + kind + "' (expected toy or voicemos)");
  }
  out << (dir / "config.json").string() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

/// Entry point; `args` excludes the program name. Returns the exit code.
inline int run(std::vector<std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"MOS prediction toolkit: ensemble training, prediction and challenge-style evaluation", "mosforge"};
  app.require_subcommand(1);

  std::string config_path, backend, components, head, split, answer, out_dir, model_dir;
  uint64_t seed = 0;
  bool clip = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON run config")->required();
    sub->add_option("--seed", seed, "override the run seed");
    sub->add_option("--backend", backend, "gbm or neural");
    sub->add_option("--components", components, "component selection, e.g. A,B,C,D");
    sub->add_flag("--clip", clip, "clip predictions to [1,5]");
    sub->add_option("--split", split, "train, dev or test");
    sub->add_option("--out", out_dir, "override output_dir");
    sub->add_option("--model-dir", model_dir, "ensemble bundle directory");
    sub->add_option("--answer", answer, "answer file path");
  };
  auto* validate = app.add_subcommand("validate", "check corpus metadata and report split counts");
  auto* train_head = app.add_subcommand("train-head", "train a regression head or the natural/synthetic classifier");
  auto* train_ens = app.add_subcommand("train-ensemble", "train the expert ensemble");
  auto* predict = app.add_subcommand("predict", "write an answer file from a trained ensemble");
  auto* evaluate_cmd = app.add_subcommand("evaluate", "score an answer file");
  auto* ablate = app.add_subcommand("ablate", "run the component ablation grid");
  for (auto* sub : {validate, train_head, train_ens, predict, evaluate_cmd, ablate}) add_common(sub);
  train_head->add_option("--head", head, "pool_linear, conv or classifier");

  std::string synth_kind = "toy", synth_out;
  uint64_t synth_seed = 11;
  auto* synth = app.add_subcommand("synth", "write a synthetic workspace");
  synth->add_option("--kind", synth_kind, "toy or voicemos");
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--seed", synth_seed, "generator seed");

  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (synth->parsed()) return cmd_synth(synth_kind, synth_out, synth_seed, out);

    RunConfig c = load_config(config_path);
    CLI::App* sub = app.get_subcommands().front();
    if (sub->count("--seed")) c.seed = seed;
    if (!backend.empty()) c.backend = ensemble::parse_backend(backend);
    if (!components.empty()) c.selection = ensemble::parse_selection(components);
    if (clip) c.clip = true;
    if (!split.empty()) {
      auto s = parse_split(split);
      if (!s) throw Error(ErrorCode::invalid_argument, "unknown split '" + split + "'");
      c.split = *s;
    }
    if (!out_dir.empty()) c.output_dir = out_dir;
    if (!model_dir.empty()) c.model_dir = model_dir;
    if (!answer.empty()) c.answer_file = answer;
    if (!head.empty()) c.head = parse_head(head);

    if (sub == validate) return cmd_validate(c, out, err);
    if (sub == train_head) return cmd_train_head(c, out, err);
    if (sub == train_ens) return cmd_train_ensemble(c, out, err);
    if (sub == predict) return cmd_predict(c, out, err);
    if (sub == evaluate_cmd) return cmd_evaluate(c, out, err);
    if (sub == ablate) return cmd_ablate(c, out, err);
  } catch (const Error& e) {
    err << "error (" << to_string(e.code()) << "): " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace mosforge::cli
