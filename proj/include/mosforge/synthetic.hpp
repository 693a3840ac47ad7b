#pragma once

// Synthetic corpora and fixtures for tests, demos and the `synth` command.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mosforge/common.hpp"
#include "mosforge/corpus.hpp"
#include "mosforge/ensemble.hpp"
#include "mosforge/featureio.hpp"

namespace mosforge::synthetic {

inline std::string system_name(size_t s) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "sys%03zu", s);
  return buf;
}

inline std::string utterance_name(size_t s, Split split, size_t k) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "sys%03zu-%s%04zu", s, to_string(split), k);
  return buf;
}

/// Eight listener ratings around a system's latent quality.
inline std::vector<int> draw_ratings(Rng& rng, double quality) {
  std::vector<int> r;
  for (size_t i = 0; i < kExpectedListeners; ++i) {
    const double v = std::round(quality + 0.8 * rng.normal());
    r.push_back(static_cast<int>(std::clamp(v, 1.0, 5.0)));
  }
  return r;
}

/// Spread `total` utterances over `systems` (each gets at least `min_each`).
inline std::vector<size_t> spread(size_t total, size_t systems, size_t min_each = 1) {
  std::vector<size_t> n(systems, min_each);
  size_t left = total - systems * min_each;
  for (size_t i = 0; left > 0; i = (i + 1) % systems, --left) ++n[i];
  return n;
}

/// Corpus with the main-track split shape: train 4974 utterances / 175
/// systems, dev 1066 / 181 (6 systems unseen in train, 222 utterances),
/// test 1066 / 187 (12 unseen in train, 234 utterances, 6 of those shared
/// with dev). One test-only system has a single utterance. Each utterance
/// carries eight listener ratings.
inline Corpus voicemos_like_corpus(uint64_t seed = 42) {
  constexpr size_t kTrainSystems = 175, kDevOnly = 6, kTestOnly = 6;
  Rng rng(seed);
  std::vector<double> quality(kTrainSystems + kDevOnly + kTestOnly);
  for (double& q : quality) q = rng.uniform(1.5, 4.6);

  std::vector<UtteranceRecord> records;
  auto emit = [&](size_t sys, Split split, size_t count) {
    for (size_t k = 0; k < count; ++k) {
      UtteranceRecord r;
      r.utterance_id = utterance_name(sys, split, k);
      r.system_id = system_name(sys);
      r.split = split;
      r.listener_ratings = draw_ratings(rng, quality[sys]);
      r.mos = average_listener_ratings(r.listener_ratings);
      records.push_back(std::move(r));
    }
  };

  auto train_n = spread(4974, kTrainSystems);
  for (size_t s = 0; s < kTrainSystems; ++s) emit(s, Split::train, train_n[s]);

  auto dev_seen = spread(1066 - 222, kTrainSystems);
  auto dev_new = spread(222, kDevOnly);
  for (size_t s = 0; s < kTrainSystems; ++s) emit(s, Split::dev, dev_seen[s]);
  for (size_t s = 0; s < kDevOnly; ++s) emit(kTrainSystems + s, Split::dev, dev_new[s]);

  auto test_seen = spread(1066 - 234, kTrainSystems);
  std::vector<size_t> test_new = spread(233, kDevOnly + kTestOnly - 1);
  test_new.push_back(1);  // single-utterance system
  for (size_t s = 0; s < kTrainSystems; ++s) emit(s, Split::test, test_seen[s]);
  for (size_t s = 0; s < kDevOnly + kTestOnly; ++s) emit(kTrainSystems + s, Split::test, test_new[s]);
  return Corpus(std::move(records));
}

// ---------------------------------------------------------------------------
// Complementary-component fixture: component C is accurate on even systems
// and noisy on odd ones, D the reverse. Block B carries the parity of the
// system in its first coordinate; A is a weak confidence signal with a few
// missing values.

struct ComplementaryOptions {
  size_t n_systems = 40;
  size_t train_per_system = 16;
  size_t dev_per_system = 8;
  size_t test_per_system = 8;
  size_t embedding_dim = 4;
  double accurate_sigma = 0.15;
  double noisy_sigma = 0.9;
  double utterance_sigma = 0.35;
  uint64_t seed = 7;
};

struct ComplementaryFixture {
  Corpus corpus;
  ensemble::LabeledSet train, dev, test;
};

inline ensemble::LabeledSet labeled_split(const std::vector<ensemble::ComponentVector>& all, const Corpus& corpus, Split split) {
  ensemble::LabeledSet out;
  for (const auto& v : all) {
    if (const auto* r = corpus.find(split, v.utterance_id)) {
      out.vectors.push_back(v);
      out.targets.push_back(r->mos);
    }
  }
  return out;
}

inline ComplementaryFixture complementary_fixture(const ComplementaryOptions& opt = {}) {
  using ensemble::ComponentId;
  Rng rng(opt.seed);
  std::vector<double> quality(opt.n_systems);
  for (double& q : quality) q = rng.uniform(1.6, 4.4);

  std::vector<UtteranceRecord> records;
  ComplementaryFixture fx;
  std::vector<ensemble::ComponentVector> vecs[3];
  const Split splits[3] = {Split::train, Split::dev, Split::test};
  const size_t per[3] = {opt.train_per_system, opt.dev_per_system, opt.test_per_system};
  for (size_t si = 0; si < 3; ++si) {
    for (size_t s = 0; s < opt.n_systems; ++s) {
      const bool even = s % 2 == 0;
      for (size_t k = 0; k < per[si]; ++k) {
        UtteranceRecord r;
        r.utterance_id = utterance_name(s, splits[si], k);
        r.system_id = system_name(s);
        r.split = splits[si];
        r.mos = std::clamp(quality[s] + opt.utterance_sigma * rng.normal(), kMinMos, kMaxMos);

        ensemble::ComponentVector v;
        v.utterance_id = r.utterance_id;
        const bool missing = rng.uniform() < 0.05;
        const double conf = std::clamp(0.25 + 0.15 * (r.mos - 1.0) + 0.08 * rng.normal(), 0.0, 1.0);
        v.blocks[ComponentId::A_asr_confidence] = {missing ? 0.0 : conf, missing ? 1.0 : 0.0};
        std::vector<double> emb(opt.embedding_dim);
        emb[0] = (even ? 1.0 : -1.0) + 0.1 * rng.normal();
        for (size_t d = 1; d < emb.size(); ++d) emb[d] = rng.normal();
        v.blocks[ComponentId::B_baseline_embedding] = emb;
        const double sc = even ? opt.accurate_sigma : opt.noisy_sigma;
        const double sd = even ? opt.noisy_sigma : opt.accurate_sigma;
        v.blocks[ComponentId::C_ft_linear] = {r.mos + sc * rng.normal()};
        v.blocks[ComponentId::D_ft_conv] = {r.mos + sd * rng.normal()};
        vecs[si].push_back(std::move(v));
        records.push_back(std::move(r));
      }
    }
  }
  fx.corpus = Corpus(std::move(records));
  fx.train = labeled_split(vecs[0], fx.corpus, Split::train);
  fx.dev = labeled_split(vecs[1], fx.corpus, Split::dev);
  fx.test = labeled_split(vecs[2], fx.corpus, Split::test);
  return fx;
}

// ---------------------------------------------------------------------------
// Toy on-disk workspace for the command-line tool: metadata, framewise
// feature files, ASR confidence table, natural/synthetic labels, component
// predictions and a config file.

struct ToyOptions {
  size_t n_systems = 12;
  size_t train_per_system = 10;
  size_t dev_per_system = 4;
  size_t test_per_system = 4;
  size_t dim = 8;
  size_t min_frames = 12;
  size_t max_frames = 60;
  // Noise between pooled features and MOS; 0 makes MOS exactly linear in
  // the pooled embedding.
  double feature_noise = 0.2;
  uint64_t seed = 11;
};

inline void write_toy_workspace(const std::filesystem::path& dir, const ToyOptions& opt = {}) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "features");
  Rng rng(opt.seed);
  std::vector<double> quality(opt.n_systems);
  std::vector<bool> natural(opt.n_systems);
  for (size_t s = 0; s < opt.n_systems; ++s) {
    natural[s] = s % 4 == 0;
    quality[s] = natural[s] ? rng.uniform(3.9, 4.6) : rng.uniform(1.5, 4.0);
  }

  std::vector<UtteranceRecord> records;
  std::vector<ScalarFeature> asr, labels, components;
  const Split splits[3] = {Split::train, Split::dev, Split::test};
  const size_t per[3] = {opt.train_per_system, opt.dev_per_system, opt.test_per_system};
  for (size_t si = 0; si < 3; ++si) {
    for (size_t s = 0; s < opt.n_systems; ++s) {
      for (size_t k = 0; k < per[si]; ++k) {
        UtteranceRecord r;
        r.utterance_id = utterance_name(s, splits[si], k);
        r.system_id = system_name(s);
        r.split = splits[si];
        r.mos = std::clamp(quality[s] + 0.3 * rng.normal(), kMinMos, kMaxMos);
        r.mos = std::round(r.mos * 1e6) / 1e6;

        // Pooled embedding; coordinate 0 carries MOS, 1 the natural/synthetic class.
        std::vector<double> pooled(opt.dim);
        pooled[0] = (r.mos - 3.0) / 2.0 + opt.feature_noise * rng.normal();
        pooled[1] = (natural[s] ? 1.5 : -1.5) + 0.3 * rng.normal();
        for (size_t d = 2; d < opt.dim; ++d) pooled[d] = rng.normal();
        const size_t frames = opt.min_frames + static_cast<size_t>(rng.below(opt.max_frames - opt.min_frames + 1));
        FeatureMatrix m{r.utterance_id, frames, opt.dim, std::vector<double>(frames * opt.dim)};
        for (size_t d = 0; d < opt.dim; ++d) {
          std::vector<double> jitter(frames);
          double mean = 0.0;
          for (double& j : jitter) {
            j = 0.5 * rng.normal();
            mean += j;
          }
          mean /= static_cast<double>(frames);
          for (size_t f = 0; f < frames; ++f) {
            m.values[f * opt.dim + d] = static_cast<double>(static_cast<float>(pooled[d] + jitter[f] - mean));
          }
        }
        save_feature_file(m, dir / "features" / (r.utterance_id + ".mosf"));

        const bool missing = rng.uniform() < 0.05;
        const double conf = std::clamp(0.25 + 0.15 * (r.mos - 1.0) + 0.08 * rng.normal(), 0.0, 1.0);
        asr.push_back({r.utterance_id, std::string(kAsrConfidence), missing ? 0.0 : conf, missing});
        labels.push_back({r.utterance_id, "synthetic", natural[s] ? 0.0 : 1.0, false});
        const bool even = s % 2 == 0;
        components.push_back({r.utterance_id, "pred_C", r.mos + (even ? 0.15 : 0.9) * rng.normal(), false});
        components.push_back({r.utterance_id, "pred_D", r.mos + (even ? 0.9 : 0.15) * rng.normal(), false});
        records.push_back(std::move(r));
      }
    }
  }
  {
    std::ofstream out(dir / "metadata.csv");
    write_metadata(Corpus(std::move(records)), out);
  }
  {
    std::ofstream out(dir / "asr.csv");
    write_scalar_table(asr, out);
  }
  {
    std::ofstream out(dir / "labels.csv");
    write_scalar_table(labels, out);
  }
  {
    std::ofstream out(dir / "components.csv");
    write_scalar_table(components, out);
  }
  nlohmann::json config = {
      {"corpus", "metadata.csv"},
      {"features_dir", "features"},
      {"scalar_tables", {"asr.csv", "labels.csv", "components.csv"}},
      {"output_dir", "out"},
      {"seed", 42},
      {"backend", "gbm"},
      {"components", "A,B,C,D"},
      {"clip", false},
      {"max_seconds", kDefaultMaxSeconds},
      {"frames_per_second", kDefaultFramesPerSecond},
      {"train", {{"learning_rate", 0.05}, {"batch_size", 16}, {"max_epochs", 300}, {"patience", 20}}},
      {"gbm", {{"n_trees", 200}, {"learning_rate", 0.05}, {"max_leaves", 15}, {"min_samples_leaf", 5}}},
  };
  std::ofstream(dir / "config.json") << config.dump(2) << '\n';
}

/// Metadata-only workspace with the main-track split shape.
inline void write_voicemos_like_workspace(const std::filesystem::path& dir, uint64_t seed = 42) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "metadata.csv");
    write_metadata(voicemos_like_corpus(seed), out);
  }
  nlohmann::json config = {{"corpus", "metadata.csv"}, {"output_dir", "out"}, {"seed", seed}};
  std::ofstream(dir / "config.json") << config.dump(2) << '\n';
}

}  // namespace mosforge::synthetic
