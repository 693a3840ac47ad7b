#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mosforge/common.hpp"
#include "mosforge/corpus.hpp"

namespace mosforge {

/// 1-based ranks; tied values share the average of the ranks they span.
inline std::vector<double> ranks_with_ties(std::span<const double> values) {
  if (values.empty()) throw Error(ErrorCode::invalid_argument, "ranks of empty vector");
  for (double v : values) {
    if (std::isnan(v)) throw Error(ErrorCode::non_finite, "NaN in rank input");
  }
  std::vector<size_t> order(values.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return values[a] < values[b]; });

  std::vector<double> ranks(values.size());
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i + 1;
    while (j < order.size() && values[order[j]] == values[order[i]]) ++j;
    // positions i..j-1 hold ranks i+1..j
    const double avg = 0.5 * static_cast<double>(i + 1 + j);
    for (size_t k = i; k < j; ++k) ranks[order[k]] = avg;
    i = j;
  }
  return ranks;
}

inline double pearson(std::span<const double> a, std::span<const double> b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) throw Error(ErrorCode::undefined_correlation, "undefined correlation: constant vector");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

/// Spearman rank correlation: Pearson correlation of tie-averaged ranks.
inline double srcc(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::shape_mismatch, "length mismatch: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  if (a.size() < 2) throw Error(ErrorCode::undefined_correlation, "undefined correlation: fewer than 2 values");
  auto ra = ranks_with_ties(a);
  auto rb = ranks_with_ties(b);
  return pearson(ra, rb);
}

inline double mse(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::shape_mismatch, "length mismatch: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  if (a.empty()) throw Error(ErrorCode::invalid_argument, "mse of empty vectors");
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

struct EvalReport {
  double system_srcc = 0.0;
  double system_mse = 0.0;
  double utterance_srcc = 0.0;
  double utterance_mse = 0.0;
  size_t n_utterances = 0;
  size_t n_systems = 0;

  bool operator==(const EvalReport&) const = default;
};

inline nlohmann::json to_json(const EvalReport& r) {
  return nlohmann::json{{"system_srcc", r.system_srcc},     {"system_mse", r.system_mse},
                        {"utterance_srcc", r.utterance_srcc}, {"utterance_mse", r.utterance_mse},
                        {"n_utterances", r.n_utterances},   {"n_systems", r.n_systems}};
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.system_srcc = j.at("system_srcc").get<double>();
  r.system_mse = j.at("system_mse").get<double>();
  r.utterance_srcc = j.at("utterance_srcc").get<double>();
  r.utterance_mse = j.at("utterance_mse").get<double>();
  r.n_utterances = j.at("n_utterances").get<size_t>();
  r.n_systems = j.at("n_systems").get<size_t>();
  return r;
}

inline double clip_mos(double v) { return std::clamp(v, kMinMos, kMaxMos); }

/// The four challenge measures for one split. Predictions must cover exactly
/// the split's utterances. With `clip`, predictions are clamped to [1,5]
/// before scoring.
inline EvalReport evaluate(const std::map<std::string, double>& predictions, const Corpus& corpus, Split split,
                           bool clip = false) {
  std::map<std::string, double> preds = predictions;
  if (clip) {
    for (auto& [_, v] : preds) v = clip_mos(v);
  }
  const auto truth = corpus.truth(split);
  auto pred_sys = aggregate_by_system(preds, corpus, split);
  auto true_sys = aggregate_by_system(truth, corpus, split);

  std::vector<double> pu, tu;
  for (const auto& [id, t] : truth) {
    pu.push_back(preds.at(id));
    tu.push_back(t);
  }
  std::vector<double> ps, ts;
  for (size_t i = 0; i < pred_sys.size(); ++i) {
    ps.push_back(pred_sys[i].mean_mos);
    ts.push_back(true_sys[i].mean_mos);
  }

  EvalReport r;
  r.utterance_srcc = srcc(pu, tu);
  r.utterance_mse = mse(pu, tu);
  r.system_srcc = srcc(ps, ts);
  r.system_mse = mse(ps, ts);
  r.n_utterances = pu.size();
  r.n_systems = ps.size();
  return r;
}

/// SRCC between per-system mean scores of two splits, over the systems the
/// two splits share.
inline double cross_split_system_srcc(const std::map<std::string, double>& scores_a,
                                      const std::map<std::string, double>& scores_b, const Corpus& corpus, Split split_a,
                                      Split split_b) {
  auto agg_a = aggregate_by_system(scores_a, corpus, split_a);
  auto agg_b = aggregate_by_system(scores_b, corpus, split_b);
  std::map<std::string, double> mb;
  for (const auto& s : agg_b) mb.emplace(s.system_id, s.mean_mos);
  std::vector<double> va, vb;
  for (const auto& s : agg_a) {
    if (auto it = mb.find(s.system_id); it != mb.end()) {
      va.push_back(s.mean_mos);
      vb.push_back(it->second);
    }
  }
  if (va.size() < 2) {
    throw Error(ErrorCode::invalid_argument, "splits share " + std::to_string(va.size()) + " system(s); need at least 2");
  }
  return srcc(va, vb);
}

enum class RankKey { system_srcc, system_mse, utterance_srcc, utterance_mse };

struct RankedSubmission {
  std::string team_id;
  EvalReport report;
};

/// Leaderboard order: SRCC keys descending, MSE keys ascending, ties by team id.
inline std::vector<RankedSubmission> rank_submissions(std::vector<RankedSubmission> reports, RankKey key) {
  auto metric = [key](const EvalReport& r) {
    switch (key) {
      case RankKey::system_srcc: return r.system_srcc;
      case RankKey::system_mse: return r.system_mse;
      case RankKey::utterance_srcc: return r.utterance_srcc;
      case RankKey::utterance_mse: return r.utterance_mse;
    }
    return 0.0;
  };
  const bool descending = key == RankKey::system_srcc || key == RankKey::utterance_srcc;
  std::stable_sort(reports.begin(), reports.end(), [&](const RankedSubmission& a, const RankedSubmission& b) {
    const double ma = metric(a.report), mb = metric(b.report);
    if (ma != mb) return descending ? ma > mb : ma < mb;
    return a.team_id < b.team_id;
  });
  return reports;
}

// ---------------------------------------------------------------------------
// Answer file: `utterance_id,predicted_mos` per line, no header.

inline std::map<std::string, double> read_answer_file(std::istream& in) {
  std::map<std::string, double> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto where = "line " + std::to_string(line_no) + ": ";
    auto cols = split(line, ',');
    if (cols.size() != 2) throw Error(ErrorCode::parse_error, where + "expected 2 columns");
    double v = 0.0;
    if (!parse_double(cols[1], v) || !std::isfinite(v)) throw Error(ErrorCode::parse_error, where + "bad predicted_mos");
    std::string id(trim(cols[0]));
    if (!out.emplace(id, v).second) throw Error(ErrorCode::duplicate_id, where + "duplicate utterance_id " + id);
  }
  return out;
}

inline void write_answer_file(const std::map<std::string, double>& predictions, std::ostream& out) {
  for (const auto& [id, v] : predictions) out << id << ',' << format_double(v) << '\n';
}

}  // namespace mosforge
