#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "mosforge/common.hpp"

namespace mosforge {

enum class Split { train, dev, test };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
  }
  return "?";
}

inline std::optional<Split> parse_split(std::string_view s) {
  s = trim(s);
  if (s == "train") return Split::train;
  if (s == "dev") return Split::dev;
  if (s == "test") return Split::test;
  return std::nullopt;
}

inline constexpr double kMinMos = 1.0;
inline constexpr double kMaxMos = 5.0;
inline constexpr size_t kExpectedListeners = 8;
inline constexpr double kRatingMeanTolerance = 1e-9;

struct UtteranceRecord {
  std::string utterance_id;
  std::string system_id;
  Split split = Split::train;
  std::vector<int> listener_ratings;
  double mos = 0.0;

  bool operator==(const UtteranceRecord&) const = default;
};

struct SystemAggregate {
  std::string system_id;
  size_t n_utterances = 0;
  double mean_mos = 0.0;

  bool operator==(const SystemAggregate&) const = default;
};

/// Arithmetic mean of listener ratings. A count other than eight is
/// reported through `diagnostics` but is not an error.
inline double average_listener_ratings(std::span<const int> ratings, Diagnostics* diagnostics = nullptr) {
  if (ratings.empty()) throw Error(ErrorCode::invalid_argument, "no ratings");
  long long sum = 0;
  for (int r : ratings) {
    if (r < 1 || r > 5) throw Error(ErrorCode::invalid_argument, "rating out of range 1..5: " + std::to_string(r));
    sum += r;
  }
  if (diagnostics && ratings.size() != kExpectedListeners) {
    diagnostics->push_back("expected " + std::to_string(kExpectedListeners) + " listener ratings, got " +
                           std::to_string(ratings.size()));
  }
  return static_cast<double>(sum) / static_cast<double>(ratings.size());
}

/// Immutable collection of rated utterances.
class Corpus {
 public:
  Corpus() = default;

  /// Validates invariants; throws on duplicates or out-of-range values.
  explicit Corpus(std::vector<UtteranceRecord> records) : records_(std::move(records)) {
    for (size_t i = 0; i < records_.size(); ++i) {
      const auto& r = records_[i];
      if (!(r.mos >= kMinMos && r.mos <= kMaxMos)) {
        throw Error(ErrorCode::invalid_argument, "mos out of [1,5] for " + r.utterance_id);
      }
      auto key = std::make_pair(r.split, r.utterance_id);
      if (!index_.emplace(key, i).second) {
        throw Error(ErrorCode::duplicate_id, "duplicate utterance_id " + r.utterance_id + " in split " + to_string(r.split));
      }
      systems_.insert(r.system_id);
    }
  }

  const std::vector<UtteranceRecord>& records() const { return records_; }
  const std::set<std::string>& systems() const { return systems_; }
  size_t size() const { return records_.size(); }

  const UtteranceRecord* find(Split split, const std::string& utterance_id) const {
    auto it = index_.find({split, utterance_id});
    return it == index_.end() ? nullptr : &records_[it->second];
  }

  std::vector<const UtteranceRecord*> in_split(Split split) const {
    std::vector<const UtteranceRecord*> out;
    for (const auto& r : records_) {
      if (r.split == split) out.push_back(&r);
    }
    return out;
  }

  std::set<std::string> systems_in(Split split) const {
    std::set<std::string> out;
    for (const auto& r : records_) {
      if (r.split == split) out.insert(r.system_id);
    }
    return out;
  }

  /// Ground-truth MOS keyed by utterance id for one split.
  std::map<std::string, double> truth(Split split) const {
    std::map<std::string, double> out;
    for (const auto& r : records_) {
      if (r.split == split) out.emplace(r.utterance_id, r.mos);
    }
    return out;
  }

  bool operator==(const Corpus& other) const { return records_ == other.records_; }

 private:
  std::vector<UtteranceRecord> records_;
  std::set<std::string> systems_;
  std::map<std::pair<Split, std::string>, size_t> index_;
};

inline constexpr std::string_view kMetadataHeader = "utterance_id,system_id,split,mos,ratings";

/// Parses the metadata CSV. Errors carry the 1-based line number.
inline Corpus parse_metadata(std::istream& in, Diagnostics* diagnostics = nullptr) {
  std::string line;
  size_t line_no = 0;
  auto fail = [&](ErrorCode code, const std::string& msg) -> Error {
    return Error(code, "line " + std::to_string(line_no) + ": " + msg);
  };

  if (!std::getline(in, line)) throw Error(ErrorCode::parse_error, "line 1: missing header");
  ++line_no;
  if (trim(line) != kMetadataHeader) {
    throw fail(ErrorCode::parse_error, "expected header '" + std::string(kMetadataHeader) + "'");
  }

  std::vector<UtteranceRecord> records;
  std::map<std::pair<Split, std::string>, size_t> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto cols = split(line, ',');
    if (cols.size() != 5) {
      throw fail(ErrorCode::parse_error, "expected 5 columns, got " + std::to_string(cols.size()));
    }
    UtteranceRecord rec;
    rec.utterance_id = std::string(trim(cols[0]));
    rec.system_id = std::string(trim(cols[1]));
    if (rec.utterance_id.empty()) throw fail(ErrorCode::parse_error, "empty utterance_id");
    if (rec.system_id.empty()) throw fail(ErrorCode::parse_error, "empty system_id");
    auto sp = parse_split(cols[2]);
    if (!sp) throw fail(ErrorCode::parse_error, "unknown split '" + std::string(trim(cols[2])) + "'");
    rec.split = *sp;

    auto ratings_field = trim(cols[4]);
    if (!ratings_field.empty()) {
      for (auto tok : split(ratings_field, '|')) {
        long long v = 0;
        if (!parse_int(tok, v)) throw fail(ErrorCode::parse_error, "non-numeric rating '" + std::string(trim(tok)) + "'");
        if (v < 1 || v > 5) throw fail(ErrorCode::parse_error, "rating out of range 1..5: " + std::to_string(v));
        rec.listener_ratings.push_back(static_cast<int>(v));
      }
    }

    auto mos_field = trim(cols[3]);
    std::optional<double> rating_mean;
    if (!rec.listener_ratings.empty()) {
      Diagnostics local;
      rating_mean = average_listener_ratings(rec.listener_ratings, &local);
      if (diagnostics) {
        for (auto& d : local) diagnostics->push_back("line " + std::to_string(line_no) + ": " + rec.utterance_id + ": " + d);
      }
    }
    if (mos_field.empty()) {
      if (!rating_mean) throw fail(ErrorCode::parse_error, "neither mos nor ratings given");
      rec.mos = *rating_mean;
    } else {
      if (!parse_double(mos_field, rec.mos)) throw fail(ErrorCode::parse_error, "non-numeric mos '" + std::string(mos_field) + "'");
      if (rating_mean && std::abs(*rating_mean - rec.mos) > kRatingMeanTolerance) {
        throw fail(ErrorCode::parse_error, "mos " + std::string(mos_field) + " disagrees with rating mean " + format_double(*rating_mean));
      }
    }
    if (!(rec.mos >= kMinMos && rec.mos <= kMaxMos)) throw fail(ErrorCode::parse_error, "mos out of [1,5]");

    auto key = std::make_pair(rec.split, rec.utterance_id);
    if (auto it = seen.find(key); it != seen.end()) {
      throw fail(ErrorCode::duplicate_id, "duplicate utterance_id " + rec.utterance_id + " (first seen on line " +
                                              std::to_string(it->second) + ")");
    }
    seen.emplace(key, line_no);
    records.push_back(std::move(rec));
  }
  return Corpus(std::move(records));
}

inline void write_metadata(const Corpus& corpus, std::ostream& out) {
  out << kMetadataHeader << '\n';
  for (const auto& r : corpus.records()) {
    out << r.utterance_id << ',' << r.system_id << ',' << to_string(r.split) << ',' << format_double(r.mos) << ',';
    for (size_t i = 0; i < r.listener_ratings.size(); ++i) {
      if (i) out << '|';
      out << r.listener_ratings[i];
    }
    out << '\n';
  }
}

/// Per-system mean of `scores` over the utterances of one split, ordered by
/// system id. Every utterance of the split must be scored, and no other.
inline std::vector<SystemAggregate> aggregate_by_system(const std::map<std::string, double>& scores, const Corpus& corpus,
                                                        Split split) {
  std::vector<std::string> missing;
  struct Acc {
    size_t n = 0;
    double sum = 0.0;
    double single = 0.0;
  };
  std::map<std::string, Acc> acc;
  size_t in_split = 0;
  // Accumulate in corpus order so the result does not depend on the
  // iteration order of the caller's container.
  for (const auto& r : corpus.records()) {
    if (r.split != split) continue;
    ++in_split;
    auto it = scores.find(r.utterance_id);
    if (it == scores.end()) {
      missing.push_back(r.utterance_id);
      continue;
    }
    auto& a = acc[r.system_id];
    if (a.n == 0) a.single = it->second;
    ++a.n;
    a.sum += it->second;
  }
  std::vector<std::string> unknown;
  if (scores.size() + missing.size() != in_split) {
    for (const auto& [id, _] : scores) {
      if (!corpus.find(split, id)) unknown.push_back(id);
    }
  }
  if (!missing.empty() || !unknown.empty()) {
    std::string msg;
    if (!missing.empty()) {
      msg = "missing scores for " + std::to_string(missing.size()) + " utterance(s):";
      for (const auto& id : missing) msg += " " + id;
    }
    if (!unknown.empty()) {
      if (!msg.empty()) msg += "; ";
      msg += "scores for utterances not in split " + std::string(to_string(split)) + ":";
      for (const auto& id : unknown) msg += " " + id;
    }
    throw Error(ErrorCode::missing_data, msg);
  }

  std::vector<SystemAggregate> out;
  out.reserve(acc.size());
  for (const auto& [sys, a] : acc) {
    // A lone utterance is its own system mean, bit for bit.
    double mean = a.n == 1 ? a.single : a.sum / static_cast<double>(a.n);
    out.push_back({sys, a.n, mean});
  }
  return out;
}

}  // namespace mosforge
