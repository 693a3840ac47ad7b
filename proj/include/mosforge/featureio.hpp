#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "mosforge/common.hpp"

namespace mosforge {

/// Framewise embedding matrix, row-major frames x dim. Values are float32
/// on disk and double in memory.
struct FeatureMatrix {
  std::string utterance_id;
  size_t frames = 0;
  size_t dim = 0;
  std::vector<double> values;

  std::span<const double> row(size_t f) const { return {values.data() + f * dim, dim}; }

  bool operator==(const FeatureMatrix&) const = default;
};

struct ScalarFeature {
  std::string utterance_id;
  std::string name;
  double value = 0.0;
  bool missing = false;

  bool operator==(const ScalarFeature&) const = default;
};

inline constexpr std::array<char, 4> kFeatureMagic = {'M', 'O', 'S', 'F'};
inline constexpr uint16_t kFeatureVersion = 1;
inline constexpr double kDefaultFramesPerSecond = 50.0;
inline constexpr double kDefaultMaxSeconds = 6.0;
inline constexpr std::string_view kAsrConfidence = "asr_confidence";

inline void check_matrix(const FeatureMatrix& m) {
  if (m.dim == 0) throw Error(ErrorCode::shape_mismatch, "feature matrix dim must be positive");
  if (m.values.size() != m.frames * m.dim) {
    throw Error(ErrorCode::shape_mismatch, "feature matrix has " + std::to_string(m.values.size()) + " values, expected " +
                                               std::to_string(m.frames * m.dim));
  }
  for (double v : m.values) {
    if (!std::isfinite(v)) throw Error(ErrorCode::non_finite, "non-finite value in features of " + m.utterance_id);
  }
}

/// Writes the MOSF layout. Nothing is written if validation fails.
inline size_t write_feature_file(const FeatureMatrix& m, std::ostream& out) {
  check_matrix(m);
  for (double v : m.values) {
    if (!std::isfinite(static_cast<float>(v))) {
      throw Error(ErrorCode::non_finite, "value overflows float32 in features of " + m.utterance_id);
    }
  }
  if (m.frames > UINT32_MAX || m.dim > UINT32_MAX) throw Error(ErrorCode::invalid_argument, "feature matrix too large");
  out.write(kFeatureMagic.data(), kFeatureMagic.size());
  le::put(out, kFeatureVersion);
  le::put_string16(out, m.utterance_id);
  le::put(out, static_cast<uint32_t>(m.frames));
  le::put(out, static_cast<uint32_t>(m.dim));
  for (double v : m.values) le::put_f32(out, static_cast<float>(v));
  if (!out) throw Error(ErrorCode::io_error, "write failed for features of " + m.utterance_id);
  return 4 + 2 + 2 + m.utterance_id.size() + 4 + 4 + 4 * m.values.size();
}

inline FeatureMatrix read_feature_file(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (in.gcount() != 4 || magic != kFeatureMagic) throw Error(ErrorCode::bad_magic, "bad magic: not a MOSF feature file");
  uint16_t version = 0;
  if (!le::get(in, version)) throw Error(ErrorCode::truncated_payload, "truncated header");
  if (version != kFeatureVersion) {
    throw Error(ErrorCode::version_mismatch, "version mismatch: expected " + std::to_string(kFeatureVersion) + ", got " +
                                                 std::to_string(version));
  }
  FeatureMatrix m;
  uint32_t frames = 0, dim = 0;
  if (!le::get_string16(in, m.utterance_id) || !le::get(in, frames) || !le::get(in, dim)) {
    throw Error(ErrorCode::truncated_payload, "truncated header");
  }
  if (dim == 0) throw Error(ErrorCode::shape_mismatch, "feature file declares dim 0");
  m.frames = frames;
  m.dim = dim;
  const size_t count = static_cast<size_t>(frames) * dim;
  m.values.reserve(count);
  for (size_t i = 0; i < count; ++i) {
    float v = 0.f;
    if (!le::get_f32(in, v)) {
      throw Error(ErrorCode::truncated_payload, "truncated payload: got " + std::to_string(i) + " of " +
                                                    std::to_string(count) + " values");
    }
    if (!std::isfinite(v)) throw Error(ErrorCode::non_finite, "NaN or infinity in payload at value " + std::to_string(i));
    m.values.push_back(static_cast<double>(v));
  }
  return m;
}

inline FeatureMatrix load_feature_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_error, "cannot open " + path.string());
  return read_feature_file(in);
}

inline void save_feature_file(const FeatureMatrix& m, const std::filesystem::path& path) {
  std::ostringstream buf(std::ios::binary);
  write_feature_file(m, buf);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io_error, "cannot open " + path.string());
  out << buf.str();
}

inline size_t frame_limit(double max_seconds, double frames_per_second) {
  return static_cast<size_t>(std::floor(max_seconds * frames_per_second));
}

/// Keeps the first floor(max_seconds * fps) frames. Never pads.
inline FeatureMatrix truncate_frames(const FeatureMatrix& m, double max_seconds = kDefaultMaxSeconds,
                                     double frames_per_second = kDefaultFramesPerSecond) {
  if (!(max_seconds > 0.0) || !(frames_per_second > 0.0)) {
    throw Error(ErrorCode::invalid_argument, "max_seconds and frames_per_second must be positive");
  }
  const size_t limit = frame_limit(max_seconds, frames_per_second);
  if (m.frames <= limit) return m;
  FeatureMatrix out;
  out.utterance_id = m.utterance_id;
  out.frames = limit;
  out.dim = m.dim;
  out.values.assign(m.values.begin(), m.values.begin() + static_cast<std::ptrdiff_t>(limit * m.dim));
  return out;
}

inline std::vector<double> mean_pool(const FeatureMatrix& m) {
  if (m.frames == 0) throw Error(ErrorCode::invalid_argument, "empty matrix");
  std::vector<double> out(m.dim, 0.0);
  for (size_t f = 0; f < m.frames; ++f) {
    for (size_t d = 0; d < m.dim; ++d) out[d] += m.values[f * m.dim + d];
  }
  for (double& v : out) v /= static_cast<double>(m.frames);
  return out;
}

/// Utterance-level ASR confidence: mean of word confidences, or the missing
/// sentinel (value 0, missing=true) when the recognizer produced no words.
inline ScalarFeature average_word_confidences(std::span<const double> word_confidences, std::string utterance_id = {}) {
  ScalarFeature out{std::move(utterance_id), std::string(kAsrConfidence), 0.0, false};
  if (word_confidences.empty()) {
    out.missing = true;
    return out;
  }
  double sum = 0.0;
  for (double c : word_confidences) {
    if (!(c >= 0.0 && c <= 1.0)) throw Error(ErrorCode::invalid_argument, "word confidence outside [0,1]: " + format_double(c));
    sum += c;
  }
  out.value = sum / static_cast<double>(word_confidences.size());
  return out;
}

// ---------------------------------------------------------------------------
// Scalar feature table: CSV `utterance_id,name,value,missing`.

inline constexpr std::string_view kScalarHeader = "utterance_id,name,value,missing";

inline void check_scalar(const ScalarFeature& s) {
  if (s.missing && s.value != 0.0) throw Error(ErrorCode::invalid_argument, "missing scalar must have value 0: " + s.utterance_id);
  if (!std::isfinite(s.value)) throw Error(ErrorCode::non_finite, "non-finite scalar for " + s.utterance_id);
  if (s.name == kAsrConfidence && !s.missing && !(s.value >= 0.0 && s.value <= 1.0)) {
    throw Error(ErrorCode::invalid_argument, "asr_confidence outside [0,1] for " + s.utterance_id);
  }
}

inline std::vector<ScalarFeature> read_scalar_table(std::istream& in) {
  std::string line;
  size_t line_no = 1;
  if (!std::getline(in, line) || trim(line) != kScalarHeader) {
    throw Error(ErrorCode::parse_error, "line 1: expected header '" + std::string(kScalarHeader) + "'");
  }
  std::vector<ScalarFeature> out;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto where = "line " + std::to_string(line_no) + ": ";
    auto cols = split(line, ',');
    if (cols.size() != 4) throw Error(ErrorCode::parse_error, where + "expected 4 columns");
    ScalarFeature s;
    s.utterance_id = std::string(trim(cols[0]));
    s.name = std::string(trim(cols[1]));
    if (!parse_double(cols[2], s.value)) throw Error(ErrorCode::parse_error, where + "non-numeric value");
    auto miss = trim(cols[3]);
    if (miss == "0") s.missing = false;
    else if (miss == "1") s.missing = true;
    else throw Error(ErrorCode::parse_error, where + "missing must be 0 or 1");
    try {
      check_scalar(s);
    } catch (const Error& e) {
      throw Error(e.code(), where + e.what());
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline void write_scalar_table(std::span<const ScalarFeature> rows, std::ostream& out) {
  for (const auto& s : rows) check_scalar(s);
  out << kScalarHeader << '\n';
  for (const auto& s : rows) {
    out << s.utterance_id << ',' << s.name << ',' << format_double(s.value) << ',' << (s.missing ? 1 : 0) << '\n';
  }
}

/// Lookup by (name, utterance_id).
class ScalarIndex {
 public:
  void add(const ScalarFeature& s) { rows_[{s.name, s.utterance_id}] = s; }
  void add(std::span<const ScalarFeature> rows) {
    for (const auto& s : rows) add(s);
  }

  const ScalarFeature* find(const std::string& name, const std::string& utterance_id) const {
    auto it = rows_.find({name, utterance_id});
    return it == rows_.end() ? nullptr : &it->second;
  }

 private:
  std::map<std::pair<std::string, std::string>, ScalarFeature> rows_;
};

}  // namespace mosforge
