#pragma once

// Expert ensemble: assembles per-utterance component blocks into a feature
// matrix, standardizes it, and trains one of the two aggregation backends.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "mosforge/common.hpp"
#include "mosforge/corpus.hpp"
#include "mosforge/gbm.hpp"
#include "mosforge/metrics.hpp"
#include "mosforge/nn.hpp"

namespace mosforge::ensemble {

enum class ComponentId : uint8_t { A_asr_confidence = 0, B_baseline_embedding = 1, C_ft_linear = 2, D_ft_conv = 3 };

inline constexpr std::array<ComponentId, 4> kAllComponents = {ComponentId::A_asr_confidence, ComponentId::B_baseline_embedding,
                                                              ComponentId::C_ft_linear, ComponentId::D_ft_conv};

inline char letter(ComponentId c) { return static_cast<char>('A' + static_cast<int>(c)); }

/// Ordered A, B, C, D.
using Selection = std::set<ComponentId>;

/// "A+C" style label.
inline std::string selection_label(const Selection& s) {
  std::string out;
  for (auto c : s) {
    if (!out.empty()) out += '+';
    out += letter(c);
  }
  return out;
}

/// Accepts "A,B,C,D", "A+C", "ACD" and similar; letters are case-insensitive.
inline Selection parse_selection(std::string_view text) {
  Selection s;
  for (char ch : text) {
    if (ch == ',' || ch == '+' || ch == ' ') continue;
    const char up = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    if (up < 'A' || up > 'D') throw Error(ErrorCode::invalid_argument, "unknown component '" + std::string(1, ch) + "'");
    s.insert(static_cast<ComponentId>(up - 'A'));
  }
  if (s.empty()) throw Error(ErrorCode::invalid_argument, "empty component selection");
  return s;
}

/// Per-utterance inputs. Block A is [confidence, missing_flag], B the pooled
/// baseline embedding, C and D single predictions.
struct ComponentVector {
  std::string utterance_id;
  std::map<ComponentId, std::vector<double>> blocks;
};

struct Assembled {
  Matrix matrix;
  std::vector<std::string> labels;
  std::vector<std::string> utterance_ids;
};

inline std::vector<std::string> block_labels(ComponentId c, size_t width) {
  switch (c) {
    case ComponentId::A_asr_confidence: return {"A.confidence", "A.missing"};
    case ComponentId::C_ft_linear: return {"C.prediction"};
    case ComponentId::D_ft_conv: return {"D.prediction"};
    case ComponentId::B_baseline_embedding: break;
  }
  std::vector<std::string> out;
  for (size_t i = 0; i < width; ++i) out.push_back("B." + std::to_string(i));
  return out;
}

/// Row per vector, columns are the selected blocks concatenated in A..D order.
inline Assembled assemble(std::span<const ComponentVector> vectors, const Selection& selection) {
  if (selection.empty()) throw Error(ErrorCode::invalid_argument, "empty component selection");
  std::map<ComponentId, size_t> widths;
  for (const auto& v : vectors) {
    for (auto c : selection) {
      auto it = v.blocks.find(c);
      if (it == v.blocks.end()) {
        throw Error(ErrorCode::missing_data, "utterance " + v.utterance_id + " lacks component " + std::string(1, letter(c)));
      }
      const auto& block = it->second;
      for (double x : block) {
        if (!std::isfinite(x)) throw Error(ErrorCode::non_finite, "non-finite value in component " + std::string(1, letter(c)) + " of " + v.utterance_id);
      }
      if (c == ComponentId::A_asr_confidence) {
        if (block.size() != 2) throw Error(ErrorCode::shape_mismatch, "component A must have 2 values");
        if (block[1] != 0.0 && block[1] != 1.0) throw Error(ErrorCode::invalid_argument, "component A missing flag must be 0 or 1");
      }
      if ((c == ComponentId::C_ft_linear || c == ComponentId::D_ft_conv) && block.size() != 1) {
        throw Error(ErrorCode::shape_mismatch, "component " + std::string(1, letter(c)) + " must be a single value");
      }
      if (block.empty()) throw Error(ErrorCode::shape_mismatch, "empty component block");
      auto [w, inserted] = widths.emplace(c, block.size());
      if (!inserted && w->second != block.size()) {
        throw Error(ErrorCode::shape_mismatch, "inconsistent width for component " + std::string(1, letter(c)) + " at " + v.utterance_id);
      }
    }
  }

  Assembled out;
  size_t cols = 0;
  for (auto c : selection) {
    size_t w = widths.count(c) ? widths[c] : (c == ComponentId::A_asr_confidence ? 2 : 1);
    auto labels = block_labels(c, w);
    out.labels.insert(out.labels.end(), labels.begin(), labels.end());
    cols += labels.size();
  }
  out.matrix = Matrix(vectors.size(), cols);
  for (size_t r = 0; r < vectors.size(); ++r) {
    size_t col = 0;
    for (auto c : selection) {
      for (double x : vectors[r].blocks.at(c)) out.matrix.at(r, col++) = x;
    }
    out.utterance_ids.push_back(vectors[r].utterance_id);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Standardization

struct Standardizer {
  std::vector<double> mean;
  std::vector<double> std;
  std::vector<bool> constant;

  bool operator==(const Standardizer&) const = default;
};

/// Per-column mean and population standard deviation.
inline Standardizer fit_standardizer(const Matrix& m) {
  if (m.rows == 0 || m.cols == 0) throw Error(ErrorCode::invalid_argument, "empty matrix");
  if (m.rows < 2) throw Error(ErrorCode::invalid_argument, "need at least 2 rows to fit a standardizer");
  Standardizer s;
  for (size_t c = 0; c < m.cols; ++c) {
    double mu = 0.0;
    for (size_t r = 0; r < m.rows; ++r) mu += m.at(r, c);
    mu /= static_cast<double>(m.rows);
    double var = 0.0;
    bool same = true;
    for (size_t r = 0; r < m.rows; ++r) {
      const double d = m.at(r, c) - mu;
      var += d * d;
      same = same && m.at(r, c) == m.at(0, c);
    }
    var /= static_cast<double>(m.rows);
    s.mean.push_back(mu);
    s.std.push_back(std::sqrt(var));
    s.constant.push_back(same || var == 0.0);
  }
  return s;
}

/// Leaves columns unchanged.
inline Standardizer identity_standardizer(size_t cols) {
  return {std::vector<double>(cols, 0.0), std::vector<double>(cols, 1.0), std::vector<bool>(cols, false)};
}

inline Matrix apply_standardizer(const Standardizer& s, const Matrix& m) {
  if (m.cols != s.mean.size()) throw Error(ErrorCode::shape_mismatch, "standardizer width does not match matrix");
  Matrix out(m.rows, m.cols);
  for (size_t r = 0; r < m.rows; ++r) {
    for (size_t c = 0; c < m.cols; ++c) out.at(r, c) = s.constant[c] ? 0.0 : (m.at(r, c) - s.mean[c]) / s.std[c];
  }
  return out;
}

/// Maps standardized values back to raw scale; constant columns return their mean.
inline Matrix unapply_standardizer(const Standardizer& s, const Matrix& z) {
  if (z.cols != s.mean.size()) throw Error(ErrorCode::shape_mismatch, "standardizer width does not match matrix");
  Matrix out(z.rows, z.cols);
  for (size_t r = 0; r < z.rows; ++r) {
    for (size_t c = 0; c < z.cols; ++c) out.at(r, c) = s.constant[c] ? s.mean[c] : z.at(r, c) * s.std[c] + s.mean[c];
  }
  return out;
}

inline nlohmann::json to_json(const Standardizer& s) {
  return {{"mean", s.mean}, {"std", s.std}, {"constant", s.constant}};
}

inline Standardizer standardizer_from_json(const nlohmann::json& j) {
  Standardizer s;
  s.mean = j.at("mean").get<std::vector<double>>();
  s.std = j.at("std").get<std::vector<double>>();
  s.constant = j.at("constant").get<std::vector<bool>>();
  if (s.std.size() != s.mean.size() || s.constant.size() != s.mean.size()) {
    throw Error(ErrorCode::parse_error, "standardizer arrays differ in length");
  }
  return s;
}

// ---------------------------------------------------------------------------
// Training and prediction

enum class Backend { gbm, neural };

inline const char* to_string(Backend b) { return b == Backend::gbm ? "gbm" : "neural"; }

inline Backend parse_backend(std::string_view s) {
  if (s == "gbm") return Backend::gbm;
  if (s == "neural") return Backend::neural;
  throw Error(ErrorCode::invalid_argument, "unknown backend '" + std::string(s) + "' (expected gbm or neural)");
}

struct EnsembleParams {
  Backend backend = Backend::gbm;
  gbm::GbmParams gbm;
  nn::TrainConfig neural;
  bool standardize = true;
  bool clip = false;
  uint64_t seed = 42;
};

struct LabeledSet {
  std::vector<ComponentVector> vectors;
  std::vector<double> targets;
};

struct EnsembleModel {
  Selection selection;
  Backend backend = Backend::gbm;
  Standardizer standardizer;
  std::vector<std::string> labels;
  std::variant<gbm::GbmModel, nn::Model> model;
  bool standardize = true;
  bool clip = false;
  uint64_t seed = 42;
  // Neural training trace; empty for gbm.
  std::vector<nn::EpochRecord> history;
  nn::TrainConfig neural_config;
};

namespace detail {

inline std::vector<nn::Sample> to_samples(const Matrix& x, std::span<const double> y) {
  std::vector<nn::Sample> out;
  out.reserve(x.rows);
  for (size_t r = 0; r < x.rows; ++r) {
    out.push_back({nn::Tensor({x.cols}, std::vector<double>(x.row(r).begin(), x.row(r).end())), nn::Tensor::scalar(y[r])});
  }
  return out;
}

inline std::vector<double> backend_predict(const EnsembleModel& m, const Matrix& z) {
  if (const auto* g = std::get_if<gbm::GbmModel>(&m.model)) return gbm::predict(*g, z);
  const auto& net = std::get<nn::Model>(m.model);
  std::vector<double> out(z.rows);
  for (size_t r = 0; r < z.rows; ++r) {
    out[r] = nn::forward(net, nn::Tensor({z.cols}, std::vector<double>(z.row(r).begin(), z.row(r).end()))).data[0];
  }
  return out;
}

}  // namespace detail

/// Fits the standardizer on train only, then trains the chosen backend with
/// the dev set driving early stopping.
inline EnsembleModel train_ensemble(const LabeledSet& train, const LabeledSet& dev, const Selection& selection,
                                    const EnsembleParams& params) {
  if (train.vectors.size() != train.targets.size() || dev.vectors.size() != dev.targets.size()) {
    throw Error(ErrorCode::shape_mismatch, "vectors and targets differ in length");
  }
  if (dev.vectors.empty()) throw Error(ErrorCode::invalid_argument, "dev set is empty; early stopping needs it");
  auto tr = assemble(train.vectors, selection);
  auto dv = assemble(dev.vectors, selection);
  if (dv.labels != tr.labels) throw Error(ErrorCode::shape_mismatch, "train and dev component widths differ");

  EnsembleModel m;
  m.selection = selection;
  m.backend = params.backend;
  m.labels = tr.labels;
  m.standardize = params.standardize;
  m.clip = params.clip;
  m.seed = params.seed;
  m.standardizer = params.standardize ? fit_standardizer(tr.matrix) : identity_standardizer(tr.matrix.cols);
  const Matrix ztr = apply_standardizer(m.standardizer, tr.matrix);
  const Matrix zdv = apply_standardizer(m.standardizer, dv.matrix);

  if (params.backend == Backend::gbm) {
    auto gp = params.gbm;
    gp.seed = params.seed;
    m.model = gbm::fit(ztr, train.targets, gp, gbm::DevSet{zdv, dev.targets});
  } else {
    auto cfg = params.neural;
    cfg.seed = params.seed + 1;
    auto net = nn::make_ensemble_net(ztr.cols);
    nn::initialize_parameters(net, params.seed);
    auto trs = detail::to_samples(ztr, train.targets);
    auto dvs = detail::to_samples(zdv, dev.targets);
    auto trained = nn::train(std::move(net), trs, dvs, nn::LossKind::mse, cfg);
    m.model = std::move(trained.model);
    m.history = std::move(trained.history);
    m.neural_config = cfg;
  }
  return m;
}

/// Standardize, then backend-predict; clamps to [1,5] when the model's clip flag is set.
inline std::map<std::string, double> predict_ensemble(const EnsembleModel& m, std::span<const ComponentVector> vectors) {
  std::map<std::string, double> out;
  if (vectors.empty()) return out;
  auto a = assemble(vectors, m.selection);
  if (a.labels != m.labels) throw Error(ErrorCode::shape_mismatch, "component widths differ from the trained model");
  auto pred = detail::backend_predict(m, apply_standardizer(m.standardizer, a.matrix));
  for (size_t r = 0; r < pred.size(); ++r) {
    const double v = m.clip ? clip_mos(pred[r]) : pred[r];
    if (!out.emplace(a.utterance_ids[r], v).second) throw Error(ErrorCode::duplicate_id, "duplicate utterance " + a.utterance_ids[r]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ablation

struct AblationRow {
  std::string combination;
  EvalReport report;

  bool operator==(const AblationRow&) const = default;
};

struct AblationResult {
  std::vector<AblationRow> dev;
  std::vector<AblationRow> test;  // empty unless a test set was given
};

/// The nine component combinations in the order of the reference ablation grid.
inline std::vector<Selection> reference_combinations() {
  return {parse_selection("A"),  parse_selection("B"),  parse_selection("AB"),  parse_selection("AD"),  parse_selection("AC"),
          parse_selection("BC"), parse_selection("CD"), parse_selection("BCD"), parse_selection("ABCD")};
}

/// Trains one ensemble per combination and scores it on the dev split (and
/// the test split when `test` is given) with the four challenge measures.
inline AblationResult run_ablation(const LabeledSet& train, const LabeledSet& dev, const std::vector<Selection>& combinations,
                                   const EnsembleParams& params, const Corpus& corpus, const LabeledSet* test = nullptr) {
  AblationResult out;
  for (const auto& combo : combinations) {
    if (combo.empty()) throw Error(ErrorCode::invalid_argument, "empty combination in ablation list");
    auto model = train_ensemble(train, dev, combo, params);
    const auto label = selection_label(combo);
    out.dev.push_back({label, evaluate(predict_ensemble(model, dev.vectors), corpus, Split::dev)});
    if (test) out.test.push_back({label, evaluate(predict_ensemble(model, test->vectors), corpus, Split::test)});
  }
  return out;
}

inline constexpr std::string_view kAblationHeader = "combination,system_srcc,system_mse,utterance_srcc,utterance_mse";

inline void write_ablation_csv(std::span<const AblationRow> rows, std::ostream& out) {
  out << kAblationHeader << '\n';
  for (const auto& r : rows) {
    out << r.combination << ',' << format_double(r.report.system_srcc) << ',' << format_double(r.report.system_mse) << ','
        << format_double(r.report.utterance_srcc) << ',' << format_double(r.report.utterance_mse) << '\n';
  }
}

/// Counts are not part of the CSV and read back as zero.
inline std::vector<AblationRow> read_ablation_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || trim(line) != kAblationHeader) throw Error(ErrorCode::parse_error, "line 1: bad ablation header");
  std::vector<AblationRow> rows;
  size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto cols = split(line, ',');
    if (cols.size() != 5) throw Error(ErrorCode::parse_error, "line " + std::to_string(line_no) + ": expected 5 columns");
    AblationRow r;
    r.combination = std::string(trim(cols[0]));
    double* fields[] = {&r.report.system_srcc, &r.report.system_mse, &r.report.utterance_srcc, &r.report.utterance_mse};
    for (size_t i = 0; i < 4; ++i) {
      if (!parse_double(cols[i + 1], *fields[i])) throw Error(ErrorCode::parse_error, "line " + std::to_string(line_no) + ": bad number");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Bundle directory: manifest.json, standardizer.json, model.mosg | model.mosm

inline void save_bundle(const EnsembleModel& m, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest = {{"selection", selection_label(m.selection)},
                             {"backend", to_string(m.backend)},
                             {"seed", m.seed},
                             {"clip", m.clip},
                             {"standardize", m.standardize},
                             {"columns", m.labels}};
  std::string model_file;
  if (const auto* g = std::get_if<gbm::GbmModel>(&m.model)) {
    model_file = "model.mosg";
    std::ofstream out(dir / model_file, std::ios::binary);
    gbm::write_model(*g, out);
  } else {
    model_file = "model.mosm";
    std::ofstream out(dir / model_file, std::ios::binary);
    nn::write_model(std::get<nn::Model>(m.model), out);
    nlohmann::json hist = nlohmann::json::array();
    for (const auto& r : m.history) hist.push_back({{"train_loss", r.train_loss}, {"dev_loss", r.dev_loss}});
    manifest["history"] = hist;
    manifest["train_config"] = nn::to_json(m.neural_config);
  }
  manifest["model_file"] = model_file;
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
  std::ofstream(dir / "standardizer.json") << to_json(m.standardizer).dump(2) << '\n';
}

inline nlohmann::json read_json_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw Error(ErrorCode::io_error, "cannot open " + p.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse_error, p.string() + ": " + e.what());
  }
}

inline EnsembleModel load_bundle(const std::filesystem::path& dir) {
  auto manifest = read_json_file(dir / "manifest.json");
  EnsembleModel m;
  m.selection = parse_selection(manifest.at("selection").get<std::string>());
  m.backend = parse_backend(manifest.at("backend").get<std::string>());
  m.seed = manifest.at("seed").get<uint64_t>();
  m.clip = manifest.at("clip").get<bool>();
  m.standardize = manifest.at("standardize").get<bool>();
  m.labels = manifest.at("columns").get<std::vector<std::string>>();
  m.standardizer = standardizer_from_json(read_json_file(dir / "standardizer.json"));
  const auto model_path = dir / manifest.at("model_file").get<std::string>();
  std::ifstream in(model_path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_error, "cannot open " + model_path.string());
  if (m.backend == Backend::gbm) {
    m.model = gbm::read_model(in);
  } else {
    m.model = nn::read_model(in);
    if (manifest.contains("train_config")) m.neural_config = nn::train_config_from_json(manifest["train_config"]);
    for (const auto& r : manifest.value("history", nlohmann::json::array())) {
      m.history.push_back({r.at("train_loss").get<double>(), r.at("dev_loss").get<double>()});
    }
  }
  return m;
}

}  // namespace mosforge::ensemble
