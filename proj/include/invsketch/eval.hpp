#pragma once

#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "invsketch/data.hpp"
#include "invsketch/fgsbir.hpp"
#include "invsketch/styletransfer.hpp"

namespace invsketch::eval {

// Fraction of results whose query_id appears among the first k entries.
// k < 1 raises InvalidK; an empty result list raises Error.
double acc_at_k(const std::vector<sbir::RetrievalResult>& results, int k);

enum class QueryMode {
  kSbir,       // the sketch itself is the query
  kSynthetic,  // the sketch is first replaced by its synthesised contour
};

QueryMode parse_query_mode(const std::string& name);
std::string to_string(QueryMode mode);

struct EvalOptions {
  QueryMode mode = QueryMode::kSbir;
  std::vector<int> ks = {1, 5, 10};
  // Keep only the first `gallery_limit` photos (0 keeps all). Sketches whose
  // photo falls outside the gallery are skipped.
  std::size_t gallery_limit = 0;

  nlohmann::json to_json() const;
};

struct QueryRank {
  std::string instance_id;
  std::size_t rank = 0;  // 1-based
};

struct EvalReport {
  QueryMode mode = QueryMode::kSbir;
  std::map<int, double> accuracy;  // k -> acc@k
  std::vector<QueryRank> ranks;
  std::size_t gallery_size = 0;
  std::string sbir_model_id;   // module fingerprints
  std::string style_model_id;
  std::string config_fingerprint;  // over options and both model ids

  nlohmann::json to_json() const;
};

// Ranks every paired sketch of `split` against the split's photos.
EvalReport evaluate(style::StyleModel& style_model, sbir::SbirModel& sbir_model, const data::DatasetSplit& split,
                    const EvalOptions& options = {});
// The synthesised-sketch protocol: each query sketch is replaced by
// translate(s) before retrieval.
EvalReport evaluate_synthetic(style::StyleModel& style_model, sbir::SbirModel& sbir_model,
                              const data::DatasetSplit& split, EvalOptions options = {});

// Rank-1 accuracy expected from a ranking that ignores the query.
inline double chance_accuracy(std::size_t gallery_size, int k = 1) {
  return std::min(1.0, static_cast<double>(k) / static_cast<double>(gallery_size));
}

struct PreferenceTally {
  std::vector<int> correspondence;  // c_i per rater, 0 or 1
  std::vector<int> naturalness;     // n_i per rater, 0 or 1
  double w_c = 0.5;
  double w_n = 0.5;
};

// (w_c * sum c_i + w_n * sum n_i) / N. Weights must be non-negative and sum
// to 1 (InvalidWeights); votes must be binary and both lists of length N >= 1.
double aggregate_preference(const PreferenceTally& tally);

}  // namespace invsketch::eval
