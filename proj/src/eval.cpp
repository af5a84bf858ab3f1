#include "invsketch/eval.hpp"

#include <algorithm>
#include <cmath>

#include "invsketch/checkpoint.hpp"
#include "invsketch/errors.hpp"

namespace invsketch::eval {

double acc_at_k(const std::vector<sbir::RetrievalResult>& results, int k) {
  if (k < 1) throw InvalidK("k must be at least 1, got " + std::to_string(k));
  if (results.empty()) throw Error("acc@k of an empty result list");
  std::size_t hits = 0;
  for (const auto& r : results) {
    const std::size_t rank = r.rank_of(r.query_id);
    if (rank != 0 && rank <= static_cast<std::size_t>(k)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(results.size());
}

QueryMode parse_query_mode(const std::string& name) {
  if (name == "sbir") return QueryMode::kSbir;
  if (name == "synthetic") return QueryMode::kSynthetic;
  throw ParseError("unknown evaluation mode '" + name + "' (expected sbir or synthetic)");
}

std::string to_string(QueryMode mode) { return mode == QueryMode::kSbir ? "sbir" : "synthetic"; }

nlohmann::json EvalOptions::to_json() const {
  return {{"mode", to_string(mode)}, {"ks", ks}, {"gallery_limit", gallery_limit}};
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json acc = nlohmann::json::object();
  for (const auto& [k, v] : accuracy) acc["acc@" + std::to_string(k)] = v;
  nlohmann::json per_query = nlohmann::json::array();
  for (const auto& r : ranks) per_query.push_back({{"instance_id", r.instance_id}, {"rank", r.rank}});
  return {{"mode", to_string(mode)},
          {"accuracy", acc},
          {"queries", per_query},
          {"gallery_size", gallery_size},
          {"sbir_model", sbir_model_id},
          {"style_model", style_model_id},
          {"config_fingerprint", config_fingerprint}};
}

EvalReport evaluate(style::StyleModel& style_model, sbir::SbirModel& sbir_model, const data::DatasetSplit& split,
                    const EvalOptions& options) {
  if (!split.pairing) throw BrokenPair("evaluation needs a paired split");
  if (options.ks.empty()) throw InvalidK("no k values requested");
  for (int k : options.ks)
    if (k < 1) throw InvalidK("k must be at least 1, got " + std::to_string(k));

  const std::size_t n_photos =
      options.gallery_limit == 0 ? split.photos.size() : std::min(options.gallery_limit, split.photos.size());
  std::vector<data::PhotoSample> photos(split.photos.begin(), split.photos.begin() + static_cast<long>(n_photos));
  const sbir::Gallery gallery = sbir::build_gallery(sbir_model, photos);

  std::vector<sbir::RetrievalResult> results;
  for (std::size_t i = 0; i < split.sketches.size(); ++i) {
    const std::size_t target = (*split.pairing)[i];
    if (target >= n_photos) continue;
    ImageTensor query = split.sketches[i].image;
    if (options.mode == QueryMode::kSynthetic)
      query = style_model.translate(query, style::Direction::kSketchToContour);
    results.push_back(sbir::retrieve(query, gallery, sbir_model, style_model, split.photos[target].instance_id));
  }
  if (results.empty()) throw EmptyGallery("no query has its photo inside the gallery");

  EvalReport report;
  report.mode = options.mode;
  report.gallery_size = gallery.size();
  for (int k : options.ks) report.accuracy[k] = acc_at_k(results, k);
  for (const auto& r : results) report.ranks.push_back({r.query_id, r.rank_of(r.query_id)});
  report.sbir_model_id = gallery.model_fingerprint;
  report.style_model_id = module_fingerprint(style_model);
  report.config_fingerprint = sha256_hex(
      nlohmann::json{{"options", options.to_json()}, {"sbir", report.sbir_model_id}, {"style", report.style_model_id}}
          .dump());
  return report;
}

EvalReport evaluate_synthetic(style::StyleModel& style_model, sbir::SbirModel& sbir_model,
                              const data::DatasetSplit& split, EvalOptions options) {
  options.mode = QueryMode::kSynthetic;
  return evaluate(style_model, sbir_model, split, options);
}

double aggregate_preference(const PreferenceTally& t) {
  if (t.w_c < 0 || t.w_n < 0 || std::fabs(t.w_c + t.w_n - 1.0) > 1e-9)
    throw InvalidWeights("preference weights must be non-negative and sum to 1");
  const std::size_t n = t.correspondence.size();
  if (n == 0 || t.naturalness.size() != n) throw Error("need one correspondence and one naturalness vote per rater");
  double r_c = 0, r_n = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const int c = t.correspondence[i], v = t.naturalness[i];
    if ((c != 0 && c != 1) || (v != 0 && v != 1)) throw Error("votes must be 0 or 1");
    r_c += c;
    r_n += v;
  }
  return (t.w_c * r_c + t.w_n * r_n) / static_cast<double>(n);
}

}  // namespace invsketch::eval
