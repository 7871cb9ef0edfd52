#include "idpf/detector.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "idpf/error.hpp"

namespace idpf::detector {

std::string_view to_string(Metric m) {
  switch (m) {
    case Metric::Max: return "max";
    case Metric::NegVariance: return "neg_variance";
    case Metric::NegEntropy: return "neg_entropy";
  }
  return "?";
}

Metric parse_metric(std::string_view s) {
  if (s == "max") return Metric::Max;
  if (s == "neg_variance") return Metric::NegVariance;
  if (s == "neg_entropy") return Metric::NegEntropy;
  fail(ErrorCode::ConfigInvalid, "unknown metric " + std::string(s));
}

DetectionScore score(const idmodel::IdProbDist& dist, Metric metric) {
  const auto& p = dist.probs;
  if (p.empty()) fail(ErrorCode::InvalidRange, "empty probability distribution");
  double v = 0.0;
  switch (metric) {
    case Metric::Max:
      v = *std::max_element(p.begin(), p.end());
      break;
    case Metric::NegVariance: {
      const double mean = 1.0 / static_cast<double>(p.size());
      double s = 0.0;
      for (double x : p) s += (x - mean) * (x - mean);
      v = -s / static_cast<double>(p.size());
      break;
    }
    case Metric::NegEntropy: {
      double h = 0.0;
      for (double x : p) {
        if (x > 0.0) h -= x * std::log(x);
      }
      v = -h;
      break;
    }
  }
  return {v, metric};
}

std::string_view to_string(Verdict v) { return v == Verdict::Fake ? "fake" : "real"; }

Verdict classify(double value, double threshold) { return value < threshold ? Verdict::Fake : Verdict::Real; }

Verdict classify(const DetectionScore& s, double threshold) { return classify(s.value, threshold); }

SingleModelDetector::SingleModelDetector(std::shared_ptr<const idmodel::IdentificationModel> model,
                                         Metric metric)
    : model_(std::move(model)), metric_(metric) {
  if (!model_) fail(ErrorCode::ConfigInvalid, "detector needs a model");
}

DetectionScore SingleModelDetector::detect(const FaceImage& image) const {
  return score(model_->predict(image), metric_);
}

std::string SingleModelDetector::describe() const { return std::string(to_string(metric_)); }

std::string_view to_string(EnsembleStatistic s) { return s == EnsembleStatistic::Min ? "min" : "neg_range"; }

EnsembleStatistic parse_statistic(std::string_view s) {
  if (s == "min") return EnsembleStatistic::Min;
  if (s == "neg_range") return EnsembleStatistic::NegRange;
  fail(ErrorCode::ConfigInvalid, "unknown ensemble statistic " + std::string(s));
}

double ensemble_statistic(const std::vector<double>& values, EnsembleStatistic statistic) {
  if (values.empty()) fail(ErrorCode::InvalidRange, "ensemble statistic of no values");
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  return statistic == EnsembleStatistic::Min ? *lo : -(*hi - *lo);
}

DetectorEnsemble::DetectorEnsemble(std::vector<std::shared_ptr<const idmodel::IdentificationModel>> models,
                                   EnsembleStatistic statistic)
    : models_(std::move(models)), statistic_(statistic) {
  if (models_.empty()) fail(ErrorCode::ConfigInvalid, "ensemble needs at least one model");
  for (const auto& m : models_) {
    if (!m || m->num_classes() != models_.front()->num_classes()) {
      fail(ErrorCode::ShapeMismatch, "ensemble models must share the identity count");
    }
  }
}

DetectionScore DetectorEnsemble::detect(const FaceImage& image) const {
  std::vector<double> v;
  v.reserve(models_.size());
  for (const auto& m : models_) v.push_back(score(m->predict(image), Metric::Max).value);
  return {ensemble_statistic(v, statistic_), Metric::Max};
}

std::string DetectorEnsemble::describe() const {
  return "ensemble_" + std::string(to_string(statistic_)) + "_" + std::to_string(models_.size());
}

DetectionScore ensemble_score(const DetectorEnsemble& ensemble, const FaceImage& image) {
  return ensemble.detect(image);
}

SubsetSplitDetector::SubsetSplitDetector(std::vector<std::shared_ptr<const idmodel::IdentificationModel>> groups)
    : groups_(std::move(groups)) {
  if (groups_.empty()) fail(ErrorCode::ConfigInvalid, "subset split needs at least one group");
  std::vector<std::string> seen;
  for (const auto& g : groups_) {
    if (!g) fail(ErrorCode::ConfigInvalid, "null group model");
    for (const auto& l : g->identity_set().labels()) seen.push_back(l);
  }
  std::sort(seen.begin(), seen.end());
  if (std::adjacent_find(seen.begin(), seen.end()) != seen.end()) {
    fail(ErrorCode::ConfigInvalid, "subset groups overlap");
  }
}

DetectionScore SubsetSplitDetector::detect(const FaceImage& image) const {
  double best = -1.0;
  for (const auto& g : groups_) best = std::max(best, score(g->predict(image), Metric::Max).value);
  return {best, Metric::Max};
}

std::string SubsetSplitDetector::describe() const { return "subset_split_" + std::to_string(groups_.size()); }

DetectionScore subset_split_score(const SubsetSplitDetector& split, const FaceImage& image) {
  return split.detect(image);
}

std::vector<IdentitySet> partition_identities(const IdentitySet& ids, int n_groups) {
  if (n_groups < 1 || static_cast<std::size_t>(n_groups) > ids.size()) {
    fail(ErrorCode::InvalidRange, "group count must be in [1, K]");
  }
  std::vector<std::vector<std::string>> labels(n_groups);
  for (std::size_t i = 0; i < ids.size(); ++i) labels[i % n_groups].push_back(ids.label(i));
  std::vector<IdentitySet> out;
  for (auto& l : labels) out.emplace_back(std::move(l));
  return out;
}

namespace {

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

double parse_double(const std::string& s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) fail(ErrorCode::ParseError, "bad number '" + s + "'");
  return v;
}

}  // namespace

void write_score_dump(const std::vector<ScoreRow>& rows, std::ostream& out) {
  out << "sample_id,metric,value,verdict,threshold,is_fake\n";
  for (const auto& r : rows) {
    out << r.sample_id << ',' << r.metric << ',' << format_double(r.value) << ',' << to_string(r.verdict)
        << ',' << format_double(r.threshold) << ',' << (r.is_fake ? 1 : 0) << '\n';
  }
}

void save_score_dump(const std::vector<ScoreRow>& rows, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) fail(ErrorCode::FileNotFound, "cannot write " + path.string());
  write_score_dump(rows, f);
}

std::vector<ScoreRow> parse_score_dump(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("sample_id,", 0) != 0) {
    fail(ErrorCode::ParseError, "score dump lacks its header line");
  }
  std::vector<ScoreRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 6) fail(ErrorCode::ParseError, "score dump line " + std::to_string(lineno));
    ScoreRow r;
    r.sample_id = f[0];
    r.metric = f[1];
    r.value = parse_double(f[2]);
    if (f[3] == "fake") {
      r.verdict = Verdict::Fake;
    } else if (f[3] == "real") {
      r.verdict = Verdict::Real;
    } else {
      fail(ErrorCode::ParseError, "bad verdict on line " + std::to_string(lineno));
    }
    r.threshold = parse_double(f[4]);
    if (f[5] != "0" && f[5] != "1") fail(ErrorCode::ParseError, "bad is_fake on line " + std::to_string(lineno));
    r.is_fake = f[5] == "1";
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<ScoreRow> load_score_dump(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) fail(ErrorCode::FileNotFound, "cannot open " + path.string());
  return parse_score_dump(f);
}

}  // namespace idpf::detector
