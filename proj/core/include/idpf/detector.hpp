#pragma once

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "idpf/idmodel.hpp"

namespace idpf::detector {

/// Every metric is oriented so that a lower value means more likely fake.
enum class Metric { Max, NegVariance, NegEntropy };

std::string_view to_string(Metric m);
Metric parse_metric(std::string_view s);

struct DetectionScore {
  double value = 0.0;
  Metric metric = Metric::Max;
};

DetectionScore score(const idmodel::IdProbDist& dist, Metric metric);

enum class Verdict { Real, Fake };

std::string_view to_string(Verdict v);

/// Fake iff value < threshold; a tie is real.
Verdict classify(const DetectionScore& score, double threshold);
Verdict classify(double value, double threshold);

/// Anything that maps a face to a lower-is-fake score.
class Detector {
 public:
  virtual ~Detector() = default;
  virtual DetectionScore detect(const FaceImage& image) const = 0;
  virtual std::string describe() const = 0;
};

class SingleModelDetector final : public Detector {
 public:
  SingleModelDetector(std::shared_ptr<const idmodel::IdentificationModel> model, Metric metric = Metric::Max);

  DetectionScore detect(const FaceImage& image) const override;
  std::string describe() const override;
  const idmodel::IdentificationModel& model() const { return *model_; }

 private:
  std::shared_ptr<const idmodel::IdentificationModel> model_;
  Metric metric_;
};

enum class EnsembleStatistic { Min, NegRange };

std::string_view to_string(EnsembleStatistic s);
EnsembleStatistic parse_statistic(std::string_view s);

/// min(v) or −(max(v) − min(v)) over per-model max-prob values.
double ensemble_statistic(const std::vector<double>& values, EnsembleStatistic statistic);

class DetectorEnsemble final : public Detector {
 public:
  DetectorEnsemble(std::vector<std::shared_ptr<const idmodel::IdentificationModel>> models,
                   EnsembleStatistic statistic);

  DetectionScore detect(const FaceImage& image) const override;
  std::string describe() const override;
  std::size_t size() const { return models_.size(); }

 private:
  std::vector<std::shared_ptr<const idmodel::IdentificationModel>> models_;
  EnsembleStatistic statistic_;
};

DetectionScore ensemble_score(const DetectorEnsemble& ensemble, const FaceImage& image);

/// Per-group models over disjoint identity subsets; the score is the largest
/// per-group max-prob.
class SubsetSplitDetector final : public Detector {
 public:
  explicit SubsetSplitDetector(std::vector<std::shared_ptr<const idmodel::IdentificationModel>> groups);

  DetectionScore detect(const FaceImage& image) const override;
  std::string describe() const override;
  std::size_t groups() const { return groups_.size(); }

 private:
  std::vector<std::shared_ptr<const idmodel::IdentificationModel>> groups_;
};

DetectionScore subset_split_score(const SubsetSplitDetector& split, const FaceImage& image);

/// Identity labels dealt round-robin into `n_groups` disjoint subsets.
std::vector<IdentitySet> partition_identities(const IdentitySet& ids, int n_groups);

struct ScoreRow {
  std::string sample_id;
  std::string metric;
  double value = 0.0;
  Verdict verdict = Verdict::Real;
  double threshold = 0.0;
  bool is_fake = false;  // ground truth, when known
  friend bool operator==(const ScoreRow&, const ScoreRow&) = default;
};

/// Comma-separated `sample_id,metric,value,verdict,threshold,is_fake` rows
/// after a header line; values are written with round-trip precision.
void write_score_dump(const std::vector<ScoreRow>& rows, std::ostream& out);
void save_score_dump(const std::vector<ScoreRow>& rows, const std::filesystem::path& path);
std::vector<ScoreRow> parse_score_dump(std::istream& in);
std::vector<ScoreRow> load_score_dump(const std::filesystem::path& path);

}  // namespace idpf::detector
