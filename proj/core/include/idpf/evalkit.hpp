#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "idpf/detector.hpp"
#include "idpf/evasion.hpp"
#include "idpf/idmodel.hpp"
#include "idpf/manifest.hpp"

namespace idpf::evalkit {

struct ScoredSample {
  std::string sample_id;
  bool is_fake = false;
  double score = 0.0;  // lower => fake
};

/// P(random real scores above random fake), ties counted one half.
double compute_auc(std::span<const ScoredSample> samples);

struct EerResult {
  double threshold = 0.0;
  double eer = 0.0;
  double fpr = 0.0;  // fakes accepted as real
  double fnr = 0.0;  // reals rejected as fake
};

/// Scans −∞, midpoints of adjacent distinct scores and +∞; minimizes
/// |FPR − FNR| and keeps the lowest threshold on ties.
EerResult compute_eer_threshold(std::span<const ScoredSample> samples);

struct RocReport {
  std::vector<double> thresholds;  // ascending
  std::vector<double> fpr;         // fakes with score >= threshold
  std::vector<double> tpr;         // reals with score >= threshold
  double auc = 0.0;
  double eer_threshold = 0.0;
  double eer = 0.0;

  nlohmann::json summary() const;
  /// `threshold,fpr,tpr` rows after a header.
  void write_csv(std::ostream& out) const;
};

RocReport compute_roc(std::span<const ScoredSample> samples);

std::vector<ScoredSample> score_samples(const detector::Detector& det, const std::vector<SampleRecord>& records,
                                        const ImageStore& store);

struct GroupStats {
  std::size_t n = 0;
  double mean = 0.0;
  double stddev = 0.0;
  double stderr_mean = 0.0;
};

GroupStats summarize(std::span<const double> values);

struct PairSimilarityStudy {
  std::vector<double> same_id_real, diff_id_real, fake_vs_source, fake_vs_target;

  GroupStats stats(const std::vector<double>& group) const { return summarize(group); }
  nlohmann::json to_json() const;
};

/// For each of up to `n_pairs` sampled fakes: a real of its source and a real
/// of its target (fake pairs), two distinct reals of the source (same-id) and
/// the source real against the target real (different-id).
PairSimilarityStudy pair_similarity_study(const idmodel::EmbeddingBackend& extractor,
                                          const DatasetManifest& manifest, const ImageStore& store,
                                          int n_pairs, std::uint64_t seed);

struct QualityPoint {
  int quality = 0;
  RocReport roc;
};

/// Re-encodes every record's image at each JPEG quality and re-scores.
std::vector<QualityPoint> jpeg_quality_sweep(const detector::Detector& det, const std::vector<SampleRecord>& records,
                                             const ImageStore& store, const std::vector<int>& qualities);

struct BudgetPoint {
  double epsilon = 0.0;
  double asr = 0.0;
  std::size_t n_attacked = 0;
  double mean_linf = 0.0;
  double mean_l2 = 0.0;           // ‖δ‖₂ per attacked image
  double mean_rms = 0.0;          // ‖δ‖₂ / √N
};

/// One ASR measurement per ε. Iterations come from the base budget and the step
/// scales as base.step_size · ε / base.epsilon (capped at ε); ε = 0 runs the
/// identity attack. Clean scores are computed once.
std::vector<BudgetPoint> budget_sweep(const detector::Detector& det, const std::vector<SampleRecord>& fakes,
                                      const std::vector<SampleRecord>& reals, const ImageStore& store,
                                      const evasion::ObjectiveFactory& factory,
                                      const evasion::AttackBudget& base, const std::vector<double>& epsilons,
                                      const evasion::AsrOptions& options = {});

struct SaliencyMap {
  int height = 0, width = 0;
  std::vector<double> values;  // row-major, max-normalized to [0,1]

  std::size_t count_above(double fraction_of_max) const;
};

/// Mean over noisy copies of |d(chosen logit − mean logit)/dx|, summed over
/// channels. The chosen class is the prediction on the clean image.
SaliencyMap smoothgrad_saliency(const idmodel::IdentificationModel& model, const FaceImage& image,
                                int n_samples = 25, double sigma = 0.1, std::uint64_t seed = 0);

struct EmbeddingRow {
  std::string sample_id;
  bool is_fake = false;
  std::string identity, source_id, target_id;
  std::vector<double> embedding;  // unit norm
};

std::vector<EmbeddingRow> export_embeddings(const idmodel::EmbeddingBackend& extractor,
                                            const std::vector<SampleRecord>& records, const ImageStore& store);
void write_embeddings(const std::vector<EmbeddingRow>& rows, std::ostream& out);

/// Hex FNV-1a of the compact JSON dump.
std::string config_hash(const nlohmann::json& config);

}  // namespace idpf::evalkit
