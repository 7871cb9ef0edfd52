#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "idpf/detector.hpp"
#include "idpf/idmodel.hpp"
#include "idpf/manifest.hpp"

namespace idpf::evasion {

enum class NormOrder { Linf, L2 };

std::string_view to_string(NormOrder n);
NormOrder parse_norm(std::string_view s);

/// Exact parse of "a/b" or a decimal literal.
double parse_fraction(std::string_view text);

struct AttackBudget {
  NormOrder norm = NormOrder::Linf;
  double epsilon = 4.0 / 255.0;
  int iterations = 20;
  double step_size = 1.0 / 255.0;

  void validate() const;
  nlohmann::json to_json() const;
  static AttackBudget from_json(const nlohmann::json& j);
};

/// A scalar function of the image that the attacker pushes up (ascent) or down.
class AttackObjective {
 public:
  virtual ~AttackObjective() = default;
  virtual bool ascent() const = 0;
  virtual bool differentiable() const { return true; }
  virtual double value(const FaceImage& x) const = 0;
  /// Writes d(value)/d(pixels) into `grad` and returns the value.
  virtual double value_and_gradient(const FaceImage& x, std::vector<double>& grad) const = 0;
  virtual std::string describe() const = 0;
};

/// Largest class probability of a surrogate identification model (ascent).
class MaxProbObjective final : public AttackObjective {
 public:
  explicit MaxProbObjective(std::shared_ptr<const idmodel::IdentificationModel> model);
  bool ascent() const override { return true; }
  double value(const FaceImage& x) const override;
  double value_and_gradient(const FaceImage& x, std::vector<double>& grad) const override;
  std::string describe() const override { return "max_prob"; }

 private:
  std::shared_ptr<const idmodel::IdentificationModel> model_;
};

/// Sum over extractors of the cosine distance to a reference real (descent).
/// One extractor is the single-extractor objective.
class EmbedDistanceObjective final : public AttackObjective {
 public:
  EmbedDistanceObjective(std::vector<std::shared_ptr<const idmodel::EmbeddingBackend>> extractors,
                         const FaceImage& reference);
  bool ascent() const override { return false; }
  double value(const FaceImage& x) const override;
  double value_and_gradient(const FaceImage& x, std::vector<double>& grad) const override;
  std::string describe() const override;

 private:
  std::vector<std::shared_ptr<const idmodel::EmbeddingBackend>> extractors_;
  std::vector<std::vector<double>> references_;  // unit-normalized reference embeddings
};

/// 1 − ⟨â, b̂⟩.
double cosine_distance(std::span<const double> a, std::span<const double> b);
double embed_distance(const idmodel::EmbeddingBackend& z, const FaceImage& a, const FaceImage& b);
double ensemble_objective(const std::vector<std::shared_ptr<const idmodel::EmbeddingBackend>>& extractors,
                          const FaceImage& x, const FaceImage& reference);

struct AttackResult {
  FaceImage adversarial;                 // final iterate
  FaceImage best;                        // best-objective iterate (x0 included)
  std::vector<double> objective_trace;   // value at x0, x1, ..., x_T
  double best_objective = 0.0;
  int best_iteration = 0;
  double linf_norm_of_delta = 0.0;       // of the final iterate
};

/// Sign-gradient steps (normalized-gradient steps for L2) with projection onto
/// the budget ball around x0 and the [0,1] box after every step.
AttackResult bim_attack(const FaceImage& x0, const AttackObjective& objective, const AttackBudget& budget);

/// Attack one fake record; returns the candidate image to be scored.
using AttackFn = std::function<AttackResult(const SampleRecord& record, const FaceImage& image)>;
using ObjectiveFactory =
    std::function<std::unique_ptr<AttackObjective>(const SampleRecord& record, const FaceImage& image)>;

AttackFn make_bim_attack(ObjectiveFactory factory, AttackBudget budget);

/// Leaves every image unchanged.
AttackResult identity_attack(const FaceImage& image);

/// First test-split real of each identity, used as the attacker's reference.
class ReferenceBank {
 public:
  ReferenceBank(const DatasetManifest& manifest, const ImageStore& store);
  const FaceImage& reference(const std::string& identity) const;

 private:
  std::map<std::string, FaceImage> refs_;
};

struct AsrOptions {
  std::size_t max_attacks = 0;  // 0 => attack every correctly detected fake
};

struct AsrSample {
  std::string sample_id;
  double pre_score = 0.0;
  double post_score = 0.0;
  bool evaded = false;
  double linf = 0.0;
  double l2 = 0.0;
};

struct AsrReport {
  double threshold = 0.0;
  double eer = 0.0;
  std::size_t n_fakes = 0;
  std::size_t n_detected = 0;   // fakes below the threshold before attack
  std::size_t n_attacked = 0;
  std::size_t n_evaded = 0;
  double asr = 0.0;
  std::vector<AsrSample> samples;
  std::vector<double> clean_real_scores;
  nlohmann::json attack;        // free-form description echoed into the report

  nlohmann::json to_json() const;
};

/// Unattacked scores of the records, in order.
std::vector<double> score_records(const detector::Detector& det, const std::vector<SampleRecord>& records,
                                  const ImageStore& store);

AsrReport measure_asr(const detector::Detector& det, const std::vector<SampleRecord>& fakes,
                      const std::vector<SampleRecord>& reals, const ImageStore& store, const AttackFn& attack,
                      const AsrOptions& options = {});

/// Same protocol with clean scores supplied by the caller.
AsrReport measure_asr_prescored(const detector::Detector& det, const std::vector<SampleRecord>& fakes,
                                const std::vector<double>& fake_scores, const std::vector<double>& real_scores,
                                const ImageStore& store, const AttackFn& attack, const AsrOptions& options = {});

/// Attention-finetuned identification model over a manipulator-chosen identity
/// subset, trained on up to `per_identity` test-split reals per identity.
idmodel::IdentificationModel train_adaptive_surrogate(const IdentitySet& manipulator_ids,
                                                      const DatasetManifest& images, const ImageStore& store,
                                                      const idmodel::EmbeddingBackend& backbone,
                                                      const idmodel::TrainConfig& cfg, std::uint64_t seed,
                                                      int per_identity = 10);

}  // namespace idpf::evasion
