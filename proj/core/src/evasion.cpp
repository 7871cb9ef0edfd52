#include "idpf/evasion.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include "idpf/error.hpp"
#include "idpf/evalkit.hpp"

namespace idpf::evasion {

std::string_view to_string(NormOrder n) { return n == NormOrder::Linf ? "inf" : "2"; }

NormOrder parse_norm(std::string_view s) {
  if (s == "inf" || s == "linf" || s == "Linf") return NormOrder::Linf;
  if (s == "2" || s == "l2" || s == "L2") return NormOrder::L2;
  fail(ErrorCode::ConfigInvalid, "unknown norm order " + std::string(s));
}

namespace {

double parse_number(std::string_view s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    fail(ErrorCode::ConfigInvalid, "not a number: '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace

double parse_fraction(std::string_view text) {
  const auto slash = text.find('/');
  if (slash == std::string_view::npos) return parse_number(text);
  const double num = parse_number(text.substr(0, slash));
  const double den = parse_number(text.substr(slash + 1));
  if (den == 0.0) fail(ErrorCode::ConfigInvalid, "zero denominator in '" + std::string(text) + "'");
  return num / den;
}

void AttackBudget::validate() const {
  if (!(epsilon > 0.0)) fail(ErrorCode::ConfigInvalid, "epsilon must be > 0");
  if (iterations < 1) fail(ErrorCode::ConfigInvalid, "iterations must be >= 1");
  if (!(step_size > 0.0)) fail(ErrorCode::ConfigInvalid, "step_size must be > 0");
  if (step_size > epsilon * (1.0 + 1e-12)) fail(ErrorCode::ConfigInvalid, "step_size must be <= epsilon");
}

nlohmann::json AttackBudget::to_json() const {
  return {{"norm_order", std::string(to_string(norm))},
          {"epsilon", epsilon},
          {"iterations", iterations},
          {"step_size", step_size}};
}

AttackBudget AttackBudget::from_json(const nlohmann::json& j) {
  AttackBudget b;
  auto number = [](const nlohmann::json& v) {
    return v.is_string() ? parse_fraction(v.get<std::string>()) : v.get<double>();
  };
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "norm_order") {
        b.norm = parse_norm(v.is_string() ? v.get<std::string>() : std::to_string(v.get<int>()));
      } else if (key == "epsilon") {
        b.epsilon = number(v);
      } else if (key == "iterations") {
        b.iterations = v.get<int>();
      } else if (key == "step_size") {
        b.step_size = number(v);
      } else {
        fail(ErrorCode::ConfigInvalid, "unknown attack budget field " + key);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ConfigInvalid, e.what());
  }
  b.validate();
  return b;
}

MaxProbObjective::MaxProbObjective(std::shared_ptr<const idmodel::IdentificationModel> model)
    : model_(std::move(model)) {
  if (!model_) fail(ErrorCode::ConfigInvalid, "max_prob objective needs a model");
}

double MaxProbObjective::value(const FaceImage& x) const {
  const auto p = model_->predict(x).probs;
  return *std::max_element(p.begin(), p.end());
}

double MaxProbObjective::value_and_gradient(const FaceImage& x, std::vector<double>& grad) const {
  auto [dist, g] = model_->max_prob_gradient(x);
  grad = std::move(g);
  return *std::max_element(dist.probs.begin(), dist.probs.end());
}

double cosine_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) fail(ErrorCode::ShapeMismatch, "embedding dimensions differ");
  const double na = nn::l2_norm(a), nb = nn::l2_norm(b);
  if (!(na > 0.0) || !(nb > 0.0)) fail(ErrorCode::ZeroVector, "cosine distance of a zero embedding");
  double dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += (a[i] / na) * (b[i] / nb);
  return 1.0 - dot;
}

double embed_distance(const idmodel::EmbeddingBackend& z, const FaceImage& a, const FaceImage& b) {
  return cosine_distance(z.embed(a), z.embed(b));
}

double ensemble_objective(const std::vector<std::shared_ptr<const idmodel::EmbeddingBackend>>& extractors,
                          const FaceImage& x, const FaceImage& reference) {
  if (extractors.empty()) fail(ErrorCode::ConfigInvalid, "ensemble objective needs an extractor");
  double s = 0.0;
  for (const auto& z : extractors) s += embed_distance(*z, x, reference);
  return s;
}

EmbedDistanceObjective::EmbedDistanceObjective(
    std::vector<std::shared_ptr<const idmodel::EmbeddingBackend>> extractors, const FaceImage& reference)
    : extractors_(std::move(extractors)) {
  if (extractors_.empty()) fail(ErrorCode::ConfigInvalid, "embedding objective needs an extractor");
  for (const auto& z : extractors_) {
    const auto e = z->embed(reference);
    if (!(nn::l2_norm(e) > 0.0)) fail(ErrorCode::ZeroVector, "reference embedding is zero");
    references_.push_back(nn::l2_normalize(e));
  }
}

double EmbedDistanceObjective::value(const FaceImage& x) const {
  double s = 0.0;
  for (std::size_t k = 0; k < extractors_.size(); ++k) {
    s += cosine_distance(extractors_[k]->embed(x), references_[k]);
  }
  return s;
}

double EmbedDistanceObjective::value_and_gradient(const FaceImage& x, std::vector<double>& grad) const {
  grad.assign(x.size(), 0.0);
  double s = 0.0;
  for (std::size_t k = 0; k < extractors_.size(); ++k) {
    const auto trace = extractors_[k]->forward(x);
    const auto& e = trace.embedding;
    const double n = nn::l2_norm(e);
    if (!(n > 0.0)) fail(ErrorCode::ZeroVector, "embedding of the attacked image is zero");
    std::vector<double> unit(e.size());
    double dot = 0.0;
    for (std::size_t i = 0; i < e.size(); ++i) {
      unit[i] = e[i] / n;
      dot += unit[i] * references_[k][i];
    }
    s += 1.0 - dot;
    std::vector<double> dunit(e.size());
    for (std::size_t i = 0; i < e.size(); ++i) dunit[i] = -references_[k][i];
    const auto de = nn::l2_normalize_backward(unit, n, dunit);
    const auto g = extractors_[k]->backward(trace, de, nullptr, true);
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += g[i];
  }
  return s;
}

std::string EmbedDistanceObjective::describe() const {
  return extractors_.size() == 1 ? "embed_distance" : "ensemble_embed_" + std::to_string(extractors_.size());
}

namespace {

void project(std::span<double> x, std::span<const double> x0, const AttackBudget& b) {
  if (b.norm == NormOrder::Linf) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = std::clamp(std::clamp(x[i], x0[i] - b.epsilon, x0[i] + b.epsilon), 0.0, 1.0);
    }
    return;
  }
  double n2 = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) n2 += (x[i] - x0[i]) * (x[i] - x0[i]);
  const double n = std::sqrt(n2);
  const double scale = n > b.epsilon ? b.epsilon / n : 1.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = std::clamp(x0[i] + (x[i] - x0[i]) * scale, 0.0, 1.0);
  }
}

}  // namespace

AttackResult bim_attack(const FaceImage& x0, const AttackObjective& objective, const AttackBudget& budget) {
  budget.validate();
  if (!objective.differentiable()) {
    fail(ErrorCode::NonDifferentiableObjective, objective.describe() + " has no input gradient");
  }
  const double dir = objective.ascent() ? 1.0 : -1.0;
  AttackResult r;
  FaceImage x = x0;
  std::vector<double> grad;
  auto better = [&](double v) { return objective.ascent() ? v > r.best_objective : v < r.best_objective; };
  for (int t = 0; t < budget.iterations; ++t) {
    const double v = objective.value_and_gradient(x, grad);
    if (grad.size() != x.size()) fail(ErrorCode::NonDifferentiableObjective, "gradient size mismatch");
    r.objective_trace.push_back(v);
    if (t == 0 || better(v)) {
      r.best_objective = v;
      r.best = x;
      r.best_iteration = t;
    }
    auto px = x.pixels();
    if (budget.norm == NormOrder::Linf) {
      for (std::size_t i = 0; i < px.size(); ++i) {
        if (!std::isfinite(grad[i])) fail(ErrorCode::NonDifferentiableObjective, "non-finite gradient");
        const double s = grad[i] > 0.0 ? 1.0 : (grad[i] < 0.0 ? -1.0 : 0.0);
        px[i] += dir * budget.step_size * s;
      }
    } else {
      const double gn = nn::l2_norm(grad);
      if (!std::isfinite(gn)) fail(ErrorCode::NonDifferentiableObjective, "non-finite gradient");
      if (gn > 0.0) {
        for (std::size_t i = 0; i < px.size(); ++i) px[i] += dir * budget.step_size * grad[i] / gn;
      }
    }
    project(px, x0.pixels(), budget);
  }
  const double v = objective.value(x);
  r.objective_trace.push_back(v);
  if (better(v)) {
    r.best_objective = v;
    r.best = x;
    r.best_iteration = budget.iterations;
  }
  r.linf_norm_of_delta = linf_distance(x, x0);
  r.adversarial = std::move(x);
  return r;
}

AttackFn make_bim_attack(ObjectiveFactory factory, AttackBudget budget) {
  budget.validate();
  return [factory = std::move(factory), budget](const SampleRecord& rec, const FaceImage& image) {
    const auto objective = factory(rec, image);
    return bim_attack(image, *objective, budget);
  };
}

AttackResult identity_attack(const FaceImage& image) {
  AttackResult r;
  r.adversarial = image;
  r.best = image;
  return r;
}

ReferenceBank::ReferenceBank(const DatasetManifest& manifest, const ImageStore& store) {
  for (const auto& rec : manifest.records()) {
    if (rec.is_fake || rec.split != Split::Test || refs_.count(*rec.identity)) continue;
    refs_.emplace(*rec.identity, store.load(rec.image_ref));
  }
}

const FaceImage& ReferenceBank::reference(const std::string& identity) const {
  auto it = refs_.find(identity);
  if (it == refs_.end()) fail(ErrorCode::MissingCounterpart, identity);
  return it->second;
}

nlohmann::json AsrReport::to_json() const {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& s : samples) {
    per.push_back({{"sample_id", s.sample_id},
                   {"pre_score", s.pre_score},
                   {"post_score", s.post_score},
                   {"evaded", s.evaded},
                   {"linf", s.linf},
                   {"l2", s.l2}});
  }
  return {{"threshold", threshold}, {"eer", eer},           {"n_fakes", n_fakes},
          {"n_detected", n_detected}, {"n_attacked", n_attacked}, {"n_evaded", n_evaded},
          {"asr", asr},             {"attack", attack},     {"samples", per}};
}

std::vector<double> score_records(const detector::Detector& det, const std::vector<SampleRecord>& records,
                                  const ImageStore& store) {
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(det.detect(store.load(r.image_ref)).value);
  return out;
}

AsrReport measure_asr_prescored(const detector::Detector& det, const std::vector<SampleRecord>& fakes,
                                const std::vector<double>& fake_scores, const std::vector<double>& real_scores,
                                const ImageStore& store, const AttackFn& attack, const AsrOptions& options) {
  if (fakes.size() != fake_scores.size()) fail(ErrorCode::ShapeMismatch, "one clean score per fake");
  std::vector<evalkit::ScoredSample> scored;
  for (std::size_t i = 0; i < fakes.size(); ++i) scored.push_back({fakes[i].image_ref, true, fake_scores[i]});
  for (std::size_t i = 0; i < real_scores.size(); ++i) scored.push_back({"real" + std::to_string(i), false, real_scores[i]});
  const auto eer = evalkit::compute_eer_threshold(scored);

  AsrReport rep;
  rep.threshold = eer.threshold;
  rep.eer = eer.eer;
  rep.n_fakes = fakes.size();
  rep.clean_real_scores = real_scores;
  std::vector<std::size_t> detected;
  for (std::size_t i = 0; i < fakes.size(); ++i) {
    if (detector::classify(fake_scores[i], rep.threshold) == detector::Verdict::Fake) detected.push_back(i);
  }
  rep.n_detected = detected.size();
  if (detected.empty()) fail(ErrorCode::NoCorrectlyDetectedFakes, "no fake scores below the EER threshold");
  if (options.max_attacks > 0 && detected.size() > options.max_attacks) detected.resize(options.max_attacks);

  for (std::size_t i : detected) {
    const FaceImage x = store.load(fakes[i].image_ref);
    const AttackResult res = attack(fakes[i], x);
    const FaceImage& adv = res.best.empty() ? res.adversarial : res.best;
    AsrSample s;
    s.sample_id = fakes[i].image_ref;
    s.pre_score = fake_scores[i];
    s.post_score = det.detect(adv).value;
    s.evaded = s.post_score > rep.threshold;
    s.linf = linf_distance(adv, x);
    s.l2 = l2_distance(adv, x);
    rep.n_evaded += s.evaded ? 1 : 0;
    rep.samples.push_back(std::move(s));
  }
  rep.n_attacked = rep.samples.size();
  rep.asr = static_cast<double>(rep.n_evaded) / static_cast<double>(rep.n_attacked);
  return rep;
}

AsrReport measure_asr(const detector::Detector& det, const std::vector<SampleRecord>& fakes,
                      const std::vector<SampleRecord>& reals, const ImageStore& store, const AttackFn& attack,
                      const AsrOptions& options) {
  return measure_asr_prescored(det, fakes, score_records(det, fakes, store), score_records(det, reals, store), store,
                               attack, options);
}

idmodel::IdentificationModel train_adaptive_surrogate(const IdentitySet& manipulator_ids,
                                                      const DatasetManifest& images, const ImageStore& store,
                                                      const idmodel::EmbeddingBackend& backbone,
                                                      const idmodel::TrainConfig& cfg, std::uint64_t seed,
                                                      int per_identity) {
  for (const auto& l : manipulator_ids.labels()) {
    if (!images.identity_set().contains(l)) fail(ErrorCode::ConfigInvalid, "surrogate identity " + l + " unknown");
  }
  std::map<std::string, int> taken;
  std::vector<SampleRecord> records;
  for (const auto& r : images.records()) {
    if (r.is_fake || r.split != Split::Test || !manipulator_ids.contains(*r.identity)) continue;
    if (taken[*r.identity] >= per_identity) continue;
    ++taken[*r.identity];
    SampleRecord t = r;
    t.split = Split::Train;
    records.push_back(std::move(t));
  }
  const DatasetManifest train(std::move(records), manipulator_ids);
  return idmodel::finetune_attention(train, store, backbone, cfg, seed);
}

}  // namespace idpf::evasion
