#include "idpf/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <ostream>
#include <random>

#include "idpf/error.hpp"
#include "idpf/rng.hpp"

namespace idpf::evalkit {

namespace {

void require_both_classes(std::span<const ScoredSample> samples, std::size_t& n_real, std::size_t& n_fake) {
  n_real = n_fake = 0;
  for (const auto& s : samples) {
    if (!std::isfinite(s.score)) fail(ErrorCode::InvalidRange, "non-finite score for " + s.sample_id);
    (s.is_fake ? n_fake : n_real)++;
  }
  if (n_real == 0 || n_fake == 0) fail(ErrorCode::SingleClassOnly, "need at least one real and one fake");
}

std::vector<ScoredSample> sorted_by_score(std::span<const ScoredSample> samples) {
  std::vector<ScoredSample> v(samples.begin(), samples.end());
  std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.score < b.score; });
  return v;
}

double midpoint(double a, double b) { return a * 0.5 + b * 0.5; }

}  // namespace

double compute_auc(std::span<const ScoredSample> samples) {
  std::size_t nr = 0, nf = 0;
  require_both_classes(samples, nr, nf);
  const auto v = sorted_by_score(samples);
  // Twice the count of (real above fake) pairs plus tied pairs, kept integral.
  std::uint64_t twice = 0, fakes_below = 0;
  for (std::size_t i = 0; i < v.size();) {
    std::size_t j = i;
    std::uint64_t r = 0, f = 0;
    while (j < v.size() && v[j].score == v[i].score) {
      (v[j].is_fake ? f : r)++;
      ++j;
    }
    twice += 2 * r * fakes_below + r * f;
    fakes_below += f;
    i = j;
  }
  return static_cast<double>(twice) / (2.0 * static_cast<double>(nr) * static_cast<double>(nf));
}

EerResult compute_eer_threshold(std::span<const ScoredSample> samples) {
  std::size_t nr = 0, nf = 0;
  require_both_classes(samples, nr, nf);
  const auto v = sorted_by_score(samples);
  // At threshold t: reals rejected = reals with score < t, fakes accepted = fakes with score >= t.
  EerResult best;
  double best_gap = std::numeric_limits<double>::infinity();
  std::size_t reals_below = 0, fakes_below = 0;
  auto consider = [&](double t) {
    const double fnr = static_cast<double>(reals_below) / static_cast<double>(nr);
    const double fpr = static_cast<double>(nf - fakes_below) / static_cast<double>(nf);
    const double gap = std::abs(fpr - fnr);
    if (gap < best_gap) {
      best_gap = gap;
      best = {t, (fpr + fnr) / 2.0, fpr, fnr};
    }
  };
  consider(-std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < v.size();) {
    std::size_t j = i;
    while (j < v.size() && v[j].score == v[i].score) {
      (v[j].is_fake ? fakes_below : reals_below)++;
      ++j;
    }
    consider(j < v.size() ? midpoint(v[i].score, v[j].score) : std::numeric_limits<double>::infinity());
    i = j;
  }
  return best;
}

RocReport compute_roc(std::span<const ScoredSample> samples) {
  std::size_t nr = 0, nf = 0;
  require_both_classes(samples, nr, nf);
  const auto v = sorted_by_score(samples);
  RocReport roc;
  std::size_t reals_below = 0, fakes_below = 0;
  auto push = [&](double t) {
    roc.thresholds.push_back(t);
    roc.tpr.push_back(static_cast<double>(nr - reals_below) / static_cast<double>(nr));
    roc.fpr.push_back(static_cast<double>(nf - fakes_below) / static_cast<double>(nf));
  };
  push(-std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < v.size();) {
    std::size_t j = i;
    while (j < v.size() && v[j].score == v[i].score) {
      (v[j].is_fake ? fakes_below : reals_below)++;
      ++j;
    }
    push(j < v.size() ? midpoint(v[i].score, v[j].score) : std::numeric_limits<double>::infinity());
    i = j;
  }
  roc.auc = compute_auc(samples);
  const auto eer = compute_eer_threshold(samples);
  roc.eer_threshold = eer.threshold;
  roc.eer = eer.eer;
  return roc;
}

nlohmann::json RocReport::summary() const {
  return {{"auc", auc}, {"eer", eer}, {"eer_threshold", eer_threshold}, {"n_points", thresholds.size()}};
}

void RocReport::write_csv(std::ostream& out) const {
  out << "threshold,fpr,tpr\n";
  char buf[96];
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", thresholds[i], fpr[i], tpr[i]);
    out << buf;
  }
}

std::vector<ScoredSample> score_samples(const detector::Detector& det, const std::vector<SampleRecord>& records,
                                        const ImageStore& store) {
  std::vector<ScoredSample> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back({r.image_ref, r.is_fake, det.detect(store.load(r.image_ref)).value});
  return out;
}

GroupStats summarize(std::span<const double> values) {
  GroupStats g;
  g.n = values.size();
  if (g.n == 0) return g;
  double s = 0.0;
  for (double v : values) s += v;
  g.mean = s / static_cast<double>(g.n);
  if (g.n > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - g.mean) * (v - g.mean);
    g.stddev = std::sqrt(ss / static_cast<double>(g.n - 1));
    g.stderr_mean = g.stddev / std::sqrt(static_cast<double>(g.n));
  }
  return g;
}

nlohmann::json PairSimilarityStudy::to_json() const {
  auto group = [](const std::vector<double>& v) {
    const auto g = summarize(v);
    return nlohmann::json{{"n", g.n}, {"mean", g.mean}, {"stddev", g.stddev}, {"stderr", g.stderr_mean}};
  };
  return {{"same_id_real", group(same_id_real)},
          {"diff_id_real", group(diff_id_real)},
          {"fake_vs_source", group(fake_vs_source)},
          {"fake_vs_target", group(fake_vs_target)}};
}

PairSimilarityStudy pair_similarity_study(const idmodel::EmbeddingBackend& extractor,
                                          const DatasetManifest& manifest, const ImageStore& store,
                                          int n_pairs, std::uint64_t seed) {
  std::map<std::string, std::vector<const SampleRecord*>> reals;
  std::vector<const SampleRecord*> fakes;
  for (const auto& r : manifest.records()) {
    if (r.is_fake) {
      fakes.push_back(&r);
    } else {
      reals[*r.identity].push_back(&r);
    }
  }
  Rng rng = make_rng(seed, "pair_similarity");
  std::shuffle(fakes.begin(), fakes.end(), rng);
  if (n_pairs >= 0 && fakes.size() > static_cast<std::size_t>(n_pairs)) fakes.resize(n_pairs);

  std::map<std::string, std::vector<double>> cache;
  auto embedding = [&](const SampleRecord* r) -> const std::vector<double>& {
    auto it = cache.find(r->image_ref);
    if (it == cache.end()) it = cache.emplace(r->image_ref, extractor.embed(store.load(r->image_ref))).first;
    return it->second;
  };
  auto pick = [&](const std::string& id, std::size_t min_count) -> const std::vector<const SampleRecord*>& {
    auto it = reals.find(id);
    if (it == reals.end() || it->second.size() < min_count) fail(ErrorCode::MissingCounterpart, id);
    return it->second;
  };
  auto sim = [](const std::vector<double>& a, const std::vector<double>& b) {
    return 1.0 - evasion::cosine_distance(a, b);
  };

  PairSimilarityStudy study;
  for (const SampleRecord* f : fakes) {
    const auto& src = pick(*f->source_id, 2);
    const auto& tgt = pick(*f->target_id, 1);
    std::uniform_int_distribution<std::size_t> us(0, src.size() - 1), ut(0, tgt.size() - 1);
    const std::size_t a = us(rng);
    std::size_t b = us(rng);
    while (b == a) b = us(rng);
    const SampleRecord* t = tgt[ut(rng)];
    const auto& ef = embedding(f);
    study.fake_vs_source.push_back(sim(ef, embedding(src[a])));
    study.fake_vs_target.push_back(sim(ef, embedding(t)));
    study.same_id_real.push_back(sim(embedding(src[a]), embedding(src[b])));
    study.diff_id_real.push_back(sim(embedding(src[a]), embedding(t)));
  }
  return study;
}

std::vector<QualityPoint> jpeg_quality_sweep(const detector::Detector& det, const std::vector<SampleRecord>& records,
                                             const ImageStore& store, const std::vector<int>& qualities) {
  for (int q : qualities) {
    if (q < 1 || q > 100) fail(ErrorCode::InvalidRange, "JPEG quality " + std::to_string(q) + " outside [1,100]");
  }
  std::vector<QualityPoint> out;
  for (int q : qualities) {
    std::vector<ScoredSample> scored;
    scored.reserve(records.size());
    for (const auto& r : records) {
      scored.push_back({r.image_ref, r.is_fake, det.detect(jpeg_roundtrip(store.load(r.image_ref), q)).value});
    }
    out.push_back({q, compute_roc(scored)});
  }
  return out;
}

std::vector<BudgetPoint> budget_sweep(const detector::Detector& det, const std::vector<SampleRecord>& fakes,
                                      const std::vector<SampleRecord>& reals, const ImageStore& store,
                                      const evasion::ObjectiveFactory& factory,
                                      const evasion::AttackBudget& base, const std::vector<double>& epsilons,
                                      const evasion::AsrOptions& options) {
  const auto fake_scores = evasion::score_records(det, fakes, store);
  const auto real_scores = evasion::score_records(det, reals, store);
  std::vector<BudgetPoint> out;
  for (double eps : epsilons) {
    if (!(eps >= 0.0)) fail(ErrorCode::InvalidRange, "epsilon must be >= 0");
    evasion::AttackFn attack;
    if (eps == 0.0) {
      attack = [](const SampleRecord&, const FaceImage& x) { return evasion::identity_attack(x); };
    } else {
      evasion::AttackBudget b = base;
      b.epsilon = eps;
      // step keeps its ratio to the budget so every ε gets the same number of boundary-reaching steps
      b.step_size = std::min(base.step_size * eps / base.epsilon, eps);
      attack = evasion::make_bim_attack(factory, b);
    }
    const auto rep = evasion::measure_asr_prescored(det, fakes, fake_scores, real_scores, store, attack, options);
    BudgetPoint p;
    p.epsilon = eps;
    p.asr = rep.asr;
    p.n_attacked = rep.n_attacked;
    for (const auto& s : rep.samples) {
      p.mean_linf += s.linf;
      p.mean_l2 += s.l2;
    }
    const double n = static_cast<double>(rep.n_attacked);
    p.mean_linf /= n;
    p.mean_l2 /= n;
    const double pixels = fakes.empty() ? 1.0 : static_cast<double>(store.load(fakes.front().image_ref).size());
    p.mean_rms = p.mean_l2 / std::sqrt(pixels);
    out.push_back(p);
  }
  return out;
}

std::size_t SaliencyMap::count_above(double fraction_of_max) const {
  const double mx = values.empty() ? 0.0 : *std::max_element(values.begin(), values.end());
  if (!(mx > 0.0)) return 0;
  return static_cast<std::size_t>(
      std::count_if(values.begin(), values.end(), [&](double v) { return v > fraction_of_max * mx; }));
}

SaliencyMap smoothgrad_saliency(const idmodel::IdentificationModel& model, const FaceImage& image, int n_samples,
                                double sigma, std::uint64_t seed) {
  if (n_samples < 1 || !(sigma >= 0.0)) fail(ErrorCode::InvalidRange, "n_samples >= 1 and sigma >= 0 required");
  const auto logits = model.logits(image);
  const std::size_t k = logits.size();
  const auto chosen = static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  std::vector<double> w(k, -1.0 / static_cast<double>(k));
  w[chosen] += 1.0;

  const int h = image.height(), wd = image.width();
  const std::size_t plane = static_cast<std::size_t>(h) * wd;
  SaliencyMap map{h, wd, std::vector<double>(plane, 0.0)};
  Rng rng = make_rng(seed, "smoothgrad");
  std::normal_distribution<double> noise(0.0, sigma > 0.0 ? sigma : 1.0);
  for (int s = 0; s < n_samples; ++s) {
    FaceImage x = image;
    if (sigma > 0.0) {
      for (double& p : x.pixels()) p += noise(rng);
    }
    const auto g = model.input_gradient_of_logits(x, w);
    for (int c = 0; c < image.channels(); ++c) {
      for (std::size_t i = 0; i < plane; ++i) map.values[i] += std::abs(g[c * plane + i]);
    }
  }
  double mx = 0.0;
  for (double v : map.values) {
    if (!std::isfinite(v)) fail(ErrorCode::NonDifferentiableBackend, "non-finite saliency");
    mx = std::max(mx, v);
  }
  if (mx > 0.0) {
    for (double& v : map.values) v /= mx;
  }
  return map;
}

std::vector<EmbeddingRow> export_embeddings(const idmodel::EmbeddingBackend& extractor,
                                            const std::vector<SampleRecord>& records, const ImageStore& store) {
  std::vector<EmbeddingRow> rows;
  rows.reserve(records.size());
  for (const auto& r : records) {
    const auto e = extractor.embed(store.load(r.image_ref));
    if (!(nn::l2_norm(e) > 0.0)) fail(ErrorCode::ZeroVector, "zero embedding for " + r.image_ref);
    rows.push_back({r.image_ref, r.is_fake, r.identity.value_or(""), r.source_id.value_or(""),
                    r.target_id.value_or(""), nn::l2_normalize(e)});
  }
  return rows;
}

void write_embeddings(const std::vector<EmbeddingRow>& rows, std::ostream& out) {
  out << "sample_id,is_fake,identity,source_id,target_id";
  const std::size_t d = rows.empty() ? 0 : rows.front().embedding.size();
  for (std::size_t i = 0; i < d; ++i) out << ",e" << i;
  out << '\n';
  char buf[32];
  for (const auto& r : rows) {
    out << r.sample_id << ',' << (r.is_fake ? 1 : 0) << ',' << r.identity << ',' << r.source_id << ','
        << r.target_id;
    for (double v : r.embedding) {
      std::snprintf(buf, sizeof buf, ",%.17g", v);
      out << buf;
    }
    out << '\n';
  }
}

std::string config_hash(const nlohmann::json& config) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : config.dump()) h = (h ^ c) * 0x100000001B3ULL;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace idpf::evalkit
