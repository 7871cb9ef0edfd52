// Acceptance suite: one PASS/FAIL line per criterion. Shared fixtures (the
// benchmark, pretrained extractors, trained detectors) are built lazily and
// extractors are cached on disk so repeated runs skip pretraining.
//
// usage: idpf_acceptance [--cache DIR] [--only 2,6,7]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "idpf/detector.hpp"
#include "idpf/evalkit.hpp"
#include "idpf/evasion.hpp"
#include "idpf/idmodel.hpp"
#include "idpf/rng.hpp"
#include "idpf/synthfaces.hpp"
#include "idpf/zoo.hpp"

namespace fs = std::filesystem;
using namespace idpf;
using clk = std::chrono::steady_clock;

namespace {

constexpr double kEps4 = 4.0 / 255.0;
constexpr int kIters = 20;
constexpr std::size_t kMaxAttacks = 200;
constexpr std::uint64_t kBenchSeed = 7;
constexpr std::uint64_t kTrainSeed = 3;

using ModelPtr = std::shared_ptr<const idmodel::IdentificationModel>;
using BackbonePtr = std::shared_ptr<const idmodel::EmbeddingBackend>;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(clk::time_point t) { return std::chrono::duration<double>(clk::now() - t).count(); }

double auc_of(const std::vector<evalkit::ScoredSample>& s) { return evalkit::compute_auc(s); }

std::vector<evalkit::ScoredSample> only_mechanism(const std::vector<evalkit::ScoredSample>& scored,
                                                  const std::vector<SampleRecord>& records, synth::Mechanism m) {
  std::vector<evalkit::ScoredSample> out;
  for (std::size_t i = 0; i < scored.size(); ++i) {
    if (!records[i].is_fake || synth::mechanism_of(records[i]) == m) out.push_back(scored[i]);
  }
  return out;
}

/// Lazily built fixtures shared by the criteria.
class Fixtures {
 public:
  explicit Fixtures(fs::path cache) : cache_(std::move(cache)) {}

  const synth::Benchmark& bench() {
    if (!bench_) {
      synth::BenchmarkSpec spec;
      spec.seed = kBenchSeed;
      bench_ = synth::build_benchmark(spec);
    }
    return *bench_;
  }

  const std::vector<SampleRecord>& test_records() {
    if (tests_.empty()) tests_ = bench().manifest.select(Split::Test);
    return tests_;
  }

  BackbonePtr extractor(int i) {
    if (extractors_.empty()) {
      for (const auto& spec : zoo::standard_extractors()) {
        const auto t = clk::now();
        extractors_.push_back(std::make_shared<idmodel::EmbeddingBackend>(zoo::load_or_pretrain(spec, cache_)));
        std::cerr << "  extractor " << spec.name << " ready in " << seconds_since(t) << " s\n";
      }
    }
    return extractors_.at(i);
  }

  std::vector<BackbonePtr> extractors(std::initializer_list<int> idx) {
    std::vector<BackbonePtr> out;
    for (int i : idx) out.push_back(extractor(i));
    return out;
  }

  ModelPtr frozen() {
    if (!frozen_) {
      const auto t = clk::now();
      frozen_ = std::make_shared<idmodel::IdentificationModel>(
          idmodel::train_baseline(bench().manifest, bench().images, *extractor(0), {}, kTrainSeed));
      frozen_seconds_ = seconds_since(t);
    }
    return frozen_;
  }
  double frozen_seconds() const { return frozen_seconds_; }

  ModelPtr finetuned(double alpha, int n_blocks) {
    const auto key = std::make_pair(alpha, n_blocks);
    auto it = finetuned_.find(key);
    if (it == finetuned_.end()) {
      idmodel::TrainConfig cfg;
      cfg.alpha = alpha;
      cfg.n_blocks = n_blocks;
      const auto t = clk::now();
      auto m = std::make_shared<idmodel::IdentificationModel>(
          idmodel::finetune_attention(bench().manifest, bench().images, *extractor(0), cfg, kTrainSeed));
      std::cerr << "  finetune alpha=" << alpha << " blocks=" << n_blocks << " in " << seconds_since(t) << " s\n";
      it = finetuned_.emplace(key, std::move(m)).first;
    }
    return it->second;
  }
  ModelPtr finetuned() { return finetuned(idmodel::TrainConfig{}.alpha, idmodel::TrainConfig{}.n_blocks); }

  const std::vector<evalkit::ScoredSample>& clean_scores(const ModelPtr& m) {
    auto it = scores_.find(m.get());
    if (it == scores_.end()) {
      detector::SingleModelDetector det(m);
      it = scores_.emplace(m.get(), evalkit::score_samples(det, test_records(), bench().images)).first;
    }
    return it->second;
  }

  std::shared_ptr<evasion::ReferenceBank> references() {
    if (!bank_) bank_ = std::make_shared<evasion::ReferenceBank>(bench().manifest, bench().images);
    return bank_;
  }

  evasion::ObjectiveFactory embed_objective(std::vector<BackbonePtr> zs) {
    auto bank = references();
    return [zs = std::move(zs), bank](const SampleRecord& r, const FaceImage&) {
      return std::make_unique<evasion::EmbedDistanceObjective>(zs, bank->reference(*r.source_id));
    };
  }

  /// Every adversarial output seen by any attack is checked against its
  /// budget; violations are counted for the feasibility criterion.
  evasion::AttackFn checked(evasion::AttackFn inner, double eps) {
    return [this, inner = std::move(inner), eps](const SampleRecord& r, const FaceImage& x) {
      auto res = inner(r, x);
      ++attacked_outputs_;
      const bool ok = res.best.in_unit_range() && res.adversarial.in_unit_range() &&
                      linf_distance(res.best, x) <= eps * (1.0 + 1e-12) &&
                      linf_distance(res.adversarial, x) <= eps * (1.0 + 1e-12);
      if (!ok) ++violations_;
      return res;
    };
  }

  evasion::AsrReport asr(const ModelPtr& m, const std::vector<BackbonePtr>& zs) {
    evasion::AttackBudget budget;
    budget.epsilon = kEps4;
    budget.iterations = kIters;
    budget.step_size = 1.0 / 255.0;
    detector::SingleModelDetector det(m);
    std::vector<double> fake_scores, real_scores;
    std::vector<SampleRecord> fakes;
    const auto& scored = clean_scores(m);
    for (std::size_t i = 0; i < scored.size(); ++i) {
      if (scored[i].is_fake) {
        fakes.push_back(test_records()[i]);
        fake_scores.push_back(scored[i].score);
      } else {
        real_scores.push_back(scored[i].score);
      }
    }
    const auto attack = checked(evasion::make_bim_attack(embed_objective(zs), budget), budget.epsilon);
    return evasion::measure_asr_prescored(det, fakes, fake_scores, real_scores, bench().images, attack,
                                          {kMaxAttacks});
  }

  std::size_t attacked_outputs() const { return attacked_outputs_; }
  std::size_t violations() const { return violations_; }

 private:
  fs::path cache_;
  std::optional<synth::Benchmark> bench_;
  std::vector<SampleRecord> tests_;
  std::vector<BackbonePtr> extractors_;
  ModelPtr frozen_;
  double frozen_seconds_ = 0.0;
  std::map<std::pair<double, int>, ModelPtr> finetuned_;
  std::map<const void*, std::vector<evalkit::ScoredSample>> scores_;
  std::shared_ptr<evasion::ReferenceBank> bank_;
  std::size_t attacked_outputs_ = 0, violations_ = 0;
};

// ------------------------------------------------------------------ criteria

double brute_auc(const std::vector<evalkit::ScoredSample>& s) {
  double wins = 0.0;
  std::size_t pairs = 0;
  for (const auto& r : s) {
    if (r.is_fake) continue;
    for (const auto& f : s) {
      if (!f.is_fake) continue;
      ++pairs;
      wins += r.score > f.score ? 1.0 : (r.score == f.score ? 0.5 : 0.0);
    }
  }
  return wins / static_cast<double>(pairs);
}

/// Scan every threshold that separates distinct scores (plus both infinities)
/// and count errors directly.
evalkit::EerResult brute_eer(const std::vector<evalkit::ScoredSample>& s) {
  std::vector<double> v;
  for (const auto& x : s) v.push_back(x.score);
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  std::vector<double> cands{-std::numeric_limits<double>::infinity()};
  for (std::size_t i = 0; i + 1 < v.size(); ++i) cands.push_back(v[i] * 0.5 + v[i + 1] * 0.5);
  cands.push_back(std::numeric_limits<double>::infinity());
  evalkit::EerResult best;
  double best_gap = std::numeric_limits<double>::infinity();
  for (double t : cands) {
    double nr = 0, nf = 0, fn = 0, fp = 0;
    for (const auto& x : s) {
      if (x.is_fake) {
        ++nf;
        if (x.score >= t) ++fp;
      } else {
        ++nr;
        if (x.score < t) ++fn;
      }
    }
    const double fpr = fp / nf, fnr = fn / nr;
    if (std::abs(fpr - fnr) < best_gap) {
      best_gap = std::abs(fpr - fnr);
      best = {t, 0.5 * (fpr + fnr), fpr, fnr};
    }
  }
  return best;
}

Outcome c1_oracles(Fixtures&) {
  const auto t = clk::now();
  Rng rng = make_rng(2024, "acceptance_oracles");
  std::uniform_int_distribution<int> size(2, 1000), levels(2, 50);
  int auc_bad = 0, eer_bad = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = size(rng);
    const bool coarse = trial % 2 == 0;  // coarse grids force heavy ties
    const int q = levels(rng);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<evalkit::ScoredSample> s(n);
    for (int i = 0; i < n; ++i) {
      s[i].is_fake = i == 0 ? true : (i == 1 ? false : u(rng) < 0.5);
      const double shift = s[i].is_fake ? 0.0 : 0.2;
      double v = u(rng) + shift;
      if (coarse) v = std::round(v * q) / q;
      s[i].score = v;
    }
    const double gap = std::abs(evalkit::compute_auc(s) - brute_auc(s));
    worst = std::max(worst, gap);
    if (gap > 1e-9) ++auc_bad;
    const auto a = evalkit::compute_eer_threshold(s);
    const auto b = brute_eer(s);
    if (a.threshold != b.threshold || a.fpr != b.fpr || a.fnr != b.fnr) ++eer_bad;
  }
  const double secs = seconds_since(t);
  return {auc_bad == 0 && eer_bad == 0 && secs < 60.0,
          fmt("200 sets: max |auc diff| %.2e, auc mismatches %d, eer mismatches %d, %.1f s", worst, auc_bad,
              eer_bad, secs)};
}

Outcome c2_detection(Fixtures& fx) {
  fx.frozen();
  const auto t = clk::now();
  const double auc = auc_of(fx.clean_scores(fx.frozen()));
  const double secs = fx.frozen_seconds() + seconds_since(t);
  return {auc >= 0.95 && secs < 600.0,
          fmt("frozen max-prob AUC %.4f (need >= 0.95), train+score %.1f s", auc, secs)};
}

Outcome c3_cross_mechanism(Fixtures& fx) {
  const auto& scored = fx.clean_scores(fx.frozen());
  const double a = auc_of(only_mechanism(scored, fx.test_records(), synth::Mechanism::LatentBlend));
  const double b = auc_of(only_mechanism(scored, fx.test_records(), synth::Mechanism::MaskedPixelBlend));
  return {std::abs(a - b) <= 0.05, fmt("latent_blend %.4f, masked_pixel_blend %.4f, gap %.2f points", a, b,
                                       100.0 * std::abs(a - b))};
}

Outcome c4_cross_quality(Fixtures& fx) {
  detector::SingleModelDetector det(fx.frozen());
  const auto sweep = evalkit::jpeg_quality_sweep(det, fx.test_records(), fx.bench().images, {90, 20});
  const double drop = sweep[0].roc.auc - sweep[1].roc.auc;
  return {drop <= 0.02, fmt("AUC QF90 %.4f, QF20 %.4f, drop %.2f points", sweep[0].roc.auc, sweep[1].roc.auc,
                            100.0 * drop)};
}

Outcome c5_pair_similarity(Fixtures& fx) {
  const auto st = evalkit::pair_similarity_study(*fx.extractor(0), fx.bench().manifest, fx.bench().images, 1000, 5);
  const auto same = evalkit::summarize(st.same_id_real), diff = evalkit::summarize(st.diff_id_real);
  const auto src = evalkit::summarize(st.fake_vs_source), tgt = evalkit::summarize(st.fake_vs_target);
  auto gap_ok = [](const evalkit::GroupStats& hi, const evalkit::GroupStats& lo) {
    return hi.mean - lo.mean >= 3.0 * std::hypot(hi.stderr_mean, lo.stderr_mean);
  };
  const bool ok = gap_ok(same, src) && gap_ok(src, diff) && gap_ok(tgt, diff);
  return {ok && same.n >= 1000, fmt("n=%zu same %.3f > fake-src %.3f > diff %.3f; fake-tgt %.3f > diff", same.n,
                                    same.mean, src.mean, diff.mean, tgt.mean)};
}

Outcome c6_transfer(Fixtures& fx) {
  const auto same = fx.asr(fx.frozen(), fx.extractors({0}));
  const auto disjoint = fx.asr(fx.frozen(), fx.extractors({1, 2, 3}));
  return {same.asr >= 0.80 && disjoint.asr < same.asr,
          fmt("same-extractor ASR %.3f (%zu/%zu), disjoint ensemble ASR %.3f (%zu/%zu)", same.asr, same.n_evaded,
              same.n_attacked, disjoint.asr, disjoint.n_evaded, disjoint.n_attacked)};
}

Outcome c7_defense(Fixtures& fx) {
  const auto all = fx.extractors({0, 1, 2, 3});
  const auto frozen = fx.asr(fx.frozen(), all);
  const auto tuned = fx.asr(fx.finetuned(), all);
  const double auc_f = auc_of(fx.clean_scores(fx.frozen()));
  const double auc_t = auc_of(fx.clean_scores(fx.finetuned()));
  const bool ok = frozen.asr - tuned.asr >= 0.20 && auc_f - auc_t <= 0.05;
  return {ok, fmt("ensemble ASR frozen %.3f vs finetuned %.3f; clean AUC %.4f vs %.4f", frozen.asr, tuned.asr, auc_f,
                  auc_t)};
}

Outcome c8_ablation(Fixtures& fx) {
  const idmodel::TrainConfig d;
  const auto both = fx.finetuned(d.alpha, d.n_blocks);
  const auto mask_only = fx.finetuned(0.0, d.n_blocks);
  const auto ls_only = fx.finetuned(d.alpha, 0);
  const double auc_both = auc_of(fx.clean_scores(both)), auc_mask = auc_of(fx.clean_scores(mask_only));
  const auto all = fx.extractors({0, 1, 2, 3});
  const double asr_both = fx.asr(both, all).asr, asr_ls = fx.asr(ls_only, all).asr;
  return {auc_mask < auc_both && asr_ls > asr_both,
          fmt("clean AUC mask-only %.4f < mask+LS %.4f; ASR LS-only %.3f > mask+LS %.3f", auc_mask, auc_both, asr_ls,
              asr_both)};
}

Outcome c9_scalability(Fixtures& fx) {
  synth::BenchmarkSpec spec;
  spec.n_ids = 100;
  spec.seed = kBenchSeed + 100;
  const auto bench = synth::build_benchmark(spec);
  const auto& z = *fx.extractor(0);
  auto single = std::make_shared<idmodel::IdentificationModel>(
      idmodel::train_baseline(bench.manifest, bench.images, z, {}, kTrainSeed));
  std::vector<ModelPtr> groups;
  for (const auto& ids : detector::partition_identities(bench.manifest.identity_set(), 2)) {
    std::vector<SampleRecord> recs;
    for (const auto& r : bench.manifest.select(Split::Train)) {
      if (ids.contains(*r.identity)) recs.push_back(r);
    }
    groups.push_back(std::make_shared<idmodel::IdentificationModel>(
        idmodel::train_baseline(DatasetManifest(recs, ids), bench.images, z, {}, kTrainSeed)));
  }
  const auto tests = bench.manifest.select(Split::Test);
  detector::SingleModelDetector one(single);
  detector::SubsetSplitDetector split(groups);
  const double a = auc_of(evalkit::score_samples(one, tests, bench.images));
  const double b = auc_of(evalkit::score_samples(split, tests, bench.images));
  return {std::abs(a - b) <= 0.02, fmt("100 ids: single-model AUC %.4f, two-group split AUC %.4f", a, b)};
}

Outcome c10_feasibility(Fixtures& fx) {
  evasion::AttackBudget base;
  base.epsilon = kEps4;
  base.iterations = kIters;
  base.step_size = 1.0 / 255.0;
  detector::SingleModelDetector det(fx.frozen());
  const auto fakes = fx.bench().manifest.fakes();
  const auto reals = fx.bench().manifest.reals(Split::Test);
  const auto sweep = evalkit::budget_sweep(det, fakes, reals, fx.bench().images, fx.embed_objective(fx.extractors({0})),
                                           base, {1e-12, 4 / 255.0, 8 / 255.0, 16 / 255.0, 32 / 255.0}, {kMaxAttacks});
  bool monotone = true;
  std::ostringstream trend;
  for (std::size_t i = 0; i < sweep.size(); ++i) {
    trend << (i ? " " : "") << fmt("%.3f", sweep[i].asr);
    if (sweep[i].mean_linf > sweep[i].epsilon * (1.0 + 1e-12)) monotone = false;
    if (i >= 2 && sweep[i].asr < sweep[i - 1].asr) monotone = false;
  }
  // Direct box/ball check on every output produced by the other criteria plus a fresh batch.
  fx.asr(fx.frozen(), fx.extractors({1}));
  const bool feasible = fx.violations() == 0 && fx.attacked_outputs() > 0;
  return {feasible && sweep[0].asr == 0.0 && monotone,
          fmt("%zu outputs, %zu violations; ASR at eps {1e-12,4/255,8/255,16/255,32/255}: %s", fx.attacked_outputs(),
              fx.violations(), trend.str().c_str())};
}

Outcome c11_gradients(Fixtures&) {
  idmodel::BackboneArch arch;
  arch.input = {16, 16, 3};
  arch.widths = {4, 6};
  arch.embed_dim = 8;
  const idmodel::EmbeddingBackend z(arch, 99);
  Rng rng = make_rng(99, "fd_check");
  std::uniform_real_distribution<double> u(0.2, 0.8), w(-1.0, 1.0);
  FaceImage x(arch.input);
  for (double& p : x.pixels()) p = u(rng);
  std::vector<double> dir(arch.embed_dim);
  for (double& v : dir) v = w(rng);
  auto loss = [&](const FaceImage& img) {
    const auto e = z.embed(img);
    return std::inner_product(e.begin(), e.end(), dir.begin(), 0.0);
  };
  const auto g = z.input_gradient(x, dir);
  std::uniform_int_distribution<std::size_t> pick(0, x.size() - 1);
  double worst = 0.0;
  const double h = 1e-6;
  for (int i = 0; i < 10; ++i) {
    const std::size_t p = pick(rng);
    FaceImage a = x, b = x;
    a.pixels()[p] += h;
    b.pixels()[p] -= h;
    const double fd = (loss(a) - loss(b)) / (2 * h);
    const double rel = std::abs(fd - g[p]) / std::max(std::abs(fd) + std::abs(g[p]), 1e-8);
    worst = std::max(worst, rel);
  }
  return {worst <= 1e-3, fmt("max relative error %.2e over 10 pixels", worst)};
}

Outcome c12_saliency(Fixtures& fx) {
  double sum_f = 0.0, sum_t = 0.0;
  const auto& tests = fx.test_records();
  const auto frozen = fx.frozen();
  const auto tuned = fx.finetuned();
  for (int i = 0; i < 50; ++i) {
    const auto img = fx.bench().images.get(tests[i].image_ref);
    sum_f += static_cast<double>(evalkit::smoothgrad_saliency(*frozen, img, 25, 0.1, i).count_above(0.2));
    sum_t += static_cast<double>(evalkit::smoothgrad_saliency(*tuned, img, 25, 0.1, i).count_above(0.2));
  }
  return {sum_t > sum_f, fmt("mean pixels above 0.2 of max: frozen %.1f, finetuned %.1f", sum_f / 50, sum_t / 50)};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path cache = fs::temp_directory_path() / "idpf_zoo";
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--cache" && i + 1 < argc) {
      cache = argv[++i];
    } else if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string tok; std::getline(ss, tok, ',');) only.insert(std::stoi(tok));
    } else {
      std::cerr << "usage: idpf_acceptance [--cache DIR] [--only 1,2,...]\n";
      return 2;
    }
  }
  fs::create_directories(cache);
  Fixtures fx(cache);

  const std::vector<std::pair<std::string, std::function<Outcome(Fixtures&)>>> criteria{
      {"oracle equivalence", c1_oracles},        {"detection power", c2_detection},
      {"cross-manipulation", c3_cross_mechanism}, {"cross-quality", c4_cross_quality},
      {"pair-similarity ordering", c5_pair_similarity}, {"attack transfer gap", c6_transfer},
      {"defense effect", c7_defense},            {"ablation direction", c8_ablation},
      {"identity scalability", c9_scalability},  {"attack feasibility", c10_feasibility},
      {"gradient correctness", c11_gradients},   {"saliency expansion", c12_saliency},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    const auto t = clk::now();
    Outcome o;
    try {
      o = criteria[i].second(fx);
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << id << "] " << criteria[i].first << ": " << o.detail
              << fmt(" (%.1f s)", seconds_since(t)) << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
