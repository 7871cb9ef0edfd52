#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "idpf/error.hpp"
#include "idpf/evalkit.hpp"
#include "toy.hpp"

using namespace idpf;
using namespace idpf::evalkit;

namespace {

std::vector<ScoredSample> labelled(const std::vector<double>& reals, const std::vector<double>& fakes) {
  std::vector<ScoredSample> out;
  for (std::size_t i = 0; i < reals.size(); ++i) out.push_back({"r" + std::to_string(i), false, reals[i]});
  for (std::size_t i = 0; i < fakes.size(); ++i) out.push_back({"f" + std::to_string(i), true, fakes[i]});
  return out;
}

double auc_oracle(std::span<const ScoredSample> s) {
  double wins = 0.0, pairs = 0.0;
  for (const auto& r : s) {
    if (r.is_fake) continue;
    for (const auto& f : s) {
      if (!f.is_fake) continue;
      wins += r.score > f.score ? 1.0 : (r.score == f.score ? 0.5 : 0.0);
      pairs += 1.0;
    }
  }
  return wins / pairs;
}

/// Every candidate threshold, lowest first on ties of |FPR − FNR|.
std::pair<double, double> eer_oracle(std::span<const ScoredSample> s) {
  std::vector<double> v;
  for (const auto& x : s) v.push_back(x.score);
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  std::vector<double> cands{-INFINITY};
  for (std::size_t i = 0; i + 1 < v.size(); ++i) cands.push_back(v[i] * 0.5 + v[i + 1] * 0.5);
  cands.push_back(INFINITY);
  double best_gap = INFINITY, best_t = 0.0, best_eer = 0.0;
  for (double t : cands) {
    double fa = 0, fr = 0, nf = 0, nr = 0;
    for (const auto& x : s) {
      if (x.is_fake) {
        ++nf;
        fa += x.score >= t;
      } else {
        ++nr;
        fr += x.score < t;
      }
    }
    const double fpr = fa / nf, fnr = fr / nr;
    if (std::abs(fpr - fnr) < best_gap) {
      best_gap = std::abs(fpr - fnr);
      best_t = t;
      best_eer = (fpr + fnr) / 2.0;
    }
  }
  return {best_t, best_eer};
}

std::vector<ScoredSample> random_scores(Rng& rng, std::size_t n, int levels) {
  std::uniform_int_distribution<int> lv(0, levels);
  std::bernoulli_distribution fake(0.5);
  std::vector<ScoredSample> s;
  for (std::size_t i = 0; i < n; ++i) {
    const bool f = fake(rng);
    s.push_back({std::to_string(i), f, static_cast<double>(lv(rng) + (f ? 0 : 2))});
  }
  s.push_back({"rr", false, 3.0});
  s.push_back({"ff", true, 3.0});
  return s;
}

}  // namespace

TEST(Auc, WorkedCases) {
  EXPECT_EQ(compute_auc(labelled({0.9, 0.8}, {0.2, 0.1})), 1.0);
  EXPECT_EQ(compute_auc(labelled({0.4, 0.4, 0.4}, {0.4, 0.4})), 0.5);
  const auto six = labelled({0.3, 0.7, 0.5}, {0.5, 0.1, 0.6});
  EXPECT_DOUBLE_EQ(compute_auc(six), auc_oracle(six));
  EXPECT_THROW(compute_auc(labelled({0.1}, {})), Error);
}

TEST(Auc, MatchesPairOracleAndIsRankInvariant) {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    auto s = random_scores(rng, 50 + trial * 7, 5 + trial % 20);
    const double a = compute_auc(s);
    EXPECT_NEAR(a, auc_oracle(s), 1e-9);
    for (auto& x : s) x.score = std::exp(0.3 * x.score) - 7.0;
    EXPECT_NEAR(compute_auc(s), auc_oracle(s), 1e-9);
    EXPECT_NEAR(compute_auc(s), a, 1e-12);
  }
}

TEST(Eer, WorkedCases) {
  const auto sep = compute_eer_threshold(labelled({0.9, 0.8}, {0.3, 0.1}));
  EXPECT_EQ(sep.eer, 0.0);
  EXPECT_DOUBLE_EQ(sep.threshold, 0.55);
  const auto inter = compute_eer_threshold(labelled({0.2, 0.4}, {0.1, 0.3}));
  EXPECT_DOUBLE_EQ(inter.threshold, eer_oracle(labelled({0.2, 0.4}, {0.1, 0.3})).first);
}

TEST(Eer, MatchesExhaustiveScan) {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const auto s = random_scores(rng, 20 + trial, 3 + trial % 30);
    const auto got = compute_eer_threshold(s);
    const auto [t, e] = eer_oracle(s);
    EXPECT_EQ(got.threshold, t);
    EXPECT_DOUBLE_EQ(got.eer, e);
  }
}

TEST(Roc, MonotoneCurveConsistentWithAuc) {
  Rng rng(3);
  const auto s = random_scores(rng, 300, 40);
  const auto roc = compute_roc(s);
  ASSERT_EQ(roc.fpr.size(), roc.thresholds.size());
  for (std::size_t i = 1; i < roc.thresholds.size(); ++i) {
    EXPECT_LT(roc.thresholds[i - 1], roc.thresholds[i]);
    EXPECT_LE(roc.fpr[i], roc.fpr[i - 1]);
    EXPECT_LE(roc.tpr[i], roc.tpr[i - 1]);
  }
  double area = 0.0;  // trapezoids over fpr
  for (std::size_t i = 1; i < roc.fpr.size(); ++i)
    area += (roc.fpr[i - 1] - roc.fpr[i]) * (roc.tpr[i - 1] + roc.tpr[i]) / 2.0;
  EXPECT_NEAR(area, roc.auc, 1e-9);
  EXPECT_EQ(roc.auc, compute_auc(s));
  std::ostringstream csv;
  roc.write_csv(csv);
  EXPECT_EQ(std::ranges::count(csv.str(), '\n'), static_cast<long>(roc.thresholds.size() + 1));
}

TEST(Summarize, MeanAndStandardError) {
  const std::vector<double> v{1, 2, 3, 4};
  const auto g = summarize(v);
  EXPECT_EQ(g.n, 4u);
  EXPECT_DOUBLE_EQ(g.mean, 2.5);
  EXPECT_NEAR(g.stddev, std::sqrt(5.0 / 3.0), 1e-12);
  EXPECT_NEAR(g.stderr_mean, std::sqrt(5.0 / 3.0) / 2.0, 1e-12);
}

TEST(ConfigHash, StableAndSensitive) {
  const nlohmann::json a{{"x", 1}, {"y", "z"}};
  EXPECT_EQ(config_hash(a), config_hash(nlohmann::json::parse(a.dump())));
  EXPECT_NE(config_hash(a), config_hash({{"x", 2}, {"y", "z"}}));
  EXPECT_EQ(config_hash(a).size(), 16u);
}

class EvalFixture : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    bench_ = std::make_unique<synth::Benchmark>(toy::benchmark(3, 4, 60, 60, 6));
    model_ = std::make_shared<idmodel::IdentificationModel>(idmodel::train_baseline(
        bench_->manifest, bench_->images, idmodel::EmbeddingBackend(toy::arch(), 5), toy::quick_config(6), 5));
  }
  static void TearDownTestSuite() {
    model_.reset();
    bench_.reset();
  }
  static inline std::unique_ptr<synth::Benchmark> bench_;
  static inline std::shared_ptr<idmodel::IdentificationModel> model_;
};

TEST_F(EvalFixture, JpegSweepStructure) {
  const detector::SingleModelDetector det(model_);
  const auto tests = bench_->manifest.select(Split::Test);
  const auto before = bench_->images.images();
  const std::vector<int> qs{90, 70, 50, 30, 20};
  const auto sweep = jpeg_quality_sweep(det, tests, bench_->images, qs);
  ASSERT_EQ(sweep.size(), 5u);
  for (std::size_t i = 0; i < sweep.size(); ++i) EXPECT_EQ(sweep[i].quality, qs[i]);
  EXPECT_EQ(bench_->images.images(), before);
  EXPECT_THROW(jpeg_quality_sweep(det, tests, bench_->images, {101}), Error);
}

TEST_F(EvalFixture, BudgetSweepZeroBudgetAndDistortionBound) {
  const detector::SingleModelDetector det(model_);
  const auto z = std::make_shared<idmodel::EmbeddingBackend>(model_->backbone());
  const evasion::ReferenceBank bank(bench_->manifest, bench_->images);
  const evasion::ObjectiveFactory factory = [&](const SampleRecord& r, const FaceImage&) {
    return std::make_unique<evasion::EmbedDistanceObjective>(
        std::vector<std::shared_ptr<const idmodel::EmbeddingBackend>>{z}, bank.reference(*r.source_id));
  };
  const auto pts = budget_sweep(det, bench_->manifest.fakes(), bench_->manifest.reals(Split::Test), bench_->images,
                                factory, evasion::AttackBudget{}, {0.0, 4 / 255.0, 16 / 255.0});
  ASSERT_EQ(pts.size(), 3u);
  EXPECT_EQ(pts[0].asr, 0.0);
  EXPECT_EQ(pts[0].mean_linf, 0.0);
  for (const auto& p : pts) EXPECT_LE(p.mean_linf, p.epsilon + 1e-12);
  EXPECT_THROW(budget_sweep(det, bench_->manifest.fakes(), bench_->manifest.reals(Split::Test), bench_->images,
                            factory, evasion::AttackBudget{}, {-1.0}),
               Error);
}

TEST_F(EvalFixture, SaliencyDegenerateCases) {
  const auto x = bench_->images.get(bench_->manifest.select(Split::Test).front().image_ref);
  const auto map = smoothgrad_saliency(*model_, x, 1, 0.0);
  const auto logits = model_->logits(x);
  const auto top = static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  std::vector<double> w(logits.size(), -1.0 / logits.size());
  w[top] += 1.0;
  const auto g = model_->input_gradient_of_logits(x, w);
  const std::size_t plane = static_cast<std::size_t>(x.height()) * x.width();
  std::vector<double> plain(plane, 0.0);
  for (int c = 0; c < x.channels(); ++c)
    for (std::size_t i = 0; i < plane; ++i) plain[i] += std::abs(g[c * plane + i]);
  const double mx = *std::max_element(plain.begin(), plain.end());
  for (std::size_t i = 0; i < plane; ++i) EXPECT_NEAR(map.values[i], plain[i] / mx, 1e-12);

  idmodel::IdentificationModel flat(model_->backbone(), nn::Linear(model_->backbone().embed_dim(), 3),
                                    model_->identity_set());
  const auto zero = smoothgrad_saliency(flat, x, 4, 0.1, 1);
  for (double v : zero.values) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(zero.count_above(0.2), 0u);
}

TEST_F(EvalFixture, SaliencyInvariantToLogitShift) {
  const auto x = bench_->images.get(bench_->manifest.select(Split::Test)[1].image_ref);
  auto shifted = *model_;
  for (double& b : shifted.head().bias) b += 3.5;
  const auto a = smoothgrad_saliency(*model_, x, 5, 0.1, 9);
  const auto b = smoothgrad_saliency(shifted, x, 5, 0.1, 9);
  for (std::size_t i = 0; i < a.values.size(); ++i) EXPECT_NEAR(a.values[i], b.values[i], 1e-12);
  EXPECT_GE(a.count_above(0.0), a.count_above(0.2));
}

TEST_F(EvalFixture, EmbeddingExport) {
  auto recs = bench_->manifest.select(Split::Test);
  recs.resize(3);
  recs.push_back(recs[0]);
  const auto rows = export_embeddings(model_->backbone(), recs, bench_->images);
  ASSERT_EQ(rows.size(), 4u);
  for (const auto& r : rows) {
    EXPECT_NEAR(std::sqrt(std::inner_product(r.embedding.begin(), r.embedding.end(), r.embedding.begin(), 0.0)),
                1.0, 1e-6);
  }
  EXPECT_EQ(rows[0].embedding, rows[3].embedding);
  std::ostringstream csv;
  write_embeddings(rows, csv);
  EXPECT_EQ(std::ranges::count(csv.str(), '\n'), 5);
}

TEST(PairSimilarity, UnitLambdaFakesLookLikeSameIdentityPairs) {
  synth::BenchmarkSpec s;
  s.n_ids = 6;
  s.per_id_train = 0;
  s.n_real_test = 60;
  s.n_fake_test = 300;
  s.lambda_lo = s.lambda_hi = 1.0;
  s.mechanisms = {synth::Mechanism::LatentBlend};
  const auto b = synth::build_benchmark(s, toy::generator());
  const idmodel::EmbeddingBackend z(toy::arch(), 3);
  const auto study = pair_similarity_study(z, b.manifest, b.images, 300, 1);
  const auto src = summarize(study.fake_vs_source), same = summarize(study.same_id_real);
  EXPECT_LE(std::abs(src.mean - same.mean), 4.0 * std::hypot(src.stderr_mean, same.stderr_mean));
  for (const auto* g : {&study.same_id_real, &study.diff_id_real, &study.fake_vs_source, &study.fake_vs_target})
    for (double v : *g) {
      EXPECT_GE(v, -1.0 - 1e-12);
      EXPECT_LE(v, 1.0 + 1e-12);
    }
}

TEST(PairSimilarity, IdenticalImagesGiveUnitSimilarity) {
  // Every real of an identity is the same image, so same-id pairs compare equal embeddings.
  std::vector<SampleRecord> recs;
  MemoryImageStore store;
  for (const std::string id : {"a", "b"}) {
    store.put(id + ".png", toy::random_image({16, 16, 3}, id == "a" ? 1 : 2));
    for (int i = 0; i < 2; ++i) {
      SampleRecord r;
      r.image_ref = id + ".png";
      r.identity = id;
      recs.push_back(r);
    }
  }
  SampleRecord f;
  f.image_ref = "f.png";
  f.is_fake = true;
  f.source_id = "a";
  f.target_id = "b";
  recs.push_back(f);
  store.put("f.png", toy::random_image({16, 16, 3}, 3));
  const auto study = pair_similarity_study(idmodel::EmbeddingBackend(toy::arch(), 1),
                                           DatasetManifest(recs, IdentitySet({"a", "b"})), store, 1, 0);
  ASSERT_EQ(study.same_id_real.size(), 1u);
  EXPECT_NEAR(study.same_id_real[0], 1.0, 1e-12);
}
