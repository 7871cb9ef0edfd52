#include <gtest/gtest.h>

#include <cmath>

#include "idpf/error.hpp"
#include "idpf/synthfaces.hpp"
#include "toy.hpp"

using namespace idpf;
using namespace idpf::synth;

namespace {

struct Pair {
  std::vector<IdentityPrototype> protos = sample_prototypes(2, "p", GeneratorConfig{}, 11);
  AttributeParams attrs;

  Pair() {
    attrs.pose_shift = {1, -1};
    attrs.illumination_scale = 1.05;
    attrs.noise_seed = 77;
  }
  SwapSpec swap(double lambda, Mechanism m = Mechanism::LatentBlend) const {
    SwapSpec s;
    s.source = protos[0];
    s.target = protos[1];
    s.target_attributes = attrs;
    s.lambda = lambda;
    s.mechanism = m;
    return s;
  }
};

}  // namespace

TEST(Renderer, Deterministic) {
  Pair p;
  EXPECT_EQ(render_real(p.protos[0], p.attrs), render_real(p.protos[0], p.attrs));
  EXPECT_EQ(render_swap(p.swap(0.7)), render_swap(p.swap(0.7)));
}

TEST(Renderer, NeutralAttributesGiveCanonicalRender) {
  Pair p;
  RendererConfig quiet;
  quiet.noise_sigma = 0.0;
  const FaceRenderer r(quiet);
  EXPECT_EQ(r.render_real(p.protos[0], AttributeParams{}), r.render_canonical(p.protos[0].pattern_params));
}

TEST(Renderer, OutputInUnitRange) {
  Pair p;
  AttributeParams bright = p.attrs;
  bright.illumination_scale = 1.5;
  EXPECT_TRUE(render_real(p.protos[0], bright).in_unit_range());
  EXPECT_TRUE(render_swap(p.swap(0.6, Mechanism::MaskedPixelBlend)).in_unit_range());
}

TEST(Renderer, DistinctIdentitiesDiffer) {
  Pair p;
  EXPECT_GT(l2_distance(render_real(p.protos[0], p.attrs), render_real(p.protos[1], p.attrs)), 0.0);
}

TEST(Renderer, LatentBlendEndpointsAndMidpoint) {
  Pair p;
  EXPECT_EQ(render_swap(p.swap(1.0)), render_real(p.protos[0], p.attrs));
  EXPECT_EQ(render_swap(p.swap(0.0)), render_real(p.protos[1], p.attrs));
  IdentityPrototype mid{"mid", {}};
  for (std::size_t j = 0; j < p.protos[0].pattern_params.size(); ++j)
    mid.pattern_params.push_back((p.protos[0].pattern_params[j] + p.protos[1].pattern_params[j]) / 2.0);
  EXPECT_LE(linf_distance(render_swap(p.swap(0.5)), render_real(mid, p.attrs)), 1e-12);
}

TEST(Renderer, BlendContinuityOnLambdaGrid) {
  Pair p;
  const auto src = render_real(p.protos[0], p.attrs);
  for (auto m : {Mechanism::LatentBlend, Mechanism::MaskedPixelBlend}) {
    double prev = INFINITY;
    for (int i = 0; i <= 10; ++i) {
      const double d = l2_distance(render_swap(p.swap(i / 10.0, m)), src);
      if (m == Mechanism::LatentBlend) {
        EXPECT_LE(d, prev + 1e-12) << "lambda " << i / 10.0;
      }
      prev = d;
    }
  }
}

TEST(Renderer, MechanismsDifferAwayFromTarget) {
  Pair p;
  EXPECT_EQ(render_swap(p.swap(0.0, Mechanism::LatentBlend)), render_swap(p.swap(0.0, Mechanism::MaskedPixelBlend)));
  for (double lam : {0.3, 0.8}) {
    EXPECT_GT(l2_distance(render_swap(p.swap(lam, Mechanism::LatentBlend)),
                          render_swap(p.swap(lam, Mechanism::MaskedPixelBlend))),
              0.0);
  }
}

TEST(Renderer, BlendMaskFeathered) {
  const FaceRenderer r;
  const auto m = r.blend_mask(AttributeParams{});
  double lo = 1.0, hi = 0.0;
  int partial = 0;
  for (double v : m) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    partial += v > 0.0 && v < 1.0;
  }
  EXPECT_EQ(lo, 0.0);
  EXPECT_EQ(hi, 1.0);
  EXPECT_GT(partial, 0);
}

TEST(Prototypes, SeparationMarginAndRenderFloor) {
  const GeneratorConfig cfg;
  const auto protos = sample_prototypes(50, "id", cfg, 7);
  const FaceRenderer r(cfg.renderer);
  std::vector<FaceImage> canon;
  for (const auto& p : protos) canon.push_back(r.render_canonical(p.pattern_params));
  for (std::size_t i = 0; i < protos.size(); ++i) {
    for (std::size_t j = i + 1; j < protos.size(); ++j) {
      double d2 = 0.0;
      for (std::size_t k = 0; k < protos[i].pattern_params.size(); ++k)
        d2 += std::pow(protos[i].pattern_params[k] - protos[j].pattern_params[k], 2);
      EXPECT_GE(std::sqrt(d2), cfg.separation_margin);
      EXPECT_GT(mean_abs_difference(canon[i], canon[j]), kSeparationFloor);
    }
  }
}

TEST(Attributes, SampledWithinConfiguredRanges) {
  const GeneratorConfig cfg;
  Rng rng(3);
  for (int i = 0; i < 500; ++i) {
    const auto a = sample_attributes(cfg, rng);
    EXPECT_LE(std::abs(a.pose_shift[0]), cfg.max_pose_shift);
    EXPECT_LE(std::abs(a.pose_shift[1]), cfg.max_pose_shift);
    EXPECT_GE(a.illumination_scale, cfg.illumination_lo);
    EXPECT_LE(a.illumination_scale, cfg.illumination_hi);
  }
  AttributeParams bad;
  bad.illumination_scale = 2.0;
  EXPECT_THROW(bad.validate(), Error);
}

TEST(SwapSpec, Validation) {
  Pair p;
  EXPECT_THROW(p.swap(1.5).validate(), Error);
  auto same = p.swap(0.5);
  same.target = same.source;
  EXPECT_THROW(same.validate(), Error);
}

TEST(Benchmark, CountsSplitsAndFakeProvenance) {
  BenchmarkSpec s;
  s.n_ids = 2;
  s.per_id_train = 3;
  s.n_real_test = 4;
  s.n_fake_test = 4;
  s.seed = 1;
  const auto b = build_benchmark(s, toy::generator());
  EXPECT_EQ(b.manifest.select(Split::Train).size(), 6u);
  EXPECT_EQ(b.manifest.reals(Split::Test).size(), 4u);
  const auto fakes = b.manifest.fakes();
  ASSERT_EQ(fakes.size(), 4u);
  for (const auto& f : fakes) {
    EXPECT_NE(*f.source_id, *f.target_id);
    EXPECT_TRUE(b.manifest.identity_set().contains(*f.source_id));
    EXPECT_EQ(f.split, Split::Test);
  }
  EXPECT_EQ(mechanism_of(fakes[0]), Mechanism::LatentBlend);
  EXPECT_EQ(mechanism_of(fakes[1]), Mechanism::MaskedPixelBlend);
  EXPECT_EQ(b.images.size(), b.manifest.records().size());
}

TEST(Benchmark, UnitLambdaFakesEqualSourceRenders) {
  BenchmarkSpec s;
  s.n_ids = 3;
  s.n_real_test = 3;
  s.n_fake_test = 6;
  s.lambda_lo = s.lambda_hi = 1.0;
  s.mechanisms = {Mechanism::LatentBlend};
  const auto cfg = toy::generator();
  const auto b = build_benchmark(s, cfg);
  const auto& prov = b.provenance["fakes"];
  for (std::size_t i = 0; i < prov.size(); ++i) {
    const auto& f = prov[i];
    AttributeParams a;
    a.pose_shift = f["pose_shift"].get<std::array<int, 2>>();
    a.illumination_scale = f["illumination_scale"];
    a.noise_seed = f["noise_seed"];
    const auto k = b.manifest.identity_set().index_of(f["source"]);
    EXPECT_EQ(b.images.get(f["path"]), quantize8(render_real(b.prototypes[k], a, cfg.renderer)));
  }
}

TEST(Benchmark, DeterministicManifest) {
  BenchmarkSpec s;
  s.n_ids = 4;
  s.n_real_test = 8;
  s.n_fake_test = 8;
  s.seed = 9;
  const auto a = build_benchmark(s, toy::generator());
  const auto b = build_benchmark(s, toy::generator());
  EXPECT_EQ(a.manifest.to_string(), b.manifest.to_string());
  EXPECT_EQ(a.images.images(), b.images.images());
}

TEST(Benchmark, RejectsSingleIdentityAndBadLambda) {
  BenchmarkSpec s;
  s.n_ids = 1;
  EXPECT_THROW(build_benchmark(s, toy::generator()), Error);
  s.n_ids = 2;
  s.lambda_lo = 0.9;
  s.lambda_hi = 0.6;
  EXPECT_THROW(build_benchmark(s, toy::generator()), Error);
}

TEST(Benchmark, ConfigJsonRoundTrip) {
  BenchmarkSpec s;
  s.n_ids = 7;
  s.lambda_lo = 0.2;
  s.mechanisms = {Mechanism::MaskedPixelBlend};
  EXPECT_EQ(BenchmarkSpec::from_json(s.to_json()).to_json(), s.to_json());
  GeneratorConfig g;
  g.max_pose_shift = 3;
  EXPECT_EQ(GeneratorConfig::from_json(g.to_json()).to_json(), g.to_json());
}
