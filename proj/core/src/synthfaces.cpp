#include "idpf/synthfaces.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "idpf/error.hpp"
#include "idpf/rng.hpp"

namespace idpf::synth {

namespace {

struct Blob {
  double y, x, sigma;  // relative to height / width / width
};

// Face-like constellation: brows, eyes, nose, mouth, cheeks, forehead, chin, temples.
constexpr std::array<Blob, FaceRenderer::kBlobs> kBlobTemplate{{
    {0.40, 0.33, 0.12}, {0.40, 0.67, 0.12}, {0.30, 0.32, 0.12}, {0.30, 0.68, 0.12},
    {0.56, 0.50, 0.12}, {0.72, 0.50, 0.16}, {0.60, 0.24, 0.16}, {0.60, 0.76, 0.16},
    {0.15, 0.50, 0.20}, {0.88, 0.50, 0.16}, {0.34, 0.12, 0.14}, {0.34, 0.88, 0.14},
}};

struct Stripe {
  double angle, cycles, phase;
};

constexpr std::array<Stripe, FaceRenderer::kStripes> kStripeBank{{
    {0.0, 3.0, 0.0}, {0.5236, 4.0, 0.7}, {1.0472, 5.0, 1.4},
    {1.5708, 3.5, 2.1}, {2.0944, 4.5, 2.8}, {2.6180, 6.0, 3.5},
}};

constexpr double kBaseLevel = 0.3;
constexpr double kBaseRange = 0.4;
constexpr double kBlobAmplitude = 0.6;
constexpr double kStripeAmplitude = 0.12;
constexpr double kBackground = 0.5;

std::string pad_label(const std::string& prefix, int index, int n) {
  int digits = 3;
  for (int v = n - 1; v >= 1000; v /= 10) ++digits;
  std::string num = std::to_string(index);
  if (static_cast<int>(num.size()) < digits) num.insert(0, digits - num.size(), '0');
  return prefix + num;
}

}  // namespace

std::string_view to_string(Mechanism m) {
  return m == Mechanism::LatentBlend ? "latent_blend" : "masked_pixel_blend";
}

Mechanism parse_mechanism(std::string_view s) {
  if (s == "latent_blend") return Mechanism::LatentBlend;
  if (s == "masked_pixel_blend") return Mechanism::MaskedPixelBlend;
  fail(ErrorCode::ConfigInvalid, "unknown swap mechanism " + std::string(s));
}

void AttributeParams::validate() const {
  if (!(illumination_scale >= 0.5 && illumination_scale <= 1.5)) {
    fail(ErrorCode::InvalidRange, "illumination_scale outside [0.5,1.5]");
  }
}

void SwapSpec::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) fail(ErrorCode::InvalidRange, "lambda outside [0,1]");
  if (source.identity == target.identity) {
    fail(ErrorCode::InvalidRange, "swap source and target are the same identity");
  }
  if (source.pattern_params.size() != target.pattern_params.size()) {
    fail(ErrorCode::ShapeMismatch, "source and target prototypes differ in dimension");
  }
  target_attributes.validate();
}

FaceRenderer::FaceRenderer(RendererConfig config) : config_(config) {
  const int h = config_.shape.height, w = config_.shape.width, ch = config_.shape.channels;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const std::size_t n = plane * ch;

  // Soft elliptical face support.
  std::vector<double> face(plane);
  const double ay = 0.48 * h, ax = 0.44 * w, cy = 0.5 * (h - 1), cx = 0.5 * (w - 1);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double r = std::hypot((y - cy) / ay, (x - cx) / ax);
      face[y * w + x] = std::clamp((1.0 - r) * std::min(ax, ay) / 2.0, 0.0, 1.0);
    }
  }

  std::vector<std::vector<double>> blobs;
  for (const auto& b : kBlobTemplate) {
    std::vector<double> g(plane);
    const double by = b.y * (h - 1), bx = b.x * (w - 1), s = b.sigma * w;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double d2 = (y - by) * (y - by) + (x - bx) * (x - bx);
        g[y * w + x] = face[y * w + x] * kBlobAmplitude * std::exp(-d2 / (2.0 * s * s));
      }
    }
    blobs.push_back(std::move(g));
  }
  std::vector<std::vector<double>> stripes;
  for (const auto& s : kStripeBank) {
    std::vector<double> t(plane);
    const double ca = std::cos(s.angle), sa = std::sin(s.angle);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double u = (x * ca + y * sa) / w;
        t[y * w + x] = face[y * w + x] * kStripeAmplitude *
                       std::sin(2.0 * std::numbers::pi * s.cycles * u + s.phase);
      }
    }
    stripes.push_back(std::move(t));
  }

  offset_.assign(n, 0.0);
  for (int c = 0; c < ch; ++c) {
    for (std::size_t i = 0; i < plane; ++i) {
      double v = face[i] * kBaseLevel + (1.0 - face[i]) * kBackground;
      for (const auto& g : blobs) v -= 0.5 * g[i];
      for (const auto& t : stripes) v -= 0.5 * t[i];
      offset_[c * plane + i] = v;
    }
  }
  for (int c = 0; c < ch; ++c) {
    std::vector<double> basis(n, 0.0);
    for (std::size_t i = 0; i < plane; ++i) basis[c * plane + i] = face[i] * kBaseRange;
    basis_.push_back(std::move(basis));
  }
  for (const auto& g : blobs) {
    for (int c = 0; c < ch; ++c) {
      std::vector<double> basis(n, 0.0);
      std::copy(g.begin(), g.end(), basis.begin() + c * plane);
      basis_.push_back(std::move(basis));
    }
  }
  for (const auto& t : stripes) {
    std::vector<double> basis(n, 0.0);
    for (int c = 0; c < ch; ++c) std::copy(t.begin(), t.end(), basis.begin() + c * plane);
    basis_.push_back(std::move(basis));
  }
}

FaceImage FaceRenderer::render_canonical(const std::vector<double>& params) const {
  if (static_cast<int>(params.size()) != param_dim()) {
    fail(ErrorCode::ShapeMismatch, "prototype has " + std::to_string(params.size()) +
                                       " params, renderer expects " + std::to_string(param_dim()));
  }
  std::vector<double> px = offset_;
  for (std::size_t j = 0; j < params.size(); ++j) {
    const double p = params[j];
    if (p == 0.0) continue;
    const auto& b = basis_[j];
    for (std::size_t i = 0; i < px.size(); ++i) px[i] += p * b[i];
  }
  for (double& v : px) v = std::clamp(v, 0.0, 1.0);
  return FaceImage::from_pixels(config_.shape, std::move(px));
}

FaceImage FaceRenderer::apply_attributes(const FaceImage& canonical, const AttributeParams& attrs) const {
  attrs.validate();
  const int h = canonical.height(), w = canonical.width();
  const int dy = attrs.pose_shift[0], dx = attrs.pose_shift[1];
  FaceImage out(canonical.shape(), config_.border_fill);
  for (int c = 0; c < canonical.channels(); ++c) {
    for (int y = 0; y < h; ++y) {
      const int sy = y - dy;
      if (sy < 0 || sy >= h) continue;
      for (int x = 0; x < w; ++x) {
        const int sx = x - dx;
        if (sx >= 0 && sx < w) out.at(c, y, x) = canonical.at(c, sy, sx);
      }
    }
  }
  for (double& v : out.pixels()) v = std::min(1.0, v * attrs.illumination_scale);
  if (config_.noise_sigma > 0.0) {
    Rng rng(attrs.noise_seed);
    std::normal_distribution<double> noise(0.0, config_.noise_sigma);
    for (double& v : out.pixels()) v += noise(rng);
  }
  out.clamp01();
  return out;
}

FaceImage FaceRenderer::render_real(const IdentityPrototype& proto, const AttributeParams& attrs) const {
  return apply_attributes(render_canonical(proto.pattern_params), attrs);
}

std::vector<double> FaceRenderer::blend_mask(const AttributeParams& attrs) const {
  const int h = config_.shape.height, w = config_.shape.width;
  const double cy = 0.52 * (h - 1) + attrs.pose_shift[0];
  const double cx = 0.5 * (w - 1) + attrs.pose_shift[1];
  const double ay = 0.36 * h, ax = 0.30 * w;
  std::vector<double> m(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double r = std::hypot((y - cy) / ay, (x - cx) / ax);
      const double inside_px = (1.0 - r) * std::min(ax, ay);
      double v;
      if (config_.feather_width <= 0) {
        v = r < 1.0 ? 1.0 : 0.0;
      } else {
        v = std::clamp(inside_px / config_.feather_width, 0.0, 1.0);
      }
      m[y * w + x] = v;
    }
  }
  return m;
}

FaceImage FaceRenderer::render_swap(const SwapSpec& spec) const {
  spec.validate();
  const double lam = spec.lambda;
  if (spec.mechanism == Mechanism::LatentBlend) {
    IdentityPrototype mixed{spec.source.identity + "+" + spec.target.identity, {}};
    mixed.pattern_params.resize(spec.source.pattern_params.size());
    for (std::size_t j = 0; j < mixed.pattern_params.size(); ++j) {
      mixed.pattern_params[j] =
          lam * spec.source.pattern_params[j] + (1.0 - lam) * spec.target.pattern_params[j];
    }
    return render_real(mixed, spec.target_attributes);
  }
  const FaceImage src = render_real(spec.source, spec.target_attributes);
  FaceImage out = render_real(spec.target, spec.target_attributes);
  const auto mask = blend_mask(spec.target_attributes);
  const std::size_t plane = mask.size();
  for (int c = 0; c < out.channels(); ++c) {
    for (std::size_t i = 0; i < plane; ++i) {
      const double a = mask[i] * lam;
      double& t = out.pixels()[c * plane + i];
      t = a * src.pixels()[c * plane + i] + (1.0 - a) * t;
    }
  }
  out.clamp01();
  return out;
}

nlohmann::json GeneratorConfig::to_json() const {
  return {
      {"generator_version", kGeneratorVersion},
      {"height", renderer.shape.height},
      {"width", renderer.shape.width},
      {"channels", renderer.shape.channels},
      {"noise_sigma", renderer.noise_sigma},
      {"feather_width", renderer.feather_width},
      {"border_fill", renderer.border_fill},
      {"separation_margin", separation_margin},
      {"max_pose_shift", max_pose_shift},
      {"illumination_lo", illumination_lo},
      {"illumination_hi", illumination_hi},
  };
}

GeneratorConfig GeneratorConfig::from_json(const nlohmann::json& j) {
  GeneratorConfig c;
  c.renderer.shape.height = j.value("height", c.renderer.shape.height);
  c.renderer.shape.width = j.value("width", c.renderer.shape.width);
  c.renderer.shape.channels = j.value("channels", c.renderer.shape.channels);
  c.renderer.noise_sigma = j.value("noise_sigma", c.renderer.noise_sigma);
  c.renderer.feather_width = j.value("feather_width", c.renderer.feather_width);
  c.renderer.border_fill = j.value("border_fill", c.renderer.border_fill);
  c.separation_margin = j.value("separation_margin", c.separation_margin);
  c.max_pose_shift = j.value("max_pose_shift", c.max_pose_shift);
  c.illumination_lo = j.value("illumination_lo", c.illumination_lo);
  c.illumination_hi = j.value("illumination_hi", c.illumination_hi);
  return c;
}

std::vector<IdentityPrototype> sample_prototypes(int n, const std::string& label_prefix,
                                                 const GeneratorConfig& config, std::uint64_t seed) {
  const int dim = FaceRenderer::param_dim(config.renderer.shape.channels);
  Rng rng = make_rng(seed, "prototypes");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<IdentityPrototype> out;
  out.reserve(n);
  constexpr int kMaxAttempts = 10000;
  for (int i = 0; i < n; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxAttempts && !placed; ++attempt) {
      std::vector<double> p(dim);
      for (double& v : p) v = u(rng);
      placed = std::all_of(out.begin(), out.end(), [&](const IdentityPrototype& q) {
        double d2 = 0.0;
        for (int j = 0; j < dim; ++j) d2 += (p[j] - q.pattern_params[j]) * (p[j] - q.pattern_params[j]);
        return std::sqrt(d2) >= config.separation_margin;
      });
      if (placed) out.push_back({pad_label(label_prefix, i, n), std::move(p)});
    }
    if (!placed) {
      fail(ErrorCode::InvalidRange, "cannot place " + std::to_string(n) +
                                        " prototypes at separation margin " +
                                        std::to_string(config.separation_margin));
    }
  }
  return out;
}

AttributeParams sample_attributes(const GeneratorConfig& config, Rng& rng) {
  std::uniform_int_distribution<int> shift(-config.max_pose_shift, config.max_pose_shift);
  std::uniform_real_distribution<double> illum(config.illumination_lo, config.illumination_hi);
  AttributeParams a;
  a.pose_shift = {shift(rng), shift(rng)};
  a.illumination_scale = illum(rng);
  a.noise_seed = rng();
  return a;
}

FaceImage render_real(const IdentityPrototype& proto, const AttributeParams& attrs,
                      const RendererConfig& config) {
  return FaceRenderer(config).render_real(proto, attrs);
}

FaceImage render_swap(const SwapSpec& spec, const RendererConfig& config) {
  return FaceRenderer(config).render_swap(spec);
}

nlohmann::json BenchmarkSpec::to_json() const {
  nlohmann::json mech = nlohmann::json::array();
  for (auto m : mechanisms) mech.push_back(std::string(to_string(m)));
  return {{"n_ids", n_ids},         {"per_id_train", per_id_train}, {"n_real_test", n_real_test},
          {"n_fake_test", n_fake_test}, {"lambda_lo", lambda_lo},  {"lambda_hi", lambda_hi},
          {"mechanisms", mech},     {"seed", seed},                 {"label_prefix", label_prefix}};
}

BenchmarkSpec BenchmarkSpec::from_json(const nlohmann::json& j) {
  BenchmarkSpec s;
  s.n_ids = j.value("n_ids", s.n_ids);
  s.per_id_train = j.value("per_id_train", s.per_id_train);
  s.n_real_test = j.value("n_real_test", s.n_real_test);
  s.n_fake_test = j.value("n_fake_test", s.n_fake_test);
  s.lambda_lo = j.value("lambda_lo", s.lambda_lo);
  s.lambda_hi = j.value("lambda_hi", s.lambda_hi);
  if (j.contains("mechanisms")) {
    s.mechanisms.clear();
    for (const auto& m : j.at("mechanisms")) s.mechanisms.push_back(parse_mechanism(m.get<std::string>()));
  }
  s.seed = j.value("seed", s.seed);
  s.label_prefix = j.value("label_prefix", s.label_prefix);
  return s;
}

Benchmark build_benchmark(const BenchmarkSpec& spec, const GeneratorConfig& config) {
  if (spec.n_ids < 2) fail(ErrorCode::InvalidRange, "a swap benchmark needs at least 2 identities");
  if (!(spec.lambda_lo >= 0.0 && spec.lambda_lo <= spec.lambda_hi && spec.lambda_hi <= 1.0)) {
    fail(ErrorCode::InvalidRange, "lambda range must satisfy 0 <= lo <= hi <= 1");
  }
  if (spec.per_id_train < 0 || spec.n_real_test < 0 || spec.n_fake_test < 0) {
    fail(ErrorCode::InvalidRange, "sample counts must be non-negative");
  }
  if (spec.mechanisms.empty() && spec.n_fake_test > 0) {
    fail(ErrorCode::InvalidRange, "no swap mechanism selected");
  }

  Benchmark bench;
  const FaceRenderer renderer(config.renderer);
  bench.prototypes = sample_prototypes(spec.n_ids, spec.label_prefix, config, spec.seed);
  std::vector<std::string> labels;
  for (const auto& p : bench.prototypes) labels.push_back(p.identity);

  std::vector<SampleRecord> records;
  auto add_real = [&](int k, Split split, const std::string& ref, std::uint64_t stream_index) {
    Rng rng = make_rng(spec.seed, split == Split::Train ? "train_real" : "test_real", stream_index);
    const auto attrs = sample_attributes(config, rng);
    bench.images.put(ref, quantize8(renderer.render_real(bench.prototypes[k], attrs)));
    SampleRecord r;
    r.image_ref = ref;
    r.identity = labels[k];
    r.split = split;
    records.push_back(std::move(r));
  };

  for (int k = 0; k < spec.n_ids; ++k) {
    for (int j = 0; j < spec.per_id_train; ++j) {
      add_real(k, Split::Train,
               "real/" + labels[k] + "/train_" + std::to_string(j) + ".png",
               static_cast<std::uint64_t>(k) * 100003ULL + j);
    }
  }
  for (int i = 0; i < spec.n_real_test; ++i) {
    const int k = i % spec.n_ids;
    add_real(k, Split::Test, "real/" + labels[k] + "/test_" + std::to_string(i) + ".png", i);
  }

  nlohmann::json fakes = nlohmann::json::array();
  for (int i = 0; i < spec.n_fake_test; ++i) {
    Rng rng = make_rng(spec.seed, "fake", i);
    std::uniform_int_distribution<int> pick(0, spec.n_ids - 1);
    std::uniform_int_distribution<int> pick_other(0, spec.n_ids - 2);
    std::uniform_real_distribution<double> lam(spec.lambda_lo, spec.lambda_hi);
    const int s = pick(rng);
    int t = pick_other(rng);
    if (t >= s) ++t;
    SwapSpec swap;
    swap.source = bench.prototypes[s];
    swap.target = bench.prototypes[t];
    swap.lambda = spec.lambda_lo == spec.lambda_hi ? spec.lambda_lo : lam(rng);
    swap.mechanism = spec.mechanisms[i % spec.mechanisms.size()];
    swap.target_attributes = sample_attributes(config, rng);
    const std::string ref =
        "fake/" + std::string(to_string(swap.mechanism)) + "/" + std::to_string(i) + ".png";
    bench.images.put(ref, quantize8(renderer.render_swap(swap)));
    SampleRecord r;
    r.image_ref = ref;
    r.is_fake = true;
    r.source_id = labels[s];
    r.target_id = labels[t];
    r.split = Split::Test;
    records.push_back(std::move(r));
    fakes.push_back({{"path", ref},
                     {"source", labels[s]},
                     {"target", labels[t]},
                     {"lambda", swap.lambda},
                     {"mechanism", std::string(to_string(swap.mechanism))},
                     {"pose_shift", swap.target_attributes.pose_shift},
                     {"illumination_scale", swap.target_attributes.illumination_scale},
                     {"noise_seed", swap.target_attributes.noise_seed}});
  }

  bench.manifest = DatasetManifest(std::move(records), IdentitySet(labels));
  bench.provenance = {{"generator", config.to_json()}, {"benchmark", spec.to_json()}, {"fakes", fakes}};
  return bench;
}

void write_benchmark(const Benchmark& bench, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& [ref, image] : bench.images.images()) write_image(image, dir / ref);
  bench.manifest.save(dir / "manifest.csv");
  std::ofstream out(dir / "generator.json", std::ios::binary);
  if (!out) fail(ErrorCode::FileNotFound, "cannot write generator.json in " + dir.string());
  out << bench.provenance.dump(2) << '\n';
}

Mechanism mechanism_of(const SampleRecord& record) {
  if (!record.is_fake) fail(ErrorCode::ConfigInvalid, record.image_ref + " is not a fake record");
  const auto& ref = record.image_ref;
  const auto first = ref.find('/');
  const auto second = ref.find('/', first + 1);
  if (first == std::string::npos || second == std::string::npos) {
    fail(ErrorCode::ConfigInvalid, "fake path carries no mechanism: " + ref);
  }
  return parse_mechanism(std::string_view(ref).substr(first + 1, second - first - 1));
}

}  // namespace idpf::synth
