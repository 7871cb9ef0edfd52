#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "idpf/image.hpp"
#include "idpf/manifest.hpp"
#include "idpf/rng.hpp"

namespace idpf::synth {

/// Bumped whenever rendering output changes; pinned regression constants
/// (such as kSeparationFloor) are valid for this version only.
inline constexpr int kGeneratorVersion = 1;

enum class Mechanism { LatentBlend, MaskedPixelBlend };

std::string_view to_string(Mechanism m);
Mechanism parse_mechanism(std::string_view s);

struct IdentityPrototype {
  std::string identity;
  std::vector<double> pattern_params;  // each in [0,1]
};

struct AttributeParams {
  std::array<int, 2> pose_shift{0, 0};  // (dy, dx) pixels
  double illumination_scale = 1.0;      // [0.5, 1.5]
  std::uint64_t noise_seed = 0;

  void validate() const;
};

struct SwapSpec {
  IdentityPrototype source;
  IdentityPrototype target;
  AttributeParams target_attributes;
  double lambda = 0.75;  // blend weight toward the source
  Mechanism mechanism = Mechanism::LatentBlend;

  void validate() const;
};

struct RendererConfig {
  ImageShape shape{64, 64, 3};
  double noise_sigma = 0.02;
  int feather_width = 3;
  double border_fill = 0.5;
};

/// Procedural face renderer. The canonical image is affine in the pattern
/// parameters: a fixed elliptical face template carrying a base colour, a
/// fixed constellation of Gaussian blobs whose per-channel intensities are
/// parameters, and a bank of oriented stripe textures with parameter weights.
class FaceRenderer {
 public:
  explicit FaceRenderer(RendererConfig config = {});

  static constexpr int kBlobs = 12;
  static constexpr int kStripes = 6;
  static int param_dim(int channels) { return channels + kBlobs * channels + kStripes; }

  const RendererConfig& config() const { return config_; }
  int param_dim() const { return param_dim(config_.shape.channels); }

  FaceImage render_canonical(const std::vector<double>& params) const;
  FaceImage render_real(const IdentityPrototype& proto, const AttributeParams& attrs) const;
  FaceImage render_swap(const SwapSpec& spec) const;

  /// Feathered central-ellipse weight used by the masked blend, in [0,1].
  std::vector<double> blend_mask(const AttributeParams& attrs) const;

 private:
  FaceImage apply_attributes(const FaceImage& canonical, const AttributeParams& attrs) const;

  RendererConfig config_;
  std::vector<double> offset_;               // constant term, planar image
  std::vector<std::vector<double>> basis_;   // one planar image per parameter
};

struct GeneratorConfig {
  RendererConfig renderer{};
  double separation_margin = 1.0;  // min pairwise param distance
  int max_pose_shift = 1;
  double illumination_lo = 0.9;
  double illumination_hi = 1.1;

  nlohmann::json to_json() const;
  static GeneratorConfig from_json(const nlohmann::json& j);
};

/// Mean-absolute-difference floor between canonical renders of any two
/// prototypes drawn by sample_prototypes with the default config.
inline constexpr double kSeparationFloor = 0.03;

std::vector<IdentityPrototype> sample_prototypes(int n, const std::string& label_prefix,
                                                 const GeneratorConfig& config, std::uint64_t seed);

AttributeParams sample_attributes(const GeneratorConfig& config, Rng& rng);

FaceImage render_real(const IdentityPrototype& proto, const AttributeParams& attrs,
                      const RendererConfig& config = {});
FaceImage render_swap(const SwapSpec& spec, const RendererConfig& config = {});

struct BenchmarkSpec {
  int n_ids = 50;
  int per_id_train = 10;
  int n_real_test = 1000;
  int n_fake_test = 1000;
  double lambda_lo = 0.6;
  double lambda_hi = 0.9;
  std::vector<Mechanism> mechanisms{Mechanism::LatentBlend, Mechanism::MaskedPixelBlend};
  std::uint64_t seed = 0;
  std::string label_prefix = "id";

  nlohmann::json to_json() const;
  static BenchmarkSpec from_json(const nlohmann::json& j);
};

struct Benchmark {
  DatasetManifest manifest;
  MemoryImageStore images;  // 8-bit quantized, exactly what write_benchmark puts on disk
  std::vector<IdentityPrototype> prototypes;
  nlohmann::json provenance;  // generator config plus per-fake swap details
};

Benchmark build_benchmark(const BenchmarkSpec& spec, const GeneratorConfig& config = {});

/// PNG files, manifest.csv and generator.json under `dir`.
void write_benchmark(const Benchmark& bench, const std::filesystem::path& dir);

/// Mechanism encoded in a fake record's path (fake/<mechanism>/...).
Mechanism mechanism_of(const SampleRecord& record);

}  // namespace idpf::synth
