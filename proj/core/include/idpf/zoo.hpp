#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "idpf/idmodel.hpp"
#include "idpf/synthfaces.hpp"

namespace idpf::zoo {

/// A pretrained identity extractor: architecture, init seed and the seed of
/// the synthetic identity population it is pretrained on.
struct ExtractorSpec {
  std::string name;
  idmodel::BackboneArch arch;
  std::uint64_t init_seed = 0;
  std::uint64_t data_seed = 0;
  idmodel::PretrainConfig pretrain;

  nlohmann::json to_json() const;
};

/// Four extractors with distinct widths, seeds and pretraining identities.
/// The first is the detector's own backbone; the rest are attacker-side.
std::vector<ExtractorSpec> standard_extractors();

/// Renders labelled reals of `prototypes` with fresh attributes per draw.
idmodel::PretrainSampler synthetic_sampler(std::vector<synth::IdentityPrototype> prototypes,
                                           synth::GeneratorConfig config, std::uint64_t seed);

/// Pretrain on a synthetic population (label prefix "pre") disjoint from any
/// benchmark population built with a different prefix.
idmodel::EmbeddingBackend pretrain_extractor(const ExtractorSpec& spec, idmodel::PretrainReport* report = nullptr);

/// Load from `cache_dir` when a file for this exact spec exists, else
/// pretrain and store it there.
idmodel::EmbeddingBackend load_or_pretrain(const ExtractorSpec& spec, const std::filesystem::path& cache_dir);

}  // namespace idpf::zoo
