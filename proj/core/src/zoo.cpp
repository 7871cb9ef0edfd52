#include "idpf/zoo.hpp"

#include <system_error>

#include "idpf/checkpoint.hpp"
#include "idpf/evalkit.hpp"
#include "idpf/rng.hpp"

namespace idpf::zoo {

nlohmann::json ExtractorSpec::to_json() const {
  return {{"name", name},
          {"arch", arch.to_json()},
          {"init_seed", init_seed},
          {"data_seed", data_seed},
          {"generator_version", synth::kGeneratorVersion},
          {"pretrain",
           {{"n_classes", pretrain.n_classes},
            {"samples_per_epoch", pretrain.samples_per_epoch},
            {"epochs", pretrain.epochs},
            {"batch_size", pretrain.batch_size},
            {"lr", pretrain.lr},
            {"margin", pretrain.margin},
            {"scale", pretrain.scale}}}};
}

std::vector<ExtractorSpec> standard_extractors() {
  idmodel::PretrainConfig pc;
  pc.n_classes = 200;
  pc.samples_per_epoch = 4000;
  pc.epochs = 8;
  auto make = [&](std::string name, std::vector<int> widths, int embed, std::uint64_t s) {
    ExtractorSpec e;
    e.name = std::move(name);
    e.arch.widths = std::move(widths);
    e.arch.embed_dim = embed;
    e.init_seed = s;
    e.data_seed = 1000 + s;
    e.pretrain = pc;
    return e;
  };
  return {make("A", {8, 16, 32, 32}, 128, 11), make("B", {12, 24, 32, 48}, 128, 12),
          make("C", {8, 16, 24, 32}, 96, 13), make("D", {16, 16, 32, 32}, 112, 14)};
}

idmodel::PretrainSampler synthetic_sampler(std::vector<synth::IdentityPrototype> prototypes,
                                           synth::GeneratorConfig config, std::uint64_t seed) {
  auto renderer = std::make_shared<const synth::FaceRenderer>(config.renderer);
  return [prototypes = std::move(prototypes), config, seed, renderer](int epoch, int index) {
    Rng rng = make_rng(seed, "pretrain_draw",
                       (static_cast<std::uint64_t>(epoch) << 32) | static_cast<std::uint32_t>(index));
    std::uniform_int_distribution<std::size_t> pick(0, prototypes.size() - 1);
    const std::size_t k = pick(rng);
    const auto attrs = synth::sample_attributes(config, rng);
    return std::pair{quantize8(renderer->render_real(prototypes[k], attrs)), static_cast<int>(k)};
  };
}

idmodel::EmbeddingBackend pretrain_extractor(const ExtractorSpec& spec, idmodel::PretrainReport* report) {
  synth::GeneratorConfig gc;
  gc.renderer.shape = spec.arch.input;
  auto protos = synth::sample_prototypes(spec.pretrain.n_classes, "pre", gc, spec.data_seed);
  auto sampler = synthetic_sampler(std::move(protos), gc, spec.data_seed);
  return idmodel::pretrain_backbone(spec.arch, spec.pretrain, sampler, spec.init_seed, report);
}

idmodel::EmbeddingBackend load_or_pretrain(const ExtractorSpec& spec, const std::filesystem::path& cache_dir) {
  const auto file = cache_dir / ("extractor_" + spec.name + "_" + evalkit::config_hash(spec.to_json()) + ".idpf");
  if (std::filesystem::exists(file)) return load_backbone(file);
  auto backbone = pretrain_extractor(spec);
  std::filesystem::create_directories(cache_dir);
  const auto tmp = std::filesystem::path(file.string() + ".tmp");
  save_backbone(backbone, tmp);
  std::filesystem::rename(tmp, file);
  return backbone;
}

}  // namespace idpf::zoo
