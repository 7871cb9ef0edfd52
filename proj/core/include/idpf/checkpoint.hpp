#pragma once

#include <filesystem>

#include "idpf/idmodel.hpp"

namespace idpf {

/// Binary layout: magic "IDPF", u32 format version, u32 section count, then
/// sections of (u32 name length, name, u64 payload length, payload). Doubles
/// are stored as raw little-endian IEEE-754 so round trips are bit-exact.
inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

void save_checkpoint(const idmodel::IdentificationModel& model, const std::filesystem::path& path);
idmodel::IdentificationModel load_checkpoint(const std::filesystem::path& path);

/// Backbone-only files share the container format without head or identities.
void save_backbone(const idmodel::EmbeddingBackend& backbone, const std::filesystem::path& path);
idmodel::EmbeddingBackend load_backbone(const std::filesystem::path& path);

}  // namespace idpf
