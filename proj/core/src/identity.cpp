#include "idpf/identity.hpp"

#include "idpf/error.hpp"

namespace idpf {

IdentitySet::IdentitySet(std::vector<std::string> labels) : labels_(std::move(labels)) {
  if (labels_.empty()) fail(ErrorCode::ConfigInvalid, "identity set must contain at least one label");
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    const auto& l = labels_[i];
    if (l.empty()) fail(ErrorCode::ConfigInvalid, "empty identity label");
    if (l.find_first_of(",\n\r") != std::string::npos) {
      fail(ErrorCode::ConfigInvalid, "identity label contains a separator: " + l);
    }
    if (!index_.emplace(l, i).second) fail(ErrorCode::ConfigInvalid, "duplicate identity label " + l);
  }
}

const std::string& IdentitySet::label(std::size_t index) const {
  if (index >= labels_.size()) {
    fail(ErrorCode::IndexOutOfRange, "identity index " + std::to_string(index));
  }
  return labels_[index];
}

std::optional<std::size_t> IdentitySet::find(const std::string& label) const {
  auto it = index_.find(label);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t IdentitySet::index_of(const std::string& label) const {
  auto idx = find(label);
  if (!idx) fail(ErrorCode::IndexOutOfRange, "unknown identity " + label);
  return *idx;
}

IdentitySet IdentitySet::subset(const std::vector<std::string>& labels) const {
  for (const auto& l : labels) index_of(l);
  return IdentitySet(labels);
}

}  // namespace idpf
