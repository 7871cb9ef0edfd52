#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace idpf {

/// Ordered closed set of K identity labels. Index order is the class order of
/// every identification model built over the set.
class IdentitySet {
 public:
  IdentitySet() = default;
  explicit IdentitySet(std::vector<std::string> labels);

  std::size_t size() const { return labels_.size(); }
  bool empty() const { return labels_.empty(); }
  const std::vector<std::string>& labels() const { return labels_; }
  const std::string& label(std::size_t index) const;
  std::optional<std::size_t> find(const std::string& label) const;
  std::size_t index_of(const std::string& label) const;
  bool contains(const std::string& label) const { return find(label).has_value(); }

  /// Subset in the order given; every label must be a member.
  IdentitySet subset(const std::vector<std::string>& labels) const;

  friend bool operator==(const IdentitySet& a, const IdentitySet& b) { return a.labels_ == b.labels_; }

 private:
  std::vector<std::string> labels_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace idpf
