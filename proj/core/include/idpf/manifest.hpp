#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "idpf/identity.hpp"
#include "idpf/image.hpp"

namespace idpf {

enum class Split { Train, Test };

std::string_view to_string(Split split);

struct SampleRecord {
  std::string image_ref;  // relative to the content root
  std::optional<std::string> identity;
  bool is_fake = false;
  std::optional<std::string> source_id;
  std::optional<std::string> target_id;
  std::string quality_tag;
  Split split = Split::Test;

  /// Real records carry an identity and no source/target; fakes carry both.
  void validate() const;

  friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

class DatasetManifest {
 public:
  DatasetManifest() = default;
  DatasetManifest(std::vector<SampleRecord> records, IdentitySet identities);

  const std::vector<SampleRecord>& records() const { return records_; }
  const IdentitySet& identity_set() const { return identities_; }

  std::vector<SampleRecord> select(Split split) const;
  std::vector<SampleRecord> reals(std::optional<Split> split = std::nullopt) const;
  std::vector<SampleRecord> fakes() const;

  /// Line-delimited text: two comment lines (format tag, identity roster), a
  /// column header, then one comma-separated record per line.
  void write(std::ostream& out) const;
  std::string to_string() const;
  static DatasetManifest parse(std::istream& in);
  static DatasetManifest parse(const std::string& text);

  void save(const std::filesystem::path& path) const;
  static DatasetManifest load(const std::filesystem::path& path);

 private:
  std::vector<SampleRecord> records_;
  IdentitySet identities_;
};

/// Pick `per_identity` real records per identity for the train split; every
/// other record (remaining reals and all fakes) lands in the test split.
DatasetManifest sample_training_set(const DatasetManifest& manifest, int per_identity,
                                    std::uint64_t seed);

/// Resolves a record's image_ref into pixels.
class ImageStore {
 public:
  virtual ~ImageStore() = default;
  virtual FaceImage load(const std::string& image_ref) const = 0;
};

class DirectoryImageStore final : public ImageStore {
 public:
  explicit DirectoryImageStore(std::filesystem::path root) : root_(std::move(root)) {}
  FaceImage load(const std::string& image_ref) const override;
  const std::filesystem::path& root() const { return root_; }

 private:
  std::filesystem::path root_;
};

class MemoryImageStore final : public ImageStore {
 public:
  void put(const std::string& image_ref, FaceImage image);
  FaceImage load(const std::string& image_ref) const override;
  const FaceImage& get(const std::string& image_ref) const;
  bool contains(const std::string& image_ref) const { return images_.count(image_ref) > 0; }
  std::size_t size() const { return images_.size(); }
  const std::map<std::string, FaceImage>& images() const { return images_; }

 private:
  std::map<std::string, FaceImage> images_;
};

}  // namespace idpf
