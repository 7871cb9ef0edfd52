#include "idpf/manifest.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "idpf/error.hpp"
#include "idpf/rng.hpp"

namespace idpf {

namespace {

constexpr std::string_view kFormatLine = "# idpf-manifest v1";
constexpr std::string_view kIdentityPrefix = "# identities: ";
constexpr std::string_view kColumns = "path,identity,is_fake,source_id,target_id,quality_tag,split";

void check_field(const std::string& value, std::string_view name) {
  if (value.find_first_of(",\n\r") != std::string::npos) {
    fail(ErrorCode::ConfigInvalid, std::string(name) + " contains a separator: " + value);
  }
}

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

std::optional<std::string> opt(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return s;
}

bool parse_bool(const std::string& s, std::size_t line_no) {
  if (s == "1" || s == "true") return true;
  if (s == "0" || s == "false") return false;
  fail(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": bad is_fake value '" + s + "'");
}

Split parse_split(const std::string& s, std::size_t line_no) {
  if (s == "train") return Split::Train;
  if (s == "test") return Split::Test;
  fail(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": bad split '" + s + "'");
}

}  // namespace

std::string_view to_string(Split split) { return split == Split::Train ? "train" : "test"; }

void SampleRecord::validate() const {
  if (image_ref.empty()) fail(ErrorCode::ConfigInvalid, "record without image path");
  check_field(image_ref, "path");
  check_field(quality_tag, "quality_tag");
  if (is_fake) {
    if (!source_id || !target_id) {
      fail(ErrorCode::ConfigInvalid, "fake record " + image_ref + " needs source_id and target_id");
    }
  } else {
    if (!identity) fail(ErrorCode::ConfigInvalid, "real record " + image_ref + " has no identity");
    if (source_id || target_id) {
      fail(ErrorCode::ConfigInvalid, "real record " + image_ref + " carries source/target ids");
    }
  }
}

DatasetManifest::DatasetManifest(std::vector<SampleRecord> records, IdentitySet identities)
    : records_(std::move(records)), identities_(std::move(identities)) {
  auto known = [&](const std::optional<std::string>& id, const std::string& ref) {
    if (id && !identities_.contains(*id)) {
      fail(ErrorCode::ConfigInvalid, "record " + ref + " references unknown identity " + *id);
    }
  };
  for (const auto& r : records_) {
    r.validate();
    known(r.identity, r.image_ref);
    known(r.source_id, r.image_ref);
    known(r.target_id, r.image_ref);
    if (r.is_fake && r.split == Split::Train) {
      fail(ErrorCode::FakeInTrainSet, "fake record " + r.image_ref + " in train split");
    }
  }
}

std::vector<SampleRecord> DatasetManifest::select(Split split) const {
  std::vector<SampleRecord> out;
  for (const auto& r : records_) {
    if (r.split == split) out.push_back(r);
  }
  return out;
}

std::vector<SampleRecord> DatasetManifest::reals(std::optional<Split> split) const {
  std::vector<SampleRecord> out;
  for (const auto& r : records_) {
    if (!r.is_fake && (!split || r.split == *split)) out.push_back(r);
  }
  return out;
}

std::vector<SampleRecord> DatasetManifest::fakes() const {
  std::vector<SampleRecord> out;
  for (const auto& r : records_) {
    if (r.is_fake) out.push_back(r);
  }
  return out;
}

void DatasetManifest::write(std::ostream& out) const {
  out << kFormatLine << '\n' << kIdentityPrefix;
  for (std::size_t i = 0; i < identities_.size(); ++i) {
    if (i) out << ',';
    out << identities_.label(i);
  }
  out << '\n' << kColumns << '\n';
  for (const auto& r : records_) {
    out << r.image_ref << ',' << r.identity.value_or("") << ',' << (r.is_fake ? 1 : 0) << ','
        << r.source_id.value_or("") << ',' << r.target_id.value_or("") << ',' << r.quality_tag << ','
        << idpf::to_string(r.split) << '\n';
  }
}

std::string DatasetManifest::to_string() const {
  std::ostringstream os;
  write(os);
  return os.str();
}

DatasetManifest DatasetManifest::parse(std::istream& in) {
  std::vector<SampleRecord> records;
  std::optional<std::vector<std::string>> roster;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.rfind(kIdentityPrefix, 0) == 0) {
      roster = split_commas(line.substr(kIdentityPrefix.size()));
      continue;
    }
    if (line[0] == '#' || line == kColumns) continue;
    const auto f = split_commas(line);
    if (f.size() != 7) {
      fail(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": expected 7 fields, got " +
                                      std::to_string(f.size()));
    }
    SampleRecord r;
    r.image_ref = f[0];
    r.identity = opt(f[1]);
    r.is_fake = parse_bool(f[2], line_no);
    r.source_id = opt(f[3]);
    r.target_id = opt(f[4]);
    r.quality_tag = f[5];
    r.split = parse_split(f[6], line_no);
    records.push_back(std::move(r));
  }
  if (!roster) {
    // No roster line: take every referenced identity in order of first use.
    std::vector<std::string> seen;
    auto add = [&](const std::optional<std::string>& id) {
      if (id && std::find(seen.begin(), seen.end(), *id) == seen.end()) seen.push_back(*id);
    };
    for (const auto& r : records) {
      add(r.identity);
      add(r.source_id);
      add(r.target_id);
    }
    roster = std::move(seen);
  }
  if (roster->empty()) fail(ErrorCode::ParseError, "manifest references no identities");
  return DatasetManifest(std::move(records), IdentitySet(std::move(*roster)));
}

DatasetManifest DatasetManifest::parse(const std::string& text) {
  std::istringstream is(text);
  return parse(is);
}

void DatasetManifest::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::FileNotFound, "cannot write manifest " + path.string());
  write(out);
}

DatasetManifest DatasetManifest::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::FileNotFound, "cannot read manifest " + path.string());
  return parse(in);
}

DatasetManifest sample_training_set(const DatasetManifest& manifest, int per_identity,
                                    std::uint64_t seed) {
  if (per_identity < 0) fail(ErrorCode::InvalidRange, "per_identity must be non-negative");
  const auto& ids = manifest.identity_set();
  std::vector<std::vector<std::size_t>> by_identity(ids.size());
  const auto& recs = manifest.records();
  for (std::size_t i = 0; i < recs.size(); ++i) {
    if (!recs[i].is_fake) by_identity[ids.index_of(*recs[i].identity)].push_back(i);
  }
  std::vector<bool> chosen(recs.size(), false);
  for (std::size_t k = 0; k < ids.size(); ++k) {
    auto& pool = by_identity[k];
    if (static_cast<int>(pool.size()) < per_identity) {
      fail(ErrorCode::InsufficientSamples,
           ids.label(k) + " has " + std::to_string(pool.size()) + " real records, needs " +
               std::to_string(per_identity));
    }
    Rng rng = make_rng(seed, "sample_training_set", k);
    std::shuffle(pool.begin(), pool.end(), rng);
    for (int j = 0; j < per_identity; ++j) chosen[pool[j]] = true;
  }
  std::vector<SampleRecord> out;
  out.reserve(recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    SampleRecord r = recs[i];
    r.split = chosen[i] ? Split::Train : Split::Test;
    out.push_back(std::move(r));
  }
  return DatasetManifest(std::move(out), ids);
}

FaceImage DirectoryImageStore::load(const std::string& image_ref) const {
  return read_image(root_ / image_ref);
}

void MemoryImageStore::put(const std::string& image_ref, FaceImage image) {
  images_.insert_or_assign(image_ref, std::move(image));
}

FaceImage MemoryImageStore::load(const std::string& image_ref) const { return get(image_ref); }

const FaceImage& MemoryImageStore::get(const std::string& image_ref) const {
  auto it = images_.find(image_ref);
  if (it == images_.end()) fail(ErrorCode::FileNotFound, "no image stored for " + image_ref);
  return it->second;
}

}  // namespace idpf
