#include "idpf/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include "idpf/error.hpp"

namespace idpf {

namespace {

constexpr char kMagic[4] = {'I', 'D', 'P', 'F'};

using Sections = std::map<std::string, std::string>;

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

std::string doubles_bytes(const std::vector<double>& v) {
  std::string s(v.size() * sizeof(double), '\0');
  if (!v.empty()) std::memcpy(s.data(), v.data(), s.size());
  return s;
}

std::vector<double> bytes_doubles(const std::string& s, const std::string& what) {
  if (s.size() % sizeof(double) != 0) fail(ErrorCode::CorruptCheckpoint, what + " is not a double array");
  std::vector<double> v(s.size() / sizeof(double));
  if (!v.empty()) std::memcpy(v.data(), s.data(), s.size());
  return v;
}

void write_container(const Sections& sections, const std::filesystem::path& path) {
  std::string out(kMagic, 4);
  put<std::uint32_t>(out, kCheckpointFormatVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(sections.size()));
  for (const auto& [name, payload] : sections) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint64_t>(out, payload.size());
    out += payload;
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(ErrorCode::FileNotFound, "cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) fail(ErrorCode::FileNotFound, "write failed for " + path.string());
}

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}

  template <typename T>
  T take() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string take_bytes(std::uint64_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (n > data_.size() - pos_) fail(ErrorCode::CorruptCheckpoint, "truncated checkpoint");
  }
  std::string data_;
  std::size_t pos_ = 0;
};

Sections read_container(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::FileNotFound, "cannot open " + path.string());
  Reader r(std::string(std::istreambuf_iterator<char>(f), {}));
  const std::string magic = r.take_bytes(4);
  if (magic != std::string(kMagic, 4)) fail(ErrorCode::CorruptCheckpoint, "bad magic in " + path.string());
  const auto version = r.take<std::uint32_t>();
  if (version != kCheckpointFormatVersion) {
    fail(ErrorCode::VersionMismatch, "checkpoint format " + std::to_string(version) + ", expected " +
                                         std::to_string(kCheckpointFormatVersion));
  }
  const auto count = r.take<std::uint32_t>();
  Sections sections;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.take<std::uint32_t>();
    std::string name = r.take_bytes(name_len);
    const auto len = r.take<std::uint64_t>();
    sections[name] = r.take_bytes(len);
  }
  if (!r.done()) fail(ErrorCode::CorruptCheckpoint, "trailing bytes in " + path.string());
  return sections;
}

const std::string& section(const Sections& s, const std::string& name) {
  auto it = s.find(name);
  if (it == s.end()) fail(ErrorCode::CorruptCheckpoint, "missing section " + name);
  return it->second;
}

nlohmann::json parse_json(const std::string& text, const std::string& what) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::CorruptCheckpoint, what + ": " + e.what());
  }
}

void put_backbone(Sections& s, const idmodel::EmbeddingBackend& backbone) {
  s["backbone_arch"] = backbone.arch().to_json().dump();
  s["backbone_params"] = doubles_bytes(backbone.serialize_parameters());
}

idmodel::EmbeddingBackend get_backbone(const Sections& s) {
  idmodel::BackboneArch arch;
  try {
    arch = idmodel::BackboneArch::from_json(parse_json(section(s, "backbone_arch"), "backbone_arch"));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::CorruptCheckpoint, std::string("backbone_arch: ") + e.what());
  }
  idmodel::EmbeddingBackend backbone(arch, 0);
  backbone.deserialize_parameters(bytes_doubles(section(s, "backbone_params"), "backbone_params"));
  return backbone;
}

}  // namespace

void save_checkpoint(const idmodel::IdentificationModel& model, const std::filesystem::path& path) {
  Sections s;
  put_backbone(s, model.backbone());
  s["identity_set"] = nlohmann::json(model.identity_set().labels()).dump();
  s["head_shape"] = nlohmann::json{model.head().in_features(), model.head().out_features()}.dump();
  s["head_weight"] = doubles_bytes(model.head().weight);
  s["head_bias"] = doubles_bytes(model.head().bias);
  s["train_config"] = model.training_config().to_json().dump();
  write_container(s, path);
}

idmodel::IdentificationModel load_checkpoint(const std::filesystem::path& path) {
  const Sections s = read_container(path);
  auto backbone = get_backbone(s);
  try {
    const auto labels = parse_json(section(s, "identity_set"), "identity_set").get<std::vector<std::string>>();
    const auto shape = parse_json(section(s, "head_shape"), "head_shape").get<std::vector<int>>();
    if (shape.size() != 2) fail(ErrorCode::CorruptCheckpoint, "head_shape");
    nn::Linear head(shape[0], shape[1]);
    auto w = bytes_doubles(section(s, "head_weight"), "head_weight");
    auto b = bytes_doubles(section(s, "head_bias"), "head_bias");
    if (w.size() != head.weight.size() || b.size() != head.bias.size()) {
      fail(ErrorCode::CorruptCheckpoint, "head parameter size");
    }
    head.weight = std::move(w);
    head.bias = std::move(b);
    auto cfg = idmodel::TrainConfig::from_json(parse_json(section(s, "train_config"), "train_config"));
    return idmodel::IdentificationModel(std::move(backbone), std::move(head), IdentitySet(labels), cfg);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::CorruptCheckpoint, e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::CorruptCheckpoint) throw;
    fail(ErrorCode::CorruptCheckpoint, e.what());
  }
}

void save_backbone(const idmodel::EmbeddingBackend& backbone, const std::filesystem::path& path) {
  Sections s;
  put_backbone(s, backbone);
  write_container(s, path);
}

idmodel::EmbeddingBackend load_backbone(const std::filesystem::path& path) {
  return get_backbone(read_container(path));
}

}  // namespace idpf
