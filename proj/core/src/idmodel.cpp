#include "idpf/idmodel.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>

#include "idpf/error.hpp"
#include "idpf/rng.hpp"

namespace idpf::idmodel {

// ---------------------------------------------------------------------------
// BackboneArch

nlohmann::json BackboneArch::to_json() const {
  return {{"height", input.height}, {"width", input.width},     {"channels", input.channels},
          {"widths", widths},       {"embed_dim", embed_dim}, {"normalize", normalize}};
}

BackboneArch BackboneArch::from_json(const nlohmann::json& j) {
  BackboneArch a;
  a.input.height = j.at("height").get<int>();
  a.input.width = j.at("width").get<int>();
  a.input.channels = j.at("channels").get<int>();
  a.widths = j.at("widths").get<std::vector<int>>();
  a.embed_dim = j.at("embed_dim").get<int>();
  a.normalize = j.at("normalize").get<bool>();
  return a;
}

// ---------------------------------------------------------------------------
// EmbeddingBackend

EmbeddingBackend::EmbeddingBackend(BackboneArch arch, std::uint64_t seed) : arch_(std::move(arch)) {
  if (arch_.widths.empty() || arch_.embed_dim <= 0) {
    fail(ErrorCode::ConfigInvalid, "backbone needs at least one stage and a positive embed_dim");
  }
  int c = arch_.input.channels, h = arch_.input.height, w = arch_.input.width;
  for (std::size_t i = 0; i < arch_.widths.size(); ++i) {
    nn::Conv2d conv(c, arch_.widths[i], 2);
    Rng rng = make_rng(seed, "backbone_conv", i);
    conv.init_he(rng);
    h = conv.out_size(h);
    w = conv.out_size(w);
    c = arch_.widths[i];
    convs_.push_back(std::move(conv));
  }
  final_h_ = h;
  final_w_ = w;
  proj_ = nn::Linear(c * h * w, arch_.embed_dim);
  Rng rng = make_rng(seed, "backbone_proj");
  proj_.init_he(rng);
  trainable_.assign(num_groups(), false);
}

std::vector<std::string> EmbeddingBackend::stage_names() const {
  std::vector<std::string> names;
  for (int i = 0; i < conv_stages(); ++i) names.push_back("stage" + std::to_string(i + 1));
  names.push_back("proj");
  return names;
}

int EmbeddingBackend::group_index(const std::string& name) const {
  const auto names = stage_names();
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) fail(ErrorCode::ConfigInvalid, "unknown backbone stage " + name);
  return static_cast<int>(it - names.begin());
}

void EmbeddingBackend::set_trainable(const std::vector<std::string>& names) {
  std::vector<bool> mask(num_groups(), false);
  for (const auto& n : names) mask[group_index(n)] = true;
  trainable_ = std::move(mask);
}

void EmbeddingBackend::freeze_all() { trainable_.assign(num_groups(), false); }

bool EmbeddingBackend::any_trainable() const {
  return std::find(trainable_.begin(), trainable_.end(), true) != trainable_.end();
}

int EmbeddingBackend::first_trainable_group() const {
  for (int g = 0; g < num_groups(); ++g) {
    if (trainable_[g]) return g;
  }
  return num_groups();
}

void EmbeddingBackend::check_input(const FaceImage& image) const {
  if (image.shape() != arch_.input) {
    fail(ErrorCode::ShapeMismatch,
         "backbone expects " + to_string(arch_.input) + ", got " + to_string(image.shape()));
  }
}

static nn::Tensor to_tensor(const FaceImage& image) {
  nn::Tensor t(image.channels(), image.height(), image.width());
  std::copy(image.pixels().begin(), image.pixels().end(), t.data.begin());
  return t;
}

nn::Tensor EmbeddingBackend::forward_prefix(const FaceImage& image, int g) const {
  check_input(image);
  nn::Tensor act = to_tensor(image);
  const int stop = std::min(g, conv_stages());
  for (int i = 0; i < stop; ++i) {
    act = convs_[i].forward(act, nullptr);
    nn::relu_inplace(act.data);
  }
  if (g <= conv_stages()) return act;
  const Trace t = forward_from(act, conv_stages());
  nn::Tensor z(embed_dim(), 1, 1);
  z.data = t.embedding;
  return z;
}

EmbeddingBackend::Trace EmbeddingBackend::forward_from(const nn::Tensor& activation, int start) const {
  const int s = conv_stages();
  Trace t;
  t.start = start;
  if (start > s) {
    t.embedding = activation.data;
    return t;
  }
  t.inputs.resize(s);
  t.cols.resize(s);
  t.outputs.resize(s);
  nn::Tensor act = activation;
  for (int g = start; g < s; ++g) {
    t.inputs[g] = act;
    act = convs_[g].forward(act, &t.cols[g]);
    nn::relu_inplace(act.data);
    t.outputs[g] = act;
  }
  t.proj_input = std::move(act.data);
  t.raw = proj_.forward(t.proj_input);
  if (arch_.normalize) {
    t.norm = nn::l2_norm(t.raw);
    if (!(t.norm > 0.0)) fail(ErrorCode::ZeroVector, "backbone produced a zero embedding");
    t.embedding = t.raw;
    for (double& v : t.embedding) v /= t.norm;
  } else {
    t.norm = 1.0;
    t.embedding = t.raw;
  }
  return t;
}

EmbeddingBackend::Trace EmbeddingBackend::forward(const FaceImage& image) const {
  check_input(image);
  return forward_from(to_tensor(image), 0);
}

std::vector<double> EmbeddingBackend::embed(const FaceImage& image) const {
  return forward(image).embedding;
}

EmbeddingBackend::Grads EmbeddingBackend::zero_grads() const {
  Grads g;
  for (const auto& c : convs_) {
    g.weight.emplace_back(c.weight.size(), 0.0);
    g.bias.emplace_back(c.bias.size(), 0.0);
  }
  g.weight.emplace_back(proj_.weight.size(), 0.0);
  g.bias.emplace_back(proj_.bias.size(), 0.0);
  return g;
}

std::vector<double> EmbeddingBackend::backward(const Trace& trace, std::span<const double> dembedding,
                                               Grads* grads, bool want_input_grad) const {
  const int s = conv_stages();
  if (want_input_grad && trace.start != 0) {
    fail(ErrorCode::NonDifferentiableBackend, "input gradient requested from a partial trace");
  }
  if (trace.start > s) return {};
  int lowest = want_input_grad ? 0 : s + 1;
  if (!want_input_grad && grads) {
    for (int g = trace.start; g <= s; ++g) {
      if (trainable_[g]) {
        lowest = g;
        break;
      }
    }
  }
  if (lowest > s) return {};

  std::vector<double> draw(dembedding.begin(), dembedding.end());
  if (arch_.normalize) draw = nn::l2_normalize_backward(trace.embedding, trace.norm, dembedding);

  const bool train_proj = grads && trainable_[s];
  std::vector<double> dproj_in;
  proj_.backward(trace.proj_input, draw, train_proj ? &grads->weight[s] : nullptr,
                 train_proj ? &grads->bias[s] : nullptr, lowest < s ? &dproj_in : nullptr);
  if (lowest == s) return {};

  nn::Tensor dout(trace.outputs[s - 1].c, trace.outputs[s - 1].h, trace.outputs[s - 1].w);
  dout.data = std::move(dproj_in);
  for (int g = s - 1; g >= lowest; --g) {
    nn::relu_backward_inplace(trace.outputs[g].data, dout.data);
    const bool train = grads && trainable_[g];
    const bool need_dx = g > lowest || want_input_grad;
    nn::Tensor dx;
    convs_[g].backward(trace.inputs[g], trace.cols[g], dout, train ? &grads->weight[g] : nullptr,
                       train ? &grads->bias[g] : nullptr, need_dx ? &dx : nullptr);
    if (!need_dx) break;
    dout = std::move(dx);
  }
  if (!want_input_grad) return {};
  return std::move(dout.data);
}

std::vector<double> EmbeddingBackend::input_gradient(const FaceImage& image,
                                                     std::span<const double> dembedding) const {
  const Trace t = forward(image);
  return backward(t, dembedding, nullptr, true);
}

std::vector<std::vector<double>*> EmbeddingBackend::trainable_parameters() {
  std::vector<std::vector<double>*> out;
  for (int g = 0; g < conv_stages(); ++g) {
    if (trainable_[g]) {
      out.push_back(&convs_[g].weight);
      out.push_back(&convs_[g].bias);
    }
  }
  if (trainable_[conv_stages()]) {
    out.push_back(&proj_.weight);
    out.push_back(&proj_.bias);
  }
  return out;
}

std::vector<std::vector<double>> EmbeddingBackend::flatten_trainable(const Grads& grads,
                                                                     double scale) const {
  std::vector<std::vector<double>> out;
  for (int g = 0; g < num_groups(); ++g) {
    if (!trainable_[g]) continue;
    for (const auto* src : {&grads.weight[g], &grads.bias[g]}) {
      std::vector<double> v(*src);
      for (double& x : v) x *= scale;
      out.push_back(std::move(v));
    }
  }
  return out;
}

namespace {

void fnv_bytes(std::uint64_t& h, const std::vector<double>& v) {
  const auto* p = reinterpret_cast<const unsigned char*>(v.data());
  for (std::size_t i = 0; i < v.size() * sizeof(double); ++i) h = (h ^ p[i]) * 0x100000001B3ULL;
}

}  // namespace

std::uint64_t EmbeddingBackend::parameter_hash(const std::string& group) const {
  const int g = group_index(group);
  std::uint64_t h = 0xCBF29CE484222325ULL;
  if (g < conv_stages()) {
    fnv_bytes(h, convs_[g].weight);
    fnv_bytes(h, convs_[g].bias);
  } else {
    fnv_bytes(h, proj_.weight);
    fnv_bytes(h, proj_.bias);
  }
  return h;
}

std::uint64_t EmbeddingBackend::parameter_hash() const {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (const auto& c : convs_) {
    fnv_bytes(h, c.weight);
    fnv_bytes(h, c.bias);
  }
  fnv_bytes(h, proj_.weight);
  fnv_bytes(h, proj_.bias);
  return h;
}

std::vector<double> EmbeddingBackend::serialize_parameters() const {
  std::vector<double> flat;
  for (const auto& c : convs_) {
    flat.insert(flat.end(), c.weight.begin(), c.weight.end());
    flat.insert(flat.end(), c.bias.begin(), c.bias.end());
  }
  flat.insert(flat.end(), proj_.weight.begin(), proj_.weight.end());
  flat.insert(flat.end(), proj_.bias.begin(), proj_.bias.end());
  return flat;
}

void EmbeddingBackend::deserialize_parameters(std::span<const double> flat) {
  std::size_t expected = proj_.weight.size() + proj_.bias.size();
  for (const auto& c : convs_) expected += c.weight.size() + c.bias.size();
  if (flat.size() != expected) {
    fail(ErrorCode::CorruptCheckpoint, "backbone parameter count " + std::to_string(flat.size()) +
                                           " != " + std::to_string(expected));
  }
  std::size_t off = 0;
  auto take = [&](std::vector<double>& dst) {
    std::copy(flat.begin() + off, flat.begin() + off + dst.size(), dst.begin());
    off += dst.size();
  };
  for (auto& c : convs_) {
    take(c.weight);
    take(c.bias);
  }
  take(proj_.weight);
  take(proj_.bias);
}

// ---------------------------------------------------------------------------
// Distributions, configs

bool IdProbDist::valid(double tol) const {
  if (probs.empty()) return false;
  double s = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0 && p <= 1.0)) return false;
    s += p;
  }
  return std::abs(s - 1.0) <= tol;
}

void TrainConfig::validate() const {
  if (epochs <= 0 || batch_size <= 0 || !(initial_lr > 0.0)) {
    fail(ErrorCode::ConfigInvalid, "epochs, batch_size and initial_lr must be positive");
  }
  if (!(lr_decay.factor > 0.0) || lr_decay.every_epochs <= 0) {
    fail(ErrorCode::ConfigInvalid, "lr_decay factor and every_epochs must be positive");
  }
  if (optimizer != "adam") fail(ErrorCode::ConfigInvalid, "unsupported optimizer " + optimizer);
  if (mask_refresh_epochs <= 0) fail(ErrorCode::ConfigInvalid, "mask_refresh_epochs must be positive");
  if (!(alpha >= 0.0 && alpha < 1.0)) fail(ErrorCode::ConfigInvalid, "alpha must lie in [0,1)");
  if (n_blocks < 0 || block_size < 0) fail(ErrorCode::ConfigInvalid, "mask geometry must be >= 0");
  if (!(fill_value >= 0.0 && fill_value <= 1.0)) fail(ErrorCode::ConfigInvalid, "fill_value outside [0,1]");
  if (!(feature_scale > 0.0)) fail(ErrorCode::ConfigInvalid, "feature_scale must be positive");
}

double TrainConfig::learning_rate(int epoch) const {
  return initial_lr * std::pow(lr_decay.factor, epoch / lr_decay.every_epochs);
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"initial_lr", initial_lr},
          {"lr_decay", {{"factor", lr_decay.factor}, {"every_epochs", lr_decay.every_epochs}}},
          {"optimizer", optimizer},
          {"mask_refresh_epochs", mask_refresh_epochs},
          {"alpha", alpha},
          {"trainable_stages", trainable_stages},
          {"n_blocks", n_blocks},
          {"block_size", block_size},
          {"fill_value", fill_value},
          {"feature_scale", feature_scale}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  static const std::vector<std::string> known{
      "epochs",  "batch_size",       "initial_lr", "lr_decay", "optimizer", "mask_refresh_epochs",
      "alpha",   "trainable_stages", "n_blocks",   "block_size", "fill_value", "feature_scale"};
  if (!j.is_object()) fail(ErrorCode::ConfigInvalid, "train config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      fail(ErrorCode::ConfigInvalid, "unknown train config field " + key);
    }
  }
  TrainConfig c;
  try {
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.initial_lr = j.value("initial_lr", c.initial_lr);
    if (j.contains("lr_decay")) {
      c.lr_decay.factor = j["lr_decay"].value("factor", c.lr_decay.factor);
      c.lr_decay.every_epochs = j["lr_decay"].value("every_epochs", c.lr_decay.every_epochs);
    }
    c.optimizer = j.value("optimizer", c.optimizer);
    c.mask_refresh_epochs = j.value("mask_refresh_epochs", c.mask_refresh_epochs);
    c.alpha = j.value("alpha", c.alpha);
    c.trainable_stages = j.value("trainable_stages", c.trainable_stages);
    c.n_blocks = j.value("n_blocks", c.n_blocks);
    c.block_size = j.value("block_size", c.block_size);
    c.fill_value = j.value("fill_value", c.fill_value);
    c.feature_scale = j.value("feature_scale", c.feature_scale);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ConfigInvalid, e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// IdentificationModel

IdentificationModel::IdentificationModel(EmbeddingBackend backbone, nn::Linear head,
                                         IdentitySet identities, TrainConfig config)
    : backbone_(std::move(backbone)), head_(std::move(head)), identities_(std::move(identities)),
      config_(std::move(config)) {
  if (head_.in_features() != backbone_.embed_dim() ||
      head_.out_features() != static_cast<int>(identities_.size())) {
    fail(ErrorCode::ShapeMismatch, "head does not map embed_dim to the identity count");
  }
}

namespace {

std::vector<double> scaled(std::vector<double> v, double s) {
  for (double& x : v) x *= s;
  return v;
}

}  // namespace

std::vector<double> IdentificationModel::logits(const FaceImage& image) const {
  return head_.forward(scaled(backbone_.embed(image), config_.feature_scale));
}

IdProbDist IdentificationModel::predict(const FaceImage& image) const {
  return {nn::softmax(logits(image))};
}

std::vector<double> IdentificationModel::input_gradient_of_logits(
    const FaceImage& image, std::span<const double> logit_weights) const {
  const auto trace = backbone_.forward(image);
  std::vector<double> dz;
  head_.backward(scaled(trace.embedding, config_.feature_scale), logit_weights, nullptr, nullptr, &dz);
  return backbone_.backward(trace, scaled(std::move(dz), config_.feature_scale), nullptr, true);
}

std::pair<IdProbDist, std::vector<double>> IdentificationModel::max_prob_gradient(
    const FaceImage& image) const {
  const auto trace = backbone_.forward(image);
  const auto input = scaled(trace.embedding, config_.feature_scale);
  const auto p = nn::softmax(head_.forward(input));
  const auto c = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
  std::vector<double> w(p.size());
  for (std::size_t j = 0; j < p.size(); ++j) w[j] = p[c] * ((j == c ? 1.0 : 0.0) - p[j]);
  std::vector<double> dz;
  head_.backward(input, w, nullptr, nullptr, &dz);
  return {IdProbDist{p}, backbone_.backward(trace, scaled(std::move(dz), config_.feature_scale), nullptr, true)};
}

IdProbDist predict(const IdentificationModel& model, const FaceImage& image) {
  return model.predict(image);
}

SmoothedLabel smooth_label(std::size_t target_index, std::size_t num_classes, double alpha) {
  if (num_classes == 0 || target_index >= num_classes) {
    fail(ErrorCode::IndexOutOfRange, "target " + std::to_string(target_index) + " with K=" +
                                         std::to_string(num_classes));
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) fail(ErrorCode::InvalidRange, "alpha outside [0,1]");
  SmoothedLabel s;
  s.target_index = target_index;
  s.alpha = alpha;
  const double k = static_cast<double>(num_classes);
  s.values.assign(num_classes, alpha / k);
  s.values[target_index] = 1.0 - alpha + alpha / k;
  return s;
}

// ---------------------------------------------------------------------------
// Attention masks

std::vector<MaskBlock> select_mask_blocks(std::span<const double> saliency, int height, int width,
                                          int n_blocks, int block_size) {
  if (static_cast<int>(saliency.size()) != height * width) {
    fail(ErrorCode::ShapeMismatch, "saliency map size does not match H×W");
  }
  if (block_size <= 0 || block_size > std::min(height, width)) {
    fail(ErrorCode::InvalidRange, "block_size must be in [1, min(H,W)]");
  }
  std::vector<char> excluded(saliency.size(), 0);
  std::vector<MaskBlock> blocks;
  for (int b = 0; b < n_blocks; ++b) {
    std::ptrdiff_t best = -1;
    for (std::size_t i = 0; i < saliency.size(); ++i) {
      if (excluded[i]) continue;
      if (best < 0 || saliency[i] > saliency[best]) best = static_cast<std::ptrdiff_t>(i);
    }
    if (best < 0) {
      fail(ErrorCode::InvalidRange, "cannot place " + std::to_string(n_blocks) + " blocks of size " +
                                        std::to_string(block_size));
    }
    const int r = static_cast<int>(best / width), c = static_cast<int>(best % width);
    blocks.push_back({std::clamp(r - block_size / 2, 0, height - block_size),
                      std::clamp(c - block_size / 2, 0, width - block_size), block_size});
    for (int y = std::max(0, r - block_size); y <= std::min(height - 1, r + block_size); ++y) {
      for (int x = std::max(0, c - block_size); x <= std::min(width - 1, c + block_size); ++x) {
        excluded[y * width + x] = 1;
      }
    }
  }
  return blocks;
}

AttentionMask attention_mask_from_gradients(const IdentificationModel& model, const FaceImage& image,
                                            std::size_t label, int n_blocks, int block_size,
                                            double fill_value) {
  AttentionMask mask;
  mask.fill_value = fill_value;
  if (n_blocks == 0) return mask;
  if (label >= model.num_classes()) fail(ErrorCode::IndexOutOfRange, "mask label");
  std::vector<double> w(model.num_classes(), 0.0);
  w[label] = 1.0;
  const auto grad = model.input_gradient_of_logits(image, w);
  const int h = image.height(), wd = image.width();
  const std::size_t plane = static_cast<std::size_t>(h) * wd;
  std::vector<double> sal(plane, 0.0);
  for (int c = 0; c < image.channels(); ++c) {
    for (std::size_t i = 0; i < plane; ++i) sal[i] += std::abs(grad[c * plane + i]);
  }
  for (double v : sal) {
    if (!std::isfinite(v)) fail(ErrorCode::NonDifferentiableBackend, "non-finite input gradient");
  }
  mask.blocks = select_mask_blocks(sal, h, wd, n_blocks, block_size);
  return mask;
}

FaceImage apply_mask(const FaceImage& image, const AttentionMask& mask) {
  FaceImage out = image;
  for (const auto& b : mask.blocks) {
    if (b.row < 0 || b.col < 0 || b.row + b.size > image.height() || b.col + b.size > image.width()) {
      fail(ErrorCode::InvalidRange, "mask block outside image bounds");
    }
    for (int c = 0; c < image.channels(); ++c) {
      for (int y = b.row; y < b.row + b.size; ++y) {
        for (int x = b.col; x < b.col + b.size; ++x) out.at(c, y, x) = mask.fill_value;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

namespace {

struct Example {
  FaceImage image;
  std::size_t label;
};

std::vector<Example> collect_examples(const DatasetManifest& train, const ImageStore& store) {
  const auto& ids = train.identity_set();
  std::vector<std::size_t> counts(ids.size(), 0);
  std::vector<Example> out;
  for (const auto& r : train.records()) {
    if (r.split != Split::Train) continue;
    if (r.is_fake) fail(ErrorCode::FakeInTrainSet, r.image_ref);
    const auto k = ids.index_of(*r.identity);
    ++counts[k];
    out.push_back({store.load(r.image_ref), k});
  }
  for (std::size_t k = 0; k < ids.size(); ++k) {
    if (counts[k] == 0) fail(ErrorCode::EmptyIdentity, ids.label(k) + " has no training images");
  }
  return out;
}

int resolve_block_size(const TrainConfig& cfg, const ImageShape& shape) {
  return cfg.block_size > 0 ? cfg.block_size : std::max(1, std::min(shape.height, shape.width) / 8);
}

/// Head rows start as the unit mean embedding of each class, bias zero, so
/// the initial logits are scaled cosines to the class centroids.
nn::Linear imprinted_head(const std::vector<Example>& examples, const EmbeddingBackend& backbone,
                          std::size_t k) {
  const auto d = static_cast<std::size_t>(backbone.embed_dim());
  nn::Linear head(static_cast<int>(d), static_cast<int>(k));
  for (const auto& ex : examples) {
    const auto e = backbone.embed(ex.image);
    std::transform(e.begin(), e.end(), head.weight.begin() + ex.label * d, head.weight.begin() + ex.label * d,
                   std::plus<>());
  }
  for (std::size_t c = 0; c < k; ++c) {
    const std::span<double> row(head.weight.data() + c * d, d);
    const double n = std::sqrt(std::inner_product(row.begin(), row.end(), row.begin(), 0.0));
    if (n > 0.0) {
      for (double& v : row) v /= n;
    }
  }
  return head;
}

IdentificationModel train_impl(const std::vector<Example>& examples, const IdentitySet& ids,
                               const EmbeddingBackend& initial, const TrainConfig& cfg,
                               std::uint64_t seed, bool finetune, TrainReport* report) {
  cfg.validate();
  EmbeddingBackend backbone = initial;
  if (finetune) {
    backbone.set_trainable(cfg.trainable_stages);
  } else {
    backbone.freeze_all();
  }
  const std::size_t k = ids.size();
  nn::Linear head = imprinted_head(examples, backbone, k);

  auto params = backbone.trainable_parameters();
  params.push_back(&head.weight);
  params.push_back(&head.bias);
  nn::Adam adam(params);

  const int first = backbone.first_trainable_group();
  const bool backbone_trains = backbone.any_trainable();
  const bool masking = finetune && cfg.n_blocks > 0;
  const int block_size = examples.empty() ? 1 : resolve_block_size(cfg, examples.front().image.shape());

  std::vector<std::vector<double>> targets(k);
  for (std::size_t c = 0; c < k; ++c) {
    targets[c] = finetune ? smooth_label(c, k, cfg.alpha).values : smooth_label(c, k, 0.0).values;
  }

  std::vector<nn::Tensor> prefix(examples.size());
  auto fill_prefix = [&](const std::function<FaceImage(std::size_t)>& input) {
    for (std::size_t i = 0; i < examples.size(); ++i) prefix[i] = backbone.forward_prefix(input(i), first);
  };
  if (!masking) fill_prefix([&](std::size_t i) { return examples[i].image; });

  TrainReport local;
  TrainReport& rep = report ? *report : local;
  rep = TrainReport{};

  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (masking && epoch % cfg.mask_refresh_epochs == 0) {
      const IdentificationModel snapshot(backbone, head, ids, cfg);
      ++rep.snapshots_taken;
      fill_prefix([&](std::size_t i) {
        const auto mask = attention_mask_from_gradients(snapshot, examples[i].image, examples[i].label,
                                                        cfg.n_blocks, block_size, cfg.fill_value);
        return apply_mask(examples[i].image, mask);
      });
    }
    Rng rng = make_rng(seed, "shuffle", epoch);
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = cfg.learning_rate(epoch);
    double epoch_loss = 0.0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
      const std::size_t b1 = std::min(order.size(), b0 + cfg.batch_size);
      auto grads = backbone.zero_grads();
      std::vector<double> dhw(head.weight.size(), 0.0), dhb(head.bias.size(), 0.0);
      for (std::size_t bi = b0; bi < b1; ++bi) {
        const std::size_t i = order[bi];
        const auto trace = backbone.forward_from(prefix[i], first);
        const auto input = scaled(trace.embedding, cfg.feature_scale);
        const auto logits = head.forward(input);
        std::vector<double> dlogits;
        epoch_loss += nn::soft_cross_entropy(logits, targets[examples[i].label], &dlogits);
        std::vector<double> dz;
        head.backward(input, dlogits, &dhw, &dhb, backbone_trains ? &dz : nullptr);
        if (backbone_trains) backbone.backward(trace, scaled(std::move(dz), cfg.feature_scale), &grads, false);
      }
      const double scale = 1.0 / static_cast<double>(b1 - b0);
      auto flat = backbone.flatten_trainable(grads, scale);
      for (double& v : dhw) v *= scale;
      for (double& v : dhb) v *= scale;
      flat.push_back(std::move(dhw));
      flat.push_back(std::move(dhb));
      adam.step(flat, lr);
    }
    rep.epoch_loss.push_back(examples.empty() ? 0.0 : epoch_loss / examples.size());
  }

  backbone.freeze_all();
  IdentificationModel model(std::move(backbone), std::move(head), ids, cfg);
  std::size_t correct = 0;
  for (const auto& ex : examples) {
    const auto p = model.predict(ex.image).probs;
    if (static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin()) == ex.label) ++correct;
  }
  rep.final_train_accuracy = examples.empty() ? 0.0 : static_cast<double>(correct) / examples.size();
  return model;
}

}  // namespace

IdentificationModel train_baseline(const DatasetManifest& train, const ImageStore& store,
                                   const EmbeddingBackend& backbone, const TrainConfig& cfg,
                                   std::uint64_t seed, TrainReport* report) {
  const auto examples = collect_examples(train, store);
  return train_impl(examples, train.identity_set(), backbone, cfg, seed, false, report);
}

IdentificationModel finetune_attention(const DatasetManifest& train, const ImageStore& store,
                                       const EmbeddingBackend& backbone, const TrainConfig& cfg,
                                       std::uint64_t seed, TrainReport* report) {
  const auto examples = collect_examples(train, store);
  return train_impl(examples, train.identity_set(), backbone, cfg, seed, true, report);
}

EmbeddingBackend pretrain_backbone(const BackboneArch& arch, const PretrainConfig& cfg,
                                   const PretrainSampler& sample, std::uint64_t seed,
                                   PretrainReport* report) {
  if (!arch.normalize) fail(ErrorCode::ConfigInvalid, "margin pretraining needs a normalized backbone");
  if (cfg.n_classes < 2 || cfg.samples_per_epoch <= 0 || cfg.epochs <= 0 || cfg.batch_size <= 0) {
    fail(ErrorCode::ConfigInvalid, "invalid pretraining configuration");
  }
  EmbeddingBackend backbone(arch, seed);
  backbone.set_trainable(backbone.stage_names());
  const int d = arch.embed_dim;
  const int k = cfg.n_classes;
  std::vector<double> classes(static_cast<std::size_t>(k) * d);
  {
    Rng rng = make_rng(seed, "pretrain_classes");
    std::normal_distribution<double> n01(0.0, 1.0);
    for (double& v : classes) v = n01(rng);
  }
  auto params = backbone.trainable_parameters();
  params.push_back(&classes);
  nn::Adam adam(params);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    int correct = 0;
    for (int b0 = 0; b0 < cfg.samples_per_epoch; b0 += cfg.batch_size) {
      const int b1 = std::min(cfg.samples_per_epoch, b0 + cfg.batch_size);
      auto grads = backbone.zero_grads();
      std::vector<double> dclasses(classes.size(), 0.0);
      // Normalized class centres for this step.
      std::vector<double> norms(k);
      std::vector<double> centres(classes.size());
      for (int j = 0; j < k; ++j) {
        std::span<const double> row(classes.data() + static_cast<std::size_t>(j) * d, d);
        norms[j] = nn::l2_norm(row);
        for (int t = 0; t < d; ++t) centres[j * d + t] = row[t] / norms[j];
      }
      std::vector<double> dcentres(classes.size(), 0.0);
      for (int i = b0; i < b1; ++i) {
        auto [image, label] = sample(epoch, i);
        const auto trace = backbone.forward(image);
        const auto& z = trace.embedding;
        std::vector<double> logits(k);
        for (int j = 0; j < k; ++j) {
          double cosv = 0.0;
          for (int t = 0; t < d; ++t) cosv += centres[j * d + t] * z[t];
          logits[j] = cfg.scale * (cosv - (j == label ? cfg.margin : 0.0));
        }
        if (std::max_element(logits.begin(), logits.end()) - logits.begin() == label) ++correct;
        std::vector<double> onehot(k, 0.0);
        onehot[label] = 1.0;
        std::vector<double> dlogits;
        loss_sum += nn::soft_cross_entropy(logits, onehot, &dlogits);
        std::vector<double> dz(d, 0.0);
        for (int j = 0; j < k; ++j) {
          const double g = cfg.scale * dlogits[j];
          if (g == 0.0) continue;
          for (int t = 0; t < d; ++t) {
            dz[t] += g * centres[j * d + t];
            dcentres[j * d + t] += g * z[t];
          }
        }
        backbone.backward(trace, dz, &grads, false);
      }
      const double scale = 1.0 / (b1 - b0);
      for (int j = 0; j < k; ++j) {
        std::span<const double> cn(centres.data() + static_cast<std::size_t>(j) * d, d);
        std::span<const double> dc(dcentres.data() + static_cast<std::size_t>(j) * d, d);
        const auto dv = nn::l2_normalize_backward(cn, norms[j], dc);
        for (int t = 0; t < d; ++t) dclasses[j * d + t] = dv[t] * scale;
      }
      auto flat = backbone.flatten_trainable(grads, scale);
      flat.push_back(std::move(dclasses));
      adam.step(flat, cfg.lr);
    }
    if (report) {
      report->epoch_loss.push_back(loss_sum / cfg.samples_per_epoch);
      report->epoch_accuracy.push_back(static_cast<double>(correct) / cfg.samples_per_epoch);
    }
  }
  backbone.freeze_all();
  return backbone;
}

}  // namespace idpf::idmodel
