#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "idpf/identity.hpp"
#include "idpf/image.hpp"
#include "idpf/manifest.hpp"
#include "idpf/nn.hpp"

namespace idpf::idmodel {

struct BackboneArch {
  ImageShape input{64, 64, 3};
  std::vector<int> widths{8, 16, 32, 32};  // one stride-2 conv stage per entry
  int embed_dim = 128;
  bool normalize = true;

  nlohmann::json to_json() const;
  static BackboneArch from_json(const nlohmann::json& j);
  friend bool operator==(const BackboneArch&, const BackboneArch&) = default;
};

/// Convolutional identity extractor: named stages "stage1".."stageN" followed
/// by a linear projection "proj" to the embedding.
class EmbeddingBackend {
 public:
  EmbeddingBackend() = default;
  EmbeddingBackend(BackboneArch arch, std::uint64_t seed);

  const BackboneArch& arch() const { return arch_; }
  int embed_dim() const { return arch_.embed_dim; }
  int conv_stages() const { return static_cast<int>(convs_.size()); }
  /// Stage groups in forward order; the last is "proj".
  int num_groups() const { return conv_stages() + 1; }
  std::vector<std::string> stage_names() const;
  int group_index(const std::string& name) const;

  const std::vector<bool>& trainable_mask() const { return trainable_; }
  void set_trainable(const std::vector<std::string>& names);
  void freeze_all();
  bool any_trainable() const;
  /// First trainable group, or num_groups() when everything is frozen.
  int first_trainable_group() const;

  /// Cached activations of one forward pass, starting at group `start`.
  struct Trace {
    int start = 0;
    std::vector<nn::Tensor> inputs;            // input to each conv stage >= start
    std::vector<std::vector<double>> cols;     // im2col buffers
    std::vector<nn::Tensor> outputs;           // post-ReLU output of each conv stage
    std::vector<double> proj_input;
    std::vector<double> raw;                   // projection output
    double norm = 1.0;
    std::vector<double> embedding;
  };

  /// Activation at the input of group `g` (g == num_groups() is the embedding).
  nn::Tensor forward_prefix(const FaceImage& image, int g) const;
  /// Forward from a prefix activation at group `start` to the embedding.
  Trace forward_from(const nn::Tensor& activation, int start) const;
  Trace forward(const FaceImage& image) const;
  std::vector<double> embed(const FaceImage& image) const;

  /// Per-group parameter gradients: {weight, bias} for every group.
  struct Grads {
    std::vector<std::vector<double>> weight, bias;
  };
  Grads zero_grads() const;

  /// Backpropagate dL/d(embedding). Parameter gradients are accumulated into
  /// `grads` for trainable groups; the input gradient is returned when
  /// `want_input_grad` (requires the trace to start at group 0).
  std::vector<double> backward(const Trace& trace, std::span<const double> dembedding, Grads* grads,
                               bool want_input_grad) const;

  std::vector<double> input_gradient(const FaceImage& image, std::span<const double> dembedding) const;

  std::vector<std::vector<double>*> trainable_parameters();
  /// Gradient buffers matching trainable_parameters().
  std::vector<std::vector<double>> flatten_trainable(const Grads& grads, double scale) const;

  /// FNV-1a over the raw bytes of one group's parameters.
  std::uint64_t parameter_hash(const std::string& group) const;
  std::uint64_t parameter_hash() const;

  std::vector<double> serialize_parameters() const;
  void deserialize_parameters(std::span<const double> flat);

 private:
  void check_input(const FaceImage& image) const;

  BackboneArch arch_;
  std::vector<nn::Conv2d> convs_;
  nn::Linear proj_;
  std::vector<bool> trainable_;
  int final_h_ = 0, final_w_ = 0;
};

/// Class-probability vector over the identity set.
struct IdProbDist {
  std::vector<double> probs;

  std::size_t size() const { return probs.size(); }
  bool valid(double tol = 1e-6) const;
};

struct LrDecay {
  double factor = 0.1;
  int every_epochs = 10;
};

struct TrainConfig {
  int epochs = 30;
  int batch_size = 128;
  double initial_lr = 0.001;
  LrDecay lr_decay{};
  std::string optimizer = "adam";
  int mask_refresh_epochs = 5;
  double alpha = 0.5;
  std::vector<std::string> trainable_stages{"stage4", "proj"};
  int n_blocks = 10;
  int block_size = 0;  // 0 => image side / 8
  double fill_value = 0.5;
  double feature_scale = 8.0;  // head input is feature_scale · unit embedding

  void validate() const;
  double learning_rate(int epoch) const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

class IdentificationModel {
 public:
  IdentificationModel() = default;
  IdentificationModel(EmbeddingBackend backbone, nn::Linear head, IdentitySet identities,
                      TrainConfig config = {});

  const EmbeddingBackend& backbone() const { return backbone_; }
  EmbeddingBackend& backbone() { return backbone_; }
  const nn::Linear& head() const { return head_; }
  nn::Linear& head() { return head_; }
  const IdentitySet& identity_set() const { return identities_; }
  const TrainConfig& training_config() const { return config_; }
  std::size_t num_classes() const { return identities_.size(); }

  std::vector<double> logits(const FaceImage& image) const;
  IdProbDist predict(const FaceImage& image) const;

  /// d(Σ_k w_k·logit_k)/d(pixels) for a weight vector over classes.
  std::vector<double> input_gradient_of_logits(const FaceImage& image,
                                               std::span<const double> logit_weights) const;
  /// Probabilities and the input gradient of the largest probability.
  std::pair<IdProbDist, std::vector<double>> max_prob_gradient(const FaceImage& image) const;

 private:
  EmbeddingBackend backbone_;
  nn::Linear head_;
  IdentitySet identities_;
  TrainConfig config_;
};

IdProbDist predict(const IdentificationModel& model, const FaceImage& image);

struct SmoothedLabel {
  std::size_t target_index = 0;
  double alpha = 0.0;
  std::vector<double> values;
};

SmoothedLabel smooth_label(std::size_t target_index, std::size_t num_classes, double alpha);

struct MaskBlock {
  int row = 0, col = 0, size = 0;  // top-left corner and side
  friend bool operator==(const MaskBlock&, const MaskBlock&) = default;
};

struct AttentionMask {
  std::vector<MaskBlock> blocks;
  double fill_value = 0.5;

  std::size_t n_blocks() const { return blocks.size(); }
};

/// Greedy peak picking on an H×W saliency map: take the maximum (ties broken
/// in row-major order), record a block centred there, exclude a window of
/// side 2·block_size+1 around it, repeat.
std::vector<MaskBlock> select_mask_blocks(std::span<const double> saliency, int height, int width,
                                          int n_blocks, int block_size);

AttentionMask attention_mask_from_gradients(const IdentificationModel& model, const FaceImage& image,
                                            std::size_t label, int n_blocks, int block_size,
                                            double fill_value = 0.5);

FaceImage apply_mask(const FaceImage& image, const AttentionMask& mask);

/// Diagnostics from a training run.
struct TrainReport {
  int snapshots_taken = 0;
  std::vector<double> epoch_loss;
  double final_train_accuracy = 0.0;
};

IdentificationModel train_baseline(const DatasetManifest& train, const ImageStore& store,
                                   const EmbeddingBackend& backbone, const TrainConfig& cfg,
                                   std::uint64_t seed, TrainReport* report = nullptr);

IdentificationModel finetune_attention(const DatasetManifest& train, const ImageStore& store,
                                       const EmbeddingBackend& backbone, const TrainConfig& cfg,
                                       std::uint64_t seed, TrainReport* report = nullptr);

/// Margin-softmax (additive cosine margin) pretraining of a backbone on an
/// external labelled stream.
struct PretrainConfig {
  int n_classes = 0;
  int samples_per_epoch = 0;
  int epochs = 8;
  int batch_size = 32;
  double lr = 0.002;
  double margin = 0.6;
  double scale = 16.0;
};

struct PretrainReport {
  std::vector<double> epoch_loss;
  std::vector<double> epoch_accuracy;
};

/// `sample(epoch, i)` yields the i-th labelled training image of an epoch.
using PretrainSampler = std::function<std::pair<FaceImage, int>(int epoch, int index)>;

EmbeddingBackend pretrain_backbone(const BackboneArch& arch, const PretrainConfig& cfg,
                                   const PretrainSampler& sample, std::uint64_t seed,
                                   PretrainReport* report = nullptr);

}  // namespace idpf::idmodel
