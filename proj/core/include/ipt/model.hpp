#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ipt/degrade.hpp"
#include "ipt/nn.hpp"
#include "ipt/tensor.hpp"

namespace ipt {

/// Identity and wiring of one restoration task: which degradation it
/// inverts and how its tail rescales the output.
struct TaskSpec {
  std::string id;
  TaskKind kind = TaskKind::Denoise;
  int scale = 1;      // output extents = scale * input extents
  double sigma = 0.0; // denoising tasks only, 0-255 scale

  static TaskSpec from_id(const std::string& task_id);
};

struct ModelConfig {
  std::int64_t channels = 8;        // feature channels C
  std::int64_t patch = 4;           // feature patch size P
  int num_encoder_layers = 2;
  int num_decoder_layers = 2;
  int num_heads = 4;
  std::int64_t ffn_hidden = 0;      // 0 -> 4 * token_dim()
  std::int64_t crop = 48;           // training crop; fixes the position table
  std::string head_kind = "resblock";  // "resblock" (conv + 2 ResBlocks) or "simple3"
  std::vector<TaskSpec> tasks;

  std::int64_t token_dim() const { return patch * patch * channels; }
  std::int64_t max_tokens() const { return (crop / patch) * (crop / patch); }
  std::int64_t hidden_dim() const { return ffn_hidden > 0 ? ffn_hidden : 4 * token_dim(); }
  void validate() const;
};

ModelConfig desk_config(std::vector<TaskSpec> tasks);
/// Full-size configuration (C=64, P=3, 12+12 layers, 8 heads); built for the
/// parameter-count check, never trained here.
ModelConfig paper_config(std::vector<TaskSpec> tasks);

struct ConvParams {
  Tensor w, b;
};

struct ResBlockParams {
  ConvParams conv1, conv2;
};

struct HeadParams {
  ConvParams in;                      // 3x3, 3 -> C
  std::vector<ResBlockParams> blocks; // two 5x5 ResBlocks (resblock head)
  std::vector<ConvParams> simple;     // three 3x3 convs (simple3 head)
};

struct TailParams {
  std::vector<ConvParams> convs;
};

struct EncoderLayerParams {
  LayerNormParams ln_attn, ln_ffn;
  MhaParams attn;
  FfnParams ffn;
};

struct DecoderLayerParams {
  LayerNormParams ln_self, ln_cross_q, ln_cross_kv, ln_ffn;
  MhaParams self_attn, cross_attn;
  FfnParams ffn;
};

/// The IPT network: per-task heads and tails around a shared
/// encoder-decoder transformer body, with learned position embeddings and
/// one learned task embedding per task.
class IptModel {
 public:
  ModelConfig config;
  std::vector<HeadParams> heads;            // one per task
  std::vector<TailParams> tails;            // one per task
  std::vector<Tensor> task_embeddings;      // [P*P, C] each
  Tensor position_embeddings;               // [N_max, d], shared across tasks
  std::vector<EncoderLayerParams> encoder;
  std::vector<DecoderLayerParams> decoder;

  static IptModel init(const ModelConfig& config, std::uint64_t seed);

  std::size_t task_index(const std::string& task_id) const;
  const TaskSpec& task(const std::string& task_id) const;
  bool has_task(const std::string& task_id) const;

  void for_each_param(const std::function<void(const std::string&, Tensor&)>& fn);
  void for_each_param(const std::function<void(const std::string&, const Tensor&)>& fn) const;
  std::int64_t parameter_count() const;

  Tensor head_forward(const Tensor& x, const std::string& task_id) const;
  Tensor encoder_forward(const Tensor& tokens) const;  // adds position embeddings
  Tensor decoder_forward(const Tensor& enc_out, const std::string& task_id) const;
  Tensor tail_forward(const Tensor& features, const std::string& task_id) const;

  Tensor forward(const Tensor& x, const std::string& task_id) const;

  struct ForwardResult {
    Tensor output;          // restored image tensor
    Tensor decoder_tokens;  // [B, N, d] features feeding the contrastive loss
  };
  ForwardResult forward_with_features(const Tensor& x, const std::string& task_id) const;

  /// Keeps only one task's head/tail/embedding; the shared body is carried
  /// over unchanged (outputs for the retained task are bit-identical).
  IptModel retain_task(const std::string& task_id) const;

  /// Task embedding flattened to token layout [d].
  Tensor task_embedding_flat(std::size_t idx) const;
};

/// Closed-form parameter census from the configuration, asserted against
/// the constructed model in tests.
std::int64_t expected_parameter_count(const ModelConfig& config);

}  // namespace ipt
