#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "talign/autodiff.hpp"
#include "talign/tensor.hpp"

namespace talign {

struct ModelConfig {
  std::size_t n_layers = 6;
  std::size_t n_heads = 8;
  std::size_t d_model = 64;
  std::size_t d_ff = 0;  // 0 means 4 * d_model
  std::size_t max_T = 64;
  std::size_t c_raw = 64;
  std::size_t text_dim = 32;   // width of the token embedding table
  std::size_t vocab_size = 0;
  bool segment_embedding = false;  // video/text type rows added in the joint encoder

  std::size_t ff_dim() const noexcept { return d_ff == 0 ? 4 * d_model : d_ff; }
  void validate() const;

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Deterministic in (config, seed).
ParameterSet init_params(const ModelConfig& cfg, std::uint64_t seed);

using TokenLists = std::span<const std::vector<std::size_t>>;

// K x d_model: token embedding, 2-layer MLP, max over tokens.
Var embed_text(Tape& tape, const ModelConfig& cfg, const ParameterSet& params, TokenLists tokens);
// T x d_model linear projection of the raw features.
Var embed_visual(Tape& tape, const ModelConfig& cfg, const ParameterSet& params, const Tensor& features);

struct JointOutput {
  Var video;      // T x d
  Var sentences;  // K x d (invalid when K = 0)
};

// Joint encoder over [v + TE; s].
JointOutput multimodal_forward(Tape& tape, const ModelConfig& cfg, const ParameterSet& params, Var v, Var s);
// Video-only encoder over v + TE.
Var dual_forward(Tape& tape, const ModelConfig& cfg, const ParameterSet& params, Var v);

// Cosine similarity of every row of a against every row of b.
Var similarity(Var a, Var b);
Var alignability_head(Tape& tape, const ParameterSet& params, Var sentences);

struct ForwardOutput {
  Var alignment;       // K x T, joint encoder
  Var alignment_dual;  // K x T, dual encoder
  Var logits;          // K x 2, invalid when the head is skipped
  Var video_dual;      // T x d, dual encoder visual output
  Var text;            // K x d, raw sentence embedding
};

ForwardOutput forward(Tape& tape, const ModelConfig& cfg, const ParameterSet& params, const Tensor& features,
                      TokenLists tokens, bool with_head = true);

// Whole-video inference: features are cut into non-overlapping windows of
// max_T, every sentence is scored against every window and the matrices are
// stitched. Logits are converted to probabilities and averaged over windows.
struct VideoInference {
  Tensor alignment;       // K x T
  Tensor alignment_dual;  // K x T
  Tensor video_dual;      // T x d
  std::vector<double> p_alignable;
};

VideoInference infer_video(const ModelConfig& cfg, const ParameterSet& params, const Tensor& features,
                           TokenLists tokens);

}  // namespace talign
