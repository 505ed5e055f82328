#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "tinyseq/masking.hpp"
#include "tinyseq/nn.hpp"
#include "tinyseq/tensor.hpp"

namespace tinyseq {

struct TransformerConfig {
  std::size_t d_model = 1;
  std::size_t nhead = 1;
  std::size_t num_encoder_layers = 1;
  std::size_t num_decoder_layers = 1;
  std::size_t dim_feedforward = 8;
  double dropout_p = 0.1;
  double layer_norm_eps = 1e-5;
  bool norm_first = true;

  // Throws ConfigError when an invariant is violated.
  void validate() const;
};

// Closed-form parameter count of the encoder-decoder stack for cfg.
std::size_t transformer_parameter_count(const TransformerConfig& cfg);

// softmax(q k^T / sqrt(d_h) + additive_mask, key_padding -> -inf) v on a single
// head: q [Lq x d_h], k and v [Lk x d_h]. key_padding, when non-empty, has Lk
// entries. Composed from differentiable primitives.
Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                    const Tensor& additive_mask = {},
                                    std::span<const std::uint8_t> key_padding = {});

// Batched multi-head attention core on already projected inputs:
// q [Lq x B x d], k and v [Lk x B x d], heads split along d. One fused op with
// its own backward rule; agrees with scaled_dot_product_attention per head.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t nhead,
                 const Tensor& additive_mask = {}, const KeyPaddingMask* key_padding = nullptr);

// Packed input projection [3d x d] + bias [3d] and an output projection.
struct MultiheadAttention {
  Tensor in_proj_weight;
  Tensor in_proj_bias;
  LinearLayer out_proj;
  std::size_t d_model = 0;
  std::size_t nhead = 1;

  static MultiheadAttention create(ParameterRegistry& registry, const std::string& prefix,
                                   std::size_t d_model, std::size_t nhead);
  Tensor forward(const Tensor& query, const Tensor& key_value, const Tensor& additive_mask,
                 const KeyPaddingMask* key_padding) const;
};

struct FeedForward {
  LinearLayer linear1;
  LinearLayer linear2;
  Dropout inner_dropout;

  Tensor forward(const Tensor& x, const ForwardContext& ctx) const;
};

struct EncoderLayer {
  MultiheadAttention self_attn;
  FeedForward ff;
  LayerNorm norm1;
  LayerNorm norm2;
  Dropout dropout1;
  Dropout dropout2;

  static EncoderLayer create(ParameterRegistry& registry, const std::string& prefix,
                             const TransformerConfig& cfg);
  // x <- x + Drop(SelfAttn(LN1(x))); x <- x + Drop(FF(LN2(x)))
  Tensor forward(const Tensor& x, const KeyPaddingMask* src_key_padding,
                 const ForwardContext& ctx) const;
};

struct DecoderLayer {
  MultiheadAttention self_attn;
  MultiheadAttention cross_attn;
  FeedForward ff;
  LayerNorm norm1;
  LayerNorm norm2;
  LayerNorm norm3;
  Dropout dropout1;
  Dropout dropout2;
  Dropout dropout3;

  static DecoderLayer create(ParameterRegistry& registry, const std::string& prefix,
                             const TransformerConfig& cfg);
  Tensor forward(const Tensor& y, const Tensor& memory, const Tensor& tgt_mask,
                 const KeyPaddingMask* tgt_key_padding, const KeyPaddingMask* memory_key_padding,
                 const ForwardContext& ctx) const;
};

struct TransformerMasks {
  Tensor tgt_mask;  // additive [T x T]; undefined means every position is visible
  const KeyPaddingMask* src_key_padding = nullptr;
  const KeyPaddingMask* tgt_key_padding = nullptr;
  const KeyPaddingMask* memory_key_padding = nullptr;
};

// Pre-norm encoder-decoder stack with a final norm after each side.
class EncoderDecoder {
 public:
  static EncoderDecoder create(ParameterRegistry& registry, const std::string& prefix,
                               const TransformerConfig& cfg);

  const TransformerConfig& config() const { return cfg_; }

  Tensor encode(const Tensor& src, const KeyPaddingMask* src_key_padding,
                const ForwardContext& ctx) const;
  Tensor decode(const Tensor& tgt, const Tensor& memory, const TransformerMasks& masks,
                const ForwardContext& ctx) const;
  // src [S x B x d], tgt [T x B x d] -> decoder features [T x B x d].
  Tensor forward(const Tensor& src, const Tensor& tgt, const TransformerMasks& masks,
                 const ForwardContext& ctx) const;

  std::vector<EncoderLayer>& encoder_layers() { return encoder_; }
  std::vector<DecoderLayer>& decoder_layers() { return decoder_; }

 private:
  TransformerConfig cfg_;
  std::vector<EncoderLayer> encoder_;
  LayerNorm encoder_norm_;
  std::vector<DecoderLayer> decoder_;
  LayerNorm decoder_norm_;
};

}  // namespace tinyseq
