#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>

#include "tinyseq/nn.hpp"
#include "tinyseq/seqdata.hpp"
#include "tinyseq/tokens.hpp"
#include "tinyseq/transformer.hpp"

namespace tinyseq {

// Each stage includes everything the previous one has.
enum class Stage { plain, token, masked, positional, padded };

std::string_view stage_name(Stage stage);
Stage parse_stage(std::string_view name);

struct StageFeatures {
  bool tokens = false;       // embedding + un-embedding around the transformer
  bool causal_mask = false;  // target self-attention hides the future
  bool positional = false;   // sinusoidal encoding after embedding
  bool padding = false;      // PAD token, key-padding masks, ignored in the loss
};

StageFeatures stage_features(Stage stage);

struct ModelConfig {
  Stage stage = Stage::padded;
  TransformerConfig transformer;
  std::size_t max_positions = default_positional_length;

  std::size_t vocabulary_rows() const;  // embedding rows, PAD included when present
  std::size_t logit_count() const;      // un-embedding outputs
};

// Defaults for each stage: d_model 1 for the plain stage, 8 otherwise;
// one encoder and one decoder layer, one head, 8 feed-forward units,
// dropout 0.1, eps 1e-5.
ModelConfig default_model_config(Stage stage);

class Seq2SeqModel {
 public:
  static Seq2SeqModel create(const ModelConfig& config, std::uint64_t seed);

  Seq2SeqModel(Seq2SeqModel&&) = default;
  Seq2SeqModel& operator=(Seq2SeqModel&&) = default;
  Seq2SeqModel(const Seq2SeqModel&) = delete;
  Seq2SeqModel& operator=(const Seq2SeqModel&) = delete;

  const ModelConfig& config() const { return config_; }
  StageFeatures features() const { return stage_features(config_.stage); }
  ParameterRegistry& parameters() { return registry_; }
  const ParameterRegistry& parameters() const { return registry_; }
  std::uint64_t seed() const { return seed_; }

  const EncoderDecoder& transformer() const { return transformer_; }
  const std::optional<EmbeddingTable>& embedding() const { return embedding_; }
  const std::optional<LinearLayer>& unembedding() const { return unembedding_; }

  // Token stages: logits [T x B x V] for a framed batch, masks per stage.
  Tensor logits(const Batch& batch, const ForwardContext& ctx) const;
  Tensor logits(const TokenMatrix& src, const TokenMatrix& tgt_in, const TransformerMasks& masks,
                const ForwardContext& ctx) const;

  // Plain stage: raw values src [S x B x 1], tgt [T x B x 1] -> [T x B x 1].
  Tensor values(const Tensor& src, const Tensor& tgt, const ForwardContext& ctx) const;

 private:
  Seq2SeqModel() = default;
  Tensor embed_side(const TokenMatrix& tokens, const ForwardContext& ctx) const;

  ModelConfig config_;
  std::uint64_t seed_ = 0;
  ParameterRegistry registry_;
  EncoderDecoder transformer_;
  std::optional<EmbeddingTable> embedding_;
  std::optional<LinearLayer> unembedding_;
  std::optional<PositionalTable> positional_;
};

// Versioned binary checkpoint:
//   "TSQCKPT\0" | u32 version | u32 header bytes | JSON header (config, seed)
//   | u32 tensor count | per tensor: u32 name bytes, name, u32 rank,
//   u64 extents..., little-endian f64 values.
inline constexpr std::uint32_t checkpoint_version = 1;

void save_checkpoint(const Seq2SeqModel& model, std::ostream& out);
void save_checkpoint(const Seq2SeqModel& model, const std::string& path);
Seq2SeqModel load_checkpoint(std::istream& in);
Seq2SeqModel load_checkpoint(const std::string& path);

}  // namespace tinyseq
