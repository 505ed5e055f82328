#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tinyseq/nn.hpp"
#include "tinyseq/tensor.hpp"

namespace tinyseq {

namespace vocab {
inline constexpr int zero = 0;
inline constexpr int one = 1;
inline constexpr int sos = 2;
inline constexpr int eos = 3;
inline constexpr int pad = 4;
// Real tokens; PAD is the extra id num_tokens.
inline constexpr int num_tokens = 4;
}  // namespace vocab

std::string token_name(int id);

// Sequence-first token ids, [length x batch].
struct TokenMatrix {
  std::size_t length = 0;
  std::size_t batch = 0;
  std::vector<int> ids;

  TokenMatrix() = default;
  TokenMatrix(std::size_t length, std::size_t batch, int fill);
  // Single column (batch of one).
  static TokenMatrix column(std::span<const int> tokens);

  int at(std::size_t pos, std::size_t b) const { return ids[pos * batch + b]; }
  int& at(std::size_t pos, std::size_t b) { return ids[pos * batch + b]; }
  std::vector<int> sequence(std::size_t b) const;
};

// Learnable lookup table. The padding row, when present, is zero-initialized
// and never receives gradient.
struct EmbeddingTable {
  Tensor table;  // [rows x d_model]
  std::optional<int> padding_idx;

  static EmbeddingTable create(ParameterRegistry& registry, const std::string& name,
                               std::size_t rows, std::size_t d_model,
                               std::optional<int> padding_idx);
  std::size_t rows() const { return table.dim(0); }
  std::size_t d_model() const { return table.dim(1); }
  // Zeroes the padding row; call after random initialization.
  void reset_padding_row();
};

// Row lookup scaled by sqrt(d_model): [S x B] -> [S x B x d_model].
Tensor embed(const EmbeddingTable& table, const TokenMatrix& tokens);

// Affine map from features to per-token logits.
Tensor unembed(const LinearLayer& layer, const Tensor& features);

// Sinusoidal table: pe[pos][2i] = sin(pos / 10000^(2i/d)), pe[pos][2i+1] = cos(...).
struct PositionalTable {
  std::size_t max_len = 0;
  std::size_t d_model = 0;
  double dropout_p = 0.0;
  std::vector<double> pe;  // [max_len x d_model]

  double at(std::size_t pos, std::size_t dim) const { return pe.at(pos * d_model + dim); }
};

inline constexpr std::size_t default_positional_length = 64;

PositionalTable positional_table(std::size_t max_len, std::size_t d_model, double dropout_p = 0.0);

// x[pos] + pe[pos] followed by dropout in training mode. Rank-2 input [L x d]
// is treated as a batch of one and returned as [L x 1 x d].
Tensor add_positional(const PositionalTable& pt, const Tensor& x, const ForwardContext& ctx);

enum class CsvLayout { long_form, wide };

// long_form: "pos,dim,value" rows; wide: "pos,d0,...,d{n-1}" one row per position.
void write_positional_csv(const PositionalTable& pt, std::span<const std::size_t> positions,
                          CsvLayout layout, std::ostream& out);

}  // namespace tinyseq
