#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <vector>

#include "tinyseq/tensor.hpp"

namespace tinyseq {

// Additive T x T mask: 0 on and below the diagonal, -inf strictly above it.
class CausalMask {
 public:
  explicit CausalMask(std::size_t t);

  std::size_t size() const { return size_; }
  double at(std::size_t row, std::size_t col) const { return values_.at(row * size_ + col); }
  const Tensor& additive() const { return values_tensor_; }

 private:
  std::size_t size_;
  std::vector<double> values_;
  Tensor values_tensor_;
};

CausalMask causal_mask(std::size_t t);

// Batch-first boolean mask; true marks a PAD position that attention ignores.
struct KeyPaddingMask {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<std::uint8_t> ignore;  // [batch x length]

  bool ignored(std::size_t b, std::size_t pos) const { return ignore[b * length + pos] != 0; }
  std::size_t count() const;
  bool any() const { return count() != 0; }
};

struct TokenMatrix;

// Flags positions equal to pad_id; tokens are sequence-first (L x B).
KeyPaddingMask key_padding_mask(const TokenMatrix& tokens, int pad_id);

}  // namespace tinyseq
