#include "tinyseq/masking.hpp"

#include <algorithm>
#include <limits>

#include "tinyseq/tokens.hpp"

namespace tinyseq {

CausalMask::CausalMask(std::size_t t) : size_(t), values_(t * t, 0.0) {
  if (t == 0) throw ContractError("causal mask size must be at least 1");
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = i + 1; j < t; ++j) values_[i * t + j] = -std::numeric_limits<double>::infinity();
  values_tensor_ = Tensor({t, t}, values_);
}

CausalMask causal_mask(std::size_t t) { return CausalMask(t); }

std::size_t KeyPaddingMask::count() const {
  return static_cast<std::size_t>(std::count(ignore.begin(), ignore.end(), std::uint8_t{1}));
}

KeyPaddingMask key_padding_mask(const TokenMatrix& tokens, int pad_id) {
  KeyPaddingMask m;
  m.batch = tokens.batch;
  m.length = tokens.length;
  m.ignore.assign(tokens.batch * tokens.length, 0);
  for (std::size_t pos = 0; pos < tokens.length; ++pos)
    for (std::size_t b = 0; b < tokens.batch; ++b)
      m.ignore[b * tokens.length + pos] = tokens.at(pos, b) == pad_id ? 1 : 0;
  return m;
}

}  // namespace tinyseq
