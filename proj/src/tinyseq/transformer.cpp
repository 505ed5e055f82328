#include "tinyseq/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace tinyseq {

namespace {

constexpr double neg_inf = -std::numeric_limits<double>::infinity();

}  // namespace

void TransformerConfig::validate() const {
  if (d_model == 0 || nhead == 0 || num_encoder_layers == 0 || num_decoder_layers == 0 ||
      dim_feedforward == 0) {
    throw ConfigError("transformer extents must all be at least 1");
  }
  if (d_model % nhead != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by nhead " +
                      std::to_string(nhead));
  }
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("dropout_p must lie in [0, 1)");
  if (!(layer_norm_eps > 0.0)) throw ConfigError("layer_norm_eps must be positive");
  if (!norm_first) throw ConfigError("only the pre-norm (norm_first) layout is supported");
}

std::size_t transformer_parameter_count(const TransformerConfig& cfg) {
  const std::size_t d = cfg.d_model, ff = cfg.dim_feedforward;
  const std::size_t attention = 4 * d * d + 4 * d;  // packed in-projection + out-projection
  const std::size_t feed_forward = 2 * d * ff + ff + d;
  const std::size_t norm = 2 * d;
  const std::size_t encoder_layer = attention + feed_forward + 2 * norm;
  const std::size_t decoder_layer = 2 * attention + feed_forward + 3 * norm;
  return cfg.num_encoder_layers * encoder_layer + cfg.num_decoder_layers * decoder_layer + 2 * norm;
}

Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                    const Tensor& additive_mask,
                                    std::span<const std::uint8_t> key_padding) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.dim(1) != k.dim(1) ||
      k.dim(0) != v.dim(0)) {
    throw DimensionError("attention: incompatible q " + shape_str(q.shape()) + ", k " +
                         shape_str(k.shape()) + ", v " + shape_str(v.shape()));
  }
  const std::size_t lq = q.dim(0), lk = k.dim(0);
  if (!key_padding.empty() && key_padding.size() != lk) {
    throw DimensionError("attention: key padding length " + std::to_string(key_padding.size()) +
                         " vs " + std::to_string(lk) + " keys");
  }
  auto scores = mul_scalar(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(q.dim(1))));
  Tensor mask = additive_mask;
  if (!key_padding.empty()) {
    std::vector<double> combined(lq * lk, 0.0);
    if (additive_mask.defined()) {
      if (additive_mask.shape() != Shape{lq, lk}) {
        throw DimensionError("attention: mask " + shape_str(additive_mask.shape()) + " vs scores " +
                             shape_str(scores.shape()));
      }
      std::copy(additive_mask.data().begin(), additive_mask.data().end(), combined.begin());
    }
    for (std::size_t i = 0; i < lq; ++i)
      for (std::size_t j = 0; j < lk; ++j)
        if (key_padding[j]) combined[i * lk + j] = neg_inf;
    mask = Tensor({lq, lk}, std::move(combined));
  }
  return matmul(softmax_lastdim(scores, mask), v);
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t nhead,
                 const Tensor& additive_mask, const KeyPaddingMask* key_padding) {
  if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3 || k.shape() != v.shape() ||
      q.dim(1) != k.dim(1) || q.dim(2) != k.dim(2)) {
    throw DimensionError("attention: incompatible q " + shape_str(q.shape()) + ", k " +
                         shape_str(k.shape()) + ", v " + shape_str(v.shape()));
  }
  const std::size_t lq = q.dim(0), lk = k.dim(0), B = q.dim(1), d = q.dim(2);
  if (nhead == 0 || d % nhead != 0) throw ConfigError("attention: d_model not divisible by nhead");
  const std::size_t dh = d / nhead;
  if (additive_mask.defined() && additive_mask.shape() != Shape{lq, lk}) {
    throw DimensionError("attention: mask " + shape_str(additive_mask.shape()) + " expected [" +
                         std::to_string(lq) + "x" + std::to_string(lk) + "]");
  }
  if (key_padding && (key_padding->batch != B || key_padding->length != lk)) {
    throw DimensionError("attention: key padding [" + std::to_string(key_padding->batch) + "x" +
                         std::to_string(key_padding->length) + "] vs batch " + std::to_string(B) +
                         " and " + std::to_string(lk) + " keys");
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  auto Q = q.data();
  auto K = k.data();
  auto V = v.data();
  // Attention weights, laid out [B][head][Lq][Lk].
  auto probs = std::make_shared<std::vector<double>>(B * nhead * lq * lk);
  std::vector<double> out(lq * B * d, 0.0);
  std::vector<double> row(lk);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < nhead; ++h) {
      const std::size_t off = h * dh;
      for (std::size_t i = 0; i < lq; ++i) {
        double mx = neg_inf;
        for (std::size_t j = 0; j < lk; ++j) {
          double s;
          if (key_padding && key_padding->ignored(b, j)) {
            s = neg_inf;
          } else {
            s = 0.0;
            for (std::size_t c = 0; c < dh; ++c) s += Q[(i * B + b) * d + off + c] * K[(j * B + b) * d + off + c];
            s *= scale;
            if (additive_mask.defined()) s += additive_mask.data()[i * lk + j];
          }
          row[j] = s;
          mx = std::max(mx, s);
        }
        double* P = probs->data() + ((b * nhead + h) * lq + i) * lk;
        if (mx == neg_inf) {
          std::fill_n(P, lk, 0.0);
          detail::count_fully_masked_row();
          continue;
        }
        double sum = 0.0;
        for (std::size_t j = 0; j < lk; ++j) {
          P[j] = std::exp(row[j] - mx);
          sum += P[j];
        }
        for (std::size_t j = 0; j < lk; ++j) P[j] /= sum;
        for (std::size_t j = 0; j < lk; ++j) {
          if (P[j] == 0.0) continue;
          for (std::size_t c = 0; c < dh; ++c) out[(i * B + b) * d + off + c] += P[j] * V[(j * B + b) * d + off + c];
        }
      }
    }
  return detail::make_result(
      "attention", {lq, B, d}, std::move(out), {q, k, v},
      [q, k, v, probs, lq, lk, B, d, dh, nhead, scale](std::span<const double> g) {
        auto Q = q.data();
        auto K = k.data();
        auto V = v.data();
        std::span<double> gq, gk, gv;
        if (q.requires_grad()) gq = q.node()->grad_buffer();
        if (k.requires_grad()) gk = k.node()->grad_buffer();
        if (v.requires_grad()) gv = v.node()->grad_buffer();
        std::vector<double> dP(lk);
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t h = 0; h < nhead; ++h) {
            const std::size_t off = h * dh;
            for (std::size_t i = 0; i < lq; ++i) {
              const double* P = probs->data() + ((b * nhead + h) * lq + i) * lk;
              const double* go = g.data() + (i * B + b) * d + off;
              double dot = 0.0;
              for (std::size_t j = 0; j < lk; ++j) {
                double s = 0.0;
                for (std::size_t c = 0; c < dh; ++c) s += go[c] * V[(j * B + b) * d + off + c];
                dP[j] = s;
                dot += P[j] * s;
                if (!gv.empty() && P[j] != 0.0)
                  for (std::size_t c = 0; c < dh; ++c) gv[(j * B + b) * d + off + c] += P[j] * go[c];
              }
              for (std::size_t j = 0; j < lk; ++j) {
                const double ds = P[j] * (dP[j] - dot) * scale;
                if (ds == 0.0) continue;
                for (std::size_t c = 0; c < dh; ++c) {
                  if (!gq.empty()) gq[(i * B + b) * d + off + c] += ds * K[(j * B + b) * d + off + c];
                  if (!gk.empty()) gk[(j * B + b) * d + off + c] += ds * Q[(i * B + b) * d + off + c];
                }
              }
            }
          }
      });
}

MultiheadAttention MultiheadAttention::create(ParameterRegistry& registry, const std::string& prefix,
                                              std::size_t d_model, std::size_t nhead) {
  if (nhead == 0 || d_model % nhead != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by nhead " +
                      std::to_string(nhead));
  }
  MultiheadAttention mha;
  mha.in_proj_weight = registry.create(prefix + ".in_proj_weight", {3 * d_model, d_model}, ParamKind::weight);
  mha.in_proj_bias = registry.create(prefix + ".in_proj_bias", {3 * d_model}, ParamKind::bias);
  mha.out_proj = LinearLayer::create(registry, prefix + ".out_proj", d_model, d_model);
  mha.d_model = d_model;
  mha.nhead = nhead;
  return mha;
}

Tensor MultiheadAttention::forward(const Tensor& query, const Tensor& key_value,
                                   const Tensor& additive_mask,
                                   const KeyPaddingMask* key_padding) const {
  const std::size_t d = d_model;
  auto q = linear(query, narrow(in_proj_weight, 0, d), narrow(in_proj_bias, 0, d));
  auto k = linear(key_value, narrow(in_proj_weight, d, d), narrow(in_proj_bias, d, d));
  auto v = linear(key_value, narrow(in_proj_weight, 2 * d, d), narrow(in_proj_bias, 2 * d, d));
  return out_proj.forward(attention(q, k, v, nhead, additive_mask, key_padding));
}

Tensor FeedForward::forward(const Tensor& x, const ForwardContext& ctx) const {
  return linear2.forward(inner_dropout.forward(relu(linear1.forward(x)), ctx));
}

EncoderLayer EncoderLayer::create(ParameterRegistry& registry, const std::string& prefix,
                                  const TransformerConfig& cfg) {
  EncoderLayer layer;
  layer.self_attn = MultiheadAttention::create(registry, prefix + ".self_attn", cfg.d_model, cfg.nhead);
  layer.ff.linear1 = LinearLayer::create(registry, prefix + ".linear1", cfg.d_model, cfg.dim_feedforward);
  layer.ff.linear2 = LinearLayer::create(registry, prefix + ".linear2", cfg.dim_feedforward, cfg.d_model);
  layer.ff.inner_dropout = Dropout{cfg.dropout_p};
  layer.norm1 = LayerNorm::create(registry, prefix + ".norm1", cfg.d_model, cfg.layer_norm_eps);
  layer.norm2 = LayerNorm::create(registry, prefix + ".norm2", cfg.d_model, cfg.layer_norm_eps);
  layer.dropout1 = Dropout{cfg.dropout_p};
  layer.dropout2 = Dropout{cfg.dropout_p};
  return layer;
}

Tensor EncoderLayer::forward(const Tensor& x, const KeyPaddingMask* src_key_padding,
                             const ForwardContext& ctx) const {
  auto h = norm1.forward(x);
  auto out = add(x, dropout1.forward(self_attn.forward(h, h, {}, src_key_padding), ctx));
  return add(out, dropout2.forward(ff.forward(norm2.forward(out), ctx), ctx));
}

DecoderLayer DecoderLayer::create(ParameterRegistry& registry, const std::string& prefix,
                                  const TransformerConfig& cfg) {
  DecoderLayer layer;
  layer.self_attn = MultiheadAttention::create(registry, prefix + ".self_attn", cfg.d_model, cfg.nhead);
  layer.cross_attn = MultiheadAttention::create(registry, prefix + ".multihead_attn", cfg.d_model, cfg.nhead);
  layer.ff.linear1 = LinearLayer::create(registry, prefix + ".linear1", cfg.d_model, cfg.dim_feedforward);
  layer.ff.linear2 = LinearLayer::create(registry, prefix + ".linear2", cfg.dim_feedforward, cfg.d_model);
  layer.ff.inner_dropout = Dropout{cfg.dropout_p};
  layer.norm1 = LayerNorm::create(registry, prefix + ".norm1", cfg.d_model, cfg.layer_norm_eps);
  layer.norm2 = LayerNorm::create(registry, prefix + ".norm2", cfg.d_model, cfg.layer_norm_eps);
  layer.norm3 = LayerNorm::create(registry, prefix + ".norm3", cfg.d_model, cfg.layer_norm_eps);
  layer.dropout1 = Dropout{cfg.dropout_p};
  layer.dropout2 = Dropout{cfg.dropout_p};
  layer.dropout3 = Dropout{cfg.dropout_p};
  return layer;
}

Tensor DecoderLayer::forward(const Tensor& y, const Tensor& memory, const Tensor& tgt_mask,
                             const KeyPaddingMask* tgt_key_padding,
                             const KeyPaddingMask* memory_key_padding,
                             const ForwardContext& ctx) const {
  auto h = norm1.forward(y);
  auto out = add(y, dropout1.forward(self_attn.forward(h, h, tgt_mask, tgt_key_padding), ctx));
  out = add(out, dropout2.forward(cross_attn.forward(norm2.forward(out), memory, {}, memory_key_padding), ctx));
  return add(out, dropout3.forward(ff.forward(norm3.forward(out), ctx), ctx));
}

EncoderDecoder EncoderDecoder::create(ParameterRegistry& registry, const std::string& prefix,
                                      const TransformerConfig& cfg) {
  cfg.validate();
  EncoderDecoder model;
  model.cfg_ = cfg;
  for (std::size_t i = 0; i < cfg.num_encoder_layers; ++i)
    model.encoder_.push_back(EncoderLayer::create(registry, prefix + ".encoder.layers." + std::to_string(i), cfg));
  model.encoder_norm_ = LayerNorm::create(registry, prefix + ".encoder.norm", cfg.d_model, cfg.layer_norm_eps);
  for (std::size_t i = 0; i < cfg.num_decoder_layers; ++i)
    model.decoder_.push_back(DecoderLayer::create(registry, prefix + ".decoder.layers." + std::to_string(i), cfg));
  model.decoder_norm_ = LayerNorm::create(registry, prefix + ".decoder.norm", cfg.d_model, cfg.layer_norm_eps);
  return model;
}

Tensor EncoderDecoder::encode(const Tensor& src, const KeyPaddingMask* src_key_padding,
                              const ForwardContext& ctx) const {
  if (src.rank() != 3 || src.dim(2) != cfg_.d_model) {
    throw DimensionError("encode: expected [S x B x " + std::to_string(cfg_.d_model) + "], got " +
                         shape_str(src.shape()));
  }
  Tensor x = src;
  for (const auto& layer : encoder_) x = layer.forward(x, src_key_padding, ctx);
  return encoder_norm_.forward(x);
}

Tensor EncoderDecoder::decode(const Tensor& tgt, const Tensor& memory, const TransformerMasks& masks,
                              const ForwardContext& ctx) const {
  if (tgt.rank() != 3 || tgt.dim(2) != cfg_.d_model) {
    throw DimensionError("decode: expected [T x B x " + std::to_string(cfg_.d_model) + "], got " +
                         shape_str(tgt.shape()));
  }
  if (memory.dim(1) != tgt.dim(1)) {
    throw DimensionError("batch mismatch: source " + shape_str(memory.shape()) + " vs target " +
                         shape_str(tgt.shape()));
  }
  Tensor y = tgt;
  for (const auto& layer : decoder_)
    y = layer.forward(y, memory, masks.tgt_mask, masks.tgt_key_padding, masks.memory_key_padding, ctx);
  return decoder_norm_.forward(y);
}

Tensor EncoderDecoder::forward(const Tensor& src, const Tensor& tgt, const TransformerMasks& masks,
                               const ForwardContext& ctx) const {
  if (src.rank() == 3 && tgt.rank() == 3 && src.dim(1) != tgt.dim(1)) {
    throw DimensionError("batch mismatch: source " + shape_str(src.shape()) + " vs target " +
                         shape_str(tgt.shape()));
  }
  return decode(tgt, encode(src, masks.src_key_padding, ctx), masks, ctx);
}

}  // namespace tinyseq
