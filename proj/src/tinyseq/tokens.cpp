#include "tinyseq/tokens.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>

namespace tinyseq {

std::string token_name(int id) {
  switch (id) {
    case vocab::zero: return "0";
    case vocab::one: return "1";
    case vocab::sos: return "SOS";
    case vocab::eos: return "EOS";
    case vocab::pad: return "PAD";
    default: return "<" + std::to_string(id) + ">";
  }
}

TokenMatrix::TokenMatrix(std::size_t length, std::size_t batch, int fill)
    : length(length), batch(batch), ids(length * batch, fill) {}

TokenMatrix TokenMatrix::column(std::span<const int> tokens) {
  TokenMatrix m(tokens.size(), 1, 0);
  std::copy(tokens.begin(), tokens.end(), m.ids.begin());
  return m;
}

std::vector<int> TokenMatrix::sequence(std::size_t b) const {
  std::vector<int> out(length);
  for (std::size_t p = 0; p < length; ++p) out[p] = at(p, b);
  return out;
}

EmbeddingTable EmbeddingTable::create(ParameterRegistry& registry, const std::string& name,
                                      std::size_t rows, std::size_t d_model,
                                      std::optional<int> padding_idx) {
  if (padding_idx && (*padding_idx < 0 || static_cast<std::size_t>(*padding_idx) >= rows)) {
    throw ConfigError("padding index " + std::to_string(*padding_idx) + " outside table of " +
                      std::to_string(rows) + " rows");
  }
  EmbeddingTable e;
  e.table = registry.create(name, {rows, d_model}, ParamKind::embedding);
  e.padding_idx = padding_idx;
  return e;
}

void EmbeddingTable::reset_padding_row() {
  if (!padding_idx) return;
  auto values = table.mutable_data();
  const auto d = d_model();
  std::fill_n(values.begin() + static_cast<std::ptrdiff_t>(*padding_idx * d), d, 0.0);
}

Tensor embed(const EmbeddingTable& table, const TokenMatrix& tokens) {
  const std::size_t d = table.d_model();
  const std::size_t rows = table.rows();
  const double scale = std::sqrt(static_cast<double>(d));
  std::vector<double> out(tokens.ids.size() * d);
  auto T = table.table.data();
  for (std::size_t i = 0; i < tokens.ids.size(); ++i) {
    const int id = tokens.ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= rows) {
      throw VocabularyError("token id " + std::to_string(id) + " at position " +
                            std::to_string(i / tokens.batch) + " (batch " +
                            std::to_string(i % tokens.batch) + ") outside vocabulary of " +
                            std::to_string(rows));
    }
    for (std::size_t c = 0; c < d; ++c) out[i * d + c] = T[id * d + c] * scale;
  }
  auto ids = std::make_shared<std::vector<int>>(tokens.ids);
  const int pad = table.padding_idx.value_or(-1);
  const Tensor& weights = table.table;
  return detail::make_result("embed", {tokens.length, tokens.batch, d}, std::move(out), {weights},
                             [weights, ids, d, scale, pad](std::span<const double> g) {
                               auto gt = weights.node()->grad_buffer();
                               for (std::size_t i = 0; i < ids->size(); ++i) {
                                 const int id = (*ids)[i];
                                 if (id == pad) continue;
                                 for (std::size_t c = 0; c < d; ++c) gt[id * d + c] += g[i * d + c] * scale;
                               }
                             });
}

Tensor unembed(const LinearLayer& layer, const Tensor& features) { return layer.forward(features); }

PositionalTable positional_table(std::size_t max_len, std::size_t d_model, double dropout_p) {
  if (d_model == 0 || d_model % 2 != 0) {
    throw ConfigError("positional encoding needs an even d_model, got " + std::to_string(d_model));
  }
  PositionalTable pt;
  pt.max_len = max_len;
  pt.d_model = d_model;
  pt.dropout_p = dropout_p;
  pt.pe.resize(max_len * d_model);
  for (std::size_t pos = 0; pos < max_len; ++pos) {
    for (std::size_t i = 0; i < d_model; i += 2) {
      const double angle = static_cast<double>(pos) /
                           std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d_model));
      pt.pe[pos * d_model + i] = std::sin(angle);
      pt.pe[pos * d_model + i + 1] = std::cos(angle);
    }
  }
  return pt;
}

Tensor add_positional(const PositionalTable& pt, const Tensor& x, const ForwardContext& ctx) {
  const std::size_t L = x.dim(0);
  const std::size_t B = x.rank() == 3 ? x.dim(1) : 1;
  const std::size_t d = x.shape().back();
  if (x.rank() < 2 || d != pt.d_model) {
    throw DimensionError("add_positional: input " + shape_str(x.shape()) +
                         " does not end in d_model " + std::to_string(pt.d_model));
  }
  if (L > pt.max_len) {
    throw CapacityError("sequence length " + std::to_string(L) + " exceeds positional table length " +
                        std::to_string(pt.max_len));
  }
  std::vector<double> table(L * B * d);
  for (std::size_t pos = 0; pos < L; ++pos)
    for (std::size_t b = 0; b < B; ++b)
      std::copy_n(pt.pe.begin() + static_cast<std::ptrdiff_t>(pos * d), d,
                  table.begin() + static_cast<std::ptrdiff_t>((pos * B + b) * d));
  Tensor promoted = x;
  if (x.rank() == 2) {
    promoted = detail::make_result("unsqueeze", {L, 1, d}, std::vector<double>(x.data().begin(), x.data().end()),
                                   {x}, [x](std::span<const double> g) {
                                     auto gx = x.node()->grad_buffer();
                                     for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                                   });
  }
  auto summed = add(promoted, Tensor({L, B, d}, std::move(table)));
  return Dropout{pt.dropout_p}.forward(summed, ctx);
}

void write_positional_csv(const PositionalTable& pt, std::span<const std::size_t> positions,
                          CsvLayout layout, std::ostream& out) {
  for (auto pos : positions) {
    if (pos >= pt.max_len) {
      throw CapacityError("position " + std::to_string(pos) + " outside table of length " +
                          std::to_string(pt.max_len));
    }
  }
  out << std::setprecision(17);
  if (layout == CsvLayout::long_form) {
    out << "pos,dim,value\n";
    for (auto pos : positions)
      for (std::size_t i = 0; i < pt.d_model; ++i) out << pos << ',' << i << ',' << pt.at(pos, i) << '\n';
    return;
  }
  out << "pos";
  for (std::size_t i = 0; i < pt.d_model; ++i) out << ",d" << i;
  out << '\n';
  for (auto pos : positions) {
    out << pos;
    for (std::size_t i = 0; i < pt.d_model; ++i) out << ',' << pt.at(pos, i);
    out << '\n';
  }
}

}  // namespace tinyseq
