#include "tinyseq/model.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "json.hpp"

namespace tinyseq {

std::string_view stage_name(Stage stage) {
  switch (stage) {
    case Stage::plain: return "plain";
    case Stage::token: return "token";
    case Stage::masked: return "masked";
    case Stage::positional: return "positional";
    case Stage::padded: return "padded";
  }
  return "?";
}

Stage parse_stage(std::string_view name) {
  for (auto s : {Stage::plain, Stage::token, Stage::masked, Stage::positional, Stage::padded})
    if (stage_name(s) == name) return s;
  throw ConfigError("unknown model stage '" + std::string(name) + "'");
}

StageFeatures stage_features(Stage stage) {
  const int level = static_cast<int>(stage);
  StageFeatures f;
  f.tokens = level >= static_cast<int>(Stage::token);
  f.causal_mask = level >= static_cast<int>(Stage::masked);
  f.positional = level >= static_cast<int>(Stage::positional);
  f.padding = level >= static_cast<int>(Stage::padded);
  return f;
}

std::size_t ModelConfig::vocabulary_rows() const {
  const auto f = stage_features(stage);
  if (!f.tokens) return 0;
  return static_cast<std::size_t>(vocab::num_tokens) + (f.padding ? 1 : 0);
}

std::size_t ModelConfig::logit_count() const { return vocabulary_rows(); }

ModelConfig default_model_config(Stage stage) {
  ModelConfig cfg;
  cfg.stage = stage;
  cfg.transformer.d_model = stage == Stage::plain ? 1 : 8;
  cfg.transformer.nhead = 1;
  cfg.transformer.num_encoder_layers = 1;
  cfg.transformer.num_decoder_layers = 1;
  cfg.transformer.dim_feedforward = 8;
  cfg.transformer.dropout_p = 0.1;
  cfg.transformer.layer_norm_eps = 1e-5;
  return cfg;
}

Seq2SeqModel Seq2SeqModel::create(const ModelConfig& config, std::uint64_t seed) {
  Seq2SeqModel m;
  m.config_ = config;
  m.seed_ = seed;
  const auto f = stage_features(config.stage);
  const std::size_t d = config.transformer.d_model;
  if (f.tokens) {
    std::optional<int> pad;
    if (f.padding) pad = vocab::pad;
    m.embedding_ = EmbeddingTable::create(m.registry_, "embedding.weight", config.vocabulary_rows(), d, pad);
  }
  m.transformer_ = EncoderDecoder::create(m.registry_, "transformer", config.transformer);
  if (f.tokens) m.unembedding_ = LinearLayer::create(m.registry_, "unembedding", d, config.logit_count());
  if (f.positional) m.positional_ = positional_table(config.max_positions, d, config.transformer.dropout_p);
  init_xavier_uniform(m.registry_, seed);
  if (m.embedding_) m.embedding_->reset_padding_row();
  return m;
}

Tensor Seq2SeqModel::embed_side(const TokenMatrix& tokens, const ForwardContext& ctx) const {
  auto x = embed(*embedding_, tokens);
  if (positional_) x = add_positional(*positional_, x, ctx);
  return x;
}

Tensor Seq2SeqModel::logits(const TokenMatrix& src, const TokenMatrix& tgt_in,
                            const TransformerMasks& masks, const ForwardContext& ctx) const {
  if (!embedding_) throw ContractError("logits: the plain stage has no token pipeline");
  auto features = transformer_.forward(embed_side(src, ctx), embed_side(tgt_in, ctx), masks, ctx);
  return unembed(*unembedding_, features);
}

Tensor Seq2SeqModel::logits(const Batch& batch, const ForwardContext& ctx) const {
  const auto f = features();
  TransformerMasks masks;
  if (f.causal_mask) masks.tgt_mask = batch.tgt_mask.additive();
  if (f.padding) {
    masks.src_key_padding = batch.src_key_padding.get();
    masks.tgt_key_padding = batch.tgt_key_padding.get();
    masks.memory_key_padding = batch.memory_key_padding.get();
  }
  return logits(batch.src, batch.tgt_in, masks, ctx);
}

Tensor Seq2SeqModel::values(const Tensor& src, const Tensor& tgt, const ForwardContext& ctx) const {
  if (embedding_) throw ContractError("values: token stages take token ids, not raw values");
  TransformerMasks masks;
  if (features().causal_mask) masks.tgt_mask = causal_mask(tgt.dim(0)).additive();
  return transformer_.forward(src, tgt, masks, ctx);
}

namespace {

constexpr std::array<char, 8> magic = {'T', 'S', 'Q', 'C', 'K', 'P', 'T', '\0'};

template <typename T>
void put_le(std::ostream& out, T value) {
  std::array<unsigned char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
  std::array<unsigned char, sizeof(T)> bytes;
  if (!in.read(reinterpret_cast<char*>(bytes.data()), sizeof(T))) throw IoError("checkpoint truncated");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

nlohmann::json config_json(const Seq2SeqModel& model) {
  const auto& c = model.config();
  const auto& t = c.transformer;
  return {{"stage", stage_name(c.stage)},
          {"seed", model.seed()},
          {"max_positions", c.max_positions},
          {"d_model", t.d_model},
          {"nhead", t.nhead},
          {"num_encoder_layers", t.num_encoder_layers},
          {"num_decoder_layers", t.num_decoder_layers},
          {"dim_feedforward", t.dim_feedforward},
          {"dropout_p", t.dropout_p},
          {"layer_norm_eps", t.layer_norm_eps}};
}

}  // namespace

void save_checkpoint(const Seq2SeqModel& model, std::ostream& out) {
  const std::string header = config_json(model).dump();
  out.write(magic.data(), magic.size());
  put_le<std::uint32_t>(out, checkpoint_version);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(header.size()));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  const auto& entries = model.parameters().entries();
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.tensor.rank()));
    for (auto extent : e.tensor.shape()) put_le<std::uint64_t>(out, extent);
    for (double v : e.tensor.data()) put_le<double>(out, v);
  }
  if (!out) throw IoError("failed writing checkpoint");
}

void save_checkpoint(const Seq2SeqModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  save_checkpoint(model, out);
}

Seq2SeqModel load_checkpoint(std::istream& in) {
  std::array<char, 8> got{};
  if (!in.read(got.data(), got.size()) || got != magic) throw IoError("not a tinyseq checkpoint");
  const auto version = get_le<std::uint32_t>(in);
  if (version != checkpoint_version) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto header_len = get_le<std::uint32_t>(in);
  std::string header(header_len, '\0');
  if (!in.read(header.data(), header_len)) throw IoError("checkpoint truncated in header");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("corrupt checkpoint header: ") + e.what());
  }
  ModelConfig cfg;
  cfg.stage = parse_stage(h.at("stage").get<std::string>());
  cfg.max_positions = h.at("max_positions").get<std::size_t>();
  auto& t = cfg.transformer;
  t.d_model = h.at("d_model").get<std::size_t>();
  t.nhead = h.at("nhead").get<std::size_t>();
  t.num_encoder_layers = h.at("num_encoder_layers").get<std::size_t>();
  t.num_decoder_layers = h.at("num_decoder_layers").get<std::size_t>();
  t.dim_feedforward = h.at("dim_feedforward").get<std::size_t>();
  t.dropout_p = h.at("dropout_p").get<double>();
  t.layer_norm_eps = h.at("layer_norm_eps").get<double>();
  auto model = Seq2SeqModel::create(cfg, h.at("seed").get<std::uint64_t>());

  const auto count = get_le<std::uint32_t>(in);
  if (count != model.parameters().size()) {
    throw IoError("checkpoint has " + std::to_string(count) + " tensors, model expects " +
                  std::to_string(model.parameters().size()));
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = get_le<std::uint32_t>(in);
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw IoError("checkpoint truncated in tensor name");
    const auto* entry = model.parameters().find(name);
    if (entry == nullptr) throw IoError("checkpoint tensor '" + name + "' is unknown to the model");
    const auto rank = get_le<std::uint32_t>(in);
    Shape shape(rank);
    for (auto& extent : shape) extent = get_le<std::uint64_t>(in);
    if (shape != entry->tensor.shape()) {
      throw IoError("checkpoint tensor '" + name + "' has shape " + shape_str(shape) + ", expected " +
                    shape_str(entry->tensor.shape()));
    }
    Tensor target = entry->tensor;
    for (auto& v : target.mutable_data()) v = get_le<double>(in);
  }
  return model;
}

Seq2SeqModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  return load_checkpoint(in);
}

}  // namespace tinyseq
