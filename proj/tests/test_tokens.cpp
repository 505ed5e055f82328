#include "doctest.h"

#include <cmath>
#include <sstream>

#include "support.hpp"
#include "tinyseq/model.hpp"
#include "tinyseq/optimize.hpp"
#include "tinyseq/tokens.hpp"

using namespace tinyseq;
using tinyseq::testing::check_gradients;
using tinyseq::testing::probe_sum;
using tinyseq::testing::random_tensor;

namespace {

const ForwardContext eval_ctx{};

std::vector<double> row(const Tensor& t, std::size_t r, std::size_t d) {
  return {t.data().begin() + static_cast<std::ptrdiff_t>(r * d), t.data().begin() + static_cast<std::ptrdiff_t>((r + 1) * d)};
}

}  // namespace

TEST_SUITE("token_pipeline") {

TEST_CASE("vocabulary ids") {
  CHECK(vocab::zero == 0);
  CHECK(vocab::one == 1);
  CHECK(vocab::sos == 2);
  CHECK(vocab::eos == 3);
  CHECK(vocab::pad == vocab::num_tokens);
  CHECK(vocab::num_tokens == 4);
  CHECK(token_name(vocab::sos) == "SOS");
}

TEST_CASE("embedding scales rows by sqrt(d)") {
  for (std::size_t d : {1u, 8u}) {
    ParameterRegistry reg;
    auto table = EmbeddingTable::create(reg, "emb", 5, d, vocab::pad);
    init_xavier_uniform(reg, 3);
    table.reset_padding_row();
    auto tokens = TokenMatrix::column(std::vector<int>{2, 1, 0, 3});
    auto x = embed(table, tokens);
    CHECK(x.shape() == Shape{4, 1, d});
    const double scale = std::sqrt(static_cast<double>(d));
    for (std::size_t pos = 0; pos < 4; ++pos) {
      const auto id = static_cast<std::size_t>(tokens.at(pos, 0));
      for (std::size_t c = 0; c < d; ++c) CHECK(x.at(pos * d + c) == table.table.at(id * d + c) * scale);
    }
  }
}

TEST_CASE("embedding rejects out-of-range ids with the id and position") {
  ParameterRegistry reg;
  auto table = EmbeddingTable::create(reg, "emb", 4, 8, std::nullopt);
  auto tokens = TokenMatrix::column(std::vector<int>{2, 1, 4, 3});
  try {
    embed(table, tokens);
    FAIL("expected VocabularyError");
  } catch (const VocabularyError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("token id 4") != std::string::npos);
    CHECK(msg.find("position 2") != std::string::npos);
  }
}

TEST_CASE("embedding rows are pairwise distinct after init") {
  auto m = Seq2SeqModel::create(default_model_config(Stage::padded), 7);
  const auto& t = m.embedding()->table;
  for (std::size_t a = 0; a < 5; ++a)
    for (std::size_t b = a + 1; b < 5; ++b) CHECK(row(t, a, 8) != row(t, b, 8));
  for (double v : row(t, vocab::pad, 8)) CHECK(v == 0.0);
}

TEST_CASE("embedding gradient accumulates over repeats and skips the pad row") {
  std::mt19937_64 rng(211);
  for (int trial = 0; trial < 10; ++trial) {
    ParameterRegistry reg;
    auto table = EmbeddingTable::create(reg, "emb", 5, 4, vocab::pad);
    init_xavier_uniform(reg, 400 + trial);
    table.reset_padding_row();
    TokenMatrix tokens(4, 2, 0);
    tokens.ids = {2, 2, 1, 1, 1, 3, 4, 4};
    auto r = check_gradients([&] { return probe_sum(embed(table, tokens), 17); }, {table.table});
    // pad row gets no tape gradient although it is used, so finite differences disagree there
    table.table.zero_grad();
    backward(probe_sum(embed(table, tokens), 17));
    for (std::size_t c = 0; c < 4; ++c) CHECK(table.table.grad()[vocab::pad * 4 + c] == 0.0);
    CHECK(r.failures == 4);
    CHECK(table.table.grad()[1 * 4] != 0.0);
  }
}

TEST_CASE("pad row is bit-identical after an optimizer step on a padded batch") {
  auto model = Seq2SeqModel::create(default_model_config(Stage::padded), 11);
  const auto before = row(model.embedding()->table, vocab::pad, 8);
  auto batch = frame_and_pad({{{1, 1, 1}, {0}}, {{0}, {1, 1, 1}}});
  std::mt19937_64 rng(1);
  ForwardContext train{Mode::training, &rng};
  AdamState adam(model.parameters());
  model.parameters().zero_grad();
  backward(batch_loss(model, batch, train));
  adam.step(model.parameters());
  CHECK(row(model.embedding()->table, vocab::pad, 8) == before);
  CHECK(row(model.embedding()->table, vocab::one, 8) != std::vector<double>(8, 0.0));
}

TEST_CASE("unembedding examples") {
  ParameterRegistry reg;
  auto layer = LinearLayer::create(reg, "unembedding", 8, 4);
  layer.bias.mutable_data()[3] = 2.5;
  std::mt19937_64 rng(223);
  auto features = random_tensor({3, 2, 8}, rng, false);
  auto logits = unembed(layer, features);
  CHECK(logits.shape() == Shape{3, 2, 4});
  for (std::size_t r = 0; r < 6; ++r) {
    auto v = row(logits, r, 4);
    CHECK(std::max_element(v.begin(), v.end()) - v.begin() == 3);
  }
  CHECK(default_model_config(Stage::masked).logit_count() == 4);
  CHECK(default_model_config(Stage::padded).logit_count() == 5);
}

TEST_CASE("unembedding gradient") {
  std::mt19937_64 rng(227);
  for (int trial = 0; trial < 10; ++trial) {
    ParameterRegistry reg;
    auto layer = LinearLayer::create(reg, "u", 8, 5);
    init_xavier_uniform(reg, 500 + trial);
    auto f = random_tensor({2, 3, 8}, rng);
    auto r = check_gradients([&] { return probe_sum(unembed(layer, f), 19); }, {f, layer.weight, layer.bias});
    CHECK_MESSAGE(r.ok(), r.first_failure);
  }
}

TEST_CASE("positional table values") {
  auto pt = positional_table(default_positional_length, 8);
  for (std::size_t c = 0; c < 8; ++c) CHECK(pt.at(0, c) == (c % 2 == 0 ? 0.0 : 1.0));
  CHECK(std::abs(pt.at(1, 0) - 0.8415) < 1e-4);
  CHECK(std::abs(pt.at(1, 1) - 0.5403) < 1e-4);
  CHECK(std::abs(pt.at(1, 2) - 0.0998) < 1e-4);
  CHECK(pt.at(1, 2) == doctest::Approx(std::sin(0.1)).epsilon(1e-15));
  for (double v : pt.pe) {
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }
  CHECK(positional_table(64, 8).pe == pt.pe);
  CHECK_THROWS_AS(positional_table(64, 7), ConfigError);
}

TEST_CASE("add_positional behavior") {
  auto pt = positional_table(16, 8, 0.1);
  auto zeros = Tensor::zeros({3, 2, 8});
  auto y = add_positional(pt, zeros, eval_ctx);
  for (std::size_t pos = 0; pos < 3; ++pos)
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t c = 0; c < 8; ++c) CHECK(y.at((pos * 2 + b) * 8 + c) == pt.at(pos, c));

  // same token at two positions becomes two distinct vectors
  auto same = Tensor::full({2, 1, 8}, 0.3);
  auto z = add_positional(pt, same, eval_ctx);
  CHECK(row(z, 0, 8) != row(z, 1, 8));

  // evaluation mode ignores dropout
  auto again = add_positional(pt, same, eval_ctx);
  CHECK(row(again, 0, 8) == row(z, 0, 8));

  // rank-2 input is a batch of one
  auto r2 = add_positional(pt, Tensor::zeros({2, 8}), eval_ctx);
  CHECK(r2.shape() == Shape{2, 1, 8});

  CHECK_THROWS_AS(add_positional(pt, Tensor::zeros({17, 1, 8}), eval_ctx), CapacityError);
}

TEST_CASE("positional CSV layouts") {
  auto pt = positional_table(8, 4);
  std::vector<std::size_t> positions = {1, 2};
  std::ostringstream long_form, wide;
  write_positional_csv(pt, positions, CsvLayout::long_form, long_form);
  write_positional_csv(pt, positions, CsvLayout::wide, wide);
  std::istringstream lin(long_form.str()), win(wide.str());
  std::string line;
  std::getline(lin, line);
  CHECK(line == "pos,dim,value");
  std::size_t rows = 0;
  while (std::getline(lin, line)) ++rows;
  CHECK(rows == 2 * 4);
  std::getline(win, line);
  CHECK(line == "pos,d0,d1,d2,d3");
  std::getline(win, line);
  CHECK(std::count(line.begin(), line.end(), ',') == 4);
  CHECK(line.rfind("1,", 0) == 0);
}

TEST_CASE("positional encoding breaks encoder permutation equivariance") {
  auto model = Seq2SeqModel::create(default_model_config(Stage::positional), 5);
  auto plain = Seq2SeqModel::create(default_model_config(Stage::masked), 5);
  auto encode = [](const Seq2SeqModel& m, std::vector<int> ids, bool positional) {
    auto x = embed(*m.embedding(), TokenMatrix::column(ids));
    if (positional) x = add_positional(positional_table(64, 8), x, eval_ctx);
    return m.transformer().encode(x, nullptr, eval_ctx);
  };
  auto a = encode(model, {0, 1}, true);
  auto b = encode(model, {1, 0}, true);
  // without position the encoder output for [1,0] is [0,1]'s output swapped
  auto pa = encode(plain, {0, 1}, false);
  auto pb = encode(plain, {1, 0}, false);
  for (std::size_t c = 0; c < 8; ++c) {
    CHECK(pa.at(c) == doctest::Approx(pb.at(8 + c)).epsilon(1e-12));
    CHECK(pa.at(8 + c) == doctest::Approx(pb.at(c)).epsilon(1e-12));
  }
  CHECK(row(a, 0, 8) != row(b, 1, 8));
  CHECK(row(a, 1, 8) != row(b, 0, 8));
}

}  // TEST_SUITE
