#include "doctest.h"

#include <sstream>

#include "tinyseq/model.hpp"
#include "tinyseq/optimize.hpp"

using namespace tinyseq;

namespace {

std::string checkpoint_bytes(const Seq2SeqModel& m) {
  std::ostringstream out(std::ios::binary);
  save_checkpoint(m, out);
  return out.str();
}

Seq2SeqModel from_bytes(const std::string& bytes) {
  std::istringstream in(bytes, std::ios::binary);
  return load_checkpoint(in);
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("stage features nest") {
  CHECK_FALSE(stage_features(Stage::plain).tokens);
  CHECK(stage_features(Stage::token).tokens);
  CHECK_FALSE(stage_features(Stage::token).causal_mask);
  CHECK(stage_features(Stage::masked).causal_mask);
  CHECK_FALSE(stage_features(Stage::masked).positional);
  CHECK(stage_features(Stage::positional).positional);
  CHECK_FALSE(stage_features(Stage::positional).padding);
  auto p = stage_features(Stage::padded);
  CHECK((p.tokens && p.causal_mask && p.positional && p.padding));
  for (Stage s : {Stage::plain, Stage::token, Stage::masked, Stage::positional, Stage::padded})
    CHECK(parse_stage(stage_name(s)) == s);
  CHECK_THROWS_AS(parse_stage("nope"), ConfigError);
}

TEST_CASE("same seed builds identical models") {
  auto a = Seq2SeqModel::create(default_model_config(Stage::padded), 42);
  auto b = Seq2SeqModel::create(default_model_config(Stage::padded), 42);
  auto c = Seq2SeqModel::create(default_model_config(Stage::padded), 43);
  CHECK(checkpoint_bytes(a) == checkpoint_bytes(b));
  CHECK(checkpoint_bytes(a) != checkpoint_bytes(c));
}

TEST_CASE("checkpoint round trip is bit exact") {
  for (Stage s : {Stage::plain, Stage::token, Stage::masked, Stage::positional, Stage::padded}) {
    auto model = Seq2SeqModel::create(default_model_config(s), 17);
    // move off the initial values so the reload cannot be a re-init
    FitOptions opt;
    opt.epochs = 3;
    opt.seed = 5;
    auto data = s == Stage::plain ? generate_dataset(tasks::constant(), 2, 1)
                                  : generate_dataset(tasks::three_to_one(), 2, 1);
    fit(model, data, opt);
    auto loaded = from_bytes(checkpoint_bytes(model));
    CHECK(loaded.config().stage == s);
    CHECK(loaded.seed() == 17);
    const auto& pa = model.parameters().entries();
    const auto& pb = loaded.parameters().entries();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
      CHECK(pa[i].name == pb[i].name);
      CHECK(pa[i].tensor.shape() == pb[i].tensor.shape());
      CHECK(std::vector<double>(pa[i].tensor.data().begin(), pa[i].tensor.data().end()) ==
            std::vector<double>(pb[i].tensor.data().begin(), pb[i].tensor.data().end()));
    }
    CHECK(checkpoint_bytes(loaded) == checkpoint_bytes(model));
    if (s == Stage::plain) {
      CHECK(decode_values(model, {1, 1, 1, 1}, 4) == decode_values(loaded, {1, 1, 1, 1}, 4));
    } else {
      for (const auto& t : tasks::all_eight()) {
        auto x = greedy_decode(model, frame(t.input));
        auto y = greedy_decode(loaded, frame(t.input));
        CHECK(x.payload == y.payload);
        CHECK(x.hit_max_len == y.hit_max_len);
      }
    }
  }
}

TEST_CASE("damaged checkpoints are rejected") {
  auto model = Seq2SeqModel::create(default_model_config(Stage::token), 3);
  const auto good = checkpoint_bytes(model);

  auto bad_magic = good;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(from_bytes(bad_magic), IoError);

  auto bad_version = good;
  bad_version[8] = 9;
  CHECK_THROWS_AS(from_bytes(bad_version), IoError);

  for (std::size_t cut : {std::size_t{4}, std::size_t{14}, good.size() / 2, good.size() - 1})
    CHECK_THROWS_AS(from_bytes(good.substr(0, cut)), IoError);

  // garbage in the JSON header
  auto bad_header = good;
  bad_header[16] = '#';
  CHECK_THROWS_AS(from_bytes(bad_header), IoError);

  CHECK_THROWS_AS(from_bytes(""), IoError);
  CHECK_THROWS_AS(load_checkpoint(std::string("/nonexistent/dir/model.ckpt")), IoError);
}

}  // TEST_SUITE
