#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "tinyseq/tinyseq.h"

namespace fs = std::filesystem;

namespace {

struct ModelHandle {
  ts_model* m = nullptr;
  ~ModelHandle() { ts_model_destroy(m); }
};

struct ExperimentHandle {
  ts_experiment* e = nullptr;
  ~ExperimentHandle() { ts_experiment_destroy(e); }
};

struct ResultHandle {
  ts_result* r = nullptr;
  ~ResultHandle() { ts_result_destroy(r); }
};

}  // namespace

TEST_SUITE("c_api") {

TEST_CASE("status names and last error") {
  CHECK(std::string(ts_status_name(TS_OK)) == "ok");
  CHECK(std::string(ts_version()).size() > 0);
  ModelHandle h;
  CHECK(ts_model_create("bogus", nullptr, 1, &h.m) == TS_ERR_CONFIG);
  CHECK(h.m == nullptr);
  CHECK(std::string(ts_last_error()).find("bogus") != std::string::npos);
  CHECK(ts_model_create("token", nullptr, 1, nullptr) == TS_ERR_ARGUMENT);
  CHECK(ts_model_create("token", nullptr, 1, &h.m) == TS_OK);
  CHECK(std::string(ts_last_error()).empty());
  // destroy tolerates null
  ts_model_destroy(nullptr);
  ts_experiment_destroy(nullptr);
  ts_result_destroy(nullptr);
}

TEST_CASE("parameter anchors through the API") {
  // padded adds a PAD embedding row (8) and a fifth logit (8 + 1)
  const std::pair<const char*, size_t> anchors[] = {{"plain", 88}, {"token", 1332}, {"padded", 1349}};
  for (auto [stage, count] : anchors) {
    ModelHandle h;
    REQUIRE(ts_model_create(stage, nullptr, 3, &h.m) == TS_OK);
    size_t n = 0;
    CHECK(ts_model_param_count(h.m, &n) == TS_OK);
    CHECK(n == count);
    size_t tensors = 0, total = 0;
    REQUIRE(ts_model_tensor_count(h.m, &tensors) == TS_OK);
    for (size_t i = 0; i < tensors; ++i) {
      const char* name = nullptr;
      size_t numel = 0;
      REQUIRE(ts_model_tensor_info(h.m, i, &name, &numel) == TS_OK);
      CHECK(std::string(name).size() > 0);
      total += numel;
    }
    CHECK(total == count);
    CHECK(ts_model_tensor_info(h.m, tensors, nullptr, nullptr) != TS_OK);
  }

  ts_transformer_config cfg{};
  REQUIRE(ts_default_config("plain", &cfg) == TS_OK);
  cfg.dim_feedforward = 1;
  ModelHandle tiny;
  REQUIRE(ts_model_create("plain", &cfg, 1, &tiny.m) == TS_OK);
  size_t n = 0;
  ts_model_param_count(tiny.m, &n);
  CHECK(n == 46);

  cfg.nhead = 0;
  ModelHandle bad;
  CHECK(ts_model_create("plain", &cfg, 1, &bad.m) == TS_ERR_CONFIG);
}

TEST_CASE("causal mask and positional values") {
  std::vector<double> m(9);
  REQUIRE(ts_causal_mask(3, m.data()) == TS_OK);
  const double inf = INFINITY;
  CHECK(m == std::vector<double>{0, -inf, -inf, 0, 0, -inf, 0, 0, 0});
  CHECK(ts_causal_mask(0, m.data()) == TS_ERR_CONTRACT);

  double v = 0;
  REQUIRE(ts_positional_value(8, 1, 0, &v) == TS_OK);
  CHECK(std::abs(v - 0.8415) < 1e-4);
  REQUIRE(ts_positional_value(8, 1, 1, &v) == TS_OK);
  CHECK(std::abs(v - 0.5403) < 1e-4);
  CHECK(ts_positional_value(7, 1, 1, &v) == TS_ERR_CONFIG);
}

TEST_CASE("save, load and decode") {
  ModelHandle h;
  REQUIRE(ts_model_create("padded", nullptr, 5, &h.m) == TS_OK);
  auto path = fs::temp_directory_path() / ("tinyseq-capi-" + std::to_string(::getpid()) + ".ckpt");
  REQUIRE(ts_model_save(h.m, path.c_str()) == TS_OK);
  ModelHandle loaded;
  REQUIRE(ts_model_load(path.c_str(), &loaded.m) == TS_OK);
  const char* stage = nullptr;
  ts_model_stage(loaded.m, &stage);
  CHECK(std::string(stage) == "padded");

  const int input[] = {0, 1, 0, 1};
  int a[16], b[16];
  size_t la = 0, lb = 0;
  int hit_a = 0, hit_b = 0;
  REQUIRE(ts_model_decode(h.m, input, 4, 15, a, 16, &la, &hit_a) == TS_OK);
  REQUIRE(ts_model_decode(loaded.m, input, 4, 15, b, 16, &lb, &hit_b) == TS_OK);
  CHECK(la == lb);
  CHECK(hit_a == hit_b);
  CHECK(std::vector<int>(a, a + la) == std::vector<int>(b, b + lb));
  CHECK(la <= 15);

  const int bad_token[] = {0, 2};
  CHECK(ts_model_decode(h.m, bad_token, 2, 15, a, 16, &la, nullptr) == TS_ERR_VOCABULARY);
  CHECK(ts_model_decode_values(h.m, input, 4, 4, nullptr) != TS_OK);

  fs::remove(path);
  ModelHandle missing;
  CHECK(ts_model_load(path.c_str(), &missing.m) == TS_ERR_IO);

  ModelHandle plain;
  REQUIRE(ts_model_create("plain", nullptr, 2, &plain.m) == TS_OK);
  double values[4];
  CHECK(ts_model_decode_values(plain.m, input, 4, 4, values) == TS_OK);
  for (double x : values) CHECK(std::isfinite(x));
}

TEST_CASE("experiment configuration") {
  CHECK(ts_experiment_id_count() == 6);
  CHECK(std::string(ts_experiment_id(5)) == "E5");
  CHECK(ts_experiment_id(6) == nullptr);

  ExperimentHandle x;
  CHECK(ts_experiment_create("E9", &x.e) == TS_ERR_CONFIG);
  REQUIRE(ts_experiment_create("E2a", &x.e) == TS_OK);
  CHECK(ts_experiment_set(x.e, "epochs", 7) == TS_OK);
  CHECK(ts_experiment_set(x.e, "epochs", -1) != TS_OK);
  CHECK(ts_experiment_set(x.e, "nonsense", 1) == TS_ERR_CONFIG);
  CHECK(ts_experiment_apply_json(x.e, "{\"lr\": 0.005}") == TS_OK);
  CHECK(ts_experiment_apply_json(x.e, "{not json") == TS_ERR_CONFIG);
  const char* desc = nullptr;
  REQUIRE(ts_experiment_describe(x.e, &desc) == TS_OK);
  const std::string d = desc;
  CHECK(d.find("\"epochs\": 7") != std::string::npos);
  CHECK(d.find("0.005") != std::string::npos);
  CHECK(ts_experiment_load_config(x.e, "/nonexistent.json") == TS_ERR_IO);
}

TEST_CASE("short experiment run") {
  ExperimentHandle x;
  REQUIRE(ts_experiment_create("E1", &x.e) == TS_OK);
  ts_experiment_set(x.e, "epochs", 5);
  ts_experiment_set(x.e, "copies_per_task", 3);
  ResultHandle r;
  REQUIRE(ts_experiment_run(x.e, 2, &r.r) == TS_OK);
  CHECK(ts_result_trials(r.r) == 2);
  CHECK(ts_result_required(r.r) == 2);
  CHECK(ts_result_expectation_count(r.r) == 2);
  uint64_t seed = 0;
  ts_result_trial_seed(r.r, 1, &seed);
  CHECK(seed == 2);
  double loss = 0;
  CHECK(ts_result_final_loss(r.r, 0, &loss) == TS_OK);
  CHECK(std::isfinite(loss));
  CHECK(ts_result_final_loss(r.r, 2, &loss) == TS_ERR_ARGUMENT);
  const char* csv = nullptr;
  REQUIRE(ts_result_losses_csv(r.r, 0, &csv) == TS_OK);
  CHECK(std::string(csv).rfind("epoch,loss,lr\n", 0) == 0);
  const char* pred = nullptr;
  REQUIRE(ts_result_predictions(r.r, 0, &pred) == TS_OK);
  CHECK(std::string(pred).find("Input sequence: [0, 0, 0, 0]") != std::string::npos);

  auto dir = fs::temp_directory_path() / ("tinyseq-capi-run-" + std::to_string(::getpid()));
  REQUIRE(ts_result_write(r.r, 0, dir.c_str(), 0) == TS_OK);
  CHECK(fs::exists(dir / "report.json"));
  CHECK_FALSE(fs::exists(dir / "dataset.txt"));
  fs::remove_all(dir);

  ModelHandle m;
  REQUIRE(ts_result_model(r.r, 0, &m.m) == TS_OK);
  size_t n = 0;
  ts_model_param_count(m.m, &n);
  CHECK(n == 88);
}

}  // TEST_SUITE
