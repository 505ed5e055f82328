#include "tinyseq/tinyseq.h"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <new>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "tinyseq/errors.hpp"
#include "tinyseq/experiment.hpp"
#include "tinyseq/masking.hpp"
#include "tinyseq/model.hpp"
#include "tinyseq/optimize.hpp"
#include "tinyseq/tokens.hpp"

struct ts_model {
  std::shared_ptr<tinyseq::Seq2SeqModel> model;
};

struct ts_experiment {
  tinyseq::ExperimentSpec spec;
  std::string description;
};

struct ts_result {
  tinyseq::TrialSummary summary;
  std::vector<std::string> predictions;
  std::vector<std::string> losses;
};

namespace {

thread_local std::string last_error;

ts_status fail(ts_status status, std::string message) {
  last_error = std::move(message);
  return status;
}

// Runs body and maps the exception hierarchy onto status codes.
template <typename F>
ts_status guarded(F&& body) {
  try {
    last_error.clear();
    body();
    return TS_OK;
  } catch (const tinyseq::DimensionError& e) {
    return fail(TS_ERR_DIMENSION, e.what());
  } catch (const tinyseq::ContractError& e) {
    return fail(TS_ERR_CONTRACT, e.what());
  } catch (const tinyseq::VocabularyError& e) {
    return fail(TS_ERR_VOCABULARY, e.what());
  } catch (const tinyseq::CapacityError& e) {
    return fail(TS_ERR_CAPACITY, e.what());
  } catch (const tinyseq::ConfigError& e) {
    return fail(TS_ERR_CONFIG, e.what());
  } catch (const tinyseq::IoError& e) {
    return fail(TS_ERR_IO, e.what());
  } catch (const tinyseq::NumericError& e) {
    return fail(TS_ERR_NUMERIC, e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail(TS_ERR_CONFIG, e.what());
  } catch (const std::bad_alloc&) {
    return fail(TS_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(TS_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(TS_ERR_INTERNAL, "unknown error");
  }
}

#define TS_REQUIRE(cond, what) \
  if (!(cond)) return fail(TS_ERR_ARGUMENT, what)

tinyseq::TransformerConfig from_c(const ts_transformer_config& c) {
  tinyseq::TransformerConfig t;
  t.d_model = c.d_model;
  t.nhead = c.nhead;
  t.num_encoder_layers = c.num_encoder_layers;
  t.num_decoder_layers = c.num_decoder_layers;
  t.dim_feedforward = c.dim_feedforward;
  t.dropout_p = c.dropout_p;
  t.layer_norm_eps = c.layer_norm_eps;
  return t;
}

ts_transformer_config to_c(const tinyseq::TransformerConfig& t) {
  return {t.d_model, t.nhead, t.num_encoder_layers, t.num_decoder_layers, t.dim_feedforward,
          t.dropout_p, t.layer_norm_eps};
}

std::vector<int> checked_payload(const int* payload, std::size_t length) {
  std::vector<int> p(payload, payload + length);
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] != tinyseq::vocab::zero && p[i] != tinyseq::vocab::one) {
      throw tinyseq::VocabularyError("payload token " + std::to_string(p[i]) + " at position " +
                                     std::to_string(i) + " is not 0 or 1");
    }
  }
  return p;
}

nlohmann::json describe(const tinyseq::ExperimentSpec& s) {
  nlohmann::json tasks = nlohmann::json::array();
  for (const auto& t : s.tasks) tasks.push_back({{"name", t.name}, {"input", t.input}, {"output", t.output}});
  const auto& t = s.transformer;
  return {{"id", s.id},
          {"stage", tinyseq::stage_name(s.stage)},
          {"tasks", tasks},
          {"epochs", s.epochs},
          {"lr", s.lr},
          {"gamma", s.gamma},
          {"milestones", s.milestones},
          {"copies_per_task", s.copies_per_task},
          {"batch_size", s.batch_size},
          {"seed", s.seed},
          {"invert_constant", s.invert_constant},
          {"decode_limit", s.decode_limit},
          {"d_model", t.d_model},
          {"nhead", t.nhead},
          {"num_encoder_layers", t.num_encoder_layers},
          {"num_decoder_layers", t.num_decoder_layers},
          {"dim_feedforward", t.dim_feedforward},
          {"dropout_p", t.dropout_p},
          {"layer_norm_eps", t.layer_norm_eps}};
}

}  // namespace

extern "C" {

const char* ts_version(void) { return "0.1.0"; }

const char* ts_status_name(ts_status status) {
  switch (status) {
    case TS_OK: return "ok";
    case TS_ERR_ARGUMENT: return "argument error";
    case TS_ERR_DIMENSION: return "dimension error";
    case TS_ERR_CONTRACT: return "contract error";
    case TS_ERR_VOCABULARY: return "vocabulary error";
    case TS_ERR_CAPACITY: return "capacity error";
    case TS_ERR_CONFIG: return "config error";
    case TS_ERR_IO: return "io error";
    case TS_ERR_NUMERIC: return "numeric error";
    case TS_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* ts_last_error(void) { return last_error.c_str(); }

ts_status ts_default_config(const char* stage, ts_transformer_config* out) {
  TS_REQUIRE(stage && out, "ts_default_config: null argument");
  return guarded([&] { *out = to_c(tinyseq::default_model_config(tinyseq::parse_stage(stage)).transformer); });
}

ts_status ts_model_create(const char* stage, const ts_transformer_config* cfg, uint64_t seed,
                          ts_model** out) {
  TS_REQUIRE(stage && out, "ts_model_create: null argument");
  *out = nullptr;
  return guarded([&] {
    auto mc = tinyseq::default_model_config(tinyseq::parse_stage(stage));
    if (cfg) mc.transformer = from_c(*cfg);
    auto m = std::make_shared<tinyseq::Seq2SeqModel>(tinyseq::Seq2SeqModel::create(mc, seed));
    *out = new ts_model{std::move(m)};
  });
}

void ts_model_destroy(ts_model* model) { delete model; }

ts_status ts_model_stage(const ts_model* model, const char** out) {
  TS_REQUIRE(model && out, "ts_model_stage: null argument");
  *out = tinyseq::stage_name(model->model->config().stage).data();
  return TS_OK;
}

ts_status ts_model_config(const ts_model* model, ts_transformer_config* out) {
  TS_REQUIRE(model && out, "ts_model_config: null argument");
  *out = to_c(model->model->config().transformer);
  return TS_OK;
}

ts_status ts_model_param_count(const ts_model* model, size_t* out) {
  TS_REQUIRE(model && out, "ts_model_param_count: null argument");
  *out = tinyseq::count_parameters(model->model->parameters());
  return TS_OK;
}

ts_status ts_model_tensor_count(const ts_model* model, size_t* out) {
  TS_REQUIRE(model && out, "ts_model_tensor_count: null argument");
  *out = model->model->parameters().size();
  return TS_OK;
}

ts_status ts_model_tensor_info(const ts_model* model, size_t index, const char** name, size_t* numel) {
  TS_REQUIRE(model, "ts_model_tensor_info: null model");
  const auto& entries = model->model->parameters().entries();
  TS_REQUIRE(index < entries.size(), "ts_model_tensor_info: index out of range");
  if (name) *name = entries[index].name.c_str();
  if (numel) *numel = entries[index].tensor.size();
  return TS_OK;
}

ts_status ts_model_save(const ts_model* model, const char* path) {
  TS_REQUIRE(model && path, "ts_model_save: null argument");
  return guarded([&] { tinyseq::save_checkpoint(*model->model, std::string(path)); });
}

ts_status ts_model_load(const char* path, ts_model** out) {
  TS_REQUIRE(path && out, "ts_model_load: null argument");
  *out = nullptr;
  return guarded([&] {
    auto m = std::make_shared<tinyseq::Seq2SeqModel>(tinyseq::load_checkpoint(std::string(path)));
    *out = new ts_model{std::move(m)};
  });
}

ts_status ts_model_decode(const ts_model* model, const int* payload, size_t length, size_t max_len,
                          int* out, size_t capacity, size_t* out_len, int* hit_max_len) {
  TS_REQUIRE(model && out_len && (payload || length == 0), "ts_model_decode: null argument");
  TS_REQUIRE(out || capacity == 0, "ts_model_decode: null output buffer");
  return guarded([&] {
    if (!model->model->features().tokens) {
      throw tinyseq::ContractError("token decoding needs a token stage; use ts_model_decode_values");
    }
    auto r = tinyseq::greedy_decode(*model->model, tinyseq::frame(checked_payload(payload, length)), max_len);
    *out_len = r.payload.size();
    if (hit_max_len) *hit_max_len = r.hit_max_len ? 1 : 0;
    if (r.payload.size() > capacity) {
      throw std::length_error("decoded " + std::to_string(r.payload.size()) +
                              " tokens but the buffer holds " + std::to_string(capacity));
    }
    std::copy(r.payload.begin(), r.payload.end(), out);
  });
}

ts_status ts_model_decode_values(const ts_model* model, const int* payload, size_t length,
                                 size_t out_len, double* out) {
  TS_REQUIRE(model && (payload || length == 0) && (out || out_len == 0),
             "ts_model_decode_values: null argument");
  return guarded([&] {
    auto v = tinyseq::decode_values(*model->model, checked_payload(payload, length), out_len);
    std::copy(v.begin(), v.end(), out);
  });
}

size_t ts_experiment_id_count(void) { return tinyseq::experiment_ids().size(); }

const char* ts_experiment_id(size_t index) {
  static const std::vector<std::string> ids = tinyseq::experiment_ids();
  return index < ids.size() ? ids[index].c_str() : nullptr;
}

ts_status ts_experiment_create(const char* id, ts_experiment** out) {
  TS_REQUIRE(id && out, "ts_experiment_create: null argument");
  *out = nullptr;
  return guarded([&] { *out = new ts_experiment{tinyseq::default_spec(id), {}}; });
}

void ts_experiment_destroy(ts_experiment* exp) { delete exp; }

ts_status ts_experiment_apply_json(ts_experiment* exp, const char* json_text) {
  TS_REQUIRE(exp && json_text, "ts_experiment_apply_json: null argument");
  return guarded([&] {
    auto spec = exp->spec;
    tinyseq::apply_overrides(spec, nlohmann::json::parse(json_text));
    exp->spec = std::move(spec);
  });
}

ts_status ts_experiment_load_config(ts_experiment* exp, const char* path) {
  TS_REQUIRE(exp && path, "ts_experiment_load_config: null argument");
  return guarded([&] {
    std::ifstream in(path);
    if (!in) throw tinyseq::IoError(std::string("cannot open config '") + path + "'");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw tinyseq::ConfigError(std::string("config '") + path + "': " + e.what());
    }
    auto spec = exp->spec;
    tinyseq::apply_overrides(spec, j);
    exp->spec = std::move(spec);
  });
}

ts_status ts_experiment_set(ts_experiment* exp, const char* key, double value) {
  TS_REQUIRE(exp && key, "ts_experiment_set: null argument");
  return guarded([&] {
    nlohmann::json j;
    const std::string k = key;
    if (k == "invert_constant") {
      j[k] = value != 0.0;
    } else if (k == "lr" || k == "gamma" || k == "dropout_p" || k == "layer_norm_eps") {
      j[k] = value;
    } else {
      if (value < 0 || value != static_cast<double>(static_cast<std::uint64_t>(value))) {
        throw tinyseq::ConfigError("'" + k + "' needs a non-negative integer");
      }
      j[k] = static_cast<std::uint64_t>(value);
    }
    auto spec = exp->spec;
    tinyseq::apply_overrides(spec, j);
    exp->spec = std::move(spec);
  });
}

ts_status ts_experiment_describe(ts_experiment* exp, const char** out) {
  TS_REQUIRE(exp && out, "ts_experiment_describe: null argument");
  return guarded([&] {
    exp->description = describe(exp->spec).dump(2);
    *out = exp->description.c_str();
  });
}

ts_status ts_experiment_run(const ts_experiment* exp, size_t trials, ts_result** out) {
  TS_REQUIRE(exp && out, "ts_experiment_run: null argument");
  TS_REQUIRE(trials >= 1, "ts_experiment_run: trials must be at least 1");
  *out = nullptr;
  return guarded([&] {
    auto r = std::make_unique<ts_result>();
    r->summary = tinyseq::run_trials(exp->spec, trials);
    for (const auto& run : r->summary.runs) {
      std::ostringstream p, l;
      tinyseq::write_predictions(run, p);
      run.report.write_csv(l);
      r->predictions.push_back(p.str());
      r->losses.push_back(l.str());
    }
    *out = r.release();
  });
}

void ts_result_destroy(ts_result* result) { delete result; }

size_t ts_result_trials(const ts_result* result) { return result ? result->summary.runs.size() : 0; }

size_t ts_result_required(const ts_result* result) { return result ? result->summary.required : 0; }

int ts_result_passed(const ts_result* result) { return result && result->summary.passed() ? 1 : 0; }

size_t ts_result_fully_passing(const ts_result* result) {
  return result ? result->summary.fully_passing_runs() : 0;
}

size_t ts_result_expectation_count(const ts_result* result) {
  return result ? result->summary.pass_counts.size() : 0;
}

ts_status ts_result_expectation(const ts_result* result, size_t index, const char** name,
                                size_t* pass_count) {
  TS_REQUIRE(result, "ts_result_expectation: null result");
  TS_REQUIRE(index < result->summary.pass_counts.size(), "ts_result_expectation: index out of range");
  const auto& pc = result->summary.pass_counts[index];
  if (name) *name = pc.first.c_str();
  if (pass_count) *pass_count = pc.second;
  return TS_OK;
}

#define TS_TRIAL(fn)                                  \
  TS_REQUIRE(result, fn ": null result");             \
  TS_REQUIRE(trial < result->summary.runs.size(), fn ": trial out of range"); \
  const auto& run = result->summary.runs[trial]

ts_status ts_result_trial_seed(const ts_result* result, size_t trial, uint64_t* out) {
  TS_TRIAL("ts_result_trial_seed");
  TS_REQUIRE(out, "ts_result_trial_seed: null output");
  *out = run.spec.seed;
  return TS_OK;
}

ts_status ts_result_final_loss(const ts_result* result, size_t trial, double* out) {
  TS_TRIAL("ts_result_final_loss");
  TS_REQUIRE(out, "ts_result_final_loss: null output");
  *out = run.report.final_loss;
  return TS_OK;
}

ts_status ts_result_wall_seconds(const ts_result* result, size_t trial, double* out) {
  TS_TRIAL("ts_result_wall_seconds");
  TS_REQUIRE(out, "ts_result_wall_seconds: null output");
  *out = run.report.wall_seconds;
  return TS_OK;
}

ts_status ts_result_trial_check(const ts_result* result, size_t trial, size_t index, int* passed,
                                const char** detail) {
  TS_TRIAL("ts_result_trial_check");
  TS_REQUIRE(index < run.expectations.size(), "ts_result_trial_check: index out of range");
  if (passed) *passed = run.expectations[index].passed ? 1 : 0;
  if (detail) *detail = run.expectations[index].detail.c_str();
  return TS_OK;
}

ts_status ts_result_predictions(const ts_result* result, size_t trial, const char** out) {
  TS_TRIAL("ts_result_predictions");
  TS_REQUIRE(out, "ts_result_predictions: null output");
  (void)run;
  *out = result->predictions[trial].c_str();
  return TS_OK;
}

ts_status ts_result_losses_csv(const ts_result* result, size_t trial, const char** out) {
  TS_TRIAL("ts_result_losses_csv");
  TS_REQUIRE(out, "ts_result_losses_csv: null output");
  (void)run;
  *out = result->losses[trial].c_str();
  return TS_OK;
}

ts_status ts_result_write(const ts_result* result, size_t trial, const char* dir, int dump_data) {
  TS_TRIAL("ts_result_write");
  TS_REQUIRE(dir, "ts_result_write: null directory");
  return guarded([&] { tinyseq::write_outputs(run, dir, dump_data != 0); });
}

ts_status ts_result_model(const ts_result* result, size_t trial, ts_model** out) {
  TS_TRIAL("ts_result_model");
  TS_REQUIRE(out, "ts_result_model: null output");
  *out = nullptr;
  return guarded([&] { *out = new ts_model{run.model}; });
}

ts_status ts_positional_value(size_t d_model, size_t pos, size_t dim, double* out) {
  TS_REQUIRE(out, "ts_positional_value: null output");
  TS_REQUIRE(dim < d_model, "ts_positional_value: dim out of range");
  return guarded([&] { *out = tinyseq::positional_table(pos + 1, d_model).at(pos, dim); });
}

ts_status ts_positional_csv(size_t d_model, const size_t* positions, size_t count, int wide,
                            const char* path) {
  TS_REQUIRE(positions || count == 0, "ts_positional_csv: null positions");
  return guarded([&] {
    std::vector<std::size_t> pos(positions, positions + count);
    std::size_t max_pos = 0;
    for (auto p : pos) max_pos = std::max(max_pos, p);
    const auto table = tinyseq::positional_table(std::max(max_pos + 1, tinyseq::default_positional_length), d_model);
    const auto layout = wide ? tinyseq::CsvLayout::wide : tinyseq::CsvLayout::long_form;
    if (!path || std::string(path) == "-") {
      tinyseq::write_positional_csv(table, pos, layout, std::cout);
      std::cout.flush();
      return;
    }
    std::ofstream out(path);
    if (!out) throw tinyseq::IoError(std::string("cannot open '") + path + "' for writing");
    tinyseq::write_positional_csv(table, pos, layout, out);
    if (!out) throw tinyseq::IoError(std::string("failed writing '") + path + "'");
  });
}

ts_status ts_causal_mask(size_t t, double* out) {
  TS_REQUIRE(out, "ts_causal_mask: null output");
  return guarded([&] {
    const auto m = tinyseq::causal_mask(t);
    for (std::size_t r = 0; r < t; ++r)
      for (std::size_t c = 0; c < t; ++c) out[r * t + c] = m.at(r, c);
  });
}

uint64_t ts_fully_masked_rows(void) { return tinyseq::fully_masked_softmax_rows(); }

}  // extern "C"
