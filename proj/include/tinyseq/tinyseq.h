#ifndef TINYSEQ_TINYSEQ_H
#define TINYSEQ_TINYSEQ_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(TINYSEQ_BUILDING)
#    define TINYSEQ_API __declspec(dllexport)
#  else
#    define TINYSEQ_API __declspec(dllimport)
#  endif
#else
#  define TINYSEQ_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ts_status {
  TS_OK = 0,
  TS_ERR_ARGUMENT = 1,    /* null pointer, bad key, buffer too small */
  TS_ERR_DIMENSION = 2,
  TS_ERR_CONTRACT = 3,
  TS_ERR_VOCABULARY = 4,
  TS_ERR_CAPACITY = 5,
  TS_ERR_CONFIG = 6,
  TS_ERR_IO = 7,
  TS_ERR_NUMERIC = 8,     /* non-finite loss during training */
  TS_ERR_INTERNAL = 9
} ts_status;

typedef struct ts_model ts_model;
typedef struct ts_experiment ts_experiment;
typedef struct ts_result ts_result;

typedef struct ts_transformer_config {
  size_t d_model;
  size_t nhead;
  size_t num_encoder_layers;
  size_t num_decoder_layers;
  size_t dim_feedforward;
  double dropout_p;
  double layer_norm_eps;
} ts_transformer_config;

TINYSEQ_API const char* ts_version(void);
TINYSEQ_API const char* ts_status_name(ts_status status);
/* Message of the last failing call on this thread; "" when none. */
TINYSEQ_API const char* ts_last_error(void);

/* Token ids. */
enum { TS_TOKEN_ZERO = 0, TS_TOKEN_ONE = 1, TS_TOKEN_SOS = 2, TS_TOKEN_EOS = 3, TS_TOKEN_PAD = 4 };

/* Model stages: "plain", "token", "masked", "positional", "padded". */
TINYSEQ_API ts_status ts_default_config(const char* stage, ts_transformer_config* out);

/* cfg may be NULL for the stage default. Parameters are Xavier-initialized from seed. */
TINYSEQ_API ts_status ts_model_create(const char* stage, const ts_transformer_config* cfg,
                                      uint64_t seed, ts_model** out);
TINYSEQ_API void ts_model_destroy(ts_model* model);
TINYSEQ_API ts_status ts_model_stage(const ts_model* model, const char** out);
TINYSEQ_API ts_status ts_model_config(const ts_model* model, ts_transformer_config* out);
TINYSEQ_API ts_status ts_model_param_count(const ts_model* model, size_t* out);
/* Named tensors in registration order. name stays valid while the model lives. */
TINYSEQ_API ts_status ts_model_tensor_count(const ts_model* model, size_t* out);
TINYSEQ_API ts_status ts_model_tensor_info(const ts_model* model, size_t index, const char** name,
                                           size_t* numel);
TINYSEQ_API ts_status ts_model_save(const ts_model* model, const char* path);
TINYSEQ_API ts_status ts_model_load(const char* path, ts_model** out);

/* Greedy decoding of a {0,1} payload (framing is added here). Writes at most
   capacity tokens; *out_len is the decoded length. hit_max_len may be NULL. */
TINYSEQ_API ts_status ts_model_decode(const ts_model* model, const int* payload, size_t length,
                                      size_t max_len, int* out, size_t capacity, size_t* out_len,
                                      int* hit_max_len);
/* Plain stage: out_len raw values predicted one step at a time. */
TINYSEQ_API ts_status ts_model_decode_values(const ts_model* model, const int* payload,
                                             size_t length, size_t out_len, double* out);

/* Experiments: "E1", "E2a", "E2b", "E3", "E4", "E5". */
TINYSEQ_API size_t ts_experiment_id_count(void);
TINYSEQ_API const char* ts_experiment_id(size_t index);
TINYSEQ_API ts_status ts_experiment_create(const char* id, ts_experiment** out);
TINYSEQ_API void ts_experiment_destroy(ts_experiment* exp);
/* JSON object with keys such as epochs, lr, gamma, milestones, copies_per_task,
   batch_size, seed, invert_constant, decode_limit, d_model, dropout_p. */
TINYSEQ_API ts_status ts_experiment_apply_json(ts_experiment* exp, const char* json_text);
TINYSEQ_API ts_status ts_experiment_load_config(ts_experiment* exp, const char* path);
/* Single numeric override; booleans take 0 or 1. */
TINYSEQ_API ts_status ts_experiment_set(ts_experiment* exp, const char* key, double value);
/* Current spec as a JSON string, valid until the next call on exp. */
TINYSEQ_API ts_status ts_experiment_describe(ts_experiment* exp, const char** out);

/* Runs seeds seed .. seed+trials-1 on separate threads. */
TINYSEQ_API ts_status ts_experiment_run(const ts_experiment* exp, size_t trials, ts_result** out);
TINYSEQ_API void ts_result_destroy(ts_result* result);
TINYSEQ_API size_t ts_result_trials(const ts_result* result);
/* Seeds an expectation must hold for. */
TINYSEQ_API size_t ts_result_required(const ts_result* result);
/* 1 when every expectation met the seed threshold. */
TINYSEQ_API int ts_result_passed(const ts_result* result);
TINYSEQ_API size_t ts_result_fully_passing(const ts_result* result);
TINYSEQ_API size_t ts_result_expectation_count(const ts_result* result);
TINYSEQ_API ts_status ts_result_expectation(const ts_result* result, size_t index, const char** name,
                                            size_t* pass_count);
TINYSEQ_API ts_status ts_result_trial_seed(const ts_result* result, size_t trial, uint64_t* out);
TINYSEQ_API ts_status ts_result_final_loss(const ts_result* result, size_t trial, double* out);
TINYSEQ_API ts_status ts_result_wall_seconds(const ts_result* result, size_t trial, double* out);
TINYSEQ_API ts_status ts_result_trial_check(const ts_result* result, size_t trial, size_t index,
                                            int* passed, const char** detail);
/* Text owned by the result. */
TINYSEQ_API ts_status ts_result_predictions(const ts_result* result, size_t trial, const char** out);
TINYSEQ_API ts_status ts_result_losses_csv(const ts_result* result, size_t trial, const char** out);
TINYSEQ_API ts_status ts_result_write(const ts_result* result, size_t trial, const char* dir,
                                      int dump_data);
/* New handle sharing the trained model of one trial. */
TINYSEQ_API ts_status ts_result_model(const ts_result* result, size_t trial, ts_model** out);

/* Sinusoidal table value pe[pos][dim] for an even d_model. */
TINYSEQ_API ts_status ts_positional_value(size_t d_model, size_t pos, size_t dim, double* out);
/* CSV for the given positions; wide = 0 gives "pos,dim,value" rows, otherwise
   "pos,d0,..". path NULL or "-" writes to stdout. */
TINYSEQ_API ts_status ts_positional_csv(size_t d_model, const size_t* positions, size_t count,
                                        int wide, const char* path);

/* Additive t x t causal mask (0 / -inf), row-major into out[t*t]. */
TINYSEQ_API ts_status ts_causal_mask(size_t t, double* out);

/* Softmax rows that were entirely masked since process start. */
TINYSEQ_API uint64_t ts_fully_masked_rows(void);

#ifdef __cplusplus
}
#endif

#endif
