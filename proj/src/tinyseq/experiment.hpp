#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "tinyseq/model.hpp"
#include "tinyseq/optimize.hpp"
#include "tinyseq/seqdata.hpp"

namespace tinyseq {

// One rung of the ladder: plain (E1), token without mask (E2a, E2b), causal
// mask (E3), positional encoding (E4), padding with all tasks (E5).
struct ExperimentSpec {
  std::string id;
  Stage stage = Stage::plain;
  std::vector<TaskSpec> tasks;
  std::size_t epochs = 0;
  double lr = 0.01;
  double gamma = 0.1;
  std::vector<std::size_t> milestones;
  std::size_t copies_per_task = 50;
  std::size_t batch_size = 0;  // 0: full batch per length group
  std::uint64_t seed = 1;
  bool invert_constant = false;
  std::size_t decode_limit = default_decode_limit;
  TransformerConfig transformer;
};

std::vector<std::string> experiment_ids();
// Throws ConfigError for an unknown id.
ExperimentSpec default_spec(const std::string& id);

// Overrides from a JSON object whose keys mirror ExperimentSpec fields
// (epochs, lr, gamma, milestones, copies_per_task, batch_size, seed,
// invert_constant, decode_limit, d_model, nhead, dim_feedforward, dropout_p,
// layer_norm_eps, num_encoder_layers, num_decoder_layers).
void apply_overrides(ExperimentSpec& spec, const nlohmann::json& overrides);

struct Probe {
  TaskSpec task;
  std::vector<int> decoded;    // token stages
  bool hit_max_len = false;
  std::vector<double> values;  // plain stage
  bool exact = false;          // decoded payload equals the task output
};

struct Expectation {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct ExperimentResult {
  ExperimentSpec spec;
  TrainReport report;
  std::vector<Probe> probes;
  std::vector<Expectation> expectations;
  std::shared_ptr<Seq2SeqModel> model;

  bool passed() const;
};

ExperimentResult run_experiment(const ExperimentSpec& spec);

// Stage expectations over a trained run.
std::vector<Expectation> evaluate_expectations(const ExperimentSpec& spec, const TrainReport& report,
                                               const std::vector<Probe>& probes);

// "Example i / Input sequence / Output (predicted) sequence" blocks.
void write_predictions(const ExperimentResult& result, std::ostream& out);
nlohmann::json report_json(const ExperimentResult& result);

// losses.csv, predictions.txt, report.json, model.ckpt (and dataset.txt when
// dump_data) in out_dir, which is created if needed.
void write_outputs(const ExperimentResult& result, const std::filesystem::path& out_dir, bool dump_data);

struct TrialSummary {
  std::vector<ExperimentResult> runs;
  // Per expectation name: number of seeds where it held.
  std::vector<std::pair<std::string, std::size_t>> pass_counts;
  std::size_t required = 0;

  bool passed() const;
  // Number of seeds where every expectation held.
  std::size_t fully_passing_runs() const;
};

// Runs seeds spec.seed, spec.seed + 1, ... on separate threads. An expectation
// passes when it holds for at least two thirds of the trials.
TrialSummary run_trials(const ExperimentSpec& spec, std::size_t trials);

}  // namespace tinyseq
