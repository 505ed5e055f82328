// tinyseq command-line harness. Talks to the library only through tinyseq.h.
#include <cstdio>
#include <cstdlib>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "tinyseq/tinyseq.h"

namespace {

constexpr int exit_failed = 1;
constexpr int exit_usage = 2;
constexpr int exit_error = 3;

int report(ts_status s, const char* what) {
  std::fprintf(stderr, "tinyseq: %s: %s: %s\n", what, ts_status_name(s), ts_last_error());
  if (s == TS_ERR_CONFIG || s == TS_ERR_ARGUMENT) return exit_usage;
  return exit_error;
}

template <typename T>
std::vector<T> parse_list(const std::string& text) {
  std::vector<T> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    std::istringstream field(item);
    T v;
    if (!(field >> v) || !(field >> std::ws).eof()) throw CLI::ValidationError("list", "bad item '" + item + "'");
    out.push_back(v);
  }
  return out;
}

std::string bracketed(const std::vector<int>& seq) {
  std::string s = "[";
  for (std::size_t i = 0; i < seq.size(); ++i) s += (i ? ", " : "") + std::to_string(seq[i]);
  return s + "]";
}

// --- run ---------------------------------------------------------------

struct RunArgs {
  std::string id;
  std::optional<std::size_t> epochs, copies, batch_size;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
  std::string out_dir, config;
  bool dump_data = false, invert_constant = false, quiet = false;
  std::size_t trials = 1;
};

int cmd_run(const RunArgs& a) {
  ts_experiment* exp = nullptr;
  if (auto s = ts_experiment_create(a.id.c_str(), &exp); s != TS_OK) return report(s, "run");
  std::unique_ptr<ts_experiment, decltype(&ts_experiment_destroy)> guard(exp, ts_experiment_destroy);

  if (!a.config.empty()) {
    if (auto s = ts_experiment_load_config(exp, a.config.c_str()); s != TS_OK) return report(s, "config");
  }
  std::vector<std::pair<const char*, double>> sets;
  if (a.epochs) sets.emplace_back("epochs", static_cast<double>(*a.epochs));
  if (a.lr) sets.emplace_back("lr", *a.lr);
  if (a.seed) sets.emplace_back("seed", static_cast<double>(*a.seed));
  if (a.copies) sets.emplace_back("copies_per_task", static_cast<double>(*a.copies));
  if (a.batch_size) sets.emplace_back("batch_size", static_cast<double>(*a.batch_size));
  if (a.invert_constant) sets.emplace_back("invert_constant", 1.0);
  for (auto [key, value] : sets) {
    if (auto s = ts_experiment_set(exp, key, value); s != TS_OK) return report(s, key);
  }

  std::string out_dir = a.out_dir;
  if (out_dir.empty()) {
    const char* root = std::getenv("TINYSEQ_OUT_DIR");
    out_dir = std::string(root && *root ? root : "runs") + "/" + a.id;
  }

  ts_result* result = nullptr;
  if (auto s = ts_experiment_run(exp, a.trials, &result); s != TS_OK) return report(s, "run");
  std::unique_ptr<ts_result, decltype(&ts_result_destroy)> rguard(result, ts_result_destroy);

  const std::size_t n = ts_result_trials(result);
  for (std::size_t t = 0; t < n; ++t) {
    std::uint64_t seed = 0;
    double loss = 0, secs = 0;
    ts_result_trial_seed(result, t, &seed);
    ts_result_final_loss(result, t, &loss);
    ts_result_wall_seconds(result, t, &secs);
    const std::string dir = n == 1 ? out_dir : out_dir + "/seed-" + std::to_string(seed);
    if (auto s = ts_result_write(result, t, dir.c_str(), a.dump_data ? 1 : 0); s != TS_OK) {
      return report(s, "writing outputs");
    }
    std::printf("%s seed %llu: final loss %.6g (%.1f s) -> %s\n", a.id.c_str(),
                static_cast<unsigned long long>(seed), loss, secs, dir.c_str());
    if (!a.quiet && t == 0) {
      const char* text = nullptr;
      ts_result_predictions(result, t, &text);
      std::fputs(text, stdout);
    }
  }
  const std::size_t required = ts_result_required(result);
  for (std::size_t i = 0; i < ts_result_expectation_count(result); ++i) {
    const char* name = nullptr;
    std::size_t count = 0;
    ts_result_expectation(result, i, &name, &count);
    std::printf("  %-28s %zu/%zu seeds (need %zu) %s\n", name, count, n, required,
                count >= required ? "ok" : "FAILED");
    for (std::size_t t = 0; t < n && !a.quiet; ++t) {
      int passed = 0;
      const char* detail = nullptr;
      ts_result_trial_check(result, t, i, &passed, &detail);
      std::printf("      trial %zu: %s\n", t, detail);
    }
  }
  const bool ok = ts_result_passed(result) != 0;
  std::printf("%s %s\n", a.id.c_str(), ok ? "PASSED" : "FAILED");
  return ok ? 0 : exit_failed;
}

// --- params ------------------------------------------------------------

// Groups a parameter name by layer: "transformer.encoder.layers.0.self_attn.x"
// -> "transformer.encoder.layers.0", "transformer.decoder.norm.weight" -> "transformer.decoder.norm".
std::string layer_of(const std::string& name) {
  std::vector<std::string> parts;
  std::string part;
  std::istringstream in(name);
  while (std::getline(in, part, '.')) parts.push_back(part);
  std::size_t keep = parts.size() > 1 ? parts.size() - 1 : 1;
  for (std::size_t i = 0; i + 1 < parts.size(); ++i)
    if (parts[i] == "layers") keep = i + 2;
  std::string out;
  for (std::size_t i = 0; i < keep && i < parts.size(); ++i) out += (i ? "." : "") + parts[i];
  return out;
}

int cmd_params(bool verbose) {
  struct Anchor {
    const char* label;
    const char* stage;
    std::size_t d_model, ff, expected;
  };
  const Anchor anchors[] = {{"plain, d_model=1, dim_feedforward=1", "plain", 1, 1, 46},
                            {"plain, d_model=1, dim_feedforward=8", "plain", 1, 8, 88},
                            {"token, d_model=8, dim_feedforward=8", "token", 8, 8, 1332}};
  bool all_ok = true;
  for (const auto& anchor : anchors) {
    ts_transformer_config cfg;
    if (auto s = ts_default_config(anchor.stage, &cfg); s != TS_OK) return report(s, "params");
    cfg.d_model = anchor.d_model;
    cfg.dim_feedforward = anchor.ff;
    ts_model* m = nullptr;
    if (auto s = ts_model_create(anchor.stage, &cfg, 0, &m); s != TS_OK) return report(s, "params");
    std::size_t count = 0, tensors = 0;
    ts_model_param_count(m, &count);
    ts_model_tensor_count(m, &tensors);
    const bool ok = count == anchor.expected;
    all_ok = all_ok && ok;
    std::printf("%-40s %6zu  (expected %zu) %s\n", anchor.label, count, anchor.expected, ok ? "ok" : "MISMATCH");
    if (!ok || verbose) {
      std::vector<std::pair<std::string, std::size_t>> groups;
      for (std::size_t i = 0; i < tensors; ++i) {
        const char* name = nullptr;
        std::size_t numel = 0;
        ts_model_tensor_info(m, i, &name, &numel);
        const auto layer = layer_of(name);
        if (groups.empty() || groups.back().first != layer) groups.emplace_back(layer, 0);
        groups.back().second += numel;
      }
      for (const auto& [layer, sub] : groups) std::printf("    %-36s %6zu\n", layer.c_str(), sub);
    }
    ts_model_destroy(m);
  }
  return all_ok ? 0 : exit_failed;
}

// --- posenc ------------------------------------------------------------

int cmd_posenc(std::size_t d_model, const std::string& positions, const std::string& out,
               const std::string& layout) {
  std::vector<std::size_t> pos;
  try {
    pos = parse_list<std::size_t>(positions);
  } catch (const CLI::Error&) {
    std::fprintf(stderr, "tinyseq: posenc: bad --positions '%s'\n", positions.c_str());
    return exit_usage;
  }
  const int wide = layout == "wide" ? 1 : 0;
  if (auto s = ts_positional_csv(d_model, pos.data(), pos.size(), wide, out.c_str()); s != TS_OK) {
    return report(s, "posenc");
  }
  return 0;
}

// --- decode ------------------------------------------------------------

int cmd_decode(const std::string& checkpoint, const std::string& input, std::size_t max_len,
               std::optional<std::size_t> out_len) {
  std::vector<int> payload;
  try {
    payload = parse_list<int>(input);
  } catch (const CLI::Error&) {
    std::fprintf(stderr, "tinyseq: decode: bad --input '%s'\n", input.c_str());
    return exit_usage;
  }
  ts_model* m = nullptr;
  if (auto s = ts_model_load(checkpoint.c_str(), &m); s != TS_OK) return report(s, "decode");
  std::unique_ptr<ts_model, decltype(&ts_model_destroy)> guard(m, ts_model_destroy);
  const char* stage = nullptr;
  ts_model_stage(m, &stage);

  std::printf("Input sequence: %s\n", bracketed(payload).c_str());
  if (std::string(stage) == "plain") {
    std::vector<double> values(out_len.value_or(payload.size()));
    if (auto s = ts_model_decode_values(m, payload.data(), payload.size(), values.size(), values.data());
        s != TS_OK) {
      return report(s, "decode");
    }
    std::printf("Output (predicted) values: [");
    for (std::size_t i = 0; i < values.size(); ++i) std::printf("%s%.4f", i ? ", " : "", values[i]);
    std::printf("]\n");
    return 0;
  }
  std::vector<int> out(max_len);
  std::size_t n = 0;
  int hit = 0;
  if (auto s = ts_model_decode(m, payload.data(), payload.size(), max_len, out.data(), out.size(), &n, &hit);
      s != TS_OK) {
    return report(s, "decode");
  }
  out.resize(n);
  std::printf("Output (predicted) sequence: %s%s\n", bracketed(out).c_str(),
              hit ? "  (no EOS within the decode limit)" : "");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tinyseq: staged seq2seq transformer experiments on binary sequences"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(ts_version()));

  std::string ids;
  for (std::size_t i = 0; i < ts_experiment_id_count(); ++i) ids += (i ? ", " : "") + std::string(ts_experiment_id(i));

  RunArgs run;
  auto* run_cmd = app.add_subcommand("run", "train one experiment and write its outputs");
  run_cmd->add_option("id", run.id, "experiment id (" + ids + ")")->required();
  run_cmd->add_option("--epochs", run.epochs, "training epochs");
  run_cmd->add_option("--lr", run.lr, "initial learning rate");
  run_cmd->add_option("--seed", run.seed, "first seed");
  run_cmd->add_option("--copies", run.copies, "samples per task");
  run_cmd->add_option("--batch-size", run.batch_size, "minibatch size, 0 for full batch per length group");
  run_cmd->add_option("--out", run.out_dir, "output directory (default $TINYSEQ_OUT_DIR/<id> or runs/<id>)");
  run_cmd->add_option("--config", run.config, "JSON file of spec overrides")->check(CLI::ExistingFile);
  run_cmd->add_option("--trials", run.trials, "seeds to run in parallel")->check(CLI::PositiveNumber);
  run_cmd->add_flag("--dump-data", run.dump_data, "also write dataset.txt");
  run_cmd->add_flag("--invert-constant", run.invert_constant, "use 0000->1111 / 1111->0000 for the constant tasks");
  run_cmd->add_flag("-q,--quiet", run.quiet, "only print the summary");

  bool verbose = false;
  auto* params_cmd = app.add_subcommand("params", "check the parameter-count anchors (46, 88, 1332)");
  params_cmd->add_flag("-v,--verbose", verbose, "always list per-layer subtotals");

  std::size_t d_model = 8;
  std::string positions = "1,2", pe_out = "-", layout = "long";
  auto* pe_cmd = app.add_subcommand("posenc", "write positional-encoding values as CSV");
  pe_cmd->add_option("--d-model", d_model, "even feature dimension");
  pe_cmd->add_option("--positions", positions, "comma-separated positions");
  pe_cmd->add_option("--out", pe_out, "output file, - for stdout");
  pe_cmd->add_option("--layout", layout, "long (pos,dim,value) or wide (pos,d0..)")
      ->check(CLI::IsMember({"long", "wide"}));

  std::string checkpoint, input;
  std::size_t max_len = 15;
  std::optional<std::size_t> out_len;
  auto* dec_cmd = app.add_subcommand("decode", "greedy-decode one input with a saved model");
  dec_cmd->add_option("--checkpoint", checkpoint, "model.ckpt from a run")->required()->check(CLI::ExistingFile);
  dec_cmd->add_option("--input", input, "payload such as 0,1,0,1")->required();
  dec_cmd->add_option("--max-len", max_len, "decode limit for token models");
  dec_cmd->add_option("--out-len", out_len, "values to predict for plain models (default: input length)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : exit_usage;
  }

  if (*run_cmd) return cmd_run(run);
  if (*params_cmd) return cmd_params(verbose);
  if (*pe_cmd) return cmd_posenc(d_model, positions, pe_out, layout);
  if (*dec_cmd) return cmd_decode(checkpoint, input, max_len, out_len);
  return exit_usage;
}
