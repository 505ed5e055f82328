#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include "tinyseq/model.hpp"
#include "tinyseq/nn.hpp"
#include "tinyseq/seqdata.hpp"
#include "tinyseq/tensor.hpp"

namespace tinyseq {

// Mean over elements of (pred - target)^2.
Tensor mse_loss(const Tensor& pred, const Tensor& target);

// Mean of -log softmax(logits)[target] over positions whose target is not
// ignore_index. logits [... x V]; targets has one id per row of logits.
// When every position is ignored the loss is 0 with zero gradients.
Tensor cross_entropy_loss(const Tensor& logits, std::span<const int> targets,
                          std::optional<int> ignore_index = {});

struct AdamOptions {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class AdamState {
 public:
  AdamState(const ParameterRegistry& registry, AdamOptions options = {});

  double lr() const { return options_.lr; }
  void set_lr(double lr) { options_.lr = lr; }
  const AdamOptions& options() const { return options_; }
  std::uint64_t steps() const { return steps_; }

  // Bias-corrected update of every registered parameter from its gradient.
  // Gradients are left as they are.
  void step(ParameterRegistry& registry);

 private:
  AdamOptions options_;
  std::uint64_t steps_ = 0;
  std::vector<std::vector<double>> first_moment_;
  std::vector<std::vector<double>> second_moment_;
};

inline void adam_step(AdamState& state, ParameterRegistry& registry) { state.step(registry); }

// lr(epoch) = initial_lr * gamma^(number of milestones <= epoch); epochs are 0-based.
struct ScheduleSpec {
  double initial_lr = 0.01;
  double gamma = 0.1;
  std::vector<std::size_t> milestones;

  double lr_at(std::size_t epoch) const;
};

struct FitOptions {
  std::size_t epochs = 1;
  ScheduleSpec schedule;
  // 0: one full batch per (source length, target length) group.
  std::size_t batch_size = 0;
  std::uint64_t seed = 0;
};

struct TrainReport {
  std::vector<double> losses;  // per epoch, sample-weighted mean of step losses
  std::vector<double> lrs;
  double final_loss = 0.0;
  double wall_seconds = 0.0;
  std::uint64_t seed = 0;
  ModelConfig config;

  // "epoch,loss,lr" rows and a trailing "# final_loss=..." summary line.
  void write_csv(std::ostream& out) const;
};

// Raw-value batch for the plain stage: src [S x B x 1], tgt_in [T x B x 1]
// (targets shifted right behind a start value of 0), tgt_out [T x B x 1].
struct ValueBatch {
  Tensor src;
  Tensor tgt_in;
  Tensor tgt_out;
};

ValueBatch make_value_batch(const std::vector<Sample>& samples);

// Loss of one teacher-forced batch: cross-entropy for token stages (PAD
// ignored in the padded stage), MSE for the plain stage.
Tensor batch_loss(const Seq2SeqModel& model, const Batch& batch, const ForwardContext& ctx);
Tensor batch_loss(const Seq2SeqModel& model, const ValueBatch& batch, const ForwardContext& ctx);

TrainReport fit(Seq2SeqModel& model, const std::vector<Sample>& dataset, const FitOptions& options);

inline constexpr std::size_t default_decode_limit = 15;

struct DecodeResult {
  std::vector<int> payload;  // emitted tokens without SOS/EOS
  bool hit_max_len = false;  // stopped by the limit, not by EOS
};

// Autoregressive argmax decoding from [SOS] in evaluation mode. src is framed
// (SOS ... EOS). Ties go to the lowest token id.
DecodeResult greedy_decode(const Seq2SeqModel& model, const std::vector<int>& framed_src,
                           std::size_t max_len = default_decode_limit);

// Plain stage: feeds raw values and predicts out_len values one step at a time.
std::vector<double> decode_values(const Seq2SeqModel& model, const std::vector<int>& src_payload,
                                  std::size_t out_len);

}  // namespace tinyseq
