#include "tinyseq/optimize.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

namespace tinyseq {

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("mse_loss: prediction " + shape_str(pred.shape()) + " vs target " +
                         shape_str(target.shape()));
  }
  auto diff = sub(pred, target);
  return mean_all(mul(diff, diff));
}

Tensor cross_entropy_loss(const Tensor& logits, std::span<const int> targets,
                          std::optional<int> ignore_index) {
  const std::size_t V = logits.shape().back();
  const std::size_t rows = logits.size() / V;
  if (targets.size() != rows) {
    throw DimensionError("cross_entropy_loss: " + std::to_string(targets.size()) + " targets for logits " +
                         shape_str(logits.shape()));
  }
  auto probs = std::make_shared<std::vector<double>>(logits.size(), 0.0);
  auto tgt = std::make_shared<std::vector<int>>(targets.begin(), targets.end());
  auto X = logits.data();
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const int t = targets[r];
    if (ignore_index && t == *ignore_index) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= V) {
      throw VocabularyError("cross_entropy_loss: target id " + std::to_string(t) + " at row " +
                            std::to_string(r) + " outside " + std::to_string(V) + " classes");
    }
    const double* row = X.data() + r * V;
    const double mx = *std::max_element(row, row + V);
    double sum = 0.0;
    for (std::size_t c = 0; c < V; ++c) sum += std::exp(row[c] - mx);
    const double log_sum = std::log(sum) + mx;
    for (std::size_t c = 0; c < V; ++c) (*probs)[r * V + c] = std::exp(row[c] - log_sum);
    total += log_sum - row[t];
    ++counted;
  }
  const double value = counted ? total / static_cast<double>(counted) : 0.0;
  const std::optional<int> ignore = ignore_index;
  return detail::make_result(
      "cross_entropy", {1}, {value}, {logits},
      [logits, probs, tgt, rows, V, counted, ignore](std::span<const double> g) {
        if (counted == 0) return;
        auto gl = logits.node()->grad_buffer();
        const double scale = g[0] / static_cast<double>(counted);
        for (std::size_t r = 0; r < rows; ++r) {
          const int t = (*tgt)[r];
          if (ignore && t == *ignore) continue;
          for (std::size_t c = 0; c < V; ++c) gl[r * V + c] += scale * (*probs)[r * V + c];
          gl[r * V + static_cast<std::size_t>(t)] -= scale;
        }
      });
}

AdamState::AdamState(const ParameterRegistry& registry, AdamOptions options) : options_(options) {
  for (const auto& e : registry.entries()) {
    first_moment_.emplace_back(e.tensor.size(), 0.0);
    second_moment_.emplace_back(e.tensor.size(), 0.0);
  }
}

void AdamState::step(ParameterRegistry& registry) {
  auto& entries = registry.entries();
  if (entries.size() != first_moment_.size()) {
    throw ContractError("adam: registry changed since the optimizer was created");
  }
  ++steps_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t p = 0; p < entries.size(); ++p) {
    Tensor& param = entries[p].tensor;
    if (!param.has_grad()) continue;
    auto values = param.mutable_data();
    auto grad = param.grad();
    auto& m = first_moment_[p];
    auto& v = second_moment_[p];
    for (std::size_t i = 0; i < values.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
      v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      values[i] -= options_.lr * m_hat / (std::sqrt(v_hat) + options_.eps);
    }
  }
}

double ScheduleSpec::lr_at(std::size_t epoch) const {
  const auto passed = std::count_if(milestones.begin(), milestones.end(),
                                    [epoch](std::size_t m) { return m <= epoch; });
  return initial_lr * std::pow(gamma, static_cast<double>(passed));
}

void TrainReport::write_csv(std::ostream& out) const {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "epoch,loss,lr\n";
  for (std::size_t e = 0; e < losses.size(); ++e) os << e << ',' << losses[e] << ',' << lrs[e] << '\n';
  os << "# final_loss=" << final_loss << ",epochs=" << losses.size() << ",seed=" << seed
     << ",stage=" << stage_name(config.stage) << '\n';
  out << os.str();
}

ValueBatch make_value_batch(const std::vector<Sample>& samples) {
  if (samples.empty()) throw ContractError("make_value_batch: empty batch");
  const std::size_t S = samples.front().src.size(), T = samples.front().tgt.size(), B = samples.size();
  std::vector<double> src(S * B), tgt_in(T * B), tgt_out(T * B);
  for (std::size_t b = 0; b < B; ++b) {
    const auto& s = samples[b];
    if (s.src.size() != S || s.tgt.size() != T) {
      throw DimensionError("plain-stage batches need equal sequence lengths");
    }
    for (std::size_t p = 0; p < S; ++p) src[p * B + b] = s.src[p];
    for (std::size_t p = 0; p < T; ++p) {
      tgt_out[p * B + b] = s.tgt[p];
      tgt_in[p * B + b] = p == 0 ? 0.0 : s.tgt[p - 1];
    }
  }
  return {Tensor({S, B, 1}, std::move(src)), Tensor({T, B, 1}, std::move(tgt_in)),
          Tensor({T, B, 1}, std::move(tgt_out))};
}

Tensor batch_loss(const Seq2SeqModel& model, const Batch& batch, const ForwardContext& ctx) {
  auto logits = model.logits(batch, ctx);
  std::optional<int> ignore;
  if (model.features().padding) ignore = vocab::pad;
  return cross_entropy_loss(logits, batch.tgt_out.ids, ignore);
}

Tensor batch_loss(const Seq2SeqModel& model, const ValueBatch& batch, const ForwardContext& ctx) {
  return mse_loss(model.values(batch.src, batch.tgt_in, ctx), batch.tgt_out);
}

namespace {

template <typename BatchT>
double train_step(Seq2SeqModel& model, const BatchT& batch, AdamState& adam, std::mt19937_64& rng,
                  std::size_t epoch) {
  ForwardContext ctx{Mode::training, &rng};
  model.parameters().zero_grad();
  auto loss = batch_loss(model, batch, ctx);
  const double value = loss.item();
  if (!std::isfinite(value)) {
    throw NumericError("non-finite loss " + std::to_string(value) + " at epoch " + std::to_string(epoch));
  }
  backward(loss);
  adam.step(model.parameters());
  return value;
}

}  // namespace

TrainReport fit(Seq2SeqModel& model, const std::vector<Sample>& dataset, const FitOptions& options) {
  if (dataset.empty()) throw ContractError("fit: empty dataset");
  const auto start = std::chrono::steady_clock::now();
  const auto f = model.features();
  TrainReport report;
  report.seed = options.seed;
  report.config = model.config();
  std::mt19937_64 rng(options.seed ^ 0x9E3779B97F4A7C15ULL);
  AdamState adam(model.parameters(), AdamOptions{options.schedule.initial_lr});

  const bool minibatch = options.batch_size > 0;
  if (minibatch && !f.padding && bucket_by_length(dataset).size() > 1) {
    throw ContractError("fit: mixed-length minibatches need the padded stage");
  }
  // Fixed batches for the full-batch mode.
  std::vector<std::vector<Sample>> groups;
  std::vector<Batch> token_batches;
  std::vector<ValueBatch> value_batches;
  if (!minibatch) {
    groups = bucket_by_length(dataset);
    for (const auto& g : groups) {
      if (f.tokens) token_batches.push_back(frame_and_pad(g));
      else value_batches.push_back(make_value_batch(g));
    }
  }
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    const double lr = options.schedule.lr_at(epoch);
    adam.set_lr(lr);
    double weighted = 0.0;
    std::size_t seen = 0;
    if (!minibatch) {
      for (std::size_t i = 0; i < groups.size(); ++i) {
        const double loss = f.tokens ? train_step(model, token_batches[i], adam, rng, epoch)
                                     : train_step(model, value_batches[i], adam, rng, epoch);
        weighted += loss * static_cast<double>(groups[i].size());
        seen += groups[i].size();
      }
    } else {
      for (std::size_t i = order.size(); i > 1; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i - 1);
        std::swap(order[i - 1], order[pick(rng)]);
      }
      for (std::size_t begin = 0; begin < order.size(); begin += options.batch_size) {
        const std::size_t end = std::min(order.size(), begin + options.batch_size);
        std::vector<Sample> chunk;
        for (std::size_t i = begin; i < end; ++i) chunk.push_back(dataset[order[i]]);
        const double loss = f.tokens ? train_step(model, frame_and_pad(chunk), adam, rng, epoch)
                                     : train_step(model, make_value_batch(chunk), adam, rng, epoch);
        weighted += loss * static_cast<double>(chunk.size());
        seen += chunk.size();
      }
    }
    report.losses.push_back(weighted / static_cast<double>(seen));
    report.lrs.push_back(lr);
  }
  report.final_loss = report.losses.empty() ? 0.0 : report.losses.back();
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  model.parameters().zero_grad();
  return report;
}

DecodeResult greedy_decode(const Seq2SeqModel& model, const std::vector<int>& framed_src,
                           std::size_t max_len) {
  if (!model.features().tokens) throw ContractError("greedy_decode: the plain stage has no tokens");
  const ForwardContext ctx{Mode::evaluation, nullptr};
  const auto src = TokenMatrix::column(framed_src);
  const bool causal = model.features().causal_mask;
  std::vector<int> prefix{vocab::sos};
  DecodeResult result;
  while (true) {
    const auto tgt = TokenMatrix::column(prefix);
    TransformerMasks masks;
    CausalMask mask(prefix.size());
    if (causal) masks.tgt_mask = mask.additive();
    auto logits = model.logits(src, tgt, masks, ctx);
    const std::size_t V = logits.shape().back();
    auto last = logits.data().subspan((prefix.size() - 1) * V, V);
    // Strict comparison keeps the lowest id on ties.
    int best = 0;
    for (std::size_t c = 1; c < V; ++c)
      if (last[c] > last[static_cast<std::size_t>(best)]) best = static_cast<int>(c);
    if (best == vocab::eos) break;
    result.payload.push_back(best);
    prefix.push_back(best);
    if (result.payload.size() >= max_len) {
      result.hit_max_len = true;
      break;
    }
  }
  return result;
}

std::vector<double> decode_values(const Seq2SeqModel& model, const std::vector<int>& src_payload,
                                  std::size_t out_len) {
  if (model.features().tokens) throw ContractError("decode_values: token stages decode tokens");
  const ForwardContext ctx{Mode::evaluation, nullptr};
  std::vector<double> src_values(src_payload.begin(), src_payload.end());
  Tensor src({src_values.size(), 1, 1}, src_values);
  std::vector<double> prefix{0.0};
  std::vector<double> out;
  while (out.size() < out_len) {
    Tensor tgt({prefix.size(), 1, 1}, prefix);
    auto pred = model.values(src, tgt, ctx);
    const double next = pred.data()[prefix.size() - 1];
    out.push_back(next);
    prefix.push_back(next);
  }
  return out;
}

}  // namespace tinyseq
