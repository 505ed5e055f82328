#include "tinyseq/seqdata.hpp"

#include <algorithm>
#include <map>
#include <ostream>
#include <random>

namespace tinyseq {

namespace tasks {

std::vector<TaskSpec> constant(bool invert) {
  if (invert) {
    return {{"zeros_to_ones", {0, 0, 0, 0}, {1, 1, 1, 1}}, {"ones_to_zeros", {1, 1, 1, 1}, {0, 0, 0, 0}}};
  }
  return {{"copy_zeros", {0, 0, 0, 0}, {0, 0, 0, 0}}, {"copy_ones", {1, 1, 1, 1}, {1, 1, 1, 1}}};
}

std::vector<TaskSpec> three_to_one() {
  return {{"three_ones_to_zero", {1, 1, 1}, {0}}, {"three_zeros_to_one", {0, 0, 0}, {1}}};
}

std::vector<TaskSpec> one_to_three() {
  return {{"zero_to_three_ones", {0}, {1, 1, 1}}, {"one_to_three_zeros", {1}, {0, 0, 0}}};
}

std::vector<TaskSpec> alternating() {
  return {{"copy_0101", {0, 1, 0, 1}, {0, 1, 0, 1}}, {"copy_1010", {1, 0, 1, 0}, {1, 0, 1, 0}}};
}

std::vector<TaskSpec> all_eight(bool invert_constant) {
  std::vector<TaskSpec> out;
  for (auto& list : {constant(invert_constant), three_to_one(), one_to_three(), alternating()})
    out.insert(out.end(), list.begin(), list.end());
  return out;
}

}  // namespace tasks

std::vector<Sample> generate_dataset(const std::vector<TaskSpec>& task_list,
                                     std::size_t copies_per_task, std::uint64_t seed) {
  if (task_list.empty()) throw ContractError("generate_dataset: empty task list");
  if (copies_per_task == 0) throw ContractError("generate_dataset: copies_per_task must be >= 1");
  std::vector<Sample> out;
  out.reserve(task_list.size() * copies_per_task);
  for (const auto& task : task_list) {
    for (int v : task.input)
      if (v != vocab::zero && v != vocab::one) throw ContractError("task '" + task.name + "' has a non-binary input");
    for (int v : task.output)
      if (v != vocab::zero && v != vocab::one) throw ContractError("task '" + task.name + "' has a non-binary output");
    for (std::size_t i = 0; i < copies_per_task; ++i) out.push_back({task.input, task.output});
  }
  std::mt19937_64 rng(seed);
  // Fisher-Yates with an explicit draw so the order does not depend on the
  // standard library's shuffle implementation.
  for (std::size_t i = out.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(out[i - 1], out[pick(rng)]);
  }
  return out;
}

std::vector<int> frame(const std::vector<int>& payload) {
  std::vector<int> out;
  out.reserve(payload.size() + 2);
  out.push_back(vocab::sos);
  out.insert(out.end(), payload.begin(), payload.end());
  out.push_back(vocab::eos);
  return out;
}

std::vector<int> strip_framing(const std::vector<int>& tokens) {
  std::vector<int> out;
  for (int t : tokens)
    if (t != vocab::sos && t != vocab::eos && t != vocab::pad) out.push_back(t);
  return out;
}

Batch frame_and_pad(const std::vector<Sample>& samples, std::optional<std::size_t> pad_to) {
  if (samples.empty()) throw ContractError("frame_and_pad: empty batch");
  std::size_t src_len = 0, tgt_len = 0;
  for (const auto& s : samples) {
    src_len = std::max(src_len, s.src.size() + 2);
    tgt_len = std::max(tgt_len, s.tgt.size() + 2);
  }
  if (pad_to) {
    const std::size_t longest = std::max(src_len, tgt_len);
    if (*pad_to < longest) {
      throw CapacityError("pad_to " + std::to_string(*pad_to) + " is shorter than the longest framed sequence (" +
                          std::to_string(longest) + ")");
    }
    src_len = tgt_len = *pad_to;
  }
  const std::size_t B = samples.size();
  Batch batch;
  batch.src = TokenMatrix(src_len, B, vocab::pad);
  batch.tgt_in = TokenMatrix(tgt_len - 1, B, vocab::pad);
  batch.tgt_out = TokenMatrix(tgt_len - 1, B, vocab::pad);
  for (std::size_t b = 0; b < B; ++b) {
    const auto src = frame(samples[b].src);
    for (std::size_t p = 0; p < src.size(); ++p) batch.src.at(p, b) = src[p];
    auto tgt = frame(samples[b].tgt);
    tgt.resize(tgt_len, vocab::pad);
    for (std::size_t p = 0; p + 1 < tgt_len; ++p) {
      batch.tgt_in.at(p, b) = tgt[p];
      batch.tgt_out.at(p, b) = tgt[p + 1];
    }
  }
  batch.src_key_padding = std::make_shared<const KeyPaddingMask>(key_padding_mask(batch.src, vocab::pad));
  batch.tgt_key_padding = std::make_shared<const KeyPaddingMask>(key_padding_mask(batch.tgt_in, vocab::pad));
  batch.memory_key_padding = batch.src_key_padding;
  batch.tgt_mask = causal_mask(tgt_len - 1);
  return batch;
}

std::vector<std::vector<Sample>> bucket_by_length(const std::vector<Sample>& samples) {
  std::vector<std::vector<Sample>> buckets;
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> index;
  for (const auto& s : samples) {
    auto key = std::make_pair(s.src.size(), s.tgt.size());
    auto [it, inserted] = index.emplace(key, buckets.size());
    if (inserted) buckets.emplace_back();
    buckets[it->second].push_back(s);
  }
  return buckets;
}

void write_dataset(const std::vector<Sample>& samples, std::ostream& out) {
  auto write_seq = [&out](const std::vector<int>& seq) {
    for (std::size_t i = 0; i < seq.size(); ++i) out << (i ? " " : "") << seq[i];
  };
  for (const auto& s : samples) {
    write_seq(frame(s.src));
    out << " -> ";
    write_seq(frame(s.tgt));
    out << '\n';
  }
}

}  // namespace tinyseq
