#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tinyseq/masking.hpp"
#include "tinyseq/tokens.hpp"

namespace tinyseq {

// One input -> output mapping over {0, 1}.
struct TaskSpec {
  std::string name;
  std::vector<int> input;
  std::vector<int> output;
};

struct Sample {
  std::vector<int> src;  // payload, no SOS/EOS
  std::vector<int> tgt;
};

namespace tasks {

// 0,0,0,0 -> 0,0,0,0 and 1,1,1,1 -> 1,1,1,1. With invert, the outputs are
// swapped (0,0,0,0 -> 1,1,1,1), as in the joint training list.
std::vector<TaskSpec> constant(bool invert = false);
std::vector<TaskSpec> three_to_one();   // 0,0,0 -> 1 and 1,1,1 -> 0
std::vector<TaskSpec> one_to_three();   // 1 -> 0,0,0 and 0 -> 1,1,1
std::vector<TaskSpec> alternating();    // 0,1,0,1 -> 0,1,0,1 and 1,0,1,0 -> 1,0,1,0
// The eight-task joint set, ordered like the published results listing.
std::vector<TaskSpec> all_eight(bool invert_constant = false);

}  // namespace tasks

// Each task repeated copies_per_task times, shuffled deterministically by seed.
std::vector<Sample> generate_dataset(const std::vector<TaskSpec>& task_list,
                                     std::size_t copies_per_task, std::uint64_t seed);

// [SOS, payload..., EOS].
std::vector<int> frame(const std::vector<int>& payload);
// Drops SOS, EOS and PAD.
std::vector<int> strip_framing(const std::vector<int>& tokens);

struct Batch {
  TokenMatrix src;      // [S x B]
  TokenMatrix tgt_in;   // [T x B], framed target without its last position
  TokenMatrix tgt_out;  // [T x B], framed target shifted left by one
  std::shared_ptr<const KeyPaddingMask> src_key_padding;
  std::shared_ptr<const KeyPaddingMask> tgt_key_padding;
  // Same object as src_key_padding.
  std::shared_ptr<const KeyPaddingMask> memory_key_padding;
  CausalMask tgt_mask{1};

  std::size_t size() const { return src.batch; }
};

// Frames every sample and pads with PAD to the batch maximum (or pad_to, which
// applies to both the source and the framed target).
Batch frame_and_pad(const std::vector<Sample>& samples, std::optional<std::size_t> pad_to = {});

// Groups samples with identical (src, tgt) lengths, preserving first-seen order.
std::vector<std::vector<Sample>> bucket_by_length(const std::vector<Sample>& samples);

// "src_tokens -> tgt_tokens" with space-separated framed ids, one line per sample.
void write_dataset(const std::vector<Sample>& samples, std::ostream& out);

}  // namespace tinyseq
