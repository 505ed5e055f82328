#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "tinyseq/tensor.hpp"

namespace tinyseq {

enum class Mode { training, evaluation };

// Per-forward state: dropout mode and the generator that drives it.
struct ForwardContext {
  Mode mode = Mode::evaluation;
  std::mt19937_64* rng = nullptr;

  bool training() const { return mode == Mode::training; }
};

enum class ParamKind { weight, bias, norm_gain, norm_offset, embedding };

struct NamedParameter {
  std::string name;
  Tensor tensor;
  ParamKind kind;
};

// Ordered, uniquely named set of learnable tensors.
class ParameterRegistry {
 public:
  // Creates a zero-filled leaf that requires gradients and registers it.
  Tensor create(const std::string& name, Shape shape, ParamKind kind);
  void add(const std::string& name, Tensor tensor, ParamKind kind);

  const std::vector<NamedParameter>& entries() const { return entries_; }
  std::vector<NamedParameter>& entries() { return entries_; }
  const NamedParameter* find(const std::string& name) const;
  std::size_t size() const { return entries_.size(); }

  void zero_grad();

 private:
  std::vector<NamedParameter> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

std::size_t count_parameters(const ParameterRegistry& registry);

// Weights (and embedding tables) ~ U(-a, a) with a = sqrt(6 / (fan_in + fan_out));
// biases and norm offsets 0, norm gains 1. Deterministic per seed.
void init_xavier_uniform(ParameterRegistry& registry, std::uint64_t seed);

struct LinearLayer {
  Tensor weight;  // [out x in]
  Tensor bias;    // [out]

  static LinearLayer create(ParameterRegistry& registry, const std::string& prefix,
                            std::size_t in, std::size_t out);
  Tensor forward(const Tensor& x) const { return linear(x, weight, bias); }
};

struct LayerNorm {
  Tensor gain;    // registered as "<prefix>.weight"
  Tensor offset;  // registered as "<prefix>.bias"
  double eps = 1e-5;

  static LayerNorm create(ParameterRegistry& registry, const std::string& prefix, std::size_t d,
                          double eps);
  Tensor forward(const Tensor& x) const;
};

struct Dropout {
  double p = 0.0;

  Tensor forward(const Tensor& x, const ForwardContext& ctx) const;
};

// (x - mean) / sqrt(var + eps) * gain + offset over the last dimension, with
// the biased variance.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& offset, double eps);

}  // namespace tinyseq
