#include "tinyseq/nn.hpp"

#include <cmath>

namespace tinyseq {

Tensor ParameterRegistry::create(const std::string& name, Shape shape, ParamKind kind) {
  auto t = Tensor::zeros(std::move(shape), true);
  add(name, t, kind);
  return t;
}

void ParameterRegistry::add(const std::string& name, Tensor tensor, ParamKind kind) {
  if (index_.count(name)) throw ContractError("duplicate parameter name '" + name + "'");
  if (!tensor.is_leaf() || !tensor.requires_grad()) {
    throw ContractError("parameter '" + name + "' must be a leaf requiring gradients");
  }
  index_.emplace(name, entries_.size());
  entries_.push_back({name, std::move(tensor), kind});
}

const NamedParameter* ParameterRegistry::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &entries_[it->second];
}

void ParameterRegistry::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

std::size_t count_parameters(const ParameterRegistry& registry) {
  std::size_t n = 0;
  for (const auto& e : registry.entries()) n += e.tensor.size();
  return n;
}

void init_xavier_uniform(ParameterRegistry& registry, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& e : registry.entries()) {
    auto values = e.tensor.mutable_data();
    switch (e.kind) {
      case ParamKind::weight:
      case ParamKind::embedding: {
        const auto& shape = e.tensor.shape();
        const double fan_out = static_cast<double>(shape.at(0));
        const double fan_in = static_cast<double>(shape.size() > 1 ? shape[1] : 1);
        const double bound = std::sqrt(6.0 / (fan_in + fan_out));
        std::uniform_real_distribution<double> u(-bound, bound);
        for (auto& v : values) v = u(rng);
        break;
      }
      case ParamKind::norm_gain:
        std::fill(values.begin(), values.end(), 1.0);
        break;
      case ParamKind::bias:
      case ParamKind::norm_offset:
        std::fill(values.begin(), values.end(), 0.0);
        break;
    }
  }
}

LinearLayer LinearLayer::create(ParameterRegistry& registry, const std::string& prefix,
                                std::size_t in, std::size_t out) {
  LinearLayer layer;
  layer.weight = registry.create(prefix + ".weight", {out, in}, ParamKind::weight);
  layer.bias = registry.create(prefix + ".bias", {out}, ParamKind::bias);
  return layer;
}

LayerNorm LayerNorm::create(ParameterRegistry& registry, const std::string& prefix,
                            std::size_t d, double eps) {
  if (d == 0) throw ContractError("layer norm dimension must be positive");
  LayerNorm ln;
  ln.gain = registry.create(prefix + ".weight", {d}, ParamKind::norm_gain);
  ln.offset = registry.create(prefix + ".bias", {d}, ParamKind::norm_offset);
  ln.eps = eps;
  std::fill(ln.gain.mutable_data().begin(), ln.gain.mutable_data().end(), 1.0);
  return ln;
}

Tensor LayerNorm::forward(const Tensor& x) const { return layer_norm(x, gain, offset, eps); }

Tensor Dropout::forward(const Tensor& x, const ForwardContext& ctx) const {
  if (!ctx.training() || p == 0.0) return x;
  if (ctx.rng == nullptr) throw ContractError("training-mode dropout needs a generator");
  return dropout(x, p, *ctx.rng);
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& offset, double eps) {
  const std::size_t d = x.shape().back();
  if (d == 0) throw ContractError("layer_norm: empty feature dimension");
  if (gain.size() != d || offset.size() != d) {
    throw DimensionError("layer_norm: input " + shape_str(x.shape()) + " vs parameters " +
                         shape_str(gain.shape()));
  }
  const std::size_t rows = x.size() / d;
  auto normalized = std::make_shared<std::vector<double>>(x.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(x.size());
  auto X = x.data();
  auto G = gain.data();
  auto B = offset.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double mean = 0.0;
    for (std::size_t i = 0; i < d; ++i) mean += X[r * d + i];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double c = X[r * d + i] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t i = 0; i < d; ++i) {
      const double xh = (X[r * d + i] - mean) * is;
      (*normalized)[r * d + i] = xh;
      out[r * d + i] = xh * G[i] + B[i];
    }
  }
  return detail::make_result(
      "layer_norm", x.shape(), std::move(out), {x, gain, offset},
      [x, gain, offset, normalized, inv_std, rows, d](std::span<const double> g) {
        const auto& XH = *normalized;
        auto G = gain.data();
        if (gain.requires_grad()) {
          auto gg = gain.node()->grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t i = 0; i < d; ++i) gg[i] += g[r * d + i] * XH[r * d + i];
        }
        if (offset.requires_grad()) {
          auto gb = offset.node()->grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t i = 0; i < d; ++i) gb[i] += g[r * d + i];
        }
        if (x.requires_grad()) {
          auto gx = x.node()->grad_buffer();
          const double n = static_cast<double>(d);
          for (std::size_t r = 0; r < rows; ++r) {
            double mean_dxh = 0.0, mean_dxh_xh = 0.0;
            for (std::size_t i = 0; i < d; ++i) {
              const double dxh = g[r * d + i] * G[i];
              mean_dxh += dxh;
              mean_dxh_xh += dxh * XH[r * d + i];
            }
            mean_dxh /= n;
            mean_dxh_xh /= n;
            for (std::size_t i = 0; i < d; ++i) {
              const double dxh = g[r * d + i] * G[i];
              gx[r * d + i] += (*inv_std)[r] * (dxh - mean_dxh - XH[r * d + i] * mean_dxh_xh);
            }
          }
        }
      });
}

}  // namespace tinyseq
