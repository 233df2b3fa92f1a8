#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "kog/tensor.hpp"

namespace kog {

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

template <typename T>
void register_param(ParamList<T>& params, std::string name, Tensor<T> t) {
  for (const auto& p : params) {
    if (p.name == name)
      throw ContractError("parameter '" + name + "' registered twice");
    if (p.tensor.same_object(t))
      throw ContractError("tensor for '" + name + "' already registered as '" +
                          p.name + "'");
  }
  t.set_requires_grad(true);
  params.push_back({std::move(name), std::move(t)});
}

// ---------------------------------------------------------------- layers

template <typename T>
struct Linear {
  Tensor<T> weight;  // [in, out]
  Tensor<T> bias;    // [out]

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, ParamList<T>& params,
         const std::string& prefix) {
    weight = glorot_init<T>({in, out}, in, out, rng);
    bias = Tensor<T>({out});
    register_param(params, prefix + ".weight", weight);
    register_param(params, prefix + ".bias", bias);
  }

  // x [..., in] -> [..., out]; trailing axis transformed.
  Tensor<T> forward(Tensor<T> x) const {
    if (x.rank() == 2) return add_rowvec(matmul(x, weight), bias);
    return add_rowvec(bmm(x, weight), bias);
  }
};

template <typename T>
struct LayerNormParams {
  Tensor<T> gain;  // initialized to ones
  Tensor<T> bias;

  LayerNormParams() = default;
  LayerNormParams(std::size_t d, ParamList<T>& params, const std::string& prefix) {
    gain = Tensor<T>({d}, T(1));
    bias = Tensor<T>({d});
    register_param(params, prefix + ".gain", gain);
    register_param(params, prefix + ".bias", bias);
  }

  Tensor<T> forward(Tensor<T> x) const { return layer_norm(x, gain, bias); }
};

// Two-linear feed-forward sublayer with GELU; hidden width 2*d keeps the
// whole-model parameter totals aligned with the reference configurations.
template <typename T>
struct MlpBlock {
  Linear<T> fc1, fc2;
  double dropout_rate = 0.0;

  MlpBlock() = default;
  MlpBlock(std::size_t d, std::size_t hidden, double rate, Rng& rng,
           ParamList<T>& params, const std::string& prefix)
      : fc1(d, hidden, rng, params, prefix + ".fc1"),
        fc2(hidden, d, rng, params, prefix + ".fc2"),
        dropout_rate(rate) {}

  Tensor<T> forward(Tensor<T> x, bool train, Rng* rng) const {
    auto h = gelu(fc1.forward(x));
    h = dropout(h, dropout_rate, train, rng);
    return fc2.forward(h);
  }
};

// ---------------------------------------------------------------- optimizer

// Adam with bias correction. beta/epsilon defaults follow the common setting;
// state is keyed by parameter order, which is fixed by the registry.
template <typename T>
class Adam {
 public:
  explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamList<T>& params, double lr) {
    if (slots_.empty()) {
      slots_.resize(params.size());
      for (std::size_t i = 0; i < params.size(); ++i) {
        slots_[i].m.assign(params[i].tensor.size(), T(0));
        slots_[i].v.assign(params[i].tensor.size(), T(0));
      }
    }
    if (slots_.size() != params.size())
      throw ContractError("optimizer state does not match parameter list");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i].tensor;
      if (!p.has_grad())
        throw ContractError("missing gradient for parameter '" + params[i].name +
                            "'");
      auto& g = p.grad();
      auto& m = slots_[i].m;
      auto& v = slots_[i].v;
      T* w = p.data();
      for (std::size_t j = 0; j < g.size(); ++j) {
        m[j] = T(beta1_) * m[j] + T(1.0 - beta1_) * g[j];
        v[j] = T(beta2_) * v[j] + T(1.0 - beta2_) * g[j] * g[j];
        const double mhat = static_cast<double>(m[j]) / bc1;
        const double vhat = static_cast<double>(v[j]) / bc2;
        w[j] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

  void zero_grad(ParamList<T>& params) {
    for (auto& p : params) p.tensor.zero_grad();
  }

  std::uint64_t step_count() const { return t_; }
  double beta1() const { return beta1_; }
  double beta2() const { return beta2_; }
  double eps() const { return eps_; }

 private:
  struct Slot {
    std::vector<T> m, v;
  };
  double beta1_, beta2_, eps_;
  std::uint64_t t_ = 0;
  std::vector<Slot> slots_;
};

// ---------------------------------------------------------------- schedule

// Multiplicative decay: lr = base * factor^floor(counter / interval), where
// the counter is a step or epoch index depending on `kind`.
struct LrSchedule {
  enum class Kind { Step, Epoch };
  Kind kind = Kind::Step;
  double base = 1e-3;
  double factor = 1.0;
  std::uint64_t interval = 1;

  void validate() const {
    if (factor <= 0.0 || factor > 1.0)
      throw ConfigError("lr schedule factor must be in (0, 1]");
    if (interval < 1) throw ConfigError("lr schedule interval must be >= 1");
  }

  double at(std::uint64_t counter) const {
    return base * std::pow(factor, static_cast<double>(counter / interval));
  }
};

}  // namespace kog
