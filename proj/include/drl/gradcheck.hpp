#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "drl/layers.hpp"
#include "drl/params.hpp"

namespace drl {

/// Central finite differences of `loss` w.r.t. every entry of `params`.
/// `params` is perturbed in place and restored.
template <typename F>
GradMap<double> numeric_gradients(ParamMap<double>& params, F&& loss, double h = 1e-5) {
  GradMap<double> out;
  for (auto& [name, tensor] : params) {
    BasicTensor<double> g(tensor.shape());
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      const double orig = tensor[i];
      tensor[i] = orig + h;
      const double up = loss(params);
      tensor[i] = orig - h;
      const double down = loss(params);
      tensor[i] = orig;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NonFiniteError("non-finite loss while differencing '" + name + "'");
      }
      g[i] = (up - down) / (2 * h);
    }
    out.emplace(name, std::move(g));
  }
  return out;
}

/// max |a - n| / max(|a|, |n|, 1e-8) over all entries of `numeric`;
/// analytic entries missing from the map count as zero.
inline double max_relative_error(const GradMap<double>& analytic, const GradMap<double>& numeric) {
  double worst = 0;
  for (const auto& [name, num] : numeric) {
    auto it = analytic.find(name);
    for (std::size_t i = 0; i < num.size(); ++i) {
      const double a = it == analytic.end() ? 0.0 : it->second[i];
      const double n = num[i];
      if (!std::isfinite(a)) throw NonFiniteError("non-finite analytic gradient in '" + name + "'");
      const double denom = std::max({std::abs(a), std::abs(n), 1e-8});
      worst = std::max(worst, std::abs(a - n) / denom);
    }
  }
  return worst;
}

/// A plain layer list with owned parameters, used for gradient checking.
struct SequentialNet {
  std::vector<LayerSpec> layers;
  ParamMap<double> params;  // "<index>.w" / "<index>.b"

  static std::string weight_name(std::size_t i) { return std::to_string(i) + ".w"; }
  static std::string bias_name(std::size_t i) { return std::to_string(i) + ".b"; }

  static SequentialNet with_random_params(std::vector<LayerSpec> layers, Rng& rng) {
    SequentialNet net{std::move(layers), {}};
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
      const auto shapes = param_shapes(net.layers[i]);
      if (shapes.empty()) continue;
      BasicTensor<double> w(shapes[0]), b(shapes[1]);
      for (auto& v : w.storage()) v = d(rng);
      for (auto& v : b.storage()) v = 0.1 * d(rng);
      net.params.emplace(weight_name(i), std::move(w));
      net.params.emplace(bias_name(i), std::move(b));
    }
    return net;
  }

  LayerParams<double> layer_params(std::size_t i, const ParamMap<double>& p) const {
    if (!has_params(layers[i])) return {};
    return {&p.at(weight_name(i)), &p.at(bias_name(i))};
  }
};

/// Scalar loss on the network output; fills dL/d(output) when asked.
using LossHead = std::function<double(const BasicTensor<double>& out, BasicTensor<double>* grad)>;

/// L = sum_i c_i y_i with fixed coefficients drawn once from `rng`.
inline LossHead linear_loss_head(std::size_t n, Rng& rng) {
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  std::vector<double> c(n);
  for (auto& v : c) v = d(rng);
  return [c](const BasicTensor<double>& out, BasicTensor<double>* grad) {
    if (out.size() != c.size()) throw ShapeError("loss head size mismatch");
    double l = 0;
    for (std::size_t i = 0; i < c.size(); ++i) l += c[i] * out[i];
    if (grad) {
      *grad = BasicTensor<double>(out.shape());
      for (std::size_t i = 0; i < c.size(); ++i) (*grad)[i] = c[i];
    }
    return l;
  };
}

inline double sequential_loss(const SequentialNet& net, const ParamMap<double>& params,
                              const BasicTensor<double>& input, const LossHead& head) {
  BasicTensor<double> x = input;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    x = layer_forward(net.layers[i], net.layer_params(i, params), x).first;
  }
  return head(x, nullptr);
}

/// Analytic parameter gradients, plus the input gradient when requested.
inline GradMap<double> sequential_gradients(const SequentialNet& net, const BasicTensor<double>& input,
                                            const LossHead& head,
                                            BasicTensor<double>* input_grad = nullptr) {
  std::vector<LayerCache<double>> caches;
  BasicTensor<double> x = input;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    auto [y, c] = layer_forward(net.layers[i], net.layer_params(i, net.params), x);
    caches.push_back(std::move(c));
    x = std::move(y);
  }
  BasicTensor<double> g;
  head(x, &g);
  GradMap<double> grads;
  for (std::size_t i = net.layers.size(); i-- > 0;) {
    auto [dx, pg] = layer_backward(net.layers[i], net.layer_params(i, net.params), caches[i], g);
    if (has_params(net.layers[i])) {
      grads.emplace(SequentialNet::weight_name(i), std::move(pg.weight));
      grads.emplace(SequentialNet::bias_name(i), std::move(pg.bias));
    }
    g = std::move(dx);
  }
  if (input_grad) *input_grad = std::move(g);
  return grads;
}

/// Max relative error between backward-pass and finite-difference parameter
/// gradients. Zero for a parameter-free network.
inline double gradient_check(SequentialNet net, const BasicTensor<double>& input, const LossHead& head,
                             double h = 1e-5) {
  const auto analytic = sequential_gradients(net, input, head);
  const auto numeric = numeric_gradients(
      net.params, [&](const ParamMap<double>& p) { return sequential_loss(net, p, input, head); }, h);
  return max_relative_error(analytic, numeric);
}

/// Same comparison for the gradient w.r.t. the network input.
inline double input_gradient_check(const SequentialNet& net, BasicTensor<double> input,
                                   const LossHead& head, double h = 1e-5) {
  BasicTensor<double> analytic_in;
  sequential_gradients(net, input, head, &analytic_in);
  ParamMap<double> holder{{"input", input}};
  const auto numeric = numeric_gradients(
      holder, [&](const ParamMap<double>& p) { return sequential_loss(net, net.params, p.at("input"), head); }, h);
  return max_relative_error({{"input", analytic_in}}, numeric);
}

}  // namespace drl
