#pragma once

#include <string>
#include <vector>

#include "drl/a3c.hpp"
#include "drl/dqn.hpp"
#include "drl/gradcheck.hpp"

namespace drl {

struct GradcheckResult {
  std::string name;
  double max_rel_error = 0;
};

namespace detail {

inline BasicTensor<double> random_input(const Shape& s, Rng& rng) {
  BasicTensor<double> t(s);
  for (auto& v : t.storage()) v = normal(rng, 0, 1);
  return t;
}

inline Tensor random_obs(const Shape& s, Rng& rng) {
  Tensor t(s);
  for (auto& v : t.storage()) v = static_cast<float>(normal(rng, 0, 1));
  return t;
}

// Small conv net at 64 bits with every parameter (biases included) random,
// so no pre-activation sits exactly on a ReLU kink.
inline Network tiny_network(ArchVariant v, ParamStore<double>& store, Rng& rng) {
  ArchConfig cfg = desk_arch({2, 5, 5}, 3);
  cfg.convs = {{2, 2, 1, true}, {2, 2, 1, false}};
  cfg.hidden = 5;
  Network net = build_network(v, cfg, store, rng);
  for (auto& [_, t] : store.mutable_entries())
    for (auto& x : t.storage()) x = normal(rng, 0, 0.5);
  return net;
}

}  // namespace detail

/// Finite-difference checks of every layer kind (parameters and input) and
/// of the two full training objectives, at 64-bit precision.
inline std::vector<GradcheckResult> run_gradcheck_suite(int seeds = 3) {
  std::vector<GradcheckResult> out;
  struct LayerCase {
    const char* name;
    std::vector<LayerSpec> layers;
    Shape input;
  };
  const std::vector<LayerCase> layer_cases{
      {"conv2d", {Conv2d{2, 3, 3, 2, 1}}, {2, 5, 4}},
      {"conv2d_stride2", {Conv2d{1, 2, 2, 2, 2}}, {1, 5, 5}},
      {"maxpool2d", {Conv2d{1, 2, 2, 2, 1}, MaxPool2d{2, 2}}, {1, 5, 5}},
      {"fully_connected", {FullyConnected{6, 4}}, {6}},
      {"relu", {FullyConnected{5, 6}, Relu{}, FullyConnected{6, 3}}, {5}},
      {"softmax", {FullyConnected{4, 5}, Softmax{}}, {4}},
      {"conv_stack",
       {Conv2d{2, 3, 3, 3, 1}, Relu{}, MaxPool2d{2, 2}, FullyConnected{12, 4}, Relu{}, FullyConnected{4, 3},
        Softmax{}},
       {2, 6, 6}},
  };
  for (const auto& c : layer_cases) {
    double worst = 0;
    for (int seed = 0; seed < seeds; ++seed) {
      Rng rng(seed);
      auto net = SequentialNet::with_random_params(c.layers, rng);
      const auto x = detail::random_input(c.input, rng);
      Shape o = c.input;
      for (const auto& l : c.layers) o = output_shape(l, o);
      const auto head = linear_loss_head(shape_size(o), rng);
      worst = std::max({worst, gradient_check(net, x, head), input_gradient_check(net, x, head)});
    }
    out.push_back({std::string("layer ") + c.name, worst});
  }

  for (auto v : {ArchVariant::dqn, ArchVariant::dueling_dqn}) {
    double worst = 0;
    for (int seed = 0; seed < seeds; ++seed) {
      Rng rng(100 + seed);
      ParamStore<double> store;
      const Network net = detail::tiny_network(v, store, rng);
      std::vector<Transition> data;
      for (int j = 0; j < 4; ++j) {
        data.push_back({detail::random_obs({2, 5, 5}, rng), uniform_index(rng, 3), normal(rng, 0, 1),
                        detail::random_obs({2, 5, 5}, rng), j == 0});
      }
      std::vector<const Transition*> batch;
      for (const auto& t : data) batch.push_back(&t);
      ParamMap<double> params = store.entries();
      const auto y = dqn_targets(batch, params, net, 0.99);
      const auto analytic = dqn_loss_and_grads(net, params, batch, y).second;
      const auto numeric =
          numeric_gradients(params, [&](const ParamMap<double>& p) { return dqn_loss(net, p, batch, y); });
      worst = std::max(worst, max_relative_error(analytic, numeric));
    }
    out.push_back({std::string("objective ") + to_string(v) + " (squared TD error, fixed targets)", worst});
  }

  struct AcCase {
    ArchVariant v;
    int head;
  };
  for (auto c : {AcCase{ArchVariant::vanilla_a3c, 0}, AcCase{ArchVariant::double_a3c, 1},
                 AcCase{ArchVariant::double_a3c, 2}, AcCase{ArchVariant::ls_double_a3c, 1},
                 AcCase{ArchVariant::ls_double_a3c, 2}}) {
    double worst = 0;
    for (int seed = 0; seed < seeds; ++seed) {
      Rng rng(200 + seed);
      ParamStore<double> store;
      const Network net = detail::tiny_network(c.v, store, rng);
      RolloutSegment seg;
      std::vector<double> returns;
      for (int i = 0; i < 3; ++i) {
        seg.states.push_back(detail::random_obs({2, 5, 5}, rng));
        seg.actions.push_back(uniform_index(rng, 3));
        seg.rewards.push_back(normal(rng, 0, 1));
        returns.push_back(normal(rng, 0, 1));
      }
      seg.terminal = true;
      ParamMap<double> params = store.entries();
      GradMap<double> acc;
      accumulate_gradients(net, params, seg, returns, c.head, 0.0, acc);
      const auto adv = segment_advantages(net, params, seg, returns, c.head);
      const auto numeric = numeric_gradients(params, [&](const ParamMap<double>& p) {
        return a3c_objective(net, p, seg, returns, adv, c.head, 0.0);
      });
      worst = std::max(worst, max_relative_error(acc, numeric));
    }
    std::string name = std::string("objective ") + to_string(c.v) + " (policy + value, frozen advantage)";
    if (c.head) name += " head " + std::to_string(c.head);
    out.push_back({name, worst});
  }
  return out;
}

}  // namespace drl
