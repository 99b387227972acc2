#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "drl/layers.hpp"
#include "drl/params.hpp"
#include "drl/random.hpp"

namespace drl {

enum class ArchVariant { dqn, vanilla_a3c, double_a3c, ls_double_a3c, dueling_dqn };

inline const char* to_string(ArchVariant v) {
  switch (v) {
    case ArchVariant::dqn: return "dqn";
    case ArchVariant::vanilla_a3c: return "a3c";
    case ArchVariant::double_a3c: return "double-a3c";
    case ArchVariant::ls_double_a3c: return "ls-double-a3c";
    case ArchVariant::dueling_dqn: return "dueling-dqn";
  }
  return "?";
}

inline ArchVariant parse_variant(const std::string& s) {
  for (auto v : {ArchVariant::dqn, ArchVariant::vanilla_a3c, ArchVariant::double_a3c,
                 ArchVariant::ls_double_a3c, ArchVariant::dueling_dqn}) {
    if (s == to_string(v)) return v;
  }
  throw ConfigError("unknown network variant '" + s + "'");
}

inline bool is_actor_critic(ArchVariant v) {
  return v == ArchVariant::vanilla_a3c || v == ArchVariant::double_a3c ||
         v == ArchVariant::ls_double_a3c;
}

inline bool is_double(ArchVariant v) {
  return v == ArchVariant::double_a3c || v == ArchVariant::ls_double_a3c;
}

enum class ArchScale { paper, desk };

struct ConvStage {
  std::size_t channels = 8;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  bool pool_after = false;  // 2x2 max-pool after the activation
};

struct ArchConfig {
  Shape input_shape;
  std::size_t action_count = 2;
  ArchScale scale = ArchScale::desk;
  // Desk overrides; ignored (replaced) at paper scale.
  std::vector<ConvStage> convs;
  std::size_t hidden = 32;
};

inline const Shape& paper_input_shape() {
  static const Shape s{12, 84, 84};
  return s;
}

/// 4 conv + 3 max-pool + FC-512 over 4 stacked RGB frames.
inline ArchConfig paper_arch(std::size_t action_count) {
  ArchConfig cfg;
  cfg.input_shape = paper_input_shape();
  cfg.action_count = action_count;
  cfg.scale = ArchScale::paper;
  cfg.convs = {{32, 5, 1, true}, {32, 5, 1, true}, {64, 4, 1, true}, {64, 3, 1, false}};
  cfg.hidden = 512;
  return cfg;
}

/// Small default for desk environments. Image inputs get one 3x3x8 conv
/// (followed by a pool when 4 frames are stacked); flat inputs go straight
/// to the hidden layer.
inline ArchConfig desk_arch(const Shape& input_shape, std::size_t action_count) {
  ArchConfig cfg;
  cfg.input_shape = input_shape;
  cfg.action_count = action_count;
  cfg.scale = ArchScale::desk;
  if (input_shape.size() == 3) cfg.convs = {{8, 3, 1, input_shape[0] == 4}};
  cfg.hidden = 32;
  return cfg;
}

struct Stage {
  LayerSpec spec;
  std::string weight_name;  // empty for parameter-free layers
  std::string bias_name;
};

using Stack = std::vector<Stage>;

template <typename T>
struct NetOutput {
  std::optional<std::vector<T>> policy;
  std::optional<std::vector<T>> logits;
  std::vector<T> values;  // V (vanilla) or V1, V2 (double variants)
  std::optional<std::vector<T>> q_values;
};

/// Immutable topology. Parameters live in a ParamStore / snapshot under the
/// names recorded in each Stage; prefixes name the sharing group
/// (trunk., branch1., branch2., pi., v., v1., v2., q., dueling.).
struct Network {
  ArchVariant variant = ArchVariant::vanilla_a3c;
  ArchConfig config;
  Stack trunk;
  std::vector<Stack> branches;  // two for ls_double_a3c, else empty
  std::size_t feature_dim = 0;  // width of h (per branch)
  std::optional<Stage> pi, v, v1, v2, q, dueling_value, dueling_adv;

  std::vector<const Stage*> all_param_stages() const {
    std::vector<const Stage*> out;
    auto add = [&](const Stage& s) {
      if (has_params(s.spec)) out.push_back(&s);
    };
    for (const auto& s : trunk) add(s);
    for (const auto& b : branches)
      for (const auto& s : b) add(s);
    for (const auto* h : {&pi, &v, &v1, &v2, &q, &dueling_value, &dueling_adv})
      if (*h) add(**h);
    return out;
  }
};

namespace detail {

inline Stage make_stage(LayerSpec spec, const std::string& name = {}) {
  Stage s{std::move(spec), {}, {}};
  if (has_params(s.spec)) {
    s.weight_name = name + ".w";
    s.bias_name = name + ".b";
  }
  return s;
}

// Appends conv stages [first, last) and returns the resulting shape.
inline Shape append_convs(Stack& stack, const std::vector<ConvStage>& convs,
                          std::size_t first, std::size_t last, Shape shape,
                          const std::string& prefix) {
  for (std::size_t i = first; i < last; ++i) {
    const auto& c = convs[i];
    if (shape.size() != 3) {
      throw ShapeError("conv stack needs [C, H, W] input, got " + shape_str(shape));
    }
    LayerSpec conv = Conv2d{shape[0], c.channels, c.kernel, c.kernel, c.stride};
    validate(conv);
    shape = output_shape(conv, shape);
    stack.push_back(make_stage(conv, prefix + ".conv" + std::to_string(i)));
    stack.push_back(make_stage(Relu{}));
    if (c.pool_after) {
      LayerSpec pool = MaxPool2d{2, 2};
      shape = output_shape(pool, shape);
      stack.push_back(make_stage(pool));
    }
  }
  return shape;
}

inline void append_hidden(Stack& stack, const Shape& in, std::size_t hidden,
                          const std::string& prefix) {
  stack.push_back(make_stage(FullyConnected{shape_size(in), hidden}, prefix + ".fc"));
  stack.push_back(make_stage(Relu{}));
}

template <typename T>
void register_stage(const Stage& s, ParamStore<T>& store, Rng& rng) {
  if (!has_params(s.spec)) return;
  const auto shapes = param_shapes(s.spec);
  const auto [fan_in, fan_out] = fan_in_out(s.spec);
  if (store.contains(s.weight_name)) {
    check_shape(shapes[0], store.get(s.weight_name).shape(), s.weight_name);
    check_shape(shapes[1], store.get(s.bias_name).shape(), s.bias_name);
    return;
  }
  BasicTensor<T> w(shapes[0]);
  init_uniform(w, std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)), rng);
  store.add(s.weight_name, std::move(w));
  store.add(s.bias_name, BasicTensor<T>(shapes[1]));
}

}  // namespace detail

/// Builds the topology for `variant` and registers (or shape-checks) every
/// parameter tensor in `store`. Initialization draws from `rng` in the
/// order trunk, branches, pi, v/v1, v2, q, dueling heads.
template <typename T>
Network build_network(ArchVariant variant, ArchConfig cfg, ParamStore<T>& store, Rng& rng) {
  if (cfg.scale == ArchScale::paper) {
    if (cfg.input_shape != paper_input_shape()) {
      throw ConfigError("paper scale requires input " + shape_str(paper_input_shape()) +
                        ", got " + shape_str(cfg.input_shape));
    }
    cfg = paper_arch(cfg.action_count);
  }
  if (cfg.action_count < 2) throw ConfigError("action count must be at least 2");
  if (cfg.hidden == 0) throw ConfigError("hidden dim must be positive");
  if (cfg.input_shape.empty()) throw ConfigError("input shape must be non-empty");

  Network net;
  net.variant = variant;
  net.config = cfg;
  const std::size_t n = cfg.action_count;

  if (variant == ArchVariant::ls_double_a3c) {
    if (cfg.convs.empty()) {
      throw ConfigError("ls-double-a3c needs at least one conv layer to split");
    }
    const std::size_t split = cfg.convs.size() - 1;
    Shape trunk_out = detail::append_convs(net.trunk, cfg.convs, 0, split, cfg.input_shape, "trunk");
    for (int b = 1; b <= 2; ++b) {
      Stack stack;
      const std::string prefix = "branch" + std::to_string(b);
      Shape s = detail::append_convs(stack, cfg.convs, split, cfg.convs.size(), trunk_out, prefix);
      detail::append_hidden(stack, s, cfg.hidden, prefix);
      net.branches.push_back(std::move(stack));
    }
    net.feature_dim = cfg.hidden;
    net.pi = detail::make_stage(FullyConnected{2 * cfg.hidden, n}, "pi");
    net.v1 = detail::make_stage(FullyConnected{cfg.hidden, 1}, "v1");
    net.v2 = detail::make_stage(FullyConnected{cfg.hidden, 1}, "v2");
  } else {
    Shape s = cfg.input_shape;
    if (!cfg.convs.empty()) {
      s = detail::append_convs(net.trunk, cfg.convs, 0, cfg.convs.size(), s, "trunk");
    }
    detail::append_hidden(net.trunk, s, cfg.hidden, "trunk");
    net.feature_dim = cfg.hidden;
    switch (variant) {
      case ArchVariant::vanilla_a3c:
        net.pi = detail::make_stage(FullyConnected{cfg.hidden, n}, "pi");
        net.v = detail::make_stage(FullyConnected{cfg.hidden, 1}, "v");
        break;
      case ArchVariant::double_a3c:
        net.pi = detail::make_stage(FullyConnected{cfg.hidden, n}, "pi");
        net.v1 = detail::make_stage(FullyConnected{cfg.hidden, 1}, "v1");
        net.v2 = detail::make_stage(FullyConnected{cfg.hidden, 1}, "v2");
        break;
      case ArchVariant::dqn:
        net.q = detail::make_stage(FullyConnected{cfg.hidden, n}, "q");
        break;
      case ArchVariant::dueling_dqn:
        net.dueling_value = detail::make_stage(FullyConnected{cfg.hidden, 1}, "dueling.value");
        net.dueling_adv = detail::make_stage(FullyConnected{cfg.hidden, n}, "dueling.adv");
        break;
      default:
        break;
    }
  }
  for (const Stage* s : net.all_param_stages()) detail::register_stage(*s, store, rng);
  return net;
}

/// q[a] = v + advantages[a], with no mean or max subtraction.
template <typename T>
std::vector<T> dueling_combine(T v, std::span<const T> advantages) {
  std::vector<T> q(advantages.begin(), advantages.end());
  for (auto& x : q) x += v;
  return q;
}

/// Lowest index wins ties.
template <typename T>
std::size_t argmax(std::span<const T> values) {
  if (values.empty()) throw UsageError("argmax of empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

template <typename T>
std::size_t argmax(const std::vector<T>& values) {
  return argmax(std::span<const T>(values));
}

/// Draws index a with probability policy[a].
template <typename T>
std::size_t action_sample(std::span<const T> policy, Rng& rng) {
  if (policy.empty()) throw UsageError("action_sample: empty policy");
  double sum = 0;
  for (T p : policy) {
    if (!(p >= T{0})) throw UsageError("action_sample: negative or NaN probability");
    sum += static_cast<double>(p);
  }
  if (std::abs(sum - 1.0) > 1e-4) {
    throw UsageError("action_sample: probabilities sum to " + std::to_string(sum));
  }
  const double u = uniform01(rng) * sum;
  double acc = 0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < policy.size(); ++i) {
    if (policy[i] > T{0}) last_positive = i;
    acc += static_cast<double>(policy[i]);
    if (u < acc) return i;
  }
  return last_positive;
}

template <typename T>
std::size_t action_sample(const std::vector<T>& policy, Rng& rng) {
  return action_sample(std::span<const T>(policy), rng);
}

/// Everything backward() needs from one forward pass.
template <typename T>
struct Trace {
  std::vector<LayerCache<T>> trunk;
  std::array<std::vector<LayerCache<T>>, 2> branch;
  std::array<BasicTensor<T>, 2> features;  // h, or h1/h2 for ls-double
  BasicTensor<T> pi_input;
  NetOutput<T> output;
};

/// Upstream gradients for each head output. Absent heads contribute nothing
/// and their parameters receive no gradient entry.
template <typename T>
struct HeadGrads {
  std::optional<std::vector<T>> logits;
  std::array<std::optional<T>, 2> values;  // d/dV (vanilla uses slot 0)
  std::optional<std::vector<T>> q_values;
};

namespace detail {

template <typename T>
LayerParams<T> stage_params(const Stage& s, const ParamMap<T>& params) {
  if (!has_params(s.spec)) return {};
  auto w = params.find(s.weight_name);
  auto b = params.find(s.bias_name);
  if (w == params.end() || b == params.end()) {
    throw UsageError("parameters for '" + s.weight_name + "' missing from snapshot");
  }
  return {&w->second, &b->second};
}

template <typename T>
BasicTensor<T> stack_forward(const Stack& stack, const ParamMap<T>& params,
                             BasicTensor<T> x, std::vector<LayerCache<T>>* caches) {
  for (const auto& s : stack) {
    auto [y, cache] = layer_forward(s.spec, stage_params(s, params), x);
    if (caches) caches->push_back(std::move(cache));
    x = std::move(y);
  }
  return x;
}

template <typename T>
BasicTensor<T> stack_backward(const Stack& stack, const ParamMap<T>& params,
                              const std::vector<LayerCache<T>>& caches,
                              BasicTensor<T> g, GradMap<T>& grads) {
  for (std::size_t i = stack.size(); i-- > 0;) {
    const auto& s = stack[i];
    auto [dx, pg] = layer_backward(s.spec, stage_params(s, params), caches[i], g);
    if (has_params(s.spec)) {
      add_into(grads, s.weight_name, pg.weight);
      add_into(grads, s.bias_name, pg.bias);
    }
    g = std::move(dx);
  }
  return g;
}

template <typename T>
std::vector<T> head_forward(const Stage& s, const ParamMap<T>& params, const BasicTensor<T>& x) {
  auto [y, cache] = layer_forward(s.spec, stage_params(s, params), x);
  return y.storage();
}

// Backward through a single FC head; returns the gradient w.r.t. its input.
template <typename T>
BasicTensor<T> head_backward(const Stage& s, const ParamMap<T>& params,
                             const BasicTensor<T>& input, std::vector<T> upstream,
                             GradMap<T>& grads) {
  LayerCache<T> cache;
  cache.kind = s.spec.index();
  cache.input = input;
  auto [dx, pg] = layer_backward(s.spec, stage_params(s, params), cache,
                                 BasicTensor<T>::vector(std::move(upstream)));
  add_into(grads, s.weight_name, pg.weight);
  add_into(grads, s.bias_name, pg.bias);
  return dx;
}

template <typename T>
std::vector<T> softmax_of(const std::vector<T>& logits) {
  auto [p, cache] = layer_forward(LayerSpec{Softmax{}}, LayerParams<T>{},
                                  BasicTensor<T>::vector(logits));
  return p.storage();
}

}  // namespace detail

template <typename T>
Trace<T> forward_trace(const Network& net, const ParamMap<T>& params, const BasicTensor<T>& obs) {
  check_shape(net.config.input_shape, obs.shape(), "network input");
  Trace<T> tr;
  BasicTensor<T> h = detail::stack_forward(net.trunk, params, obs, &tr.trunk);
  auto& out = tr.output;
  if (net.variant == ArchVariant::ls_double_a3c) {
    for (int b = 0; b < 2; ++b) {
      tr.features[b] = detail::stack_forward(net.branches[b], params, h, &tr.branch[b]);
    }
    std::vector<T> cat = tr.features[0].storage();
    cat.insert(cat.end(), tr.features[1].storage().begin(), tr.features[1].storage().end());
    tr.pi_input = BasicTensor<T>::vector(std::move(cat));
    out.logits = detail::head_forward(*net.pi, params, tr.pi_input);
    out.values = {detail::head_forward(*net.v1, params, tr.features[0])[0],
                  detail::head_forward(*net.v2, params, tr.features[1])[0]};
  } else {
    tr.features[0] = std::move(h);
    const auto& f = tr.features[0];
    if (net.pi) {
      tr.pi_input = f;
      out.logits = detail::head_forward(*net.pi, params, f);
    }
    if (net.v) out.values = {detail::head_forward(*net.v, params, f)[0]};
    if (net.v1) {
      out.values = {detail::head_forward(*net.v1, params, f)[0],
                    detail::head_forward(*net.v2, params, f)[0]};
    }
    if (net.q) out.q_values = detail::head_forward(*net.q, params, f);
    if (net.dueling_value) {
      const T value = detail::head_forward(*net.dueling_value, params, f)[0];
      const auto adv = detail::head_forward(*net.dueling_adv, params, f);
      out.q_values = dueling_combine<T>(value, adv);
    }
  }
  if (out.logits) out.policy = detail::softmax_of(*out.logits);
  return tr;
}

template <typename T>
NetOutput<T> forward(const Network& net, const ParamMap<T>& params, const BasicTensor<T>& obs) {
  return forward_trace(net, params, obs).output;
}

/// Parameter gradients of a scalar loss given its gradients w.r.t. the head
/// outputs. The policy head takes gradients w.r.t. logits (pre-softmax).
template <typename T>
GradMap<T> backward(const Network& net, const ParamMap<T>& params, const Trace<T>& tr,
                    const HeadGrads<T>& hg) {
  GradMap<T> grads;
  std::array<std::optional<BasicTensor<T>>, 2> dfeat;
  auto add_feat = [&](int b, BasicTensor<T> g) {
    if (dfeat[b]) {
      *dfeat[b] += g;
    } else {
      dfeat[b] = std::move(g);
    }
  };

  if (hg.logits && net.pi) {
    auto dpi = detail::head_backward(*net.pi, params, tr.pi_input, *hg.logits, grads);
    if (net.variant == ArchVariant::ls_double_a3c) {
      const std::size_t d = net.feature_dim;
      std::vector<T> a(dpi.storage().begin(), dpi.storage().begin() + d);
      std::vector<T> b(dpi.storage().begin() + d, dpi.storage().end());
      add_feat(0, BasicTensor<T>::vector(std::move(a)));
      add_feat(1, BasicTensor<T>::vector(std::move(b)));
    } else {
      add_feat(0, std::move(dpi));
    }
  }
  if (net.v && hg.values[0]) {
    add_feat(0, detail::head_backward(*net.v, params, tr.features[0], {*hg.values[0]}, grads));
  }
  if (net.v1) {
    const bool ls = net.variant == ArchVariant::ls_double_a3c;
    if (hg.values[0]) {
      add_feat(0, detail::head_backward(*net.v1, params, tr.features[0], {*hg.values[0]}, grads));
    }
    if (hg.values[1]) {
      add_feat(ls ? 1 : 0,
               detail::head_backward(*net.v2, params, tr.features[ls ? 1 : 0], {*hg.values[1]}, grads));
    }
  }
  if (hg.q_values) {
    if (net.q) add_feat(0, detail::head_backward(*net.q, params, tr.features[0], *hg.q_values, grads));
    if (net.dueling_value) {
      T dv{0};
      for (T g : *hg.q_values) dv += g;
      add_feat(0, detail::head_backward(*net.dueling_value, params, tr.features[0], {dv}, grads));
      add_feat(0, detail::head_backward(*net.dueling_adv, params, tr.features[0], *hg.q_values, grads));
    }
  }

  std::optional<BasicTensor<T>> dtrunk;
  if (net.variant == ArchVariant::ls_double_a3c) {
    for (int b = 0; b < 2; ++b) {
      if (!dfeat[b]) continue;
      auto g = detail::stack_backward(net.branches[b], params, tr.branch[b], *dfeat[b], grads);
      if (dtrunk) {
        *dtrunk += g;
      } else {
        dtrunk = std::move(g);
      }
    }
  } else {
    dtrunk = std::move(dfeat[0]);
  }
  if (dtrunk) detail::stack_backward(net.trunk, params, tr.trunk, *dtrunk, grads);
  return grads;
}

/// Zero tensors for every parameter of the network.
template <typename T>
GradMap<T> zero_grads(const Network& net) {
  GradMap<T> g;
  for (const Stage* s : net.all_param_stages()) {
    const auto shapes = param_shapes(s->spec);
    g.emplace(s->weight_name, BasicTensor<T>(shapes[0]));
    g.emplace(s->bias_name, BasicTensor<T>(shapes[1]));
  }
  return g;
}

/// Names of the parameters owned by one value head (1 or 2).
inline std::vector<std::string> value_head_params(const Network& net, int head) {
  const auto& s = head == 1 ? net.v1 : net.v2;
  if (!s) return {};
  return {s->weight_name, s->bias_name};
}

}  // namespace drl
