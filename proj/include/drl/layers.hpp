#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "drl/tensor.hpp"

namespace drl {

struct Conv2d {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
};

// Non-overlapping window: stride equals the pool size.
struct MaxPool2d {
  std::size_t pool_h = 2;
  std::size_t pool_w = 2;
};

// Accepts any input whose element count is in_dim (implicit flatten).
struct FullyConnected {
  std::size_t in_dim = 1;
  std::size_t out_dim = 1;
};

struct Relu {};

// Over the flattened input.
struct Softmax {};

using LayerSpec = std::variant<Conv2d, MaxPool2d, FullyConnected, Relu, Softmax>;

inline const char* layer_kind(const LayerSpec& spec) {
  constexpr const char* names[] = {"conv2d", "maxpool2d", "fully_connected",
                                   "relu", "softmax"};
  return names[spec.index()];
}

inline bool has_params(const LayerSpec& spec) {
  return std::holds_alternative<Conv2d>(spec) ||
         std::holds_alternative<FullyConnected>(spec);
}

inline void validate(const LayerSpec& spec) {
  auto positive = [](std::size_t v, const char* what) {
    if (v == 0) throw ConfigError(std::string(what) + " must be positive");
  };
  if (auto* c = std::get_if<Conv2d>(&spec)) {
    positive(c->in_channels, "conv2d in_channels");
    positive(c->out_channels, "conv2d out_channels");
    positive(c->kernel_h, "conv2d kernel_h");
    positive(c->kernel_w, "conv2d kernel_w");
    positive(c->stride, "conv2d stride");
  } else if (auto* p = std::get_if<MaxPool2d>(&spec)) {
    positive(p->pool_h, "maxpool2d pool_h");
    positive(p->pool_w, "maxpool2d pool_w");
  } else if (auto* f = std::get_if<FullyConnected>(&spec)) {
    positive(f->in_dim, "fully_connected in_dim");
    positive(f->out_dim, "fully_connected out_dim");
  }
}

/// Weight then bias shapes; empty for parameter-free layers.
inline std::vector<Shape> param_shapes(const LayerSpec& spec) {
  if (auto* c = std::get_if<Conv2d>(&spec)) {
    return {{c->out_channels, c->in_channels, c->kernel_h, c->kernel_w},
            {c->out_channels}};
  }
  if (auto* f = std::get_if<FullyConnected>(&spec)) {
    return {{f->out_dim, f->in_dim}, {f->out_dim}};
  }
  return {};
}

/// Fan-in and fan-out used by the uniform weight initializer.
inline std::pair<std::size_t, std::size_t> fan_in_out(const LayerSpec& spec) {
  if (auto* c = std::get_if<Conv2d>(&spec)) {
    return {c->in_channels * c->kernel_h * c->kernel_w,
            c->out_channels * c->kernel_h * c->kernel_w};
  }
  if (auto* f = std::get_if<FullyConnected>(&spec)) {
    return {f->in_dim, f->out_dim};
  }
  return {0, 0};
}

/// Valid (unpadded) window arithmetic; trailing rows/columns that do not
/// fill a whole window are dropped.
inline Shape output_shape(const LayerSpec& spec, const Shape& in) {
  auto need3 = [&](const char* kind) {
    if (in.size() != 3) {
      throw ShapeError(std::string(kind) + ": expected [C, H, W] input, got " +
                       shape_str(in));
    }
  };
  if (auto* c = std::get_if<Conv2d>(&spec)) {
    need3("conv2d");
    if (in[0] != c->in_channels || in[1] < c->kernel_h || in[2] < c->kernel_w) {
      throw ShapeError("conv2d: expected [" + std::to_string(c->in_channels) +
                       ", >=" + std::to_string(c->kernel_h) + ", >=" +
                       std::to_string(c->kernel_w) + "], got " + shape_str(in));
    }
    return {c->out_channels, (in[1] - c->kernel_h) / c->stride + 1,
            (in[2] - c->kernel_w) / c->stride + 1};
  }
  if (auto* p = std::get_if<MaxPool2d>(&spec)) {
    need3("maxpool2d");
    if (in[1] < p->pool_h || in[2] < p->pool_w) {
      throw ShapeError("maxpool2d: input " + shape_str(in) +
                       " smaller than window");
    }
    return {in[0], in[1] / p->pool_h, in[2] / p->pool_w};
  }
  if (auto* f = std::get_if<FullyConnected>(&spec)) {
    if (shape_size(in) != f->in_dim) {
      throw ShapeError("fully_connected: expected " + std::to_string(f->in_dim) +
                       " inputs, got shape " + shape_str(in));
    }
    return {f->out_dim};
  }
  return in;
}

template <typename T>
struct LayerParams {
  const BasicTensor<T>* weight = nullptr;
  const BasicTensor<T>* bias = nullptr;
};

template <typename T>
struct LayerGrads {
  BasicTensor<T> weight;
  BasicTensor<T> bias;
};

template <typename T>
struct LayerCache {
  std::size_t kind = std::variant_npos;
  BasicTensor<T> input;
  BasicTensor<T> output;
  std::vector<std::size_t> argmax;
};

namespace detail {

template <typename T>
void require_params(const LayerSpec& spec, const LayerParams<T>& p) {
  auto shapes = param_shapes(spec);
  if (!p.weight || !p.bias) {
    throw UsageError(std::string(layer_kind(spec)) + ": missing parameters");
  }
  check_shape(shapes[0], p.weight->shape(), std::string(layer_kind(spec)) + " weight");
  check_shape(shapes[1], p.bias->shape(), std::string(layer_kind(spec)) + " bias");
}

template <typename T>
BasicTensor<T> conv_forward(const Conv2d& c, const LayerParams<T>& p,
                            const BasicTensor<T>& x, const Shape& out_shape) {
  BasicTensor<T> y(out_shape);
  const std::size_t ho = out_shape[1], wo = out_shape[2];
  const std::size_t h = x.shape()[1], w = x.shape()[2];
  const auto& wt = p.weight->storage();
  const auto& in = x.storage();
  auto& out = y.storage();
  for (std::size_t o = 0; o < c.out_channels; ++o) {
    T* plane = out.data() + o * ho * wo;
    std::fill(plane, plane + ho * wo, (*p.bias)[o]);
    for (std::size_t ci = 0; ci < c.in_channels; ++ci) {
      const T* src = in.data() + ci * h * w;
      for (std::size_t ki = 0; ki < c.kernel_h; ++ki) {
        for (std::size_t kj = 0; kj < c.kernel_w; ++kj) {
          const T k = wt[((o * c.in_channels + ci) * c.kernel_h + ki) * c.kernel_w + kj];
          for (std::size_t yy = 0; yy < ho; ++yy) {
            const T* row = src + (yy * c.stride + ki) * w + kj;
            T* dst = plane + yy * wo;
            for (std::size_t xx = 0; xx < wo; ++xx) dst[xx] += k * row[xx * c.stride];
          }
        }
      }
    }
  }
  return y;
}

template <typename T>
BasicTensor<T> conv_backward(const Conv2d& c, const LayerParams<T>& p,
                             const BasicTensor<T>& x, const BasicTensor<T>& g,
                             LayerGrads<T>& grads) {
  const std::size_t ho = g.shape()[1], wo = g.shape()[2];
  const std::size_t h = x.shape()[1], w = x.shape()[2];
  BasicTensor<T> dx(x.shape());
  grads.weight = BasicTensor<T>(p.weight->shape());
  grads.bias = BasicTensor<T>(p.bias->shape());
  const auto& wt = p.weight->storage();
  const auto& in = x.storage();
  const auto& up = g.storage();
  auto& dw = grads.weight.storage();
  auto& din = dx.storage();
  for (std::size_t o = 0; o < c.out_channels; ++o) {
    const T* gp = up.data() + o * ho * wo;
    T bsum{0};
    for (std::size_t i = 0; i < ho * wo; ++i) bsum += gp[i];
    grads.bias[o] = bsum;
    for (std::size_t ci = 0; ci < c.in_channels; ++ci) {
      const T* src = in.data() + ci * h * w;
      T* dsrc = din.data() + ci * h * w;
      for (std::size_t ki = 0; ki < c.kernel_h; ++ki) {
        for (std::size_t kj = 0; kj < c.kernel_w; ++kj) {
          const std::size_t widx = ((o * c.in_channels + ci) * c.kernel_h + ki) * c.kernel_w + kj;
          const T k = wt[widx];
          T acc{0};
          for (std::size_t yy = 0; yy < ho; ++yy) {
            const std::size_t base = (yy * c.stride + ki) * w + kj;
            const T* grow = gp + yy * wo;
            for (std::size_t xx = 0; xx < wo; ++xx) {
              acc += grow[xx] * src[base + xx * c.stride];
              dsrc[base + xx * c.stride] += k * grow[xx];
            }
          }
          dw[widx] = acc;
        }
      }
    }
  }
  return dx;
}

}  // namespace detail

/// Forward pass of one layer. The returned cache holds what layer_backward
/// needs and nothing else.
template <typename T>
std::pair<BasicTensor<T>, LayerCache<T>> layer_forward(const LayerSpec& spec,
                                                       const LayerParams<T>& params,
                                                       const BasicTensor<T>& input) {
  const Shape out_shape = output_shape(spec, input.shape());
  LayerCache<T> cache;
  cache.kind = spec.index();
  BasicTensor<T> out;

  if (auto* c = std::get_if<Conv2d>(&spec)) {
    detail::require_params(spec, params);
    out = detail::conv_forward(*c, params, input, out_shape);
    cache.input = input;
  } else if (auto* p = std::get_if<MaxPool2d>(&spec)) {
    out = BasicTensor<T>(out_shape);
    cache.argmax.resize(out.size());
    const std::size_t h = input.shape()[1], w = input.shape()[2];
    const std::size_t ho = out_shape[1], wo = out_shape[2];
    for (std::size_t ch = 0; ch < out_shape[0]; ++ch) {
      for (std::size_t yy = 0; yy < ho; ++yy) {
        for (std::size_t xx = 0; xx < wo; ++xx) {
          std::size_t best = (ch * h + yy * p->pool_h) * w + xx * p->pool_w;
          for (std::size_t i = 0; i < p->pool_h; ++i) {
            for (std::size_t j = 0; j < p->pool_w; ++j) {
              const std::size_t idx = (ch * h + yy * p->pool_h + i) * w + xx * p->pool_w + j;
              if (input[idx] > input[best]) best = idx;
            }
          }
          const std::size_t o = (ch * ho + yy) * wo + xx;
          out[o] = input[best];
          cache.argmax[o] = best;
        }
      }
    }
    cache.input = BasicTensor<T>(input.shape());  // shape carrier for backward
  } else if (auto* f = std::get_if<FullyConnected>(&spec)) {
    detail::require_params(spec, params);
    out = BasicTensor<T>(out_shape);
    const auto& wt = params.weight->storage();
    for (std::size_t o = 0; o < f->out_dim; ++o) {
      T acc = (*params.bias)[o];
      const T* row = wt.data() + o * f->in_dim;
      for (std::size_t i = 0; i < f->in_dim; ++i) acc += row[i] * input[i];
      out[o] = acc;
    }
    cache.input = input;
  } else if (std::holds_alternative<Relu>(spec)) {
    out = input;
    for (auto& v : out.storage()) v = v > T{0} ? v : T{0};
    cache.input = input;
  } else {
    out = input;
    T mx = -std::numeric_limits<T>::infinity();
    for (T v : out.storage()) mx = std::max(mx, v);
    T sum{0};
    for (auto& v : out.storage()) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (auto& v : out.storage()) v /= sum;
    cache.output = out;
  }
  require_finite(out, std::string(layer_kind(spec)) + " forward output");
  return {std::move(out), std::move(cache)};
}

/// Backward pass: gradient w.r.t. the layer input plus parameter gradients
/// (left empty for parameter-free layers).
template <typename T>
std::pair<BasicTensor<T>, LayerGrads<T>> layer_backward(const LayerSpec& spec,
                                                        const LayerParams<T>& params,
                                                        const LayerCache<T>& cache,
                                                        const BasicTensor<T>& upstream) {
  if (cache.kind != spec.index()) {
    throw UsageError(std::string(layer_kind(spec)) +
                     " backward: missing or mismatched forward cache");
  }
  LayerGrads<T> grads;
  BasicTensor<T> dx;
  if (auto* c = std::get_if<Conv2d>(&spec)) {
    detail::require_params(spec, params);
    check_shape(output_shape(spec, cache.input.shape()), upstream.shape(),
                "conv2d backward upstream");
    dx = detail::conv_backward(*c, params, cache.input, upstream, grads);
  } else if (std::holds_alternative<MaxPool2d>(spec)) {
    check_shape(output_shape(spec, cache.input.shape()), upstream.shape(),
                "maxpool2d backward upstream");
    dx = BasicTensor<T>(cache.input.shape());
    for (std::size_t o = 0; o < upstream.size(); ++o) dx[cache.argmax[o]] += upstream[o];
  } else if (auto* f = std::get_if<FullyConnected>(&spec)) {
    detail::require_params(spec, params);
    check_shape(Shape{f->out_dim}, upstream.shape(), "fully_connected backward upstream");
    dx = BasicTensor<T>(cache.input.shape());
    grads.weight = BasicTensor<T>(params.weight->shape());
    grads.bias = upstream;
    const auto& wt = params.weight->storage();
    auto& dw = grads.weight.storage();
    for (std::size_t o = 0; o < f->out_dim; ++o) {
      const T g = upstream[o];
      if (g == T{0}) continue;
      const T* row = wt.data() + o * f->in_dim;
      T* drow = dw.data() + o * f->in_dim;
      for (std::size_t i = 0; i < f->in_dim; ++i) {
        drow[i] = g * cache.input[i];
        dx[i] += g * row[i];
      }
    }
  } else if (std::holds_alternative<Relu>(spec)) {
    check_shape(cache.input.shape(), upstream.shape(), "relu backward upstream");
    dx = upstream;
    for (std::size_t i = 0; i < dx.size(); ++i) {
      if (!(cache.input[i] > T{0})) dx[i] = T{0};
    }
  } else {
    check_shape(cache.output.shape(), upstream.shape(), "softmax backward upstream");
    const auto& y = cache.output;
    T dot{0};
    for (std::size_t i = 0; i < y.size(); ++i) dot += upstream[i] * y[i];
    dx = BasicTensor<T>(y.shape());
    for (std::size_t i = 0; i < y.size(); ++i) dx[i] = y[i] * (upstream[i] - dot);
  }
  return {std::move(dx), std::move(grads)};
}

}  // namespace drl
