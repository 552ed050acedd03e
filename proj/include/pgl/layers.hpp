#pragma once

// Layer forward passes on top of the tape: linear, conv2d (im2col), batch
// norm, pooling, the CIFAR-style residual basic block and softmax
// cross-entropy. Conv, batch norm and cross-entropy are fused tape nodes
// with hand-written backward passes.

#include <cmath>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "pgl/ops.hpp"
#include "pgl/tensor.hpp"

namespace pgl {

/// Batch-norm behaviour: batch statistics (train) or running statistics (eval).
enum class Phase { train, eval };

struct LinearSpec {
  std::size_t in = 1;
  std::size_t out = 1;
  bool bias = true;
};

struct Conv2dSpec {
  std::size_t in_ch = 1;
  std::size_t out_ch = 1;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;
  bool bias = false;
};

struct BatchNorm2dSpec {
  std::size_t ch = 1;
  double eps = 1e-5;
  double momentum = 0.1;
};

struct ReLUSpec {};
struct GlobalAvgPoolSpec {};
struct FlattenSpec {};

/// conv3x3(stride) -> bn -> relu -> conv3x3 -> bn, plus a skip path that is a
/// 1x1 stride-matched conv + bn whenever channels or stride change.
struct ResidualBasicSpec {
  std::size_t in_ch = 1;
  std::size_t out_ch = 1;
  std::size_t stride = 1;

  bool has_projection() const { return in_ch != out_ch || stride != 1; }
};

using LayerSpec = std::variant<LinearSpec, Conv2dSpec, BatchNorm2dSpec, ReLUSpec, GlobalAvgPoolSpec,
                               FlattenSpec, ResidualBasicSpec>;

inline void validate(const LayerSpec& spec) {
  auto positive = [](std::size_t v, const char* what) {
    if (v < 1) throw ConfigError(std::string("layer field ") + what + " must be >= 1");
  };
  std::visit(
      [&](const auto& s) {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, LinearSpec>) {
          positive(s.in, "in");
          positive(s.out, "out");
        } else if constexpr (std::is_same_v<S, Conv2dSpec>) {
          positive(s.in_ch, "in_ch");
          positive(s.out_ch, "out_ch");
          positive(s.kernel, "kernel");
          positive(s.stride, "stride");
        } else if constexpr (std::is_same_v<S, BatchNorm2dSpec>) {
          positive(s.ch, "ch");
          if (!(s.eps > 0)) throw ConfigError("batchnorm eps must be positive");
        } else if constexpr (std::is_same_v<S, ResidualBasicSpec>) {
          positive(s.in_ch, "in_ch");
          positive(s.out_ch, "out_ch");
          positive(s.stride, "stride");
        }
      },
      spec);
}

/// Short kind tag used when naming layers ("linear", "conv", ...).
inline std::string_view kind_name(const LayerSpec& spec) {
  static constexpr std::string_view names[] = {"linear", "conv", "bn", "relu", "gap", "flatten", "res"};
  return names[spec.index()];
}

inline std::size_t conv_out_size(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
  if (in + 2 * pad < kernel)
    throw ShapeError("conv2d: kernel " + std::to_string(kernel) + " larger than padded input " +
                     std::to_string(in + 2 * pad));
  return (in + 2 * pad - kernel) / stride + 1;
}

template <class T>
struct BatchNormState {
  std::vector<T> running_mean;
  std::vector<T> running_var;

  bool populated() const { return !running_mean.empty() && running_mean.size() == running_var.size(); }
};

template <class T>
struct Param {
  std::string name;
  BasicTensor<T> value;
};

/// A layer spec together with its parameters and batch-norm state.
template <class T>
struct Layer {
  LayerSpec spec;
  std::string name;
  std::vector<Param<T>> params;
  std::vector<std::string> bn_names;
  std::vector<BatchNormState<T>> bn;

  BasicTensor<T>& param(std::string_view local) {
    for (auto& p : params)
      if (p.name == local) return p.value;
    throw ContractError("layer " + name + " has no parameter " + std::string(local));
  }
  const BasicTensor<T>* find_param(std::string_view local) const {
    for (auto& p : params)
      if (p.name == local) return &p.value;
    return nullptr;
  }
  BatchNormState<T>& bn_state(std::string_view local) {
    for (std::size_t i = 0; i < bn_names.size(); ++i)
      if (bn_names[i] == local) return bn[i];
    throw ContractError("layer " + name + " has no batchnorm " + std::string(local));
  }
};

// ---------------------------------------------------------------------------
// Functional forms

template <class T>
BasicTensor<T> linear_forward(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>* b = nullptr) {
  auto y = matmul(x, w);
  if (!b) return y;
  return add_broadcast(y, *b, 1);
}

namespace detail {

struct ConvGeometry {
  std::size_t n, c, h, w, o, k, stride, pad, oh, ow;
  std::size_t col_rows() const { return c * k * k; }
  std::size_t col_cols() const { return oh * ow; }
};

template <class T>
void im2col(const T* img, const ConvGeometry& g, T* col) {
  for (std::size_t ch = 0; ch < g.c; ++ch)
    for (std::size_t ky = 0; ky < g.k; ++ky)
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        T* row = col + ((ch * g.k + ky) * g.k + kx) * g.col_cols();
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(g.h) && ix < static_cast<long>(g.w);
            row[oy * g.ow + ox] = inside ? img[(ch * g.h + iy) * g.w + ix] : T(0);
          }
        }
      }
}

template <class T>
void col2im(const T* col, const ConvGeometry& g, T* img) {
  for (std::size_t ch = 0; ch < g.c; ++ch)
    for (std::size_t ky = 0; ky < g.k; ++ky)
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const T* row = col + ((ch * g.k + ky) * g.k + kx) * g.col_cols();
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
            img[(ch * g.h + iy) * g.w + ix] += row[oy * g.ow + ox];
          }
        }
      }
}

}  // namespace detail

/// Cross-correlation over NCHW input with an [O, C, k, k] kernel.
template <class T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>* b,
                              std::size_t stride, std::size_t pad) {
  if (x.rank() != 4 || w.rank() != 4 || w.dim(1) != x.dim(1) || w.dim(2) != w.dim(3))
    throw ShapeError("conv2d: input " + to_string(x.shape()) + " incompatible with kernel " +
                     to_string(w.shape()));
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  if (b && (b->rank() != 1 || b->dim(0) != w.dim(0)))
    throw ShapeError("conv2d: bias shape " + to_string(b->shape()));
  detail::ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), stride, pad, 0, 0};
  g.oh = conv_out_size(g.h, g.k, stride, pad);
  g.ow = conv_out_size(g.w, g.k, stride, pad);

  const std::size_t in_img = g.c * g.h * g.w, out_img = g.o * g.oh * g.ow;
  std::vector<T> out(g.n * out_img, T(0));
  std::vector<T> col(g.col_rows() * g.col_cols());
  const auto& xv = x.values();
  const auto& wv = w.values();
  for (std::size_t n = 0; n < g.n; ++n) {
    detail::im2col(xv.data() + n * in_img, g, col.data());
    detail::gemm_nn(g.o, g.col_rows(), g.col_cols(), wv.data(), col.data(), out.data() + n * out_img);
    if (b) {
      const auto& bv = b->values();
      for (std::size_t o = 0; o < g.o; ++o) {
        T* p = out.data() + n * out_img + o * g.col_cols();
        for (std::size_t i = 0; i < g.col_cols(); ++i) p[i] += bv[o];
      }
    }
  }

  auto xb = x.buffer(), wb = w.buffer();
  BasicTensor<T> none;
  std::vector<const BasicTensor<T>*> inputs{&x, &w, b ? b : &none};
  return make_op<T>(
      "conv2d", {g.n, g.o, g.oh, g.ow}, std::move(out), inputs,
      [xb, wb, g, in_img, out_img](const std::vector<T>& grad, detail::ParentGrads<T>& pg) {
        std::vector<T> col(g.col_rows() * g.col_cols());
        std::vector<T> dcol(col.size());
        for (std::size_t n = 0; n < g.n; ++n) {
          const T* gn = grad.data() + n * out_img;
          if (pg.wants(1)) {
            detail::im2col(xb->data() + n * in_img, g, col.data());
            detail::gemm_nt(g.o, g.col_cols(), g.col_rows(), gn, col.data(), pg.slot(1).data());
          }
          if (pg.wants(0)) {
            std::fill(dcol.begin(), dcol.end(), T(0));
            detail::gemm_tn(g.o, g.col_rows(), g.col_cols(), wb->data(), gn, dcol.data());
            detail::col2im(dcol.data(), g, pg.slot(0).data() + n * in_img);
          }
          if (pg.size() > 2 && pg.wants(2)) {
            auto& gb = pg.slot(2);
            for (std::size_t o = 0; o < g.o; ++o) {
              T acc = 0;
              for (std::size_t i = 0; i < g.col_cols(); ++i) acc += gn[o * g.col_cols() + i];
              gb[o] += acc;
            }
          }
        }
      });
}

/// Per-channel normalization over [N, C, ...]. Train phase normalizes with
/// the biased batch variance and folds batch statistics into `state`.
template <class T>
BasicTensor<T> batchnorm_forward(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                                 BatchNormState<T>& state, Phase phase, double eps = 1e-5,
                                 double momentum = 0.1) {
  if (x.rank() < 2) throw ShapeError("batchnorm: input must have rank >= 2");
  const std::size_t n = x.dim(0), c = x.dim(1), inner = x.numel() / (n * c);
  if (gamma.numel() != c || beta.numel() != c)
    throw ShapeError("batchnorm: channel count " + std::to_string(c) + " does not match affine parameters");
  const std::size_t count = n * inner;
  const auto& xv = x.values();
  const auto& gv = gamma.values();
  const auto& bv = beta.values();

  std::vector<T> mean_c(c, T(0)), inv_std(c);
  if (phase == Phase::train) {
    std::vector<T> var_c(c, T(0));
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const T* p = xv.data() + (s * c + ch) * inner;
        for (std::size_t i = 0; i < inner; ++i) mean_c[ch] += p[i];
      }
    for (auto& m : mean_c) m /= static_cast<T>(count);
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const T* p = xv.data() + (s * c + ch) * inner;
        for (std::size_t i = 0; i < inner; ++i) {
          T d = p[i] - mean_c[ch];
          var_c[ch] += d * d;
        }
      }
    for (auto& v : var_c) v /= static_cast<T>(count);
    for (std::size_t ch = 0; ch < c; ++ch) inv_std[ch] = T(1) / std::sqrt(var_c[ch] + static_cast<T>(eps));
    if (!state.populated()) {
      state.running_mean.assign(c, T(0));
      state.running_var.assign(c, T(1));
    }
    const T m = static_cast<T>(momentum);
    for (std::size_t ch = 0; ch < c; ++ch) {
      state.running_mean[ch] = (T(1) - m) * state.running_mean[ch] + m * mean_c[ch];
      state.running_var[ch] = (T(1) - m) * state.running_var[ch] + m * var_c[ch];
    }
  } else {
    if (!state.populated() || state.running_mean.size() != c)
      throw ContractError("batchnorm: eval phase requires populated running statistics");
    mean_c = state.running_mean;
    for (std::size_t ch = 0; ch < c; ++ch)
      inv_std[ch] = T(1) / std::sqrt(state.running_var[ch] + static_cast<T>(eps));
  }

  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  std::vector<T> out(x.numel());
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < c; ++ch) {
      std::size_t off = (s * c + ch) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        T h = (xv[off + i] - mean_c[ch]) * inv_std[ch];
        (*xhat)[off + i] = h;
        out[off + i] = gv[ch] * h + bv[ch];
      }
    }

  auto gb = gamma.buffer();
  const bool batch_stats = phase == Phase::train;
  return make_op<T>(
      "batchnorm", x.shape(), std::move(out), {&x, &gamma, &beta},
      [xhat, gb, inv_std, n, c, inner, count, batch_stats](const std::vector<T>& g, detail::ParentGrads<T>& pg) {
        std::vector<T> sum_g(c, T(0)), sum_gh(c, T(0));
        for (std::size_t s = 0; s < n; ++s)
          for (std::size_t ch = 0; ch < c; ++ch) {
            std::size_t off = (s * c + ch) * inner;
            for (std::size_t i = 0; i < inner; ++i) {
              sum_g[ch] += g[off + i];
              sum_gh[ch] += g[off + i] * (*xhat)[off + i];
            }
          }
        if (pg.wants(1)) {
          auto& dg = pg.slot(1);
          for (std::size_t ch = 0; ch < c; ++ch) dg[ch] += sum_gh[ch];
        }
        if (pg.wants(2)) {
          auto& db = pg.slot(2);
          for (std::size_t ch = 0; ch < c; ++ch) db[ch] += sum_g[ch];
        }
        if (!pg.wants(0)) return;
        auto& dx = pg.slot(0);
        const auto& gam = *gb;
        const T inv_count = T(1) / static_cast<T>(count);
        for (std::size_t s = 0; s < n; ++s)
          for (std::size_t ch = 0; ch < c; ++ch) {
            std::size_t off = (s * c + ch) * inner;
            T k = gam[ch] * inv_std[ch];
            for (std::size_t i = 0; i < inner; ++i) {
              if (batch_stats)
                dx[off + i] += k * (g[off + i] - inv_count * sum_g[ch] - (*xhat)[off + i] * inv_count * sum_gh[ch]);
              else
                dx[off + i] += k * g[off + i];
            }
          }
      });
}

/// Mean over the spatial axes: [N, C, H, W] -> [N, C].
template <class T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& x) {
  if (x.rank() != 4) throw ShapeError("global_avg_pool expects NCHW input, got " + to_string(x.shape()));
  return mean(x, {2, 3});
}

/// Mean negative log-likelihood of `labels` under softmax(logits).
template <class T>
BasicTensor<T> softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw ShapeError("softmax_cross_entropy expects [N, C] logits");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (labels.size() != n)
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(n) + " rows");
  for (std::size_t i = 0; i < n; ++i)
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c)
      throw DataError("label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(c) + ")");

  const auto& z = logits.values();
  auto probs = std::make_shared<std::vector<T>>(n * c);
  auto lab = std::make_shared<std::vector<int>>(labels.begin(), labels.end());
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = z.data() + i * c;
    T mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    T denom = 0;
    for (std::size_t j = 0; j < c; ++j) denom += std::exp(row[j] - mx);
    T log_denom = std::log(denom);
    for (std::size_t j = 0; j < c; ++j) (*probs)[i * c + j] = std::exp(row[j] - mx - log_denom);
    total += log_denom - (row[(*lab)[i]] - mx);
  }
  total /= static_cast<T>(n);
  return make_op<T>("softmax_cross_entropy", {1}, {total}, {&logits},
                    [probs, lab, n, c](const std::vector<T>& g, detail::ParentGrads<T>& pg) {
                      auto& gl = pg.slot(0);
                      const T w = g[0] / static_cast<T>(n);
                      for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t j = 0; j < c; ++j) {
                          T p = (*probs)[i * c + j] - (static_cast<int>(j) == (*lab)[i] ? T(1) : T(0));
                          gl[i * c + j] += w * p;
                        }
                    });
}

// ---------------------------------------------------------------------------
// Layer objects

template <class T>
Layer<T> init_params(const LayerSpec& spec, std::mt19937_64& rng) {
  validate(spec);
  Layer<T> layer;
  layer.spec = spec;
  auto add_param = [&](std::string name, const Shape& shape, const Init& init) {
    layer.params.push_back({std::move(name), create<T>(shape, init, rng, true)});
  };
  auto add_bn = [&](const std::string& prefix, std::size_t ch) {
    add_param(prefix.empty() ? "gamma" : prefix + ".gamma", {ch}, Init::ones());
    add_param(prefix.empty() ? "beta" : prefix + ".beta", {ch}, Init::zeros());
    layer.bn_names.push_back(prefix);
    layer.bn.push_back({std::vector<T>(ch, T(0)), std::vector<T>(ch, T(1))});
  };
  std::visit(
      [&](const auto& s) {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, LinearSpec>) {
          add_param("weight", {s.in, s.out}, Init::kaiming_normal(s.in));
          if (s.bias) add_param("bias", {s.out}, Init::zeros());
        } else if constexpr (std::is_same_v<S, Conv2dSpec>) {
          add_param("weight", {s.out_ch, s.in_ch, s.kernel, s.kernel},
                    Init::kaiming_normal(s.in_ch * s.kernel * s.kernel));
          if (s.bias) add_param("bias", {s.out_ch}, Init::zeros());
        } else if constexpr (std::is_same_v<S, BatchNorm2dSpec>) {
          add_bn("", s.ch);
        } else if constexpr (std::is_same_v<S, ResidualBasicSpec>) {
          add_param("conv1.weight", {s.out_ch, s.in_ch, 3, 3}, Init::kaiming_normal(s.in_ch * 9));
          add_bn("bn1", s.out_ch);
          add_param("conv2.weight", {s.out_ch, s.out_ch, 3, 3}, Init::kaiming_normal(s.out_ch * 9));
          add_bn("bn2", s.out_ch);
          if (s.has_projection()) {
            add_param("proj.weight", {s.out_ch, s.in_ch, 1, 1}, Init::kaiming_normal(s.in_ch));
            add_bn("proj_bn", s.out_ch);
          }
        }
      },
      spec);
  return layer;
}

template <class T>
BasicTensor<T> residual_block_forward(const BasicTensor<T>& x, Layer<T>& layer, Phase phase) {
  const auto* spec = std::get_if<ResidualBasicSpec>(&layer.spec);
  if (!spec) throw ContractError("residual_block_forward on a non-residual layer");
  if (x.rank() != 4 || x.dim(1) != spec->in_ch)
    throw ShapeError("residual block expects " + std::to_string(spec->in_ch) + " input channels, got " +
                     to_string(x.shape()));
  auto bn = [&](const BasicTensor<T>& in, const std::string& prefix) {
    return batchnorm_forward(in, layer.param(prefix + ".gamma"), layer.param(prefix + ".beta"),
                             layer.bn_state(prefix), phase);
  };
  const BasicTensor<T>* no_bias = nullptr;
  auto h = conv2d_forward(x, layer.param("conv1.weight"), no_bias, spec->stride, 1);
  h = relu(bn(h, "bn1"));
  h = conv2d_forward(h, layer.param("conv2.weight"), no_bias, 1, 1);
  h = bn(h, "bn2");
  BasicTensor<T> skip = x;
  if (spec->has_projection()) skip = bn(conv2d_forward(x, layer.param("proj.weight"), no_bias, spec->stride, 0), "proj_bn");
  return relu(add(h, skip));
}

template <class T>
BasicTensor<T> forward(Layer<T>& layer, const BasicTensor<T>& x, Phase phase) {
  return std::visit(
      [&](const auto& s) -> BasicTensor<T> {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, LinearSpec>) {
          if (x.rank() != 2 || x.dim(1) != s.in)
            throw ShapeError("linear expects [N, " + std::to_string(s.in) + "], got " + to_string(x.shape()));
          return linear_forward(x, layer.param("weight"), layer.find_param("bias"));
        } else if constexpr (std::is_same_v<S, Conv2dSpec>) {
          return conv2d_forward(x, layer.param("weight"), layer.find_param("bias"), s.stride, s.pad);
        } else if constexpr (std::is_same_v<S, BatchNorm2dSpec>) {
          return batchnorm_forward(x, layer.param("gamma"), layer.param("beta"), layer.bn[0], phase, s.eps,
                                   s.momentum);
        } else if constexpr (std::is_same_v<S, ReLUSpec>) {
          return relu(x);
        } else if constexpr (std::is_same_v<S, GlobalAvgPoolSpec>) {
          return global_avg_pool(x);
        } else if constexpr (std::is_same_v<S, FlattenSpec>) {
          return flatten(x);
        } else {
          return residual_block_forward(x, layer, phase);
        }
      },
      layer.spec);
}

// ---------------------------------------------------------------------------
// Shape inference (no allocation)

/// Output shape of `spec` for an input of shape `in` (batch axis included).
inline Shape output_shape(const LayerSpec& spec, const Shape& in) {
  return std::visit(
      [&](const auto& s) -> Shape {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, LinearSpec>) {
          return {in.at(0), s.out};
        } else if constexpr (std::is_same_v<S, Conv2dSpec>) {
          return {in.at(0), s.out_ch, conv_out_size(in.at(2), s.kernel, s.stride, s.pad),
                  conv_out_size(in.at(3), s.kernel, s.stride, s.pad)};
        } else if constexpr (std::is_same_v<S, GlobalAvgPoolSpec>) {
          return {in.at(0), in.at(1)};
        } else if constexpr (std::is_same_v<S, FlattenSpec>) {
          return {in.at(0), numel_of(in) / in.at(0)};
        } else if constexpr (std::is_same_v<S, ResidualBasicSpec>) {
          return {in.at(0), s.out_ch, conv_out_size(in.at(2), 3, s.stride, 1),
                  conv_out_size(in.at(3), 3, s.stride, 1)};
        } else {
          return in;
        }
      },
      spec);
}

/// Number of trainable scalars `init_params` allocates for `spec`.
inline std::size_t param_count(const LayerSpec& spec) {
  return std::visit(
      [](const auto& s) -> std::size_t {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, LinearSpec>) {
          return s.in * s.out + (s.bias ? s.out : 0);
        } else if constexpr (std::is_same_v<S, Conv2dSpec>) {
          return s.out_ch * s.in_ch * s.kernel * s.kernel + (s.bias ? s.out_ch : 0);
        } else if constexpr (std::is_same_v<S, BatchNorm2dSpec>) {
          return 2 * s.ch;
        } else if constexpr (std::is_same_v<S, ResidualBasicSpec>) {
          std::size_t n = s.out_ch * s.in_ch * 9 + 2 * s.out_ch + s.out_ch * s.out_ch * 9 + 2 * s.out_ch;
          if (s.has_projection()) n += s.out_ch * s.in_ch + 2 * s.out_ch;
          return n;
        } else {
          return 0;
        }
      },
      spec);
}

}  // namespace pgl
