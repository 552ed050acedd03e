#pragma once

// Finite-difference verification of every primitive and layer.
//
// Each check reduces an op's output to a scalar with fixed pseudo-random
// weights, differentiates it with the tape in both float and double, and
// compares against central differences evaluated in double with step h.
// Error per element is |analytic - numeric| / max(1, |analytic|, |numeric|).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "pgl/layers.hpp"

namespace pgl {

inline double gradient_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

/// sum_k w_k * out_k with w_k = cos(0.37 k + 0.1).
template <class T>
BasicTensor<T> weighted_sum(const BasicTensor<T>& out) {
  std::vector<T> w(out.numel());
  for (std::size_t k = 0; k < w.size(); ++k) w[k] = static_cast<T>(std::cos(0.37 * static_cast<double>(k) + 0.1));
  return sum(mul(out, BasicTensor<T>(out.shape(), std::move(w))));
}

template <class To, class From>
std::vector<BasicTensor<To>> convert_inputs(const std::vector<BasicTensor<From>>& in, bool track) {
  std::vector<BasicTensor<To>> out;
  for (const auto& t : in) {
    std::vector<To> v(t.values().begin(), t.values().end());
    out.emplace_back(t.shape(), std::move(v), track);
  }
  return out;
}

/// Largest error over all input elements. `fn` must be callable with a
/// std::vector<BasicTensor<T>> for T = float and T = double and return the
/// op output (any shape).
template <class F>
double max_gradient_error(F&& fn, const std::vector<BasicTensor<double>>& inputs, double h = 1e-3) {
  auto analytic = [&](auto tag) {
    using T = decltype(tag);
    auto tracked = convert_inputs<T>(inputs, true);
    auto grads = backward(weighted_sum(fn(tracked)));
    std::vector<std::vector<double>> out;
    for (auto& t : tracked) {
      const auto* g = grads.find(t);
      out.emplace_back(t.numel(), 0.0);
      if (g) std::copy(g->values().begin(), g->values().end(), out.back().begin());
    }
    return out;
  };
  const auto a64 = analytic(double{});
  const auto a32 = analytic(float{});

  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t k = 0; k < inputs[i].numel(); ++k) {
      auto eval = [&](double delta) {
        auto probe = convert_inputs<double>(inputs, false);
        probe[i].mutable_data()[k] += delta;
        return weighted_sum(fn(probe)).item();
      };
      const double numeric = (eval(h) - eval(-h)) / (2.0 * h);
      worst = std::max({worst, gradient_error(a64[i][k], numeric), gradient_error(a32[i][k], numeric)});
    }
  }
  return worst;
}

struct GradCase {
  std::string name;
  double threshold = 1e-4;
  /// Draws one random configuration and returns its max gradient error.
  std::function<double(std::mt19937_64&)> run_once;
};

struct GradCheckResult {
  std::string name;
  double max_error = 0.0;
  double threshold = 0.0;
  int shapes = 0;
  bool passed = false;
};

namespace detail {

inline std::size_t draw(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline BasicTensor<double> random_input(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) x = d(rng);
  return BasicTensor<double>(shape, std::move(v));
}

// Entries bounded away from zero, for ops with a kink at the origin.
inline BasicTensor<double> away_from_zero(const Shape& shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mag(0.05, 1.0);
  std::bernoulli_distribution sign(0.5);
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) x = sign(rng) ? mag(rng) : -mag(rng);
  return BasicTensor<double>(shape, std::move(v));
}

// Distinct entries spaced 0.1 apart in random order (no near-ties for max).
inline BasicTensor<double> spaced_values(const Shape& shape, std::mt19937_64& rng) {
  std::vector<double> v(numel_of(shape));
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.1 * static_cast<double>(i) - 0.05 * static_cast<double>(v.size());
  std::shuffle(v.begin(), v.end(), rng);
  return BasicTensor<double>(shape, std::move(v));
}

inline Shape random_shape(std::mt19937_64& rng, std::size_t max_rank = 3, std::size_t max_dim = 4) {
  Shape s(draw(rng, 1, max_rank));
  for (auto& d : s) d = draw(rng, 1, max_dim);
  return s;
}

// Builds a layer whose parameters are the given tensors, in init order.
template <class T>
Layer<T> layer_with(const LayerSpec& spec, const std::vector<BasicTensor<T>>& params, std::size_t first) {
  std::mt19937_64 rng(0);
  auto layer = init_params<T>(spec, rng);
  for (std::size_t i = 0; i < layer.params.size(); ++i) layer.params[i].value = params.at(first + i);
  return layer;
}

}  // namespace detail

/// The full primitive + layer suite.
inline std::vector<GradCase> default_grad_cases() {
  using detail::draw;
  using detail::random_input;
  using Inputs = std::vector<BasicTensor<double>>;
  std::vector<GradCase> cases;

  cases.push_back({"matmul", 1e-4, [](std::mt19937_64& rng) {
                     std::size_t m = draw(rng, 1, 5), k = draw(rng, 1, 5), n = draw(rng, 1, 5);
                     return max_gradient_error([](const auto& in) { return matmul(in[0], in[1]); },
                                               Inputs{random_input({m, k}, rng), random_input({k, n}, rng)});
                   }});

  auto binary = [](std::string name, auto op) {
    return GradCase{name, 1e-4, [op](std::mt19937_64& rng) {
                      Shape s = detail::random_shape(rng);
                      bool scalar_rhs = draw(rng, 0, 3) == 0;
                      Inputs in{random_input(s, rng), random_input(scalar_rhs ? Shape{1} : s, rng)};
                      return max_gradient_error([op](const auto& x) { return op(x[0], x[1]); }, in);
                    }};
  };
  cases.push_back(binary("add", [](const auto& a, const auto& b) { return add(a, b); }));
  cases.push_back(binary("sub", [](const auto& a, const auto& b) { return sub(a, b); }));
  cases.push_back(binary("mul", [](const auto& a, const auto& b) { return mul(a, b); }));

  cases.push_back({"relu", 1e-4, [](std::mt19937_64& rng) {
                     return max_gradient_error([](const auto& in) { return relu(in[0]); },
                                               Inputs{detail::away_from_zero(detail::random_shape(rng), rng)});
                   }});
  cases.push_back({"exp", 1e-4, [](std::mt19937_64& rng) {
                     return max_gradient_error([](const auto& in) { return pgl::exp(in[0]); },
                                               Inputs{random_input(detail::random_shape(rng), rng)});
                   }});
  cases.push_back({"log", 1e-4, [](std::mt19937_64& rng) {
                     return max_gradient_error([](const auto& in) { return pgl::log(in[0]); },
                                               Inputs{random_input(detail::random_shape(rng), rng, 0.5, 2.0)});
                   }});
  cases.push_back({"neg", 1e-4, [](std::mt19937_64& rng) {
                     return max_gradient_error([](const auto& in) { return neg(in[0]); },
                                               Inputs{random_input(detail::random_shape(rng), rng)});
                   }});

  auto reduction = [](std::string name, Reduce kind) {
    return GradCase{name, 1e-4, [kind](std::mt19937_64& rng) {
                      Shape s = detail::random_shape(rng);
                      std::vector<std::size_t> axes;
                      for (std::size_t d = 0; d < s.size(); ++d)
                        if (draw(rng, 0, 1)) axes.push_back(d);
                      auto x = kind == Reduce::max ? detail::spaced_values(s, rng) : random_input(s, rng);
                      return max_gradient_error([kind, axes](const auto& in) { return reduce(kind, in[0], axes); },
                                                Inputs{x});
                    }};
  };
  cases.push_back(reduction("sum", Reduce::sum));
  cases.push_back(reduction("mean", Reduce::mean));
  cases.push_back(reduction("max", Reduce::max));

  cases.push_back({"reshape", 1e-4, [](std::mt19937_64& rng) {
                     Shape s = detail::random_shape(rng);
                     Shape flat{numel_of(s)};
                     return max_gradient_error([flat](const auto& in) { return reshape(in[0], flat); },
                                               Inputs{random_input(s, rng)});
                   }});
  cases.push_back({"pad", 1e-4, [](std::mt19937_64& rng) {
                     Shape s = detail::random_shape(rng);
                     std::vector<std::pair<std::size_t, std::size_t>> amounts;
                     for (std::size_t d = 0; d < s.size(); ++d) amounts.push_back({draw(rng, 0, 2), draw(rng, 0, 2)});
                     return max_gradient_error([amounts](const auto& in) { return pad(in[0], amounts); },
                                               Inputs{random_input(s, rng)});
                   }});
  cases.push_back({"slice", 1e-4, [](std::mt19937_64& rng) {
                     Shape s = detail::random_shape(rng);
                     std::vector<Range> ranges;
                     for (auto d : s) {
                       std::size_t b = draw(rng, 0, d - 1);
                       ranges.push_back({b, draw(rng, b + 1, d)});
                     }
                     return max_gradient_error([ranges](const auto& in) { return slice(in[0], ranges); },
                                               Inputs{random_input(s, rng)});
                   }});
  cases.push_back({"add_broadcast", 1e-4, [](std::mt19937_64& rng) {
                     Shape s = detail::random_shape(rng);
                     std::size_t axis = draw(rng, 0, s.size() - 1);
                     return max_gradient_error([axis](const auto& in) { return add_broadcast(in[0], in[1], axis); },
                                               Inputs{random_input(s, rng), random_input({s[axis]}, rng)});
                   }});

  cases.push_back({"linear", 1e-4, [](std::mt19937_64& rng) {
                     std::size_t n = draw(rng, 1, 4), din = draw(rng, 1, 5), dout = draw(rng, 1, 5);
                     return max_gradient_error([](const auto& in) { return linear_forward(in[0], in[1], &in[2]); },
                                               Inputs{random_input({n, din}, rng), random_input({din, dout}, rng),
                                                      random_input({dout}, rng)});
                   }});
  cases.push_back({"conv2d", 1e-4, [](std::mt19937_64& rng) {
                     std::size_t n = draw(rng, 1, 2), c = draw(rng, 1, 3), o = draw(rng, 1, 3);
                     std::size_t k = draw(rng, 1, 3), stride = draw(rng, 1, 2), padding = draw(rng, 0, 1);
                     std::size_t h = draw(rng, k, 6), w = draw(rng, k, 6);
                     return max_gradient_error(
                         [stride, padding](const auto& in) { return conv2d_forward(in[0], in[1], &in[2], stride, padding); },
                         Inputs{random_input({n, c, h, w}, rng), random_input({o, c, k, k}, rng), random_input({o}, rng)});
                   }});
  cases.push_back({"batchnorm_train", 1e-3, [](std::mt19937_64& rng) {
                     std::size_t n = draw(rng, 2, 4), c = draw(rng, 1, 3), hw = draw(rng, 1, 3);
                     return max_gradient_error(
                         [](const auto& in) {
                           using T = typename std::decay_t<decltype(in[0])>::value_type;
                           BatchNormState<T> st;
                           return batchnorm_forward(in[0], in[1], in[2], st, Phase::train);
                         },
                         Inputs{random_input({n, c, hw, hw}, rng), random_input({c}, rng, 0.5, 1.5),
                                random_input({c}, rng)});
                   }});
  cases.push_back({"batchnorm_eval", 1e-3, [](std::mt19937_64& rng) {
                     std::size_t n = draw(rng, 1, 3), c = draw(rng, 1, 3);
                     std::vector<double> rm(c), rv(c);
                     for (std::size_t i = 0; i < c; ++i) {
                       rm[i] = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
                       rv[i] = std::uniform_real_distribution<double>(0.5, 2.0)(rng);
                     }
                     return max_gradient_error(
                         [rm, rv](const auto& in) {
                           using T = typename std::decay_t<decltype(in[0])>::value_type;
                           BatchNormState<T> st{{rm.begin(), rm.end()}, {rv.begin(), rv.end()}};
                           return batchnorm_forward(in[0], in[1], in[2], st, Phase::eval);
                         },
                         Inputs{random_input({n, c, 2, 2}, rng), random_input({c}, rng), random_input({c}, rng)});
                   }});
  cases.push_back({"softmax_cross_entropy", 1e-4, [](std::mt19937_64& rng) {
                     std::size_t n = draw(rng, 1, 5), c = draw(rng, 2, 6);
                     std::vector<int> labels(n);
                     for (auto& l : labels) l = static_cast<int>(draw(rng, 0, c - 1));
                     return max_gradient_error(
                         [labels](const auto& in) { return softmax_cross_entropy(in[0], std::span<const int>(labels)); },
                         Inputs{random_input({n, c}, rng, -3.0, 3.0)});
                   }});
  cases.push_back({"global_avg_pool", 1e-4, [](std::mt19937_64& rng) {
                     Shape s{draw(rng, 1, 3), draw(rng, 1, 3), draw(rng, 1, 4), draw(rng, 1, 4)};
                     return max_gradient_error([](const auto& in) { return global_avg_pool(in[0]); },
                                               Inputs{random_input(s, rng)});
                   }});
  cases.push_back({"residual_block", 1e-3, [](std::mt19937_64& rng) {
                     ResidualBasicSpec spec{draw(rng, 1, 3), draw(rng, 1, 3), draw(rng, 1, 2)};
                     std::size_t n = draw(rng, 2, 3), hw = draw(rng, 3, 4);
                     std::mt19937_64 init_rng(rng());
                     auto proto = init_params<double>(spec, init_rng);
                     Inputs in{random_input({n, spec.in_ch, hw, hw}, rng)};
                     for (auto& p : proto.params) in.push_back(p.value.clone());
                     return max_gradient_error(
                         [spec](const auto& x) {
                           auto layer = detail::layer_with(LayerSpec{spec}, x, 1);
                           return residual_block_forward(x[0], layer, Phase::train);
                         },
                         in, 1e-6);  // batch-normalized ReLU inputs cluster near zero
                   }});
  return cases;
}

/// Runs every case on `shapes_per_case` random configurations.
inline std::vector<GradCheckResult> run_gradcheck_suite(const std::vector<GradCase>& cases, int shapes_per_case = 5,
                                                        std::uint64_t seed = 20240601, std::ostream* log = nullptr) {
  std::vector<GradCheckResult> results;
  std::mt19937_64 rng(seed);
  for (const auto& c : cases) {
    GradCheckResult r{c.name, 0.0, c.threshold, shapes_per_case, false};
    for (int s = 0; s < shapes_per_case; ++s) r.max_error = std::max(r.max_error, c.run_once(rng));
    r.passed = r.max_error < c.threshold;
    if (log)
      *log << (r.passed ? "ok    " : "FAIL  ") << c.name << "  max_rel_err=" << r.max_error << "  (< " << c.threshold
           << ")\n";
    results.push_back(r);
  }
  return results;
}

inline bool all_passed(const std::vector<GradCheckResult>& results) {
  return std::all_of(results.begin(), results.end(), [](const auto& r) { return r.passed; });
}

}  // namespace pgl
