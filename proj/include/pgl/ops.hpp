#pragma once

// Differentiable primitives over BasicTensor.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <string>
#include <thread>
#include <vector>

#include "pgl/tensor.hpp"

namespace pgl {

/// Records a result on the tape when any input is tracked. `backward`
/// receives the output gradient and fills slots for tracked inputs.
template <class T>
BasicTensor<T> make_op(std::string op, Shape shape, std::vector<T> data,
                       const std::vector<const BasicTensor<T>*>& inputs,
                       typename detail::Node<T>::BackwardFn backward) {
  auto buffer = std::make_shared<std::vector<T>>(std::move(data));
  bool tracked = false;
  for (auto* in : inputs) tracked = tracked || in->requires_grad();
  if (!tracked) return BasicTensor<T>::from_parts(std::move(shape), std::move(buffer), nullptr);

  auto node = std::make_shared<detail::Node<T>>();
  node->op = std::move(op);
  node->shape = shape;
  for (auto* in : inputs) node->parents.push_back(in->node());
  node->backward = std::move(backward);
  node->id = detail::next_node_id();
  return BasicTensor<T>::from_parts(std::move(shape), std::move(buffer), std::move(node));
}

namespace detail {

/// Thread cap for row-parallel kernels, read once from PGL_THREADS.
inline unsigned kernel_threads() {
  static const unsigned n = [] {
    const char* env = std::getenv("PGL_THREADS");
    if (!env) return 1u;
    long v = std::strtol(env, nullptr, 10);
    return v >= 1 ? static_cast<unsigned>(v) : 1u;
  }();
  return n;
}

// Splits [0, n) into contiguous chunks. Each index is processed by exactly
// one worker in the same order as the serial loop, so results are
// bit-identical for any thread count.
template <class F>
void parallel_rows(std::size_t n, std::size_t work_per_row, F&& fn) {
  unsigned threads = kernel_threads();
  if (threads <= 1 || n < 2 || n * work_per_row < (1u << 16)) {
    fn(std::size_t{0}, n);
    return;
  }
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
  std::vector<std::thread> pool;
  std::size_t chunk = (n + threads - 1) / threads;
  for (unsigned t = 0; t < threads; ++t) {
    std::size_t b = t * chunk, e = std::min(n, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&fn, b, e] { fn(b, e); });
  }
  for (auto& th : pool) th.join();
}

// C[m,n] += A[m,k] * B[k,n]
template <class T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
  parallel_rows(m, k * n, [=](std::size_t r0, std::size_t r1) {
    for (std::size_t i = r0; i < r1; ++i) {
      T* crow = c + i * n;
      for (std::size_t t = 0; t < k; ++t) {
        T av = a[i * k + t];
        const T* brow = b + t * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  });
}

// C[m,k] += G[m,n] * B[k,n]^T
template <class T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* g, const T* b, T* c) {
  parallel_rows(m, k * n, [=](std::size_t r0, std::size_t r1) {
    for (std::size_t i = r0; i < r1; ++i) {
      const T* grow = g + i * n;
      for (std::size_t t = 0; t < k; ++t) {
        const T* brow = b + t * n;
        T acc = 0;
        for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
        c[i * k + t] += acc;
      }
    }
  });
}

// C[k,n] += A[m,k]^T * G[m,n]
template <class T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* g, T* c) {
  parallel_rows(k, m * n, [=](std::size_t t0, std::size_t t1) {
    for (std::size_t i = 0; i < m; ++i) {
      const T* grow = g + i * n;
      for (std::size_t t = t0; t < t1; ++t) {
        T av = a[i * k + t];
        T* crow = c + t * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
      }
    }
  });
}

inline std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

}  // namespace detail

template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: incompatible shapes " + to_string(a.shape()) + " x " +
                     to_string(b.shape()));
  std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> c(m * n, T(0));
  detail::gemm_nn(m, k, n, a.values().data(), b.values().data(), c.data());
  auto ab = a.buffer(), bb = b.buffer();
  return make_op<T>("matmul", {m, n}, std::move(c), {&a, &b},
                    [ab, bb, m, k, n](const std::vector<T>& g, detail::ParentGrads<T>& pg) {
                      if (pg.wants(0)) detail::gemm_nt(m, n, k, g.data(), bb->data(), pg.slot(0).data());
                      if (pg.wants(1)) detail::gemm_tn(m, k, n, ab->data(), g.data(), pg.slot(1).data());
                    });
}

enum class Elementwise { add, sub, mul, relu, exp, log, neg };

namespace detail {

template <class T, class Fwd, class DA, class DB>
BasicTensor<T> binary_op(const char* name, const BasicTensor<T>& a, const BasicTensor<T>& b, Fwd fwd,
                         DA da, DB db) {
  bool same = a.shape() == b.shape();
  bool a_scalar = a.numel() == 1, b_scalar = b.numel() == 1;
  if (!same && !a_scalar && !b_scalar)
    throw ShapeError(std::string(name) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  const Shape& out_shape = same ? a.shape() : (a_scalar ? b.shape() : a.shape());
  std::size_t n = numel_of(out_shape);
  std::size_t sa = a_scalar && !same ? 0 : 1;
  std::size_t sb = b_scalar && !same ? 0 : 1;
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[i * sa], bv[i * sb]);
  auto ab = a.buffer(), bb = b.buffer();
  return make_op<T>(name, out_shape, std::move(out), {&a, &b},
                    [ab, bb, sa, sb, n, da, db](const std::vector<T>& g, ParentGrads<T>& pg) {
                      const auto& x = *ab;
                      const auto& y = *bb;
                      if (pg.wants(0)) {
                        auto& ga = pg.slot(0);
                        for (std::size_t i = 0; i < n; ++i) ga[i * sa] += g[i] * da(x[i * sa], y[i * sb]);
                      }
                      if (pg.wants(1)) {
                        auto& gb = pg.slot(1);
                        for (std::size_t i = 0; i < n; ++i) gb[i * sb] += g[i] * db(x[i * sa], y[i * sb]);
                      }
                    });
}

}  // namespace detail

template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return detail::binary_op<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); }, [](T, T) { return T(1); });
}

template <class T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return detail::binary_op<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); }, [](T, T) { return T(-1); });
}

template <class T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return detail::binary_op<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; }, [](T x, T) { return x; });
}

template <class T>
BasicTensor<T> scale(const BasicTensor<T>& a, T s) {
  return mul(a, BasicTensor<T>::scalar(s));
}

template <class T>
BasicTensor<T> relu(const BasicTensor<T>& a) {
  const auto& x = a.values();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  auto ab = a.buffer();
  return make_op<T>("relu", a.shape(), std::move(out), {&a},
                    [ab](const std::vector<T>& g, detail::ParentGrads<T>& pg) {
                      auto& ga = pg.slot(0);
                      const auto& x = *ab;
                      // Subgradient at exactly zero is zero.
                      for (std::size_t i = 0; i < g.size(); ++i)
                        if (x[i] > T(0)) ga[i] += g[i];
                    });
}

template <class T>
BasicTensor<T> exp(const BasicTensor<T>& a) {
  const auto& x = a.values();
  auto out = std::make_shared<std::vector<T>>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) (*out)[i] = std::exp(x[i]);
  auto result = make_op<T>("exp", a.shape(), *out, {&a},
                           [out](const std::vector<T>& g, detail::ParentGrads<T>& pg) {
                             auto& ga = pg.slot(0);
                             for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (*out)[i];
                           });
  return result;
}

template <class T>
BasicTensor<T> log(const BasicTensor<T>& a) {
  const auto& x = a.values();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > T(0))) throw DomainError("log of non-positive entry at index " + std::to_string(i));
    out[i] = std::log(x[i]);
  }
  auto ab = a.buffer();
  return make_op<T>("log", a.shape(), std::move(out), {&a},
                    [ab](const std::vector<T>& g, detail::ParentGrads<T>& pg) {
                      auto& ga = pg.slot(0);
                      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / (*ab)[i];
                    });
}

template <class T>
BasicTensor<T> neg(const BasicTensor<T>& a) {
  const auto& x = a.values();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = -x[i];
  return make_op<T>("neg", a.shape(), std::move(out), {&a},
                    [](const std::vector<T>& g, detail::ParentGrads<T>& pg) {
                      auto& ga = pg.slot(0);
                      for (std::size_t i = 0; i < g.size(); ++i) ga[i] -= g[i];
                    });
}

/// Dispatcher over the pointwise kinds; `b` is required for binary kinds.
template <class T>
BasicTensor<T> elementwise(Elementwise kind, const BasicTensor<T>& a, const BasicTensor<T>* b = nullptr) {
  auto need_b = [&]() -> const BasicTensor<T>& {
    if (!b) throw ContractError("binary elementwise op requires a second operand");
    return *b;
  };
  switch (kind) {
    case Elementwise::add: return add(a, need_b());
    case Elementwise::sub: return sub(a, need_b());
    case Elementwise::mul: return mul(a, need_b());
    case Elementwise::relu: return relu(a);
    case Elementwise::exp: return pgl::exp(a);
    case Elementwise::log: return pgl::log(a);
    case Elementwise::neg: return neg(a);
  }
  throw ContractError("unknown elementwise kind");
}

/// a + b broadcast along `axis` (b is rank 1 with a.shape[axis] entries).
template <class T>
BasicTensor<T> add_broadcast(const BasicTensor<T>& a, const BasicTensor<T>& b, std::size_t axis) {
  if (axis >= a.rank() || b.rank() != 1 || b.dim(0) != a.dim(axis))
    throw ShapeError("add_broadcast: " + to_string(b.shape()) + " does not match axis " +
                     std::to_string(axis) + " of " + to_string(a.shape()));
  std::size_t outer = 1, inner = 1, c = a.dim(axis);
  for (std::size_t i = 0; i < axis; ++i) outer *= a.dim(i);
  for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
  std::vector<T> out(a.values());
  const auto& bv = b.values();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t ch = 0; ch < c; ++ch) {
      T* p = out.data() + (o * c + ch) * inner;
      for (std::size_t i = 0; i < inner; ++i) p[i] += bv[ch];
    }
  return make_op<T>("add_broadcast", a.shape(), std::move(out), {&a, &b},
                    [outer, inner, c](const std::vector<T>& g, detail::ParentGrads<T>& pg) {
                      if (pg.wants(0)) {
                        auto& ga = pg.slot(0);
                        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                      }
                      if (pg.wants(1)) {
                        auto& gb = pg.slot(1);
                        for (std::size_t o = 0; o < outer; ++o)
                          for (std::size_t ch = 0; ch < c; ++ch) {
                            const T* p = g.data() + (o * c + ch) * inner;
                            T acc = 0;
                            for (std::size_t i = 0; i < inner; ++i) acc += p[i];
                            gb[ch] += acc;
                          }
                      }
                    });
}

enum class Reduce { sum, mean, max };

/// Reduces over `axes` (empty = all axes). Reduced dimensions are dropped;
/// a full reduction yields shape [1]. Max routes gradient to the first
/// maximal entry.
template <class T>
BasicTensor<T> reduce(Reduce kind, const BasicTensor<T>& a, std::vector<std::size_t> axes = {}) {
  const auto& shape = a.shape();
  if (axes.empty())
    for (std::size_t i = 0; i < shape.size(); ++i) axes.push_back(i);
  std::sort(axes.begin(), axes.end());
  axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
  std::vector<char> reduced(shape.size(), 0);
  for (auto ax : axes) {
    if (ax >= shape.size())
      throw ShapeError("reduce: axis " + std::to_string(ax) + " out of range for rank " +
                       std::to_string(shape.size()));
    reduced[ax] = 1;
  }
  Shape out_shape;
  for (std::size_t i = 0; i < shape.size(); ++i)
    if (!reduced[i]) out_shape.push_back(shape[i]);
  if (out_shape.empty()) out_shape.push_back(1);

  // Output stride of each input axis (zero for reduced axes).
  std::vector<std::size_t> ostride(shape.size(), 0);
  {
    std::size_t s = 1;
    for (std::size_t i = shape.size(); i-- > 0;)
      if (!reduced[i]) {
        ostride[i] = s;
        s *= shape[i];
      }
  }
  const std::size_t n = a.numel(), m = numel_of(out_shape);
  std::vector<std::size_t> target(n);
  {
    std::vector<std::size_t> idx(shape.size(), 0);
    for (std::size_t flat = 0; flat < n; ++flat) {
      std::size_t o = 0;
      for (std::size_t d = 0; d < shape.size(); ++d) o += idx[d] * ostride[d];
      target[flat] = o;
      for (std::size_t d = shape.size(); d-- > 0;) {
        if (++idx[d] < shape[d]) break;
        idx[d] = 0;
      }
    }
  }
  const std::size_t count = n / m;
  const auto& x = a.values();
  std::vector<T> out(m, kind == Reduce::max ? -std::numeric_limits<T>::infinity() : T(0));
  auto argmax = std::make_shared<std::vector<std::size_t>>();
  if (kind == Reduce::max) argmax->assign(m, 0);
  for (std::size_t i = 0; i < n; ++i) {
    auto o = target[i];
    if (kind == Reduce::max) {
      if (x[i] > out[o]) {
        out[o] = x[i];
        (*argmax)[o] = i;
      }
    } else {
      out[o] += x[i];
    }
  }
  if (kind == Reduce::mean)
    for (auto& v : out) v /= static_cast<T>(count);

  const char* name = kind == Reduce::sum ? "sum" : kind == Reduce::mean ? "mean" : "max";
  auto tgt = std::make_shared<std::vector<std::size_t>>(std::move(target));
  return make_op<T>(name, out_shape, std::move(out), {&a},
                    [kind, tgt, argmax, count](const std::vector<T>& g, detail::ParentGrads<T>& pg) {
                      auto& ga = pg.slot(0);
                      if (kind == Reduce::max) {
                        for (std::size_t o = 0; o < g.size(); ++o) ga[(*argmax)[o]] += g[o];
                        return;
                      }
                      T w = kind == Reduce::mean ? T(1) / static_cast<T>(count) : T(1);
                      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[(*tgt)[i]] * w;
                    });
}

template <class T>
BasicTensor<T> sum(const BasicTensor<T>& a, std::vector<std::size_t> axes = {}) {
  return reduce(Reduce::sum, a, std::move(axes));
}
template <class T>
BasicTensor<T> mean(const BasicTensor<T>& a, std::vector<std::size_t> axes = {}) {
  return reduce(Reduce::mean, a, std::move(axes));
}
template <class T>
BasicTensor<T> max(const BasicTensor<T>& a, std::vector<std::size_t> axes = {}) {
  return reduce(Reduce::max, a, std::move(axes));
}

template <class T>
BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape) {
  check_shape(shape);
  if (numel_of(shape) != a.numel())
    throw ShapeError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  return make_op<T>("reshape", std::move(shape), a.values(), {&a},
                    [](const std::vector<T>& g, detail::ParentGrads<T>& pg) {
                      auto& ga = pg.slot(0);
                      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                    });
}

/// [N, ...] -> [N, prod(...)]
template <class T>
BasicTensor<T> flatten(const BasicTensor<T>& a) {
  if (a.rank() == 2) return a;
  return reshape(a, Shape{a.dim(0), a.numel() / a.dim(0)});
}

namespace detail {

// Maps each element of `inner` (shape `inner_shape`) to its flat index inside
// `outer_shape` when offset by `offset` per axis.
inline std::vector<std::size_t> embed_indices(const Shape& inner_shape, const Shape& outer_shape,
                                              const std::vector<std::size_t>& offset) {
  auto os = strides_of(outer_shape);
  std::size_t n = numel_of(inner_shape);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(inner_shape.size(), 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t o = 0;
    for (std::size_t d = 0; d < idx.size(); ++d) o += (idx[d] + offset[d]) * os[d];
    map[flat] = o;
    for (std::size_t d = idx.size(); d-- > 0;) {
      if (++idx[d] < inner_shape[d]) break;
      idx[d] = 0;
    }
  }
  return map;
}

}  // namespace detail

/// Zero padding; `amounts[d]` = {before, after} for axis d.
template <class T>
BasicTensor<T> pad(const BasicTensor<T>& a, const std::vector<std::pair<std::size_t, std::size_t>>& amounts) {
  if (amounts.size() != a.rank())
    throw ShapeError("pad: expected " + std::to_string(a.rank()) + " pad pairs");
  Shape out_shape(a.shape());
  std::vector<std::size_t> offset(a.rank());
  for (std::size_t d = 0; d < a.rank(); ++d) {
    out_shape[d] += amounts[d].first + amounts[d].second;
    offset[d] = amounts[d].first;
  }
  auto map = std::make_shared<std::vector<std::size_t>>(detail::embed_indices(a.shape(), out_shape, offset));
  std::vector<T> out(numel_of(out_shape), T(0));
  const auto& x = a.values();
  for (std::size_t i = 0; i < x.size(); ++i) out[(*map)[i]] = x[i];
  return make_op<T>("pad", out_shape, std::move(out), {&a},
                    [map](const std::vector<T>& g, detail::ParentGrads<T>& pg) {
                      auto& ga = pg.slot(0);
                      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[(*map)[i]];
                    });
}

struct Range {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
};

/// Sub-box selection; one half-open range per axis.
template <class T>
BasicTensor<T> slice(const BasicTensor<T>& a, const std::vector<Range>& ranges) {
  if (ranges.size() != a.rank()) throw ShapeError("slice: expected one range per axis");
  Shape out_shape;
  std::vector<std::size_t> offset;
  for (std::size_t d = 0; d < a.rank(); ++d) {
    const auto& r = ranges[d];
    if (r.begin >= r.end || r.end > a.dim(d))
      throw ShapeError("slice: range [" + std::to_string(r.begin) + "," + std::to_string(r.end) +
                       ") out of bounds for axis " + std::to_string(d) + " of size " +
                       std::to_string(a.dim(d)));
    out_shape.push_back(r.end - r.begin);
    offset.push_back(r.begin);
  }
  auto map = std::make_shared<std::vector<std::size_t>>(detail::embed_indices(out_shape, a.shape(), offset));
  std::vector<T> out(map->size());
  const auto& x = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[(*map)[i]];
  return make_op<T>("slice", out_shape, std::move(out), {&a},
                    [map](const std::vector<T>& g, detail::ParentGrads<T>& pg) {
                      auto& ga = pg.slot(0);
                      for (std::size_t i = 0; i < g.size(); ++i) ga[(*map)[i]] += g[i];
                    });
}

}  // namespace pgl
