#pragma once

// Analytic training-memory estimates from shape formulas alone.
//
//   BP    : all unit activations + 3 * |theta|                (x bytes)
//   local : max_j [acts_j + aux_acts_j + boundary_j + 3 * (|theta_j| + |gamma_j|)]
//   PGL   : f * BP + (1 - f) * local, f = guided epochs / E
//
// The factor 3 covers parameters, gradients and momentum buffers. The
// network input is resident under every regime and is not counted, so the
// boundary term of block 1 is zero.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <vector>

#include "pgl/decoupled_net.hpp"
#include "pgl/schedule.hpp"

namespace pgl {

/// Memory-relevant sizes of one partitioned network at a fixed batch size.
/// `unit_activations` covers the full unit list (classifier included);
/// `blocks` partitions that full list.
struct MemProfile {
  std::vector<std::uint64_t> unit_activations;
  Partition blocks;
  std::vector<std::uint64_t> block_params;      // |theta_j|
  std::vector<std::uint64_t> head_params;       // |gamma_j|, 0 for block J
  std::vector<std::uint64_t> head_activations;  // per head, 0 for block J
  std::uint64_t bytes_per_element = 4;
};

struct MemEstimate {
  std::uint64_t peak_bp = 0;
  std::uint64_t peak_local = 0;
  double schedule_avg = 0.0;
  std::vector<std::uint64_t> per_block;  // local footprint of each block
};

/// Element counts per unit output and per head, from shape inference.
inline MemProfile activation_sizes(const NetworkSpec& spec, const Partition& part, const AuxPolicy& policy,
                                   std::size_t batch) {
  if (batch < 1) throw ConfigError("batch must be >= 1");
  auto layout = backbone_layout(spec);
  MemProfile p;
  Shape s = input_shape(spec, batch);
  std::vector<std::uint64_t> unit_params;
  for (auto& u : layout) {
    std::uint64_t params = 0;
    for (auto& l : u.layers) {
      s = output_shape(l, s);
      params += param_count(l);
    }
    p.unit_activations.push_back(numel_of(s));
    unit_params.push_back(params);
  }

  p.blocks = part;
  if (p.blocks.block_ranges.empty() || p.blocks.block_ranges.back().end + 1 != layout.size())
    throw ConfigError("partition does not match the backbone");
  p.blocks.block_ranges.back().end += 1;  // classifier joins block J

  auto unit_shapes = unit_output_shapes(spec, batch);
  auto heads = attach_aux(spec, part, policy);
  for (std::size_t j = 0; j < part.J; ++j) {
    const auto& r = p.blocks.block_ranges[j];
    p.block_params.push_back(std::accumulate(unit_params.begin() + static_cast<std::ptrdiff_t>(r.begin),
                                             unit_params.begin() + static_cast<std::ptrdiff_t>(r.end), std::uint64_t{0}));
    std::uint64_t hp = 0, ha = 0;
    if (j < heads.size()) {
      Shape hs = unit_shapes[part.block_ranges[j].end - 1];
      for (auto& l : aux_head_layout(heads[j])) {
        hs = output_shape(l, hs);
        ha += numel_of(hs);
        hp += param_count(l);
      }
    }
    p.head_params.push_back(hp);
    p.head_activations.push_back(ha);
  }
  return p;
}

inline std::uint64_t estimate_bp(const MemProfile& p) {
  std::uint64_t acts = std::accumulate(p.unit_activations.begin(), p.unit_activations.end(), std::uint64_t{0});
  std::uint64_t params = std::accumulate(p.block_params.begin(), p.block_params.end(), std::uint64_t{0});
  return (acts + 3 * params) * p.bytes_per_element;
}

/// Footprint of each block trained in isolation with its head.
inline std::vector<std::uint64_t> local_footprints(const MemProfile& p, const Partition& part) {
  std::vector<std::uint64_t> out;
  for (std::size_t j = 0; j < part.block_ranges.size(); ++j) {
    const auto& r = part.block_ranges[j];
    if (r.end > p.unit_activations.size()) throw ConfigError("partition exceeds profile");
    std::uint64_t acts = 0;
    for (std::size_t u = r.begin; u < r.end; ++u) acts += p.unit_activations[u];
    std::uint64_t boundary = r.begin > 0 ? p.unit_activations[r.begin - 1] : 0;
    auto at = [j](const std::vector<std::uint64_t>& v) { return j < v.size() ? v[j] : 0; };
    std::uint64_t elems = acts + at(p.head_activations) + boundary + 3 * (at(p.block_params) + at(p.head_params));
    out.push_back(elems * p.bytes_per_element);
  }
  return out;
}

inline std::uint64_t estimate_local(const MemProfile& p, const Partition& part) {
  auto fp = local_footprints(p, part);
  return fp.empty() ? 0 : *std::max_element(fp.begin(), fp.end());
}

inline double guided_fraction(const Schedule& s) {
  return static_cast<double>(guided_epoch_count(s)) / static_cast<double>(s.E);
}

inline double estimate_schedule_avg(const MemProfile& p, const Partition& part, const Schedule& s) {
  s.validate();
  const double f = guided_fraction(s);
  if (f >= 1.0) return static_cast<double>(estimate_bp(p));
  if (f <= 0.0) return static_cast<double>(estimate_local(p, part));
  return f * static_cast<double>(estimate_bp(p)) + (1.0 - f) * static_cast<double>(estimate_local(p, part));
}

inline MemEstimate estimate(const MemProfile& p, const Schedule& s) {
  MemEstimate m;
  m.peak_bp = estimate_bp(p);
  m.per_block = local_footprints(p, p.blocks);
  m.peak_local = m.per_block.empty() ? 0 : *std::max_element(m.per_block.begin(), m.per_block.end());
  m.schedule_avg = estimate_schedule_avg(p, p.blocks, s);
  return m;
}

/// Profile of two networks trained side by side (blocks of `b` follow `a`).
inline MemProfile concat(const MemProfile& a, const MemProfile& b) {
  MemProfile out = a;
  const std::size_t shift = a.unit_activations.size();
  out.unit_activations.insert(out.unit_activations.end(), b.unit_activations.begin(), b.unit_activations.end());
  for (auto r : b.blocks.block_ranges) out.blocks.block_ranges.push_back({r.begin + shift, r.end + shift});
  out.blocks.J = a.blocks.J + b.blocks.J;
  out.block_params.insert(out.block_params.end(), b.block_params.begin(), b.block_params.end());
  out.head_params.insert(out.head_params.end(), b.head_params.begin(), b.head_params.end());
  out.head_activations.insert(out.head_activations.end(), b.head_activations.begin(), b.head_activations.end());
  return out;
}

}  // namespace pgl
