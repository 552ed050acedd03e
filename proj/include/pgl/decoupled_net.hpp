#pragma once

// Backbones split into J contiguous blocks, each block j < J carrying an
// auxiliary classifier head. Block J owns the network's real classifier.
//
//   X_j      = block_j(X_{j-1})
//   logits_j = head_j(X_j)            (j < J)
//   logits_J = classifier(X_J)
//
// forward_local runs one block on an already-detached input, so its loss
// can only reach that block and its head. forward_global chains every block
// without interruption and never touches a head.

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "pgl/layers.hpp"

namespace pgl {

struct MlpSpec {
  std::vector<std::size_t> widths;  // one hidden linear+relu unit per entry
  std::size_t input_dim = 2;
  std::size_t num_classes = 2;
};

struct ResNetSpec {
  std::size_t depth = 32;  // 6n + 2
  std::size_t num_classes = 10;
  std::size_t input_channels = 3;
  std::size_t input_hw = 32;
};

using NetworkSpec = std::variant<MlpSpec, ResNetSpec>;

inline constexpr std::array<std::size_t, 3> kStageChannels{16, 32, 64};
inline constexpr std::size_t kAuxHiddenWidth = 128;

inline std::size_t num_classes(const NetworkSpec& spec) {
  return std::visit([](const auto& s) { return s.num_classes; }, spec);
}

inline bool is_resnet(const NetworkSpec& spec) { return std::holds_alternative<ResNetSpec>(spec); }

inline void validate(const NetworkSpec& spec) {
  if (num_classes(spec) < 2) throw ConfigError("network.num_classes must be >= 2");
  if (auto* r = std::get_if<ResNetSpec>(&spec)) {
    if (r->depth < 8 || (r->depth - 2) % 6 != 0)
      throw ConfigError("resnet depth " + std::to_string(r->depth) + " is not of the form 6n+2");
    if (r->input_channels < 1 || r->input_hw < 1) throw ConfigError("resnet input geometry must be positive");
  } else {
    const auto& m = std::get<MlpSpec>(spec);
    if (m.input_dim < 1) throw ConfigError("mlp input_dim must be >= 1");
    for (auto w : m.widths)
      if (w < 1) throw ConfigError("mlp widths must be >= 1");
  }
}

inline Shape input_shape(const NetworkSpec& spec, std::size_t batch) {
  if (auto* r = std::get_if<ResNetSpec>(&spec)) return {batch, r->input_channels, r->input_hw, r->input_hw};
  return {batch, std::get<MlpSpec>(spec).input_dim};
}

enum class UnitKind { stem, residual, hidden, classifier };

struct UnitSpec {
  UnitKind kind;
  std::vector<LayerSpec> layers;
};

/// Unit list of the backbone. Every unit except the trailing classifier is
/// partitionable; the classifier always joins the last block.
inline std::vector<UnitSpec> backbone_layout(const NetworkSpec& spec) {
  validate(spec);
  std::vector<UnitSpec> units;
  if (auto* r = std::get_if<ResNetSpec>(&spec)) {
    units.push_back({UnitKind::stem,
                     {Conv2dSpec{r->input_channels, kStageChannels[0], 3, 1, 1, false},
                      BatchNorm2dSpec{kStageChannels[0]}, ReLUSpec{}}});
    const std::size_t per_stage = (r->depth - 2) / 6;
    std::size_t in = kStageChannels[0];
    for (std::size_t s = 0; s < kStageChannels.size(); ++s)
      for (std::size_t i = 0; i < per_stage; ++i) {
        std::size_t stride = (s > 0 && i == 0) ? 2 : 1;
        units.push_back({UnitKind::residual, {ResidualBasicSpec{in, kStageChannels[s], stride}}});
        in = kStageChannels[s];
      }
    units.push_back({UnitKind::classifier, {GlobalAvgPoolSpec{}, LinearSpec{in, r->num_classes, true}}});
  } else {
    const auto& m = std::get<MlpSpec>(spec);
    std::size_t in = m.input_dim;
    for (auto w : m.widths) {
      units.push_back({UnitKind::hidden, {LinearSpec{in, w, true}, ReLUSpec{}}});
      in = w;
    }
    units.push_back({UnitKind::classifier, {LinearSpec{in, m.num_classes, true}}});
  }
  return units;
}

struct Unit {
  UnitKind kind;
  std::vector<Layer<float>> layers;
};

inline std::vector<Unit> build_backbone(const NetworkSpec& spec, std::mt19937_64& rng) {
  std::vector<Unit> units;
  for (auto& us : backbone_layout(spec)) {
    Unit u{us.kind, {}};
    for (auto& ls : us.layers) u.layers.push_back(init_params<float>(ls, rng));
    units.push_back(std::move(u));
  }
  return units;
}

/// J contiguous block ranges over the partitionable units.
struct Partition {
  std::size_t J = 1;
  std::vector<Range> block_ranges;
};

/// Near-equal contiguous split; earlier blocks absorb the remainder.
inline Partition partition(std::size_t n_units, std::size_t J) {
  if (J < 1) throw ConfigError("J must be >= 1");
  if (J > std::max<std::size_t>(n_units, 1))
    throw ConfigError("cannot split " + std::to_string(n_units) + " partitionable units into " +
                      std::to_string(J) + " blocks");
  Partition p{J, {}};
  const std::size_t base = n_units / J, rem = n_units % J;
  std::size_t at = 0;
  for (std::size_t j = 0; j < J; ++j) {
    std::size_t len = base + (j < rem ? 1 : 0);
    p.block_ranges.push_back({at, at + len});
    at += len;
  }
  return p;
}

// ---------------------------------------------------------------------------
// Auxiliary heads

/// n_conv channel-preserving stages followed by n_fc linear layers. For
/// spatial inputs a stage is a 3x3 stride-2 conv + relu and a global average
/// pool precedes the linear layers; for flat inputs a stage is a square
/// linear + relu.
struct AuxHeadSpec {
  std::size_t n_conv = 1;
  std::size_t n_fc = 2;
  std::size_t in_features = 16;  // channels (spatial) or width (flat)
  std::size_t hidden = kAuxHiddenWidth;
  std::size_t num_classes = 10;
  bool spatial = true;
};

inline bool operator==(const AuxHeadSpec& a, const AuxHeadSpec& b) {
  return a.n_conv == b.n_conv && a.n_fc == b.n_fc && a.in_features == b.in_features && a.hidden == b.hidden &&
         a.num_classes == b.num_classes && a.spatial == b.spatial;
}

struct AuxShape {
  std::size_t n_conv;
  std::size_t n_fc;
  friend bool operator==(const AuxShape&, const AuxShape&) = default;
};

/// Larger heads on narrower (earlier) stages: 16 -> 2Conv-2FC,
/// 32 -> 1Conv-3FC, 64 -> 1Conv-2FC. Other widths get 1Conv-2FC.
inline AuxShape aux_adapt_policy(std::size_t input_channels) {
  switch (input_channels) {
    case 16: return {2, 2};
    case 32: return {1, 3};
    case 64: return {1, 2};
    default: return {1, 2};
  }
}

/// Flat backbones have no channel progression, so the same three sizes are
/// assigned by block position: first, middle and last tercile of heads.
inline AuxShape aux_adapt_by_position(std::size_t head_index, std::size_t head_count) {
  std::size_t tercile = head_count == 0 ? 0 : (3 * head_index) / head_count;
  static constexpr std::array<std::size_t, 3> channel_for_tercile{16, 32, 64};
  return aux_adapt_policy(channel_for_tercile[std::min<std::size_t>(tercile, 2)]);
}

struct AuxPolicy {
  enum class Kind { fixed, adapt };
  Kind kind = Kind::adapt;
  AuxShape fixed_shape{1, 2};

  static AuxPolicy adapt() { return {Kind::adapt, {1, 2}}; }
  static AuxPolicy fixed(std::size_t n_conv, std::size_t n_fc) {
    if (n_conv > 2 || n_fc < 1 || n_fc > 3)
      throw ConfigError("aux head must have 0-2 conv and 1-3 fc layers");
    return {Kind::fixed, {n_conv, n_fc}};
  }
};

/// Feature shape of each partitionable unit's output plus the classifier.
inline std::vector<Shape> unit_output_shapes(const NetworkSpec& spec, std::size_t batch) {
  std::vector<Shape> shapes;
  Shape s = input_shape(spec, batch);
  for (auto& u : backbone_layout(spec)) {
    for (auto& l : u.layers) s = output_shape(l, s);
    shapes.push_back(s);
  }
  return shapes;
}

/// Head specs for blocks 1..J-1, sized from each block's output.
inline std::vector<AuxHeadSpec> attach_aux(const NetworkSpec& spec, const Partition& part, const AuxPolicy& policy) {
  auto shapes = unit_output_shapes(spec, 1);
  std::vector<AuxHeadSpec> heads;
  const std::size_t count = part.J - 1;
  for (std::size_t j = 0; j < count; ++j) {
    const Shape& out = shapes.at(part.block_ranges[j].end - 1);
    AuxHeadSpec h;
    h.spatial = out.size() == 4;
    h.in_features = out[1];
    h.num_classes = num_classes(spec);
    AuxShape shape = policy.fixed_shape;
    if (policy.kind == AuxPolicy::Kind::adapt)
      shape = h.spatial ? aux_adapt_policy(h.in_features) : aux_adapt_by_position(j, count);
    h.n_conv = shape.n_conv;
    h.n_fc = shape.n_fc;
    heads.push_back(h);
  }
  return heads;
}

inline std::vector<LayerSpec> aux_head_layout(const AuxHeadSpec& h) {
  std::vector<LayerSpec> layers;
  const std::size_t c = h.in_features;
  for (std::size_t i = 0; i < h.n_conv; ++i) {
    if (h.spatial)
      layers.push_back(Conv2dSpec{c, c, 3, 2, 1, true});
    else
      layers.push_back(LinearSpec{c, c, true});
    layers.push_back(ReLUSpec{});
  }
  if (h.spatial) layers.push_back(GlobalAvgPoolSpec{});
  std::size_t in = c;
  for (std::size_t i = 0; i + 1 < h.n_fc; ++i) {
    layers.push_back(LinearSpec{in, h.hidden, true});
    layers.push_back(ReLUSpec{});
    in = h.hidden;
  }
  layers.push_back(LinearSpec{in, h.num_classes, true});
  return layers;
}

// ---------------------------------------------------------------------------
// Model

struct Block {
  std::vector<Layer<float>> layers;
  // layers[0, feature_end) compute X_j; the rest form the terminal classifier
  // (non-empty for block J only).
  std::size_t feature_end = 0;
};

struct AuxHead {
  AuxHeadSpec spec;
  std::vector<Layer<float>> layers;
};

struct DecoupledModel {
  NetworkSpec spec;
  Partition partition;
  AuxPolicy policy;
  std::vector<Block> blocks;
  std::vector<AuxHead> heads;

  std::size_t J() const { return blocks.size(); }
};

struct ParamRef {
  std::string name;
  Tensor* tensor;
};

struct BufferRef {
  std::string name;
  std::vector<float>* values;
};

namespace detail {

inline void name_layers(std::vector<Layer<float>>& layers) {
  std::array<std::size_t, std::variant_size_v<LayerSpec>> counters{};
  for (auto& l : layers) l.name = std::string(kind_name(l.spec)) + std::to_string(counters[l.spec.index()]++);
}

inline void collect_params(std::vector<Layer<float>>& layers, const std::string& prefix, std::vector<ParamRef>& out) {
  for (auto& l : layers)
    for (auto& p : l.params) out.push_back({prefix + "." + l.name + "." + p.name, &p.value});
}

inline void collect_buffers(std::vector<Layer<float>>& layers, const std::string& prefix, std::vector<BufferRef>& out) {
  for (auto& l : layers)
    for (std::size_t i = 0; i < l.bn.size(); ++i) {
      std::string base = prefix + "." + l.name + (l.bn_names[i].empty() ? "" : "." + l.bn_names[i]);
      out.push_back({base + ".running_mean", &l.bn[i].running_mean});
      out.push_back({base + ".running_var", &l.bn[i].running_var});
    }
}

inline Tensor run_layers(std::vector<Layer<float>>& layers, std::size_t begin, std::size_t end, Tensor x,
                         Phase phase) {
  for (std::size_t i = begin; i < end; ++i) x = forward(layers[i], x, phase);
  return x;
}

}  // namespace detail

/// Builds the backbone first and the heads second from one RNG stream, so
/// the backbone initialization does not depend on the head configuration.
inline DecoupledModel build_model(const NetworkSpec& spec, std::size_t J, const AuxPolicy& policy,
                                  std::uint64_t seed) {
  auto layout = backbone_layout(spec);
  const std::size_t partitionable = layout.size() - 1;
  DecoupledModel model{spec, partition(partitionable, J), policy, {}, {}};

  std::mt19937_64 rng(seed);
  auto units = build_backbone(spec, rng);
  for (std::size_t j = 0; j < J; ++j) {
    Block b;
    for (std::size_t u = model.partition.block_ranges[j].begin; u < model.partition.block_ranges[j].end; ++u)
      for (auto& l : units[u].layers) b.layers.push_back(std::move(l));
    b.feature_end = b.layers.size();
    if (j + 1 == J)
      for (auto& l : units.back().layers) b.layers.push_back(std::move(l));
    detail::name_layers(b.layers);
    model.blocks.push_back(std::move(b));
  }
  std::uint64_t head_seed = rng();
  std::mt19937_64 head_rng(head_seed);
  for (auto& hs : attach_aux(spec, model.partition, policy)) {
    AuxHead h{hs, {}};
    for (auto& ls : aux_head_layout(hs)) h.layers.push_back(init_params<float>(ls, head_rng));
    detail::name_layers(h.layers);
    model.heads.push_back(std::move(h));
  }
  return model;
}

/// Parameters theta_j of block j (1-based), classifier included for j = J.
inline std::vector<ParamRef> block_params(DecoupledModel& m, std::size_t j) {
  std::vector<ParamRef> out;
  detail::collect_params(m.blocks.at(j - 1).layers, "block" + std::to_string(j), out);
  return out;
}

/// Parameters gamma_j of the head on block j (empty for j = J).
inline std::vector<ParamRef> head_params(DecoupledModel& m, std::size_t j) {
  std::vector<ParamRef> out;
  if (j >= 1 && j <= m.heads.size()) detail::collect_params(m.heads[j - 1].layers, "aux" + std::to_string(j), out);
  return out;
}

inline std::vector<ParamRef> backbone_params(DecoupledModel& m) {
  std::vector<ParamRef> out;
  for (std::size_t j = 1; j <= m.J(); ++j)
    for (auto& p : block_params(m, j)) out.push_back(p);
  return out;
}

inline std::vector<ParamRef> all_head_params(DecoupledModel& m) {
  std::vector<ParamRef> out;
  for (std::size_t j = 1; j <= m.heads.size(); ++j)
    for (auto& p : head_params(m, j)) out.push_back(p);
  return out;
}

/// Every parameter: blocks in order, then heads in order.
inline std::vector<ParamRef> all_params(DecoupledModel& m) {
  auto out = backbone_params(m);
  for (auto& p : all_head_params(m)) out.push_back(p);
  return out;
}

inline std::vector<BufferRef> all_buffers(DecoupledModel& m) {
  std::vector<BufferRef> out;
  for (std::size_t j = 0; j < m.blocks.size(); ++j)
    detail::collect_buffers(m.blocks[j].layers, "block" + std::to_string(j + 1), out);
  for (std::size_t j = 0; j < m.heads.size(); ++j)
    detail::collect_buffers(m.heads[j].layers, "aux" + std::to_string(j + 1), out);
  return out;
}

struct LocalOutput {
  Tensor features;  // X_j
  Tensor logits;
};

/// Block j on a detached input; logits come from head j, or from the
/// terminal classifier when j = J.
inline LocalOutput forward_local(DecoupledModel& m, const Tensor& x, std::size_t j, Phase phase) {
  if (j < 1 || j > m.J())
    throw ContractError("block index " + std::to_string(j) + " outside [1, " + std::to_string(m.J()) + "]");
  if (x.has_lineage()) throw ContractError("forward_local requires a detached input");
  auto& block = m.blocks[j - 1];
  LocalOutput out;
  out.features = detail::run_layers(block.layers, 0, block.feature_end, x, phase);
  if (j == m.J()) {
    out.logits = detail::run_layers(block.layers, block.feature_end, block.layers.size(), out.features, phase);
  } else {
    auto& head = m.heads.at(j - 1).layers;
    out.logits = detail::run_layers(head, 0, head.size(), out.features, phase);
  }
  return out;
}

/// Logits of a head applied to a (detached) boundary activation.
inline Tensor forward_head(DecoupledModel& m, std::size_t j, const Tensor& x, Phase phase) {
  auto& head = m.heads.at(j - 1).layers;
  return detail::run_layers(head, 0, head.size(), x, phase);
}

struct GlobalOutput {
  Tensor logits;
  std::vector<Tensor> boundaries;  // detached X_1..X_J
};

inline GlobalOutput forward_global(DecoupledModel& m, const Tensor& x, Phase phase) {
  GlobalOutput out;
  Tensor h = x;
  for (auto& block : m.blocks) {
    h = detail::run_layers(block.layers, 0, block.feature_end, h, phase);
    out.boundaries.push_back(detach(h));
  }
  auto& last = m.blocks.back();
  out.logits = detail::run_layers(last.layers, last.feature_end, last.layers.size(), h, phase);
  return out;
}

}  // namespace pgl
