#include <gtest/gtest.h>

#include "generators.hpp"
#include "pgl/memory_model.hpp"

using namespace pgl;
using pgl::testing::Gen;

namespace {

MemProfile profile_of(const NetworkSpec& spec, std::size_t J, std::size_t batch,
                      const AuxPolicy& policy = AuxPolicy::adapt()) {
  const std::size_t units = backbone_layout(spec).size() - 1;
  return activation_sizes(spec, partition(units, J), policy, batch);
}

/// n identical units, each with `acts` activations and `params` weights, no heads.
MemProfile uniform_profile(std::size_t n, std::size_t J, std::uint64_t acts, std::uint64_t params) {
  MemProfile p;
  p.unit_activations.assign(n, acts);
  p.blocks = partition(n, J);
  for (auto r : p.blocks.block_ranges) p.block_params.push_back((r.end - r.begin) * params);
  p.head_params.assign(J, 0);
  p.head_activations.assign(J, 0);
  return p;
}

MemProfile random_profile(Gen& g) {
  const std::size_t n = g.size(1, 12), J = g.size(1, n);
  MemProfile p;
  for (std::size_t i = 0; i < n; ++i) p.unit_activations.push_back(g.size(0, 5000));
  p.blocks = partition(n, J);
  for (std::size_t j = 0; j < J; ++j) {
    p.block_params.push_back(g.size(0, 3000));
    p.head_params.push_back(j + 1 < J ? g.size(0, 500) : 0);
    p.head_activations.push_back(j + 1 < J ? g.size(0, 500) : 0);
  }
  p.bytes_per_element = g.coin() ? 4 : 2;
  return p;
}

const Schedule kGrid(int P, int Q) { return Schedule{160, P, Q, Regime::pgl}; }

}  // namespace

// --- activation_sizes -------------------------------------------------------

TEST(ActivationSizes, ResNetStem) {
  auto p = profile_of(ResNetSpec{32}, 16, 1);
  EXPECT_EQ(p.unit_activations[0], 16u * 32 * 32);
  ASSERT_EQ(p.unit_activations.size(), 17u);
  // five 16x32x32, five 32x16x16, five 64x8x8 residual outputs, 10 logits
  std::uint64_t total = 0;
  for (auto a : p.unit_activations) total += a;
  EXPECT_EQ(total, 6u * 16384 + 5u * 8192 + 5u * 4096 + 10);
}

TEST(ActivationSizes, MlpWidths) {
  auto p = profile_of(MlpSpec{{8, 8}, 2, 3}, 1, 4);
  ASSERT_EQ(p.unit_activations.size(), 3u);
  EXPECT_EQ(p.unit_activations[0], 32u);
  EXPECT_EQ(p.unit_activations[1], 32u);
  EXPECT_EQ(p.unit_activations[2], 12u);
  // hidden (2*8+8) + (8*8+8) + classifier (8*3+3)
  EXPECT_EQ(p.block_params, (std::vector<std::uint64_t>{24 + 72 + 27}));
}

TEST(ActivationSizes, ParamsMatchBuiltModel) {
  for (std::size_t J : {1u, 2u, 4u}) {
    auto spec = ResNetSpec{14, 10, 3, 8};
    auto p = profile_of(spec, J, 2);
    auto m = build_model(spec, J, AuxPolicy::adapt(), 0);
    for (std::size_t j = 1; j <= J; ++j) {
      std::uint64_t theta = 0, gamma = 0;
      for (auto& r : block_params(m, j)) theta += r.tensor->numel();
      for (auto& r : head_params(m, j)) gamma += r.tensor->numel();
      EXPECT_EQ(p.block_params[j - 1], theta) << "J=" << J << " j=" << j;
      EXPECT_EQ(p.head_params[j - 1], gamma) << "J=" << J << " j=" << j;
    }
  }
}

TEST(ActivationSizes, HeadActivationsCountEveryHeadLayer) {
  auto p = profile_of(MlpSpec{{8, 8, 8}, 2, 3}, 3, 5, AuxPolicy::fixed(1, 2));
  // square linear, relu, linear to 128, relu, linear to 3
  const std::uint64_t per_head = 5u * (8 + 8 + 128 + 128 + 3);
  EXPECT_EQ(p.head_activations, (std::vector<std::uint64_t>{per_head, per_head, 0}));
}

TEST(ActivationSizes, Errors) {
  EXPECT_THROW(profile_of(MlpSpec{{8, 8}, 2, 3}, 1, 0), ConfigError);
  EXPECT_THROW(activation_sizes(MlpSpec{{8, 8}, 2, 3}, partition(3, 1), AuxPolicy::adapt(), 1), ConfigError);
}

TEST(ActivationSizesProperty, DoublingBatchDoublesActivations) {
  Gen g(61);
  for (int trial = 0; trial < 30; ++trial) {
    NetworkSpec spec;
    if (g.coin()) {
      std::vector<std::size_t> widths(g.size(1, 6));
      for (auto& w : widths) w = g.size(1, 64);
      spec = MlpSpec{widths, g.size(1, 5), g.size(2, 5)};
    } else {
      spec = ResNetSpec{6 * g.size(1, 4) + 2, g.size(2, 10), g.size(1, 3), g.size(4, 32)};
    }
    const std::size_t units = backbone_layout(spec).size() - 1, J = g.size(1, std::min<std::size_t>(units, 4));
    const std::size_t b = g.size(1, 8);
    auto one = activation_sizes(spec, partition(units, J), AuxPolicy::adapt(), b);
    auto two = activation_sizes(spec, partition(units, J), AuxPolicy::adapt(), 2 * b);
    for (std::size_t u = 0; u < one.unit_activations.size(); ++u)
      EXPECT_EQ(two.unit_activations[u], 2 * one.unit_activations[u]);
    for (std::size_t j = 0; j < J; ++j) {
      EXPECT_EQ(two.head_activations[j], 2 * one.head_activations[j]);
      EXPECT_EQ(two.block_params[j], one.block_params[j]);
    }
  }
}

// --- estimates --------------------------------------------------------------

TEST(EstimateBp, Toy) {
  MemProfile p{{10, 10, 10, 10}, Partition{1, {{0, 4}}}, {5}, {0}, {0}, 4};
  EXPECT_EQ(estimate_bp(p), 220u);
  EXPECT_EQ(estimate_bp(MemProfile{}), 0u);
  EXPECT_EQ(estimate_local(MemProfile{}, Partition{}), 0u);
}

TEST(EstimateBp, IgnoresHeads) {
  MemProfile p{{10, 10, 10, 10}, Partition{2, {{0, 2}, {2, 4}}}, {2, 3}, {100, 0}, {100, 0}, 4};
  EXPECT_EQ(estimate_bp(p), (40u + 15u) * 4u);
}

TEST(EstimateLocal, TwoBlockToy) {
  MemProfile p{{10, 10, 10, 10}, Partition{2, {{0, 2}, {2, 4}}}, {0, 0}, {0, 0}, {2, 2}, 4};
  EXPECT_EQ(estimate_local(p, p.blocks), 128u);
  EXPECT_EQ(estimate_bp(p), 160u);
  EXPECT_DOUBLE_EQ(static_cast<double>(estimate_local(p, p.blocks)) / static_cast<double>(estimate_bp(p)), 0.8);
  EXPECT_EQ(local_footprints(p, p.blocks), (std::vector<std::uint64_t>{88, 128}));
}

TEST(EstimateLocal, SingleBlockEqualsBp) {
  for (const NetworkSpec& spec : {NetworkSpec{ResNetSpec{32}}, NetworkSpec{ResNetSpec{110}},
                                  NetworkSpec{MlpSpec{std::vector<std::size_t>(8, 64), 2, 3}}}) {
    auto p = profile_of(spec, 1, 64);
    EXPECT_EQ(estimate_local(p, p.blocks), estimate_bp(p));
  }
}

TEST(EstimateLocal, PartitionBeyondProfileIsConfigError) {
  MemProfile p{{10, 10}, Partition{1, {{0, 2}}}, {0}, {0}, {0}, 4};
  EXPECT_THROW(local_footprints(p, Partition{1, {{0, 3}}}), ConfigError);
}

TEST(EstimateLocalProperty, MoreBlocksNeverIncreaseUniformEstimate) {
  Gen g(62);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = g.size(1, 40);
    const std::uint64_t acts = g.size(1, 10000), params = g.size(0, 10000);
    std::uint64_t prev = estimate_local(uniform_profile(n, 1, acts, params), partition(n, 1));
    for (std::size_t J = 2; J <= n; ++J) {
      auto p = uniform_profile(n, J, acts, params);
      std::uint64_t cur = estimate_local(p, p.blocks);
      EXPECT_LE(cur, prev) << "n=" << n << " J=" << J;
      prev = cur;
    }
  }
}

TEST(EstimateBpProperty, AdditiveOverConcatenation) {
  Gen g(63);
  for (int trial = 0; trial < 100; ++trial) {
    auto a = random_profile(g), b = random_profile(g);
    b.bytes_per_element = a.bytes_per_element;
    auto ab = concat(a, b);
    EXPECT_EQ(estimate_bp(ab), estimate_bp(a) + estimate_bp(b));
    EXPECT_EQ(ab.blocks.J, a.blocks.J + b.blocks.J);
  }
}

TEST(ScheduleAvg, GuidedFraction) {
  EXPECT_DOUBLE_EQ(guided_fraction(kGrid(10, 2)), 0.1875);
  auto p = profile_of(ResNetSpec{32}, 16, 1024);
  const double bp = static_cast<double>(estimate_bp(p)), local = static_cast<double>(estimate_local(p, p.blocks));
  EXPECT_DOUBLE_EQ(estimate_schedule_avg(p, p.blocks, kGrid(10, 2)), 0.1875 * bp + 0.8125 * local);
}

TEST(ScheduleAvg, BaselinesCollapseExactly) {
  auto p = profile_of(ResNetSpec{32}, 16, 1024);
  EXPECT_EQ(estimate_schedule_avg(p, p.blocks, Schedule{160, 10, 2, Regime::dgl}),
            static_cast<double>(estimate_local(p, p.blocks)));
  EXPECT_EQ(estimate_schedule_avg(p, p.blocks, Schedule{160, 10, 2, Regime::bp}), static_cast<double>(estimate_bp(p)));
  EXPECT_THROW(estimate_schedule_avg(p, p.blocks, kGrid(5, 5)), ConfigError);
}

TEST(ScheduleAvg, GridMonotonicity) {
  auto p = profile_of(ResNetSpec{32}, 16, 1024);
  const int Ps[] = {5, 10, 15, 20};
  for (int P : Ps)
    for (int Q = 2; Q <= 3; ++Q)
      EXPECT_GT(estimate_schedule_avg(p, p.blocks, kGrid(P, Q)), estimate_schedule_avg(p, p.blocks, kGrid(P, Q - 1)))
          << "P=" << P << " Q=" << Q;
  for (int Q = 1; Q <= 3; ++Q)
    for (int i = 1; i < 4; ++i)
      EXPECT_LT(estimate_schedule_avg(p, p.blocks, kGrid(Ps[i], Q)),
                estimate_schedule_avg(p, p.blocks, kGrid(Ps[i - 1], Q)))
          << "P=" << Ps[i] << " Q=" << Q;
}

TEST(Estimate, ShippedConfigsKeepLocalBelowBp) {
  for (std::size_t depth : {32u, 110u})
    for (std::size_t J : {1u, 2u, 4u, 8u, 16u}) {
      auto p = profile_of(ResNetSpec{depth}, J, 1024);
      auto e = estimate(p, kGrid(10, 2));
      EXPECT_LE(e.peak_local, e.peak_bp) << depth << " J=" << J;
      EXPECT_EQ(e.per_block.size(), J);
    }
}

// Narrow flat backbones are the exception: a 128-wide aux head outweighs a
// 64-wide block, and only the head terms push the local peak above BP.
TEST(Estimate, SpiralsMlpLocalPeakIsDrivenByHeads) {
  auto mlp = profile_of(MlpSpec{std::vector<std::size_t>(8, 64), 2, 3}, 4, 64);
  EXPECT_GT(estimate_local(mlp, mlp.blocks), estimate_bp(mlp));
  std::fill(mlp.head_params.begin(), mlp.head_params.end(), 0);
  std::fill(mlp.head_activations.begin(), mlp.head_activations.end(), 0);
  EXPECT_LE(estimate_local(mlp, mlp.blocks), estimate_bp(mlp));
}

TEST(EstimateProperty, WithoutHeadsLocalNeverExceedsBp) {
  Gen g(65);
  for (int trial = 0; trial < 200; ++trial) {
    auto p = random_profile(g);
    std::fill(p.head_params.begin(), p.head_params.end(), 0);
    std::fill(p.head_activations.begin(), p.head_activations.end(), 0);
    EXPECT_LE(estimate_local(p, p.blocks), estimate_bp(p));
  }
}

TEST(Estimate, ResNet32SixteenBlocksRatio) {
  auto e = estimate(profile_of(ResNetSpec{32}, 16, 1024), kGrid(10, 2));
  EXPECT_LE(static_cast<double>(e.peak_local) / static_cast<double>(e.peak_bp), 0.60);
  EXPECT_GT(e.schedule_avg, static_cast<double>(e.peak_local));
  EXPECT_LT(e.schedule_avg, static_cast<double>(e.peak_bp));
}

TEST(EstimateProperty, AverageLiesBetweenPeaks) {
  Gen g(64);
  for (int trial = 0; trial < 100; ++trial) {
    auto p = random_profile(g);
    int E = static_cast<int>(g.size(1, 200)), P = static_cast<int>(g.size(2, 30));
    Schedule s{E, P, static_cast<int>(g.size(1, static_cast<std::size_t>(P - 1))), Regime::pgl};
    auto e = estimate(p, s);
    const double lo = static_cast<double>(std::min(e.peak_local, e.peak_bp));
    const double hi = static_cast<double>(std::max(e.peak_local, e.peak_bp));
    EXPECT_GE(e.schedule_avg, lo);
    EXPECT_LE(e.schedule_avg, hi);
    auto again = estimate(p, s);
    EXPECT_EQ(again.schedule_avg, e.schedule_avg);
    EXPECT_EQ(again.per_block, e.per_block);
  }
}
