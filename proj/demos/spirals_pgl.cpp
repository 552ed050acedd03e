// Trains the same small MLP on two-dimensional spirals under the three
// regimes and prints the final test accuracy of each.

#include <iostream>

#include "pgl/pgl.hpp"

int main() {
  pgl::RunConfig cfg;
  cfg.network = pgl::MlpSpec{std::vector<std::size_t>(8, 64), 2, 3};
  cfg.dataset = pgl::SpiralsSpec{256, 1000, 3, 0.05, 1};
  cfg.J = 4;
  cfg.lr0 = 0.1;
  cfg.batch_size = 64;
  cfg.schedule.E = 30;
  cfg.schedule.P = 5;
  cfg.schedule.Q = 1;
  auto data = pgl::load_data(cfg);

  for (auto regime : {pgl::Regime::dgl, pgl::Regime::pgl, pgl::Regime::bp}) {
    cfg.schedule.regime = regime;
    auto result = pgl::train(cfg, data);
    std::cout << pgl::to_string(regime) << ": test accuracy " << result.metrics.back().test_acc << "\n";
  }
}
