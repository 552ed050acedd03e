// Estimated training memory of ResNet-32 and ResNet-110 at batch 1024 for
// several partition counts.

#include <iomanip>
#include <iostream>

#include "pgl/pgl.hpp"

int main() {
  const pgl::Schedule schedule{160, 10, 2, pgl::Regime::pgl};
  std::cout << std::fixed << std::setprecision(3) << "depth   J   bp(GiB)  local(GiB)  pgl_avg(GiB)\n";
  for (std::size_t depth : {32, 110}) {
    pgl::ResNetSpec net{depth, 10, 3, 32};
    for (std::size_t J : {1, 4, 8, 16}) {
      auto part = pgl::partition(pgl::partitionable_units(net), J);
      auto est = pgl::estimate(pgl::activation_sizes(net, part, pgl::AuxPolicy::adapt(), 1024), schedule);
      const double gib = 1024.0 * 1024.0 * 1024.0;
      std::cout << std::setw(5) << depth << std::setw(4) << J << std::setw(10) << est.peak_bp / gib << std::setw(12)
                << est.peak_local / gib << std::setw(14) << est.schedule_avg / gib << "\n";
    }
  }
}
