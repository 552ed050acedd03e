#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <string_view>

#include "pgl/error.hpp"

namespace pgl {

enum class Regime { pgl, dgl, bp };
enum class Mode { Local, Guided };

inline std::string_view to_string(Regime r) {
  switch (r) {
    case Regime::pgl: return "pgl";
    case Regime::dgl: return "dgl";
    case Regime::bp: return "bp";
  }
  return "?";
}

inline std::string_view to_string(Mode m) { return m == Mode::Local ? "local" : "guided"; }

inline Regime parse_regime(std::string_view s) {
  if (s == "pgl") return Regime::pgl;
  if (s == "dgl") return Regime::dgl;
  if (s == "bp") return Regime::bp;
  throw ConfigError("unknown regime '" + std::string(s) + "' (expected pgl, dgl or bp)");
}

/// Guidance calendar: under pgl, epochs [kP, kP+Q) for k >= 1 are Guided.
/// Periods are absolute, so a guided stretch never shifts later periods.
struct Schedule {
  int E = 160;
  int P = 10;
  int Q = 2;
  Regime regime = Regime::pgl;

  /// P may exceed E (guidance then never fires); Q < P keeps every period
  /// with at least one local epoch.
  void validate() const {
    if (E < 1) throw ConfigError("E must be >= 1");
    if (regime != Regime::pgl) return;
    if (Q < 1) throw ConfigError("Q must be >= 1");
    if (P < 1) throw ConfigError("P must be >= 1");
    if (Q >= P) throw ConfigError("Q must be smaller than P (got Q=" + std::to_string(Q) + ", P=" + std::to_string(P) + ")");
  }
};

inline Mode mode_of_epoch(int e, const Schedule& s) {
  switch (s.regime) {
    case Regime::dgl: return Mode::Local;
    case Regime::bp: return Mode::Guided;
    case Regime::pgl: break;
  }
  if (e < s.P) return Mode::Local;
  return (e % s.P) < s.Q ? Mode::Guided : Mode::Local;
}

/// Number of Guided epochs in [0, E).
inline int guided_epoch_count(const Schedule& s) {
  switch (s.regime) {
    case Regime::dgl: return 0;
    case Regime::bp: return s.E;
    case Regime::pgl: break;
  }
  int count = 0;
  for (int k = 1; k * s.P < s.E; ++k) count += std::min(s.Q, s.E - k * s.P);
  return count;
}

/// Cosine annealing from lr0 at e = 0 towards 0 at e = E.
inline double lr_at(int e, int E, double lr0) {
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(e) / static_cast<double>(E)));
}

}  // namespace pgl
