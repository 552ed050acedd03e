#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "pgl/trainer.hpp"

namespace pgl {

/// Round-trippable rendering of a double.
inline std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string metrics_header(std::size_t J) {
  std::string h = "epoch,mode,lr,global_loss";
  for (std::size_t j = 1; j <= J; ++j) h += ",local_loss_" + std::to_string(j);
  return h + ",train_acc,test_acc";
}

/// One CSV row; absent values are left empty.
inline std::string metrics_row(const MetricsRecord& r) {
  auto opt = [](const std::optional<double>& v) { return v ? format_number(*v) : std::string(); };
  std::string row = std::to_string(r.epoch) + "," + std::string(to_string(r.mode)) + "," + format_number(r.lr) + "," +
                    opt(r.global_loss);
  for (const auto& l : r.local_losses) row += "," + opt(l);
  return row + "," + format_number(r.train_acc) + "," + format_number(r.test_acc);
}

inline void write_metrics_csv(std::ostream& out, const std::vector<MetricsRecord>& records, std::size_t J) {
  out << metrics_header(J) << '\n';
  for (const auto& r : records) out << metrics_row(r) << '\n';
}

inline void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRecord>& records,
                              std::size_t J) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  write_metrics_csv(out, records, J);
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace pgl
