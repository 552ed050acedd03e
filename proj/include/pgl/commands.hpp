#pragma once

// Subcommands behind the `pgl` executable. Each returns a process exit code
// and writes human-readable output to the given stream; `run_cli` parses an
// argv and maps exceptions to exit codes.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pgl/checkpoint.hpp"
#include "pgl/config.hpp"
#include "pgl/gradcheck.hpp"
#include "pgl/memory_model.hpp"
#include "pgl/metrics_io.hpp"
#include "pgl/trainer.hpp"

namespace pgl {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailed = 1,  // a check did not pass
  kExitUsage = 2,   // bad arguments or config
  kExitIo = 3,
  kExitData = 4,    // malformed dataset or checkpoint
  kExitInternal = 5,
};

inline std::size_t partitionable_units(const NetworkSpec& net) { return backbone_layout(net).size() - 1; }

/// Creates `dir` and checks that files can be written into it.
inline void prepare_out_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  auto probe = dir / ".write_probe";
  {
    std::ofstream f(probe);
    if (!f) throw IoError("output directory " + dir.string() + " is not writable");
  }
  std::filesystem::remove(probe, ec);
}

inline int cmd_train(const RunConfig& cfg, std::ostream& out) {
  cfg.validate();
  const std::filesystem::path dir = cfg.out_dir;
  prepare_out_dir(dir);
  auto result = train(cfg);
  write_metrics_csv(dir / "metrics.csv", result.metrics, result.model.J());
  save_checkpoint(result.model, result.optimizer, cfg.schedule.E, dir / "final.ckpt");
  const double acc = result.metrics.empty() ? evaluate(result.model, load_data(cfg).test) : result.metrics.back().test_acc;
  out << "final test accuracy: " << std::fixed << std::setprecision(4) << acc << "\n";
  out.unsetf(std::ios::floatfield);
  return kExitOk;
}

inline int cmd_eval(const RunConfig& cfg, const std::filesystem::path& ckpt, std::ostream& out) {
  cfg.validate();
  auto ck = load_checkpoint(ckpt);
  auto model = model_for(cfg);
  const int epoch = apply_checkpoint(ck, model);
  auto data = load_data(cfg);
  out << "epoch: " << epoch << "\n"
      << "train accuracy: " << std::fixed << std::setprecision(4) << evaluate(model, data.train) << "\n"
      << "test accuracy: " << evaluate(model, data.test) << "\n";
  out.unsetf(std::ios::floatfield);
  return kExitOk;
}

inline int cmd_gradcheck(std::ostream& out, const std::vector<GradCase>& cases = default_grad_cases()) {
  auto results = run_gradcheck_suite(cases, 5, 20240601, &out);
  const bool ok = all_passed(results);
  out << (ok ? "gradcheck: all ops pass\n" : "gradcheck: FAILED\n");
  return ok ? kExitOk : kExitFailed;
}

inline MemProfile profile_for(const RunConfig& cfg) {
  cfg.validate();
  return activation_sizes(cfg.network, partition(partitionable_units(cfg.network), cfg.J), cfg.aux, cfg.batch_size);
}

inline int cmd_memest(const RunConfig& cfg, bool csv, std::ostream& out) {
  auto m = estimate(profile_for(cfg), cfg.schedule);
  const double bp = static_cast<double>(m.peak_bp);
  const double local_ratio = static_cast<double>(m.peak_local) / bp;
  const double avg_ratio = m.schedule_avg / bp;
  if (csv) {
    out << "peak_bp,peak_local,schedule_avg,local_over_bp,avg_over_bp\n"
        << m.peak_bp << "," << m.peak_local << "," << format_number(m.schedule_avg) << ","
        << format_number(local_ratio) << "," << format_number(avg_ratio) << "\n";
    return kExitOk;
  }
  auto mib = [](double bytes) { return bytes / (1024.0 * 1024.0); };
  out << std::fixed << std::setprecision(2) << "peak_bp:       " << m.peak_bp << " bytes (" << mib(bp) << " MiB)\n"
      << "peak_local:    " << m.peak_local << " bytes (" << mib(static_cast<double>(m.peak_local)) << " MiB)\n"
      << "schedule_avg:  " << mib(m.schedule_avg) << " MiB (" << to_string(cfg.schedule.regime)
      << ", guided fraction " << guided_fraction(cfg.schedule) << ")\n"
      << std::setprecision(4) << "local/bp:      " << local_ratio << "\n"
      << "avg/bp:        " << avg_ratio << "\n";
  out.unsetf(std::ios::floatfield);
  return kExitOk;
}

struct AblationRow {
  Regime regime = Regime::pgl;
  int P = 0;
  int Q = 0;
  std::uint64_t seed = 0;
  double train_acc = 0.0;
  double test_acc = 0.0;
};

struct AblationResult {
  std::vector<AblationRow> rows;      // one per (P, Q, seed)
  std::vector<AblationRow> dgl_rows;  // one per seed
};

/// Runs PGL over the (P, Q) grid plus a DGL reference, seeds cfg.seed .. cfg.seed + n_seeds - 1.
inline AblationResult run_ablation(const RunConfig& base, const std::vector<int>& Ps, const std::vector<int>& Qs,
                                   int n_seeds, std::ostream* log = nullptr) {
  if (Ps.empty()) throw ConfigError("P list is empty");
  if (Qs.empty()) throw ConfigError("Q list is empty");
  if (n_seeds < 1) throw ConfigError("seeds must be >= 1");
  for (int P : Ps)
    for (int Q : Qs) {
      Schedule s{base.schedule.E, P, Q, Regime::pgl};
      try {
        s.validate();
      } catch (const ConfigError& e) {
        throw ConfigError("ablation pair P=" + std::to_string(P) + ", Q=" + std::to_string(Q) + ": " + e.what());
      }
    }
  base.validate();
  const auto data = load_data(base);

  AblationResult result;
  auto run = [&](Regime regime, int P, int Q, std::uint64_t seed) {
    RunConfig cfg = base;
    cfg.seed = seed;
    cfg.schedule = regime == Regime::pgl ? Schedule{base.schedule.E, P, Q, regime}
                                         : Schedule{base.schedule.E, base.schedule.P, base.schedule.Q, regime};
    try {
      auto r = train(cfg, data);
      AblationRow row{regime, P, Q, seed, r.metrics.back().train_acc, r.metrics.back().test_acc};
      if (log)
        *log << to_string(regime) << " P=" << P << " Q=" << Q << " seed=" << seed << " test_acc=" << row.test_acc
             << "\n";
      return row;
    } catch (const Error& e) {
      throw Error("ablation run " + std::string(to_string(regime)) + " P=" + std::to_string(P) +
                  " Q=" + std::to_string(Q) + " seed=" + std::to_string(seed) + " failed: " + e.what());
    }
  };
  for (int s = 0; s < n_seeds; ++s) {
    const std::uint64_t seed = base.seed + static_cast<std::uint64_t>(s);
    for (int Q : Qs)
      for (int P : Ps) result.rows.push_back(run(Regime::pgl, P, Q, seed));
    result.dgl_rows.push_back(run(Regime::dgl, 0, 0, seed));
  }
  return result;
}

inline double mean_test_acc(const std::vector<AblationRow>& rows, int P, int Q) {
  double sum = 0.0;
  int n = 0;
  for (const auto& r : rows)
    if (r.P == P && r.Q == Q) {
      sum += r.test_acc;
      ++n;
    }
  return n ? sum / n : 0.0;
}

inline void write_ablation_csv(std::ostream& out, const AblationResult& a) {
  out << "regime,P,Q,seed,train_acc,test_acc\n";
  auto row = [&](const AblationRow& r) {
    out << to_string(r.regime) << "," << r.P << "," << r.Q << "," << r.seed << "," << format_number(r.train_acc) << ","
        << format_number(r.test_acc) << "\n";
  };
  for (const auto& r : a.rows) row(r);
  for (const auto& r : a.dgl_rows) row(r);
}

/// Mean test accuracy (%) with Q down the rows and P across the columns,
/// followed by the DGL reference.
inline void write_ablation_summary(std::ostream& out, const AblationResult& a, const std::vector<int>& Ps,
                                   const std::vector<int>& Qs) {
  out << std::fixed << std::setprecision(2) << std::setw(8) << "";
  for (int P : Ps) out << std::setw(10) << ("P=" + std::to_string(P));
  out << "\n";
  for (int Q : Qs) {
    out << std::setw(8) << ("Q=" + std::to_string(Q));
    for (int P : Ps) out << std::setw(10) << 100.0 * mean_test_acc(a.rows, P, Q);
    out << "\n";
  }
  out << std::setw(8) << "DGL" << std::setw(10) << 100.0 * mean_test_acc(a.dgl_rows, 0, 0) << "\n";
  out.unsetf(std::ios::floatfield);
}

inline int cmd_ablate(const RunConfig& cfg, const std::vector<int>& Ps, const std::vector<int>& Qs, int n_seeds,
                      std::ostream& out) {
  const std::filesystem::path dir = cfg.out_dir;
  if (Ps.empty() || Qs.empty()) throw ConfigError("P and Q lists must be non-empty");
  prepare_out_dir(dir);
  auto result = run_ablation(cfg, Ps, Qs, n_seeds, &out);
  {
    std::ofstream f(dir / "ablation.csv", std::ios::binary);
    if (!f) throw IoError("cannot write " + (dir / "ablation.csv").string());
    write_ablation_csv(f, result);
  }
  std::ostringstream table;
  write_ablation_summary(table, result, Ps, Qs);
  std::ofstream(dir / "summary.txt", std::ios::binary) << table.str();
  out << table.str();
  return kExitOk;
}

/// Parses argv and dispatches. Errors go to `err`.
inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Periodically guided local learning"};
  app.require_subcommand(1);

  std::string config_path, ckpt_path, out_dir;
  long long seed = -1;
  bool csv = false;
  std::vector<int> Ps{5, 10, 15, 20}, Qs{1, 2, 3};
  int n_seeds = 3;

  auto* train_cmd = app.add_subcommand("train", "train one configuration");
  train_cmd->add_option("--config", config_path, "JSON config")->required();
  train_cmd->add_option("--seed", seed, "override the config seed");
  train_cmd->add_option("--out", out_dir, "override the output directory");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  eval_cmd->add_option("--config", config_path, "JSON config")->required();

  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of every op");

  auto* mem_cmd = app.add_subcommand("memest", "analytic memory estimate");
  mem_cmd->add_option("--config", config_path, "JSON config")->required();
  mem_cmd->add_flag("--csv", csv, "print CSV");

  auto* ablate_cmd = app.add_subcommand("ablate", "grid over guidance period and duration");
  ablate_cmd->add_option("--config", config_path, "JSON config")->required();
  ablate_cmd->add_option("--P", Ps, "comma-separated periods")->delimiter(',');
  ablate_cmd->add_option("--Q", Qs, "comma-separated durations")->delimiter(',');
  ablate_cmd->add_option("--seeds", n_seeds, "number of seeds");
  ablate_cmd->add_option("--out", out_dir, "override the output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (grad_cmd->parsed()) return cmd_gradcheck(out);
    RunConfig cfg = parse_config(config_path);
    if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (train_cmd->parsed()) return cmd_train(cfg, out);
    if (eval_cmd->parsed()) return cmd_eval(cfg, ckpt_path, out);
    if (mem_cmd->parsed()) return cmd_memest(cfg, csv, out);
    if (ablate_cmd->parsed()) return cmd_ablate(cfg, Ps, Qs, n_seeds, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const CorruptionError& e) {
    err << "corrupt checkpoint: " << e.what() << "\n";
    return kExitData;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitUsage;
}

}  // namespace pgl
