#pragma once

// JSON run configurations. Every key is optional (defaults live in
// RunConfig), but unknown keys are rejected at every nesting level.

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <iterator>
#include <regex>
#include <set>
#include <string>
#include <string_view>

#include "json.hpp"
#include "pgl/trainer.hpp"

namespace pgl {

namespace detail {

using json = nlohmann::json;

inline void reject_unknown(const json& obj, const std::string& where, std::initializer_list<std::string_view> allowed) {
  if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (auto a : allowed) ok = ok || it.key() == a;
    if (!ok) throw ConfigError("unknown key '" + (where.empty() ? "" : where + ".") + it.key() + "'");
  }
}

template <class V>
void read(const json& obj, const std::string& where, const char* key, V& out) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  const std::string field = where.empty() ? std::string(key) : where + "." + key;
  try {
    if constexpr (std::is_unsigned_v<V>) {
      if (!it->is_number_integer() || it->template get<long long>() < 0)
        throw ConfigError("field '" + field + "' must be a non-negative integer");
    } else if constexpr (std::is_integral_v<V>) {
      if (!it->is_number_integer()) throw ConfigError("field '" + field + "' must be an integer");
    } else if constexpr (std::is_floating_point_v<V>) {
      if (!it->is_number()) throw ConfigError("field '" + field + "' must be a number");
    }
    out = it->template get<V>();
  } catch (const json::exception& e) {
    throw ConfigError("field '" + field + "' has the wrong type: " + e.what());
  }
}

inline AuxPolicy parse_aux(const std::string& s) {
  if (s == "aux_adapt" || s == "aux-adapt") return AuxPolicy::adapt();
  static const std::regex pattern("([0-9])conv-([0-9])fc", std::regex::icase);
  std::smatch m;
  if (!std::regex_match(s, m, pattern))
    throw ConfigError("field 'aux' must be 'aux_adapt' or '<n>conv-<m>fc', got '" + s + "'");
  return AuxPolicy::fixed(std::stoul(m[1]), std::stoul(m[2]));
}

inline NetworkSpec parse_network(const json& j) {
  if (!j.is_object()) throw ConfigError("network must be a JSON object");
  std::string kind = "mlp";
  read(j, "network", "kind", kind);
  if (kind == "mlp") {
    reject_unknown(j, "network", {"kind", "widths", "input_dim", "num_classes"});
    MlpSpec m;
    read(j, "network", "widths", m.widths);
    read(j, "network", "input_dim", m.input_dim);
    read(j, "network", "num_classes", m.num_classes);
    return m;
  }
  if (kind == "resnet") {
    reject_unknown(j, "network", {"kind", "depth", "num_classes", "input_channels", "input_hw"});
    ResNetSpec r;
    read(j, "network", "depth", r.depth);
    read(j, "network", "num_classes", r.num_classes);
    read(j, "network", "input_channels", r.input_channels);
    read(j, "network", "input_hw", r.input_hw);
    return r;
  }
  throw ConfigError("network.kind must be 'mlp' or 'resnet', got '" + kind + "'");
}

inline DatasetSpec parse_dataset(const json& j) {
  if (!j.is_object()) throw ConfigError("dataset must be a JSON object");
  std::string kind = "spirals";
  read(j, "dataset", "kind", kind);
  if (kind == "spirals") {
    reject_unknown(j, "dataset", {"kind", "n_per_class", "test_n_per_class", "classes", "noise", "seed"});
    SpiralsSpec s;
    read(j, "dataset", "n_per_class", s.n_per_class);
    read(j, "dataset", "test_n_per_class", s.test_n_per_class);
    read(j, "dataset", "classes", s.classes);
    read(j, "dataset", "noise", s.noise);
    read(j, "dataset", "seed", s.seed);
    return s;
  }
  if (kind == "blobs") {
    reject_unknown(j, "dataset", {"kind", "n_per_class", "test_n_per_class", "dim", "classes", "spread", "seed"});
    BlobsSpec b;
    read(j, "dataset", "n_per_class", b.n_per_class);
    read(j, "dataset", "test_n_per_class", b.test_n_per_class);
    read(j, "dataset", "dim", b.dim);
    read(j, "dataset", "classes", b.classes);
    read(j, "dataset", "spread", b.spread);
    read(j, "dataset", "seed", b.seed);
    return b;
  }
  if (kind == "idx") {
    reject_unknown(j, "dataset", {"kind", "train_images", "train_labels", "test_images", "test_labels", "mean", "std"});
    IdxSpec s;
    read(j, "dataset", "train_images", s.train_images);
    read(j, "dataset", "train_labels", s.train_labels);
    read(j, "dataset", "test_images", s.test_images);
    read(j, "dataset", "test_labels", s.test_labels);
    read(j, "dataset", "mean", s.mean);
    read(j, "dataset", "std", s.std);
    if (s.train_images.empty() || s.train_labels.empty() || s.test_images.empty() || s.test_labels.empty())
      throw ConfigError("idx dataset needs train_images, train_labels, test_images and test_labels");
    return s;
  }
  throw ConfigError("dataset.kind must be 'spirals', 'blobs' or 'idx', got '" + kind + "'");
}

}  // namespace detail

/// Parses and validates a config document. `source` names it in errors.
inline RunConfig parse_config_text(std::string_view text, const std::string& source = "<config>") {
  using detail::json;
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw ConfigError(source + ":" + std::to_string(line) + ":" + std::to_string(col) + ": JSON parse error: " +
                      e.what());
  }
  detail::reject_unknown(doc, "", {"network", "J", "aux", "regime", "E", "P", "Q", "lr0", "momentum", "weight_decay",
                                   "batch_size", "seed", "dataset", "augment", "out"});
  RunConfig cfg;
  if (auto it = doc.find("network"); it != doc.end()) cfg.network = detail::parse_network(*it);
  if (auto it = doc.find("dataset"); it != doc.end()) cfg.dataset = detail::parse_dataset(*it);
  if (auto it = doc.find("augment"); it != doc.end()) {
    detail::reject_unknown(*it, "augment", {"pad", "flip_prob"});
    detail::read(*it, "augment", "pad", cfg.augment.pad);
    detail::read(*it, "augment", "flip_prob", cfg.augment.flip_prob);
  }
  detail::read(doc, "", "J", cfg.J);
  std::string aux = "aux_adapt";
  detail::read(doc, "", "aux", aux);
  cfg.aux = detail::parse_aux(aux);
  std::string regime = "pgl";
  detail::read(doc, "", "regime", regime);
  cfg.schedule.regime = parse_regime(regime);
  detail::read(doc, "", "E", cfg.schedule.E);
  detail::read(doc, "", "P", cfg.schedule.P);
  detail::read(doc, "", "Q", cfg.schedule.Q);
  detail::read(doc, "", "lr0", cfg.lr0);
  detail::read(doc, "", "momentum", cfg.momentum);
  detail::read(doc, "", "weight_decay", cfg.weight_decay);
  detail::read(doc, "", "batch_size", cfg.batch_size);
  detail::read(doc, "", "seed", cfg.seed);
  detail::read(doc, "", "out", cfg.out_dir);
  cfg.validate();
  return cfg;
}

inline RunConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return parse_config_text(text, path.string());
}

}  // namespace pgl
