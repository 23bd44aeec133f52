#pragma once

// Model, loss and training configuration with JSON (de)serialization.
// Keys may be given nested ({"oem": {"k": 24}}) or dotted ({"oem.k": 24});
// unknown keys are rejected.

#include "seornet/core.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace seornet {

using json = nlohmann::json;

enum class NormKind { None, Layer };
enum class OptimizerKind { Adam, Sgd };

struct BackboneConfig {
  std::vector<int> widths{64, 64, 128, 256};
  int embedding = 512;
  int k_graph = 10;
  double slope = 0.2;
  /// Project the concatenation of all block outputs (stock DGCNN) rather
  /// than only the last block.
  bool concat_blocks = true;
};

struct OemConfig {
  int k = 24;
  int bins = 8;
  double gamma = 2.0;
  double grl_weight = 1.0;
  std::vector<int> encoder_widths{64, 128, 256};
  int fim_width = 256;
  int fim_k = 24;
  std::vector<int> head_widths{256, 128, 128};
  std::vector<int> disc_point_widths{512, 256, 128};
  std::vector<int> disc_global_widths{256, 128, 256};
  NormKind head_norm = NormKind::Layer;
  double slope = 0.2;
};

struct SelfEnsembleConfig {
  double ema_decay = 0.999;
  double ema_decay_start = 0.99;
  double ema_ramp_fraction = 0.1;
  bool ema_ramp = true;
  double beta = 1.0;
  double sigma = 0.1;
};

struct LossConfig {
  double lambda_cc = 1.0;
  double lambda_sc = 10.0;
  double l1 = 0.1;
  double l2 = 0.1;
  double l3 = 1.0;
  double l4 = 0.8;
  double l5 = 1.0;
  /// Non-positive means: use the mean squared kNN distance of the cloud.
  double alpha = 0.0;
  int k = 10;
  int reg_sign = -1;
};

/// Component switches mirroring the ablation study.
struct AblationConfig {
  bool transform = true;
  bool ccs = true;
  bool css = true;
  bool oem = true;
  bool fim = true;
  bool dam = true;
};

struct ModelConfig {
  BackboneConfig backbone;
  OemConfig oem;
};

struct TrainConfig {
  ModelConfig model;
  SelfEnsembleConfig se;
  LossConfig loss;
  AblationConfig ablation;
  int steps = 2000;
  int batch_size = 1;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::Adam;
  std::uint64_t seed = 1;
  std::string manifest;
  /// Points per cloud fed to the network; 0 keeps the files' size.
  int points = 0;
  int checkpoint_every = 0;
  bool double_precision = false;
  /// Train only the orientation classifier (angle loss).
  bool oem_only = false;

  void validate() const;
};

/// Small backbone used for CI-sized runs.
inline BackboneConfig desk_backbone() {
  BackboneConfig b;
  b.widths = {16, 16, 32, 64};
  b.embedding = 96;
  return b;
}

namespace detail {

inline std::string to_string(NormKind k) { return k == NormKind::Layer ? "layer" : "none"; }
inline std::string to_string(OptimizerKind k) { return k == OptimizerKind::Adam ? "adam" : "sgd"; }

template <class V>
void field_to_json(json& j, const V& v) {
  if constexpr (std::is_same_v<V, NormKind> || std::is_same_v<V, OptimizerKind>)
    j = to_string(v);
  else
    j = v;
}

template <class V>
void field_from_json(const json& j, V& v, const std::string& key) {
  try {
    if constexpr (std::is_same_v<V, NormKind>) {
      const auto s = j.get<std::string>();
      require(s == "layer" || s == "none", "expected 'layer' or 'none'");
      v = s == "layer" ? NormKind::Layer : NormKind::None;
    } else if constexpr (std::is_same_v<V, OptimizerKind>) {
      const auto s = j.get<std::string>();
      require(s == "adam" || s == "sgd", "expected 'adam' or 'sgd'");
      v = s == "adam" ? OptimizerKind::Adam : OptimizerKind::Sgd;
    } else {
      v = j.get<V>();
    }
  } catch (const json::exception& e) {
    fail("config key ", key, ": ", e.what());
  } catch (const Error& e) {
    fail("config key ", key, ": ", e.what());
  }
}

template <class F>
void for_each_field(TrainConfig& c, F&& f) {
  auto& b = c.model.backbone;
  f("backbone.widths", b.widths);
  f("backbone.embedding", b.embedding);
  f("backbone.k_graph", b.k_graph);
  f("backbone.slope", b.slope);
  f("backbone.concat_blocks", b.concat_blocks);
  auto& o = c.model.oem;
  f("oem.k", o.k);
  f("oem.bins", o.bins);
  f("oem.gamma", o.gamma);
  f("oem.grl_weight", o.grl_weight);
  f("oem.encoder_widths", o.encoder_widths);
  f("oem.fim_width", o.fim_width);
  f("oem.fim_k", o.fim_k);
  f("oem.head_widths", o.head_widths);
  f("oem.disc_point_widths", o.disc_point_widths);
  f("oem.disc_global_widths", o.disc_global_widths);
  f("oem.head_norm", o.head_norm);
  f("oem.slope", o.slope);
  auto& s = c.se;
  f("se.ema_decay", s.ema_decay);
  f("se.ema_decay_start", s.ema_decay_start);
  f("se.ema_ramp_fraction", s.ema_ramp_fraction);
  f("se.ema_ramp", s.ema_ramp);
  f("se.beta", s.beta);
  f("se.sigma", s.sigma);
  auto& l = c.loss;
  f("loss.lambda_cc", l.lambda_cc);
  f("loss.lambda_sc", l.lambda_sc);
  f("loss.l1", l.l1);
  f("loss.l2", l.l2);
  f("loss.l3", l.l3);
  f("loss.l4", l.l4);
  f("loss.l5", l.l5);
  f("loss.alpha", l.alpha);
  f("loss.k", l.k);
  f("loss.reg_sign", l.reg_sign);
  auto& a = c.ablation;
  f("ablation.transform", a.transform);
  f("ablation.ccs", a.ccs);
  f("ablation.css", a.css);
  f("ablation.oem", a.oem);
  f("ablation.fim", a.fim);
  f("ablation.dam", a.dam);
  f("train.steps", c.steps);
  f("train.batch_size", c.batch_size);
  f("train.learning_rate", c.learning_rate);
  f("train.optimizer", c.optimizer);
  f("train.seed", c.seed);
  f("train.manifest", c.manifest);
  f("train.points", c.points);
  f("train.checkpoint_every", c.checkpoint_every);
  f("train.double_precision", c.double_precision);
  f("train.oem_only", c.oem_only);
}

inline void flatten(const json& j, const std::string& prefix, std::map<std::string, json>& out) {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it)
      flatten(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key(), out);
  } else {
    out[prefix] = j;
  }
}

}  // namespace detail

inline void TrainConfig::validate() const {
  require(steps >= 1, "train.steps must be >= 1");
  require(batch_size >= 1, "train.batch_size must be >= 1");
  require(learning_rate > 0, "train.learning_rate must be > 0");
  require(model.backbone.widths.size() == 4, "backbone.widths must list exactly four blocks");
  require(model.backbone.k_graph >= 1, "backbone.k_graph must be >= 1");
  require(model.oem.bins >= 2, "oem.bins must be >= 2");
  require(model.oem.gamma > 1.0, "oem.gamma must be > 1");
  require(model.oem.encoder_widths.size() == 3, "oem.encoder_widths must list three blocks");
  require(se.ema_decay >= 0 && se.ema_decay <= 1, "se.ema_decay must lie in [0, 1]");
  require(se.beta > 0, "se.beta must be > 0");
  require(se.sigma >= 0, "se.sigma must be >= 0");
  require(loss.k >= 1, "loss.k must be >= 1");
  require(loss.reg_sign == 1 || loss.reg_sign == -1, "loss.reg_sign must be +1 or -1");
  for (double w : {loss.lambda_cc, loss.lambda_sc, loss.l1, loss.l2, loss.l3, loss.l4, loss.l5})
    require(w >= 0, "loss weights must be >= 0");
}

inline json to_json(const TrainConfig& c) {
  json j = json::object();
  auto copy = c;
  detail::for_each_field(copy, [&](const std::string& key, auto& v) {
    json leaf;
    detail::field_to_json(leaf, v);
    j[json::json_pointer("/" + [&] {
      std::string p = key;
      for (auto& ch : p)
        if (ch == '.') ch = '/';
      return p;
    }())] = leaf;
  });
  return j;
}

inline TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  std::map<std::string, json> flat;
  detail::flatten(j, "", flat);
  std::set<std::string> used;
  detail::for_each_field(c, [&](const std::string& key, auto& v) {
    auto it = flat.find(key);
    if (it == flat.end()) return;
    detail::field_from_json(it->second, v, key);
    used.insert(key);
  });
  for (const auto& [key, _] : flat) require(used.contains(key), "unknown config key ", key);
  c.validate();
  return c;
}

inline TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open config file ", path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail(path.string(), ": ", e.what());
  }
  return config_from_json(j);
}

}  // namespace seornet
