#pragma once

#include "seornet/orientation.hpp"

namespace seornet {

/// Full network layout: correspondence backbone plus orientation module.
/// Parameter values live in a ParamStore so teacher and student share one
/// layout.
struct Model {
  ModelConfig config;
  Backbone backbone;
  OrientationModule oem;

  template <class T>
  static Model create(ParamStore<T>& store, const ModelConfig& cfg, std::uint64_t seed) {
    Model m;
    m.config = cfg;
    Rng rng(derive_seed(seed, 0xB0));
    m.backbone = Backbone::create(store, cfg.backbone, rng);
    Rng oem_rng(derive_seed(seed, 0x0E));
    m.oem = OrientationModule::create(store, cfg.oem, oem_rng);
    return m;
  }

  /// Parameter ids whose names start with `prefix`.
  template <class T>
  static std::vector<ParamId> params_with_prefix(const ParamStore<T>& store,
                                                 const std::string& prefix) {
    std::vector<ParamId> ids;
    for (ParamId i = 0; i < store.size(); ++i)
      if (store[i].name.rfind(prefix, 0) == 0) ids.push_back(i);
    return ids;
  }
};

}  // namespace seornet
