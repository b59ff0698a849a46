#pragma once

#include <memory>
#include <string>

#include "hula/env.hpp"

#ifndef HULA_MAPS_DIR
#define HULA_MAPS_DIR "maps"
#endif

namespace hula::test {

inline GridMap shipped(const std::string& name) { return load_map(std::string(HULA_MAPS_DIR) + "/" + name + ".map"); }

inline std::shared_ptr<const GridMap> shared(GridMap m) { return std::make_shared<const GridMap>(std::move(m)); }

inline EnvParams deterministic() {
  EnvParams p;
  p.psi = 1.0;
  return p;
}

}  // namespace hula::test
