#pragma once

#include <map>
#include <string>

#include "selrank/param_store.hpp"

namespace selrank {

// Named-tensor container shared by ranker and selector checkpoints: a plain
// text header of (name, shape, offset) entries plus a config section,
// followed by the concatenated little-endian float32 payloads in header
// order. Values are narrowed f64 -> f32 on save; round-trips are bit-exact
// at f32 width.
void save_checkpoint(const std::string& path, const ParameterStore& params,
                     const std::map<std::string, std::string>& config);

// Loads parameters into `out` (which must be empty) and returns the config
// section.
std::map<std::string, std::string> load_checkpoint(const std::string& path,
                                                   ParameterStore& out);

}  // namespace selrank
