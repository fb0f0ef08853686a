#pragma once

#include <memory>

#include "gnv3/config.hpp"
#include "gnv3/ghostnet.hpp"

namespace gnv3 {

// Model architecture <-> [model] section of an INI config.
void spec_to_ini(const ModelSpec& spec, IniFile& ini);
ModelSpec spec_from_ini(const IniFile& ini);

// Checkpoint format "GNV3": version, folded flag, embedded architecture
// config text, FNV-1a fingerprint of that text, then a named f32 tensor
// table covering every parameter and running statistic exactly once.
// Round-trips are bitwise lossless.
void save_checkpoint(Model& m, const std::string& path);
std::unique_ptr<Model> load_checkpoint(const std::string& path);

}  // namespace gnv3
