#pragma once

#include <string>
#include <utility>
#include <vector>

#include "evtact/model.hpp"

namespace evt {

// Binary archive holding a JSON metadata block plus named f64 tensors.
// Layout: magic "EVTA1\n", u64 meta byte count, meta JSON, then per tensor a
// u32 name length, the name, u64 rows, u64 cols and row-major little-endian
// doubles. Numbers are little-endian.
struct Archive {
  std::string meta_json;
  std::vector<std::pair<std::string, Mat>> tensors;

  const Mat* find(const std::string& name) const;
};

void write_archive(const std::string& path, const Archive& a);
Archive read_archive(const std::string& path);

// Model-only checkpoint: configuration in the metadata, one tensor per
// parameter. Loading rebuilds the config and validates every stored shape.
void save_model(const std::string& path, const ModelConfig& cfg,
                const ModelParams& params);
void load_model(const std::string& path, ModelConfig& cfg, ModelParams& params);

}  // namespace evt
