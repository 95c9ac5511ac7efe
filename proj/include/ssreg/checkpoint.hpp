#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "ssreg/params.hpp"

namespace ssreg {

// Binary checkpoint: "SSREG" magic, u32 format version, u32 array count, then
// per array: u32 name length, name bytes, u32 ndims, i32 dims, little-endian
// f32 values. Deterministic, so identical params produce identical bytes.
void save_checkpoint(const ParamStore<float>& params, const std::filesystem::path& path);
ParamStore<float> load_checkpoint(const std::filesystem::path& path);

// Structured text sidecar (sorted key=value lines) for optimizer and trainer
// scalars that accompany a checkpoint.
void save_sidecar(const std::map<std::string, std::string>& fields,
                  const std::filesystem::path& path);
std::map<std::string, std::string> load_sidecar(const std::filesystem::path& path);

}  // namespace ssreg
