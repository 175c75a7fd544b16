#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "tuna/param_store.hpp"

namespace tuna {

struct Checkpoint {
    uint32_t version = 1;
    std::string config_text;
    uint64_t fingerprint = 0;
    std::vector<std::pair<std::string, Tensor>> tensors;  // ascending name order
};

// Container layout, all integers little-endian:
//   magic "TUNA" | u32 version | u64 config length | config bytes (UTF-8)
//   | u64 frozen-fingerprint | u32 entry count | entries...
// entry: u32 name length | name bytes | u32 rank | u64 dims[rank] | f64 data
//
// Only trainable tensors are stored; the fingerprint identifies the frozen
// backbone they belong to.
void save_checkpoint(const ParamStore& store, const std::string& config_text,
                     const std::filesystem::path& path);

Checkpoint load_checkpoint(const std::filesystem::path& path);

// Copies every checkpoint tensor onto the same-named store entry. The
// checkpoint fingerprint must equal the store's frozen fingerprint unless
// force is set. CompatError on mismatch, missing names, or shape conflicts.
void apply_checkpoint(ParamStore& store, const Checkpoint& ckpt, bool force = false);

// Copies any checkpoint tensors whose name and shape match a store entry,
// skipping the rest; returns the number applied. Used to seed a backbone
// from externally converted weights.
size_t apply_matching_tensors(ParamStore& store, const Checkpoint& ckpt);

}  // namespace tuna
