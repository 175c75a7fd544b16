#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tuna/tensor.hpp"

namespace tuna {

// Which part of the model a parameter belongs to. The trainable/frozen
// partition (the freeze mask) is defined per entry on top of this.
enum class Component { backbone, tuna, scales, head };

enum class ParamFilter { all, trainable, adapters_only };

struct ParamEntry {
    std::string name;
    Tensor tensor;
    Component component;
    bool trainable;
};

// Named, shaped parameter registry. Registration order is preserved;
// name-ordered iteration is used wherever byte determinism matters
// (fingerprints, checkpoints).
class ParamStore {
  public:
    Tensor add(const std::string& name, Tensor tensor, Component component, bool trainable);

    bool contains(const std::string& name) const;
    const ParamEntry& entry(const std::string& name) const;
    ParamEntry& entry(const std::string& name);
    Tensor get(const std::string& name) const;

    const std::vector<ParamEntry>& entries() const { return entries_; }
    std::vector<ParamEntry>& entries() { return entries_; }

    void set_trainable(const std::string& name, bool trainable);

    int64_t count_params(ParamFilter filter) const;

    // 64-bit FNV-1a over the raw little-endian bytes of every frozen tensor,
    // visited in ascending name order.
    uint64_t fingerprint_frozen() const;

    void zero_grads();

    // ContractError if any frozen tensor carries a nonzero gradient.
    void assert_frozen_clean() const;

  private:
    std::vector<ParamEntry> entries_;
    std::map<std::string, size_t> index_;
};

}  // namespace tuna
