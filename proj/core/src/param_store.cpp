#include "tuna/param_store.hpp"

#include <algorithm>
#include <cstring>

#include "tuna/errors.hpp"

namespace tuna {

Tensor ParamStore::add(const std::string& name, Tensor tensor, Component component,
                       bool trainable) {
    if (index_.count(name)) {
        throw ContractError("ParamStore: duplicate parameter name '" + name + "'");
    }
    tensor.set_requires_grad(trainable);
    index_[name] = entries_.size();
    entries_.push_back(ParamEntry{name, tensor, component, trainable});
    return tensor;
}

bool ParamStore::contains(const std::string& name) const {
    return index_.count(name) > 0;
}

const ParamEntry& ParamStore::entry(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) {
        throw ContractError("ParamStore: unknown parameter '" + name + "'");
    }
    return entries_[it->second];
}

ParamEntry& ParamStore::entry(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) {
        throw ContractError("ParamStore: unknown parameter '" + name + "'");
    }
    return entries_[it->second];
}

Tensor ParamStore::get(const std::string& name) const {
    return entry(name).tensor;
}

void ParamStore::set_trainable(const std::string& name, bool trainable) {
    ParamEntry& e = entry(name);
    e.trainable = trainable;
    e.tensor.set_requires_grad(trainable);
}

int64_t ParamStore::count_params(ParamFilter filter) const {
    int64_t n = 0;
    for (const ParamEntry& e : entries_) {
        switch (filter) {
            case ParamFilter::all:
                n += e.tensor.numel();
                break;
            case ParamFilter::trainable:
                if (e.trainable) n += e.tensor.numel();
                break;
            case ParamFilter::adapters_only:
                if (e.component == Component::tuna || e.component == Component::scales) {
                    n += e.tensor.numel();
                }
                break;
        }
    }
    return n;
}

uint64_t ParamStore::fingerprint_frozen() const {
    std::vector<const ParamEntry*> frozen;
    for (const ParamEntry& e : entries_) {
        if (!e.trainable) {
            frozen.push_back(&e);
        }
    }
    std::sort(frozen.begin(), frozen.end(),
              [](const ParamEntry* a, const ParamEntry* b) { return a->name < b->name; });
    uint64_t hash = 14695981039346656037ULL;
    for (const ParamEntry* e : frozen) {
        for (double v : e->tensor.data()) {
            uint64_t bits;
            std::memcpy(&bits, &v, sizeof(bits));
            for (int byte = 0; byte < 8; ++byte) {
                hash ^= (bits >> (8 * byte)) & 0xffULL;
                hash *= 1099511628211ULL;
            }
        }
    }
    return hash;
}

void ParamStore::zero_grads() {
    for (ParamEntry& e : entries_) {
        e.tensor.zero_grad();
    }
}

void ParamStore::assert_frozen_clean() const {
    for (const ParamEntry& e : entries_) {
        if (e.trainable || !e.tensor.has_grad()) {
            continue;
        }
        for (double g : e.tensor.grad()) {
            if (g != 0.0) {
                throw ContractError("freeze mask violated: frozen parameter '" + e.name +
                                    "' received a gradient");
            }
        }
    }
}

}  // namespace tuna
