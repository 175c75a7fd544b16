#pragma once

#include <string>

#include "tuna/adapter.hpp"
#include "tuna/head.hpp"

namespace tuna {

// Which parameters train. tuna injects adapters and freezes the backbone;
// linear_probe trains the head on a vanilla frozen backbone; full_ft trains
// everything (no adapters).
enum class Preset { tuna, linear_probe, full_ft };

struct ModelConfig {
    BackboneConfig backbone;
    TunaConfig tuna;
    HeadConfig head;
    Preset preset = Preset::tuna;
    int32_t ignore_index = 255;
    uint64_t seed = 0;
    std::string init_checkpoint;  // optional externally converted weights

    void validate() const;
};

// Every parameter the configured model would instantiate, in registration
// order. Shape-only: usable for counting without allocating anything.
std::vector<ParamSpec> model_param_specs(const ModelConfig& cfg);

int64_t count_specs(const std::vector<ParamSpec>& specs);

// The freeze mask: does this preset train parameters of this component?
bool preset_trains(Preset preset, Component component);

class SegModel {
  public:
    static SegModel build(const ModelConfig& cfg);

    const ModelConfig& config() const { return cfg_; }
    ParamStore& store() { return store_; }
    const ParamStore& store() const { return store_; }
    bool has_adapters() const { return cfg_.preset == Preset::tuna; }

    StageFeatures backbone_features(const Tensor& image, bool training, Rng* rng) const;

    // Full forward pass: image [B,3,H,W] -> logits [B,K,out_h,out_w].
    Tensor forward_logits(const Tensor& image, int64_t out_h, int64_t out_w, bool training,
                          Rng* rng) const;

    int64_t count_params(ParamFilter filter) const { return store_.count_params(filter); }

  private:
    ModelConfig cfg_;
    ParamStore store_;
    BackboneParams backbone_;
    std::vector<std::vector<TunaBlockParams>> adapters_;
    HeadParams head_;
};

}  // namespace tuna
