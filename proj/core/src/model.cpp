#include "tuna/model.hpp"

#include "tuna/checkpoint.hpp"

namespace tuna {

void ModelConfig::validate() const {
    backbone.validate();
    tuna.validate();
    head.validate();
}

std::vector<ParamSpec> model_param_specs(const ModelConfig& cfg) {
    cfg.validate();
    std::vector<ParamSpec> specs = backbone_param_specs(cfg.backbone);
    if (cfg.preset == Preset::tuna) {
        auto adapter = tuna_param_specs(cfg.backbone, cfg.tuna);
        specs.insert(specs.end(), adapter.begin(), adapter.end());
    }
    auto head = head_param_specs(cfg.backbone, cfg.head);
    specs.insert(specs.end(), head.begin(), head.end());
    return specs;
}

int64_t count_specs(const std::vector<ParamSpec>& specs) {
    int64_t n = 0;
    for (const ParamSpec& s : specs) {
        n += numel_of(s.shape);
    }
    return n;
}

bool preset_trains(Preset preset, Component component) {
    switch (preset) {
        case Preset::tuna:
            return component != Component::backbone;
        case Preset::linear_probe:
            return component == Component::head;
        case Preset::full_ft:
            return true;
    }
    return false;
}

namespace {

void apply_preset(ParamStore& store, Preset preset) {
    for (ParamEntry& e : store.entries()) {
        const bool trainable = preset_trains(preset, e.component);
        e.trainable = trainable;
        e.tensor.set_requires_grad(trainable);
    }
}

}  // namespace

SegModel SegModel::build(const ModelConfig& cfg) {
    cfg.validate();
    SegModel model;
    model.cfg_ = cfg;

    // Separate init streams keep the backbone draw sequence identical with
    // and without adapters, so a neutralized injection is bit-comparable to
    // the vanilla model built from the same seed.
    Rng master(cfg.seed);
    Rng backbone_rng = master.fork(1);
    Rng tuna_rng = master.fork(2);
    Rng head_rng = master.fork(3);

    materialize_params(model.store_, backbone_param_specs(cfg.backbone), backbone_rng);
    if (cfg.preset == Preset::tuna) {
        inject_tuna(model.store_, cfg.backbone, cfg.tuna, tuna_rng);
    }
    materialize_params(model.store_, head_param_specs(cfg.backbone, cfg.head), head_rng);

    if (!cfg.init_checkpoint.empty()) {
        apply_matching_tensors(model.store_, load_checkpoint(cfg.init_checkpoint));
    }

    apply_preset(model.store_, cfg.preset);

    model.backbone_ = bind_backbone(model.store_, cfg.backbone);
    if (cfg.preset == Preset::tuna) {
        model.adapters_ = bind_tuna(model.store_, cfg.backbone);
    }
    model.head_ = bind_head(model.store_);
    return model;
}

StageFeatures SegModel::backbone_features(const Tensor& image, bool training, Rng* rng) const {
    BlockOverride override;
    if (has_adapters()) {
        override = [this, training, rng](int s, int b, const Tensor& z, int64_t h, int64_t w,
                                         bool shift) {
            return block_forward(z, backbone_.stages[s].blocks[b], adapters_[s][b],
                                 cfg_.tuna.structure, h, w, shift, cfg_.backbone.dropout_p,
                                 cfg_.tuna.dropout_p, training, rng)
                .z_out;
        };
    }
    return backbone_forward(image, backbone_, cfg_.backbone, training, rng, override);
}

Tensor SegModel::forward_logits(const Tensor& image, int64_t out_h, int64_t out_w, bool training,
                                Rng* rng) const {
    StageFeatures feats = backbone_features(image, training, rng);
    return head_forward(feats, head_, out_h, out_w);
}

}  // namespace tuna
