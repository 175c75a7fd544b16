#pragma once

#include <filesystem>
#include <iosfwd>

#include "tuna/dataset.hpp"
#include "tuna/metrics.hpp"
#include "tuna/model.hpp"
#include "tuna/optim.hpp"

namespace tuna {

struct TrainConfig {
    int64_t iters = 1000;
    int64_t batch = 4;
    int64_t crop = 32;
    uint64_t seed = 0;
    double lr = 1e-4;
    double weight_decay = 0.01;
    int64_t warmup_iters = 100;
    double min_lr_ratio = 0.0;
    int64_t eval_interval = 200;  // 0 disables periodic eval
    int64_t log_interval = 50;
    std::filesystem::path out_dir = "runs/default";
};

struct EvalResult {
    Metrics metrics;
    ConfusionMatrix confusion;
};

// Whole-image inference (dropout off, zero padding to window multiples inside
// the backbone); predictions are upsampled to each mask's resolution before
// accumulating the confusion matrix. ContractError on an empty dataset.
EvalResult evaluate(const SegModel& model, const Dataset& data);

struct TrainResult {
    double final_loss = 0.0;
    Metrics final_eval;
    std::filesystem::path checkpoint_path;
    std::filesystem::path log_path;
};

// Runs the PEFT loop: forward -> loss -> backward -> AdamW -> lr update, with
// dropout active everywhere during training. Writes a line-oriented metric
// log (`iter=<n> lr=<f> loss=<f> [mIoU=<f> mAcc=<f> aAcc=<f>]`) and a
// checkpoint holding only trainable tensors. NumericError on NaN loss,
// naming the first non-finite op.
TrainResult train(SegModel& model, const Dataset& data, const TrainConfig& cfg,
                  const std::string& config_text, std::ostream* echo = nullptr);

}  // namespace tuna
