#include "tuna/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "tuna/checkpoint.hpp"

namespace tuna {

namespace {

std::string format_metric_line(int64_t iter, double lr, double loss, const Metrics* m) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "iter=%lld lr=%.8g loss=%.8g",
                  static_cast<long long>(iter), lr, loss);
    std::string line(buf);
    if (m) {
        std::snprintf(buf, sizeof(buf), " mIoU=%.6f mAcc=%.6f aAcc=%.6f", m->miou, m->macc,
                      m->aacc);
        line += buf;
    }
    return line;
}

}  // namespace

EvalResult evaluate(const SegModel& model, const Dataset& data) {
    if (data.empty()) {
        throw ContractError("evaluate: empty dataset");
    }
    const int64_t k = model.config().head.num_classes;
    const int32_t ignore = model.config().ignore_index;
    ConfusionMatrix cm(k);
    for (const SampleRecord& rec : data.samples) {
        const int64_t h = rec.image.dim(1);
        const int64_t w = rec.image.dim(2);
        Tensor image = reshape(rec.image, {1, 3, h, w});
        Tensor logits = model.forward_logits(image, h, w, /*training=*/false, nullptr);
        const IntGrid pred = argmax_channel(logits)[0];
        cm.add_grid(rec.mask, pred, ignore);
    }
    return EvalResult{compute_metrics(cm), cm};
}

TrainResult train(SegModel& model, const Dataset& data, const TrainConfig& cfg,
                  const std::string& config_text, std::ostream* echo) {
    if (cfg.iters > 0 && data.empty()) {
        throw ContractError("train: empty dataset");
    }
    if (cfg.batch < 1) {
        throw ConfigError("train: batch must be >= 1");
    }
    std::filesystem::create_directories(cfg.out_dir);
    const std::filesystem::path log_path = cfg.out_dir / "metrics.log";
    const std::filesystem::path ckpt_path = cfg.out_dir / "checkpoint.tuna";
    std::ofstream log(log_path, std::ios::trunc);
    if (!log) {
        throw IoError("cannot open metric log '" + log_path.string() + "'");
    }
    auto emit = [&](const std::string& line) {
        log << line << '\n';
        if (echo) {
            (*echo) << line << '\n';
        }
    };

    Rng master(cfg.seed);
    Rng data_rng = master.fork(4);
    Rng train_rng = master.fork(5);

    AdamWConfig opt_cfg;
    opt_cfg.base_lr = cfg.lr;
    opt_cfg.weight_decay = cfg.weight_decay;
    AdamW opt(model.store(), opt_cfg);

    Schedule sched;
    sched.total_iters = cfg.iters;
    sched.warmup_iters = std::min(cfg.warmup_iters, cfg.iters);
    sched.min_lr_ratio = cfg.min_lr_ratio;

    const int32_t ignore = model.config().ignore_index;
    double last_loss = 0.0;
    double last_lr = 0.0;
    bool have_loss = false;

    for (int64_t it = 0; it < cfg.iters; ++it) {
        std::vector<const SampleRecord*> picks;
        for (int64_t i = 0; i < cfg.batch; ++i) {
            picks.push_back(
                &data.samples[static_cast<size_t>(data_rng.uniform_int(0, data.size() - 1))]);
        }
        Batch batch = assemble_batch(picks, cfg.crop, ignore);

        Graph graph;
        Tensor logits =
            model.forward_logits(batch.images, cfg.crop, cfg.crop, /*training=*/true, &train_rng);
        Tensor loss = cross_entropy(logits, batch.masks, ignore);
        last_loss = loss.item();
        have_loss = true;
        if (!std::isfinite(last_loss)) {
            const auto op = graph.first_nonfinite_op();
            throw NumericError("train: non-finite loss at iteration " + std::to_string(it) +
                               (op ? " (first non-finite op: " + *op + ")" : ""));
        }
        graph.backward(loss);
        last_lr = cosine_lr(it, sched, cfg.lr);
        opt.step(model.store(), last_lr);

        const int64_t done = it + 1;
        const bool log_now = cfg.log_interval > 0 && done % cfg.log_interval == 0;
        const bool eval_now = cfg.eval_interval > 0 && done % cfg.eval_interval == 0;
        if (log_now || eval_now) {
            if (eval_now) {
                const Metrics m = evaluate(model, data).metrics;
                emit(format_metric_line(done, last_lr, last_loss, &m));
            } else {
                emit(format_metric_line(done, last_lr, last_loss, nullptr));
            }
        }
    }

    if (!have_loss && !data.empty()) {
        // Zero-iteration run: log the inference-mode loss at initialization.
        std::vector<const SampleRecord*> picks;
        for (size_t i = 0; i < std::min<size_t>(data.size(), static_cast<size_t>(cfg.batch));
             ++i) {
            picks.push_back(&data.samples[i]);
        }
        Batch batch = assemble_batch(picks, cfg.crop, ignore);
        Tensor logits =
            model.forward_logits(batch.images, cfg.crop, cfg.crop, /*training=*/false, nullptr);
        last_loss = cross_entropy(logits, batch.masks, ignore).item();
    }

    TrainResult result;
    result.final_loss = last_loss;
    if (!data.empty()) {
        result.final_eval = evaluate(model, data).metrics;
        emit(format_metric_line(cfg.iters, last_lr, last_loss, &result.final_eval));
    }
    save_checkpoint(model.store(), config_text, ckpt_path);
    result.checkpoint_path = ckpt_path;
    result.log_path = log_path;
    return result;
}

}  // namespace tuna
