#pragma once

// Training recipe: combined BCE + soft-Jaccard loss, ADAM, learning-rate
// reduction on plateau, early stopping, and the epoch loop.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "blastoseg/data.hpp"
#include "blastoseg/errors.hpp"
#include "blastoseg/model.hpp"
#include "blastoseg/ops.hpp"
#include "blastoseg/tensor.hpp"

namespace blastoseg {

struct TrainConfig {
    int batch_size = 16;
    int max_epochs = 200;
    double lr0 = 1e-4;
    double lr_factor = 0.95;       // 5% reduction
    int lr_patience = 5;           // epochs without improvement
    int early_stop_patience = 15;  // epochs without improvement
    double threshold = 0.5;        // final prediction binarization
    std::uint64_t seed = 0;
    double min_delta = 1e-8;       // improvement = strict decrease beyond this

    void validate() const {
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
        if (lr0 <= 0.0) throw ConfigError("lr0 must be positive");
        if (lr_factor <= 0.0 || lr_factor >= 1.0) throw ConfigError("lr_factor must be in (0,1)");
        if (lr_patience < 1 || early_stop_patience < 1)
            throw ConfigError("patience values must be >= 1");
        if (threshold <= 0.0 || threshold >= 1.0) throw ConfigError("threshold must be in (0,1)");
    }
};

// ---------------------------------------------------------------------
// Combined loss: mean binary cross entropy over all elements plus
// (1 - softJaccard), with the soft Jaccard pooled over the whole batch:
//   softJaccard = (sum p*g + eps) / (sum p + sum g - sum p*g + eps).
// Probabilities are clamped to [1e-7, 1-1e-7] before the logs.
// ---------------------------------------------------------------------
template <typename T>
Tensor<T> loss_bce_jaccard(const Tensor<T>& pred, const Tensor<T>& target,
                           Tape<T>* tape = nullptr) {
    if (!pred.same_shape(target))
        throw DimensionError("loss_bce_jaccard: shape mismatch " + shape_str(pred.shape()) +
                             " vs " + shape_str(target.shape()));
    const index_t n = pred.numel();
    const T clamp_lo = T(1e-7), clamp_hi = T(1) - T(1e-7);
    const T eps = T(1e-7);
    const T* p = pred.data();
    const T* g = target.data();

    T bce_acc = T(0), inter = T(0), psum = T(0), gsum = T(0);
    for (index_t i = 0; i < n; ++i) {
        const T pc = std::min(std::max(p[i], clamp_lo), clamp_hi);
        bce_acc += g[i] * std::log(pc) + (T(1) - g[i]) * std::log(T(1) - pc);
        inter += p[i] * g[i];
        psum += p[i];
        gsum += g[i];
    }
    const T bce = -bce_acc / static_cast<T>(n);
    const T uni = psum + gsum - inter;
    const T soft_jaccard = (inter + eps) / (uni + eps);
    Tensor<T> out = Tensor<T>::scalar(bce + (T(1) - soft_jaccard));

    if (tape) {
        const int p_id = tape->track(pred);
        if (p_id >= 0) {
            tape->record(out, {p_id}, [=, pv = pred, gv = target](const T* gout, Tape<T>& t) {
                T* gp = t.grad_buffer(p_id);
                const T* pp = pv.data();
                const T* gg = gv.data();
                const T go = gout[0];
                const T inv_n = T(1) / static_cast<T>(n);
                const T denom = uni + eps;
                const T num = inter + eps;
                for (index_t i = 0; i < n; ++i) {
                    T d = T(0);
                    if (pp[i] > clamp_lo && pp[i] < clamp_hi)
                        d += inv_n * (pp[i] - gg[i]) / (pp[i] * (T(1) - pp[i]));
                    // d(1 - J)/dp_i with dI/dp = g, dU/dp = 1 - g
                    d -= (gg[i] * denom - num * (T(1) - gg[i])) / (denom * denom);
                    gp[i] += go * d;
                }
            });
        }
    }
    return out;
}

// ---------------------------------------------------------------------
// ADAM with bias correction (beta1 0.9, beta2 0.999, eps 1e-8).
// ---------------------------------------------------------------------
template <typename T>
struct AdamState {
    std::vector<std::vector<T>> m, v;
    long step = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    void init(const std::vector<std::pair<std::string, Tensor<T>>>& params) {
        m.clear();
        v.clear();
        for (const auto& [name, t] : params) {
            m.emplace_back(static_cast<std::size_t>(t.numel()), T(0));
            v.emplace_back(static_cast<std::size_t>(t.numel()), T(0));
        }
        step = 0;
    }
};

template <typename T>
void adam_step(std::vector<std::pair<std::string, Tensor<T>>>& params,
               const std::vector<Tensor<T>>& grads, AdamState<T>& state, double lr) {
    if (params.size() != grads.size() || params.size() != state.m.size())
        throw DimensionError("adam_step: parameter/gradient/state count mismatch");
    ++state.step;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor<T>& w = params[k].second;
        const Tensor<T>& g = grads[k];
        if (!g.same_shape(w))
            throw DimensionError("adam_step: gradient shape mismatch for '" + params[k].first + "'");
        if (!g.all_finite())
            throw NumericError("adam_step: non-finite gradient for parameter '" + params[k].first +
                               "' at step " + std::to_string(state.step));
        T* mk = state.m[k].data();
        T* vk = state.v[k].data();
        const T* gd = g.data();
        T* wd = w.data();
        const T b1 = static_cast<T>(state.beta1), b2 = static_cast<T>(state.beta2);
        for (index_t i = 0; i < w.numel(); ++i) {
            mk[i] = b1 * mk[i] + (T(1) - b1) * gd[i];
            vk[i] = b2 * vk[i] + (T(1) - b2) * gd[i] * gd[i];
            const double mhat = static_cast<double>(mk[i]) / bc1;
            const double vhat = static_cast<double>(vk[i]) / bc2;
            wd[i] = static_cast<T>(static_cast<double>(wd[i]) -
                                   lr * mhat / (std::sqrt(vhat) + state.eps));
        }
    }
}

// ---------------------------------------------------------------------
// Plateau tracking shared by the LR schedule and early stopping; each
// keeps its own counter.
// ---------------------------------------------------------------------
struct PlateauTracker {
    double best = std::numeric_limits<double>::infinity();
    double min_delta = 1e-8;
    int stale = 0;

    // Feed one epoch's monitored loss; true when it improved on best.
    bool update(double loss) {
        if (loss < best - min_delta) {
            best = loss;
            stale = 0;
            return true;
        }
        ++stale;
        return false;
    }
};

// lr = lr0 * factor^k, reduced after `patience` consecutive epochs
// without improvement; the stagnation counter resets on reduction.
struct LrSchedule {
    double lr0 = 1e-4;
    double factor = 0.95;
    int patience = 5;
    PlateauTracker tracker;
    int reductions = 0;

    double lr() const { return lr0 * std::pow(factor, reductions); }

    double step(double epoch_loss) {
        tracker.update(epoch_loss);
        if (tracker.stale >= patience) {
            ++reductions;
            tracker.stale = 0;
        }
        return lr();
    }
};

// Stop after `patience` consecutive epochs without improvement.
struct EarlyStopping {
    int patience = 15;
    PlateauTracker tracker;

    bool step(double epoch_loss) {
        tracker.update(epoch_loss);
        return tracker.stale >= patience;
    }
};

// ---------------------------------------------------------------------
// fit: the epoch loop.
// ---------------------------------------------------------------------
struct EpochLog {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    int batches = 0;
};

struct FitResult {
    std::vector<EpochLog> log;
    double best_loss = std::numeric_limits<double>::infinity();
    int best_epoch = 0;
    int epochs_run = 0;
    bool early_stopped = false;
    bool aborted = false;
    std::string abort_reason;
};

// epoch,lr,train_loss,val_dice,val_jaccard  (validation unused here)
inline void write_training_log(const std::string& path, const std::vector<EpochLog>& log) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write training log: " + path);
    out << "epoch,lr,train_loss,val_dice,val_jaccard\n";
    char line[128];
    for (const auto& row : log) {
        std::snprintf(line, sizeof line, "%d,%.10g,%.10g,,\n", row.epoch, row.lr, row.train_loss);
        out << line;
    }
}

// Per-epoch hook; return true to request a stop (the best checkpoint is
// still restored). Used for progress printing and target-metric exits.
template <typename T>
using EpochCallback = std::function<bool(int epoch, double train_loss, RDUNet<T>& model)>;

template <typename T>
FitResult fit(RDUNet<T>& model, const std::vector<const Sample*>& train_set,
              const TrainConfig& cfg, EpochCallback<T> callback = nullptr) {
    cfg.validate();
    if (train_set.empty()) throw DataError("fit: empty training split");
    const index_t ch = train_set[0]->image.dim(0);
    const index_t h = train_set[0]->image.dim(1);
    const index_t w = train_set[0]->image.dim(2);
    for (const Sample* s : train_set)
        if (s->image.dim(0) != ch || s->image.dim(1) != h || s->image.dim(2) != w)
            throw DimensionError("fit: samples disagree in shape; preprocess them first");

    auto params = model.parameters();
    AdamState<T> adam;
    adam.init(params);
    LrSchedule schedule{cfg.lr0, cfg.lr_factor, cfg.lr_patience, {.min_delta = cfg.min_delta}, 0};
    EarlyStopping stopper{cfg.early_stop_patience, {.min_delta = cfg.min_delta}};
    Rng dropout_rng(cfg.seed ^ 0xd1b54a32d192ed03ULL);

    FitResult result;
    std::vector<std::vector<T>> best_params;
    std::vector<std::pair<std::string, std::vector<T>>> best_buffers;
    auto snapshot_best = [&](int epoch, double loss) {
        result.best_loss = loss;
        result.best_epoch = epoch;
        best_params.clear();
        for (auto& [name, t] : params)
            best_params.emplace_back(t.data(), t.data() + t.numel());
        best_buffers.clear();
        for (auto& [name, vec] : model.buffers()) best_buffers.emplace_back(name, *vec);
    };
    auto restore_best = [&] {
        if (best_params.empty()) return;
        for (std::size_t k = 0; k < params.size(); ++k)
            std::copy(best_params[k].begin(), best_params[k].end(), params[k].second.data());
        auto bufs = model.buffers();
        for (std::size_t k = 0; k < bufs.size(); ++k) *bufs[k].second = best_buffers[k].second;
    };

    const std::size_t n = train_set.size();
    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        const double lr = schedule.lr();
        const auto order = epoch_order(n, cfg.seed, epoch);
        double loss_sum = 0.0;
        int batches = 0;

        for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t bsz = std::min<std::size_t>(cfg.batch_size, n - start);
            Tensor<T> x({static_cast<index_t>(bsz), ch, h, w});
            Tensor<T> y({static_cast<index_t>(bsz), 1, h, w});
            for (std::size_t b = 0; b < bsz; ++b) {
                const Sample* s = train_set[order[start + b]];
                T* xb = x.data() + static_cast<index_t>(b) * ch * h * w;
                T* yb = y.data() + static_cast<index_t>(b) * h * w;
                for (index_t i = 0; i < ch * h * w; ++i) xb[i] = static_cast<T>(s->image[i]);
                for (index_t i = 0; i < h * w; ++i) yb[i] = static_cast<T>(s->mask[i]);
            }

            double batch_loss;
            {
                Tape<T> tape;
                Tensor<T> pred = model.forward(x, true, &tape, &dropout_rng);
                Tensor<T> loss = loss_bce_jaccard(pred, y, &tape);
                batch_loss = static_cast<double>(loss[0]);
                if (!std::isfinite(batch_loss)) {
                    restore_best();
                    result.aborted = true;
                    result.abort_reason = "non-finite loss at epoch " + std::to_string(epoch);
                    result.epochs_run = epoch - 1;
                    return result;
                }
                tape.backward(loss);
                std::vector<Tensor<T>> grads;
                grads.reserve(params.size());
                for (auto& [name, t] : params) grads.push_back(tape.grad(t));
                try {
                    adam_step(params, grads, adam, lr);
                } catch (const NumericError& e) {
                    restore_best();
                    result.aborted = true;
                    result.abort_reason = e.what();
                    result.epochs_run = epoch - 1;
                    return result;
                }
            }
            loss_sum += batch_loss * static_cast<double>(bsz);
            ++batches;
        }

        const double epoch_loss = loss_sum / static_cast<double>(n);
        result.log.push_back({epoch, lr, epoch_loss, batches});
        result.epochs_run = epoch;

        if (epoch_loss < result.best_loss - cfg.min_delta || best_params.empty())
            snapshot_best(epoch, epoch_loss);

        const bool callback_stop = callback && callback(epoch, epoch_loss, model);
        schedule.step(epoch_loss);
        if (stopper.step(epoch_loss)) {
            result.early_stopped = true;
            break;
        }
        if (callback_stop) break;
    }

    restore_best();
    return result;
}

} // namespace blastoseg
