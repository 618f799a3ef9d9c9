#pragma once

#include <string>
#include <vector>

#include "matchattn/decoder.hpp"
#include "matchattn/scene.hpp"

namespace matchattn {

struct OptimConfig {
    double lr_peak = 5e-4;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double weight_decay = 0.05;  // decoupled
    double warmup_frac = 0.05;   // linear warmup, then cosine decay to peak/final_div
    double final_div = 25.0;
};

double onecycle_lr(int step, int total_steps, const OptimConfig& oc);

// One update; grads run parallel to store.entries. Optimizer moments are
// allocated on first use.
template <typename T>
void adamw_step(ParamStore<T>& store, const std::vector<const Tensor<T>*>& grads,
                int step_1based, double lr, const OptimConfig& oc);

struct TrainConfig {
    Task task = Task::Stereo;
    std::string preset = "desk";
    SceneKind kind = SceneKind::ConstantShift;
    int64_t H = 128, W = 256;
    double magnitude = 4.0;
    int steps = 2000;
    uint64_t seed = 1;
    OptimConfig optim;
    LossOpts loss;
    double target_epe = -1.0;  // stop early once the non-occluded EPE is below this
    double divergence_limit = 1e6;
    std::string out_dir = "train_out";
    bool save_checkpoint = true;
    // Flow only: odd steps present the pair in swapped order, supervised on
    // the swapped reference view. Both matching directions then receive
    // direct signal, which keeps the unsupervised-view field (and with it the
    // consistency masks) meaningful on a single overfitted scene. Trace and
    // early-stop EPE always refer to the reference view of the presented
    // order.
    bool swap_views = false;
};

// Text config: one `key = value` per line, '#' comments. Keys: task, preset,
// scene, height, width, magnitude, steps, seed, lr, weight_decay, warmup_frac,
// final_div, target_epe, out_dir, loss_init, loss_self, loss_cross_l1,
// loss_cross_consistency, swap_views.
TrainConfig load_train_config(const std::string& path);

struct TrainResult {
    int steps_run = 0;
    double final_loss = 0;
    double final_epe = -1;  // non-occluded EPE of the reference view
    bool diverged = false;
    std::string checkpoint_path, trace_path;
};

// Overfits the desk model on one synthetic pair. Writes
// <out_dir>/trace.csv (header "step,loss,l_init,l_self,l_cross,epe") and
// <out_dir>/checkpoint.mtn. Fully deterministic for a fixed config.
TrainResult train_toy(const TrainConfig& cfg);

}  // namespace matchattn
