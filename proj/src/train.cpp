#include "matchattn/train.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "matchattn/metrics.hpp"

namespace matchattn {

double onecycle_lr(int step, int total_steps, const OptimConfig& oc) {
    const int warm = std::max(1, static_cast<int>(std::ceil(oc.warmup_frac * total_steps)));
    if (step < warm) return oc.lr_peak * static_cast<double>(step + 1) / warm;
    const double lr_final = oc.lr_peak / oc.final_div;
    const double t = total_steps > warm
                         ? static_cast<double>(step - warm) / (total_steps - warm)
                         : 1.0;
    return lr_final + (oc.lr_peak - lr_final) * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
}

template <typename T>
void adamw_step(ParamStore<T>& store, const std::vector<const Tensor<T>*>& grads,
                int step_1based, double lr, const OptimConfig& oc) {
    MA_CHECK(grads.size() == store.entries.size(), "adamw_step: gradient count mismatch");
    const double bc1 = 1.0 - std::pow(oc.beta1, step_1based);
    const double bc2 = 1.0 - std::pow(oc.beta2, step_1based);
    for (size_t i = 0; i < store.entries.size(); ++i) {
        auto& e = store.entries[i];
        const Tensor<T>& g = *grads[i];
        MA_CHECK(g.numel() == e.value.numel(), "adamw_step: gradient shape mismatch");
        if (e.m.numel() == 0) {
            e.m = Tensor<T>(e.value.shape);
            e.v = Tensor<T>(e.value.shape);
        }
        for (int64_t j = 0; j < e.value.numel(); ++j) {
            const double gj = static_cast<double>(g[j]);
            const double m = oc.beta1 * static_cast<double>(e.m[j]) + (1.0 - oc.beta1) * gj;
            const double v = oc.beta2 * static_cast<double>(e.v[j]) + (1.0 - oc.beta2) * gj * gj;
            e.m[j] = static_cast<T>(m);
            e.v[j] = static_cast<T>(v);
            const double mhat = m / bc1;
            const double vhat = v / bc2;
            const double upd = mhat / (std::sqrt(vhat) + oc.eps) +
                               oc.weight_decay * static_cast<double>(e.value[j]);
            e.value[j] = static_cast<T>(static_cast<double>(e.value[j]) - lr * upd);
        }
    }
}

namespace {

Tensor<uint8_t> both(const Tensor<uint8_t>& a, const Tensor<uint8_t>& b) {
    Tensor<uint8_t> out(a.shape);
    for (int64_t i = 0; i < a.numel(); ++i) out[i] = (a[i] && b[i]) ? 1 : 0;
    return out;
}

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    size_t e = s.find_last_not_of(" \t\r\n");
    return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

}  // namespace

TrainConfig load_train_config(const std::string& path) {
    std::ifstream f(path);
    MA_CHECK(f.good(), "cannot open config " + path);
    TrainConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        MA_CHECK(eq != std::string::npos,
                 "config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (key == "task") {
            MA_CHECK(val == "stereo" || val == "flow", "task must be stereo or flow");
            cfg.task = val == "stereo" ? Task::Stereo : Task::Flow;
        } else if (key == "preset") cfg.preset = val;
        else if (key == "scene") cfg.kind = scene_kind_from_string(val);
        else if (key == "height") cfg.H = std::stoll(val);
        else if (key == "width") cfg.W = std::stoll(val);
        else if (key == "magnitude") cfg.magnitude = std::stod(val);
        else if (key == "steps") cfg.steps = std::stoi(val);
        else if (key == "seed") cfg.seed = std::stoull(val);
        else if (key == "lr") cfg.optim.lr_peak = std::stod(val);
        else if (key == "weight_decay") cfg.optim.weight_decay = std::stod(val);
        else if (key == "warmup_frac") cfg.optim.warmup_frac = std::stod(val);
        else if (key == "final_div") cfg.optim.final_div = std::stod(val);
        else if (key == "target_epe") cfg.target_epe = std::stod(val);
        else if (key == "out_dir") cfg.out_dir = val;
        else if (key == "loss_init") cfg.loss.init = std::stoi(val) != 0;
        else if (key == "loss_self") cfg.loss.self = std::stoi(val) != 0;
        else if (key == "loss_cross_l1") cfg.loss.cross_l1 = std::stoi(val) != 0;
        else if (key == "loss_cross_consistency") cfg.loss.cross_consistency = std::stoi(val) != 0;
        else if (key == "swap_views") cfg.swap_views = std::stoi(val) != 0;
        else MA_CHECK(false, "unknown config key '" + key + "'");
    }
    return cfg;
}

TrainResult train_toy(const TrainConfig& cfg) {
    MA_CHECK(!cfg.swap_views || cfg.task == Task::Flow,
             "swap_views presentations are only valid for flow");
    const Scene<float> scene =
        gen_scene<float>(cfg.task, cfg.kind, cfg.H, cfg.W, cfg.seed, cfg.magnitude);
    const DecoderConfig dc = preset_config(cfg.preset, cfg.task);
    MatchDecoder<float> dec(dc, cfg.seed);

    std::filesystem::create_directories(cfg.out_dir);
    TrainResult res;
    res.trace_path = cfg.out_dir + "/trace.csv";
    res.checkpoint_path = cfg.out_dir + "/checkpoint.mtn";
    std::ofstream trace(res.trace_path, std::ios::binary);
    MA_CHECK(trace.good(), "cannot open " + res.trace_path);
    trace << "step,loss,l_init,l_self,l_cross,epe\n";
    trace << std::setprecision(10);

    const Tensor<uint8_t> sel = both(scene.gt.valid0, scene.noc0);
    const GtPack<float> gt_swap{scene.gt.gt1, scene.gt.gt0, scene.gt.valid1, scene.gt.valid0};
    const Tensor<uint8_t> sel_swap = both(scene.gt.valid1, scene.noc1);

    for (int step = 0; step < cfg.steps; ++step) {
        const bool swapped = cfg.swap_views && (step % 2 == 1);
        Graph<float> g;
        const ForwardResult fr =
            swapped ? dec.forward(g, scene.img1, scene.img0, &gt_swap, cfg.loss)
                    : dec.forward(g, scene.img0, scene.img1, &scene.gt, cfg.loss);
        MA_CHECK(fr.loss >= 0, "train_toy: loss graph not built");
        const double loss = static_cast<double>(g.val(fr.loss)[0]);
        const double li = fr.l_init >= 0 ? g.val(fr.l_init)[0] : 0.0;
        const double ls = fr.l_self >= 0 ? g.val(fr.l_self)[0] : 0.0;
        const double lc = fr.l_cross >= 0 ? g.val(fr.l_cross)[0] : 0.0;
        const Metrics m = compute_metrics(g.val(fr.r_full0), swapped ? gt_swap.gt0 : scene.gt.gt0,
                                          swapped ? &sel_swap : &sel, cfg.task);

        res.steps_run = step + 1;
        res.final_loss = loss;
        res.final_epe = m.epe;
        trace << step << ',' << loss << ',' << li << ',' << ls << ',' << lc << ',' << m.epe
              << "\n";

        if (!std::isfinite(loss) || loss > cfg.divergence_limit) {
            res.diverged = true;
            break;
        }
        if (cfg.target_epe > 0 && m.epe < cfg.target_epe) break;

        g.backward(fr.loss);
        std::vector<const Tensor<float>*> grads;
        grads.reserve(fr.param_vars.size());
        for (int id : fr.param_vars) grads.push_back(&g.grad(id));
        adamw_step(dec.params(), grads, step + 1, onecycle_lr(step, cfg.steps, cfg.optim),
                   cfg.optim);
    }
    trace.close();
    if (cfg.save_checkpoint) dec.save(res.checkpoint_path);
    return res;
}

template void adamw_step<float>(ParamStore<float>&, const std::vector<const Tensor<float>*>&,
                                int, double, const OptimConfig&);
template void adamw_step<double>(ParamStore<double>&,
                                 const std::vector<const Tensor<double>*>&, int, double,
                                 const OptimConfig&);

}  // namespace matchattn
