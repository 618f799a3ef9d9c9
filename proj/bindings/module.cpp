#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "matchattn/attention.hpp"
#include "matchattn/bilinear_softmax.hpp"
#include "matchattn/decoder.hpp"
#include "matchattn/flops.hpp"
#include "matchattn/graph.hpp"
#include "matchattn/imageio.hpp"
#include "matchattn/metrics.hpp"
#include "matchattn/scene.hpp"

namespace py = pybind11;
using namespace matchattn;

namespace {

template <typename T>
Tensor<T> to_tensor(const py::array_t<T, py::array::c_style | py::array::forcecast>& a) {
    std::vector<int64_t> shape(static_cast<size_t>(a.ndim()));
    for (py::ssize_t i = 0; i < a.ndim(); ++i)
        shape[static_cast<size_t>(i)] = static_cast<int64_t>(a.shape(i));
    Tensor<T> t(shape);
    std::memcpy(t.ptr(), a.data(), sizeof(T) * static_cast<size_t>(t.numel()));
    return t;
}

template <typename T>
py::array_t<T> to_array(const Tensor<T>& t) {
    std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
    py::array_t<T> a(shape);
    std::memcpy(a.mutable_data(), t.ptr(), sizeof(T) * static_cast<size_t>(t.numel()));
    return a;
}

Task task_from(const std::string& s) {
    if (s == "stereo") return Task::Stereo;
    if (s == "flow") return Task::Flow;
    throw std::runtime_error("task must be 'stereo' or 'flow'");
}

Similarity sim_from(const std::string& s) {
    if (s == "dot") return Similarity::Dot;
    if (s == "neg_l1") return Similarity::NegL1;
    throw std::runtime_error("similarity must be 'dot' or 'neg_l1'");
}

int window_from_e2(py::ssize_t e2) {
    const int e = static_cast<int>(std::lround(std::sqrt(static_cast<double>(e2))));
    if (static_cast<py::ssize_t>(e) * e != e2 || e < 2)
        throw std::runtime_error("similarity row must hold (w+1)^2 entries");
    return e - 1;
}

py::dict flops_dict(const FlopsBreakdown& f) {
    py::dict d;
    d["qk"] = f.qk;
    d["bsm"] = f.bsm;
    d["agg"] = f.agg;
    d["tensor"] = f.tensor;
    d["direct"] = f.direct();
    d["total"] = f.total();
    d["attn_mem"] = f.attn_mem;
    return d;
}

// Thin inference wrapper around the float decoder.
struct PyDecoder {
    MatchDecoder<float> dec;

    explicit PyDecoder(MatchDecoder<float> d) : dec(std::move(d)) {}

    py::dict infer(const py::array_t<float, py::array::c_style | py::array::forcecast>& img0,
                   const py::array_t<float, py::array::c_style | py::array::forcecast>& img1) {
        Graph<float> g;
        Tensor<float> i0 = to_tensor(img0), i1 = to_tensor(img1);
        ForwardResult fr = dec.forward(g, i0, i1);
        Tensor<float> resid =
            consistency_residual_value(g.val(fr.r_full0), g.val(fr.r_full1));
        py::dict out;
        out["r0"] = to_array(g.val(fr.r_full0));
        out["r1"] = to_array(g.val(fr.r_full1));
        out["sr0"] = to_array(g.val(fr.sr_full0));
        out["sr1"] = to_array(g.val(fr.sr_full1));
        out["noc0"] = to_array(consistency_mask(resid, dec.config().threshold_a));
        return out;
    }
};

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "sliding-window cross-view matching core";

    m.def(
        "bilinear_softmax",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& sim, double fx,
           double fy) {
            if (sim.ndim() != 1) throw std::runtime_error("sim must be 1-d");
            const int w = window_from_e2(sim.shape(0));
            // explicit shape vector: the count / initializer-list constructors
            // hand numpy null strides under pybind11 2.9
            py::array_t<double> out(std::vector<py::ssize_t>{sim.shape(0)});
            bilinear_softmax_fwd(w, sim.data(), fx, fy, nullptr, out.mutable_data());
            return out;
        },
        py::arg("sim"), py::arg("fx"), py::arg("fy"),
        "Continuous-window attention weights over the (w+1)^2 expanded window.");

    m.def(
        "bilinear_softmax_ref",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& sim, double fx,
           double fy) {
            if (sim.ndim() != 1) throw std::runtime_error("sim must be 1-d");
            const int w = window_from_e2(sim.shape(0));
            // explicit shape vector: the count / initializer-list constructors
            // hand numpy null strides under pybind11 2.9
            py::array_t<double> out(std::vector<py::ssize_t>{sim.shape(0)});
            bilinear_softmax_ref(w, sim.data(), fx, fy, nullptr, out.mutable_data());
            return out;
        },
        py::arg("sim"), py::arg("fx"), py::arg("fy"), "Unfused reference implementation.");

    m.def(
        "attention",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& q,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& k,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& v,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& r, int heads,
           int w, const std::string& similarity) {
            Tensor<double> Q = to_tensor(q), K = to_tensor(k), V = to_tensor(v), R = to_tensor(r);
            MA_CHECK(Q.rank() == 3 && Q.same_shape(K), "q/k must be [H,W,heads*ck]");
            AttnCoreCfg cfg;
            cfg.H = Q.dim(0);
            cfg.W = Q.dim(1);
            cfg.heads = heads;
            cfg.ck = static_cast<int>(Q.dim(2)) / heads;
            cfg.cv = static_cast<int>(V.dim(2)) / heads;
            cfg.w = w;
            cfg.sim = sim_from(similarity);
            cfg.rpos_per_head = R.dim(2) == 2 * heads;
            const int e2 = (w + 1) * (w + 1);
            Tensor<double> M({cfg.H, cfg.W, static_cast<int64_t>(heads) * cfg.cv});
            Tensor<double> A({cfg.H, cfg.W, static_cast<int64_t>(heads) * e2});
            attention_core_fwd(cfg, Q.ptr(), K.ptr(), V.ptr(), R.ptr(), M.ptr(), A.ptr());
            return py::make_tuple(to_array(M), to_array(A));
        },
        py::arg("q"), py::arg("k"), py::arg("v"), py::arg("r"), py::arg("heads") = 1,
        py::arg("window") = 3, py::arg("similarity") = "neg_l1",
        "Fused window attention; returns (aggregated values, attention weights).");

    m.def(
        "gen_scene",
        [](const std::string& task, const std::string& kind, int64_t H, int64_t W, uint64_t seed,
           double magnitude) {
            Scene<float> sc =
                gen_scene<float>(task_from(task), scene_kind_from_string(kind), H, W, seed,
                                 magnitude);
            py::dict d;
            d["img0"] = to_array(sc.img0);
            d["img1"] = to_array(sc.img1);
            d["gt0"] = to_array(sc.gt.gt0);
            d["gt1"] = to_array(sc.gt.gt1);
            d["noc0"] = to_array(sc.noc0);
            d["noc1"] = to_array(sc.noc1);
            d["occ_band0"] = to_array(sc.occ_band0);
            return d;
        },
        py::arg("task"), py::arg("kind"), py::arg("height"), py::arg("width"), py::arg("seed") = 1,
        py::arg("magnitude") = 4.0, "Synthetic pair with analytic gt and occlusion masks.");

    m.def(
        "compute_metrics",
        [](const py::array_t<float, py::array::c_style | py::array::forcecast>& pred,
           const py::array_t<float, py::array::c_style | py::array::forcecast>& gt,
           py::object sel, const std::string& task) {
            Tensor<float> p = to_tensor(pred), g = to_tensor(gt);
            Tensor<uint8_t> mask;
            const Tensor<uint8_t>* mp = nullptr;
            if (!sel.is_none()) {
                mask = to_tensor(
                    sel.cast<py::array_t<uint8_t, py::array::c_style | py::array::forcecast>>());
                mp = &mask;
            }
            Metrics mt = compute_metrics(p, g, mp, task_from(task));
            py::dict d;
            d["epe"] = mt.epe;
            d["d1"] = mt.d1;
            d["bad05"] = mt.bad05;
            d["bad1"] = mt.bad1;
            d["bad2"] = mt.bad2;
            d["bad3"] = mt.bad3;
            d["count"] = mt.count;
            return d;
        },
        py::arg("pred"), py::arg("gt"), py::arg("sel") = py::none(), py::arg("task") = "stereo");

    m.def(
        "consistency_residual",
        [](const py::array_t<float, py::array::c_style | py::array::forcecast>& r0,
           const py::array_t<float, py::array::c_style | py::array::forcecast>& r1) {
            return to_array(consistency_residual_value(to_tensor(r0), to_tensor(r1)));
        },
        py::arg("r0"), py::arg("r1"),
        "Forward-backward residual r0 + sample(r1 at identity + r0).");

    m.def(
        "attention_flops",
        [](int64_t H, int64_t W, int64_t h, int64_t ck, int64_t cv, int64_t w) {
            return flops_dict(attention_flops(H, W, h, ck, cv, w));
        },
        py::arg("height"), py::arg("width"), py::arg("heads"), py::arg("ck"), py::arg("cv"),
        py::arg("window"));

    m.def(
        "decoder_flops",
        [](const std::string& preset, const std::string& task, int64_t H, int64_t W) {
            return flops_dict(decoder_flops(preset_config(preset, task_from(task)), H, W));
        },
        py::arg("preset"), py::arg("task"), py::arg("height"), py::arg("width"));

    m.def("read_pfm", [](const std::string& p) { return to_array(read_pfm(p)); }, py::arg("path"));
    m.def(
        "write_pfm",
        [](const std::string& p,
           const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
            write_pfm(p, to_tensor(a));
        },
        py::arg("path"), py::arg("image"));
    m.def("read_flo", [](const std::string& p) { return to_array(read_flo(p)); }, py::arg("path"));
    m.def(
        "write_flo",
        [](const std::string& p,
           const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
            write_flo(p, to_tensor(a));
        },
        py::arg("path"), py::arg("flow"));

    py::class_<PyDecoder>(m, "Decoder")
        .def(py::init([](const std::string& preset, const std::string& task, uint64_t seed) {
                 return PyDecoder(
                     MatchDecoder<float>(preset_config(preset, task_from(task)), seed));
             }),
             py::arg("preset") = "desk", py::arg("task") = "stereo", py::arg("seed") = 1)
        .def_static("load",
                    [](const std::string& path) {
                        return PyDecoder(MatchDecoder<float>::load(path));
                    })
        .def("save", [](const PyDecoder& d, const std::string& path) { d.dec.save(path); })
        .def("infer", &PyDecoder::infer, py::arg("img0"), py::arg("img1"))
        .def_property_readonly("task",
                               [](const PyDecoder& d) {
                                   return d.dec.config().task == Task::Stereo
                                              ? std::string("stereo")
                                              : std::string("flow");
                               })
        .def_property_readonly("param_count",
                               [](const PyDecoder& d) { return d.dec.params().total(); });
}
