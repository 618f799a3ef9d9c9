import numpy as np

import matchattn as ma


def test_bilinear_softmax_matches_reference():
    rng = np.random.default_rng(7)
    for w in (1, 3, 5):
        e2 = (w + 1) ** 2
        for _ in range(50):
            sim = rng.uniform(-4, 4, size=e2)
            fx, fy = rng.uniform(size=2)
            fused = ma.bilinear_softmax(sim, fx, fy)
            ref = ma.bilinear_softmax_ref(sim, fx, fy)
            assert fused.shape == (e2,)
            assert abs(fused.sum() - 1.0) < 1e-12
            np.testing.assert_allclose(fused, ref, rtol=0, atol=1e-12)


def test_attention_weights_normalize():
    rng = np.random.default_rng(11)
    H, W, heads, ck, cv, w = 6, 7, 2, 3, 4, 3
    q = rng.standard_normal((H, W, heads * ck))
    k = rng.standard_normal((H, W, heads * ck))
    v = rng.standard_normal((H, W, heads * cv))
    r = rng.uniform(-2, 2, size=(H, W, 2))
    m, a = ma.attention(q, k, v, r, heads=heads, window=w, similarity="neg_l1")
    assert m.shape == (H, W, heads * cv)
    e2 = (w + 1) ** 2
    sums = a.reshape(H, W, heads, e2).sum(axis=-1)
    np.testing.assert_allclose(sums, 1.0, rtol=0, atol=1e-9)


def test_scene_and_metrics():
    sc = ma.gen_scene("stereo", "constant_shift", 32, 64, seed=3, magnitude=5)
    assert sc["img0"].shape == (32, 64, 3)
    assert sc["gt0"].shape == (32, 64, 2)
    exact = ma.compute_metrics(sc["gt0"], sc["gt0"], sc["noc0"], task="stereo")
    assert exact["epe"] == 0.0
    assert exact["count"] > 0
    off = sc["gt0"].copy()
    off[..., 0] += 1.0
    shifted = ma.compute_metrics(off, sc["gt0"], sc["noc0"], task="stereo")
    assert abs(shifted["epe"] - 1.0) < 1e-6


def test_consistency_residual_small_on_analytic_gt():
    sc = ma.gen_scene("flow", "smooth_warp", 32, 64, seed=4, magnitude=3)
    resid = ma.consistency_residual(sc["gt0"], sc["gt1"])
    assert resid.shape == (32, 64, 2)
    assert np.abs(resid).max() < 0.05


def test_decoder_infer_shapes(tmp_path):
    dec = ma.Decoder("desk", "stereo", seed=5)
    assert dec.task == "stereo"
    assert dec.param_count > 0
    sc = ma.gen_scene("stereo", "constant_shift", 32, 64, seed=9, magnitude=3)
    out = dec.infer(sc["img0"], sc["img1"])
    assert out["r0"].shape == (32, 64, 2)
    assert out["r1"].shape == (32, 64, 2)
    assert out["noc0"].shape == (32, 64)
    assert out["noc0"].dtype == np.uint8
    path = str(tmp_path / "ckpt.mtn")
    dec.save(path)
    again = ma.Decoder.load(path).infer(sc["img0"], sc["img1"])
    np.testing.assert_array_equal(again["r0"], out["r0"])


def test_flop_formulas():
    d = ma.attention_flops(8, 8, 4, 32, 32, 3)
    assert d["qk"] == 262144
    assert d["bsm"] == 40960
    assert d["agg"] == 262144
    assert d["attn_mem"] == 4096
    t = ma.decoder_flops("T", "stereo", 1536, 1536)
    assert t["total"] > t["direct"] > 0


def test_io_roundtrip(tmp_path):
    rng = np.random.default_rng(123)
    img = rng.standard_normal((5, 9, 3)).astype(np.float32)
    p = str(tmp_path / "x.pfm")
    ma.write_pfm(p, img)
    np.testing.assert_array_equal(ma.read_pfm(p), img)
    flow = rng.standard_normal((4, 6, 2)).astype(np.float32)
    f = str(tmp_path / "x.flo")
    ma.write_flo(f, flow)
    np.testing.assert_array_equal(ma.read_flo(f), flow)
