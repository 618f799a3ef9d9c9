#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

#include "matchattn/graph.hpp"
#include "matchattn/ops.hpp"
#include "matchattn/rng.hpp"
#include "matchattn/tensor.hpp"
#include "matchattn/tensor_io.hpp"
#include "test_util.hpp"

using namespace matchattn;
using testutil::fd_check;
using testutil::rand_tensor;

namespace {

std::string tmp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("tensor shape bookkeeping and checks") {
    Tensor<double> t({2, 3, 4});
    CHECK(t.numel() == 24);
    CHECK(t.rank() == 3);
    CHECK(t.dim(1) == 3);
    t.at(1, 2, 3) = 7.0;
    CHECK(t[23] == 7.0);

    Tensor<double> f = Tensor<double>::full({2, 2}, 3.5);
    CHECK(f[0] == 3.5);
    CHECK(f[3] == 3.5);

    CHECK_THROWS_AS(MA_CHECK(false, "boom"), std::runtime_error);
    try {
        MA_CHECK(1 == 2, "specific message");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("specific message") != std::string::npos);
    }
}

TEST_CASE("rng streams are deterministic and in range") {
    Rng a(7), b(7);
    for (int i = 0; i < 200; ++i) {
        const double ua = a.uniform(), ub = b.uniform();
        CHECK(ua == ub);
        CHECK(ua >= 0.0);
        CHECK(ua < 1.0);
    }
    // the raw stream is the standard mt19937_64 sequence
    Rng c(42);
    std::mt19937_64 ref(42);
    for (int i = 0; i < 8; ++i) CHECK(c.next_u64() == ref());

    Rng d(3);
    double mean = 0, m2 = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double v = d.normal();
        mean += v;
        m2 += v * v;
    }
    mean /= n;
    const double stddev = std::sqrt(m2 / n - mean * mean);
    CHECK(std::abs(mean) < 0.05);
    CHECK(std::abs(stddev - 1.0) < 0.05);

    Rng e(11);
    for (int i = 0; i < 1000; ++i) {
        const int64_t v = e.uniform_int(13);
        CHECK(v >= 0);
        CHECK(v < 13);
    }
}

TEST_CASE("linear matches a hand-computed product and its gradients") {
    // x: 2x3, w: 3x2, b: 2
    Tensor<double> x({2, 3});
    x.data = {1, 2, 3, 4, 5, 6};
    Tensor<double> w({3, 2});
    w.data = {1, -1, 0.5, 2, -2, 0.25};
    Tensor<double> b({2});
    b.data = {10, -10};
    const Tensor<double> y = linear_fwd(x, w, b);
    REQUIRE(y.shape == std::vector<int64_t>({2, 2}));
    CHECK(y.at(0, 0) == doctest::Approx(1 * 1 + 2 * 0.5 + 3 * -2 + 10).epsilon(1e-12));
    CHECK(y.at(0, 1) == doctest::Approx(1 * -1 + 2 * 2 + 3 * 0.25 - 10).epsilon(1e-12));
    CHECK(y.at(1, 0) == doctest::Approx(4 * 1 + 5 * 0.5 + 6 * -2 + 10).epsilon(1e-12));

    // leading shape may be arbitrary
    Tensor<double> x3({2, 2, 3});
    for (int64_t i = 0; i < 12; ++i) x3[i] = 0.1 * static_cast<double>(i);
    CHECK(linear_fwd(x3, w, b).shape == std::vector<int64_t>({2, 2, 2}));

    testutil::Rng rng(5);
    const Tensor<double> xr = rand_tensor(rng, {3, 4});
    const Tensor<double> wr = rand_tensor(rng, {4, 2});
    const Tensor<double> br = rand_tensor(rng, {2});
    auto head = [&](Graph<double>& g, int xi, int wi, int bi) {
        return g.masked_l1_mean(g.linear(xi, wi, bi), {});
    };
    auto rx = fd_check(xr, [&](Graph<double>& g, int id) {
        return head(g, id, g.push(wr), g.push(br));
    });
    auto rw = fd_check(wr, [&](Graph<double>& g, int id) {
        return head(g, g.push(xr), id, g.push(br));
    });
    auto rb = fd_check(br, [&](Graph<double>& g, int id) {
        return head(g, g.push(xr), g.push(wr), id);
    });
    CHECK(rx.worst < 1e-6);
    CHECK(rw.worst < 1e-6);
    CHECK(rb.worst < 1e-6);
}

TEST_CASE("layer norm normalizes rows and matches a manual computation") {
    testutil::Rng rng(9);
    const Tensor<double> x = rand_tensor(rng, {4, 6}, -2, 2);
    Tensor<double> gain({6}, 1.0), bias({6}, 0.0);
    const Tensor<double> y = layer_norm_fwd(x, gain, bias);
    for (int64_t i = 0; i < 4; ++i) {
        double mean = 0, var = 0;
        for (int64_t j = 0; j < 6; ++j) mean += y.at(i, j);
        mean /= 6;
        for (int64_t j = 0; j < 6; ++j) var += (y.at(i, j) - mean) * (y.at(i, j) - mean);
        var /= 6;
        CHECK(std::abs(mean) < 1e-12);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-4));  // eps shrinks it slightly

        // manual recomputation of one row
        double m0 = 0, v0 = 0;
        for (int64_t j = 0; j < 6; ++j) m0 += x.at(i, j);
        m0 /= 6;
        for (int64_t j = 0; j < 6; ++j) v0 += (x.at(i, j) - m0) * (x.at(i, j) - m0);
        v0 /= 6;
        for (int64_t j = 0; j < 6; ++j) {
            const double want = (x.at(i, j) - m0) / std::sqrt(v0 + kLayerNormEps);
            CHECK(y.at(i, j) == doctest::Approx(want).epsilon(1e-12));
        }
    }

    const Tensor<double> gr = rand_tensor(rng, {6});
    const Tensor<double> br = rand_tensor(rng, {6});
    auto rx = fd_check(x, [&](Graph<double>& g, int id) {
        return g.masked_l1_mean(g.layer_norm(id, g.push(gr), g.push(br)), {});
    });
    auto rg = fd_check(gr, [&](Graph<double>& g, int id) {
        return g.masked_l1_mean(g.layer_norm(g.push(x), id, g.push(br)), {});
    });
    CHECK(rx.worst < 1e-5);
    CHECK(rg.worst < 1e-6);
}

TEST_CASE("softmax sums to one and ignores constant shifts") {
    testutil::Rng rng(21);
    const Tensor<double> x = rand_tensor(rng, {5, 7}, -4, 4);
    const Tensor<double> y = softmax_lastdim_fwd(x);
    for (int64_t i = 0; i < 5; ++i) {
        double s = 0;
        for (int64_t j = 0; j < 7; ++j) {
            CHECK(y.at(i, j) > 0);
            s += y.at(i, j);
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
    }
    Tensor<double> xs = x;
    for (auto& v : xs.data) v += 123.25;
    const Tensor<double> ys = softmax_lastdim_fwd(xs);
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(std::abs(y[i] - ys[i]) < 1e-13);

    // gradient through a fixed projection
    const Tensor<double> proj = rand_tensor(rng, {5, 7});
    auto r = fd_check(x, [&](Graph<double>& g, int id) {
        return g.masked_l1_mean(g.mul(g.softmax_lastdim(id), g.push(proj)), {});
    });
    CHECK(r.worst < 1e-5);
}

namespace {

// independent dense conv oracle, same convention: cross-correlation, zero pad
Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w,
                          const Tensor<double>& b, int stride, int pad, int groups) {
    const int64_t H = x.dim(0), W = x.dim(1), ci = x.dim(2);
    const int64_t co = w.dim(0), kh = w.dim(1), kw = w.dim(2);
    const int64_t cig = ci / groups, cog = co / groups;
    const int64_t Ho = (H + 2 * pad - kh) / stride + 1, Wo = (W + 2 * pad - kw) / stride + 1;
    Tensor<double> y({Ho, Wo, co});
    for (int64_t oy = 0; oy < Ho; ++oy)
        for (int64_t ox = 0; ox < Wo; ++ox)
            for (int64_t oc = 0; oc < co; ++oc) {
                const int64_t gidx = oc / cog;
                double acc = b.numel() ? b[oc] : 0.0;
                for (int64_t ky = 0; ky < kh; ++ky)
                    for (int64_t kx = 0; kx < kw; ++kx) {
                        const int64_t iy = oy * stride - pad + ky;
                        const int64_t ix = ox * stride - pad + kx;
                        if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                        for (int64_t c = 0; c < cig; ++c)
                            acc += x[(iy * W + ix) * ci + gidx * cig + c] *
                                   w[((oc * kh + ky) * kw + kx) * cig + c];
                    }
                y[(oy * Wo + ox) * co + oc] = acc;
            }
    return y;
}

}  // namespace

TEST_CASE("conv2d agrees with a naive oracle across strides, padding, groups") {
    testutil::Rng rng(33);
    struct Case {
        int64_t H, W, ci, co, k;
        int stride, pad, groups;
    };
    const Case cases[] = {
        {5, 6, 3, 4, 3, 1, 1, 1},
        {8, 7, 4, 6, 4, 2, 1, 2},
        {6, 6, 4, 4, 3, 1, 1, 4},  // depthwise
        {5, 5, 2, 3, 1, 1, 0, 1},
    };
    for (const auto& c : cases) {
        const Tensor<double> x = rand_tensor(rng, {c.H, c.W, c.ci});
        const Tensor<double> w = rand_tensor(rng, {c.co, c.k, c.k, c.ci / c.groups});
        const Tensor<double> b = rand_tensor(rng, {c.co});
        const Tensor<double> got = conv2d_fwd(x, w, b, c.stride, c.pad, c.groups);
        const Tensor<double> want = naive_conv(x, w, b, c.stride, c.pad, c.groups);
        REQUIRE(got.shape == want.shape);
        for (int64_t i = 0; i < got.numel(); ++i)
            CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
    }

    // 1x1 identity kernel passes the input through
    const Tensor<double> x = rand_tensor(rng, {4, 4, 2});
    Tensor<double> wid({2, 1, 1, 2});
    wid.data = {1, 0, 0, 1};
    const Tensor<double> y = conv2d_fwd(x, wid, {}, 1, 0, 1);
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);

    const Tensor<double> xr = rand_tensor(rng, {5, 5, 2});
    const Tensor<double> wr = rand_tensor(rng, {4, 3, 3, 2});
    const Tensor<double> br = rand_tensor(rng, {4});
    auto head = [&](Graph<double>& g, int xi, int wi, int bi) {
        return g.masked_l1_mean(g.conv2d(xi, wi, bi, 2, 1, 1), {});
    };
    auto rx = fd_check(xr, [&](Graph<double>& g, int id) {
        return head(g, id, g.push(wr), g.push(br));
    });
    auto rw = fd_check(wr, [&](Graph<double>& g, int id) {
        return head(g, g.push(xr), id, g.push(br));
    });
    CHECK(rx.worst < 1e-6);
    CHECK(rw.worst < 1e-6);
}

TEST_CASE("transposed 2x2 conv upsamples exactly and differentiably") {
    testutil::Rng rng(41);
    const Tensor<double> x = rand_tensor(rng, {3, 4, 2});
    const Tensor<double> w = rand_tensor(rng, {2, 2, 2, 3});
    const Tensor<double> b = rand_tensor(rng, {3});
    const Tensor<double> y = conv_transpose2x2_fwd(x, w, b);
    REQUIRE(y.shape == std::vector<int64_t>({6, 8, 3}));
    for (int64_t i = 0; i < 3; ++i)
        for (int64_t j = 0; j < 4; ++j)
            for (int64_t dy = 0; dy < 2; ++dy)
                for (int64_t dx = 0; dx < 2; ++dx)
                    for (int64_t co = 0; co < 3; ++co) {
                        double want = b[co];
                        for (int64_t ci = 0; ci < 2; ++ci)
                            want += x[(i * 4 + j) * 2 + ci] * w[((dy * 2 + dx) * 2 + ci) * 3 + co];
                        const double got = y[((2 * i + dy) * 8 + (2 * j + dx)) * 3 + co];
                        CHECK(got == doctest::Approx(want).epsilon(1e-12));
                    }

    auto rx = fd_check(x, [&](Graph<double>& g, int id) {
        return g.masked_l1_mean(g.conv_transpose2x2(id, g.push(w), g.push(b)), {});
    });
    auto rw = fd_check(w, [&](Graph<double>& g, int id) {
        return g.masked_l1_mean(g.conv_transpose2x2(g.push(x), id, g.push(b)), {});
    });
    CHECK(rx.worst < 1e-6);
    CHECK(rw.worst < 1e-6);
}

TEST_CASE("bilinear sampling interpolates, clamps, and differentiates") {
    Tensor<double> field({2, 2, 1});
    field.data = {1.0, 2.0, 3.0, 4.0};  // rows: (1 2) / (3 4)

    auto sample1 = [&](double cx, double cy) {
        Tensor<double> coords({1, 2});
        coords.data = {cx, cy};
        return bilinear_sample_fwd(field, coords)[0];
    };
    CHECK(sample1(0, 0) == 1.0);
    CHECK(sample1(1, 0) == 2.0);
    CHECK(sample1(0, 1) == 3.0);
    CHECK(sample1(0.5, 0.5) == doctest::Approx(2.5).epsilon(1e-15));
    CHECK(sample1(0.25, 0.0) == doctest::Approx(1.25).epsilon(1e-15));
    // replicate border
    CHECK(sample1(-3.0, 0.0) == 1.0);
    CHECK(sample1(5.0, 9.0) == 4.0);

    testutil::Rng rng(17);
    const Tensor<double> f = rand_tensor(rng, {5, 6, 3});
    Tensor<double> coords({4, 2});
    coords.data = {1.3, 2.7, 0.4, 0.9, 3.6, 1.1, 4.2, 3.5};  // interior, away from knots
    const Tensor<double> proj = rand_tensor(rng, {4, 3});
    auto rf = fd_check(f, [&](Graph<double>& g, int id) {
        return g.masked_l1_mean(g.mul(g.bilinear_sample(id, g.push(coords)), g.push(proj)), {});
    });
    auto rc = fd_check(coords, [&](Graph<double>& g, int id) {
        return g.masked_l1_mean(g.mul(g.bilinear_sample(g.push(f), id), g.push(proj)), {});
    });
    CHECK(rf.worst < 1e-6);
    CHECK(rc.worst < 1e-5);

    // far outside the rectangle the coordinate gradient is exactly zero
    Graph<double> g;
    Tensor<double> cfar({1, 2});
    cfar.data = {-7.5, 20.0};
    const int cid = g.push(cfar);
    const int out = g.bilinear_sample(g.push(f), cid);
    g.backward(g.masked_l1_mean(out, {}));
    CHECK(g.grad(cid)[0] == 0.0);
    CHECK(g.grad(cid)[1] == 0.0);
}

TEST_CASE("gelu and silu match their closed forms") {
    auto gelu_ref = [](double x) {
        const double k = std::sqrt(2.0 / 3.14159265358979323846);
        return 0.5 * x * (1.0 + std::tanh(k * (x + 0.044715 * x * x * x)));
    };
    auto silu_ref = [](double x) { return x / (1.0 + std::exp(-x)); };
    Tensor<double> x({7});
    x.data = {-3.0, -1.0, -0.1, 0.0, 0.1, 1.0, 3.0};
    const Tensor<double> yg = gelu_fwd(x);
    const Tensor<double> ys = silu_fwd(x);
    for (int64_t i = 0; i < 7; ++i) {
        CHECK(yg[i] == doctest::Approx(gelu_ref(x[i])).epsilon(1e-12));
        CHECK(ys[i] == doctest::Approx(silu_ref(x[i])).epsilon(1e-12));
    }
    CHECK(yg[3] == 0.0);
    CHECK(ys[3] == 0.0);

    testutil::Rng rng(2);
    const Tensor<double> xr = rand_tensor(rng, {11}, -3, 3);
    const Tensor<double> proj = rand_tensor(rng, {11});
    auto rg = fd_check(xr, [&](Graph<double>& g, int id) {
        return g.masked_l1_mean(g.mul(g.gelu(id), g.push(proj)), {});
    });
    auto rs = fd_check(xr, [&](Graph<double>& g, int id) {
        return g.masked_l1_mean(g.mul(g.silu(id), g.push(proj)), {});
    });
    CHECK(rg.worst < 1e-5);
    CHECK(rs.worst < 1e-5);
}

TEST_CASE("graph accumulates gradients for reused vars") {
    Tensor<double> x({3});
    x.data = {1.0, -2.0, 3.0};
    Graph<double> g;
    const int xid = g.push(x);
    const int y = g.add(xid, xid);  // y = 2x
    const int loss = g.masked_l1_mean(y, {});
    g.backward(loss);
    // a 1-d tensor is a single row, so the row mean is just the L1 norm:
    // loss = |2x|_1 = 12, d/dx = 2*sign(x) through both add operands
    CHECK(g.val(loss)[0] == doctest::Approx(12.0).epsilon(1e-14));
    CHECK(g.grad(xid)[0] == doctest::Approx(2.0).epsilon(1e-14));
    CHECK(g.grad(xid)[1] == doctest::Approx(-2.0).epsilon(1e-14));
    CHECK(g.grad(xid)[2] == doctest::Approx(2.0).epsilon(1e-14));
}

TEST_CASE("graph composite expression differentiates end to end") {
    testutil::Rng rng(8);
    const Tensor<double> x = rand_tensor(rng, {3, 4});
    const Tensor<double> w1 = rand_tensor(rng, {4, 5});
    const Tensor<double> w2 = rand_tensor(rng, {5, 2});
    auto build_tail = [&](Graph<double>& g, int xi, int w1i, int w2i) {
        const int h = g.silu(g.linear(xi, w1i));
        const int y = g.gelu(g.linear(h, w2i));
        return g.masked_l1_mean(y, {});
    };
    auto rx = fd_check(x, [&](Graph<double>& g, int id) {
        return build_tail(g, id, g.push(w1), g.push(w2));
    });
    auto r1 = fd_check(w1, [&](Graph<double>& g, int id) {
        return build_tail(g, g.push(x), id, g.push(w2));
    });
    auto r2 = fd_check(w2, [&](Graph<double>& g, int id) {
        return build_tail(g, g.push(x), g.push(w1), id);
    });
    CHECK(rx.worst < 1e-5);
    CHECK(r1.worst < 1e-5);
    CHECK(r2.worst < 1e-5);
}

TEST_CASE("concat, slice, channel_scale, weighted_sum behave and differentiate") {
    testutil::Rng rng(13);
    const Tensor<double> a = rand_tensor(rng, {2, 3, 2});
    const Tensor<double> b = rand_tensor(rng, {2, 3, 4});
    {
        Graph<double> g;
        const int ai = g.push(a), bi = g.push(b);
        const int c = g.concat_last({ai, bi});
        CHECK(g.val(c).shape == std::vector<int64_t>({2, 3, 6}));
        const int back = g.slice_last(c, 2, 6);
        const Tensor<double>& sl = g.val(back);
        for (int64_t i = 0; i < b.numel(); ++i) CHECK(sl[i] == b[i]);
    }
    {
        Graph<double> g;
        Tensor<double> s({2});
        s.data = {2.0, -0.5};
        const int xi = g.push(a), si = g.push(s);
        const Tensor<double>& y = g.val(g.channel_scale(xi, si));
        for (int64_t i = 0; i < a.numel(); ++i)
            CHECK(y[i] == doctest::Approx(a[i] * s[i % 2]).epsilon(1e-15));
    }
    {
        Graph<double> g;
        Tensor<double> u({1}), v({1});
        u.data = {3.0};
        v.data = {10.0};
        const int ui = g.push(u), vi = g.push(v);
        const int s = g.weighted_sum({ui, vi}, {0.5, 2.0});
        CHECK(g.val(s)[0] == doctest::Approx(0.5 * 3 + 2.0 * 10).epsilon(1e-15));
        g.backward(s);
        CHECK(g.grad(ui)[0] == 0.5);
        CHECK(g.grad(vi)[0] == 2.0);
    }
    // gradient through concat + slice + channel_scale
    const Tensor<double> sc = rand_tensor(rng, {2});
    auto r = fd_check(a, [&](Graph<double>& g, int id) {
        const int c = g.concat_last({id, g.push(b)});
        const int cs = g.channel_scale(c, g.push(sc));
        return g.masked_l1_mean(g.slice_last(cs, 0, 3), {});
    });
    CHECK(r.worst < 1e-6);
}

TEST_CASE("masked L1 mean selects exactly the masked pixels") {
    Tensor<double> x({2, 2, 2});
    x.data = {1, -1, 2, -2, 3, -3, 4, -4};
    Tensor<uint8_t> m({2, 2});
    m.data = {1, 0, 0, 1};
    Graph<double> g;
    const int v = g.masked_l1_mean(g.push(x), m);
    // selected pixels: (0,0) -> |1|+|-1| = 2, (1,1) -> |4|+|-4| = 8; mean over 2 pixels
    CHECK(g.val(v)[0] == doctest::Approx((2.0 + 8.0) / 2.0).epsilon(1e-15));

    Graph<double> g2;
    const int v2 = g2.masked_l1_mean(g2.push(x), {});
    CHECK(g2.val(v2)[0] == doctest::Approx((2.0 + 4.0 + 6.0 + 8.0) / 4.0).epsilon(1e-15));

    // gradients flow only into selected pixels
    Graph<double> g3;
    const int xid = g3.push(x);
    g3.backward(g3.masked_l1_mean(xid, m));
    const Tensor<double>& gr = g3.grad(xid);
    CHECK(gr[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(gr[1] == doctest::Approx(-0.5).epsilon(1e-15));
    CHECK(gr[2] == 0.0);
    CHECK(gr[3] == 0.0);
    CHECK(gr[4] == 0.0);
    CHECK(gr[5] == 0.0);
    CHECK(gr[6] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(gr[7] == doctest::Approx(-0.5).epsilon(1e-15));
}

TEST_CASE("single tensor files round trip bitwise") {
    testutil::Rng rng(88);
    const std::string path = tmp_path("roundtrip.mtn");
    for (int it = 0; it < 5; ++it) {
        std::vector<int64_t> shape;
        const int rank = 1 + static_cast<int>(rng.uniform_int(3));
        for (int i = 0; i < rank; ++i) shape.push_back(1 + rng.uniform_int(6));
        Tensor<float> t(shape);
        for (auto& v : t.data) v = static_cast<float>(rng.normal() * 100.0);
        write_mtn1(path, t);
        const Tensor<float> r = read_mtn1(path);
        REQUIRE(r.shape == t.shape);
        for (int64_t i = 0; i < t.numel(); ++i) CHECK(r[i] == t[i]);
    }
    std::filesystem::remove(path);
}

TEST_CASE("tensor bundles preserve order, names, and payload") {
    testutil::Rng rng(99);
    NamedTensors nt;
    for (int i = 0; i < 4; ++i) {
        Tensor<float> t({2 + i, 3});
        for (auto& v : t.data) v = static_cast<float>(rng.normal());
        nt.items.emplace_back("block." + std::to_string(i) + ".w", std::move(t));
    }
    const std::string path = tmp_path("bundle.mtn");
    write_mtn_bundle(path, nt);
    const NamedTensors back = read_mtn_bundle(path);
    REQUIRE(back.items.size() == nt.items.size());
    for (size_t i = 0; i < nt.items.size(); ++i) {
        CHECK(back.items[i].first == nt.items[i].first);
        REQUIRE(back.items[i].second.shape == nt.items[i].second.shape);
        for (int64_t j = 0; j < nt.items[i].second.numel(); ++j)
            CHECK(back.items[i].second[j] == nt.items[i].second[j]);
    }
    CHECK(back.find("block.2.w") != nullptr);
    CHECK(back.find("missing") == nullptr);
    std::filesystem::remove(path);
}

TEST_CASE("corrupt tensor files are rejected") {
    const std::string path = tmp_path("garbage.mtn");
    {
        FILE* f = fopen(path.c_str(), "wb");
        REQUIRE(f != nullptr);
        fwrite("NOPE1234", 1, 8, f);
        fclose(f);
    }
    CHECK_THROWS_AS(read_mtn1(path), std::runtime_error);
    CHECK_THROWS_AS(read_mtn_bundle(path), std::runtime_error);
    std::filesystem::remove(path);
}
