#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "matchattn/bench.hpp"
#include "matchattn/decoder.hpp"
#include "matchattn/flops.hpp"
#include "matchattn/imageio.hpp"
#include "matchattn/rng.hpp"
#include "matchattn/scene.hpp"

using namespace matchattn;

namespace {

std::string tmp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void spit(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// ground truth must warp the target view back onto the reference exactly
// (integer-shift scenes sample the same texture values in both views)
template <typename T>
void check_warp_identity(const Scene<T>& s) {
    const int64_t H = s.img0.dim(0), W = s.img0.dim(1);
    int64_t checked = 0;
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
            const int64_t p = y * W + x;
            if (s.noc0[p]) {
                const int64_t px = x + static_cast<int64_t>(s.gt.gt0[p * 2 + 0]);
                const int64_t py = y + static_cast<int64_t>(s.gt.gt0[p * 2 + 1]);
                REQUIRE(px >= 0);
                REQUIRE(px < W);
                for (int c = 0; c < 3; ++c)
                    CHECK(s.img1[(py * W + px) * 3 + c] == s.img0[p * 3 + c]);
                ++checked;
            }
            if (s.noc1[p]) {
                const int64_t px = x + static_cast<int64_t>(s.gt.gt1[p * 2 + 0]);
                const int64_t py = y + static_cast<int64_t>(s.gt.gt1[p * 2 + 1]);
                REQUIRE(px >= 0);
                REQUIRE(px < W);
                for (int c = 0; c < 3; ++c)
                    CHECK(s.img0[(py * W + px) * 3 + c] == s.img1[p * 3 + c]);
            }
        }
    CHECK(checked > 0);
}

}  // namespace

TEST_CASE("constant-shift scenes carry exact ground truth and border occlusion") {
    const int64_t H = 32, W = 48;
    const Scene<double> s =
        gen_scene<double>(Task::Stereo, SceneKind::ConstantShift, H, W, 11, 4);
    for (int64_t p = 0; p < H * W; ++p) {
        CHECK(s.gt.gt0[p * 2 + 0] == -4.0);
        CHECK(s.gt.gt0[p * 2 + 1] == 0.0);
        CHECK(s.gt.gt1[p * 2 + 0] == 4.0);
        CHECK(s.gt.valid0[p] == 1);
    }
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
            CHECK(s.noc0[y * W + x] == (x >= 4 ? 1 : 0));
            CHECK(s.noc1[y * W + x] == (x < W - 4 ? 1 : 0));
        }
    CHECK(s.occ_band0.numel() == 0);  // no foreground layer in this scene
    check_warp_identity(s);

    // pixel values stay in a sane display range
    for (int64_t i = 0; i < s.img0.numel(); ++i) {
        CHECK(s.img0[i] > -0.2);
        CHECK(s.img0[i] < 1.2);
    }

    // the generator is deterministic in the seed
    const Scene<double> t =
        gen_scene<double>(Task::Stereo, SceneKind::ConstantShift, H, W, 11, 4);
    for (int64_t i = 0; i < s.img0.numel(); ++i) CHECK(s.img0[i] == t.img0[i]);
    const Scene<double> u =
        gen_scene<double>(Task::Stereo, SceneKind::ConstantShift, H, W, 12, 4);
    double diff = 0;
    for (int64_t i = 0; i < s.img0.numel(); ++i) diff += std::abs(s.img0[i] - u.img0[i]);
    CHECK(diff > 1.0);
}

TEST_CASE("two-layer scenes hide a band of background behind the foreground") {
    const int64_t H = 64, W = 96;
    const Scene<double> s = gen_scene<double>(Task::Stereo, SceneKind::TwoLayer, H, W, 13, 10);
    check_warp_identity(s);

    int64_t band = 0, band_outside_noc = 0;
    for (int64_t p = 0; p < H * W; ++p) {
        const double d0 = -s.gt.gt0[p * 2 + 0];
        CHECK((d0 == 10.0 || d0 == 2.0));  // foreground or background shift
        CHECK(s.gt.gt0[p * 2 + 1] == 0.0);
        if (s.occ_band0[p]) {
            ++band;
            if (s.noc0[p]) ++band_outside_noc;
            CHECK(d0 == 2.0);  // the hidden band is background
        }
    }
    CHECK(band > 0);
    CHECK(band_outside_noc == 0);  // the band is occluded by construction

    // band pixels sit directly left of foreground pixels: the band width is
    // df - db columns and its right edge touches the foreground rectangle
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x + 1 < W; ++x) {
            const int64_t p = y * W + x;
            if (s.occ_band0[p] && !s.occ_band0[p + 1]) {
                const double right = -s.gt.gt0[(p + 1) * 2 + 0];
                CHECK(right == 10.0);
            }
        }
}

TEST_CASE("smooth warps are dense, bounded, border-fixed, and self-consistent") {
    const int64_t H = 48, W = 96;
    SUBCASE("stereo") {
        const Scene<double> s = gen_scene<double>(Task::Stereo, SceneKind::SmoothWarp, H, W, 3, 3);
        for (int64_t p = 0; p < H * W; ++p) {
            CHECK(s.noc0[p] == 1);
            CHECK(s.noc1[p] == 1);
            CHECK(s.gt.gt0[p * 2 + 1] == 0.0);   // purely horizontal
            CHECK(s.gt.gt0[p * 2 + 0] <= 1e-12);  // nonnegative disparity
            CHECK(s.gt.gt0[p * 2 + 0] >= -3.0 - 1e-12);
        }
        for (int64_t y = 0; y < H; ++y) {
            CHECK(std::abs(s.gt.gt0[(y * W + 0) * 2 + 0]) < 1e-9);
            CHECK(std::abs(s.gt.gt0[(y * W + W - 1) * 2 + 0]) < 1e-9);
        }
        // forward and backward fields must invert each other
        const Tensor<double> resid = consistency_residual_value(s.gt.gt0, s.gt.gt1);
        double worst = 0;
        for (int64_t i = 0; i < resid.numel(); ++i) worst = std::max(worst, std::abs(resid[i]));
        CHECK(worst < 5e-2);  // limited by bilinear interpolation of the curved field
    }
    SUBCASE("flow") {
        const Scene<double> s = gen_scene<double>(Task::Flow, SceneKind::SmoothWarp, H, W, 3, 3);
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x) {
                const int64_t p = y * W + x;
                CHECK(std::abs(s.gt.gt0[p * 2 + 0]) <= 3.0 + 1e-12);
                CHECK(std::abs(s.gt.gt0[p * 2 + 1]) <= 1.5 + 1e-12);
                // the vertical component depends on the row only
                CHECK(s.gt.gt0[p * 2 + 1] == s.gt.gt0[(y * W) * 2 + 1]);
            }
        const Tensor<double> resid = consistency_residual_value(s.gt.gt0, s.gt.gt1);
        double worst = 0;
        for (int64_t i = 0; i < resid.numel(); ++i) worst = std::max(worst, std::abs(resid[i]));
        CHECK(worst < 5e-2);
    }
}

TEST_CASE("attention flop formulas reproduce hand-computed counts") {
    struct Want {
        int64_t H, W, h, ck, cv, w;
        int64_t qk, bsm, agg, mem;
    };
    // each count was worked out independently from the cost model
    const Want table[] = {
        // 8x8, 4 heads, 32-dim keys/values, w = 3: 64*4*32*16*2 = 262144
        {8, 8, 4, 32, 32, 3, 262144, 40960, 262144, 4096},
        // minimal everything: 1*1*1*1*16*2 = 32; bsm = 20 + 32 + 108 = 160
        {1, 1, 1, 1, 1, 3, 32, 160, 32, 16},
        // 64x64, 4 heads, w = 3: memory = 4096*4*16 = 262144
        {64, 64, 4, 8, 8, 3, 4194304, 2621440, 4194304, 262144},
        // odd sizes, w = 5: per-head bsm = 20 + 72 + 300 = 392
        {2, 3, 2, 5, 7, 5, 4320, 4704, 6048, 432},
        // w = 1: expanded window 4, sub-windows 1 wide; bsm = 20 + 8 + 12 = 40
        {7, 5, 3, 4, 6, 1, 3360, 4200, 5040, 420},
    };
    for (const Want& t : table) {
        const FlopsBreakdown f = attention_flops(t.H, t.W, t.h, t.ck, t.cv, t.w);
        CHECK(f.qk == t.qk);
        CHECK(f.bsm == t.bsm);
        CHECK(f.agg == t.agg);
        CHECK(f.attn_mem == t.mem);
        CHECK(f.direct() == t.qk + t.bsm + t.agg);
        CHECK(f.tensor == 0);
    }
}

TEST_CASE("full decoder flop totals stay in the expected band") {
    const DecoderConfig cfg = preset_config("T", Task::Stereo);
    const FlopsBreakdown f = decoder_flops(cfg, 1536, 1536);
    CHECK(f.total() == f.direct() + f.tensor);
    CHECK(f.total() > 150e9);
    CHECK(f.total() < 600e9);
    CHECK(f.attn_mem > 0);

    // flops scale linearly with the pixel count
    const FlopsBreakdown g = decoder_flops(cfg, 768, 1536);
    CHECK(std::abs(static_cast<double>(f.total()) / static_cast<double>(g.total()) - 2.0) < 0.02);
}

TEST_CASE("benchmark CSV format and slope fitting") {
    {
        std::vector<BenchRow> rows;
        rows.push_back({"match", 4096, 16, 3, 5, 12.5});
        rows.push_back({"match", 16384, 16, 3, 5, 50.0});
        const std::string path = tmp_path("bench_test.csv");
        write_bench_csv(path, rows, 1);
        const std::string text = slurp(path);
        std::istringstream ss(text);
        std::string l1, l2, l3;
        std::getline(ss, l1);
        std::getline(ss, l2);
        std::getline(ss, l3);
        CHECK(l1 == "variant,tokens,channels,window,runs,median_ms");
        CHECK(l2 == "# threads=1");
        CHECK(l3.substr(0, 11) == "match,4096,");
        std::filesystem::remove(path);
    }
    {
        // perfect quadratic timing data fits a slope of exactly 2
        std::vector<BenchRow> rows;
        for (int64_t n : {1024, 4096, 16384, 65536})
            rows.push_back({"x", n, 8, 3, 5, 1e-6 * static_cast<double>(n) * static_cast<double>(n)});
        CHECK(loglog_slope(rows) == doctest::Approx(2.0).epsilon(1e-9));
        for (auto& r : rows) r.median_ms = 1e-3 * static_cast<double>(r.tokens);
        CHECK(loglog_slope(rows) == doctest::Approx(1.0).epsilon(1e-9));
    }
    {
        BenchSpec spec;
        spec.sides = {256};
        CHECK_THROWS_WITH_AS(bench_variant("global", 256, spec),
                             doctest::Contains("cap"), std::runtime_error);
        CHECK_THROWS_AS(bench_variant("unknown_variant", 32, spec), std::runtime_error);
    }
}

TEST_CASE("PFM files parse from raw bytes and round trip bitwise") {
    {
        // independently assembled one-pixel file
        const std::string path = tmp_path("one.pfm");
        std::string bytes = "Pf\n1 1\n-1.0\n";
        const float v = 7.0f;
        bytes.append(reinterpret_cast<const char*>(&v), 4);
        spit(path, bytes);
        const Tensor<float> img = read_pfm(path);
        REQUIRE(img.shape == std::vector<int64_t>({1, 1, 1}));
        CHECK(img[0] == 7.0f);
        std::filesystem::remove(path);
    }
    {
        // rows are stored bottom-to-top
        Tensor<float> img({2, 1, 1});
        img[0] = 1.0f;  // top row
        img[1] = 2.0f;  // bottom row
        const std::string path = tmp_path("rows.pfm");
        write_pfm(path, img);
        const std::string bytes = slurp(path);
        REQUIRE(bytes.size() >= 8);
        float first, second;
        std::memcpy(&first, bytes.data() + bytes.size() - 8, 4);
        std::memcpy(&second, bytes.data() + bytes.size() - 4, 4);
        CHECK(first == 2.0f);   // bottom row first in the payload
        CHECK(second == 1.0f);
        const Tensor<float> back = read_pfm(path);
        CHECK(back[0] == 1.0f);
        CHECK(back[1] == 2.0f);
        std::filesystem::remove(path);
    }
    {
        Rng rng(91);
        const std::string path = tmp_path("rt.pfm");
        for (int it = 0; it < 20; ++it) {
            const int64_t H = 1 + rng.uniform_int(12), W = 1 + rng.uniform_int(12);
            const int64_t C = rng.uniform() < 0.5 ? 1 : 3;
            Tensor<float> img({H, W, C});
            for (auto& v : img.data) v = static_cast<float>(rng.normal() * 1000.0);
            write_pfm(path, img);
            const Tensor<float> back = read_pfm(path);
            REQUIRE(back.shape == img.shape);
            for (int64_t i = 0; i < img.numel(); ++i) CHECK(back[i] == img[i]);
        }
        std::filesystem::remove(path);
    }
    {
        const std::string path = tmp_path("bad.pfm");
        spit(path, "Px\n1 1\n-1.0\n....");
        CHECK_THROWS_AS(read_pfm(path), std::runtime_error);
        spit(path, "Pf\n4 4\n-1.0\nshort");
        CHECK_THROWS_AS(read_pfm(path), std::runtime_error);
        std::filesystem::remove(path);
    }
}

TEST_CASE("flow files carry the magic header and round trip bitwise") {
    {
        const std::string path = tmp_path("zero.flo");
        write_flo(path, Tensor<float>({3, 5, 2}));
        const std::string bytes = slurp(path);
        REQUIRE(bytes.size() == 4 + 4 + 4 + 3 * 5 * 2 * 4);
        float magic;
        int32_t w, h;
        std::memcpy(&magic, bytes.data(), 4);
        std::memcpy(&w, bytes.data() + 4, 4);
        std::memcpy(&h, bytes.data() + 8, 4);
        CHECK(magic == 202021.25f);
        CHECK(w == 5);
        CHECK(h == 3);
        const Tensor<float> back = read_flo(path);
        REQUIRE(back.shape == std::vector<int64_t>({3, 5, 2}));
        for (int64_t i = 0; i < back.numel(); ++i) CHECK(back[i] == 0.0f);
        std::filesystem::remove(path);
    }
    {
        Rng rng(92);
        const std::string path = tmp_path("rt.flo");
        for (int it = 0; it < 20; ++it) {
            const int64_t H = 1 + rng.uniform_int(10), W = 1 + rng.uniform_int(10);
            Tensor<float> flow({H, W, 2});
            for (auto& v : flow.data) v = static_cast<float>(rng.normal() * 50.0);
            write_flo(path, flow);
            const Tensor<float> back = read_flo(path);
            REQUIRE(back.shape == flow.shape);
            for (int64_t i = 0; i < flow.numel(); ++i) CHECK(back[i] == flow[i]);
        }
        std::filesystem::remove(path);
    }
    {
        const std::string path = tmp_path("bad.flo");
        const float wrong = 123.25f;
        std::string bytes(reinterpret_cast<const char*>(&wrong), 4);
        bytes += std::string(8, '\0');
        spit(path, bytes);
        CHECK_THROWS_AS(read_flo(path), std::runtime_error);
        std::filesystem::remove(path);
    }
}

TEST_CASE("PPM and PGM images quantize and round trip") {
    {
        Tensor<float> img({2, 3, 3});
        for (int64_t i = 0; i < img.numel(); ++i)
            img[i] = static_cast<float>((i * 7 % 256)) / 255.0f;
        const std::string path = tmp_path("rt.ppm");
        write_ppm(path, img);
        const Tensor<float> back = read_ppm(path);
        REQUIRE(back.shape == img.shape);
        for (int64_t i = 0; i < img.numel(); ++i)
            CHECK(back[i] == doctest::Approx(img[i]).epsilon(1e-6));
        std::filesystem::remove(path);
    }
    {
        Tensor<uint8_t> img({4, 5});
        for (int64_t i = 0; i < img.numel(); ++i) img[i] = static_cast<uint8_t>(i * 13);
        const std::string path = tmp_path("rt.pgm");
        write_pgm(path, img);
        const Tensor<uint8_t> back = read_pgm(path);
        REQUIRE(back.shape == img.shape);
        for (int64_t i = 0; i < img.numel(); ++i) CHECK(back[i] == img[i]);
        std::filesystem::remove(path);
    }
    {
        const std::string path = tmp_path("bad.ppm");
        spit(path, "P5\n2 2\n255\n....");  // wrong magic for a color image
        CHECK_THROWS_AS(read_ppm(path), std::runtime_error);
        std::filesystem::remove(path);
    }
}
