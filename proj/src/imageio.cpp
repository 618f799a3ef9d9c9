#include "matchattn/imageio.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>

namespace matchattn {

namespace {

struct File {
    FILE* f = nullptr;
    explicit File(const std::string& path, const char* mode) : f(std::fopen(path.c_str(), mode)) {
        MA_CHECK(f != nullptr, "cannot open " + path);
    }
    ~File() {
        if (f) std::fclose(f);
    }
    File(const File&) = delete;
    File& operator=(const File&) = delete;
};

// Reads one whitespace-delimited token, skipping '#' comments.
std::string next_token(FILE* f) {
    std::string tok;
    int c;
    while ((c = std::fgetc(f)) != EOF) {
        if (c == '#') {
            while ((c = std::fgetc(f)) != EOF && c != '\n') {
            }
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) break;
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
    MA_CHECK(!tok.empty(), "unexpected end of header");
    return tok;
}

}  // namespace

void write_pfm(const std::string& path, const Tensor<float>& img) {
    const bool color = img.rank() == 3 && img.dim(2) == 3;
    MA_CHECK(img.rank() == 2 || (img.rank() == 3 && (img.dim(2) == 1 || img.dim(2) == 3)),
             "write_pfm: image must be [H,W], [H,W,1] or [H,W,3]");
    const int64_t H = img.dim(0), W = img.dim(1);
    const int64_t c = color ? 3 : 1;
    File file(path, "wb");
    std::fprintf(file.f, "%s\n%lld %lld\n-1.0\n", color ? "PF" : "Pf",
                 static_cast<long long>(W), static_cast<long long>(H));
    for (int64_t y = H - 1; y >= 0; --y) {
        const float* row = img.ptr() + y * W * c;
        MA_CHECK(std::fwrite(row, 4, static_cast<size_t>(W * c), file.f) ==
                     static_cast<size_t>(W * c),
                 "short write");
    }
}

Tensor<float> read_pfm(const std::string& path) {
    File file(path, "rb");
    const std::string kind = next_token(file.f);
    MA_CHECK(kind == "Pf" || kind == "PF", "read_pfm: bad magic");
    const int64_t W = std::stoll(next_token(file.f));
    const int64_t H = std::stoll(next_token(file.f));
    const double scale = std::stod(next_token(file.f));
    MA_CHECK(scale < 0, "read_pfm: only little-endian files supported");
    const int64_t c = kind == "PF" ? 3 : 1;
    Tensor<float> img({H, W, c});
    for (int64_t y = H - 1; y >= 0; --y) {
        float* row = img.ptr() + y * W * c;
        MA_CHECK(std::fread(row, 4, static_cast<size_t>(W * c), file.f) ==
                     static_cast<size_t>(W * c),
                 "short read");
    }
    return img;
}

void write_flo(const std::string& path, const Tensor<float>& flow) {
    MA_CHECK(flow.rank() == 3 && flow.dim(2) == 2, "write_flo: flow must be [H,W,2]");
    const int32_t H = static_cast<int32_t>(flow.dim(0));
    const int32_t W = static_cast<int32_t>(flow.dim(1));
    File file(path, "wb");
    const float magic = 202021.25f;
    MA_CHECK(std::fwrite(&magic, 4, 1, file.f) == 1, "short write");
    MA_CHECK(std::fwrite(&W, 4, 1, file.f) == 1, "short write");
    MA_CHECK(std::fwrite(&H, 4, 1, file.f) == 1, "short write");
    MA_CHECK(std::fwrite(flow.ptr(), 4, static_cast<size_t>(flow.numel()), file.f) ==
                 static_cast<size_t>(flow.numel()),
             "short write");
}

Tensor<float> read_flo(const std::string& path) {
    File file(path, "rb");
    float magic = 0;
    int32_t W = 0, H = 0;
    MA_CHECK(std::fread(&magic, 4, 1, file.f) == 1, "short read");
    MA_CHECK(magic == 202021.25f, "read_flo: bad magic");
    MA_CHECK(std::fread(&W, 4, 1, file.f) == 1, "short read");
    MA_CHECK(std::fread(&H, 4, 1, file.f) == 1, "short read");
    MA_CHECK(W > 0 && H > 0 && W < 1 << 20 && H < 1 << 20, "read_flo: bad extents");
    Tensor<float> flow({H, W, 2});
    MA_CHECK(std::fread(flow.ptr(), 4, static_cast<size_t>(flow.numel()), file.f) ==
                 static_cast<size_t>(flow.numel()),
             "short read");
    return flow;
}

void write_ppm(const std::string& path, const Tensor<float>& img) {
    MA_CHECK(img.rank() == 3 && img.dim(2) == 3, "write_ppm: image must be [H,W,3]");
    const int64_t H = img.dim(0), W = img.dim(1);
    File file(path, "wb");
    std::fprintf(file.f, "P6\n%lld %lld\n255\n", static_cast<long long>(W),
                 static_cast<long long>(H));
    std::vector<unsigned char> row(static_cast<size_t>(W) * 3);
    for (int64_t y = 0; y < H; ++y) {
        const float* src = img.ptr() + y * W * 3;
        for (int64_t i = 0; i < W * 3; ++i) {
            const float v = std::fmin(1.f, std::fmax(0.f, src[i]));
            row[static_cast<size_t>(i)] =
                static_cast<unsigned char>(std::lround(v * 255.f));
        }
        MA_CHECK(std::fwrite(row.data(), 1, row.size(), file.f) == row.size(), "short write");
    }
}

Tensor<float> read_ppm(const std::string& path) {
    File file(path, "rb");
    MA_CHECK(next_token(file.f) == "P6", "read_ppm: bad magic");
    const int64_t W = std::stoll(next_token(file.f));
    const int64_t H = std::stoll(next_token(file.f));
    const int64_t maxv = std::stoll(next_token(file.f));
    MA_CHECK(maxv == 255, "read_ppm: only maxval 255 supported");
    Tensor<float> img({H, W, 3});
    std::vector<unsigned char> row(static_cast<size_t>(W) * 3);
    for (int64_t y = 0; y < H; ++y) {
        MA_CHECK(std::fread(row.data(), 1, row.size(), file.f) == row.size(), "short read");
        float* dst = img.ptr() + y * W * 3;
        for (int64_t i = 0; i < W * 3; ++i)
            dst[i] = static_cast<float>(row[static_cast<size_t>(i)]) / 255.f;
    }
    return img;
}

void write_pgm(const std::string& path, const Tensor<uint8_t>& img) {
    MA_CHECK(img.rank() == 2, "write_pgm: image must be [H,W]");
    const int64_t H = img.dim(0), W = img.dim(1);
    File file(path, "wb");
    std::fprintf(file.f, "P5\n%lld %lld\n255\n", static_cast<long long>(W),
                 static_cast<long long>(H));
    MA_CHECK(std::fwrite(img.ptr(), 1, static_cast<size_t>(img.numel()), file.f) ==
                 static_cast<size_t>(img.numel()),
             "short write");
}

Tensor<uint8_t> read_pgm(const std::string& path) {
    File file(path, "rb");
    MA_CHECK(next_token(file.f) == "P5", "read_pgm: bad magic");
    const int64_t W = std::stoll(next_token(file.f));
    const int64_t H = std::stoll(next_token(file.f));
    const int64_t maxv = std::stoll(next_token(file.f));
    MA_CHECK(maxv == 255, "read_pgm: only maxval 255 supported");
    Tensor<uint8_t> img({H, W});
    MA_CHECK(std::fread(img.ptr(), 1, static_cast<size_t>(img.numel()), file.f) ==
                 static_cast<size_t>(img.numel()),
             "short read");
    return img;
}

}  // namespace matchattn
