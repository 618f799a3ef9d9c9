#include "matchattn/tensor_io.hpp"

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

void put_u32(FILE* f, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    MA_CHECK(std::fwrite(b, 1, 4, f) == 4, "short write");
}

uint32_t get_u32(FILE* f) {
    unsigned char b[4];
    MA_CHECK(std::fread(b, 1, 4, f) == 4, "short read");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

// Host is little-endian x86 in every supported environment; floats are written
// through u32 so the on-disk layout is explicit.
void put_f32(FILE* f, float v) {
    uint32_t u;
    std::memcpy(&u, &v, 4);
    put_u32(f, u);
}

float get_f32(FILE* f) {
    uint32_t u = get_u32(f);
    float v;
    std::memcpy(&v, &u, 4);
    return v;
}

void write_record(FILE* f, const Tensor<float>& t) {
    MA_CHECK(std::fwrite("MTN1", 1, 4, f) == 4, "short write");
    put_u32(f, static_cast<uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) put_u32(f, static_cast<uint32_t>(t.dim(i)));
    for (int64_t i = 0; i < t.numel(); ++i) put_f32(f, t[i]);
}

Tensor<float> read_record(FILE* f) {
    char magic[4];
    MA_CHECK(std::fread(magic, 1, 4, f) == 4, "short read");
    MA_CHECK(std::memcmp(magic, "MTN1", 4) == 0, "bad tensor magic");
    const uint32_t rank = get_u32(f);
    MA_CHECK(rank <= 8, "implausible tensor rank");
    std::vector<int64_t> shape(rank);
    for (uint32_t i = 0; i < rank; ++i) shape[i] = static_cast<int64_t>(get_u32(f));
    Tensor<float> t(shape);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = get_f32(f);
    return t;
}

}  // namespace

void write_mtn1(const std::string& path, const Tensor<float>& t) {
    File file(path, "wb");
    write_record(file.f, t);
}

Tensor<float> read_mtn1(const std::string& path) {
    File file(path, "rb");
    return read_record(file.f);
}

const Tensor<float>* NamedTensors::find(const std::string& name) const {
    for (const auto& [n, t] : items)
        if (n == name) return &t;
    return nullptr;
}

void write_mtn_bundle(const std::string& path, const NamedTensors& bundle) {
    File file(path, "wb");
    MA_CHECK(std::fwrite("MTNM", 1, 4, file.f) == 4, "short write");
    put_u32(file.f, static_cast<uint32_t>(bundle.items.size()));
    for (const auto& [name, t] : bundle.items) {
        put_u32(file.f, static_cast<uint32_t>(name.size()));
        MA_CHECK(std::fwrite(name.data(), 1, name.size(), file.f) == name.size(), "short write");
        write_record(file.f, t);
    }
}

NamedTensors read_mtn_bundle(const std::string& path) {
    File file(path, "rb");
    char magic[4];
    MA_CHECK(std::fread(magic, 1, 4, file.f) == 4, "short read");
    MA_CHECK(std::memcmp(magic, "MTNM", 4) == 0, "bad bundle magic");
    const uint32_t count = get_u32(file.f);
    NamedTensors out;
    out.items.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t len = get_u32(file.f);
        MA_CHECK(len <= 4096, "implausible name length");
        std::string name(len, '\0');
        MA_CHECK(std::fread(name.data(), 1, len, file.f) == len, "short read");
        out.items.emplace_back(std::move(name), read_record(file.f));
    }
    return out;
}

}  // namespace matchattn
