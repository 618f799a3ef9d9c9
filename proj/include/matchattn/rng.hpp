#pragma once

#include <cstdint>
#include <random>

#include "matchattn/tensor.hpp"

namespace matchattn {

// Deterministic RNG. Transforms are hand-rolled so that streams are identical
// across standard library implementations (std::normal_distribution is not
// portable between vendors).
class Rng {
  public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    // [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller with a cached spare.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform(), u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    // [0, n)
    int64_t uniform_int(int64_t n) {
        return static_cast<int64_t>((static_cast<unsigned __int128>(next_u64()) *
                                     static_cast<unsigned __int128>(n)) >> 64);
    }

  private:
    std::mt19937_64 eng_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

template <typename T>
void fill_uniform(Tensor<T>& t, Rng& rng, double lo, double hi) {
    for (auto& v : t.data) v = static_cast<T>(rng.uniform(lo, hi));
}

template <typename T>
void fill_normal(Tensor<T>& t, Rng& rng, double mean, double stddev) {
    for (auto& v : t.data) v = static_cast<T>(mean + stddev * rng.normal());
}

}  // namespace matchattn
