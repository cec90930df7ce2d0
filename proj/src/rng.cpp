#include <cmath>
#include <numbers>

#include "knotforge/tensor.hpp"

namespace knotforge {

namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
    const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
    hi = static_cast<std::uint32_t>(p >> 32);
    lo = static_cast<std::uint32_t>(p);
}

std::array<std::uint32_t, 4> block_counter(const Rng& rng, std::uint64_t block) {
    return {static_cast<std::uint32_t>(rng.counter), static_cast<std::uint32_t>(rng.counter >> 32),
            static_cast<std::uint32_t>(block), static_cast<std::uint32_t>(block >> 32)};
}

constexpr double kTwoPow32 = 4294967296.0;

}  // namespace

std::array<std::uint32_t, 4> philox4x32(std::uint64_t key, std::array<std::uint32_t, 4> ctr) {
    std::uint32_t k0 = static_cast<std::uint32_t>(key);
    std::uint32_t k1 = static_cast<std::uint32_t>(key >> 32);
    for (int round = 0; round < 10; ++round) {
        std::uint32_t hi0, lo0, hi1, lo1;
        mulhilo(kMul0, ctr[0], hi0, lo0);
        mulhilo(kMul1, ctr[2], hi1, lo1);
        ctr = {hi1 ^ ctr[1] ^ k0, lo1, hi0 ^ ctr[3] ^ k1, lo0};
        k0 += kWeyl0;
        k1 += kWeyl1;
    }
    return ctr;
}

Tensor gaussian(Rng& rng, std::vector<std::size_t> shape) {
    Tensor out(std::move(shape));
    const std::size_t n = out.size();
    float* dst = out.data();
    for (std::size_t i = 0, block = 0; i < n; ++block) {
        const auto bits = philox4x32(rng.seed, block_counter(rng, block));
        for (int pair = 0; pair < 2 && i < n; ++pair) {
            // u1 in (0, 1] keeps the log finite.
            const double u1 = (static_cast<double>(bits[2 * pair]) + 1.0) / kTwoPow32;
            const double u2 = static_cast<double>(bits[2 * pair + 1]) / kTwoPow32;
            const double r = std::sqrt(-2.0 * std::log(u1));
            const double theta = 2.0 * std::numbers::pi * u2;
            dst[i++] = static_cast<float>(r * std::cos(theta));
            if (i < n) {
                dst[i++] = static_cast<float>(r * std::sin(theta));
            }
        }
    }
    ++rng.counter;
    return out;
}

std::vector<double> uniform(Rng& rng, std::size_t n) {
    std::vector<double> out(n);
    for (std::size_t i = 0, block = 0; i < n; ++block) {
        const auto bits = philox4x32(rng.seed, block_counter(rng, block));
        for (int w = 0; w < 4 && i < n; ++w) {
            out[i++] = static_cast<double>(bits[w]) / kTwoPow32;
        }
    }
    ++rng.counter;
    return out;
}

}  // namespace knotforge
