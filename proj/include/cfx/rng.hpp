#ifndef CFX_RNG_HPP
#define CFX_RNG_HPP

#include <cstdint>
#include <random>
#include <vector>

namespace cfx::rng {

// splitmix64 finalizer; good avalanche for seed derivation.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t combine(std::uint64_t h, std::uint64_t v) {
    return mix64(h ^ (v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2)));
}

// Stream tags. Every independent random stream in the project derives its
// engine seed as substream(seed, tag, a, b) so that per-record streams are
// partition independent: the result never depends on which thread or batch
// touched the record.
namespace tag {
constexpr std::uint64_t init = 0x01;
constexpr std::uint64_t split = 0x02;
constexpr std::uint64_t shuffle = 0x03;
constexpr std::uint64_t latent_train = 0x04;
constexpr std::uint64_t latent_val = 0x05;
constexpr std::uint64_t dropout = 0x06;
constexpr std::uint64_t flip = 0x07;
constexpr std::uint64_t synth_confounder = 0x08;
constexpr std::uint64_t synth_treatment = 0x09;
constexpr std::uint64_t synth_outcome = 0x0a;
constexpr std::uint64_t fuzz = 0x0b;
}  // namespace tag

inline std::mt19937_64 substream(std::uint64_t seed, std::uint64_t t,
                                 std::uint64_t a = 0, std::uint64_t b = 0) {
    std::uint64_t h = mix64(seed);
    h = combine(h, t);
    h = combine(h, a);
    h = combine(h, b);
    return std::mt19937_64(h);
}

// Engine-stable bounded draw (modulo; bias is irrelevant at the small n used
// for level/variable picks and shuffles).
inline std::uint64_t bounded(std::mt19937_64& eng, std::uint64_t n) {
    return eng() % n;
}

// Fisher-Yates with bounded() so the permutation depends only on the engine
// stream, not on the standard library implementation.
template <typename T>
void shuffle(std::vector<T>& v, std::mt19937_64& eng) {
    if (v.size() < 2) return;
    for (std::size_t i = v.size() - 1; i > 0; --i) {
        std::size_t j = static_cast<std::size_t>(bounded(eng, i + 1));
        std::swap(v[i], v[j]);
    }
}

}  // namespace cfx::rng

#endif
