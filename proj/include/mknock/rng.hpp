#ifndef MKNOCK_RNG_HPP
#define MKNOCK_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace mknock {

// splitmix64 finalizer; used for seed derivation and stateless tie keys.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Derive an independent stream seed from a master seed and up to three
// tags (stage id, replicate, d, ...). Pure function, so parallel workers
// can derive their streams without coordination.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a = 0,
                                 std::uint64_t b = 0, std::uint64_t c = 0) {
    std::uint64_t h = mix64(seed);
    h = mix64(h ^ a);
    h = mix64(h ^ b);
    h = mix64(h ^ c);
    return h;
}

// Stage tags for derive_seed. Fixed constants, never reordered: seeds
// recorded in manifests stay meaningful across versions.
namespace stage {
inline constexpr std::uint64_t data = 1;
inline constexpr std::uint64_t partition = 2;
inline constexpr std::uint64_t extend = 3;
inline constexpr std::uint64_t construct = 4;
inline constexpr std::uint64_t score = 5;
inline constexpr std::uint64_t permute = 6;
inline constexpr std::uint64_t select = 7;
inline constexpr std::uint64_t conjecture = 8;
inline constexpr std::uint64_t bootstrap = 9;
inline constexpr std::uint64_t tune = 10;
}  // namespace stage

inline double unit_double(std::uint64_t h) {
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

// Stateless uniform key in [0,1) for breaking score ties; (seed, i, j)
// identifies one entry of a score table.
inline double tie_key(std::uint64_t seed, std::uint64_t i, std::uint64_t j) {
    return unit_double(derive_seed(seed, 0x7465ULL, i, j));
}

// Deterministic RNG stream. Gaussian draws use Box-Muller on top of the
// uniform stream so sequences do not depend on the standard library's
// distribution implementations.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(mix64(seed)) {}

    double uniform() {
        return unit_double(engine_());
    }

    std::uint64_t next_u64() {
        return engine_();
    }

    // Uniform integer in [0, n).
    std::uint64_t uniform_int(std::uint64_t n) {
        // Rejection sampling keeps the draw exactly uniform.
        const std::uint64_t limit = n * (UINT64_MAX / n);
        std::uint64_t x = engine_();
        while (x >= limit) x = engine_();
        return x % n;
    }

    double normal() {
        const double u1 = 1.0 - uniform();  // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    bool bernoulli(double p) {
        return uniform() < p;
    }

    // Uniform random permutation of {0, ..., n-1}.
    std::vector<int> permutation(int n) {
        std::vector<int> idx(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
        for (int i = n - 1; i > 0; --i) {
            const int j = static_cast<int>(uniform_int(static_cast<std::uint64_t>(i) + 1));
            std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
        }
        return idx;
    }

  private:
    std::mt19937_64 engine_;
};

}  // namespace mknock

#endif
