#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace sgmm {

/// Random streams.
///
/// Every stochastic routine takes a 64-bit seed. Independent substreams are
/// derived by hashing a path of integers (master seed, grid index, replicate
/// index, stage) through the SplitMix64 finalizer, so a replicate's stream
/// depends only on its coordinates and never on execution order. The
/// engine behind a stream is std::mt19937_64 seeded with the derived value.

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Seed of the substream addressed by `path` under `master`.
constexpr std::uint64_t derive_seed(std::uint64_t master,
                                    std::initializer_list<std::uint64_t> path) noexcept {
    std::uint64_t h = mix64(master);
    for (std::uint64_t v : path) {
        h = mix64(h ^ mix64(v + 0x632be59bd9b4e019ULL));
    }
    return h;
}

/// Stage tags used as the last path component of a substream.
enum class Stage : std::uint64_t {
    parameters = 1,  // model parameters (loadings, regression vectors)
    samples = 2,     // covariates, latent variables, noise
    resample = 3,    // bootstrap row draws
    redraw = 4,      // re-draws after a degenerate parameter sample
};

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double normal() { return normal_(engine_); }
    double uniform() { return uniform_(engine_); }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        std::uniform_int_distribution<std::uint64_t> d(0, n - 1);
        return d(engine_);
    }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace sgmm
