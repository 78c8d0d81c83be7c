#ifndef CADAPT_RNG_HPP
#define CADAPT_RNG_HPP

#include <cstddef>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace cadapt {

std::uint64_t splitmix64(std::uint64_t x) noexcept;
std::uint64_t fnv1a(std::string_view text, std::uint64_t basis = 0xcbf29ce484222325ULL) noexcept;

/// Seeded random stream. The distributions are written out here instead of
/// using <random>'s, whose outputs differ between standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

    /// Independent stream derived from (seed, purpose).
    static Rng stream(std::uint64_t seed, std::string_view purpose) {
        return Rng(seed ^ fnv1a(purpose));
    }
    Rng derive(std::string_view purpose, std::uint64_t index = 0);

    std::uint64_t next() { return engine_(); }
    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n).
    std::size_t index(std::size_t n);
    /// Uniform integer in [lo, hi].
    long long integer(long long lo, long long hi);
    bool bernoulli(double p) { return uniform() < p; }
    double normal();

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[index(i)]);
        }
    }
    /// k distinct values from [0, n), in increasing order.
    std::vector<std::size_t> sample_sorted(std::size_t n, std::size_t k);

    /// Fingerprint of the engine state, for run histories.
    std::uint64_t fingerprint() const;

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace cadapt

#endif
