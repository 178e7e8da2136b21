#ifndef WEAKLOC_RNG_HPP
#define WEAKLOC_RNG_HPP

#include <cstdint>
#include <random>

namespace weakloc
{

/// splitmix64 finalizer; used to derive independent substreams from (seed, index).
constexpr std::uint64_t mix64(std::uint64_t x) noexcept
{
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t index) noexcept
{
    return mix64(mix64(seed) ^ mix64(index + 0x632BE59BD9B4E019ULL));
}

class Rng
{
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform in [lo, hi).
    double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
    double normal(double mean = 0.0, double stddev = 1.0) { return std::normal_distribution<double>(mean, stddev)(engine_); }
    /// Uniform integer in [lo, hi].
    std::int64_t integer(std::int64_t lo, std::int64_t hi)
    {
        return std::uniform_int_distribution<std::int64_t>(lo, hi)(engine_);
    }
    bool bernoulli(double p) { return uniform() < p; }

    std::mt19937_64 &engine() noexcept { return engine_; }

private:
    std::mt19937_64 engine_;
};

} // namespace weakloc

#endif
