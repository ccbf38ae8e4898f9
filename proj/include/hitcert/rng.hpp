#ifndef HITCERT_RNG_HPP
#define HITCERT_RNG_HPP

#include <array>
#include <cmath>
#include <cstdint>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace hitcert {

/// Seeded, splittable random stream.
///
/// A stream is identified by (master_seed, substream_key). The xoshiro256**
/// state is derived by feeding the pair through splitmix64, the seeding
/// recipe recommended by the xoshiro authors, so
///   * identical (seed, key) pairs replay the same draw sequence on every
///     run and under any thread schedule, and
///   * distinct keys give statistically independent streams.
///
/// Substreams are derived by hashing the parent key with the child key
/// (splitmix64 finalizer), which lets callers assign one stream per trial,
/// per prefix size, or per worker without coordination.
class RngStream {
public:
    explicit RngStream(std::uint64_t master_seed, std::uint64_t substream_key = 0)
        : master_seed_(master_seed), substream_key_(substream_key) {
        std::uint64_t x = master_seed_ ^ mix_(substream_key_ + 0x9E3779B97F4A7C15ull);
        for (auto& s : state_) s = splitmix64_(x);
        // xoshiro must not start from the all-zero state
        if ((state_[0] | state_[1] | state_[2] | state_[3]) == 0) state_[3] = 0x1ull;
    }

    std::uint64_t master_seed() const { return master_seed_; }
    std::uint64_t substream_key() const { return substream_key_; }

    /// Independent child stream; key' = hash(parent_key, key).
    RngStream substream(std::uint64_t key) const {
        return RngStream(master_seed_, mix_(substream_key_ ^ mix_(key + 0x632BE59BD9B4E019ull)));
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl_(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl_(state_[3], 45);
        return result;
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double next_unit() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Standard normal draw (Box-Muller, second value cached).
    double next_gaussian() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        double u1 = next_unit();
        if (u1 < 0x1.0p-60) u1 = 0x1.0p-60;
        const double u2 = next_unit();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        cached_ = r * std::sin(theta);
        have_cached_ = true;
        return r * std::cos(theta);
    }

    /// Unbiased uniform integer in [0, bound); bound >= 1.
    std::uint64_t below(std::uint64_t bound) {
        if (bound == 0) throw std::invalid_argument("RngStream::below: bound must be positive");
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound + 1) % bound;
        std::uint64_t x = next_u64();
        while (x > limit) x = next_u64();
        return x % bound;
    }

    /// Moves a uniform random k-subset of idx to the front (partial
    /// Fisher-Yates). idx must hold at least k elements.
    template <class Index>
    void partial_shuffle(std::vector<Index>& idx, std::size_t k) {
        const std::size_t m = idx.size();
        for (std::size_t j = 0; j < k; ++j) {
            const std::size_t pick = j + static_cast<std::size_t>(below(m - j));
            std::swap(idx[j], idx[pick]);
        }
    }

private:
    static std::uint64_t rotl_(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }
    static std::uint64_t splitmix64_(std::uint64_t& x) {
        std::uint64_t z = (x += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }
    static std::uint64_t mix_(std::uint64_t x) {
        std::uint64_t tmp = x;
        return splitmix64_(tmp);
    }

    std::uint64_t master_seed_;
    std::uint64_t substream_key_;
    std::array<std::uint64_t, 4> state_{};
    double cached_ = 0.0;
    bool have_cached_ = false;
};

} // namespace hitcert

#endif // HITCERT_RNG_HPP
