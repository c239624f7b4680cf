#ifndef ALIGNMAP_RANDOM_HPP
#define ALIGNMAP_RANDOM_HPP

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

/**
 * @file random.hpp
 *
 * @brief Reproducible random streams.
 *
 * The standard distributions are implementation-defined, so everything here is
 * built directly on the (fully specified) 64-bit Mersenne Twister and
 * `std::seed_seq`. Outputs are therefore identical across standard libraries.
 */

namespace alignmap {

/**
 * Purpose of a random stream inside the layout optimizer. Each
 * (seed, slice, phase) triple gets its own independent stream.
 */
enum class StreamPhase : std::uint32_t { init = 1, edges = 2, negatives = 3, sampling = 4, synthesis = 5 };

class Rng {
public:
    explicit Rng(std::uint64_t seed) : Rng(seed, 0, 0) {}

    Rng(std::uint64_t seed, std::uint64_t stream, std::uint32_t phase) {
        std::seed_seq seq{
            static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
            static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
            phase
        };
        my_engine.seed(seq);
    }

    Rng(std::uint64_t seed, std::uint64_t stream, StreamPhase phase) :
        Rng(seed, stream, static_cast<std::uint32_t>(phase)) {}

    std::uint64_t next() { return my_engine(); }

    /** Uniform on [0, 1) with 53 random bits. */
    double uniform() {
        return static_cast<double>(my_engine() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform();
    }

    /** Uniform integer in [0, n) via Lemire's nearly-divisionless method. */
    std::uint64_t index(std::uint64_t n) {
        unsigned __int128 m = static_cast<unsigned __int128>(my_engine()) * n;
        auto low = static_cast<std::uint64_t>(m);
        if (low < n) {
            std::uint64_t threshold = (0 - n) % n;
            while (low < threshold) {
                m = static_cast<unsigned __int128>(my_engine()) * n;
                low = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::uint64_t>(m >> 64);
    }

    /** Standard normal via Box-Muller; the spare draw is cached. */
    double normal() {
        if (my_has_spare) {
            my_has_spare = false;
            return my_spare;
        }
        double u1 = 0;
        do {
            u1 = uniform();
        } while (u1 <= 0);
        double u2 = uniform();
        double radius = std::sqrt(-2.0 * std::log(u1));
        double angle = 2.0 * std::numbers::pi * u2;
        my_spare = radius * std::sin(angle);
        my_has_spare = true;
        return radius * std::cos(angle);
    }

    /** Fisher-Yates shuffle. */
    template<typename Container_>
    void shuffle(Container_& c) {
        for (std::size_t i = c.size(); i > 1; --i) {
            std::size_t j = index(i);
            std::swap(c[i - 1], c[j]);
        }
    }

private:
    std::mt19937_64 my_engine;
    bool my_has_spare = false;
    double my_spare = 0;
};

}

#endif
