#ifndef ALIGNMAP_FUZZY_HPP
#define ALIGNMAP_FUZZY_HPP

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "error.hpp"
#include "knn.hpp"

/**
 * @file fuzzy.hpp
 *
 * @brief Fuzzy simplicial set construction from a k-NN graph.
 *
 * For each point we pick an offset `rho` (distance to the nearest non-zero
 * neighbor, interpolated for fractional local connectivity) and a bandwidth
 * `sigma` such that the total membership of its neighbors equals `log2(k)`.
 * Directed memberships are then merged with the probabilistic union
 * `a + b - a*b`.
 */

namespace alignmap {

/** Bracket for the bandwidth search; `sigma` is clamped to this range when unsolvable. */
inline constexpr double min_sigma = 1e-8;
inline constexpr double max_sigma = 1e8;
/** Edges whose symmetrized weight falls below this are dropped. */
inline constexpr double min_edge_weight = 1e-8;

struct LocalScale {
    double rho = 0;
    double sigma = 1;
};

struct LocalScales {
    std::vector<double> rho;
    std::vector<double> sigma;
};

struct SmoothKnnOptions {
    double local_connectivity = 1.0;
    int max_iterations = 64;
    double tolerance = 1e-5;
};

/**
 * Total membership `sum_j exp(-max(0, d_j - rho) / sigma)` of one row.
 */
inline double membership_sum(std::span<const double> distances, double rho, double sigma) {
    double sum = 0;
    for (auto d : distances) {
        sum += std::exp(-std::max(0.0, d - rho) / sigma);
    }
    return sum;
}

/**
 * Calibrate `rho` and `sigma` for one sorted row of neighbor distances.
 */
inline LocalScale smooth_knn_scales(std::span<const double> distances, const SmoothKnnOptions& opt = {}) {
    const std::size_t k = distances.size();
    if (k < 2) {
        throw InvalidArgument("smooth_knn_scales: need at least 2 neighbors");
    }
    if (!std::is_sorted(distances.begin(), distances.end())) {
        throw InvalidArgument("smooth_knn_scales: distances must be sorted ascending");
    }
    if (!(opt.local_connectivity >= 0)) {
        throw InvalidArgument("smooth_knn_scales: local_connectivity must be non-negative");
    }

    LocalScale out;
    auto first_nonzero = std::upper_bound(distances.begin(), distances.end(), 0.0);
    std::span<const double> nonzero(first_nonzero, distances.end());
    if (!nonzero.empty()) {
        const double lc = opt.local_connectivity;
        if (static_cast<double>(nonzero.size()) >= lc) {
            auto index = static_cast<std::size_t>(std::floor(lc));
            double interp = lc - static_cast<double>(index);
            if (index > 0) {
                out.rho = nonzero[index - 1];
                if (interp > 0 && index < nonzero.size()) {
                    out.rho += interp * (nonzero[index] - nonzero[index - 1]);
                }
            } else {
                out.rho = interp * nonzero[0];
            }
        } else {
            out.rho = nonzero.back();
        }
    }

    const double target = std::log2(static_cast<double>(k));
    double lo = min_sigma, hi = max_sigma;
    if (membership_sum(distances, out.rho, lo) >= target) {
        out.sigma = lo;
        return out;
    }
    if (membership_sum(distances, out.rho, hi) <= target) {
        out.sigma = hi;
        return out;
    }

    double mid = 1.0;
    for (int it = 0; it < opt.max_iterations; ++it) {
        mid = lo + (hi - lo) / 2;
        double sum = membership_sum(distances, out.rho, mid);
        if (std::abs(sum - target) < opt.tolerance) {
            break;
        }
        if (sum > target) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    out.sigma = std::clamp(mid, min_sigma, max_sigma);
    return out;
}

inline LocalScales smooth_knn_scales(const KnnGraph& graph, const SmoothKnnOptions& opt = {}) {
    LocalScales out;
    out.rho.resize(graph.n);
    out.sigma.resize(graph.n);
    for (std::size_t i = 0; i < graph.n; ++i) {
        auto s = smooth_knn_scales(graph.neighbor_distances(i), opt);
        out.rho[i] = s.rho;
        out.sigma[i] = s.sigma;
    }
    return out;
}

struct DirectedEdge {
    std::uint32_t from;
    std::uint32_t to;
    double weight;
};

struct DirectedWeights {
    std::size_t n = 0;
    std::vector<DirectedEdge> edges;
};

/**
 * Directed memberships `exp(-max(0, d - rho_i) / sigma_i)`. Entries that
 * underflow to zero are omitted, so every stored weight lies in (0, 1].
 */
inline DirectedWeights membership_strengths(const KnnGraph& graph, const LocalScales& scales) {
    if (scales.rho.size() != graph.n || scales.sigma.size() != graph.n) {
        throw InvalidArgument("membership_strengths: scales do not match the graph");
    }
    DirectedWeights out;
    out.n = graph.n;
    out.edges.reserve(graph.n * graph.k);
    for (std::size_t i = 0; i < graph.n; ++i) {
        auto idx = graph.neighbors(i);
        auto dist = graph.neighbor_distances(i);
        for (std::size_t p = 0; p < graph.k; ++p) {
            double w = std::exp(-std::max(0.0, dist[p] - scales.rho[i]) / scales.sigma[i]);
            if (w > 0) {
                out.edges.push_back({ static_cast<std::uint32_t>(i), idx[p], std::min(w, 1.0) });
            }
        }
    }
    return out;
}

/**
 * Undirected weighted graph, one entry per unordered pair with `i < j`,
 * sorted by `(i, j)`.
 */
struct FuzzyGraph {
    std::size_t n = 0;

    struct Edge {
        std::uint32_t i;
        std::uint32_t j;
        double weight;
        bool operator==(const Edge&) const = default;
    };
    std::vector<Edge> edges;

    bool operator==(const FuzzyGraph&) const = default;
};

/**
 * Number of `symmetrize()` calls made by this process; the pipeline tests
 * use it to check that each slice is symmetrized exactly once.
 */
inline std::atomic<std::size_t>& symmetrize_call_count() {
    static std::atomic<std::size_t> count{0};
    return count;
}

/**
 * Probabilistic union `w_ij + w_ji - w_ij * w_ji`, dropping edges below `min_edge_weight`.
 */
inline FuzzyGraph symmetrize(const DirectedWeights& directed) {
    ++symmetrize_call_count();

    struct Half {
        std::uint32_t lo, hi;
        double forward, backward;
    };
    std::vector<Half> halves;
    halves.reserve(directed.edges.size());
    for (const auto& e : directed.edges) {
        if (e.from == e.to) {
            continue;
        }
        if (e.from < e.to) {
            halves.push_back({ e.from, e.to, e.weight, 0 });
        } else {
            halves.push_back({ e.to, e.from, 0, e.weight });
        }
    }
    std::sort(halves.begin(), halves.end(), [](const Half& a, const Half& b) {
        return a.lo < b.lo || (a.lo == b.lo && a.hi < b.hi);
    });

    FuzzyGraph out;
    out.n = directed.n;
    for (std::size_t s = 0; s < halves.size();) {
        double fwd = 0, bwd = 0;
        std::size_t e = s;
        for (; e < halves.size() && halves[e].lo == halves[s].lo && halves[e].hi == halves[s].hi; ++e) {
            fwd = std::max(fwd, halves[e].forward);
            bwd = std::max(bwd, halves[e].backward);
        }
        double w = fwd + bwd - fwd * bwd;
        if (w >= min_edge_weight) {
            out.edges.push_back({ halves[s].lo, halves[s].hi, w });
        }
        s = e;
    }
    return out;
}

/** k-NN graph to fuzzy graph in one step. */
inline FuzzyGraph fuzzy_graph(const KnnGraph& knn, const SmoothKnnOptions& opt = {}) {
    return symmetrize(membership_strengths(knn, smooth_knn_scales(knn, opt)));
}

}

#endif
