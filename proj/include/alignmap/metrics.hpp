#ifndef ALIGNMAP_METRICS_HPP
#define ALIGNMAP_METRICS_HPP

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <vector>

#include "error.hpp"
#include "knn.hpp"
#include "matrix.hpp"

/**
 * @file metrics.hpp
 *
 * @brief Neighborhood-preservation measures for embeddings.
 */

namespace alignmap {

/**
 * Trustworthiness at `k`: one minus the normalized rank penalty of points
 * that are embedding neighbors but not high-dimensional neighbors. Ranks come
 * from a full sort of Euclidean distances (ties by index).
 */
template<typename High_, typename Low_>
double trustworthiness(const Matrix<High_>& highdim, const Matrix<Low_>& embedding, std::size_t k) {
    const std::size_t N = highdim.rows();
    if (embedding.rows() != N) {
        throw InvalidArgument("trustworthiness: inputs have different numbers of points");
    }
    if (k < 1 || 2 * k >= N) {
        throw InvalidArgument("trustworthiness: k = " + std::to_string(k) + " must satisfy 1 <= k < N/2 with N = " + std::to_string(N));
    }

    auto low = exact_knn(embedding, k, Metric::euclidean);
    std::vector<std::pair<double, std::uint32_t>> order(N - 1);
    std::vector<std::size_t> rank(N);
    double penalty = 0;
    for (std::size_t i = 0; i < N; ++i) {
        auto xi = highdim.row(i);
        std::size_t pos = 0;
        for (std::size_t j = 0; j < N; ++j) {
            if (j != i) {
                order[pos++] = { distance(Metric::euclidean, xi, highdim.row(j)), static_cast<std::uint32_t>(j) };
            }
        }
        std::sort(order.begin(), order.end());
        for (std::size_t r = 0; r < order.size(); ++r) {
            rank[order[r].second] = r + 1;
        }
        for (auto j : low.neighbors(i)) {
            if (rank[j] > k) {
                penalty += static_cast<double>(rank[j] - k);
            }
        }
    }
    const double n = static_cast<double>(N), kk = static_cast<double>(k);
    return 1.0 - 2.0 / (n * kk * (2.0 * n - 3.0 * kk - 1.0)) * penalty;
}

/**
 * Mean fraction of each point's first `k` high-dimensional neighbors that are
 * also among its exact `k` nearest neighbors in the embedding.
 */
template<typename Low_>
double neighbor_recall(const KnnGraph& highdim_knn, const Matrix<Low_>& embedding, std::size_t k) {
    if (k < 1 || k > highdim_knn.k) {
        throw InvalidArgument("neighbor_recall: k = " + std::to_string(k) + " exceeds the graph's k = " + std::to_string(highdim_knn.k));
    }
    if (embedding.rows() != highdim_knn.n) {
        throw InvalidArgument("neighbor_recall: embedding and graph have different numbers of points");
    }
    auto low = exact_knn(embedding, k, Metric::euclidean);
    double total = 0;
    for (std::size_t i = 0; i < highdim_knn.n; ++i) {
        auto high = highdim_knn.neighbors(i).first(k);
        auto mine = low.neighbors(i);
        std::size_t hits = 0;
        for (auto j : high) {
            hits += (std::find(mine.begin(), mine.end(), j) != mine.end());
        }
        total += static_cast<double>(hits) / static_cast<double>(k);
    }
    return total / static_cast<double>(highdim_knn.n);
}

}

#endif
