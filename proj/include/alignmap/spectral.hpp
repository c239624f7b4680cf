#ifndef ALIGNMAP_SPECTRAL_HPP
#define ALIGNMAP_SPECTRAL_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "fuzzy.hpp"
#include "matrix.hpp"
#include "random.hpp"

/**
 * @file spectral.hpp
 *
 * @brief Spectral initialization from the symmetric-normalized graph Laplacian.
 */

namespace alignmap {

/** Initial coordinates span `[-init_extent, init_extent]` along each axis. */
inline constexpr double init_extent = 10.0;
inline constexpr double spectral_jitter = 1e-4;

struct SpectralInit {
    Matrix<double> positions;  // n x 2
    bool used_fallback = false;
    int iterations = 0;
};

/** Number of connected components of `graph`, isolated vertices included. */
inline std::size_t count_components(const FuzzyGraph& graph) {
    std::vector<std::uint32_t> parent(graph.n);
    std::iota(parent.begin(), parent.end(), 0u);
    auto find = [&](std::uint32_t x) {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    };
    std::size_t components = graph.n;
    for (const auto& e : graph.edges) {
        auto a = find(e.i), b = find(e.j);
        if (a != b) {
            parent[std::max(a, b)] = std::min(a, b);
            --components;
        }
    }
    return components;
}

/** Uniform random positions in `[-init_extent, init_extent]^2`. */
inline Matrix<double> random_init(std::size_t n, Rng& rng) {
    Matrix<double> out(n, 2);
    for (auto& x : out.values()) {
        x = rng.uniform(-init_extent, init_extent);
    }
    return out;
}

namespace detail {

/**
 * Two leading non-trivial eigenvectors of `I + D^-1/2 W D^-1/2` (equivalently
 * the two smallest non-trivial eigenvectors of the normalized Laplacian) by
 * block subspace iteration with Rayleigh-Ritz, deflating the trivial
 * `sqrt(degree)` vector. Returns false if not converged.
 */
inline bool leading_laplacian_eigenvectors(const FuzzyGraph& graph, const std::vector<double>& degree,
    int max_iterations, Rng& rng, Eigen::MatrixXd& vectors, int& iterations)
{
    const auto n = static_cast<Eigen::Index>(graph.n);
    const Eigen::Index block = std::min<Eigen::Index>(n - 1, 8);
    constexpr double tolerance = 1e-4;

    Eigen::VectorXd inv_sqrt_deg(n), trivial(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        inv_sqrt_deg[i] = 1.0 / std::sqrt(degree[i]);
        trivial[i] = std::sqrt(degree[i]);
    }
    trivial.normalize();

    auto apply = [&](const Eigen::MatrixXd& in) {
        Eigen::MatrixXd out = in;
        for (const auto& e : graph.edges) {
            double w = e.weight * inv_sqrt_deg[e.i] * inv_sqrt_deg[e.j];
            out.row(e.i) += w * in.row(e.j);
            out.row(e.j) += w * in.row(e.i);
        }
        return out;
    };
    auto deflate_orthonormalize = [&](Eigen::MatrixXd& x) {
        x -= trivial * (trivial.transpose() * x);
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(x);
        x = qr.householderQ() * Eigen::MatrixXd::Identity(n, x.cols());
        x -= trivial * (trivial.transpose() * x);
    };

    Eigen::MatrixXd x(n, block);
    for (Eigen::Index c = 0; c < block; ++c) {
        for (Eigen::Index r = 0; r < n; ++r) {
            x(r, c) = rng.normal();
        }
    }
    deflate_orthonormalize(x);

    for (iterations = 1; iterations <= max_iterations; ++iterations) {
        Eigen::MatrixXd mx = apply(x);
        Eigen::MatrixXd h = x.transpose() * mx;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (h + h.transpose()));
        // Eigenvalues come back ascending; the leading pairs are the last columns.
        Eigen::MatrixXd rotation = eig.eigenvectors().rowwise().reverse();
        Eigen::VectorXd theta = eig.eigenvalues().reverse();
        Eigen::MatrixXd ritz = x * rotation;
        Eigen::MatrixXd mritz = mx * rotation;

        bool done = true;
        for (Eigen::Index c = 0; c < 2; ++c) {
            double residual = (mritz.col(c) - theta[c] * ritz.col(c)).norm();
            if (!(residual < tolerance)) {
                done = false;
            }
        }
        if (done) {
            vectors = ritz.leftCols(2);
            return true;
        }

        x = mritz;
        deflate_orthonormalize(x);
    }
    return false;
}

}

/**
 * Spectral layout of `graph`, rescaled so each coordinate spans
 * `[-10, 10]`, plus uniform jitter of magnitude 1e-4. Disconnected graphs,
 * graphs with fewer than 3 vertices and eigensolver non-convergence within
 * `max_iterations` fall back to `random_init()`.
 */
inline SpectralInit spectral_init(const FuzzyGraph& graph, Rng& rng, int max_iterations = 1000) {
    SpectralInit out;
    const std::size_t n = graph.n;

    std::vector<double> degree(n, 0.0);
    for (const auto& e : graph.edges) {
        degree[e.i] += e.weight;
        degree[e.j] += e.weight;
    }

    bool usable = n >= 3 && count_components(graph) == 1;
    Eigen::MatrixXd vectors;
    if (usable) {
        usable = detail::leading_laplacian_eigenvectors(graph, degree, max_iterations, rng, vectors, out.iterations);
    }
    if (!usable) {
        out.positions = random_init(n, rng);
        out.used_fallback = true;
        return out;
    }

    out.positions = Matrix<double>(n, 2);
    for (Eigen::Index c = 0; c < 2; ++c) {
        auto col = vectors.col(c);
        // Fix the arbitrary eigenvector sign: largest-magnitude entry is positive.
        Eigen::Index argmax = 0;
        col.cwiseAbs().maxCoeff(&argmax);
        double sign = (col[argmax] < 0 ? -1.0 : 1.0);
        double lo = sign * col.minCoeff(), hi = sign * col.maxCoeff();
        if (lo > hi) {
            std::swap(lo, hi);
        }
        double range = hi - lo;
        for (std::size_t r = 0; r < n; ++r) {
            double v = sign * col[static_cast<Eigen::Index>(r)];
            double scaled = (range > 0 ? -init_extent + 2 * init_extent * (v - lo) / range : 0.0);
            out.positions(r, static_cast<std::size_t>(c)) = scaled;
        }
    }
    for (auto& v : out.positions.values()) {
        v += rng.uniform(-spectral_jitter, spectral_jitter);
    }
    return out;
}

}

#endif
