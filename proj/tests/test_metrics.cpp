#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "alignmap/ingest.hpp"
#include "alignmap/layout.hpp"
#include "alignmap/metrics.hpp"
#include "test_utils.hpp"

using namespace alignmap;

namespace {

double euclid(const Matrix<double>& m, std::size_t i, std::size_t j) {
    double s = 0;
    for (std::size_t c = 0; c < m.cols(); ++c) {
        double d = m(i, c) - m(j, c);
        s += d * d;
    }
    return std::sqrt(s);
}

std::vector<std::size_t> sorted_others(const Matrix<double>& m, std::size_t i) {
    std::vector<std::size_t> order;
    for (std::size_t j = 0; j < m.rows(); ++j) {
        if (j != i) {
            order.push_back(j);
        }
    }
    std::stable_sort(order.begin(), order.end(), [&](auto x, auto y) { return euclid(m, i, x) < euclid(m, i, y); });
    return order;
}

// Textbook trustworthiness computed straight from its definition.
double naive_trustworthiness(const Matrix<double>& high, const Matrix<double>& low, std::size_t k) {
    const std::size_t n = high.rows();
    double penalty = 0;
    for (std::size_t i = 0; i < n; ++i) {
        auto h = sorted_others(high, i);
        auto l = sorted_others(low, i);
        for (std::size_t p = 0; p < k; ++p) {
            auto j = l[p];
            auto rank = static_cast<std::size_t>(std::find(h.begin(), h.end(), j) - h.begin()) + 1;
            if (rank > k) {
                penalty += static_cast<double>(rank - k);
            }
        }
    }
    double N = static_cast<double>(n), K = static_cast<double>(k);
    return 1 - 2 / (N * K * (2 * N - 3 * K - 1)) * penalty;
}

double naive_recall(const Matrix<double>& high, const Matrix<double>& low, std::size_t k) {
    double total = 0;
    for (std::size_t i = 0; i < high.rows(); ++i) {
        auto h = sorted_others(high, i);
        auto l = sorted_others(low, i);
        std::size_t hits = 0;
        for (std::size_t p = 0; p < k; ++p) {
            hits += std::count(l.begin(), l.begin() + static_cast<long>(k), h[p]);
        }
        total += static_cast<double>(hits) / static_cast<double>(k);
    }
    return total / static_cast<double>(high.rows());
}

Matrix<double> rigid(const Matrix<double>& m, double angle, double tx, double ty) {
    Matrix<double> out(m.rows(), 2);
    double c = std::cos(angle), s = std::sin(angle);
    for (std::size_t r = 0; r < m.rows(); ++r) {
        out(r, 0) = c * m(r, 0) - s * m(r, 1) + tx;
        out(r, 1) = s * m(r, 0) + c * m(r, 1) + ty;
    }
    return out;
}

}

TEST(Trustworthiness, IsometryScoresOne) {
    auto pts = test_utils::random_matrix<double>(80, 2, 1);
    EXPECT_DOUBLE_EQ(trustworthiness(pts, pts, 5), 1.0);
    EXPECT_NEAR(trustworthiness(pts, rigid(pts, 0.7, 3, -2), 5), 1.0, 1e-12);
}

TEST(Trustworthiness, SwappedPointsMatchNaive) {
    Matrix<double> high(6, 1);
    for (std::size_t r = 0; r < 6; ++r) {
        high(r, 0) = static_cast<double>(r);
    }
    Matrix<double> low(6, 2);
    std::vector<double> xs{ 5, 1, 2, 3, 4, 0 };
    for (std::size_t r = 0; r < 6; ++r) {
        low(r, 0) = xs[r];
    }
    double t = trustworthiness(high, low, 2);
    EXPECT_LT(t, 1.0);
    EXPECT_NEAR(t, naive_trustworthiness(high, low, 2), 1e-12);
}

TEST(Trustworthiness, MatchesNaiveOnRandomData) {
    auto high = test_utils::random_matrix<double>(120, 6, 2);
    auto low = test_utils::random_matrix<double>(120, 2, 3);
    for (std::size_t k : { 1u, 5u, 20u }) {
        EXPECT_NEAR(trustworthiness(high, low, k), naive_trustworthiness(high, low, k), 1e-12) << k;
    }
}

TEST(Trustworthiness, OptimizedBeatsRandom) {
    SynthParams sp;
    sp.points_per_cluster = 167;
    sp.n_epochs = 1;
    auto series = synth_series(sp);
    const auto& slice = series.slices[0];
    std::vector<FuzzyGraph> graphs{ fuzzy_graph(exact_knn(slice.matrix, 15, Metric::euclidean)) };
    Hyperparameters hp;
    hp.n_optim_epochs = 100;
    auto out = optimize_aligned(graphs, { { slice.layer_id, slice.epoch, slice.sample_ids, slice.labels } }, hp);
    auto noise = test_utils::random_matrix(slice.matrix.rows(), 2, 5);
    double good = trustworthiness(slice.matrix, out.slices[0].positions, 10);
    double bad = trustworthiness(slice.matrix, noise, 10);
    EXPECT_GT(good, bad + 0.1);
    EXPECT_GE(bad, 0.0);
    EXPECT_LE(good, 1.0);
}

TEST(Trustworthiness, RejectsBadK) {
    auto pts = test_utils::random_matrix<double>(10, 2, 1);
    EXPECT_THROW(trustworthiness(pts, pts, 0), InvalidArgument);
    EXPECT_THROW(trustworthiness(pts, pts, 5), InvalidArgument);
    auto fewer = test_utils::random_matrix<double>(9, 2, 1);
    EXPECT_THROW(trustworthiness(pts, fewer, 2), InvalidArgument);
}

TEST(NeighborRecall, ExtremeCases) {
    Matrix<double> line(8, 1);
    for (std::size_t r = 0; r < 8; ++r) {
        line(r, 0) = static_cast<double>(r);
    }
    auto knn = exact_knn(line, 2, Metric::euclidean);
    EXPECT_EQ(neighbor_recall(knn, line, 2), 1.0);

    // Two far-apart groups with the membership interleaved.
    Matrix<double> high(4, 1), low(4, 1);
    std::vector<double> hx{ 0, 0.1, 10, 10.1 }, lx{ 0, 10, 0.1, 10.1 };
    for (std::size_t r = 0; r < 4; ++r) {
        high(r, 0) = hx[r];
        low(r, 0) = lx[r];
    }
    EXPECT_EQ(neighbor_recall(exact_knn(high, 1, Metric::euclidean), low, 1), 0.0);
}

TEST(NeighborRecall, MatchesNaiveAndIsRigidInvariant) {
    auto high = test_utils::random_matrix<double>(300, 5, 7);
    auto low = test_utils::random_matrix<double>(300, 2, 8);
    auto knn = exact_knn(high, 10, Metric::euclidean);
    double r = neighbor_recall(knn, low, 10);
    EXPECT_NEAR(r, naive_recall(high, low, 10), 1e-12);
    EXPECT_NEAR(neighbor_recall(knn, rigid(low, 1.3, -4, 9), 10), r, 1e-12);
    EXPECT_GE(r, 0.0);
    EXPECT_LE(r, 1.0);
    EXPECT_THROW(neighbor_recall(knn, low, 11), InvalidArgument);
    EXPECT_THROW(neighbor_recall(knn, low, 0), InvalidArgument);
}
