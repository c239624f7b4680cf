#include <gtest/gtest.h>

#include <cmath>

#include "alignmap/curve.hpp"

using namespace alignmap;

namespace {

// Derivative-free reference: coarse log-grid scan, then pattern search with a
// shrinking step until it is far below the comparison tolerance.
CurveParams reference_fit(double min_dist, double spread) {
    CurveParams best;
    double best_rms = INFINITY;
    for (int i = 0; i <= 120; ++i) {
        for (int j = 0; j <= 120; ++j) {
            CurveParams p{ std::exp(-3.0 + 6.0 * i / 120), 0.2 + 2.3 * j / 120 };
            double r = curve_rms_residual(p, min_dist, spread);
            if (r < best_rms) {
                best_rms = r;
                best = p;
            }
        }
    }
    double step = 0.05;
    while (step > 1e-10) {
        bool moved = false;
        for (auto [da, db] : { std::pair{ 1, 0 }, { -1, 0 }, { 0, 1 }, { 0, -1 } }) {
            CurveParams p{ best.a * std::exp(da * step), best.b + db * step };
            double r = curve_rms_residual(p, min_dist, spread);
            if (r < best_rms) {
                best_rms = r;
                best = p;
                moved = true;
            }
        }
        if (!moved) {
            step /= 2;
        }
    }
    return best;
}

}

TEST(Curve, ValueAtZeroIsOne) {
    EXPECT_EQ(curve_value({ 1.5, 0.9 }, 0.0), 1.0);
    EXPECT_EQ(curve_value({ 100, 3 }, 0.0), 1.0);
    EXPECT_EQ(curve_target(0.0, 0.1, 1.0), 1.0);
    EXPECT_NEAR(curve_target(1.1, 0.1, 1.0), std::exp(-1.0), 1e-15);
}

TEST(Curve, GridShape) {
    auto x = curve_grid(2.0);
    ASSERT_EQ(x.size(), 300u);
    EXPECT_EQ(x.front(), 0.0);
    EXPECT_DOUBLE_EQ(x.back(), 6.0);
}

TEST(Curve, MatchesDerivativeFreeReference) {
    for (double md : { 0.0, 0.1, 0.25, 0.5, 0.8 }) {
        auto fit = fit_curve(md, 1.0);
        auto ref = reference_fit(md, 1.0);
        EXPECT_NEAR(fit.params.a, ref.a, 1e-2 * ref.a) << md;
        EXPECT_NEAR(fit.params.b, ref.b, 1e-2) << md;
        EXPECT_LE(fit.rms_residual, curve_rms_residual(ref, md, 1.0) + 1e-9) << md;
        EXPECT_DOUBLE_EQ(fit.rms_residual, curve_rms_residual(fit.params, md, 1.0));
    }
}

TEST(Curve, DefaultParameters) {
    auto fit = fit_curve(0.1, 1.0);
    EXPECT_NEAR(fit.params.a, 1.577, 1e-2);
    EXPECT_NEAR(fit.params.b, 0.895, 1e-2);
}

TEST(Curve, ScaleDecreasesWithMinDist) {
    double prev = INFINITY;
    for (double md : { 0.1, 0.25, 0.5 }) {
        auto a = fit_curve(md, 1.0).params.a;
        EXPECT_LT(a, prev) << md;
        prev = a;
    }
}

TEST(Curve, RejectsInvalidArguments) {
    EXPECT_THROW(fit_curve(0.1, 0.0), InvalidArgument);
    EXPECT_THROW(fit_curve(0.1, -1.0), InvalidArgument);
    EXPECT_THROW(fit_curve(-0.1, 1.0), InvalidArgument);
    EXPECT_THROW(fit_curve(2.0, 1.0), InvalidArgument);
    EXPECT_THROW(fit_curve(NAN, 1.0), InvalidArgument);
    EXPECT_THROW(fit_curve(0.1, INFINITY), InvalidArgument);
}

TEST(Curve, FiniteAcrossSweep) {
    for (double spread : { 0.5, 1.0, 2.0, 5.0 }) {
        for (double frac : { 0.0, 0.05, 0.2, 0.5, 0.9, 1.0 }) {
            auto fit = fit_curve(frac * spread, spread);
            EXPECT_TRUE(std::isfinite(fit.params.a) && fit.params.a > 0) << spread << " " << frac;
            EXPECT_TRUE(std::isfinite(fit.params.b) && fit.params.b > 0) << spread << " " << frac;
            EXPECT_TRUE(std::isfinite(fit.rms_residual));
        }
    }
}
