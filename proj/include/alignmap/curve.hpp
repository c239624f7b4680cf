#ifndef ALIGNMAP_CURVE_HPP
#define ALIGNMAP_CURVE_HPP

#include <cmath>
#include <string>
#include <vector>

#include "error.hpp"

/**
 * @file curve.hpp
 *
 * @brief Fit the low-dimensional similarity curve `1 / (1 + a * d^(2b))` to
 * the piecewise target defined by `min_dist` and `spread`.
 */

namespace alignmap {

struct CurveParams {
    double a = 1.0;
    double b = 1.0;
};

struct CurveFit {
    CurveParams params;
    double rms_residual = 0;
    int iterations = 0;
};

inline double curve_value(const CurveParams& p, double d) {
    if (d <= 0) {
        return 1.0;
    }
    return 1.0 / (1.0 + p.a * std::pow(d, 2 * p.b));
}

inline double curve_target(double d, double min_dist, double spread) {
    return d <= min_dist ? 1.0 : std::exp(-(d - min_dist) / spread);
}

/** The 300 evenly spaced abscissae in `[0, 3 * spread]` used for fitting. */
inline std::vector<double> curve_grid(double spread) {
    constexpr int npoints = 300;
    std::vector<double> x(npoints);
    for (int i = 0; i < npoints; ++i) {
        x[i] = 3.0 * spread * i / (npoints - 1);
    }
    return x;
}

/** Root-mean-square error of `p` against the target on `curve_grid(spread)`. */
inline double curve_rms_residual(const CurveParams& p, double min_dist, double spread) {
    auto x = curve_grid(spread);
    double sse = 0;
    for (auto d : x) {
        double r = curve_value(p, d) - curve_target(d, min_dist, spread);
        sse += r * r;
    }
    return std::sqrt(sse / static_cast<double>(x.size()));
}

/**
 * Least-squares fit of `(a, b)` by Levenberg-Marquardt (damped Gauss-Newton).
 * Throws `OptimizationError` if the parameters do not settle within 500
 * iterations.
 */
inline CurveFit fit_curve(double min_dist, double spread) {
    if (!(spread > 0) || !(min_dist >= 0) || min_dist > spread || !std::isfinite(spread)) {
        throw InvalidArgument("fit_curve: need 0 <= min_dist <= spread and spread > 0");
    }

    const auto x = curve_grid(spread);
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        y[i] = curve_target(x[i], min_dist, spread);
    }

    auto sse = [&](const CurveParams& p) {
        double total = 0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            double r = curve_value(p, x[i]) - y[i];
            total += r * r;
        }
        return total;
    };

    constexpr int max_iterations = 500;
    constexpr double tolerance = 1e-9;

    CurveParams p;
    double current = sse(p);
    double damping = 1e-3;
    int iter = 0;
    bool converged = false;

    for (; iter < max_iterations && !converged; ++iter) {
        // Normal equations for the 2-parameter problem.
        double jaa = 0, jab = 0, jbb = 0, ga = 0, gb = 0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            double d = x[i];
            if (d <= 0) {
                continue;
            }
            double pw = std::pow(d, 2 * p.b);
            double denom = 1 + p.a * pw;
            double phi = 1 / denom;
            double r = phi - y[i];
            double da = -pw / (denom * denom);
            double db = -p.a * pw * 2 * std::log(d) / (denom * denom);
            jaa += da * da;
            jab += da * db;
            jbb += db * db;
            ga += da * r;
            gb += db * r;
        }

        bool accepted = false;
        while (!accepted) {
            double maa = jaa * (1 + damping), mbb = jbb * (1 + damping);
            double det = maa * mbb - jab * jab;
            if (!(std::abs(det) > 0) || !std::isfinite(det)) {
                damping *= 10;
                if (damping > 1e12) {
                    converged = true;
                    break;
                }
                continue;
            }
            double step_a = -(mbb * ga - jab * gb) / det;
            double step_b = -(maa * gb - jab * ga) / det;
            CurveParams trial{ p.a + step_a, p.b + step_b };

            double candidate = (trial.a > 0 && trial.b > 0 ? sse(trial) : INFINITY);
            if (std::isfinite(candidate) && candidate <= current) {
                accepted = true;
                p = trial;
                current = candidate;
                damping = std::max(damping / 10, 1e-12);
                if (std::abs(step_a) < tolerance * (1 + std::abs(p.a)) && std::abs(step_b) < tolerance * (1 + std::abs(p.b))) {
                    converged = true;
                }
            } else {
                damping *= 10;
                if (damping > 1e12) {
                    // No descent direction left at machine precision.
                    converged = true;
                    break;
                }
            }
        }
    }

    double rms = std::sqrt(current / static_cast<double>(x.size()));
    if (!converged || !std::isfinite(p.a) || !std::isfinite(p.b)) {
        throw OptimizationError("fit_curve did not converge for min_dist=" + std::to_string(min_dist) +
            ", spread=" + std::to_string(spread) + " (rms residual " + std::to_string(rms) + ")");
    }
    return CurveFit{ p, rms, iter };
}

}

#endif
