#ifndef ALIGNMAP_LAYOUT_HPP
#define ALIGNMAP_LAYOUT_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "curve.hpp"
#include "error.hpp"
#include "fuzzy.hpp"
#include "ingest.hpp"
#include "knn.hpp"
#include "matrix.hpp"
#include "random.hpp"
#include "spectral.hpp"

/**
 * @file layout.hpp
 *
 * @brief Joint optimization of 2D layouts for every epoch of one layer.
 *
 * Each slice is optimized by the usual attraction/repulsion SGD over its own
 * fuzzy graph. An alignment pull moves each sample towards its own position
 * in the slices within `alignment_window` epochs, i.e. a gradient step on
 * `(lambda / 2) * sum ||y_i(t) - y_i(t')||^2`. By default the pull rides along
 * with every edge update (see `AlignmentSchedule`).
 */

namespace alignmap {

/**
 * When the alignment pull is applied.
 *
 * - `per_edge`: every time a sample moves as the endpoint of a sampled edge,
 *   it is also pulled towards its positions in the coupled slices.
 * - `per_epoch`: one pull per sample per optimization epoch, applied to all
 *   slices from the same snapshot after the edge sweeps.
 */
enum class AlignmentSchedule { per_edge, per_epoch };

struct Hyperparameters {
    int n_neighbors = 15;
    double min_dist = 0.1;
    double spread = 1.0;
    double alignment_weight = 0.01;
    int alignment_window = 1;
    int n_optim_epochs = 200;
    int negative_sample_rate = 5;
    double initial_learning_rate = 1.0;
    Metric metric = Metric::euclidean;
    std::uint64_t seed = 42;
    double local_connectivity = 1.0;
    AlignmentSchedule alignment_schedule = AlignmentSchedule::per_edge;

    /** Throws `InvalidArgument` naming the first field that is out of range. */
    void validate() const {
        auto fail = [](const std::string& field, const std::string& rule) {
            throw InvalidArgument(field + " " + rule);
        };
        if (n_neighbors < 2) fail("n_neighbors", "must be >= 2");
        if (!(min_dist >= 0) || !std::isfinite(min_dist)) fail("min_dist", "must be >= 0");
        if (!(spread > 0) || !std::isfinite(spread)) fail("spread", "must be > 0");
        if (spread < min_dist) fail("spread", "must be >= min_dist");
        if (!(alignment_weight >= 0) || !std::isfinite(alignment_weight)) fail("alignment_weight", "must be >= 0");
        if (alignment_window < 1) fail("alignment_window", "must be >= 1");
        if (n_optim_epochs < 1) fail("n_optim_epochs", "must be >= 1");
        if (negative_sample_rate < 0) fail("negative_sample_rate", "must be >= 0");
        if (!(initial_learning_rate > 0) || !std::isfinite(initial_learning_rate)) fail("initial_learning_rate", "must be > 0");
        if (!(local_connectivity >= 0)) fail("local_connectivity", "must be >= 0");
    }
};

/**
 * 2D layout of one (layer, epoch).
 */
struct EmbeddingSlice {
    std::string layer_id;
    int epoch = 0;
    Matrix<float> positions;  // N x 2
    std::vector<SampleId> sample_ids;
    std::vector<ClassIndex> labels;

    bool operator==(const EmbeddingSlice&) const = default;
};

/** Per-component gradient clamp. */
inline constexpr double gradient_clip = 4.0;
/** Keeps the repulsive force finite as two points coincide. */
inline constexpr double repulsion_epsilon = 0.001;

/**
 * Coefficient `c` such that `c * (y_i - y_j)` is the gradient of
 * `log(1 / (1 + a * d^(2b)))` with respect to `y_i`, where `d2 = d^2`.
 * Zero for coincident points.
 */
inline double attractive_coefficient(double d2, double a, double b) {
    if (d2 <= 0) {
        return 0;
    }
    double pw = std::pow(d2, b);
    return (-2.0 * a * b * pw / d2) / (a * pw + 1.0);
}

/**
 * Coefficient `c` such that `c * (y_i - y_j)` is the gradient of
 * `log(1 - 1 / (1 + a * d^(2b)))` with `d2` in the leading denominator
 * replaced by `epsilon + d2`.
 */
inline double repulsive_coefficient(double d2, double a, double b, double epsilon = repulsion_epsilon) {
    return 2.0 * b / ((epsilon + d2) * (1.0 + a * std::pow(d2, b)));
}

inline double clip_gradient(double g) {
    return std::clamp(g, -gradient_clip, gradient_clip);
}

/**
 * Warm start from a previous slice: samples present in `prev_ids` copy their
 * previous position; others start at the centroid of `prev` plus uniform
 * jitter of magnitude 1e-2.
 */
template<typename Value_>
Matrix<double> relation_init(const Matrix<Value_>& prev, std::span<const SampleId> prev_ids,
    std::span<const SampleId> next_ids, Rng& rng)
{
    constexpr double jitter = 1e-2;
    if (prev.rows() != prev_ids.size()) {
        throw InvalidArgument("relation_init: previous positions and ids differ in length");
    }
    std::unordered_map<SampleId, std::size_t> where;
    where.reserve(prev_ids.size());
    for (std::size_t i = 0; i < prev_ids.size(); ++i) {
        where.emplace(prev_ids[i], i);
    }

    double cx = 0, cy = 0;
    for (std::size_t i = 0; i < prev.rows(); ++i) {
        cx += prev(i, 0);
        cy += prev(i, 1);
    }
    if (prev.rows() > 0) {
        cx /= static_cast<double>(prev.rows());
        cy /= static_cast<double>(prev.rows());
    }

    Matrix<double> out(next_ids.size(), 2);
    for (std::size_t i = 0; i < next_ids.size(); ++i) {
        auto it = where.find(next_ids[i]);
        if (it != where.end()) {
            out(i, 0) = prev(it->second, 0);
            out(i, 1) = prev(it->second, 1);
        } else {
            out(i, 0) = cx + rng.uniform(-jitter, jitter);
            out(i, 1) = cy + rng.uniform(-jitter, jitter);
        }
    }
    return out;
}

/**
 * One slice of a joint layout problem. `stream` selects the slice's random
 * streams; a slice optimized alone with the same `stream` and `init` sees
 * exactly the same random numbers as inside a joint run.
 */
struct SliceProblem {
    const FuzzyGraph* graph = nullptr;
    std::vector<SampleId> sample_ids;
    Matrix<double> init;
    std::uint64_t stream = 0;
};

using ProgressCallback = std::function<void(double)>;

namespace detail {

struct ScheduledEdge {
    std::uint32_t head;
    std::uint32_t tail;
    std::uint32_t total;   // times this edge is processed over the run
    std::uint32_t done = 0;
};

/**
 * Both directions of every edge, each processed `ceil(n_epochs * w / w_max)`
 * times at epochs `floor(m * n_epochs / total)`, in an order shuffled once by
 * the slice's edge stream.
 */
inline std::vector<ScheduledEdge> schedule_edges(const FuzzyGraph& graph, int n_epochs, Rng& rng) {
    double w_max = 0;
    for (const auto& e : graph.edges) {
        w_max = std::max(w_max, e.weight);
    }
    std::vector<ScheduledEdge> out;
    out.reserve(graph.edges.size() * 2);
    for (const auto& e : graph.edges) {
        double ratio = e.weight / w_max;
        auto total = static_cast<std::uint32_t>(std::ceil(n_epochs * ratio - 1e-12));
        total = std::clamp<std::uint32_t>(total, 1, static_cast<std::uint32_t>(n_epochs));
        out.push_back({ e.i, e.j, total });
        out.push_back({ e.j, e.i, total });
    }
    rng.shuffle(out);
    return out;
}

inline bool due(const ScheduledEdge& e, int epoch, int n_epochs) {
    if (e.done >= e.total) {
        return false;
    }
    auto next = (static_cast<std::uint64_t>(e.done) * static_cast<std::uint64_t>(n_epochs)) / e.total;
    return next == static_cast<std::uint64_t>(epoch);
}

/** Row pairs `(row in t, row in t')` of samples shared by two slices. */
inline std::vector<std::pair<std::uint32_t, std::uint32_t>> relate(std::span<const SampleId> from, std::span<const SampleId> to) {
    std::vector<std::pair<std::uint32_t, std::uint32_t>> out;
    if (std::equal(from.begin(), from.end(), to.begin(), to.end())) {
        out.reserve(from.size());
        for (std::uint32_t i = 0; i < from.size(); ++i) {
            out.emplace_back(i, i);
        }
        return out;
    }
    std::unordered_map<SampleId, std::uint32_t> where;
    for (std::uint32_t i = 0; i < to.size(); ++i) {
        where.emplace(to[i], i);
    }
    for (std::uint32_t i = 0; i < from.size(); ++i) {
        auto it = where.find(from[i]);
        if (it != where.end()) {
            out.emplace_back(i, it->second);
        }
    }
    return out;
}

}

/**
 * Optimize all slices jointly, starting from each problem's `init`.
 *
 * Every optimization epoch sweeps slice 0, slice 1, ... in turn. With the
 * `per_epoch` schedule the alignment step follows the sweeps and is applied to
 * all slices from one snapshot of positions. With `alignment_weight == 0` the
 * slices never interact.
 */
inline std::vector<Matrix<float>> optimize_layouts(std::span<const SliceProblem> problems, const CurveParams& curve,
    const Hyperparameters& hp, const ProgressCallback& progress = {})
{
    hp.validate();
    const std::size_t nslices = problems.size();
    const int n_epochs = hp.n_optim_epochs;
    const double a = curve.a, b = curve.b;

    std::vector<Matrix<double>> pos;
    std::vector<std::vector<detail::ScheduledEdge>> schedules;
    std::vector<Rng> negative_rngs;
    for (const auto& p : problems) {
        if (p.graph == nullptr || p.init.rows() != p.graph->n || p.init.cols() != 2 || p.sample_ids.size() != p.graph->n) {
            throw InvalidArgument("optimize_layouts: graph, initial positions and sample ids must agree in size");
        }
        pos.push_back(p.init);
        Rng edge_rng(hp.seed, p.stream, StreamPhase::edges);
        schedules.push_back(detail::schedule_edges(*p.graph, n_epochs, edge_rng));
        negative_rngs.emplace_back(hp.seed, p.stream, StreamPhase::negatives);
    }

    struct Coupling {
        std::size_t other;
        std::vector<std::pair<std::uint32_t, std::uint32_t>> rows;
    };
    std::vector<std::vector<Coupling>> couplings(nslices);
    if (hp.alignment_weight > 0) {
        for (std::size_t t = 0; t < nslices; ++t) {
            for (std::size_t u = 0; u < nslices; ++u) {
                auto gap = (t > u ? t - u : u - t);
                if (u != t && gap <= static_cast<std::size_t>(hp.alignment_window)) {
                    couplings[t].push_back({ u, detail::relate(problems[t].sample_ids, problems[u].sample_ids) });
                }
            }
        }
    }

    const bool coupled = hp.alignment_weight > 0 && nslices > 1;
    const bool per_edge = coupled && hp.alignment_schedule == AlignmentSchedule::per_edge;

    // Per-edge pull needs a row lookup into every coupled slice.
    std::vector<std::vector<std::vector<std::int64_t>>> partner(nslices);
    if (per_edge) {
        for (std::size_t t = 0; t < nslices; ++t) {
            for (const auto& c : couplings[t]) {
                std::vector<std::int64_t> rows(pos[t].rows(), -1);
                for (auto [i, j] : c.rows) {
                    rows[i] = j;
                }
                partner[t].push_back(std::move(rows));
            }
        }
    }
    auto pull = [&](std::size_t t, std::uint32_t i) {
        std::array<double, 2> g{ 0.0, 0.0 };
        const auto& cs = couplings[t];
        for (std::size_t c = 0; c < cs.size(); ++c) {
            auto j = partner[t][c][i];
            if (j >= 0) {
                const auto& other = pos[cs[c].other];
                g[0] += hp.alignment_weight * (other(static_cast<std::size_t>(j), 0) - pos[t](i, 0));
                g[1] += hp.alignment_weight * (other(static_cast<std::size_t>(j), 1) - pos[t](i, 1));
            }
        }
        return g;
    };

    std::vector<Matrix<double>> deltas(nslices);
    for (int epoch = 0; epoch < n_epochs; ++epoch) {
        const double alpha = hp.initial_learning_rate * (1.0 - static_cast<double>(epoch) / n_epochs);

        for (std::size_t t = 0; t < nslices; ++t) {
            auto& y = pos[t];
            auto& rng = negative_rngs[t];
            const auto n = static_cast<std::uint64_t>(y.rows());
            for (auto& edge : schedules[t]) {
                if (!detail::due(edge, epoch, n_epochs)) {
                    continue;
                }
                ++edge.done;

                double* head = &y(edge.head, 0);
                double* tail = &y(edge.tail, 0);
                double dx = head[0] - tail[0], dy = head[1] - tail[1];
                double coeff = attractive_coefficient(dx * dx + dy * dy, a, b);
                double gx = clip_gradient(coeff * dx), gy = clip_gradient(coeff * dy);
                if (per_edge) {
                    auto hpull = pull(t, edge.head), tpull = pull(t, edge.tail);
                    head[0] += alpha * clip_gradient(gx + hpull[0]);
                    head[1] += alpha * clip_gradient(gy + hpull[1]);
                    tail[0] += alpha * clip_gradient(-gx + tpull[0]);
                    tail[1] += alpha * clip_gradient(-gy + tpull[1]);
                } else {
                    head[0] += alpha * gx;
                    head[1] += alpha * gy;
                    tail[0] -= alpha * gx;
                    tail[1] -= alpha * gy;
                }

                for (int s = 0; s < hp.negative_sample_rate; ++s) {
                    const double* other = &y(rng.index(n), 0);
                    double ox = head[0] - other[0], oy = head[1] - other[1];
                    double d2 = ox * ox + oy * oy;
                    if (d2 <= 0) {
                        continue;
                    }
                    double rep = repulsive_coefficient(d2, a, b);
                    head[0] += alpha * clip_gradient(rep * ox);
                    head[1] += alpha * clip_gradient(rep * oy);
                }
            }
        }

        if (coupled && !per_edge) {
            const double step = alpha * hp.alignment_weight;
            for (std::size_t t = 0; t < nslices; ++t) {
                deltas[t] = Matrix<double>(pos[t].rows(), 2);
                for (const auto& c : couplings[t]) {
                    const auto& other = pos[c.other];
                    for (auto [i, j] : c.rows) {
                        deltas[t](i, 0) += step * (other(j, 0) - pos[t](i, 0));
                        deltas[t](i, 1) += step * (other(j, 1) - pos[t](i, 1));
                    }
                }
            }
            for (std::size_t t = 0; t < nslices; ++t) {
                auto& v = pos[t].values();
                const auto& dv = deltas[t].values();
                for (std::size_t i = 0; i < v.size(); ++i) {
                    v[i] += dv[i];
                }
            }
        }

        for (std::size_t t = 0; t < nslices; ++t) {
            auto bad = first_nonfinite(pos[t]);
            if (bad != pos[t].values().size()) {
                throw OptimizationError("non-finite position for row " + std::to_string(bad / 2) + " of slice " +
                    std::to_string(t) + " at optimization epoch " + std::to_string(epoch));
            }
        }

        if (progress) {
            progress(static_cast<double>(epoch + 1) / n_epochs);
        }
    }

    std::vector<Matrix<float>> out;
    for (const auto& y : pos) {
        Matrix<float> f(y.rows(), 2);
        for (std::size_t i = 0; i < y.values().size(); ++i) {
            f.values()[i] = static_cast<float>(y.values()[i]);
        }
        out.push_back(std::move(f));
    }
    return out;
}

/** Identification of one slice handed to `optimize_aligned()`. */
struct SliceInfo {
    std::string layer_id;
    int epoch = 0;
    std::vector<SampleId> sample_ids;
    std::vector<ClassIndex> labels;
};

enum class InitMethod { spectral, random, relation };

inline std::string to_string(InitMethod m) {
    switch (m) {
        case InitMethod::spectral: return "spectral";
        case InitMethod::random: return "random";
        default: return "relation";
    }
}

struct AlignedLayout {
    std::vector<EmbeddingSlice> slices;
    std::vector<InitMethod> init;
    std::vector<Matrix<double>> initial_positions;
    CurveParams curve;
};

/**
 * Initial positions for every slice: spectral (or its random fallback) for
 * the first, then `relation_init()` from the previous slice's initial layout.
 */
inline std::vector<Matrix<double>> aligned_initial_positions(const std::vector<FuzzyGraph>& graphs,
    const std::vector<SliceInfo>& info, std::uint64_t seed, std::vector<InitMethod>& methods)
{
    std::vector<Matrix<double>> out;
    methods.clear();
    for (std::size_t t = 0; t < graphs.size(); ++t) {
        Rng rng(seed, t, StreamPhase::init);
        if (t == 0) {
            auto spec = spectral_init(graphs[0], rng);
            methods.push_back(spec.used_fallback ? InitMethod::random : InitMethod::spectral);
            out.push_back(std::move(spec.positions));
        } else {
            out.push_back(relation_init(out[t - 1], info[t - 1].sample_ids, info[t].sample_ids, rng));
            methods.push_back(InitMethod::relation);
        }
    }
    return out;
}

/**
 * Aligned layouts for a sequence of per-epoch fuzzy graphs of the same layer.
 * Slice `t` uses random streams `(hp.seed, t, phase)`.
 */
inline AlignedLayout optimize_aligned(const std::vector<FuzzyGraph>& graphs, const std::vector<SliceInfo>& info,
    const Hyperparameters& hp, const ProgressCallback& progress = {})
{
    hp.validate();
    if (graphs.empty() || graphs.size() != info.size()) {
        throw InvalidArgument("optimize_aligned: need one SliceInfo per graph and at least one graph");
    }
    for (std::size_t t = 0; t < graphs.size(); ++t) {
        if (graphs[t].n == 0 || info[t].sample_ids.size() != graphs[t].n || info[t].labels.size() != graphs[t].n) {
            throw InvalidArgument("optimize_aligned: slice " + std::to_string(t) + " has inconsistent sizes");
        }
    }

    AlignedLayout out;
    out.curve = fit_curve(hp.min_dist, hp.spread).params;
    out.initial_positions = aligned_initial_positions(graphs, info, hp.seed, out.init);

    std::vector<SliceProblem> problems(graphs.size());
    for (std::size_t t = 0; t < graphs.size(); ++t) {
        problems[t].graph = &graphs[t];
        problems[t].sample_ids = info[t].sample_ids;
        problems[t].init = out.initial_positions[t];
        problems[t].stream = t;
    }
    auto positions = optimize_layouts(problems, out.curve, hp, progress);

    for (std::size_t t = 0; t < graphs.size(); ++t) {
        EmbeddingSlice slice;
        slice.layer_id = info[t].layer_id;
        slice.epoch = info[t].epoch;
        slice.positions = std::move(positions[t]);
        slice.sample_ids = info[t].sample_ids;
        slice.labels = info[t].labels;
        out.slices.push_back(std::move(slice));
    }
    return out;
}

/**
 * Mean Euclidean distance between each sample's positions in adjacent
 * slices, matched by sample id and compared in raw coordinates.
 */
inline std::vector<double> mean_displacement(const std::vector<EmbeddingSlice>& slices) {
    if (slices.size() < 2) {
        throw InvalidArgument("mean_displacement: need at least two slices");
    }
    std::vector<double> out;
    for (std::size_t t = 0; t + 1 < slices.size(); ++t) {
        const auto& cur = slices[t];
        const auto& next = slices[t + 1];
        if (cur.sample_ids.size() != next.sample_ids.size()) {
            throw InvalidArgument("mean_displacement: slices " + std::to_string(t) + " and " + std::to_string(t + 1) + " hold different samples");
        }
        auto rows = detail::relate(cur.sample_ids, next.sample_ids);
        if (rows.size() != cur.sample_ids.size()) {
            throw InvalidArgument("mean_displacement: slices " + std::to_string(t) + " and " + std::to_string(t + 1) + " hold different samples");
        }
        double total = 0;
        for (auto [i, j] : rows) {
            double dx = static_cast<double>(cur.positions(i, 0)) - next.positions(j, 0);
            double dy = static_cast<double>(cur.positions(i, 1)) - next.positions(j, 1);
            total += std::sqrt(dx * dx + dy * dy);
        }
        out.push_back(rows.empty() ? 0.0 : total / static_cast<double>(rows.size()));
    }
    return out;
}

}

#endif
