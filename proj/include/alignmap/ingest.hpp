#ifndef ALIGNMAP_INGEST_HPP
#define ALIGNMAP_INGEST_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "binary_io.hpp"
#include "error.hpp"
#include "matrix.hpp"
#include "random.hpp"

/**
 * @file ingest.hpp
 *
 * @brief Loading, writing, synthesizing and subsampling per-epoch activations.
 *
 * On disk, a directory holds `activations.json` plus one headerless
 * little-endian `float32` row-major file per (layer, epoch):
 *
 * ```
 * {"version":1, "dims":D, "num_points":N, "sample_ids":[...], "labels":[...],
 *  "class_names":[...], "layers":[{"id":"block4","epochs":[{"epoch":0,"file":"block4_e0.f32"}]}]}
 * ```
 */

namespace alignmap {

using SampleId = std::uint32_t;
using ClassIndex = std::uint16_t;

inline constexpr const char* activation_manifest_name = "activations.json";

/**
 * Activations of one layer at one training epoch.
 */
struct ActivationSlice {
    std::string layer_id;
    int epoch = 0;
    Matrix<float> matrix;
    std::vector<SampleId> sample_ids;
    std::vector<ClassIndex> labels;

    std::size_t size() const { return matrix.rows(); }

    bool operator==(const ActivationSlice&) const = default;
};

/**
 * All epochs of one layer. Every slice shares the same dimensionality,
 * sample order and labels, and epochs are strictly increasing.
 */
struct ActivationSeries {
    std::string layer_id;
    std::vector<ActivationSlice> slices;
    std::vector<std::string> class_names;

    std::size_t num_points() const { return slices.empty() ? 0 : slices.front().size(); }
    std::size_t dims() const { return slices.empty() ? 0 : slices.front().matrix.cols(); }

    bool operator==(const ActivationSeries&) const = default;
};

/**
 * Check every invariant of `slice`; throws `FormatError` naming the offending row.
 */
inline void validate_slice(const ActivationSlice& slice, std::size_t num_classes) {
    const auto& m = slice.matrix;
    std::string where = "layer '" + slice.layer_id + "' epoch " + std::to_string(slice.epoch);
    if (m.rows() < 1 || m.cols() < 1) {
        throw FormatError(where + ": matrix must have at least one row and one column");
    }
    if (slice.sample_ids.size() != m.rows() || slice.labels.size() != m.rows()) {
        throw FormatError(where + ": sample_ids/labels length does not match the number of rows");
    }
    auto bad = first_nonfinite(m);
    if (bad != m.values().size()) {
        throw FormatError(where + ": non-finite value at row " + std::to_string(bad / m.cols()) + ", column " + std::to_string(bad % m.cols()));
    }
    std::unordered_set<SampleId> seen;
    seen.reserve(slice.sample_ids.size());
    for (auto id : slice.sample_ids) {
        if (!seen.insert(id).second) {
            throw FormatError(where + ": duplicate sample id " + std::to_string(id));
        }
    }
    for (auto l : slice.labels) {
        if (l >= num_classes) {
            throw FormatError(where + ": label " + std::to_string(l) + " is not below the number of classes (" + std::to_string(num_classes) + ")");
        }
    }
}

inline void validate_series(const ActivationSeries& series) {
    if (series.slices.empty()) {
        throw FormatError("layer '" + series.layer_id + "' has no epochs");
    }
    const auto& first = series.slices.front();
    for (std::size_t s = 0; s < series.slices.size(); ++s) {
        const auto& slice = series.slices[s];
        validate_slice(slice, series.class_names.size());
        std::string where = "layer '" + series.layer_id + "' epoch " + std::to_string(slice.epoch);
        if (slice.epoch < 0) {
            throw FormatError(where + ": negative epoch");
        }
        if (s > 0) {
            if (slice.epoch <= series.slices[s - 1].epoch) {
                throw FormatError(where + ": epochs must be strictly increasing");
            }
            if (slice.matrix.cols() != first.matrix.cols() || slice.matrix.rows() != first.matrix.rows()) {
                throw FormatError(where + ": shape differs from the first epoch");
            }
            if (slice.sample_ids != first.sample_ids) {
                throw FormatError(where + ": sample_ids differ from the first epoch");
            }
            if (slice.labels != first.labels) {
                throw FormatError(where + ": labels differ from the first epoch");
            }
        }
    }
}

/**
 * Parsed `activations.json`.
 */
struct ActivationManifest {
    std::size_t dims = 0;
    std::size_t num_points = 0;
    std::vector<SampleId> sample_ids;
    std::vector<ClassIndex> labels;
    std::vector<std::string> class_names;

    struct EpochFile {
        int epoch;
        std::string file;
    };
    std::map<std::string, std::vector<EpochFile>> layers;
    std::vector<std::string> layer_order;
};

inline ActivationManifest read_activation_manifest(const std::filesystem::path& input_dir) {
    auto path = input_dir / activation_manifest_name;
    if (!std::filesystem::exists(path)) {
        throw FormatError("missing activation manifest '" + path.string() + "'");
    }

    ActivationManifest out;
    try {
        auto doc = nlohmann::json::parse(io::read_text(path));
        if (doc.at("version").get<int>() != 1) {
            throw FormatError("unsupported activation manifest version in '" + path.string() + "'");
        }
        out.dims = doc.at("dims").get<std::size_t>();
        out.num_points = doc.at("num_points").get<std::size_t>();
        out.sample_ids = doc.at("sample_ids").get<std::vector<SampleId>>();
        out.labels = doc.at("labels").get<std::vector<ClassIndex>>();
        out.class_names = doc.at("class_names").get<std::vector<std::string>>();
        for (const auto& layer : doc.at("layers")) {
            auto id = layer.at("id").get<std::string>();
            if (out.layers.count(id)) {
                throw FormatError("layer '" + id + "' listed twice in '" + path.string() + "'");
            }
            auto& files = out.layers[id];
            for (const auto& e : layer.at("epochs")) {
                files.push_back({ e.at("epoch").get<int>(), e.at("file").get<std::string>() });
            }
            std::stable_sort(files.begin(), files.end(), [](const auto& a, const auto& b) { return a.epoch < b.epoch; });
            out.layer_order.push_back(std::move(id));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("malformed activation manifest '" + path.string() + "': " + e.what());
    }

    if (out.sample_ids.size() != out.num_points || out.labels.size() != out.num_points) {
        throw FormatError("activation manifest: sample_ids/labels must have num_points entries");
    }
    return out;
}

/**
 * Load and validate all epochs of `layer_id` from `input_dir`.
 */
inline ActivationSeries load_activation_series(const std::filesystem::path& input_dir, const std::string& layer_id) {
    auto manifest = read_activation_manifest(input_dir);
    auto it = manifest.layers.find(layer_id);
    if (it == manifest.layers.end()) {
        throw FormatError("layer '" + layer_id + "' not found in " + (input_dir / activation_manifest_name).string());
    }

    ActivationSeries series;
    series.layer_id = layer_id;
    series.class_names = manifest.class_names;
    for (const auto& ef : it->second) {
        ActivationSlice slice;
        slice.layer_id = layer_id;
        slice.epoch = ef.epoch;
        auto values = io::read_le_array<float>(input_dir / ef.file, manifest.num_points * manifest.dims);
        slice.matrix = Matrix<float>(manifest.num_points, manifest.dims, std::move(values));
        slice.sample_ids = manifest.sample_ids;
        slice.labels = manifest.labels;
        series.slices.push_back(std::move(slice));
    }
    validate_series(series);
    return series;
}

/**
 * Write `layers` (which must agree on sample ids, labels, class names and
 * dimensionality) into `output_dir` as an activation manifest plus `.f32` files.
 */
inline void write_activation_series(const std::filesystem::path& output_dir, const std::vector<ActivationSeries>& layers) {
    if (layers.empty()) {
        throw InvalidArgument("no layers to write");
    }
    for (const auto& s : layers) {
        validate_series(s);
    }
    const auto& ref = layers.front();
    const auto& ref_slice = ref.slices.front();
    for (const auto& s : layers) {
        const auto& sl = s.slices.front();
        if (s.class_names != ref.class_names || sl.sample_ids != ref_slice.sample_ids ||
            sl.labels != ref_slice.labels || sl.matrix.cols() != ref_slice.matrix.cols()) {
            throw InvalidArgument("layer '" + s.layer_id + "' does not share samples, labels or dimensionality with '" + ref.layer_id + "'");
        }
    }

    std::filesystem::create_directories(output_dir);
    nlohmann::json doc;
    doc["version"] = 1;
    doc["dims"] = ref.dims();
    doc["num_points"] = ref.num_points();
    doc["sample_ids"] = ref_slice.sample_ids;
    doc["labels"] = ref_slice.labels;
    doc["class_names"] = ref.class_names;
    doc["layers"] = nlohmann::json::array();
    for (const auto& s : layers) {
        nlohmann::json epochs = nlohmann::json::array();
        for (const auto& slice : s.slices) {
            std::string file = s.layer_id + "_e" + std::to_string(slice.epoch) + ".f32";
            io::write_le_array(output_dir / file, slice.matrix.values());
            epochs.push_back({ { "epoch", slice.epoch }, { "file", file } });
        }
        doc["layers"].push_back({ { "id", s.layer_id }, { "epochs", std::move(epochs) } });
    }
    io::write_text_atomic(output_dir / activation_manifest_name, doc.dump(1));
}

/**
 * How cluster geometry evolves across epochs in `synth_series()`.
 *
 * - `converging`: inter-center distances grow over epochs, so classes become cleanly separated.
 * - `diverging`: as `converging`, but in the second half of training every
 *   cluster splits into two sub-clusters.
 * - `static`: centers only move by the drift term.
 */
enum class Schedule { converging, diverging, static_ };

inline Schedule parse_schedule(const std::string& name) {
    if (name == "converging") return Schedule::converging;
    if (name == "diverging") return Schedule::diverging;
    if (name == "static") return Schedule::static_;
    throw InvalidArgument("unknown schedule '" + name + "'");
}

inline std::string to_string(Schedule s) {
    switch (s) {
        case Schedule::converging: return "converging";
        case Schedule::diverging: return "diverging";
        default: return "static";
    }
}

struct SynthParams {
    int n_clusters = 3;
    int points_per_cluster = 100;
    int dims = 32;
    int n_epochs = 5;
    double drift = 0.2;
    Schedule schedule = Schedule::converging;
    std::uint64_t seed = 42;
    std::string layer_id = "synth";
};

/**
 * Generate drifting isotropic Gaussian clusters, one slice per epoch.
 *
 * Each sample keeps a fixed unit-variance offset from its cluster center, so
 * only the centers change between epochs. Points are stored cluster by cluster
 * with sample id equal to the row index.
 */
inline ActivationSeries synth_series(const SynthParams& p) {
    if (p.n_clusters < 1 || p.points_per_cluster < 1 || p.dims < 1 || p.n_epochs < 1) {
        throw InvalidArgument("synth_series: all counts must be at least 1");
    }
    if (!(p.drift >= 0) || !std::isfinite(p.drift)) {
        throw InvalidArgument("synth_series: drift must be finite and non-negative");
    }
    if (p.n_clusters > 65535) {
        throw InvalidArgument("synth_series: at most 65535 clusters");
    }

    const auto K = static_cast<std::size_t>(p.n_clusters);
    const auto P = static_cast<std::size_t>(p.points_per_cluster);
    const auto D = static_cast<std::size_t>(p.dims);
    const std::size_t N = K * P;

    // Center spread relative to the unit within-cluster noise.
    constexpr double center_scale = 2.0;

    Rng rng(p.seed, 0, StreamPhase::synthesis);
    Matrix<double> centers(K, D), directions(K, D), splits(K, D), noise(N, D);
    for (auto& x : centers.values()) {
        x = center_scale * rng.normal();
    }
    for (std::size_t k = 0; k < K; ++k) {
        auto row = directions.row(k);
        double norm = 0;
        for (auto& x : row) {
            x = rng.normal();
            norm += x * x;
        }
        norm = std::sqrt(norm);
        for (auto& x : row) {
            x = (norm > 0 ? x / norm : 0);
        }
    }
    for (auto& x : splits.values()) {
        x = rng.normal();
    }
    for (auto& x : noise.values()) {
        x = rng.normal();
    }

    ActivationSeries out;
    out.layer_id = p.layer_id;
    for (std::size_t k = 0; k < K; ++k) {
        out.class_names.push_back("class_" + std::to_string(k));
    }

    std::vector<SampleId> ids(N);
    std::iota(ids.begin(), ids.end(), SampleId{0});
    std::vector<ClassIndex> labels(N);
    for (std::size_t i = 0; i < N; ++i) {
        labels[i] = static_cast<ClassIndex>(i / P);
    }

    for (int t = 0; t < p.n_epochs; ++t) {
        double progress = (p.n_epochs > 1 ? static_cast<double>(t) / (p.n_epochs - 1) : 1.0);
        double scale = 1.0, split = 0.0;
        if (p.schedule != Schedule::static_) {
            scale = 0.5 + progress;
        }
        if (p.schedule == Schedule::diverging) {
            split = std::max(0.0, 2.0 * progress - 1.0);
        }

        ActivationSlice slice;
        slice.layer_id = p.layer_id;
        slice.epoch = t;
        slice.matrix = Matrix<float>(N, D);
        slice.sample_ids = ids;
        slice.labels = labels;
        for (std::size_t i = 0; i < N; ++i) {
            std::size_t k = i / P;
            double side = (i % 2 == 0 ? 1.0 : -1.0);
            auto dest = slice.matrix.row(i);
            for (std::size_t d = 0; d < D; ++d) {
                double center = scale * centers(k, d) + t * p.drift * directions(k, d) + side * split * splits(k, d);
                dest[d] = static_cast<float>(center + noise(i, d));
            }
        }
        out.slices.push_back(std::move(slice));
    }
    return out;
}

/**
 * Per-class sample counts for a stratified subsample of `sample_size` points:
 * proportional to class frequency, with largest-remainder rounding (ties go
 * to the smaller class index).
 */
inline std::vector<std::size_t> stratified_counts(const std::vector<std::size_t>& class_sizes, std::size_t sample_size) {
    std::size_t total = std::accumulate(class_sizes.begin(), class_sizes.end(), std::size_t{0});
    std::vector<std::size_t> counts(class_sizes.size());
    std::vector<std::pair<std::size_t, std::size_t>> remainders; // (remainder numerator, class)
    std::size_t assigned = 0;
    for (std::size_t c = 0; c < class_sizes.size(); ++c) {
        std::size_t num = class_sizes[c] * sample_size;
        counts[c] = num / total;
        assigned += counts[c];
        remainders.emplace_back(num % total, c);
    }
    std::stable_sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t r = 0; assigned < sample_size; ++r) {
        ++counts[remainders[r].second];
        ++assigned;
    }
    return counts;
}

/**
 * Class-stratified subsample without replacement. The same rows are taken from
 * every slice and keep their original relative order.
 */
inline ActivationSeries subsample(const ActivationSeries& series, std::size_t sample_size, std::uint64_t seed) {
    const std::size_t N = series.num_points();
    if (sample_size < 1 || sample_size > N) {
        throw InvalidArgument("sample_size " + std::to_string(sample_size) + " is outside [1, " + std::to_string(N) + "]");
    }
    if (sample_size == N) {
        return series;
    }

    const auto& labels = series.slices.front().labels;
    std::vector<std::vector<std::size_t>> by_class(series.class_names.size());
    for (std::size_t i = 0; i < N; ++i) {
        by_class[labels[i]].push_back(i);
    }
    std::vector<std::size_t> sizes;
    for (const auto& members : by_class) {
        sizes.push_back(members.size());
    }
    auto counts = stratified_counts(sizes, sample_size);

    Rng rng(seed, 0, StreamPhase::sampling);
    std::vector<std::size_t> keep;
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        auto& members = by_class[c];
        rng.shuffle(members);
        keep.insert(keep.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(counts[c]));
    }
    std::sort(keep.begin(), keep.end());

    ActivationSeries out;
    out.layer_id = series.layer_id;
    out.class_names = series.class_names;
    for (const auto& slice : series.slices) {
        ActivationSlice sub;
        sub.layer_id = slice.layer_id;
        sub.epoch = slice.epoch;
        sub.matrix = take_rows(slice.matrix, keep);
        for (auto i : keep) {
            sub.sample_ids.push_back(slice.sample_ids[i]);
            sub.labels.push_back(slice.labels[i]);
        }
        out.slices.push_back(std::move(sub));
    }
    return out;
}

}

#endif
