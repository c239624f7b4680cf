#ifndef ALIGNMAP_BUNDLE_HPP
#define ALIGNMAP_BUNDLE_HPP

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <future>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "binary_io.hpp"
#include "error.hpp"
#include "fuzzy.hpp"
#include "ingest.hpp"
#include "knn.hpp"
#include "layout.hpp"
#include "metrics.hpp"

/**
 * @file bundle.hpp
 *
 * @brief End-to-end pipeline and the on-disk projection bundle.
 *
 * A bundle directory contains `labels.u16`, `ids.u32`, one
 * `<layer>_e<epoch>.f32` position file (N x 2 little-endian floats) per slice,
 * `report.json`, and finally `bundle.json`. The manifest is written last, so
 * its presence marks a complete bundle.
 */

namespace alignmap {

inline constexpr const char* bundle_manifest_name = "bundle.json";
inline constexpr const char* labels_file_name = "labels.u16";
inline constexpr const char* ids_file_name = "ids.u32";
inline constexpr const char* report_file_name = "report.json";

/** Quality metrics are only computed in-pipeline up to this many points. */
inline constexpr std::size_t report_metrics_limit = 4096;

struct RunConfig {
    std::filesystem::path input;
    std::filesystem::path output;
    std::vector<std::string> layers;       // empty: every layer in the activation manifest
    Hyperparameters hp;
    std::optional<std::size_t> sample_size;
    KnnMethod knn_method = KnnMethod::automatic;
    bool deterministic = true;
    bool parallel_layers = true;
    ProgressCallback progress;
};

inline nlohmann::json hyperparameters_to_json(const RunConfig& config) {
    const auto& hp = config.hp;
    nlohmann::json out;
    out["n_neighbors"] = hp.n_neighbors;
    out["min_dist"] = hp.min_dist;
    out["spread"] = hp.spread;
    out["alignment_weight"] = hp.alignment_weight;
    out["alignment_window"] = hp.alignment_window;
    out["alignment_schedule"] = (hp.alignment_schedule == AlignmentSchedule::per_edge ? "per_edge" : "per_epoch");
    out["n_optim_epochs"] = hp.n_optim_epochs;
    out["negative_sample_rate"] = hp.negative_sample_rate;
    out["initial_learning_rate"] = hp.initial_learning_rate;
    out["local_connectivity"] = hp.local_connectivity;
    out["metric"] = to_string(hp.metric);
    out["seed"] = hp.seed;
    out["sample_size"] = (config.sample_size ? nlohmann::json(*config.sample_size) : nlohmann::json(nullptr));
    out["knn"] = (config.knn_method == KnnMethod::automatic ? "auto" : config.knn_method == KnnMethod::exact ? "exact" : "nn_descent");
    out["deterministic"] = config.deterministic;
    return out;
}

/** Inverse of `hyperparameters_to_json()`; fields that are absent keep their current values. */
inline void hyperparameters_from_json(const nlohmann::json& j, RunConfig& config) {
    auto& hp = config.hp;
    try {
        if (j.contains("n_neighbors")) hp.n_neighbors = j.at("n_neighbors").get<int>();
        if (j.contains("min_dist")) hp.min_dist = j.at("min_dist").get<double>();
        if (j.contains("spread")) hp.spread = j.at("spread").get<double>();
        if (j.contains("alignment_weight")) hp.alignment_weight = j.at("alignment_weight").get<double>();
        if (j.contains("alignment_window")) hp.alignment_window = j.at("alignment_window").get<int>();
        if (j.contains("alignment_schedule")) {
            auto s = j.at("alignment_schedule").get<std::string>();
            hp.alignment_schedule = (s == "per_epoch" ? AlignmentSchedule::per_epoch : AlignmentSchedule::per_edge);
        }
        if (j.contains("n_optim_epochs")) hp.n_optim_epochs = j.at("n_optim_epochs").get<int>();
        if (j.contains("negative_sample_rate")) hp.negative_sample_rate = j.at("negative_sample_rate").get<int>();
        if (j.contains("initial_learning_rate")) hp.initial_learning_rate = j.at("initial_learning_rate").get<double>();
        if (j.contains("local_connectivity")) hp.local_connectivity = j.at("local_connectivity").get<double>();
        if (j.contains("metric")) hp.metric = parse_metric(j.at("metric").get<std::string>());
        if (j.contains("seed")) hp.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("sample_size")) {
            const auto& s = j.at("sample_size");
            config.sample_size = (s.is_null() ? std::nullopt : std::optional<std::size_t>(s.get<std::size_t>()));
        }
        if (j.contains("knn")) {
            auto s = j.at("knn").get<std::string>();
            config.knn_method = (s == "exact" ? KnnMethod::exact : s == "nn_descent" ? KnnMethod::nn_descent : KnnMethod::automatic);
        }
        if (j.contains("deterministic")) config.deterministic = j.at("deterministic").get<bool>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed hyperparameters: ") + e.what());
    }
}

/** 64-bit FNV-1a of `text`, as 16 lowercase hex digits. */
inline std::string fnv1a_hex(const std::string& text) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

/** Identifies a bundle by its input, layers and hyperparameters. */
inline std::string bundle_key(const RunConfig& config) {
    nlohmann::json j;
    j["hyperparameters"] = hyperparameters_to_json(config);
    j["layers"] = config.layers;
    j["input"] = std::filesystem::absolute(config.input).lexically_normal().string();
    return fnv1a_hex(j.dump());
}

inline std::string position_file_name(const std::string& layer, int epoch) {
    return layer + "_e" + std::to_string(epoch) + ".f32";
}

inline bool valid_layer_id(const std::string& id) {
    return !id.empty() && id != "." && id != ".." && std::all_of(id.begin(), id.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
    });
}

/** Everything computed for one layer. */
struct LayerResult {
    std::string layer_id;
    std::vector<EmbeddingSlice> slices;
    InitMethod init = InitMethod::spectral;
    std::vector<double> displacement;
    std::vector<double> trustworthiness;
    std::vector<double> neighbor_recall;
};

struct ProjectionBundle {
    std::filesystem::path directory;
    std::string key;
    nlohmann::json manifest;
    std::vector<LayerResult> layers;
};

namespace detail {

inline std::string layer_context(const std::string& layer, const std::string& what) {
    return "layer '" + layer + "': " + what;
}

inline LayerResult project_layer(const RunConfig& config, const std::string& layer_id, const std::function<void(double)>& report) {
    ActivationSeries series;
    try {
        series = load_activation_series(config.input, layer_id);
        if (config.sample_size) {
            series = subsample(series, *config.sample_size, config.hp.seed);
        }
    } catch (const Error& e) {
        throw FormatError(layer_context(layer_id, e.what()));
    }

    const auto& hp = config.hp;
    const std::size_t N = series.num_points();
    const auto k = static_cast<std::size_t>(hp.n_neighbors);
    if (k > N - 1 || N < 2) {
        throw InvalidArgument(layer_context(layer_id, "n_neighbors = " + std::to_string(k) + " needs at least " + std::to_string(k + 1) + " points, have " + std::to_string(N)));
    }

    const std::size_t nslices = series.slices.size();
    std::vector<KnnGraph> knn(nslices);
    std::vector<FuzzyGraph> graphs(nslices);
    std::vector<SliceInfo> info(nslices);
    for (std::size_t t = 0; t < nslices; ++t) {
        const auto& slice = series.slices[t];
        try {
            NnDescentOptions nnd;
            nnd.seed = hp.seed + t;
            knn[t] = build_knn(slice.matrix, k, hp.metric, config.knn_method, nnd);
            SmoothKnnOptions smooth;
            smooth.local_connectivity = hp.local_connectivity;
            graphs[t] = fuzzy_graph(knn[t], smooth);
        } catch (const Error& e) {
            throw InvalidArgument(layer_context(layer_id, "epoch " + std::to_string(slice.epoch) + ": " + e.what()));
        }
        info[t] = SliceInfo{ layer_id, slice.epoch, slice.sample_ids, slice.labels };
        report(0.2 * static_cast<double>(t + 1) / static_cast<double>(nslices));
    }

    AlignedLayout layout;
    try {
        layout = optimize_aligned(graphs, info, hp, [&](double p) { report(0.2 + 0.75 * p); });
    } catch (const OptimizationError& e) {
        throw OptimizationError(layer_context(layer_id, e.what()));
    } catch (const Error& e) {
        throw InvalidArgument(layer_context(layer_id, e.what()));
    }

    LayerResult out;
    out.layer_id = layer_id;
    out.init = layout.init.front();
    out.slices = std::move(layout.slices);
    if (nslices > 1) {
        out.displacement = mean_displacement(out.slices);
    }
    const std::size_t report_k = std::min<std::size_t>(k, (N - 1) / 2);
    if (N <= report_metrics_limit && report_k >= 1) {
        for (std::size_t t = 0; t < nslices; ++t) {
            out.trustworthiness.push_back(trustworthiness(series.slices[t].matrix, out.slices[t].positions, report_k));
            out.neighbor_recall.push_back(neighbor_recall(knn[t], out.slices[t].positions, report_k));
        }
    }
    report(1.0);
    return out;
}

}

/**
 * Read and validate a bundle manifest and the sizes of every file it names.
 * Throws `FormatError` if the bundle is missing, partial or inconsistent.
 */
inline nlohmann::json read_bundle_manifest(const std::filesystem::path& dir) {
    auto path = dir / bundle_manifest_name;
    if (!std::filesystem::exists(path)) {
        throw FormatError("no bundle manifest in '" + dir.string() + "'");
    }
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(io::read_text(path));
        auto n = manifest.at("num_points").get<std::size_t>();
        auto nclasses = manifest.at("class_names").size();
        auto labels = io::read_le_array<std::uint16_t>(dir / manifest.at("labels_file").get<std::string>(), n);
        for (auto l : labels) {
            if (l >= nclasses) {
                throw FormatError("bundle '" + dir.string() + "': label " + std::to_string(l) + " out of range");
            }
        }
        io::read_le_array<std::uint32_t>(dir / manifest.at("sample_ids_file").get<std::string>(), n);
        for (const auto& layer : manifest.at("layers")) {
            for (const auto& [epoch, file] : layer.at("position_files").items()) {
                auto bytes = std::filesystem::file_size(dir / file.get<std::string>());
                if (bytes != n * 2 * sizeof(float)) {
                    throw FormatError("bundle '" + dir.string() + "': position file " + file.get<std::string>() + " has the wrong size");
                }
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("malformed bundle manifest in '" + dir.string() + "': " + e.what());
    } catch (const std::filesystem::filesystem_error& e) {
        throw FormatError(e.what());
    }
    return manifest;
}

/** Positions of one (layer, epoch) from a bundle. */
inline Matrix<float> read_bundle_positions(const std::filesystem::path& dir, const nlohmann::json& manifest,
    const std::string& layer, int epoch)
{
    auto n = manifest.at("num_points").get<std::size_t>();
    for (const auto& l : manifest.at("layers")) {
        if (l.at("id").get<std::string>() == layer) {
            const auto& files = l.at("position_files");
            auto key = std::to_string(epoch);
            if (!files.contains(key)) {
                break;
            }
            return Matrix<float>(n, 2, io::read_le_array<float>(dir / files.at(key).get<std::string>(), n * 2));
        }
    }
    throw FormatError("bundle has no positions for layer '" + layer + "' epoch " + std::to_string(epoch));
}

/**
 * Run the whole pipeline for every configured layer and write the bundle.
 *
 * Layers are independent and may be processed on separate threads; files of
 * one layer are written by one worker, the manifest by the caller after all
 * workers succeed. On error nothing marks the output directory as complete.
 */
inline ProjectionBundle run_project(const RunConfig& config) {
    config.hp.validate();
    if (!std::filesystem::is_directory(config.input)) {
        throw FormatError("input directory '" + config.input.string() + "' does not exist");
    }
    auto activations = read_activation_manifest(config.input);
    std::vector<std::string> layers = config.layers;
    if (layers.empty()) {
        layers = activations.layer_order;
    }
    if (layers.empty()) {
        throw FormatError("activation manifest lists no layers");
    }
    for (const auto& l : layers) {
        if (!activations.layers.count(l)) {
            throw FormatError("layer '" + l + "' not found in " + (config.input / activation_manifest_name).string());
        }
        if (!valid_layer_id(l)) {
            throw FormatError("layer id '" + l + "' cannot be used as a file name");
        }
    }

    std::filesystem::create_directories(config.output);
    std::filesystem::remove(config.output / bundle_manifest_name);

    std::mutex progress_mutex;
    std::vector<double> layer_progress(layers.size(), 0.0);
    double reported = 0;
    auto report = [&](std::size_t l, double p) {
        if (!config.progress) {
            return;
        }
        std::lock_guard<std::mutex> lock(progress_mutex);
        layer_progress[l] = std::max(layer_progress[l], p);
        double total = 0;
        for (auto x : layer_progress) {
            total += x;
        }
        total /= static_cast<double>(layer_progress.size());
        if (total > reported) {
            reported = total;
            config.progress(std::min(total, 1.0));
        }
    };

    auto work = [&](std::size_t l) {
        auto result = detail::project_layer(config, layers[l], [&, l](double p) { report(l, p); });
        for (const auto& slice : result.slices) {
            io::write_le_array(config.output / position_file_name(result.layer_id, slice.epoch), slice.positions.values());
        }
        return result;
    };

    ProjectionBundle bundle;
    if (config.parallel_layers && layers.size() > 1) {
        std::vector<std::future<LayerResult>> futures;
        for (std::size_t l = 0; l < layers.size(); ++l) {
            futures.push_back(std::async(std::launch::async, work, l));
        }
        std::exception_ptr failure;
        for (auto& f : futures) {
            try {
                bundle.layers.push_back(f.get());
            } catch (...) {
                if (!failure) {
                    failure = std::current_exception();
                }
            }
        }
        if (failure) {
            std::rethrow_exception(failure);
        }
    } else {
        for (std::size_t l = 0; l < layers.size(); ++l) {
            bundle.layers.push_back(work(l));
        }
    }

    const auto& first = bundle.layers.front().slices.front();
    const std::size_t N = first.sample_ids.size();
    io::write_le_array(config.output / labels_file_name, first.labels);
    io::write_le_array(config.output / ids_file_name, first.sample_ids);

    auto key = bundle_key(config);
    nlohmann::json report_json;
    report_json["k"] = std::min<std::size_t>(static_cast<std::size_t>(config.hp.n_neighbors), (N - 1) / 2);
    report_json["parameters"] = hyperparameters_to_json(config);
    report_json["layers"] = nlohmann::json::array();

    nlohmann::json manifest;
    manifest["version"] = 1;
    manifest["bundle_key"] = key;
    manifest["hyperparameters"] = hyperparameters_to_json(config);
    manifest["num_points"] = N;
    manifest["class_names"] = activations.class_names;
    manifest["labels_file"] = labels_file_name;
    manifest["sample_ids_file"] = ids_file_name;
    manifest["layers"] = nlohmann::json::array();
    for (const auto& layer : bundle.layers) {
        nlohmann::json epochs = nlohmann::json::array(), files = nlohmann::json::object();
        for (const auto& slice : layer.slices) {
            epochs.push_back(slice.epoch);
            files[std::to_string(slice.epoch)] = position_file_name(layer.layer_id, slice.epoch);
        }
        manifest["layers"].push_back({ { "id", layer.layer_id }, { "epochs", epochs }, { "position_files", files }, { "init", to_string(layer.init) } });

        nlohmann::json lr;
        lr["id"] = layer.layer_id;
        lr["mean_displacement"] = layer.displacement;
        lr["trustworthiness"] = (layer.trustworthiness.empty() ? nlohmann::json(nullptr) : nlohmann::json(layer.trustworthiness));
        lr["neighbor_recall"] = (layer.neighbor_recall.empty() ? nlohmann::json(nullptr) : nlohmann::json(layer.neighbor_recall));
        report_json["layers"].push_back(std::move(lr));
    }
    manifest["quality_report"] = report_file_name;
    manifest["source"] = {
        { "input", std::filesystem::absolute(config.input).lexically_normal().string() },
        { "layers", layers },
        { "total_points", activations.num_points },
    };

    io::write_text_atomic(config.output / report_file_name, report_json.dump(1));
    io::write_text_atomic(config.output / bundle_manifest_name, manifest.dump(1));

    bundle.directory = config.output;
    bundle.key = key;
    bundle.manifest = std::move(manifest);
    return bundle;
}

/**
 * Recompute quality metrics for a bundle against its source activations at `k`:
 * per-slice trustworthiness and neighbor recall, per-pair mean displacement.
 */
inline nlohmann::json quality_report(const std::filesystem::path& bundle_dir, const std::filesystem::path& input_dir, std::size_t k) {
    auto manifest = read_bundle_manifest(bundle_dir);
    const auto n = manifest.at("num_points").get<std::size_t>();
    auto ids = io::read_le_array<std::uint32_t>(bundle_dir / manifest.at("sample_ids_file").get<std::string>(), n);
    auto labels = io::read_le_array<std::uint16_t>(bundle_dir / manifest.at("labels_file").get<std::string>(), n);

    nlohmann::json out;
    out["k"] = k;
    out["num_points"] = n;
    out["layers"] = nlohmann::json::array();
    for (const auto& layer : manifest.at("layers")) {
        auto layer_id = layer.at("id").get<std::string>();
        auto series = load_activation_series(input_dir, layer_id);
        const auto& full_ids = series.slices.front().sample_ids;
        std::unordered_map<SampleId, std::size_t> where;
        for (std::size_t i = 0; i < full_ids.size(); ++i) {
            where.emplace(full_ids[i], i);
        }
        std::vector<std::size_t> rows;
        for (auto id : ids) {
            auto it = where.find(id);
            if (it == where.end()) {
                throw FormatError("bundle sample id " + std::to_string(id) + " is not in the activations of layer '" + layer_id + "'");
            }
            rows.push_back(it->second);
        }

        nlohmann::json lr;
        lr["id"] = layer_id;
        std::vector<double> trust, recall;
        std::vector<EmbeddingSlice> slices;
        nlohmann::json epochs = nlohmann::json::array();
        for (const auto& e : layer.at("epochs")) {
            int epoch = e.get<int>();
            auto found = std::find_if(series.slices.begin(), series.slices.end(), [&](const auto& s) { return s.epoch == epoch; });
            if (found == series.slices.end()) {
                throw FormatError("layer '" + layer_id + "' has no activations for epoch " + std::to_string(epoch));
            }
            auto high = take_rows(found->matrix, rows);
            auto positions = read_bundle_positions(bundle_dir, manifest, layer_id, epoch);
            trust.push_back(trustworthiness(high, positions, k));
            recall.push_back(neighbor_recall(exact_knn(high, k, Metric::euclidean), positions, k));
            slices.push_back(EmbeddingSlice{ layer_id, epoch, std::move(positions), ids, labels });
            epochs.push_back(epoch);
        }
        lr["epochs"] = epochs;
        lr["trustworthiness"] = trust;
        lr["neighbor_recall"] = recall;
        lr["mean_displacement"] = (slices.size() > 1 ? nlohmann::json(mean_displacement(slices)) : nlohmann::json::array());
        out["layers"].push_back(std::move(lr));
    }
    return out;
}

}

#endif
