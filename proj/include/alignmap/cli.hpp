#ifndef ALIGNMAP_CLI_HPP
#define ALIGNMAP_CLI_HPP

#include <csignal>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bundle.hpp"
#include "ingest.hpp"
#include "serve.hpp"

/**
 * @file cli.hpp
 *
 * @brief The `alignmap` command line: `synth`, `project`, `metrics`, `serve`.
 *
 * Exit codes: 0 on success, 1 on usage errors, 2 on data errors.
 */

namespace alignmap::cli {

inline constexpr int exit_ok = 0;
inline constexpr int exit_usage = 1;
inline constexpr int exit_data = 2;

namespace detail {

inline serve::Service* running_service = nullptr;

inline void handle_signal(int) {
    if (running_service) {
        running_service->stop();
    }
}

inline bool parse_bool(const std::string& text) {
    if (text == "true" || text == "1" || text == "yes") return true;
    if (text == "false" || text == "0" || text == "no") return false;
    throw CLI::ValidationError("--deterministic", "expected true or false, got '" + text + "'");
}

}

/**
 * Run the command line with `args` (program name excluded), writing normal
 * output to `out` and diagnostics to `err`.
 */
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{ "Aligned 2D projections of per-epoch neural network activations", "alignmap" };
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "Write a synthetic activation directory of drifting Gaussian clusters");
    SynthParams sp;
    std::string schedule = "converging";
    std::string synth_out;
    synth->add_option("--clusters", sp.n_clusters, "Number of clusters / classes")->required()->check(CLI::PositiveNumber);
    synth->add_option("--points", sp.points_per_cluster, "Points per cluster")->required()->check(CLI::PositiveNumber);
    synth->add_option("--dims", sp.dims, "Activation dimensionality")->required()->check(CLI::PositiveNumber);
    synth->add_option("--epochs", sp.n_epochs, "Number of training epochs")->required()->check(CLI::PositiveNumber);
    synth->add_option("--drift", sp.drift, "Center drift per epoch")->required()->check(CLI::NonNegativeNumber);
    synth->add_option("--schedule", schedule, "converging|diverging|static")->required()->check(CLI::IsMember({ "converging", "diverging", "static" }));
    synth->add_option("--seed", sp.seed, "Random seed")->required();
    synth->add_option("--output", synth_out, "Output directory")->required();
    synth->add_option("--layer", sp.layer_id, "Layer id to write")->capture_default_str();

    // project
    auto* project = app.add_subcommand("project", "Compute an aligned projection bundle");
    RunConfig config;
    std::string project_in, project_out, layers_csv, metric = "euclidean", knn = "auto", deterministic = "true";
    std::optional<std::size_t> sample_size;
    project->add_option("--input", project_in, "Activation directory")->required();
    project->add_option("--output", project_out, "Bundle directory")->required();
    project->add_option("--layers", layers_csv, "Comma-separated layer ids (default: all)");
    project->add_option("--n-neighbors", config.hp.n_neighbors, "Neighbors per point")->capture_default_str();
    project->add_option("--min-dist", config.hp.min_dist, "Minimum distance in the embedding")->capture_default_str();
    project->add_option("--spread", config.hp.spread, "Embedding spread")->capture_default_str();
    project->add_option("--alignment-weight", config.hp.alignment_weight, "Cross-epoch alignment strength")->capture_default_str();
    project->add_option("--window", config.hp.alignment_window, "Epochs coupled on each side")->capture_default_str();
    project->add_option("--optim-epochs", config.hp.n_optim_epochs, "Layout optimization epochs")->capture_default_str();
    project->add_option("--neg-rate", config.hp.negative_sample_rate, "Negative samples per edge update")->capture_default_str();
    project->add_option("--lr", config.hp.initial_learning_rate, "Initial learning rate")->capture_default_str();
    project->add_option("--metric", metric, "euclidean|cosine")->check(CLI::IsMember({ "euclidean", "cosine" }))->capture_default_str();
    project->add_option("--knn", knn, "auto|exact|nn_descent")->check(CLI::IsMember({ "auto", "exact", "nn_descent" }))->capture_default_str();
    project->add_option("--sample-size", sample_size, "Class-stratified subsample size");
    project->add_option("--seed", config.hp.seed, "Random seed")->capture_default_str();
    project->add_option("--deterministic", deterministic, "true|false")->capture_default_str();

    // metrics
    auto* metrics = app.add_subcommand("metrics", "Print quality metrics of a bundle as JSON");
    std::string metrics_bundle, metrics_in;
    std::size_t metrics_k = 15;
    metrics->add_option("--bundle", metrics_bundle, "Bundle directory")->required();
    metrics->add_option("--input", metrics_in, "Activation directory")->required();
    metrics->add_option("--k", metrics_k, "Neighborhood size")->capture_default_str()->check(CLI::PositiveNumber);

    // serve
    auto* serve_cmd = app.add_subcommand("serve", "Serve a bundle over HTTP");
    std::string serve_bundle, host = "127.0.0.1", assets;
    int port = 8080;
    serve_cmd->add_option("--bundle", serve_bundle, "Bundle directory")->required();
    serve_cmd->add_option("--port", port, "Port")->capture_default_str()->check(CLI::Range(0, 65535));
    serve_cmd->add_option("--host", host, "Host")->capture_default_str();
    serve_cmd->add_option("--assets", assets, "Directory with the built viewer");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return exit_ok;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return exit_ok;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n";
        const CLI::App* failed = &app;
        for (auto* sub : app.get_subcommands()) {
            failed = sub;
        }
        err << failed->help();
        return exit_usage;
    }

    try {
        if (*synth) {
            sp.schedule = parse_schedule(schedule);
            write_activation_series(synth_out, { synth_series(sp) });
            out << "wrote " << synth_out << "\n";
            return exit_ok;
        }

        if (*project) {
            config.input = project_in;
            config.output = project_out;
            std::stringstream ss(layers_csv);
            for (std::string item; std::getline(ss, item, ',');) {
                if (!item.empty()) {
                    config.layers.push_back(item);
                }
            }
            config.hp.metric = parse_metric(metric);
            config.knn_method = (knn == "exact" ? KnnMethod::exact : knn == "nn_descent" ? KnnMethod::nn_descent : KnnMethod::automatic);
            config.sample_size = sample_size;
            try {
                config.deterministic = detail::parse_bool(deterministic);
            } catch (const CLI::ValidationError& e) {
                err << "error: " << e.what() << "\n\n" << project->help();
                return exit_usage;
            }
            try {
                config.hp.validate();
            } catch (const InvalidArgument& e) {
                err << "error: " << e.what() << "\n\n" << project->help();
                return exit_usage;
            }
            auto bundle = run_project(config);
            out << "wrote bundle " << bundle.key << " to " << project_out << "\n";
            return exit_ok;
        }

        if (*metrics) {
            out << quality_report(metrics_bundle, metrics_in, metrics_k).dump(2) << "\n";
            return exit_ok;
        }

        if (*serve_cmd) {
            serve::Service service(serve_bundle, serve::ServiceOptions{ assets });
            int bound = service.bind(host, port);
            if (bound < 0) {
                err << "error: cannot bind " << host << ":" << port << "\n";
                return exit_data;
            }
            detail::running_service = &service;
            std::signal(SIGINT, detail::handle_signal);
            std::signal(SIGTERM, detail::handle_signal);
            out << "serving " << serve_bundle << " on http://" << host << ":" << bound << "\n" << std::flush;
            service.listen_after_bind();
            detail::running_service = nullptr;
            return exit_ok;
        }
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return exit_data;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return exit_data;
    }
    return exit_usage;
}

inline int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(args);
}

}

#endif
