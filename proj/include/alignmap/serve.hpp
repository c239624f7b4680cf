#ifndef ALIGNMAP_SERVE_HPP
#define ALIGNMAP_SERVE_HPP

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "bundle.hpp"

/**
 * @file serve.hpp
 *
 * @brief HTTP service that exposes bundles to the viewer and recomputes them.
 *
 * Endpoints:
 *
 * - `GET /api/manifest`: the active bundle's `bundle.json`, verbatim (503 if none).
 * - `GET /api/b/{key}/positions/{layer}/{epoch}`: raw little-endian float32 positions.
 * - `GET /api/b/{key}/labels`, `GET /api/b/{key}/ids`: raw u16 labels and u32 sample ids.
 * - `POST /api/recompute`: enqueue a recompute with hyperparameter overrides (202).
 * - `GET /api/jobs/{id}`: job status.
 * - `GET /`, `GET /assets/...`: static viewer files.
 *
 * Every bundle ever activated stays addressable by its key, so a client that
 * read a manifest keeps getting consistent buffers after a swap.
 */

namespace alignmap::serve {

enum class JobStatus { queued, running, done, error };

inline std::string to_string(JobStatus s) {
    switch (s) {
        case JobStatus::queued: return "queued";
        case JobStatus::running: return "running";
        case JobStatus::done: return "done";
        default: return "error";
    }
}

struct Job {
    std::string id;
    JobStatus status = JobStatus::queued;
    double progress = 0;
    nlohmann::json overrides;
    std::string bundle_key;
    std::string message;

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["job_id"] = id;
        j["status"] = to_string(status);
        j["progress"] = progress;
        j["overrides"] = overrides;
        if (status == JobStatus::done) {
            j["bundle_key"] = bundle_key;
        }
        if (status == JobStatus::error) {
            j["error"] = message;
        }
        return j;
    }
};

struct LoadedBundle {
    std::string key;
    std::filesystem::path directory;
    nlohmann::json manifest;
    std::string manifest_text;
};

/** Field name to message; empty when the overrides are acceptable. */
using FieldErrors = std::map<std::string, std::string>;

/**
 * Range checks for recompute overrides against the active bundle. Mirrors
 * `Hyperparameters::validate()` plus the data-dependent limits.
 */
inline FieldErrors validate_overrides(const nlohmann::json& body, const nlohmann::json& manifest) {
    FieldErrors errors;
    if (!body.is_object()) {
        errors["body"] = "must be a JSON object";
        return errors;
    }

    RunConfig current;
    hyperparameters_from_json(manifest.at("hyperparameters"), current);
    const auto total = manifest.at("source").at("total_points").get<std::size_t>();
    std::size_t effective_n = manifest.at("num_points").get<std::size_t>();

    auto is_integer = [](const nlohmann::json& v) { return v.is_number_integer() || v.is_number_unsigned(); };

    for (const auto& [field, value] : body.items()) {
        if (field == "n_neighbors") {
            if (!is_integer(value) || value.get<long long>() < 2) {
                errors[field] = "must be an integer >= 2";
            }
        } else if (field == "min_dist") {
            if (!value.is_number() || !(value.get<double>() >= 0)) {
                errors[field] = "must be a number >= 0";
            } else if (value.get<double>() > current.hp.spread) {
                errors[field] = "must not exceed spread (" + std::to_string(current.hp.spread) + ")";
            }
        } else if (field == "alignment_weight") {
            if (!value.is_number() || !(value.get<double>() >= 0)) {
                errors[field] = "must be a number >= 0";
            }
        } else if (field == "sample_size") {
            if (!is_integer(value) || value.get<long long>() < 1 || value.get<unsigned long long>() > total) {
                errors[field] = "must be an integer in [1, " + std::to_string(total) + "]";
            } else {
                effective_n = value.get<std::size_t>();
            }
        } else if (field == "seed") {
            if (!is_integer(value) || value.get<long long>() < 0) {
                errors[field] = "must be a non-negative integer";
            }
        } else {
            errors[field] = "unknown field";
        }
    }

    if (!errors.count("n_neighbors") && !errors.count("sample_size")) {
        auto k = (body.contains("n_neighbors") ? body.at("n_neighbors").get<std::size_t>() : static_cast<std::size_t>(current.hp.n_neighbors));
        if (k + 1 > effective_n) {
            errors[body.contains("n_neighbors") ? "n_neighbors" : "sample_size"] =
                "n_neighbors must be below the number of points (" + std::to_string(effective_n) + ")";
        }
    }
    return errors;
}

struct ServiceOptions {
    std::filesystem::path assets;
};

class Service {
public:
    /**
     * Serve `bundle_dir`. A directory without a complete bundle is accepted;
     * the API then answers 503 until a bundle exists.
     */
    explicit Service(std::filesystem::path bundle_dir, ServiceOptions options = {}) :
        my_root(std::filesystem::absolute(bundle_dir).lexically_normal()), my_options(std::move(options))
    {
        if (!my_root.has_filename()) {
            my_root = my_root.parent_path();
        }
        try {
            activate(load(my_root));
        } catch (const Error&) {
            // No complete bundle yet.
        }
        register_routes();
        my_worker = std::thread([this] { work(); });
    }

    ~Service() {
        stop();
    }

    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    /** Bind to `host:port`; `port == 0` picks a free port. @return The bound port, or -1. */
    int bind(const std::string& host, int port) {
        if (port == 0) {
            return my_server.bind_to_any_port(host);
        }
        return my_server.bind_to_port(host, port) ? port : -1;
    }

    /** Blocks until `stop()`. */
    bool listen_after_bind() {
        return my_server.listen_after_bind();
    }

    void stop() {
        my_server.stop();
        {
            std::lock_guard<std::mutex> lock(my_jobs_mutex);
            my_stopping = true;
        }
        my_jobs_cv.notify_all();
        if (my_worker.joinable()) {
            my_worker.join();
        }
    }

    void wait_until_ready() {
        my_server.wait_until_ready();
    }

    std::shared_ptr<const LoadedBundle> active() const {
        std::lock_guard<std::mutex> lock(my_bundle_mutex);
        return my_active;
    }

    std::optional<Job> job(const std::string& id) const {
        std::lock_guard<std::mutex> lock(my_jobs_mutex);
        auto it = my_jobs.find(id);
        if (it == my_jobs.end()) {
            return std::nullopt;
        }
        return it->second;
    }

private:
    static std::shared_ptr<const LoadedBundle> load(const std::filesystem::path& dir) {
        auto bundle = std::make_shared<LoadedBundle>();
        bundle->manifest = read_bundle_manifest(dir);
        bundle->manifest_text = io::read_text(dir / bundle_manifest_name);
        bundle->directory = dir;
        bundle->key = bundle->manifest.value("bundle_key", std::string{});
        if (bundle->key.empty()) {
            bundle->key = fnv1a_hex(bundle->manifest_text);
        }
        return bundle;
    }

    void activate(std::shared_ptr<const LoadedBundle> bundle) {
        std::lock_guard<std::mutex> lock(my_bundle_mutex);
        my_known[bundle->key] = bundle;
        my_active = std::move(bundle);
    }

    std::shared_ptr<const LoadedBundle> find(const std::string& key) const {
        std::lock_guard<std::mutex> lock(my_bundle_mutex);
        auto it = my_known.find(key);
        return it == my_known.end() ? nullptr : it->second;
    }

    static void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
        res.status = status;
        res.set_content(body.dump(), "application/json; charset=utf-8");
    }

    static void send_file(httplib::Response& res, const std::filesystem::path& path) {
        try {
            auto bytes = io::read_text(path);
            res.status = 200;
            res.set_content(std::move(bytes), "application/octet-stream");
        } catch (const Error&) {
            send_json(res, 404, { { "error", "file not found" } });
        }
    }

    void register_routes() {
        my_server.Get("/api/manifest", [this](const httplib::Request&, httplib::Response& res) {
            auto bundle = active();
            if (!bundle) {
                send_json(res, 503, { { "error", "no complete bundle available" } });
                return;
            }
            res.status = 200;
            res.set_content(bundle->manifest_text, "application/json; charset=utf-8");
        });

        my_server.Get(R"(/api/b/([^/]+)/positions/([^/]+)/(\d+))", [this](const httplib::Request& req, httplib::Response& res) {
            auto bundle = find(req.matches[1]);
            if (!bundle) {
                send_json(res, 404, { { "error", "unknown bundle" } });
                return;
            }
            std::string layer = req.matches[2];
            std::string epoch = req.matches[3];
            for (const auto& l : bundle->manifest.at("layers")) {
                if (l.at("id").get<std::string>() == layer && l.at("position_files").contains(epoch)) {
                    send_file(res, bundle->directory / l.at("position_files").at(epoch).get<std::string>());
                    return;
                }
            }
            send_json(res, 404, { { "error", "unknown layer/epoch" } });
        });

        auto raw = [this](const char* field) {
            return [this, field](const httplib::Request& req, httplib::Response& res) {
                auto bundle = find(req.matches[1]);
                if (!bundle) {
                    send_json(res, 404, { { "error", "unknown bundle" } });
                    return;
                }
                send_file(res, bundle->directory / bundle->manifest.at(field).get<std::string>());
            };
        };
        my_server.Get(R"(/api/b/([^/]+)/labels)", raw("labels_file"));
        my_server.Get(R"(/api/b/([^/]+)/ids)", raw("sample_ids_file"));

        my_server.Post("/api/recompute", [this](const httplib::Request& req, httplib::Response& res) {
            auto bundle = active();
            if (!bundle) {
                send_json(res, 503, { { "error", "no complete bundle available" } });
                return;
            }
            nlohmann::json body;
            try {
                body = nlohmann::json::parse(req.body.empty() ? std::string("{}") : req.body);
            } catch (const nlohmann::json::exception&) {
                send_json(res, 422, { { "errors", { { "body", "invalid JSON" } } } });
                return;
            }
            auto errors = validate_overrides(body, bundle->manifest);
            if (!errors.empty()) {
                send_json(res, 422, { { "errors", errors } });
                return;
            }
            send_json(res, 202, { { "job_id", submit(body) } });
        });

        my_server.Get(R"(/api/jobs/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
            auto found = job(req.matches[1]);
            if (!found) {
                send_json(res, 404, { { "error", "unknown job" } });
                return;
            }
            send_json(res, 200, found->to_json());
        });

        if (!my_options.assets.empty() && std::filesystem::is_directory(my_options.assets)) {
            my_server.set_mount_point("/assets", my_options.assets.string());
        }
        my_server.Get("/", [this](const httplib::Request&, httplib::Response& res) {
            auto index = my_options.assets / "index.html";
            if (!my_options.assets.empty() && std::filesystem::exists(index)) {
                res.set_content(io::read_text(index), "text/html; charset=utf-8");
            } else {
                res.set_content("<!doctype html><title>alignmap</title><p>Viewer assets not installed. "
                    "The API is available under <code>/api/</code>.</p>", "text/html; charset=utf-8");
            }
        });
    }

    /** Enqueue, or return the id of an in-flight job with the same overrides. */
    std::string submit(const nlohmann::json& overrides) {
        std::lock_guard<std::mutex> lock(my_jobs_mutex);
        for (const auto& [id, job] : my_jobs) {
            bool in_flight = job.status == JobStatus::queued || job.status == JobStatus::running;
            if (in_flight && job.overrides == overrides) {
                return id;
            }
        }
        Job job;
        job.id = "job-" + std::to_string(++my_job_counter);
        job.overrides = overrides;
        my_jobs[job.id] = job;
        my_queue.push_back(job.id);
        my_jobs_cv.notify_one();
        return job.id;
    }

    void update(const std::string& id, const std::function<void(Job&)>& fn) {
        std::lock_guard<std::mutex> lock(my_jobs_mutex);
        fn(my_jobs.at(id));
    }

    void work() {
        while (true) {
            std::string id;
            {
                std::unique_lock<std::mutex> lock(my_jobs_mutex);
                my_jobs_cv.wait(lock, [this] { return my_stopping || !my_queue.empty(); });
                if (my_stopping) {
                    return;
                }
                id = my_queue.front();
                my_queue.pop_front();
                my_jobs.at(id).status = JobStatus::running;
            }
            run(id);
        }
    }

    void run(const std::string& id) {
        nlohmann::json overrides;
        {
            std::lock_guard<std::mutex> lock(my_jobs_mutex);
            overrides = my_jobs.at(id).overrides;
        }

        try {
            auto base = active();
            if (!base) {
                throw FormatError("no active bundle");
            }
            RunConfig config;
            const auto& source = base->manifest.at("source");
            config.input = source.at("input").get<std::string>();
            config.layers = source.at("layers").get<std::vector<std::string>>();
            hyperparameters_from_json(base->manifest.at("hyperparameters"), config);
            hyperparameters_from_json(overrides, config);
            config.progress = [this, &id](double p) {
                update(id, [p](Job& job) { job.progress = std::max(job.progress, std::min(p, 0.99)); });
            };

            auto key = bundle_key(config);
            auto dir = my_root.parent_path() / (my_root.filename().string() + "-" + key);
            std::shared_ptr<const LoadedBundle> loaded;
            if (std::filesystem::exists(dir / bundle_manifest_name)) {
                try {
                    loaded = load(dir);
                } catch (const Error&) {
                    loaded = nullptr;
                }
            }
            if (!loaded || loaded->key != key) {
                config.output = dir;
                run_project(config);
                loaded = load(dir);
            }
            activate(loaded);
            update(id, [&](Job& job) {
                job.bundle_key = loaded->key;
                job.progress = 1.0;
                job.status = JobStatus::done;
            });
        } catch (const std::exception& e) {
            std::string message = e.what();
            update(id, [&](Job& job) {
                job.message = message;
                job.status = JobStatus::error;
            });
        }
    }

    std::filesystem::path my_root;
    ServiceOptions my_options;
    httplib::Server my_server;

    mutable std::mutex my_bundle_mutex;
    std::shared_ptr<const LoadedBundle> my_active;
    std::map<std::string, std::shared_ptr<const LoadedBundle>> my_known;

    mutable std::mutex my_jobs_mutex;
    std::condition_variable my_jobs_cv;
    std::map<std::string, Job> my_jobs;
    std::deque<std::string> my_queue;
    std::size_t my_job_counter = 0;
    bool my_stopping = false;
    std::thread my_worker;
};

}

#endif
