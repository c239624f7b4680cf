#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <sstream>

#include "alignmap/bundle.hpp"
#include "alignmap/cli.hpp"
#include "test_utils.hpp"

using namespace alignmap;
namespace fs = std::filesystem;

namespace {

SynthParams small_synth(const std::string& layer = "synth") {
    SynthParams sp;
    sp.points_per_cluster = 20;
    sp.dims = 8;
    sp.n_epochs = 2;
    sp.layer_id = layer;
    return sp;
}

RunConfig small_config(const fs::path& in, const fs::path& out) {
    RunConfig c;
    c.input = in;
    c.output = out;
    c.hp.n_optim_epochs = 50;
    return c;
}

int run_cli(const std::vector<std::string>& args, std::string* out_text = nullptr, std::string* err_text = nullptr) {
    std::ostringstream out, err;
    int code = cli::run(args, out, err);
    if (out_text) *out_text = out.str();
    if (err_text) *err_text = err.str();
    return code;
}

int run_binary(const std::string& args) {
    std::string cmd = std::string(ALIGNMAP_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}

TEST(Pipeline, WritesCompleteBundle) {
    test_utils::TempDir dir;
    write_activation_series(dir / "act", { synth_series(small_synth()) });
    auto bundle = run_project(small_config(dir / "act", dir / "bundle"));

    auto manifest = read_bundle_manifest(dir / "bundle");
    EXPECT_EQ(manifest, bundle.manifest);
    EXPECT_EQ(manifest["num_points"], 60);
    EXPECT_EQ(manifest["bundle_key"], bundle.key);
    ASSERT_EQ(manifest["layers"].size(), 1u);
    EXPECT_EQ(manifest["layers"][0]["epochs"], nlohmann::json({ 0, 1 }));
    for (int e : { 0, 1 }) {
        EXPECT_EQ(fs::file_size(dir / "bundle" / position_file_name("synth", e)), 480u);
        auto pos = read_bundle_positions(dir / "bundle", manifest, "synth", e);
        EXPECT_EQ(pos, bundle.layers[0].slices[static_cast<std::size_t>(e)].positions);
    }
    EXPECT_EQ(fs::file_size(dir / "bundle" / labels_file_name), 120u);
    EXPECT_EQ(fs::file_size(dir / "bundle" / ids_file_name), 240u);
    auto report = nlohmann::json::parse(test_utils::slurp(dir / "bundle" / report_file_name));
    EXPECT_EQ(report["layers"][0]["mean_displacement"].size(), 1u);
}

TEST(Pipeline, RerunIsByteIdentical) {
    test_utils::TempDir dir;
    write_activation_series(dir / "act", { synth_series(small_synth()) });
    run_project(small_config(dir / "act", dir / "one"));
    run_project(small_config(dir / "act", dir / "two"));
    for (const auto& entry : fs::directory_iterator(dir / "one")) {
        auto name = entry.path().filename().string();
        EXPECT_EQ(test_utils::slurp(entry.path()), test_utils::slurp(dir / "two" / name)) << name;
    }
}

TEST(Pipeline, SymmetrizesEachSliceOnce) {
    test_utils::TempDir dir;
    write_activation_series(dir / "act", { synth_series(small_synth("a")), synth_series(small_synth("b")) });
    auto before = symmetrize_call_count().load();
    auto bundle = run_project(small_config(dir / "act", dir / "bundle"));
    EXPECT_EQ(symmetrize_call_count().load() - before, 2u * 2u);
    EXPECT_EQ(bundle.manifest["layers"].size(), 2u);
    EXPECT_EQ(bundle.manifest["layers"][0]["id"], "a");
    EXPECT_EQ(bundle.manifest["layers"][1]["id"], "b");
}

TEST(Pipeline, LayerSubsetAndSampleSize) {
    test_utils::TempDir dir;
    write_activation_series(dir / "act", { synth_series(small_synth("a")), synth_series(small_synth("b")) });
    auto config = small_config(dir / "act", dir / "bundle");
    config.layers = { "b" };
    config.sample_size = 30;
    auto bundle = run_project(config);
    EXPECT_EQ(bundle.manifest["num_points"], 30);
    EXPECT_EQ(bundle.manifest["layers"].size(), 1u);
    EXPECT_EQ(fs::file_size(dir / "bundle" / position_file_name("b", 0)), 240u);
    auto labels = io::read_le_array<std::uint16_t>(dir / "bundle" / labels_file_name, 30);
    for (ClassIndex c = 0; c < 3; ++c) {
        EXPECT_EQ(std::count(labels.begin(), labels.end(), c), 10);
    }
}

TEST(Pipeline, MissingLayerWritesNothing) {
    test_utils::TempDir dir;
    write_activation_series(dir / "act", { synth_series(small_synth()) });
    auto config = small_config(dir / "act", dir / "bundle");
    config.layers = { "nope" };
    try {
        run_project(config);
        FAIL() << "expected an error";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("nope"), std::string::npos);
    }
    EXPECT_FALSE(fs::exists(dir / "bundle" / bundle_manifest_name));
}

TEST(Pipeline, FailureRemovesStaleManifest) {
    test_utils::TempDir dir;
    write_activation_series(dir / "act", { synth_series(small_synth()) });
    auto config = small_config(dir / "act", dir / "bundle");
    run_project(config);
    ASSERT_TRUE(fs::exists(dir / "bundle" / bundle_manifest_name));

    config.hp.n_neighbors = 60;
    EXPECT_THROW(run_project(config), Error);
    EXPECT_FALSE(fs::exists(dir / "bundle" / bundle_manifest_name));
}

TEST(Pipeline, BundleKeyTracksParameters) {
    RunConfig a = small_config("x", "y"), b = a;
    EXPECT_EQ(bundle_key(a), bundle_key(b));
    b.hp.n_neighbors = 30;
    EXPECT_NE(bundle_key(a), bundle_key(b));
    RunConfig c = a;
    hyperparameters_from_json(hyperparameters_to_json(b), c);
    EXPECT_EQ(bundle_key(c), bundle_key(b));
}

TEST(Cli, EndToEnd) {
    test_utils::TempDir dir;
    std::string out, err;
    ASSERT_EQ(run_cli({ "synth", "--clusters", "3", "--points", "20", "--dims", "8", "--epochs", "2", "--drift", "0.2",
        "--schedule", "converging", "--seed", "1", "--output", (dir / "act").string() }, &out, &err), 0) << err;
    ASSERT_EQ(run_cli({ "project", "--input", (dir / "act").string(), "--output", (dir / "bundle").string(),
        "--optim-epochs", "40" }, &out, &err), 0) << err;
    EXPECT_EQ(fs::file_size(dir / "bundle" / position_file_name("synth", 1)), 480u);

    ASSERT_EQ(run_cli({ "metrics", "--bundle", (dir / "bundle").string(), "--input", (dir / "act").string(), "--k", "5" }, &out, &err), 0) << err;
    auto report = nlohmann::json::parse(out);
    auto manifest = read_bundle_manifest(dir / "bundle");
    auto series = load_activation_series(dir / "act", "synth");
    for (int e : { 0, 1 }) {
        auto pos = read_bundle_positions(dir / "bundle", manifest, "synth", e);
        EXPECT_NEAR(report["layers"][0]["trustworthiness"][e].get<double>(),
            trustworthiness(series.slices[static_cast<std::size_t>(e)].matrix, pos, 5), 1e-12);
    }
}

TEST(Cli, ExitCodes) {
    test_utils::TempDir dir;
    std::string out, err;
    EXPECT_EQ(run_cli({ "project", "--output", (dir / "b").string() }, &out, &err), 1);
    EXPECT_NE(err.find("--input"), std::string::npos);
    EXPECT_EQ(run_cli({ "project", "--input", "a", "--output", "b", "--bogus" }, &out, &err), 1);
    EXPECT_EQ(run_cli({ "project", "--input", "a", "--output", "b", "--min-dist", "-1" }, &out, &err), 1);
    EXPECT_NE(err.find("min_dist"), std::string::npos);
    EXPECT_EQ(run_cli({ "project", "--input", "a", "--output", "b", "--deterministic", "maybe" }, &out, &err), 1);
    EXPECT_EQ(run_cli({}, &out, &err), 1);

    EXPECT_EQ(run_cli({ "project", "--input", (dir / "missing").string(), "--output", (dir / "b").string() }, &out, &err), 2);
    write_activation_series(dir / "act", { synth_series(small_synth()) });
    EXPECT_EQ(run_cli({ "project", "--input", (dir / "act").string(), "--output", (dir / "b").string(), "--layers", "nope" }, &out, &err), 2);
    EXPECT_NE(err.find("nope"), std::string::npos);
    EXPECT_FALSE(fs::exists(dir / "b" / bundle_manifest_name));

    EXPECT_EQ(run_cli({ "--help" }, &out, &err), 0);
}

TEST(Cli, BinaryExitCodes) {
    test_utils::TempDir dir;
    EXPECT_EQ(run_binary("project --output " + (dir / "b").string()), 1);
    EXPECT_EQ(run_binary("project --input " + (dir / "missing").string() + " --output " + (dir / "b").string()), 2);
    EXPECT_EQ(run_binary("--help"), 0);
}
