// Copyright (C) 2026 CIRForge Contributors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "cirforge/pipeline.hpp"

#include <fstream>
#include <set>
#include <thread>

#include "cirforge/dataset.hpp"
#include "cirforge/errors.hpp"
#include "cirforge/hash.hpp"
#include "cirforge/manifest.hpp"
#include "doctest.h"
#include "httplib.h"
#include "json.hpp"
#include "test_util.hpp"

using namespace cirforge;
using namespace cirforge::pipeline;
using core::DatasetManifest;

namespace {

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

DatasetManifest small_pool(const std::filesystem::path& dir, std::size_t scenes,
                           std::uint64_t seed) {
    ToyWorldSpec spec;
    spec.train_scenes = scenes;
    spec.train_triplets = 0;
    spec.test_scenes = 2;
    spec.test_triplets = 0;
    const auto world = make_toy_world(spec, captioner::Vocabulary::builtin(), dir, seed);
    return dataset::filter_split(world, core::Split::train);
}

SynthesisConfig synth_config(const std::filesystem::path& dir) {
    SynthesisConfig config;
    config.media_root = dir;
    return config;
}

std::string tiny_config_text() {
    return R"(
[dataset]
kind = toy
train_scenes = 24
train_triplets = 40
test_scenes = 24
test_triplets = 40
fraction = 0.5
synthetic_per_manual = 3

[train]
epochs = 6
batch_size = 8

[eval]
ks = 1,5,10
)";
}

}  // namespace

TEST_CASE("make_toy_world is deterministic and well-formed") {
    testutil::TempDir d1("pipe"), d2("pipe");
    ToyWorldSpec spec;
    spec.train_scenes = 12;
    spec.train_triplets = 18;
    spec.test_scenes = 8;
    spec.test_triplets = 10;
    const auto vocab = captioner::Vocabulary::builtin();
    const auto w1 = make_toy_world(spec, vocab, d1, 42);
    const auto w2 = make_toy_world(spec, vocab, d2, 42);
    CHECK(w1 == w2);  // identical manifests from identical seeds
    CHECK(core::validate_manifest(w1).empty());
    CHECK(w1.triplets.size() == 18 + 10);

    const auto stats = core::compute_stats(w1);
    CHECK(stats.train_triplets == 18);
    CHECK(stats.test_triplets == 10);
    CHECK(stats.train_images >= 12);

    // Media really exists and renders match the sidecars.
    for (const auto& rec : w1.images) {
        CHECK(std::filesystem::exists(d1.path() / rec.uri));
        REQUIRE(rec.sidecar.has_value());
        const auto scene = captioner::load_scene(d1.path() / *rec.sidecar);
        CHECK(raster::read_png(d1.path() / rec.uri) == captioner::render_scene(scene, vocab));
    }

    const auto w3 = make_toy_world(spec, vocab, testutil::TempDir("pipe"), 43);
    CHECK(w3 != w1);  // different seed, different world
}

TEST_CASE("synthesize_triplets produces exactly n valid triplets") {
    testutil::TempDir dir("pipe");
    const auto pool = small_pool(dir, 6, 1);
    const auto backends = toy_backends();
    const auto report = synthesize_triplets(pool, 20, backends, synth_config(dir), 9);

    CHECK_FALSE(report.shortfall());
    CHECK(report.produced == 20);
    REQUIRE(report.manifest.triplets.size() == 20);
    CHECK(core::validate_manifest(report.manifest).empty());

    std::map<std::string, int> per_ref;
    std::set<std::string> combos;
    for (const auto& t : report.manifest.triplets) {
        REQUIRE(t.edit.has_value());
        CHECK(perturber::validate_edit(*t.edit).empty());
        CHECK(t.provenance == core::Provenance::synthetic);
        CHECK(t.generation_seed.has_value());
        per_ref[t.reference_image_id]++;
        combos.insert(t.reference_image_id + "|" + core::to_string(t.edit->kind) + "|" +
                      t.edit->new_value());
    }
    CHECK(combos.size() == 20);  // dedup: no repeated (ref, kind, value)
    // 20 triplets over 6 references forces several edits per reference.
    bool some_ref_reused = false;
    for (const auto& [ref, count] : per_ref) some_ref_reused |= count >= 2;
    CHECK(some_ref_reused);

    // Media files exist for every synthetic record.
    for (const auto& rec : report.manifest.images)
        if (rec.source == core::Source::synthetic)
            CHECK(std::filesystem::exists(dir.path() / rec.uri));
}

TEST_CASE("synthesize_triplets with n = 0 is an empty manifest") {
    testutil::TempDir dir("pipe");
    const auto pool = small_pool(dir, 3, 2);
    const auto report = synthesize_triplets(pool, 0, toy_backends(), synth_config(dir), 1);
    CHECK(report.produced == 0);
    CHECK_FALSE(report.shortfall());
    CHECK(report.manifest.triplets.empty());
}

TEST_CASE("a single-scene pool exhausts at its exact edit-space size") {
    testutil::TempDir dir("pipe");
    const auto pool = small_pool(dir, 2, 3);
    // Shrink to one reference.
    DatasetManifest one = pool;
    one.images.resize(1);
    one.triplets.clear();

    // Enumerate the scene's distinct non-identity edits.
    const auto vocab = captioner::Vocabulary::builtin();
    const auto scene = captioner::load_scene(dir.path() / *one.images[0].sidecar);
    std::size_t edit_space = 0;
    for (core::ComponentKind kind : core::kAllKinds)
        if (scene.component(kind)) edit_space += vocab.values(kind).size() - 1;

    const auto report =
        synthesize_triplets(one, edit_space + 50, toy_backends(), synth_config(dir), 5);
    CHECK(report.shortfall());
    CHECK(report.produced == edit_space);
    CHECK(report.shortfall_reason.find("exhausted") != std::string::npos);
    // Every edit distinct: the space really was covered.
    std::set<std::string> combos;
    for (const auto& t : report.manifest.triplets)
        combos.insert(core::to_string(t.edit->kind) + "|" + t.edit->new_value());
    CHECK(combos.size() == edit_space);
}

TEST_CASE("a 1,500-scene pool supports 5,000 triplets with reuse") {
    testutil::TempDir dir("pipe");
    const auto pool = small_pool(dir, 1500, 8);
    REQUIRE(pool.images.size() == 1500);
    const auto report = synthesize_triplets(pool, 5000, toy_backends(), synth_config(dir), 11);
    CHECK_FALSE(report.shortfall());
    CHECK(report.produced == 5000);
    std::map<std::string, int> per_ref;
    for (const auto& t : report.manifest.triplets) per_ref[t.reference_image_id]++;
    bool reused = false;
    for (const auto& [ref, count] : per_ref) reused |= count >= 2;
    CHECK(reused);
    CHECK(core::validate_manifest(report.manifest).empty());
}

TEST_CASE("synthesis is deterministic for a fixed seed") {
    testutil::TempDir d1("pipe"), d2("pipe");
    const auto p1 = small_pool(d1, 5, 4);
    const auto p2 = small_pool(d2, 5, 4);
    const auto r1 = synthesize_triplets(p1, 12, toy_backends(), synth_config(d1), 77);
    const auto r2 = synthesize_triplets(p2, 12, toy_backends(), synth_config(d2), 77);
    CHECK(core::manifest_to_json(r1.manifest) == core::manifest_to_json(r2.manifest));
    // And media bytes match pairwise.
    for (const auto& rec : r1.manifest.images) {
        if (rec.source != core::Source::synthetic) continue;
        CHECK(slurp(d1.path() / rec.uri) == slurp(d2.path() / rec.uri));
    }
}

TEST_CASE("an aborted external generation resumes from its checkpoint") {
    testutil::TempDir dir("pipe");
    const auto pool = small_pool(dir, 4, 6);

    // Generator stub that starts failing /edit after a few calls, then
    // recovers for the second run.
    std::atomic<int> edit_calls{0};
    std::atomic<bool> healthy{false};
    const raster::Raster produced(4, 4, {1, 2, 3});
    httplib::Server server;
    server.Post("/invert", [&](const httplib::Request&, httplib::Response& res) {
        res.set_content(R"({"trajectory_id": "t", "reconstruction_error": 0.0})",
                        "application/json");
    });
    server.Post("/edit", [&](const httplib::Request&, httplib::Response& res) {
        if (!healthy && ++edit_calls > 5) {
            res.status = 503;
            res.set_content("overloaded", "text/plain");
            return;
        }
        nlohmann::json reply;
        reply["image"] = base64_encode(raster::encode_png(produced));
        res.set_content(reply.dump(), "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread listener([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    Backends backends = toy_backends();
    backends.generate = cfgen::external_generator("http://127.0.0.1:" + std::to_string(port));
    backends.generate.http.retries = 0;

    SynthesisConfig config = synth_config(dir);
    config.checkpoint_file = dir.path() / "ckpt.json";
    config.checkpoint_every = 2;

    CHECK_THROWS_AS(synthesize_triplets(pool, 12, backends, config, 3), GenerationError);
    CHECK(std::filesystem::exists(*config.checkpoint_file));

    healthy = true;
    const auto report = synthesize_triplets(pool, 12, backends, config, 3);
    CHECK(report.produced == 12);
    CHECK_FALSE(std::filesystem::exists(*config.checkpoint_file));  // cleaned up

    // No duplicate ids or files.
    std::set<std::string> ids;
    for (const auto& rec : report.manifest.images) CHECK(ids.insert(rec.image_id).second);
    CHECK(core::validate_manifest(report.manifest).empty());

    server.stop();
    listener.join();
}

TEST_CASE("experiment config parses, validates, and rejects bad input") {
    const auto config = ExperimentConfig::from_ini(tiny_config_text());
    CHECK(config.dataset_kind == "toy");
    CHECK(config.toy.train_scenes == 24);
    CHECK(config.fraction == doctest::Approx(0.5));
    CHECK(config.train.epochs == 6);
    CHECK(config.eval.ks == std::vector<int>{1, 5, 10});

    CHECK_THROWS_AS(ExperimentConfig::from_ini("[dataset]\nfraction = 0\n"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_ini("[dataset]\nkindd = toy\n"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_ini("[nosuch]\nx = 1\n"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_ini("[train]\nepochs = soon\n"), ConfigError);

    // The bundled toy-e2e config is valid.
    CHECK_NOTHROW(ExperimentConfig::from_file(testutil::assets_dir() / "configs" / "toy_e2e.ini"));
}

TEST_CASE("run_experiment completes, reports both arms, and is idempotent") {
    testutil::TempDir out("pipe");
    const auto config = ExperimentConfig::from_ini(tiny_config_text());
    const auto bundle = run_experiment(config, 5, out.path());
    REQUIRE(bundle.status == "complete");
    REQUIRE(bundle.results.size() == 2);
    CHECK(bundle.results[0].first == "without_synthetic");
    CHECK(bundle.results[1].first == "with_synthetic");
    for (const auto& [label, result] : bundle.results) {
        CHECK(result.num_queries > 0);
        CHECK(result.recall_at.count(10));
    }
    for (const char* artifact : {"world.json", "pool.json", "captions.json", "edits.json",
                                 "synthetic.json", "results.csv", "results.txt", "summary.json",
                                 "run.log"})
        CHECK(std::filesystem::exists(out.path() / artifact));

    // The synthetic manifest validates and holds the requested count.
    const auto synthetic = core::load_manifest(out.path() / "synthetic.json");
    CHECK(core::validate_manifest(synthetic).empty());
    const auto pool = core::load_manifest(out.path() / "pool.json");
    CHECK(synthetic.triplets.size() == pool.triplets.size() * 3);  // synthetic_per_manual = 3

    // Rerun: untouched, reported as already complete.
    const std::string summary_before = slurp(out.path() / "summary.json");
    const auto again = run_experiment(config, 5, out.path());
    CHECK(again.status == "already_complete");
    CHECK(slurp(out.path() / "summary.json") == summary_before);
}

TEST_CASE("run_experiment is byte-deterministic across runs") {
    testutil::TempDir a("pipe"), b("pipe");
    const auto config = ExperimentConfig::from_ini(tiny_config_text());
    const auto r1 = run_experiment(config, 21, a.path());
    const auto r2 = run_experiment(config, 21, b.path());
    REQUIRE(r1.status == "complete");
    REQUIRE(r2.status == "complete");
    for (const char* artifact : {"world.json", "pool.json", "captions.json", "edits.json",
                                 "synthetic.json", "results.csv", "results.txt", "summary.json",
                                 "run.log"})
        CHECK(slurp(a.path() / artifact) == slurp(b.path() / artifact));
    // And a different seed changes the outputs.
    testutil::TempDir c("pipe");
    const auto r3 = run_experiment(config, 22, c.path());
    CHECK(slurp(a.path() / "synthetic.json") != slurp(c.path() / "synthetic.json"));
}

TEST_CASE("run_experiment with ablation emits the ablation table") {
    testutil::TempDir out("pipe");
    auto config = ExperimentConfig::from_ini(tiny_config_text());
    config.ablation_enabled = true;
    config.ablation_fractions = {0.5, 1.0};
    const auto bundle = run_experiment(config, 3, out.path());
    REQUIRE(bundle.status == "complete");
    const std::string csv = slurp(out.path() / "ablation.csv");
    CHECK(csv.rfind("fraction,arm,k,recall\n", 0) == 0);
    CHECK(csv.find("0.50,without_synthetic,") != std::string::npos);
    CHECK(csv.find("1.00,with_synthetic,") != std::string::npos);
}

TEST_CASE("per-item seeds derive from the run seed, id, and attempt") {
    CHECK(item_seed(1, "img", 0) != item_seed(1, "img", 1));
    CHECK(item_seed(1, "img", 0) != item_seed(2, "img", 0));
    CHECK(item_seed(1, "a", 0) != item_seed(1, "b", 0));
    CHECK(item_seed(1, "img", 3) == item_seed(1, "img", 3));
}
