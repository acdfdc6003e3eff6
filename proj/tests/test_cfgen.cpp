// Copyright (C) 2026 CIRForge Contributors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "cirforge/cfgen.hpp"

#include <set>
#include <thread>

#include "cirforge/errors.hpp"
#include "cirforge/hash.hpp"
#include "cirforge/manifest.hpp"
#include "cirforge/perturber.hpp"
#include "doctest.h"
#include "httplib.h"
#include "json.hpp"
#include "test_util.hpp"

using namespace cirforge;
using namespace cirforge::cfgen;
using captioner::SceneMeta;
using captioner::Vocabulary;
using core::ComponentKind;

namespace {

struct ToyImage {
    core::ImageRecord record;
    SceneMeta scene;
    core::Caption caption;
};

ToyImage put_scene(const std::filesystem::path& dir, const SceneMeta& scene,
                   const std::string& id, const Vocabulary& vocab) {
    ToyImage out;
    out.scene = scene;
    out.record.image_id = id;
    out.record.uri = id + ".png";
    out.record.sidecar = id + ".json";
    raster::write_png(captioner::render_scene(scene, vocab), dir / out.record.uri);
    captioner::save_scene(scene, dir / *out.record.sidecar);
    out.caption = captioner::caption_for_scene(scene, id);
    return out;
}

SceneMeta base_scene() {
    SceneMeta s;
    s.adjective = "white";
    s.subject = "cube";
    s.background = "grid";
    s.domain = "photo";
    s.object = "ball";
    return s;
}

core::CaptionEdit edit_for(const ToyImage& img, ComponentKind kind, const std::string& value) {
    return perturber::perturb_caption_with_value(img.caption, kind, value);
}

}  // namespace

TEST_CASE("generation config defaults and validation") {
    GenerationConfig config;
    CHECK(config.num_inversion_steps == 50);
    CHECK(config.guidance_scale == doctest::Approx(7.5));
    CHECK(config.cross_attention_injection_fraction == doctest::Approx(0.8));
    CHECK(config.self_attention_injection_fraction == doctest::Approx(0.4));
    CHECK(config.null_text_opt_iters == 10);
    CHECK(config.output_size == 512);
    CHECK(config.inversion_tolerance == doctest::Approx(0.05));
    CHECK_NOTHROW(config.validate());

    GenerationConfig bad = config;
    bad.num_inversion_steps = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = config;
    bad.cross_attention_injection_fraction = 1.5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = config;
    bad.guidance_scale = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("toy inversion reconstructs exactly") {
    testutil::TempDir dir("cfgen");
    const Vocabulary vocab = Vocabulary::builtin();
    const ToyImage img = put_scene(dir, base_scene(), "img", vocab);
    const auto trajectory =
        invert_image(img.record, img.caption, GenerationConfig{}, toy_generator(vocab), dir);
    CHECK(trajectory.reconstruction_error == 0.0);
    CHECK(captioner::scene_from_json(trajectory.handle) == img.scene);
}

TEST_CASE("toy inversion rejects a caption that is not the reference caption") {
    testutil::TempDir dir("cfgen");
    const Vocabulary vocab = Vocabulary::builtin();
    const ToyImage img = put_scene(dir, base_scene(), "img", vocab);
    core::Caption wrong = img.caption;
    wrong.text = "a photo of a red cube on a grid background";
    CHECK_THROWS_AS(invert_image(img.record, wrong, GenerationConfig{}, toy_generator(vocab), dir),
                    PreconditionError);
}

TEST_CASE("external inversion applies the tolerance threshold") {
    testutil::TempDir dir("cfgen");
    const Vocabulary vocab = Vocabulary::builtin();
    const ToyImage img = put_scene(dir, base_scene(), "img", vocab);

    double reported_error = 0.012;
    httplib::Server server;
    server.Post("/invert", [&](const httplib::Request& req, httplib::Response& res) {
        const auto body = nlohmann::json::parse(req.body);
        CHECK(body.at("steps") == 50);
        CHECK(body.at("null_opt_iters") == 10);
        nlohmann::json reply;
        reply["trajectory_id"] = "traj-1";
        reply["reconstruction_error"] = reported_error;
        res.set_content(reply.dump(), "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread listener([&] { server.listen_after_bind(); });
    server.wait_until_ready();
    auto backend = external_generator("http://127.0.0.1:" + std::to_string(port));
    backend.http.retries = 0;

    GenerationConfig config;  // tolerance 0.05
    const auto ok = invert_image(img.record, img.caption, config, backend, dir);
    CHECK(ok.reconstruction_error == doctest::Approx(0.012));
    CHECK(ok.handle == "traj-1");

    reported_error = 0.2;
    CHECK_THROWS_AS(invert_image(img.record, img.caption, config, backend, dir),
                    InversionQualityError);

    server.stop();
    listener.join();
}

TEST_CASE("toy edit repaints only the edited component's region") {
    testutil::TempDir dir("cfgen");
    const Vocabulary vocab = Vocabulary::builtin();
    const ToyImage img = put_scene(dir, base_scene(), "img", vocab);
    const auto backend = toy_generator(vocab);
    const auto trajectory = invert_image(img.record, img.caption, GenerationConfig{}, backend, dir);

    const raster::Raster reference_render = captioner::render_scene(img.scene, vocab);

    SUBCASE("adjective white -> red") {
        SyntheticMediaWriter writer(dir.path() / "syn");
        const auto out = edit_image(trajectory, edit_for(img, ComponentKind::adjective, "red"),
                                    GenerationConfig{}, backend, writer);
        const raster::Raster target = raster::decode_png(out.png_bytes);
        const auto mask = captioner::component_region(img.scene, ComponentKind::adjective);
        std::size_t changed_inside = 0;
        for (std::uint32_t y = 0; y < target.height; ++y)
            for (std::uint32_t x = 0; x < target.width; ++x) {
                const bool same = target.at(x, y) == reference_render.at(x, y);
                if (mask[y * target.width + x]) {
                    changed_inside += !same;
                } else {
                    CHECK(same);  // pixels outside the region are bit-identical
                }
            }
        CHECK(changed_inside > 0);
        CHECK(out.record.source == core::Source::synthetic);
        CHECK(out.record.image_id != img.record.image_id);
    }

    SUBCASE("background grid -> beach leaves the subject region intact") {
        SyntheticMediaWriter writer(dir.path() / "syn");
        const auto out = edit_image(trajectory, edit_for(img, ComponentKind::background, "beach"),
                                    GenerationConfig{}, backend, writer);
        const raster::Raster target = raster::decode_png(out.png_bytes);
        const auto background = captioner::component_region(img.scene, ComponentKind::background);
        const auto subject = captioner::component_region(img.scene, ComponentKind::subject);
        std::size_t changed_background = 0;
        for (std::uint32_t y = 0; y < target.height; ++y)
            for (std::uint32_t x = 0; x < target.width; ++x) {
                const bool same = target.at(x, y) == reference_render.at(x, y);
                if (subject[y * target.width + x]) CHECK(same);
                if (background[y * target.width + x]) changed_background += !same;
            }
        CHECK(changed_background > 0);
    }
}

TEST_CASE("identity edits are rejected before generation") {
    testutil::TempDir dir("cfgen");
    const Vocabulary vocab = Vocabulary::builtin();
    const ToyImage img = put_scene(dir, base_scene(), "img", vocab);
    const auto backend = toy_generator(vocab);
    const auto trajectory = invert_image(img.record, img.caption, GenerationConfig{}, backend, dir);

    core::CaptionEdit identity = edit_for(img, ComponentKind::adjective, "red");
    identity.counterfactual_caption = identity.reference_caption;
    identity.changed_span_cf = identity.changed_span_ref;

    SyntheticMediaWriter writer(dir.path() / "syn");
    CHECK_THROWS_AS(edit_image(trajectory, identity, GenerationConfig{}, backend, writer),
                    PreconditionError);
}

TEST_CASE("generate_target assembles a full synthetic triplet") {
    testutil::TempDir dir("cfgen");
    const Vocabulary vocab = Vocabulary::builtin();
    const ToyImage img = put_scene(dir, base_scene(), "img", vocab);
    const auto backend = toy_generator(vocab);
    GenerationConfig config;
    config.seed = 1234;

    SyntheticMediaWriter writer(dir.path() / "syn");
    const auto edit = edit_for(img, ComponentKind::adjective, "red");
    const auto result = generate_target(img.record, edit, config, backend, writer, dir);
    REQUIRE(result.ok());

    const core::Triplet& t = *result.triplet;
    CHECK(t.reference_image_id == "img");
    CHECK(t.target_image_id == result.record->image_id);
    CHECK(t.provenance == core::Provenance::synthetic);
    CHECK(t.modification_text == "replace the white with red");
    CHECK(t.generation_seed == 1234);
    CHECK(t.injection == core::InjectionMode::word_swap);
    REQUIRE(t.edit.has_value());

    // The produced target decodes to the direct render of the edited scene.
    SceneMeta edited = img.scene;
    edited.adjective = "red";
    const auto target_png = raster::read_png(writer.root() / result.record->uri);
    CHECK(target_png == captioner::render_scene(edited, vocab));

    // Appending (record, triplet) to the reference's manifest validates.
    core::DatasetManifest manifest;
    manifest.images = {img.record, *result.record};
    manifest.triplets = {t};
    CHECK(core::validate_manifest(manifest).empty());
}

TEST_CASE("generate_target is byte-deterministic for a fixed seed") {
    testutil::TempDir dir("cfgen");
    const Vocabulary vocab = Vocabulary::builtin();
    const ToyImage img = put_scene(dir, base_scene(), "img", vocab);
    const auto backend = toy_generator(vocab);
    GenerationConfig config;
    config.seed = 7;

    const auto edit = edit_for(img, ComponentKind::background, "forest");
    SyntheticMediaWriter w1(dir.path() / "a");
    SyntheticMediaWriter w2(dir.path() / "b");
    const auto r1 = generate_target(img.record, edit, config, backend, w1, dir);
    const auto r2 = generate_target(img.record, edit, config, backend, w2, dir);
    REQUIRE(r1.ok());
    REQUIRE(r2.ok());
    const auto bytes1 = raster::read_png(w1.root() / r1.record->uri);
    const auto bytes2 = raster::read_png(w2.root() / r2.record->uri);
    CHECK(raster::encode_png(bytes1) == raster::encode_png(bytes2));
    CHECK(r1.triplet->modification_text == r2.triplet->modification_text);
}

TEST_CASE("generate_target propagates config validation") {
    testutil::TempDir dir("cfgen");
    const Vocabulary vocab = Vocabulary::builtin();
    const ToyImage img = put_scene(dir, base_scene(), "img", vocab);
    GenerationConfig bad;
    bad.num_inversion_steps = 0;
    SyntheticMediaWriter writer(dir.path() / "syn");
    CHECK_THROWS_AS(generate_target(img.record, edit_for(img, ComponentKind::adjective, "red"),
                                    bad, toy_generator(vocab), writer, dir),
                    ConfigError);
}

TEST_CASE("generate_target returns a skip marker on poor inversion") {
    testutil::TempDir dir("cfgen");
    const Vocabulary vocab = Vocabulary::builtin();
    const ToyImage img = put_scene(dir, base_scene(), "img", vocab);

    httplib::Server server;
    server.Post("/invert", [&](const httplib::Request&, httplib::Response& res) {
        res.set_content(R"({"trajectory_id": "t", "reconstruction_error": 0.4})",
                        "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread listener([&] { server.listen_after_bind(); });
    server.wait_until_ready();
    auto backend = external_generator("http://127.0.0.1:" + std::to_string(port));
    backend.http.retries = 0;

    SyntheticMediaWriter writer(dir.path() / "syn");
    const auto result = generate_target(img.record, edit_for(img, ComponentKind::adjective, "red"),
                                        GenerationConfig{}, backend, writer, dir);
    CHECK_FALSE(result.ok());
    CHECK(result.skip_reason.find("tolerance") != std::string::npos);

    server.stop();
    listener.join();
}

TEST_CASE("external edit round-trips the image payload") {
    testutil::TempDir dir("cfgen");
    const Vocabulary vocab = Vocabulary::builtin();
    const ToyImage img = put_scene(dir, base_scene(), "img", vocab);

    const raster::Raster produced(8, 8, {9, 30, 200});
    httplib::Server server;
    server.Post("/invert", [&](const httplib::Request&, httplib::Response& res) {
        res.set_content(R"({"trajectory_id": "t", "reconstruction_error": 0.0})",
                        "application/json");
    });
    server.Post("/edit", [&](const httplib::Request& req, httplib::Response& res) {
        const auto body = nlohmann::json::parse(req.body);
        CHECK(body.at("trajectory_id") == "t");
        CHECK(body.at("cross_frac") == doctest::Approx(0.8));
        CHECK(body.at("self_frac") == doctest::Approx(0.4));
        nlohmann::json reply;
        reply["image"] = base64_encode(raster::encode_png(produced));
        res.set_content(reply.dump(), "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread listener([&] { server.listen_after_bind(); });
    server.wait_until_ready();
    auto backend = external_generator("http://127.0.0.1:" + std::to_string(port));
    backend.http.retries = 0;

    SyntheticMediaWriter writer(dir.path() / "syn");
    const auto result = generate_target(img.record, edit_for(img, ComponentKind::adjective, "red"),
                                        GenerationConfig{}, backend, writer, dir);
    REQUIRE(result.ok());
    CHECK(raster::read_png(writer.root() / result.record->uri) == produced);

    server.stop();
    listener.join();
}

TEST_CASE("media writer allocates unique paths under contention") {
    testutil::TempDir dir("cfgen");
    SyntheticMediaWriter writer(dir.path(), "syn");
    std::vector<std::string> ids(200);
#pragma omp parallel for
    for (int i = 0; i < 200; ++i) ids[i] = writer.allocate().image_id;
    std::set<std::string> unique(ids.begin(), ids.end());
    CHECK(unique.size() == 200);
}

TEST_CASE("media writer resumes past existing ids") {
    testutil::TempDir dir("cfgen");
    SyntheticMediaWriter writer(dir.path(), "syn");
    std::vector<core::ImageRecord> existing;
    core::ImageRecord rec;
    rec.image_id = "syn_000041";
    existing.push_back(rec);
    rec.image_id = "other_000099";  // different prefix, ignored
    existing.push_back(rec);
    writer.reserve_existing(existing);
    CHECK(writer.allocate().image_id == "syn_000042");
}
