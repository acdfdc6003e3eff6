// Copyright (C) 2026 CIRForge Contributors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "cirforge/captioner.hpp"

#include <thread>

#include "cirforge/errors.hpp"
#include "cirforge/hash.hpp"
#include "doctest.h"
#include "httplib.h"
#include "json.hpp"
#include "test_util.hpp"

using namespace cirforge;
using namespace cirforge::captioner;

namespace {

/// Writes a scene's render + sidecar into dir and returns its record.
core::ImageRecord put_scene(const std::filesystem::path& dir, const SceneMeta& scene,
                            const std::string& id, const Vocabulary& vocab) {
    core::ImageRecord rec;
    rec.image_id = id;
    rec.uri = id + ".png";
    rec.sidecar = id + ".json";
    raster::write_png(render_scene(scene, vocab), dir / rec.uri);
    save_scene(scene, dir / *rec.sidecar);
    return rec;
}

SceneMeta scene_of(const std::string& adjective, const std::string& subject,
                   const std::string& background, const std::string& domain,
                   std::optional<std::string> object = std::nullopt) {
    SceneMeta s;
    s.adjective = adjective;
    s.subject = subject;
    s.background = background;
    s.domain = domain;
    s.object = std::move(object);
    return s;
}

}  // namespace

TEST_CASE("toy caption applies the declared template") {
    testutil::TempDir dir("cap");
    const Vocabulary vocab = Vocabulary::builtin();
    const auto rec = put_scene(dir, scene_of("red", "cube", "grid", "photo"), "img1", vocab);

    const core::Caption caption = generate_caption(rec, toy_captioner(vocab), dir);
    CHECK(caption.text == "a photo of a red cube on a grid background");
    CHECK(caption.image_id == "img1");
    CHECK(caption.components.at(core::ComponentKind::domain) == core::TokenSpan{1, 2});
    CHECK(caption.components.at(core::ComponentKind::adjective) == core::TokenSpan{4, 5});
    CHECK(caption.components.at(core::ComponentKind::subject) == core::TokenSpan{5, 6});
    CHECK(caption.components.at(core::ComponentKind::background) == core::TokenSpan{8, 9});
    CHECK_FALSE(caption.components.count(core::ComponentKind::object));
}

TEST_CASE("toy caption includes the optional object slot") {
    testutil::TempDir dir("cap");
    const Vocabulary vocab = Vocabulary::builtin();
    const auto rec =
        put_scene(dir, scene_of("white", "sports car", "mountains", "photo", "ball"), "i", vocab);
    const core::Caption caption = generate_caption(rec, toy_captioner(vocab), dir);
    CHECK(caption.text == "a photo of a white sports car with a ball on a mountains background");
    CHECK(caption.components.at(core::ComponentKind::subject) == core::TokenSpan{5, 7});
    CHECK(caption.components.at(core::ComponentKind::object) == core::TokenSpan{9, 10});
    CHECK(caption.components.at(core::ComponentKind::background) == core::TokenSpan{12, 13});
}

TEST_CASE("toy captioner is a pure function of the sidecar") {
    testutil::TempDir dir("cap");
    const Vocabulary vocab = Vocabulary::builtin();
    const auto rec = put_scene(dir, scene_of("blue", "dog", "beach", "painting"), "img", vocab);
    const auto backend = toy_captioner(vocab);
    const auto first = generate_caption(rec, backend, dir);
    const auto second = generate_caption(rec, backend, dir);
    CHECK(first == second);
}

TEST_CASE("every toy span covers exactly the scene field value") {
    testutil::TempDir dir("cap");
    const Vocabulary vocab = Vocabulary::builtin();
    const auto scenes = all_scenes(vocab);
    const auto backend = toy_captioner(vocab);
    // A spread of the scene space, not just the first few.
    for (std::size_t i = 0; i < scenes.size(); i += 197) {
        const auto rec = put_scene(dir, scenes[i], "img" + std::to_string(i), vocab);
        const auto caption = generate_caption(rec, backend, dir);
        const auto tokens = caption.tokens();
        for (const auto& [kind, span] : caption.components) {
            std::string value;
            for (std::size_t t = span.start; t < span.end; ++t) {
                if (!value.empty()) value += ' ';
                value += tokens[t];
            }
            CHECK(value == *scenes[i].component(kind));
        }
    }
}

TEST_CASE("missing sidecar raises an I/O error") {
    testutil::TempDir dir("cap");
    const Vocabulary vocab = Vocabulary::builtin();
    auto rec = put_scene(dir, scene_of("red", "cube", "grid", "photo"), "img", vocab);
    rec.sidecar.reset();
    CHECK_THROWS_AS(generate_caption(rec, toy_captioner(vocab), dir), IoError);
}

TEST_CASE("missing image file raises an I/O error") {
    testutil::TempDir dir("cap");
    core::ImageRecord rec;
    rec.image_id = "ghost";
    rec.uri = "ghost.png";
    rec.sidecar = "ghost.json";
    CHECK_THROWS_AS(generate_caption(rec, toy_captioner(), dir), IoError);
}

TEST_CASE("backend invariants: exactly one of endpoint/template") {
    CaptionerBackend broken = toy_captioner();
    broken.endpoint = "http://localhost:1";
    testutil::TempDir dir("cap");
    const auto rec = put_scene(dir, scene_of("red", "cube", "grid", "photo"), "img",
                               Vocabulary::builtin());
    CHECK_THROWS_AS(generate_caption(rec, broken, dir), ConfigError);
}

TEST_CASE("checked-in vocabulary file matches the builtin vocabulary") {
    CHECK(Vocabulary::load(testutil::assets_dir() / "toy_vocabulary.json") ==
          Vocabulary::builtin());
}

TEST_CASE("builtin vocabulary has the declared slot sizes") {
    const Vocabulary v = Vocabulary::builtin();
    CHECK(v.adjectives.size() == 8);
    CHECK(v.subjects.size() == 10);
    CHECK(v.backgrounds.size() == 6);
    CHECK(v.objects.size() == 4);
    CHECK(v.domains.size() == 2);
    // Colors within a slot must differ or edits could be pixel no-ops.
    for (core::ComponentKind kind : core::kAllKinds) {
        const auto& slot = v.slot(kind);
        for (std::size_t i = 0; i < slot.size(); ++i)
            for (std::size_t j = i + 1; j < slot.size(); ++j) {
                CHECK(slot[i].value != slot[j].value);
                CHECK(slot[i].color != slot[j].color);
            }
    }
}

TEST_CASE("renders are deterministic and PNG round-trips exactly") {
    const Vocabulary vocab = Vocabulary::builtin();
    const SceneMeta scene = scene_of("green", "tree", "forest", "painting", "flag");
    const raster::Raster a = render_scene(scene, vocab);
    const raster::Raster b = render_scene(scene, vocab);
    CHECK(a == b);
    CHECK(a.width == kToyImageSize);
    const std::string png = raster::encode_png(a);
    CHECK(raster::decode_png(png) == a);
    CHECK(raster::encode_png(raster::decode_png(png)) == png);
}

TEST_CASE("render regions partition the image and respect the scene") {
    const Vocabulary vocab = Vocabulary::builtin();
    for (const auto& scene : {scene_of("red", "cube", "grid", "photo"),
                              scene_of("blue", "dog", "beach", "painting", "hat")}) {
        std::vector<int> covered(kToyImageSize * kToyImageSize, 0);
        for (core::ComponentKind kind : core::kAllKinds) {
            const auto mask = component_region(scene, kind);
            for (std::size_t i = 0; i < mask.size(); ++i) covered[i] += mask[i];
        }
        for (int c : covered) CHECK(c == 1);  // disjoint and complete
    }
}

TEST_CASE("changing one component only repaints its region") {
    const Vocabulary vocab = Vocabulary::builtin();
    const SceneMeta base = scene_of("red", "cube", "grid", "photo", "ball");
    const raster::Raster before = render_scene(base, vocab);
    const std::map<core::ComponentKind, std::string> replacements = {
        {core::ComponentKind::adjective, "blue"}, {core::ComponentKind::subject, "dog"},
        {core::ComponentKind::background, "beach"}, {core::ComponentKind::domain, "painting"},
        {core::ComponentKind::object, "hat"}};
    for (const auto& [kind, value] : replacements) {
        SceneMeta edited = base;
        edited.set_component(kind, value);
        const raster::Raster after = render_scene(edited, vocab);
        const auto mask = component_region(base, kind);
        std::size_t inside_changed = 0, outside_changed = 0;
        for (std::uint32_t y = 0; y < before.height; ++y)
            for (std::uint32_t x = 0; x < before.width; ++x) {
                if (before.at(x, y) == after.at(x, y)) continue;
                (mask[y * before.width + x] ? inside_changed : outside_changed)++;
            }
        CHECK(outside_changed == 0);
        CHECK(inside_changed > 0);
    }
}

TEST_CASE("scene sidecar JSON round-trips") {
    const SceneMeta scene = scene_of("yellow", "boat", "desert", "photo", "lamp");
    CHECK(scene_from_json(scene_to_json(scene)) == scene);
    SceneMeta no_object = scene;
    no_object.object.reset();
    CHECK(scene_from_json(scene_to_json(no_object)) == no_object);
}

TEST_CASE("external captioner speaks the wire protocol") {
    testutil::TempDir dir("cap");
    const Vocabulary vocab = Vocabulary::builtin();
    const auto rec = put_scene(dir, scene_of("red", "cube", "grid", "photo"), "img", vocab);

    httplib::Server server;
    std::string seen_body;
    server.Post("/caption", [&](const httplib::Request& req, httplib::Response& res) {
        seen_body = req.body;
        res.set_content("{\"caption\": \"a red cube on a grid\"}", "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread listener([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    auto backend = external_captioner("http://127.0.0.1:" + std::to_string(port));
    const auto caption = generate_caption(rec, backend, dir);
    CHECK(caption.text == "a red cube on a grid");
    CHECK(caption.components.empty());

    // The request carries the png raster as base64.
    const auto body = nlohmann::json::parse(seen_body);
    CHECK(body.at("format") == "png");
    const std::string raster_bytes = base64_decode(body.at("image").get<std::string>());
    CHECK(raster::decode_png(raster_bytes) == render_scene(scene_of("red", "cube", "grid", "photo"), vocab));

    server.stop();
    listener.join();
}

TEST_CASE("external captioner surfaces backend failures with the raw payload") {
    testutil::TempDir dir("cap");
    const Vocabulary vocab = Vocabulary::builtin();
    const auto rec = put_scene(dir, scene_of("red", "cube", "grid", "photo"), "img", vocab);

    httplib::Server server;
    int calls = 0;
    server.Post("/caption", [&](const httplib::Request&, httplib::Response& res) {
        ++calls;
        res.status = 422;
        res.set_content("boom", "text/plain");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread listener([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    auto backend = external_captioner("http://127.0.0.1:" + std::to_string(port));
    try {
        generate_caption(rec, backend, dir);
        FAIL("expected BackendError");
    } catch (const BackendError& e) {
        CHECK(e.payload() == "boom");
    }
    CHECK(calls == 1);  // 4xx is not retried

    server.stop();
    listener.join();
}

TEST_CASE("external captioner bounds in-flight requests") {
    testutil::TempDir dir("cap");
    const Vocabulary vocab = Vocabulary::builtin();
    const auto rec = put_scene(dir, scene_of("red", "cube", "grid", "photo"), "img", vocab);

    std::atomic<int> active{0}, peak{0};
    httplib::Server server;
    server.Post("/caption", [&](const httplib::Request&, httplib::Response& res) {
        const int now = ++active;
        int expected = peak.load();
        while (now > expected && !peak.compare_exchange_weak(expected, now)) {
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(30));
        --active;
        res.set_content("{\"caption\": \"ok\"}", "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread listener([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    auto backend = external_captioner("http://127.0.0.1:" + std::to_string(port));
    backend.http.max_inflight = 2;
    std::vector<std::thread> callers;
    for (int i = 0; i < 8; ++i)
        callers.emplace_back([&] { generate_caption(rec, backend, dir); });
    for (auto& t : callers) t.join();
    CHECK(peak.load() <= 2);
    CHECK(peak.load() >= 1);

    server.stop();
    listener.join();
}

TEST_CASE("external captioner rejects malformed bodies") {
    testutil::TempDir dir("cap");
    const Vocabulary vocab = Vocabulary::builtin();
    const auto rec = put_scene(dir, scene_of("red", "cube", "grid", "photo"), "img", vocab);

    httplib::Server server;
    server.Post("/caption", [&](const httplib::Request&, httplib::Response& res) {
        res.set_content("not json at all", "text/plain");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread listener([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    auto backend = external_captioner("http://127.0.0.1:" + std::to_string(port));
    CHECK_THROWS_AS(generate_caption(rec, backend, dir), BackendError);

    server.stop();
    listener.join();
}
