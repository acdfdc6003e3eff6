// Copyright (C) 2026 CIRForge Contributors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "cirforge/perturber.hpp"

#include <fstream>
#include <set>
#include <thread>

#include "cirforge/errors.hpp"
#include "doctest.h"
#include "httplib.h"
#include "json.hpp"
#include "test_util.hpp"

using namespace cirforge;
using namespace cirforge::perturber;
using core::Caption;
using core::CaptionEdit;
using core::ComponentKind;
using core::TokenSpan;

namespace {

const char* kCarCaption =
    "a photo of a white sports car driving down a road with mountains in the background";

Caption caption_of(const std::string& text, const std::string& id = "img") {
    return Caption{id, text, {}};
}

/// Independent re-statement of the draw function: FNV-1a over the 8
/// little-endian seed bytes, then the caption text.
std::uint64_t oracle_hash(std::uint64_t seed, const std::string& text) {
    std::uint64_t h = 14695981039346656037ULL;
    auto mix = [&h](unsigned char c) {
        h ^= c;
        h *= 1099511628211ULL;
    };
    for (int i = 0; i < 8; ++i) mix(static_cast<unsigned char>(seed >> (8 * i)));
    for (unsigned char c : text) mix(c);
    return h;
}

std::string span_text(const Caption& caption, const TokenSpan& span) {
    const auto tokens = core::tokenize(caption.text);
    std::string out;
    for (std::size_t i = span.start; i < span.end; ++i) {
        if (!out.empty()) out += ' ';
        out += tokens[i];
    }
    return out;
}

}  // namespace

TEST_CASE("parse_components locates the free-form example sentence") {
    const Caption parsed = parse_components(caption_of(kCarCaption));
    REQUIRE(parsed.components.count(ComponentKind::domain));
    REQUIRE(parsed.components.count(ComponentKind::adjective));
    REQUIRE(parsed.components.count(ComponentKind::subject));
    REQUIRE(parsed.components.count(ComponentKind::background));
    CHECK(span_text(parsed, parsed.components.at(ComponentKind::domain)) == "photo");
    CHECK(span_text(parsed, parsed.components.at(ComponentKind::adjective)) == "white");
    CHECK(span_text(parsed, parsed.components.at(ComponentKind::subject)) == "sports car");
    CHECK(span_text(parsed, parsed.components.at(ComponentKind::background)) == "mountains");

    // Span positions located by token search, independently of the parser.
    const auto tokens = core::tokenize(kCarCaption);
    const auto find = [&](const std::string& word) -> std::size_t {
        for (std::size_t i = 0; i < tokens.size(); ++i)
            if (tokens[i] == word) return i;
        return tokens.size();
    };
    CHECK(parsed.components.at(ComponentKind::domain).start == find("photo"));
    CHECK(parsed.components.at(ComponentKind::adjective).start == find("white"));
    CHECK(parsed.components.at(ComponentKind::subject).start == find("sports"));
    CHECK(parsed.components.at(ComponentKind::background).start == find("mountains"));
}

TEST_CASE("parse_components inverts the toy template exactly") {
    const captioner::Vocabulary vocab = captioner::Vocabulary::builtin();
    const auto scenes = captioner::all_scenes(vocab);
    for (std::size_t i = 0; i < scenes.size(); i += 311) {
        const Caption expected = captioner::caption_for_scene(scenes[i], "x");
        const Caption parsed = parse_components(caption_of(expected.text, "x"));
        CHECK(parsed.components == expected.components);
    }
}

TEST_CASE("parse_components returns an empty map for degenerate input") {
    CHECK(parse_components(caption_of("hello")).components.empty());
    CHECK(parse_components(caption_of("")).components.empty());
}

TEST_CASE("adjective perturbation reproduces the white-to-red example") {
    const auto backend = rule_based_perturber();
    const Caption caption = caption_of(kCarCaption);
    // The draw is seed-dependent; find a seed that lands on "red", then pin
    // the whole edit.
    std::optional<CaptionEdit> hit;
    for (std::uint64_t seed = 0; seed < 64 && !hit; ++seed) {
        const CaptionEdit edit = perturb_caption(caption, ComponentKind::adjective, seed, backend);
        if (edit.new_value() == "red") hit = edit;
    }
    REQUIRE(hit.has_value());
    CHECK(hit->old_value() == "white");
    CHECK(hit->modification_text == "replace the white with red");
    CHECK(hit->counterfactual_caption.text ==
          "a photo of a red sports car driving down a road with mountains in the background");
    CHECK(validate_edit(*hit).empty());
}

TEST_CASE("background perturbation reproduces mountains-to-buildings") {
    const auto backend = rule_based_perturber();
    const Caption caption = caption_of(kCarCaption);
    std::optional<CaptionEdit> hit;
    for (std::uint64_t seed = 0; seed < 64 && !hit; ++seed) {
        const CaptionEdit edit = perturb_caption(caption, ComponentKind::background, seed, backend);
        if (edit.new_value() == "buildings") hit = edit;
    }
    REQUIRE(hit.has_value());
    CHECK(hit->old_value() == "mountains");
    CHECK(hit->modification_text == "replace the mountains with buildings");
    CHECK(hit->counterfactual_caption.text ==
          "a photo of a white sports car driving down a road with buildings in the background");
}

TEST_CASE("rule-based replacement draw matches the hash oracle") {
    const auto backend = rule_based_perturber();
    const Caption raw = caption_of("a photo of a white cube on a grid background");
    const Caption parsed = parse_components(raw);
    std::vector<std::string> candidates;
    for (const auto& v : backend.vocabulary.values(ComponentKind::adjective))
        if (v != "white") candidates.push_back(v);
    REQUIRE(candidates.size() == 7);  // V - 1, skipping the original

    for (std::uint64_t seed : {0ULL, 1ULL, 17ULL, 123456789ULL, 0xFFFFFFFFFFFFULL}) {
        const CaptionEdit edit = perturb_caption(parsed, ComponentKind::adjective, seed, backend);
        const std::string expected = candidates[oracle_hash(seed, parsed.text) % candidates.size()];
        CHECK(edit.new_value() == expected);
        CHECK(edit.new_value() != "white");
    }
}

TEST_CASE("rule-based perturber is deterministic and covers the full vocabulary") {
    const auto backend = rule_based_perturber();
    const Caption caption = parse_components(caption_of("a photo of a white cube on a grid background"));

    const CaptionEdit once = perturb_caption(caption, ComponentKind::subject, 42, backend);
    const CaptionEdit twice = perturb_caption(caption, ComponentKind::subject, 42, backend);
    CHECK(once == twice);

    // Distinct seeds reach every non-identity replacement.
    std::set<std::string> seen;
    for (std::uint64_t seed = 0; seed < 600; ++seed)
        seen.insert(perturb_caption(caption, ComponentKind::subject, seed, backend).new_value());
    std::set<std::string> expected;
    for (const auto& v : backend.vocabulary.values(ComponentKind::subject))
        if (v != "cube") expected.insert(v);
    CHECK(seen == expected);
}

TEST_CASE("unlocatable kinds are unperturbable") {
    const auto backend = rule_based_perturber();
    const Caption caption = parse_components(caption_of("a photo of a white cube on a grid background"));
    CHECK_THROWS_AS(perturb_caption(caption, ComponentKind::object, 0, backend),
                    UnperturbableError);
    CHECK_THROWS_AS(perturb_caption(caption_of("hello"), ComponentKind::subject, 0, backend),
                    UnperturbableError);
}

TEST_CASE("edits keep all tokens outside the changed span") {
    const auto backend = rule_based_perturber();
    const captioner::Vocabulary vocab = captioner::Vocabulary::builtin();
    const auto scenes = captioner::all_scenes(vocab);
    for (std::size_t i = 0; i < scenes.size(); i += 157) {
        const Caption caption = captioner::caption_for_scene(scenes[i], "x");
        for (ComponentKind kind : core::kAllKinds) {
            if (!caption.components.count(kind)) continue;
            const CaptionEdit edit = perturb_caption(caption, kind, i, backend);
            CHECK(validate_edit(edit).empty());
            // Removing the changed spans leaves identical token sequences.
            auto ref = core::tokenize(edit.reference_caption.text);
            auto cf = core::tokenize(edit.counterfactual_caption.text);
            ref.erase(ref.begin() + edit.changed_span_ref.start,
                      ref.begin() + edit.changed_span_ref.end);
            cf.erase(cf.begin() + edit.changed_span_cf.start,
                     cf.begin() + edit.changed_span_cf.end);
            CHECK(ref == cf);
        }
    }
}

TEST_CASE("multi-token subjects produce refinement-length edits both ways") {
    const auto backend = rule_based_perturber();
    const Caption caption =
        parse_components(caption_of("a photo of a white sports car on a mountains background"));
    // "sports car" (2 tokens) -> single-token subject shrinks the span.
    const CaptionEdit edit = perturb_caption_with_value(caption, ComponentKind::subject, "dog");
    CHECK(edit.changed_span_ref.length() == 2);
    CHECK(edit.changed_span_cf.length() == 1);
    CHECK(edit.counterfactual_caption.text == "a photo of a white dog on a mountains background");
    CHECK(core::injection_mode_for(edit) == core::InjectionMode::refinement);
    // And back: "cube" -> "sports car" grows it.
    const Caption small = parse_components(caption_of("a photo of a red cube on a grid background"));
    const CaptionEdit grow = perturb_caption_with_value(small, ComponentKind::subject, "sports car");
    CHECK(grow.changed_span_cf.length() == 2);
    CHECK(validate_edit(grow).empty());
}

TEST_CASE("parse_llm_edit_response accepts a well-formed reply") {
    const Caption reference = caption_of(kCarCaption);
    // Construct the raw response by applying a known edit.
    nlohmann::json raw;
    raw["counterfactual"] =
        "a photo of a red sports car driving down a road with mountains in the background";
    raw["modification"] = "replace the white with red";
    raw["kind"] = "adjective";
    const CaptionEdit edit = parse_llm_edit_response(raw.dump(), reference);
    CHECK(edit.kind == ComponentKind::adjective);
    CHECK(edit.old_value() == "white");
    CHECK(edit.new_value() == "red");
    CHECK(edit.changed_span_ref == TokenSpan{4, 5});
    CHECK(validate_edit(edit).empty());
}

TEST_CASE("parse_llm_edit_response rejects malformed replies with stable codes") {
    const Caption reference = caption_of(kCarCaption);

    auto code_of = [&](const std::string& raw) {
        try {
            parse_llm_edit_response(raw, reference);
            return std::string("no_error");
        } catch (const ParseError& e) {
            return e.code();
        }
    };

    CHECK(code_of("this is not json") == "bad_json");
    CHECK(code_of(R"({"counterfactual": "x", "kind": "adjective"})") == "missing_field");
    nlohmann::json identity;
    identity["counterfactual"] = kCarCaption;
    identity["modification"] = "nothing";
    identity["kind"] = "adjective";
    CHECK(code_of(identity.dump()) == "identity_edit");

    nlohmann::json multi;
    multi["counterfactual"] =
        "a photo of a red sports car driving down a road with buildings in the background";
    multi["modification"] = "replace the white with red and mountains with buildings";
    multi["kind"] = "adjective";
    CHECK(code_of(multi.dump()) == "multi_span");

    nlohmann::json vanish;
    vanish["counterfactual"] = "a photo of a sports car driving down a road with mountains in the background";
    vanish["modification"] = "remove the white";
    vanish["kind"] = "adjective";
    CHECK(code_of(vanish.dump()) == "multi_span");  // pure deletion is not a replacement

    nlohmann::json silent;
    silent["counterfactual"] =
        "a photo of a red sports car driving down a road with mountains in the background";
    silent["modification"] = "now it is different";
    silent["kind"] = "adjective";
    CHECK(code_of(silent.dump()) == "missing_mention");
}

TEST_CASE("validate_edit enforces exactly the four edit rules") {
    CaptionEdit good;
    good.reference_caption = caption_of("a photo of a white cube on a grid background");
    good.counterfactual_caption = caption_of("a photo of a red cube on a grid background");
    good.modification_text = "replace the white with red";
    good.kind = ComponentKind::adjective;
    good.changed_span_ref = {4, 5};
    good.changed_span_cf = {4, 5};
    CHECK(validate_edit(good).empty());

    SUBCASE("multi-span change") {
        CaptionEdit bad = good;
        bad.counterfactual_caption = caption_of("a painting of a red cube on a grid background");
        const auto violations = validate_edit(bad);
        REQUIRE(violations.size() == 1);
        CHECK(violations[0].code == "multi_span");
    }
    SUBCASE("identity edit") {
        CaptionEdit bad = good;
        bad.counterfactual_caption = bad.reference_caption;
        bool found = false;
        for (const auto& v : validate_edit(bad)) found |= v.code == "identity_edit";
        CHECK(found);
    }
    SUBCASE("replacement longer than three tokens") {
        const Caption parsed = parse_components(good.reference_caption);
        const CaptionEdit bad =
            perturb_caption_with_value(parsed, ComponentKind::subject, "very long and strange thing");
        bool found = false;
        for (const auto& v : validate_edit(bad)) found |= v.code == "span_too_long";
        CHECK(found);
    }
    SUBCASE("empty modification text") {
        CaptionEdit bad = good;
        bad.modification_text.clear();
        bool found = false;
        for (const auto& v : validate_edit(bad)) found |= v.code == "empty_modification";
        CHECK(found);
    }
}

TEST_CASE("kind sampling honours the weights") {
    std::mt19937_64 rng(99);
    KindWeights weights = uniform_kind_weights();
    weights[ComponentKind::object] = 0.0;
    weights[ComponentKind::domain] = 3.0;

    std::map<ComponentKind, int> counts;
    for (int i = 0; i < 10000; ++i) counts[sample_kind(weights, rng)]++;

    CHECK(counts[ComponentKind::object] == 0);  // weight zero: never drawn
    // total weight 6: domain expects 1/2, the three unit kinds 1/6 each.
    CHECK(counts[ComponentKind::domain] > 4600);
    CHECK(counts[ComponentKind::domain] < 5400);
    for (ComponentKind k : {ComponentKind::subject, ComponentKind::background,
                            ComponentKind::adjective}) {
        CHECK(counts[k] > 1300);
        CHECK(counts[k] < 2100);
    }

    KindWeights zeros;
    for (ComponentKind k : core::kAllKinds) zeros[k] = 0.0;
    CHECK_THROWS_AS(sample_kind(zeros, rng), ConfigError);
}

TEST_CASE("dedup registry admits each combination once, even concurrently") {
    DedupRegistry registry;
    CHECK(registry.try_claim("img", ComponentKind::adjective, "red"));
    CHECK_FALSE(registry.try_claim("img", ComponentKind::adjective, "red"));
    CHECK(registry.try_claim("img", ComponentKind::adjective, "blue"));
    CHECK(registry.try_claim("img2", ComponentKind::adjective, "red"));
    CHECK(registry.size() == 3);

    DedupRegistry contended;
    std::atomic<int> wins{0};
#pragma omp parallel for
    for (int i = 0; i < 64; ++i) {
        if (contended.try_claim("x", ComponentKind::subject, "dog")) ++wins;
    }
    CHECK(wins == 1);
}

TEST_CASE("prompt asset matches the adapter's embedded prompt") {
    std::ifstream in(testutil::assets_dir() / "perturber_prompt_v1.txt", std::ios::binary);
    REQUIRE(in.good());
    std::stringstream buffer;
    buffer << in.rdbuf();
    CHECK(buffer.str() == prompt_text());
    CHECK(std::string(kPromptVersion) == "v1");
}

TEST_CASE("external perturber round-trips over the wire protocol") {
    httplib::Server server;
    std::string requested_kind;
    server.Post("/perturb", [&](const httplib::Request& req, httplib::Response& res) {
        requested_kind = nlohmann::json::parse(req.body).at("kind");
        // Always replies with an adjective edit, whatever was asked.
        nlohmann::json reply;
        reply["counterfactual"] = "a photo of a red cube on a grid background";
        reply["modification"] = "replace the white with red";
        reply["kind"] = "adjective";
        res.set_content(reply.dump(), "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread listener([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    const auto backend = external_perturber("http://127.0.0.1:" + std::to_string(port));
    const Caption caption =
        parse_components(caption_of("a photo of a white cube on a grid background"));
    const CaptionEdit edit = perturb_caption(caption, ComponentKind::adjective, 0, backend);
    CHECK(requested_kind == "adjective");
    CHECK(edit.new_value() == "red");
    CHECK(validate_edit(edit).empty());

    // Asking for one kind but getting another back is rejected.
    CHECK_THROWS_AS(perturb_caption(caption, ComponentKind::background, 0, backend), ParseError);

    server.stop();
    listener.join();
}
