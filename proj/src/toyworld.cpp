// Copyright (C) 2026 CIRForge Contributors
// SPDX-License-Identifier: Apache-2.0

#include "cirforge/toyworld.hpp"

#include <fstream>
#include <sstream>

#include "cirforge/errors.hpp"
#include "json.hpp"

namespace cirforge::captioner {

using core::ComponentKind;
using ordered_json = nlohmann::ordered_json;

const std::vector<VocabEntry>& Vocabulary::slot(ComponentKind kind) const {
    switch (kind) {
        case ComponentKind::subject: return subjects;
        case ComponentKind::object: return objects;
        case ComponentKind::background: return backgrounds;
        case ComponentKind::adjective: return adjectives;
        case ComponentKind::domain: return domains;
    }
    return subjects;
}

std::vector<std::string> Vocabulary::values(ComponentKind kind) const {
    std::vector<std::string> out;
    for (const auto& entry : slot(kind)) out.push_back(entry.value);
    return out;
}

bool Vocabulary::contains(ComponentKind kind, const std::string& value) const {
    for (const auto& entry : slot(kind))
        if (entry.value == value) return true;
    return false;
}

std::optional<raster::Rgb> Vocabulary::color_of(ComponentKind kind,
                                                const std::string& value) const {
    for (const auto& entry : slot(kind))
        if (entry.value == value) return entry.color;
    return std::nullopt;
}

Vocabulary Vocabulary::builtin() {
    Vocabulary v;
    v.adjectives = {{"white", {240, 240, 240}}, {"red", {200, 30, 30}},
                    {"blue", {30, 60, 200}},    {"green", {30, 160, 60}},
                    {"black", {15, 15, 15}},    {"yellow", {230, 210, 40}},
                    {"purple", {130, 40, 170}}, {"orange", {235, 130, 20}}};
    v.subjects = {{"sports car", {60, 60, 70}}, {"cube", {90, 90, 100}},
                  {"dog", {120, 90, 60}},       {"cat", {150, 120, 90}},
                  {"house", {100, 70, 50}},     {"tree", {50, 100, 50}},
                  {"boat", {70, 90, 120}},      {"bicycle", {110, 110, 120}},
                  {"chair", {140, 100, 70}},    {"bird", {90, 120, 140}}};
    v.backgrounds = {{"mountains", {110, 120, 130}}, {"buildings", {90, 95, 105}},
                     {"grid", {200, 200, 210}},      {"beach", {220, 200, 160}},
                     {"forest", {40, 90, 45}},       {"desert", {210, 180, 120}}};
    v.objects = {{"ball", {250, 90, 90}},
                 {"hat", {80, 50, 120}},
                 {"flag", {40, 140, 200}},
                 {"lamp", {240, 220, 130}}};
    v.domains = {{"photo", {20, 20, 25}}, {"painting", {120, 85, 40}}};
    return v;
}

namespace {

ordered_json slot_to_json(const std::vector<VocabEntry>& entries) {
    ordered_json arr = ordered_json::array();
    for (const auto& e : entries) {
        ordered_json j;
        j["value"] = e.value;
        j["color"] = ordered_json::array({e.color[0], e.color[1], e.color[2]});
        arr.push_back(j);
    }
    return arr;
}

std::vector<VocabEntry> slot_from_json(const nlohmann::json& arr) {
    std::vector<VocabEntry> out;
    for (const auto& j : arr) {
        VocabEntry e;
        e.value = j.at("value").get<std::string>();
        const auto& c = j.at("color");
        e.color = {c[0].get<std::uint8_t>(), c[1].get<std::uint8_t>(), c[2].get<std::uint8_t>()};
        out.push_back(e);
    }
    return out;
}

}  // namespace

Vocabulary Vocabulary::load(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw IoError("cannot open vocabulary file " + file.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("bad_json", "vocabulary file is not valid JSON: " + std::string(e.what()));
    }
    Vocabulary v;
    v.adjectives = slot_from_json(j.at("adjectives"));
    v.subjects = slot_from_json(j.at("subjects"));
    v.backgrounds = slot_from_json(j.at("backgrounds"));
    v.objects = slot_from_json(j.at("objects"));
    v.domains = slot_from_json(j.at("domains"));
    return v;
}

void Vocabulary::save(const std::filesystem::path& file) const {
    ordered_json j;
    j["adjectives"] = slot_to_json(adjectives);
    j["subjects"] = slot_to_json(subjects);
    j["backgrounds"] = slot_to_json(backgrounds);
    j["objects"] = slot_to_json(objects);
    j["domains"] = slot_to_json(domains);
    std::ofstream out(file, std::ios::binary);
    if (!out) throw IoError("cannot open " + file.string() + " for writing");
    out << j.dump(2) << "\n";
}

std::optional<std::string> SceneMeta::component(ComponentKind kind) const {
    switch (kind) {
        case ComponentKind::subject: return subject;
        case ComponentKind::object: return object;
        case ComponentKind::background: return background;
        case ComponentKind::adjective: return adjective;
        case ComponentKind::domain: return domain;
    }
    return std::nullopt;
}

void SceneMeta::set_component(ComponentKind kind, const std::string& value) {
    switch (kind) {
        case ComponentKind::subject: subject = value; return;
        case ComponentKind::object: object = value; return;
        case ComponentKind::background: background = value; return;
        case ComponentKind::adjective: adjective = value; return;
        case ComponentKind::domain: domain = value; return;
    }
}

std::string scene_to_json(const SceneMeta& scene) {
    ordered_json j;
    j["subject"] = scene.subject;
    if (scene.object) j["object"] = *scene.object;
    j["adjective"] = scene.adjective;
    j["background"] = scene.background;
    j["domain"] = scene.domain;
    return j.dump(2) + "\n";
}

SceneMeta scene_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("bad_json", "scene sidecar is not valid JSON: " + std::string(e.what()));
    }
    SceneMeta scene;
    scene.subject = j.at("subject").get<std::string>();
    if (j.contains("object")) scene.object = j.at("object").get<std::string>();
    scene.adjective = j.at("adjective").get<std::string>();
    scene.background = j.at("background").get<std::string>();
    scene.domain = j.at("domain").get<std::string>();
    return scene;
}

void save_scene(const SceneMeta& scene, const std::filesystem::path& file) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw IoError("cannot open " + file.string() + " for writing");
    out << scene_to_json(scene);
}

SceneMeta load_scene(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw IoError("cannot open scene sidecar " + file.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return scene_from_json(buffer.str());
}

core::Caption caption_for_scene(const SceneMeta& scene, const std::string& image_id) {
    core::Caption caption;
    caption.image_id = image_id;

    std::vector<std::string> tokens = {"a", scene.domain, "of", "a", scene.adjective};
    caption.components[ComponentKind::domain] = {1, 2};
    caption.components[ComponentKind::adjective] = {4, 5};

    const auto subject_tokens = core::tokenize(scene.subject);
    caption.components[ComponentKind::subject] = {tokens.size(),
                                                  tokens.size() + subject_tokens.size()};
    tokens.insert(tokens.end(), subject_tokens.begin(), subject_tokens.end());

    if (scene.object) {
        tokens.push_back("with");
        tokens.push_back("a");
        const auto object_tokens = core::tokenize(*scene.object);
        caption.components[ComponentKind::object] = {tokens.size(),
                                                     tokens.size() + object_tokens.size()};
        tokens.insert(tokens.end(), object_tokens.begin(), object_tokens.end());
    }

    tokens.push_back("on");
    tokens.push_back("a");
    const auto background_tokens = core::tokenize(scene.background);
    caption.components[ComponentKind::background] = {tokens.size(),
                                                     tokens.size() + background_tokens.size()};
    tokens.insert(tokens.end(), background_tokens.begin(), background_tokens.end());
    tokens.push_back("background");

    caption.text = core::join_tokens(tokens);
    return caption;
}

std::vector<SceneMeta> all_scenes(const Vocabulary& vocab) {
    std::vector<SceneMeta> out;
    std::vector<std::optional<std::string>> object_choices = {std::nullopt};
    for (const auto& o : vocab.objects) object_choices.emplace_back(o.value);
    for (const auto& d : vocab.domains)
        for (const auto& a : vocab.adjectives)
            for (const auto& s : vocab.subjects)
                for (const auto& b : vocab.backgrounds)
                    for (const auto& o : object_choices) {
                        SceneMeta scene;
                        scene.domain = d.value;
                        scene.adjective = a.value;
                        scene.subject = s.value;
                        scene.background = b.value;
                        scene.object = o;
                        out.push_back(std::move(scene));
                    }
    return out;
}

namespace {

constexpr std::uint32_t kFrame = 2;
constexpr std::uint32_t kBlock0 = 20, kBlock1 = 44;    // centered subject block
constexpr std::uint32_t kInner0 = 28, kInner1 = 36;    // subject identity block
constexpr std::uint32_t kCorner0 = 4, kCorner1 = 12;   // object block

raster::Rgb color_or_throw(const Vocabulary& vocab, ComponentKind kind, const std::string& value) {
    const auto color = vocab.color_of(kind, value);
    if (!color)
        throw ConfigError("scene value \"" + value + "\" is not in the " + core::to_string(kind) +
                          " vocabulary");
    return *color;
}

enum class Zone { frame, adjective, subject, object, background };

Zone zone_at(std::uint32_t x, std::uint32_t y, bool has_object) {
    const std::uint32_t size = kToyImageSize;
    if (x < kFrame || y < kFrame || x >= size - kFrame || y >= size - kFrame) return Zone::frame;
    if (x >= kInner0 && x < kInner1 && y >= kInner0 && y < kInner1) return Zone::subject;
    if (x >= kBlock0 && x < kBlock1 && y >= kBlock0 && y < kBlock1) return Zone::adjective;
    if (has_object && x >= kCorner0 && x < kCorner1 && y >= kCorner0 && y < kCorner1)
        return Zone::object;
    return Zone::background;
}

}  // namespace

raster::Raster render_scene(const SceneMeta& scene, const Vocabulary& vocab) {
    const raster::Rgb domain_color = color_or_throw(vocab, ComponentKind::domain, scene.domain);
    const raster::Rgb background_color =
        color_or_throw(vocab, ComponentKind::background, scene.background);
    const raster::Rgb adjective_color =
        color_or_throw(vocab, ComponentKind::adjective, scene.adjective);
    const raster::Rgb subject_color = color_or_throw(vocab, ComponentKind::subject, scene.subject);
    raster::Rgb object_color{};
    if (scene.object)
        object_color = color_or_throw(vocab, ComponentKind::object, *scene.object);

    raster::Raster img(kToyImageSize, kToyImageSize);
    for (std::uint32_t y = 0; y < kToyImageSize; ++y) {
        for (std::uint32_t x = 0; x < kToyImageSize; ++x) {
            switch (zone_at(x, y, scene.object.has_value())) {
                case Zone::frame: img.set(x, y, domain_color); break;
                case Zone::adjective: img.set(x, y, adjective_color); break;
                case Zone::subject: img.set(x, y, subject_color); break;
                case Zone::object: img.set(x, y, object_color); break;
                case Zone::background: img.set(x, y, background_color); break;
            }
        }
    }
    return img;
}

std::vector<bool> component_region(const SceneMeta& scene, ComponentKind kind) {
    std::vector<bool> mask(static_cast<std::size_t>(kToyImageSize) * kToyImageSize, false);
    const bool has_object = scene.object.has_value();
    for (std::uint32_t y = 0; y < kToyImageSize; ++y) {
        for (std::uint32_t x = 0; x < kToyImageSize; ++x) {
            const Zone zone = zone_at(x, y, has_object);
            const bool in_region = (kind == ComponentKind::domain && zone == Zone::frame) ||
                                   (kind == ComponentKind::adjective && zone == Zone::adjective) ||
                                   (kind == ComponentKind::subject && zone == Zone::subject) ||
                                   (kind == ComponentKind::object && zone == Zone::object) ||
                                   (kind == ComponentKind::background && zone == Zone::background);
            if (in_region) mask[static_cast<std::size_t>(y) * kToyImageSize + x] = true;
        }
    }
    return mask;
}

}  // namespace cirforge::captioner
