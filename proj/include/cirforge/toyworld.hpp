// Copyright (C) 2026 CIRForge Contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cirforge/raster.hpp"
#include "cirforge/types.hpp"

namespace cirforge::captioner {

/// One toy vocabulary value and the color it renders with.
struct VocabEntry {
    std::string value;
    raster::Rgb color;

    friend bool operator==(const VocabEntry&, const VocabEntry&) = default;
};

/// The closed toy vocabulary: 8 adjectives, 10 subjects, 6 backgrounds,
/// 4 objects, 2 domains. Small enough to enumerate, large enough that
/// thousands of distinct edits exist.
struct Vocabulary {
    std::vector<VocabEntry> adjectives;
    std::vector<VocabEntry> subjects;
    std::vector<VocabEntry> backgrounds;
    std::vector<VocabEntry> objects;
    std::vector<VocabEntry> domains;

    const std::vector<VocabEntry>& slot(core::ComponentKind kind) const;
    std::vector<std::string> values(core::ComponentKind kind) const;
    bool contains(core::ComponentKind kind, const std::string& value) const;
    std::optional<raster::Rgb> color_of(core::ComponentKind kind, const std::string& value) const;

    static Vocabulary builtin();
    static Vocabulary load(const std::filesystem::path& file);
    void save(const std::filesystem::path& file) const;

    friend bool operator==(const Vocabulary&, const Vocabulary&) = default;
};

/// Deterministic stand-in for visual content: what a toy image depicts.
/// Stored as the image's sidecar file.
struct SceneMeta {
    std::string subject;
    std::optional<std::string> object;
    std::string adjective;
    std::string background;
    std::string domain;

    std::optional<std::string> component(core::ComponentKind kind) const;
    void set_component(core::ComponentKind kind, const std::string& value);

    friend bool operator==(const SceneMeta&, const SceneMeta&) = default;
};

std::string scene_to_json(const SceneMeta& scene);
SceneMeta scene_from_json(const std::string& text);
void save_scene(const SceneMeta& scene, const std::filesystem::path& file);
SceneMeta load_scene(const std::filesystem::path& file);

/// Caption template:
///   a {domain} of a {adjective} {subject}[ with a {object}] on a {background} background
/// Every component is locatable; spans cover the slot values exactly.
core::Caption caption_for_scene(const SceneMeta& scene, const std::string& image_id);

/// Enumerates every scene expressible in the vocabulary (object absent
/// counts as one choice).
std::vector<SceneMeta> all_scenes(const Vocabulary& vocab);

inline constexpr std::uint32_t kToyImageSize = 64;

/// 64x64 render: domain as a 2px frame, background fill, subject as a
/// centered block in the adjective's color with an inner block in the
/// subject's color, object as a corner block. Pure function of the scene.
raster::Raster render_scene(const SceneMeta& scene, const Vocabulary& vocab);

/// Pixel mask (size * size) of the region a component edit may touch.
/// Geometry is value-independent, so the mask is identical before and after
/// an edit; the background region absorbs the object corner when the scene
/// has no object.
std::vector<bool> component_region(const SceneMeta& scene, core::ComponentKind kind);

}  // namespace cirforge::captioner
