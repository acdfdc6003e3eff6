// Copyright (C) 2026 CIRForge Contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cirforge/types.hpp"
#include "json.hpp"

namespace cirforge::core {

/// Images plus triplets with split bookkeeping. Value object: mutation
/// happens only by whole-manifest replacement.
struct DatasetManifest {
    std::string name;
    std::string root;  // media paths resolve relative to this
    std::vector<ImageRecord> images;
    std::vector<Triplet> triplets;

    const ImageRecord* find_image(const std::string& image_id) const;
    std::filesystem::path resolve(const ImageRecord& record) const;

    friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

/// Counts images per split/source and triplets per provenance. A triplet
/// belongs to the split of its reference image.
/// Throws IntegrityError naming the first triplet with a dangling endpoint.
StatsTable compute_stats(const DatasetManifest& manifest);

/// Returns every invariant violation; empty means well-formed. Codes:
///   duplicate_image_id, dangling_reference, self_pair, missing_edit,
///   modification_mismatch, identity_edit, multi_span, invalid_span,
///   missing_mention, empty_modification, synthetic_image_without_provenance
std::vector<Violation> validate_manifest(const DatasetManifest& manifest);

/// Violations for a caption's component spans (bounds, overlap, emptiness).
std::vector<Violation> validate_caption_spans(const Caption& caption, const std::string& subject);

/// Canonical JSON file: top-level keys name, root, images, triplets.
/// Saving is byte-deterministic (fixed key order, LF, UTF-8).
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& file);
DatasetManifest load_manifest(const std::filesystem::path& file);

std::string manifest_to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(const std::string& text);

// Element-level JSON, shared by the manifest format and stage artifacts.
nlohmann::ordered_json caption_to_json(const Caption& caption);
Caption caption_from_json(const nlohmann::json& j);
nlohmann::ordered_json edit_to_json(const CaptionEdit& edit);
CaptionEdit edit_from_json(const nlohmann::json& j);

/// Render of a StatsTable as aligned text, one count per line.
std::string render_stats(const StatsTable& stats);

}  // namespace cirforge::core
