// Copyright (C) 2026 CIRForge Contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cirforge/tokens.hpp"

namespace cirforge::core {

enum class Split { train, val, test };
enum class Source { original, synthetic };
enum class Provenance { manual, synthetic };

/// The five caption components eligible for perturbation.
enum class ComponentKind { subject, object, background, adjective, domain };

inline constexpr ComponentKind kAllKinds[] = {
    ComponentKind::subject, ComponentKind::object, ComponentKind::background,
    ComponentKind::adjective, ComponentKind::domain};

std::string to_string(Split s);
std::string to_string(Source s);
std::string to_string(Provenance p);
std::string to_string(ComponentKind k);
Split split_from_string(const std::string& s);
Source source_from_string(const std::string& s);
Provenance provenance_from_string(const std::string& s);
ComponentKind component_kind_from_string(const std::string& s);

/// One image known to a manifest. Ids are opaque strings; the uri is a path
/// resolved against the manifest root so media can relocate.
struct ImageRecord {
    std::string image_id;
    std::string uri;
    Split split = Split::train;
    Source source = Source::original;
    std::optional<std::string> sidecar;  // scene metadata, toy backend only

    friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

/// A caption with optional located component spans. Spans must be
/// non-overlapping, in bounds, and each cover at least one token.
struct Caption {
    std::string image_id;
    std::string text;
    std::map<ComponentKind, TokenSpan> components;

    std::vector<std::string> tokens() const { return tokenize(text); }

    friend bool operator==(const Caption&, const Caption&) = default;
};

/// The output of counterfactual caption generation: a single-component edit
/// of the reference caption plus the modification text describing it.
struct CaptionEdit {
    Caption reference_caption;       // c_ref
    Caption counterfactual_caption;  // c_cf
    std::string modification_text;   // t
    ComponentKind kind = ComponentKind::subject;
    TokenSpan changed_span_ref;
    TokenSpan changed_span_cf;

    std::string old_value() const;
    std::string new_value() const;

    friend bool operator==(const CaptionEdit&, const CaptionEdit&) = default;
};

/// How the generator applied the edit: attention-map injection for
/// word-for-word swaps, refinement-style injection when the span length
/// changes. Recorded so runs are auditable.
enum class InjectionMode { word_swap, refinement };

std::string to_string(InjectionMode m);
InjectionMode injection_mode_from_string(const std::string& s);

/// Derived from the edit spans: equal lengths swap word for word.
InjectionMode injection_mode_for(const CaptionEdit& edit);

/// The unit of CIR training data.
struct Triplet {
    std::string reference_image_id;
    std::string modification_text;  // t
    std::string target_image_id;
    Provenance provenance = Provenance::manual;
    std::optional<CaptionEdit> edit;  // required when provenance == synthetic
    std::optional<std::int64_t> generation_seed;
    std::optional<InjectionMode> injection;
    // Original per-pair captions when t was joined from several (FashionIQ).
    std::optional<std::vector<std::string>> source_captions;

    friend bool operator==(const Triplet&, const Triplet&) = default;
};

/// Machine-readable invariant violation. `code` is stable, `subject` names
/// the offending id or triplet, `detail` is for humans.
struct Violation {
    std::string code;
    std::string subject;
    std::string detail;

    friend bool operator==(const Violation&, const Violation&) = default;
};

/// Derived counts over a manifest; always a pure function of its contents.
struct StatsTable {
    std::size_t total_images = 0;
    std::size_t total_triplets = 0;
    std::map<Split, std::size_t> images_by_split;
    std::map<Source, std::size_t> images_by_source;
    std::map<Provenance, std::size_t> triplets_by_provenance;
    std::size_t train_images = 0;        // original images on the train split
    std::size_t test_images = 0;         // original images on the test split
    std::size_t train_triplets = 0;      // manual triplets on the train split
    std::size_t synthetic_triplets = 0;  // provenance == synthetic
    std::size_t test_triplets = 0;       // triplets on the test split

    friend bool operator==(const StatsTable&, const StatsTable&) = default;
};

}  // namespace cirforge::core
