// Copyright (C) 2026 CIRForge Contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "cirforge/captioner.hpp"
#include "cirforge/types.hpp"

namespace cirforge::perturber {

enum class PerturberKind { external_llm, rule_based };

/// Weights for choosing which component to perturb. A kind with weight 0 is
/// never selected. Defaults to uniform over the five kinds.
using KindWeights = std::map<core::ComponentKind, double>;

KindWeights uniform_kind_weights();

/// Caption perturbation source: a served LLM or the deterministic
/// vocabulary-based rule engine.
struct PerturberBackend {
    PerturberKind kind = PerturberKind::rule_based;
    std::optional<std::string> endpoint;  // external only
    captioner::Vocabulary vocabulary;     // rule_based only
    KindWeights kind_weights = uniform_kind_weights();
    captioner::HttpOptions http;
};

PerturberBackend rule_based_perturber(captioner::Vocabulary vocabulary =
                                          captioner::Vocabulary::builtin());
PerturberBackend external_perturber(std::string endpoint, captioner::HttpOptions http = {});

/// Versioned prompt asset for the external adapter (instruction plus
/// few-shot examples); checked in under assets/.
extern const char* const kPromptVersion;
std::string prompt_text();

/// Locates component spans in a caption: exact toy-template inversion first,
/// then a part-of-speech-free heuristic. Kinds that cannot be located are
/// simply absent; a failed parse never corrupts anything.
core::Caption parse_components(const core::Caption& caption);

/// Edits exactly one component of the caption. The replacement differs from
/// the original; modification text comes from the template
/// "replace the {old} with {new}". Throws UnperturbableError when the kind
/// has no located span and ParseError when an external response is invalid.
core::CaptionEdit perturb_caption(const core::Caption& caption, core::ComponentKind kind,
                                  std::uint64_t seed, const PerturberBackend& backend);

/// Rule-based edit with a caller-chosen replacement value; used by callers
/// that walk the edit space deterministically.
core::CaptionEdit perturb_caption_with_value(const core::Caption& caption,
                                             core::ComponentKind kind,
                                             const std::string& replacement);

/// Parses the external LLM wire format
///   {"counterfactual": ..., "modification": ..., "kind": ...}
/// computing spans by token-level diff against the reference. Error codes:
/// bad_json, missing_field, bad_kind, identity_edit, multi_span,
/// empty_modification, missing_mention.
core::CaptionEdit parse_llm_edit_response(const std::string& raw, const core::Caption& reference);

/// Empty iff the edit is a valid single-span, non-identity edit with a
/// replacement of at most 3 tokens and non-empty modification text.
std::vector<core::Violation> validate_edit(const core::CaptionEdit& edit);

/// Draws a kind according to the weights. Weight-zero kinds are never
/// returned. Throws ConfigError when the weights sum to zero.
core::ComponentKind sample_kind(const KindWeights& weights, std::mt19937_64& rng);

/// Per-synthesis-run registry enforcing that (reference image, kind,
/// replacement) is used at most once. Thread safe.
class DedupRegistry {
public:
    /// Claims the combination; false if it was already taken.
    bool try_claim(const std::string& reference_image_id, core::ComponentKind kind,
                   const std::string& replacement);
    bool contains(const std::string& reference_image_id, core::ComponentKind kind,
                  const std::string& replacement) const;
    std::size_t size() const;

private:
    mutable std::mutex mutex_;
    std::set<std::string> keys_;
};

}  // namespace cirforge::perturber
