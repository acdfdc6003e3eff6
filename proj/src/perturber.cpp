// Copyright (C) 2026 CIRForge Contributors
// SPDX-License-Identifier: Apache-2.0

#include "cirforge/perturber.hpp"

#include <algorithm>

#include "cirforge/errors.hpp"
#include "cirforge/hash.hpp"
#include "http_util.hpp"
#include "json.hpp"

namespace cirforge::perturber {

using core::Caption;
using core::CaptionEdit;
using core::ComponentKind;
using core::TokenSpan;

KindWeights uniform_kind_weights() {
    KindWeights w;
    for (ComponentKind k : core::kAllKinds) w[k] = 1.0;
    return w;
}

PerturberBackend rule_based_perturber(captioner::Vocabulary vocabulary) {
    PerturberBackend backend;
    backend.kind = PerturberKind::rule_based;
    backend.vocabulary = std::move(vocabulary);
    return backend;
}

PerturberBackend external_perturber(std::string endpoint, captioner::HttpOptions http) {
    PerturberBackend backend;
    backend.kind = PerturberKind::external_llm;
    backend.endpoint = std::move(endpoint);
    backend.http = http;
    return backend;
}

const char* const kPromptVersion = "v1";

std::string prompt_text() {
    return
        "You rewrite image captions. Change exactly one component of the input\n"
        "caption: its subject, object, background, adjective, or domain. Keep\n"
        "every other word unchanged. Reply with JSON holding three fields:\n"
        "  counterfactual: the caption after the change\n"
        "  modification: an instruction naming the removed and inserted values\n"
        "  kind: which component was changed\n"
        "\n"
        "Example 1\n"
        "caption: a photo of a white sports car on a mountains background\n"
        "kind: adjective\n"
        "reply: {\"counterfactual\": \"a photo of a red sports car on a mountains background\",\n"
        "\"modification\": \"replace the white with red\", \"kind\": \"adjective\"}\n"
        "\n"
        "Example 2\n"
        "caption: a painting of a green tree on a beach background\n"
        "kind: background\n"
        "reply: {\"counterfactual\": \"a painting of a green tree on a desert background\",\n"
        "\"modification\": \"replace the beach with desert\", \"kind\": \"background\"}\n";
}

namespace {

const std::set<std::string>& articles() {
    static const std::set<std::string> set = {"a", "an", "the"};
    return set;
}

bool is_phrase_stopper(const std::string& token) {
    static const std::set<std::string> stoppers = {"a",   "an", "the",  "in",    "on",   "with",
                                                   "of",  "at", "by",   "to",    "down", "up",
                                                   "and", "or", "over", "under", "near"};
    if (stoppers.count(token)) return true;
    return token.size() > 4 && token.ends_with("ing");
}

/// Exact inversion of the toy template. Returns false when the caption does
/// not have that shape.
bool match_toy_template(const std::vector<std::string>& tokens,
                        std::map<ComponentKind, TokenSpan>& spans) {
    const std::size_t n = tokens.size();
    if (n < 8) return false;
    if (tokens[0] != "a" || tokens[2] != "of" || tokens[3] != "a") return false;
    if (tokens[n - 1] != "background") return false;

    // Rightmost "on a" whose tail is the background phrase.
    std::size_t on = n;
    for (std::size_t i = n - 1; i-- > 4;) {
        if (tokens[i] == "on" && i + 1 < n && tokens[i + 1] == "a") {
            on = i;
            break;
        }
    }
    if (on == n || on + 2 >= n - 1) return false;  // needs >= 1 background token

    // Optional "with a {object}" between subject and "on".
    std::size_t with = on;
    for (std::size_t i = 5; i + 1 < on; ++i) {
        if (tokens[i] == "with" && tokens[i + 1] == "a") {
            with = i;
            break;
        }
    }
    if (with == on) {
        if (on <= 5) return false;  // subject needs >= 1 token
    } else {
        if (with <= 5 || with + 2 >= on) return false;
    }

    spans[ComponentKind::domain] = {1, 2};
    spans[ComponentKind::adjective] = {4, 5};
    spans[ComponentKind::subject] = {5, with};
    if (with != on) spans[ComponentKind::object] = {with + 2, on};
    spans[ComponentKind::background] = {on + 2, n - 1};
    return true;
}

/// Part-of-speech-free heuristic for free-form captions. Imperfect parses
/// only reduce the set of perturbable kinds.
void heuristic_components(const std::vector<std::string>& tokens,
                          std::map<ComponentKind, TokenSpan>& spans) {
    const std::size_t n = tokens.size();
    if (n == 0) return;

    // "a {domain} of ..." prefix.
    std::size_t article = n;
    if (n > 3 && articles().count(tokens[0]) && tokens[2] == "of" && articles().count(tokens[3])) {
        spans[ComponentKind::domain] = {1, 2};
        article = 3;
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            if (articles().count(tokens[i])) {
                article = i;
                break;
            }
        }
    }
    if (article == n || article + 1 >= n) return;

    // Head noun phrase after the article; a leading token followed by more
    // phrase is read as the adjective.
    std::size_t stop = article + 1;
    while (stop < n && !is_phrase_stopper(tokens[stop])) ++stop;
    if (stop > article + 2) {
        spans[ComponentKind::adjective] = {article + 1, article + 2};
        spans[ComponentKind::subject] = {article + 2, stop};
    } else if (stop == article + 2) {
        spans[ComponentKind::subject] = {article + 1, stop};
    }

    // Trailing "... {X} in/on the background".
    if (n >= 4 && tokens[n - 1] == "background" && tokens[n - 2] == "the" &&
        (tokens[n - 3] == "in" || tokens[n - 3] == "on")) {
        std::size_t begin = n - 3;
        while (begin > 0 && !is_phrase_stopper(tokens[begin - 1])) --begin;
        if (begin < n - 3) {
            TokenSpan candidate{begin, n - 3};
            bool clashes = false;
            for (const auto& [kind, span] : spans)
                if (span.overlaps(candidate)) clashes = true;
            if (!clashes) spans[ComponentKind::background] = candidate;
        }
    }
}

std::string modification_for(const std::string& old_value, const std::string& new_value) {
    return "replace the " + old_value + " with " + new_value;
}

}  // namespace

Caption parse_components(const Caption& caption) {
    Caption out = caption;
    out.components.clear();
    const auto tokens = caption.tokens();
    if (tokens.empty()) return out;
    if (!match_toy_template(tokens, out.components))
        heuristic_components(tokens, out.components);
    return out;
}

CaptionEdit perturb_caption_with_value(const Caption& caption, ComponentKind kind,
                                       const std::string& replacement) {
    Caption parsed = caption.components.empty() ? parse_components(caption) : caption;
    const auto located = parsed.components.find(kind);
    if (located == parsed.components.end())
        throw UnperturbableError("no " + core::to_string(kind) + " located in caption \"" +
                                 caption.text + "\"");
    const TokenSpan span = located->second;
    const auto ref_tokens = parsed.tokens();
    const auto new_tokens = core::tokenize(replacement);
    if (new_tokens.empty()) throw ConfigError("replacement value is empty");

    std::string old_value;
    for (std::size_t i = span.start; i < span.end; ++i) {
        if (!old_value.empty()) old_value += ' ';
        old_value += ref_tokens[i];
    }
    const std::string new_value = core::join_tokens(new_tokens);
    if (old_value == new_value)
        throw ConfigError("replacement equals the original value \"" + old_value + "\"");

    std::vector<std::string> cf_tokens(ref_tokens.begin(),
                                       ref_tokens.begin() + static_cast<long>(span.start));
    cf_tokens.insert(cf_tokens.end(), new_tokens.begin(), new_tokens.end());
    cf_tokens.insert(cf_tokens.end(), ref_tokens.begin() + static_cast<long>(span.end),
                     ref_tokens.end());

    CaptionEdit edit;
    edit.reference_caption = parsed;
    edit.kind = kind;
    edit.changed_span_ref = span;
    edit.changed_span_cf = {span.start, span.start + new_tokens.size()};
    edit.modification_text = modification_for(old_value, new_value);

    Caption cf;
    cf.image_id = parsed.image_id;
    cf.text = core::join_tokens(cf_tokens);
    // Shift located spans past the edit; the edited kind takes the new span.
    const long delta = static_cast<long>(new_tokens.size()) - static_cast<long>(span.length());
    for (const auto& [other_kind, other_span] : parsed.components) {
        if (other_kind == kind) {
            cf.components[other_kind] = edit.changed_span_cf;
        } else if (other_span.start >= span.end) {
            cf.components[other_kind] = {static_cast<std::size_t>(other_span.start + delta),
                                         static_cast<std::size_t>(other_span.end + delta)};
        } else {
            cf.components[other_kind] = other_span;
        }
    }
    edit.counterfactual_caption = cf;
    return edit;
}

CaptionEdit perturb_caption(const Caption& caption, ComponentKind kind, std::uint64_t seed,
                            const PerturberBackend& backend) {
    if (backend.kind == PerturberKind::rule_based) {
        Caption parsed = caption.components.empty() ? parse_components(caption) : caption;
        const auto located = parsed.components.find(kind);
        if (located == parsed.components.end())
            throw UnperturbableError("no " + core::to_string(kind) + " located in caption \"" +
                                     caption.text + "\"");
        const auto ref_tokens = parsed.tokens();
        std::string old_value;
        for (std::size_t i = located->second.start; i < located->second.end; ++i) {
            if (!old_value.empty()) old_value += ' ';
            old_value += ref_tokens[i];
        }
        std::vector<std::string> candidates;
        for (const auto& value : backend.vocabulary.values(kind))
            if (value != old_value) candidates.push_back(value);
        if (candidates.empty())
            throw UnperturbableError("vocabulary offers no replacement for " +
                                     core::to_string(kind));
        const std::size_t index = seeded_hash(seed, parsed.text) % candidates.size();
        return perturb_caption_with_value(parsed, kind, candidates[index]);
    }

    if (!backend.endpoint) throw ConfigError("external perturber has no endpoint");
    nlohmann::json request;
    request["caption"] = caption.text;
    request["kind"] = core::to_string(kind);
    const std::string body =
        detail::post_json(*backend.endpoint, "/perturb", request.dump(), backend.http);
    CaptionEdit edit = parse_llm_edit_response(body, caption);
    if (edit.kind != kind)
        throw ParseError("kind_mismatch",
                         "perturber edited " + core::to_string(edit.kind) + " instead of " +
                             core::to_string(kind),
                         body);
    return edit;
}

CaptionEdit parse_llm_edit_response(const std::string& raw, const Caption& reference) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(raw);
    } catch (const nlohmann::json::exception&) {
        throw ParseError("bad_json", "perturber response is not valid JSON", raw);
    }
    for (const char* field : {"counterfactual", "modification", "kind"}) {
        if (!j.contains(field) || !j[field].is_string())
            throw ParseError(
                "missing_field",
                std::string("perturber response lacks string field \"") + field + "\"", raw);
    }
    const std::string counterfactual = j["counterfactual"].get<std::string>();
    const std::string modification = j["modification"].get<std::string>();
    const ComponentKind kind = core::component_kind_from_string(j["kind"].get<std::string>());
    if (modification.empty())
        throw ParseError("empty_modification", "modification text is empty", raw);

    const auto ref_tokens = reference.tokens();
    const auto cf_tokens = core::tokenize(counterfactual);
    const std::size_t n1 = ref_tokens.size(), n2 = cf_tokens.size();
    std::size_t prefix = 0;
    while (prefix < n1 && prefix < n2 && ref_tokens[prefix] == cf_tokens[prefix]) ++prefix;
    std::size_t suffix = 0;
    while (suffix < n1 - prefix && suffix < n2 - prefix &&
           ref_tokens[n1 - 1 - suffix] == cf_tokens[n2 - 1 - suffix])
        ++suffix;
    const TokenSpan span_ref{prefix, n1 - suffix};
    const TokenSpan span_cf{prefix, n2 - suffix};
    if (span_ref.start >= span_ref.end && span_cf.start >= span_cf.end)
        throw ParseError("identity_edit", "counterfactual equals the reference", raw);
    if (span_ref.start >= span_ref.end || span_cf.start >= span_cf.end)
        throw ParseError("multi_span", "edit inserts or deletes instead of replacing", raw);

    // A token common to both diff middles means two separate edits with
    // untouched words in between.
    for (std::size_t i = span_ref.start; i < span_ref.end; ++i)
        for (std::size_t k = span_cf.start; k < span_cf.end; ++k)
            if (ref_tokens[i] == cf_tokens[k])
                throw ParseError("multi_span",
                                 "more than one span changed (shared token \"" + ref_tokens[i] +
                                     "\" inside the diff)",
                                 raw);

    CaptionEdit edit;
    edit.reference_caption = reference;
    edit.counterfactual_caption.image_id = reference.image_id;
    edit.counterfactual_caption.text = counterfactual;
    edit.modification_text = modification;
    edit.kind = kind;
    edit.changed_span_ref = span_ref;
    edit.changed_span_cf = span_cf;

    const auto mentions = [&](const std::string& value) {
        const auto value_tokens = core::tokenize(value);
        const auto mod_tokens = core::tokenize(modification);
        for (const auto& v : value_tokens)
            if (std::find(mod_tokens.begin(), mod_tokens.end(), v) == mod_tokens.end())
                return false;
        return true;
    };
    if (!mentions(edit.old_value()) || !mentions(edit.new_value()))
        throw ParseError("missing_mention",
                         "modification text does not mention both edited values", raw);
    return edit;
}

std::vector<core::Violation> validate_edit(const CaptionEdit& edit) {
    std::vector<core::Violation> out;
    const auto ref_tokens = edit.reference_caption.tokens();
    const auto cf_tokens = edit.counterfactual_caption.tokens();
    if (!edit.changed_span_ref.valid() || edit.changed_span_ref.end > ref_tokens.size() ||
        !edit.changed_span_cf.valid() || edit.changed_span_cf.end > cf_tokens.size()) {
        out.push_back(
            {"invalid_span", edit.reference_caption.image_id, "changed span out of bounds"});
        return out;
    }
    if (ref_tokens == cf_tokens)
        out.push_back({"identity_edit", edit.reference_caption.image_id,
                       "counterfactual equals the reference"});

    std::vector<std::string> ref_rest, cf_rest;
    for (std::size_t i = 0; i < ref_tokens.size(); ++i)
        if (i < edit.changed_span_ref.start || i >= edit.changed_span_ref.end)
            ref_rest.push_back(ref_tokens[i]);
    for (std::size_t i = 0; i < cf_tokens.size(); ++i)
        if (i < edit.changed_span_cf.start || i >= edit.changed_span_cf.end)
            cf_rest.push_back(cf_tokens[i]);
    if (ref_rest != cf_rest)
        out.push_back({"multi_span", edit.reference_caption.image_id,
                       "tokens outside the changed spans differ"});

    if (edit.changed_span_cf.length() > 3)
        out.push_back({"span_too_long", edit.reference_caption.image_id,
                       "replacement spans " + std::to_string(edit.changed_span_cf.length()) +
                           " tokens (limit 3)"});
    if (edit.modification_text.empty())
        out.push_back({"empty_modification", edit.reference_caption.image_id,
                       "modification text is empty"});
    return out;
}

ComponentKind sample_kind(const KindWeights& weights, std::mt19937_64& rng) {
    double total = 0;
    for (const auto& [kind, weight] : weights) {
        if (weight < 0) throw ConfigError("negative weight for " + core::to_string(kind));
        total += weight;
    }
    if (total <= 0) throw ConfigError("kind weights sum to zero");
    double draw = draw_unit(rng) * total;
    for (const auto& [kind, weight] : weights) {
        if (weight <= 0) continue;
        if (draw < weight) return kind;
        draw -= weight;
    }
    // Rounding can push the draw past the last positive weight.
    for (auto it = weights.rbegin(); it != weights.rend(); ++it)
        if (it->second > 0) return it->first;
    throw ConfigError("kind weights sum to zero");
}

bool DedupRegistry::try_claim(const std::string& reference_image_id, ComponentKind kind,
                              const std::string& replacement) {
    std::lock_guard lock(mutex_);
    return keys_
        .insert(reference_image_id + "\x1f" + core::to_string(kind) + "\x1f" + replacement)
        .second;
}

bool DedupRegistry::contains(const std::string& reference_image_id, ComponentKind kind,
                             const std::string& replacement) const {
    std::lock_guard lock(mutex_);
    return keys_.count(reference_image_id + "\x1f" + core::to_string(kind) + "\x1f" +
                       replacement) > 0;
}

std::size_t DedupRegistry::size() const {
    std::lock_guard lock(mutex_);
    return keys_.size();
}

}  // namespace cirforge::perturber
