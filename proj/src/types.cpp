// Copyright (C) 2026 CIRForge Contributors
// SPDX-License-Identifier: Apache-2.0

#include "cirforge/types.hpp"

#include "cirforge/errors.hpp"

namespace cirforge::core {

std::string to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "train";
}

std::string to_string(Source s) {
    return s == Source::original ? "original" : "synthetic";
}

std::string to_string(Provenance p) {
    return p == Provenance::manual ? "manual" : "synthetic";
}

std::string to_string(ComponentKind k) {
    switch (k) {
        case ComponentKind::subject: return "subject";
        case ComponentKind::object: return "object";
        case ComponentKind::background: return "background";
        case ComponentKind::adjective: return "adjective";
        case ComponentKind::domain: return "domain";
    }
    return "subject";
}

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw ParseError("bad_split", "unknown split: " + s);
}

Source source_from_string(const std::string& s) {
    if (s == "original") return Source::original;
    if (s == "synthetic") return Source::synthetic;
    throw ParseError("bad_source", "unknown source: " + s);
}

Provenance provenance_from_string(const std::string& s) {
    if (s == "manual") return Provenance::manual;
    if (s == "synthetic") return Provenance::synthetic;
    throw ParseError("bad_provenance", "unknown provenance: " + s);
}

ComponentKind component_kind_from_string(const std::string& s) {
    for (ComponentKind k : kAllKinds) {
        if (to_string(k) == s) return k;
    }
    throw ParseError("bad_kind", "unknown component kind: " + s);
}

namespace {
std::string span_text(const Caption& caption, const TokenSpan& span) {
    const auto tokens = caption.tokens();
    std::string out;
    for (std::size_t i = span.start; i < span.end && i < tokens.size(); ++i) {
        if (!out.empty()) out += ' ';
        out += tokens[i];
    }
    return out;
}
}  // namespace

std::string CaptionEdit::old_value() const {
    return span_text(reference_caption, changed_span_ref);
}

std::string CaptionEdit::new_value() const {
    return span_text(counterfactual_caption, changed_span_cf);
}

std::string to_string(InjectionMode m) {
    return m == InjectionMode::word_swap ? "word_swap" : "refinement";
}

InjectionMode injection_mode_from_string(const std::string& s) {
    if (s == "word_swap") return InjectionMode::word_swap;
    if (s == "refinement") return InjectionMode::refinement;
    throw ParseError("bad_injection_mode", "unknown injection mode: " + s);
}

InjectionMode injection_mode_for(const CaptionEdit& edit) {
    return edit.changed_span_ref.length() == edit.changed_span_cf.length()
               ? InjectionMode::word_swap
               : InjectionMode::refinement;
}

}  // namespace cirforge::core
