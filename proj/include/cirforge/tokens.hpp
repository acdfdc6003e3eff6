// Copyright (C) 2026 CIRForge Contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace cirforge::core {

/// Half-open token-index range [start, end) into a tokenized caption.
struct TokenSpan {
    std::size_t start = 0;
    std::size_t end = 0;

    std::size_t length() const { return end - start; }
    bool valid() const { return end > start; }
    bool overlaps(const TokenSpan& other) const {
        return start < other.end && other.start < end;
    }
    friend bool operator==(const TokenSpan&, const TokenSpan&) = default;
};

/// A token is a whitespace-delimited word, lowercased, with terminal
/// punctuation stripped. Spans index tokens, never bytes.
std::vector<std::string> tokenize(const std::string& text);

/// Joins tokens with single spaces: the normalized surface form used when
/// captions are rebuilt after an edit.
std::string join_tokens(const std::vector<std::string>& tokens);

}  // namespace cirforge::core
