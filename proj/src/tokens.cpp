// Copyright (C) 2026 CIRForge Contributors
// SPDX-License-Identifier: Apache-2.0

#include "cirforge/tokens.hpp"

#include <cctype>

namespace cirforge::core {

namespace {
bool is_terminal_punct(char c) {
    switch (c) {
        case '.':
        case ',':
        case '!':
        case '?':
        case ';':
        case ':':
        case '"':
        case '\'':
        case ')':
        case ']':
            return true;
        default:
            return false;
    }
}
}  // namespace

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> tokens;
    std::string current;
    auto flush = [&] {
        while (!current.empty() && is_terminal_punct(current.back())) current.pop_back();
        if (!current.empty()) tokens.push_back(current);
        current.clear();
    };
    for (char raw : text) {
        const unsigned char c = static_cast<unsigned char>(raw);
        if (std::isspace(c)) {
            flush();
        } else {
            current += static_cast<char>(std::tolower(c));
        }
    }
    flush();
    return tokens;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += ' ';
        out += tokens[i];
    }
    return out;
}

}  // namespace cirforge::core
