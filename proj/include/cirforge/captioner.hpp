// Copyright (C) 2026 CIRForge Contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "cirforge/toyworld.hpp"
#include "cirforge/types.hpp"

namespace cirforge::captioner {

/// Connection behaviour for every external backend adapter.
struct HttpOptions {
    double timeout_sec = 30.0;
    int retries = 2;        // additional attempts after the first
    int max_inflight = 4;   // bound on concurrent requests per backend
};

inline constexpr const char* kToyCaptionTemplate =
    "a {domain} of a {adjective} {subject}[ with a {object}] on a {background} background";

enum class CaptionerKind { external_service, toy };

/// Caption source. Exactly one of endpoint/caption_template is set,
/// matching kind.
struct CaptionerBackend {
    CaptionerKind kind = CaptionerKind::toy;
    std::optional<std::string> endpoint;          // external only
    std::optional<std::string> caption_template;  // toy only
    HttpOptions http;
    Vocabulary vocabulary = Vocabulary::builtin();  // toy only
};

CaptionerBackend toy_captioner(Vocabulary vocabulary = Vocabulary::builtin());
CaptionerBackend external_captioner(std::string endpoint, HttpOptions http = {});

/// Produces the reference caption for an image.
/// Toy backend: pure function of the sidecar scene; fills spans for every
/// component present. External backend: POST {endpoint}/caption with
/// {image: base64 png, format: "png"}; components stay empty (the perturber
/// parses them).
core::Caption generate_caption(const core::ImageRecord& image, const CaptionerBackend& backend,
                               const std::filesystem::path& root = {});

}  // namespace cirforge::captioner
