// Copyright (C) 2026 CIRForge Contributors
// SPDX-License-Identifier: Apache-2.0

#include "cirforge/captioner.hpp"

#include <fstream>
#include <sstream>

#include "cirforge/errors.hpp"
#include "cirforge/hash.hpp"
#include "http_util.hpp"
#include "json.hpp"

namespace cirforge::captioner {

CaptionerBackend toy_captioner(Vocabulary vocabulary) {
    CaptionerBackend backend;
    backend.kind = CaptionerKind::toy;
    backend.caption_template = kToyCaptionTemplate;
    backend.vocabulary = std::move(vocabulary);
    return backend;
}

CaptionerBackend external_captioner(std::string endpoint, HttpOptions http) {
    CaptionerBackend backend;
    backend.kind = CaptionerKind::external_service;
    backend.endpoint = std::move(endpoint);
    backend.http = http;
    return backend;
}

namespace {

void check_backend(const CaptionerBackend& backend) {
    const bool external = backend.kind == CaptionerKind::external_service;
    if (external && (!backend.endpoint || backend.caption_template))
        throw ConfigError("external captioner must set endpoint and no template");
    if (!external && (!backend.caption_template || backend.endpoint))
        throw ConfigError("toy captioner must set the caption template and no endpoint");
    if (!external && *backend.caption_template != kToyCaptionTemplate)
        throw ConfigError("unsupported toy caption template: " + *backend.caption_template);
}

std::string read_file(const std::filesystem::path& file, const char* what) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw IoError(std::string(what) + " not readable: " + file.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

std::filesystem::path resolve(const std::filesystem::path& root, const std::string& rel) {
    std::filesystem::path p(rel);
    if (p.is_absolute() || root.empty()) return p;
    return root / p;
}

}  // namespace

core::Caption generate_caption(const core::ImageRecord& image, const CaptionerBackend& backend,
                               const std::filesystem::path& root) {
    check_backend(backend);
    const auto image_path = resolve(root, image.uri);
    if (!std::filesystem::exists(image_path))
        throw IoError("image not readable: " + image_path.string());

    if (backend.kind == CaptionerKind::toy) {
        if (!image.sidecar)
            throw IoError("toy captioner requires a scene sidecar for image " + image.image_id);
        const SceneMeta scene = load_scene(resolve(root, *image.sidecar));
        return caption_for_scene(scene, image.image_id);
    }

    const std::string raster_bytes = read_file(image_path, "image");
    nlohmann::json request;
    request["image"] = base64_encode(raster_bytes);
    request["format"] = "png";
    const std::string body =
        detail::post_json(*backend.endpoint, "/caption", request.dump(), backend.http);

    nlohmann::json response;
    try {
        response = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception&) {
        throw BackendError("captioner returned malformed JSON", body);
    }
    if (!response.contains("caption") || !response["caption"].is_string())
        throw BackendError("captioner response lacks a caption field", body);

    core::Caption caption;
    caption.image_id = image.image_id;
    caption.text = response["caption"].get<std::string>();
    if (caption.text.empty()) throw BackendError("captioner returned an empty caption", body);
    return caption;
}

}  // namespace cirforge::captioner
