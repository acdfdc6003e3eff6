// Copyright (C) 2026 CIRForge Contributors
// SPDX-License-Identifier: Apache-2.0

#include "cirforge/cfgen.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "cirforge/errors.hpp"
#include "cirforge/hash.hpp"
#include "cirforge/perturber.hpp"
#include "http_util.hpp"
#include "json.hpp"

namespace cirforge::cfgen {

using captioner::SceneMeta;

void GenerationConfig::validate() const {
    if (num_inversion_steps < 1) throw ConfigError("num_inversion_steps must be >= 1");
    if (guidance_scale <= 0) throw ConfigError("guidance_scale must be positive");
    if (cross_attention_injection_fraction < 0 || cross_attention_injection_fraction > 1)
        throw ConfigError("cross_attention_injection_fraction must be in [0,1]");
    if (self_attention_injection_fraction < 0 || self_attention_injection_fraction > 1)
        throw ConfigError("self_attention_injection_fraction must be in [0,1]");
    if (null_text_opt_iters < 0) throw ConfigError("null_text_opt_iters must be >= 0");
    if (output_size < 1) throw ConfigError("output_size must be >= 1");
    if (inversion_tolerance < 0) throw ConfigError("inversion_tolerance must be >= 0");
}

GeneratorBackend toy_generator(captioner::Vocabulary vocabulary) {
    GeneratorBackend backend;
    backend.kind = GeneratorKind::toy;
    backend.vocabulary = std::move(vocabulary);
    return backend;
}

GeneratorBackend external_generator(std::string endpoint, captioner::HttpOptions http) {
    GeneratorBackend backend;
    backend.kind = GeneratorKind::external_diffusion;
    backend.endpoint = std::move(endpoint);
    backend.http = http;
    return backend;
}

SyntheticMediaWriter::SyntheticMediaWriter(std::filesystem::path media_root, std::string prefix,
                                           std::string uri_prefix)
    : root_(std::move(media_root)), prefix_(std::move(prefix)), uri_prefix_(std::move(uri_prefix)) {
    std::filesystem::create_directories(root_ / uri_prefix_);
}

SyntheticMediaWriter::Slot SyntheticMediaWriter::allocate() {
    std::lock_guard lock(mutex_);
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%06llu", static_cast<unsigned long long>(next_++));
    Slot slot;
    slot.image_id = prefix_ + "_" + buf;
    slot.uri = uri_prefix_ + slot.image_id + ".png";
    slot.sidecar_uri = uri_prefix_ + slot.image_id + ".json";
    return slot;
}

void SyntheticMediaWriter::reserve_existing(const std::vector<core::ImageRecord>& images) {
    std::lock_guard lock(mutex_);
    for (const auto& rec : images) {
        if (rec.image_id.rfind(prefix_ + "_", 0) != 0) continue;
        const std::string digits = rec.image_id.substr(prefix_.size() + 1);
        char* end = nullptr;
        const unsigned long long value = std::strtoull(digits.c_str(), &end, 10);
        if (end && *end == '\0' && value + 1 > next_) next_ = value + 1;
    }
}

namespace {

std::filesystem::path resolve(const std::filesystem::path& root, const std::string& rel) {
    std::filesystem::path p(rel);
    if (p.is_absolute() || root.empty()) return p;
    return root / p;
}

std::string read_file(const std::filesystem::path& file, const char* what) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw IoError(std::string(what) + " not readable: " + file.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

void write_file(const std::filesystem::path& file, const std::string& bytes) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw IoError("cannot open " + file.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + file.string());
}

}  // namespace

LatentTrajectory invert_image(const core::ImageRecord& image, const core::Caption& caption,
                              const GenerationConfig& config, const GeneratorBackend& backend,
                              const std::filesystem::path& root) {
    config.validate();
    const auto image_path = resolve(root, image.uri);
    if (!std::filesystem::exists(image_path))
        throw IoError("image not readable: " + image_path.string());

    LatentTrajectory trajectory;
    if (backend.kind == GeneratorKind::toy) {
        if (!image.sidecar)
            throw IoError("toy generator requires a scene sidecar for image " + image.image_id);
        const SceneMeta scene = captioner::load_scene(resolve(root, *image.sidecar));
        const auto expected = captioner::caption_for_scene(scene, image.image_id);
        if (core::tokenize(expected.text) != core::tokenize(caption.text))
            throw PreconditionError("caption \"" + caption.text +
                                    "\" is not the reference caption of image " + image.image_id);
        trajectory.handle = captioner::scene_to_json(scene);
        trajectory.reconstruction_error = 0.0;  // toy inversion is identity
    } else {
        if (!backend.endpoint) throw ConfigError("external generator has no endpoint");
        nlohmann::json request;
        request["image"] = base64_encode(read_file(image_path, "image"));
        request["caption"] = caption.text;
        request["steps"] = config.num_inversion_steps;
        request["guidance"] = config.guidance_scale;
        request["null_opt_iters"] = config.null_text_opt_iters;
        request["seed"] = config.seed;
        const std::string body =
            detail::post_json(*backend.endpoint, "/invert", request.dump(), backend.http);
        nlohmann::json response;
        try {
            response = nlohmann::json::parse(body);
        } catch (const nlohmann::json::exception&) {
            throw BackendError("generator returned malformed JSON from /invert", body);
        }
        if (!response.contains("trajectory_id") || !response.contains("reconstruction_error"))
            throw BackendError("generator /invert response lacks required fields", body);
        trajectory.handle = response["trajectory_id"].is_string()
                                ? response["trajectory_id"].get<std::string>()
                                : response["trajectory_id"].dump();
        trajectory.reconstruction_error = response["reconstruction_error"].get<double>();
    }

    if (!std::isfinite(trajectory.reconstruction_error) || trajectory.reconstruction_error < 0)
        throw BackendError("generator reported a non-finite reconstruction error",
                           trajectory.handle);
    if (trajectory.reconstruction_error > config.inversion_tolerance)
        throw InversionQualityError(
            "reconstruction error " + std::to_string(trajectory.reconstruction_error) +
                " exceeds tolerance " + std::to_string(config.inversion_tolerance) +
                " for image " + image.image_id,
            trajectory.reconstruction_error, config.inversion_tolerance);
    return trajectory;
}

GeneratedImage edit_image(const LatentTrajectory& trajectory, const core::CaptionEdit& edit,
                          const GenerationConfig& config, const GeneratorBackend& backend,
                          SyntheticMediaWriter& writer) {
    config.validate();
    const auto violations = perturber::validate_edit(edit);
    if (!violations.empty()) {
        std::string codes;
        for (const auto& v : violations) codes += (codes.empty() ? "" : ", ") + v.code;
        throw PreconditionError("edit fails validation: " + codes);
    }

    const auto slot = writer.allocate();
    GeneratedImage out;
    out.record.image_id = slot.image_id;
    out.record.uri = slot.uri;
    out.record.split = core::Split::train;
    out.record.source = core::Source::synthetic;

    if (backend.kind == GeneratorKind::toy) {
        SceneMeta scene = captioner::scene_from_json(trajectory.handle);
        const auto reference =
            captioner::caption_for_scene(scene, edit.reference_caption.image_id);
        if (core::tokenize(reference.text) != core::tokenize(edit.reference_caption.text))
            throw PreconditionError(
                "trajectory was not produced from the edit's reference caption");
        scene.set_component(edit.kind, edit.new_value());
        const raster::Raster target = captioner::render_scene(scene, backend.vocabulary);
        out.png_bytes = raster::encode_png(target);
        out.record.sidecar = slot.sidecar_uri;
        write_file(writer.root() / slot.sidecar_uri, captioner::scene_to_json(scene));
    } else {
        if (!backend.endpoint) throw ConfigError("external generator has no endpoint");
        nlohmann::json request;
        request["trajectory_id"] = trajectory.handle;
        request["source_caption"] = edit.reference_caption.text;
        request["target_caption"] = edit.counterfactual_caption.text;
        request["cross_frac"] = config.cross_attention_injection_fraction;
        request["self_frac"] = config.self_attention_injection_fraction;
        request["seed"] = config.seed;
        std::string body;
        try {
            body = detail::post_json(*backend.endpoint, "/edit", request.dump(), backend.http);
        } catch (const BackendError& e) {
            throw GenerationError(std::string(e.what()) + " while applying \"" +
                                  edit.modification_text + "\"");
        }
        nlohmann::json response;
        try {
            response = nlohmann::json::parse(body);
        } catch (const nlohmann::json::exception&) {
            throw BackendError("generator returned malformed JSON from /edit", body);
        }
        if (!response.contains("image") || !response["image"].is_string())
            throw BackendError("generator /edit response lacks an image field", body);
        out.png_bytes = base64_decode(response["image"].get<std::string>());
    }

    write_file(writer.root() / slot.uri, out.png_bytes);
    return out;
}

GenerateResult generate_target(const core::ImageRecord& image, const core::CaptionEdit& edit,
                               const GenerationConfig& config, const GeneratorBackend& backend,
                               SyntheticMediaWriter& writer, const std::filesystem::path& root) {
    config.validate();
    if (edit.reference_caption.image_id != image.image_id)
        throw PreconditionError("edit was derived from image " + edit.reference_caption.image_id +
                                ", not " + image.image_id);

    GenerateResult result;
    LatentTrajectory trajectory;
    try {
        trajectory = invert_image(image, edit.reference_caption, config, backend, root);
    } catch (const InversionQualityError& e) {
        result.skip_reason = e.what();
        return result;
    }

    GeneratedImage generated = edit_image(trajectory, edit, config, backend, writer);

    core::Triplet triplet;
    triplet.reference_image_id = image.image_id;
    triplet.modification_text = edit.modification_text;
    triplet.target_image_id = generated.record.image_id;
    triplet.provenance = core::Provenance::synthetic;
    triplet.edit = edit;
    triplet.generation_seed = config.seed;
    triplet.injection = core::injection_mode_for(edit);

    result.record = std::move(generated.record);
    result.triplet = std::move(triplet);
    return result;
}

}  // namespace cirforge::cfgen
