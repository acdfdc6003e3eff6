// Copyright (C) 2026 CIRForge Contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "cirforge/captioner.hpp"
#include "cirforge/raster.hpp"
#include "cirforge/types.hpp"

namespace cirforge::cfgen {

/// Inversion and editing parameters. The defaults are the customary
/// operating points of the underlying techniques, surfaced here so
/// experiments can vary them.
struct GenerationConfig {
    int num_inversion_steps = 50;
    double guidance_scale = 7.5;
    double cross_attention_injection_fraction = 0.8;
    double self_attention_injection_fraction = 0.4;
    int null_text_opt_iters = 10;
    std::int64_t seed = 0;
    int output_size = 512;
    double inversion_tolerance = 0.05;

    /// Throws ConfigError on invalid values (steps < 1, fractions outside
    /// [0,1], non-positive guidance or size, negative iters/tolerance).
    void validate() const;
};

/// Handle to an inverted latent trajectory plus the reconstruction quality
/// the backend reported. Toy trajectories reconstruct exactly.
struct LatentTrajectory {
    std::string handle;
    double reconstruction_error = 0.0;
};

enum class GeneratorKind { external_diffusion, toy };

struct GeneratorBackend {
    GeneratorKind kind = GeneratorKind::toy;
    std::optional<std::string> endpoint;            // external only
    captioner::Vocabulary vocabulary = captioner::Vocabulary::builtin();  // toy palette
    captioner::HttpOptions http;
};

GeneratorBackend toy_generator(captioner::Vocabulary vocabulary = captioner::Vocabulary::builtin());
GeneratorBackend external_generator(std::string endpoint, captioner::HttpOptions http = {});

/// Allocates ids and paths for synthetic media from a synchronized counter;
/// no two callers ever receive the same path.
class SyntheticMediaWriter {
public:
    /// Files land under media_root / uri_prefix; the prefix is kept in the
    /// record uris so a merged manifest resolves them from one root.
    explicit SyntheticMediaWriter(std::filesystem::path media_root, std::string prefix = "syn",
                                  std::string uri_prefix = "");

    struct Slot {
        std::string image_id;
        std::string uri;          // relative to media_root
        std::string sidecar_uri;  // relative to media_root, toy scenes only
    };

    Slot allocate();

    /// Bumps the counter past ids already present, so resumed runs never
    /// reuse an id or overwrite a file.
    void reserve_existing(const std::vector<core::ImageRecord>& images);

    const std::filesystem::path& root() const { return root_; }

private:
    std::filesystem::path root_;
    std::string prefix_;
    std::string uri_prefix_;
    std::uint64_t next_ = 1;
    std::mutex mutex_;
};

/// Inverts the reference image under its caption so it can be edited.
/// Toy backend reconstructs exactly (error 0); the external service reports
/// its own error, checked against config.inversion_tolerance. Above the
/// tolerance, throws InversionQualityError: the attempt is skippable, not
/// fatal.
LatentTrajectory invert_image(const core::ImageRecord& image, const core::Caption& caption,
                              const GenerationConfig& config, const GeneratorBackend& backend,
                              const std::filesystem::path& root = {});

struct GeneratedImage {
    core::ImageRecord record;  // fresh id, source = synthetic
    std::string png_bytes;
};

/// Applies the caption edit along the trajectory and writes the target
/// image under the writer's media root. Toy contract: the output raster is
/// the deterministic render of the scene with exactly the edited component
/// replaced; every other pixel matches the unedited render.
GeneratedImage edit_image(const LatentTrajectory& trajectory, const core::CaptionEdit& edit,
                          const GenerationConfig& config, const GeneratorBackend& backend,
                          SyntheticMediaWriter& writer);

/// generate_target outcome: either a synthetic (record, triplet) pair or a
/// skip with the reason, letting callers re-draw another edit.
struct GenerateResult {
    std::optional<core::ImageRecord> record;
    std::optional<core::Triplet> triplet;
    std::string skip_reason;

    bool ok() const { return triplet.has_value(); }
};

/// Inversion followed by editing; packages the result as a training triplet
/// with full provenance. Inversion-quality failures become skips.
GenerateResult generate_target(const core::ImageRecord& image, const core::CaptionEdit& edit,
                               const GenerationConfig& config, const GeneratorBackend& backend,
                               SyntheticMediaWriter& writer,
                               const std::filesystem::path& root = {});

}  // namespace cirforge::cfgen
