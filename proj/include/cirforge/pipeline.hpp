// Copyright (C) 2026 CIRForge Contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cirforge/captioner.hpp"
#include "cirforge/cfgen.hpp"
#include "cirforge/evalkit.hpp"
#include "cirforge/perturber.hpp"
#include "cirforge/toycir.hpp"

namespace cirforge::pipeline {

struct Backends {
    captioner::CaptionerBackend caption;
    perturber::PerturberBackend perturb;
    cfgen::GeneratorBackend generate;
};

Backends toy_backends(const captioner::Vocabulary& vocabulary = captioner::Vocabulary::builtin());

struct SynthesisConfig {
    cfgen::GenerationConfig generation;
    int retry_budget = 3;  // edit attempts per reference per round
    int workers = 1;       // parallel width for captioning, proposing, and
                           // external generation
    /// Filesystem dir synthetic media lands under and pool uris resolve
    /// against; record uris carry media_uri_prefix so one manifest root
    /// covers both.
    std::filesystem::path media_root;
    std::string media_uri_prefix = "synthetic/";
    /// When set, progress persists here and an interrupted run resumes from
    /// the last checkpointed triplet.
    std::optional<std::filesystem::path> checkpoint_file;
    std::size_t checkpoint_every = 50;
    /// Captions produced by an earlier stage; images not covered are
    /// captioned on demand.
    std::vector<core::Caption> captions;
};

/// The caption stage: reference captions (with parsed component spans) for
/// every pool image, captioned in parallel.
std::vector<core::Caption> caption_pool(const core::DatasetManifest& pool,
                                        const captioner::CaptionerBackend& backend,
                                        const std::filesystem::path& media_root);

void save_captions_file(const std::vector<core::Caption>& captions,
                        const std::filesystem::path& file);
std::vector<core::Caption> load_captions_file(const std::filesystem::path& file);

struct SynthesisReport {
    core::DatasetManifest manifest;  // synthetic triplets + media records +
                                     // the referenced pool images
    std::size_t requested = 0;
    std::size_t produced = 0;
    std::string shortfall_reason;

    bool shortfall() const { return produced < requested; }
};

/// Synthesizes exactly n valid triplets from the pool (or fewer, with an
/// explicit shortfall report, once every reference's edit space is
/// exhausted). References are drawn round-robin with reuse; per-item seeds
/// derive from (seed, reference id, attempt), so retries and parallelism
/// never perturb other items. Every emitted triplet passes validate_edit
/// and, joined with its records, validate_manifest.
SynthesisReport synthesize_triplets(const core::DatasetManifest& pool, std::size_t n,
                                    const Backends& backends, const SynthesisConfig& config,
                                    std::uint64_t seed);

/// Procedural toy dataset: seeded distinct scenes rendered to disk, manual
/// triplets between single-component-different scenes, disjoint train and
/// test splits. Media lands under out_root/subdir; uris are relative to
/// out_root.
struct ToyWorldSpec {
    std::size_t train_scenes = 160;
    std::size_t train_triplets = 260;
    std::size_t test_scenes = 140;
    std::size_t test_triplets = 220;
};

core::DatasetManifest make_toy_world(const ToyWorldSpec& spec,
                                     const captioner::Vocabulary& vocabulary,
                                     const std::filesystem::path& out_root, std::uint64_t seed,
                                     const std::string& subdir = "world");

/// One experiment definition, parsed from an INI-style config with sections
/// [backends], [generation], [dataset], [train], [eval], [ablation].
struct ExperimentConfig {
    // [backends]
    std::string captioner_kind = "toy";
    std::string perturber_kind = "rule_based";
    std::string generator_kind = "toy";
    std::string captioner_endpoint;
    std::string perturber_endpoint;
    std::string generator_endpoint;
    std::optional<std::filesystem::path> vocabulary_file;

    // [generation]
    cfgen::GenerationConfig generation;
    int retry_budget = 3;
    int workers = 1;

    // [dataset]
    std::string dataset_kind = "toy";
    ToyWorldSpec toy;
    double fraction = 0.3;            // data-scarce reduction of train images
    double synthetic_per_manual = 5.0;
    std::optional<std::size_t> synthetic_count;  // overrides the ratio

    // [train]
    toycir::TrainConfig train;
    int embed_dim = toycir::kDefaultDim;

    // [eval]
    evalkit::EvalConfig eval;

    // [ablation]
    bool ablation_enabled = false;
    std::vector<double> ablation_fractions = {0.1, 0.3, 0.6, 1.0};

    static ExperimentConfig from_file(const std::filesystem::path& file);
    static ExperimentConfig from_ini(const std::string& text);
    void validate() const;
};

struct StageOutcome {
    std::string name;
    std::string status;  // "ok" | "failed" | "skipped"
    std::string detail;
};

struct ReportBundle {
    std::string status;  // "complete" | "failed" | "already_complete"
    std::string failed_stage;
    std::string message;
    std::vector<StageOutcome> stages;
    std::vector<std::pair<std::string, evalkit::EvalResult>> results;
    std::filesystem::path out_dir;

    bool complete() const { return status != "failed"; }
};

/// Runs the configured stages end to end under out_dir: toy world,
/// data-scarce subsampling, captioning, triplet synthesis, both training
/// arms, evaluation, optional ablation. Persists every stage artifact, a
/// run log, and a machine-readable summary. A completed bundle with the
/// same config digest is not recomputed.
ReportBundle run_experiment(const ExperimentConfig& config, std::uint64_t seed,
                            const std::filesystem::path& out_dir);
ReportBundle run_experiment(const std::filesystem::path& config_file, std::uint64_t seed,
                            const std::filesystem::path& out_dir);

/// Stable digest of (config text, seed) used for resume detection.
std::string config_digest(const ExperimentConfig& config, std::uint64_t seed);

}  // namespace cirforge::pipeline
