// Copyright (C) 2026 CIRForge Contributors
// SPDX-License-Identifier: Apache-2.0
//
// forge: synthesize CIR training triplets and measure their effect.
//
//   forge run     --config c.ini --seed 1 --out dir    full experiment
//   forge caption --config c.ini --seed 1 --out dir    captions only
//   forge perturb --config c.ini --seed 1 --out dir    captions + edits
//   forge generate --config c.ini --seed 1 --out dir   edits -> images
//   forge synth   --config c.ini --seed 1 --out dir    closed-loop synthesis
//   forge stats   --manifest m.json                    dataset counts
//   forge train   --config c.ini --seed 1 --out dir    train both arms
//   forge eval    --config c.ini --seed 1 --out dir    evaluate both arms
//   forge ablate  --config c.ini --seed 1 --out dir    fraction ablation
//
// Stages are resumable: artifacts already in the out dir are reused.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "cirforge/dataset.hpp"
#include "cirforge/errors.hpp"
#include "cirforge/manifest.hpp"
#include "cirforge/pipeline.hpp"
#include "cirforge/version.hpp"

using namespace cirforge;

namespace {

struct CommonArgs {
    std::string config_file;
    std::string out_dir;
    std::uint64_t seed = 0;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_file, "experiment config (INI)")->required();
    cmd->add_option("--out", args.out_dir, "output directory")->required();
    cmd->add_option("--seed", args.seed, "run seed");
}

int report_bundle(const pipeline::ReportBundle& bundle) {
    for (const auto& stage : bundle.stages)
        std::printf("[%s] %s %s\n", stage.name.c_str(), stage.status.c_str(),
                    stage.detail.c_str());
    if (!bundle.results.empty()) {
        const auto table = evalkit::render_results_table(bundle.results);
        std::fputs(table.text.c_str(), stdout);
    }
    if (bundle.status == "failed") {
        std::fprintf(stderr, "failed at [%s]: %s\n", bundle.failed_stage.c_str(),
                     bundle.message.c_str());
        return 1;
    }
    std::printf("%s -> %s\n", bundle.status.c_str(), bundle.out_dir.string().c_str());
    return 0;
}

/// Stage runners below share this plumbing: load config, build the pool the
/// same way run_experiment does (world + subsample), reusing on-disk
/// artifacts when present.
struct StageContext {
    pipeline::ExperimentConfig config;
    std::filesystem::path out;
    std::uint64_t seed;
    captioner::Vocabulary vocab;
    pipeline::Backends backends;
    core::DatasetManifest world;
    core::DatasetManifest pool;
};

StageContext make_context(const CommonArgs& args) {
    StageContext ctx{pipeline::ExperimentConfig::from_file(args.config_file),
                     args.out_dir,
                     args.seed,
                     {},
                     {},
                     {},
                     {}};
    ctx.vocab = ctx.config.vocabulary_file
                    ? captioner::Vocabulary::load(*ctx.config.vocabulary_file)
                    : captioner::Vocabulary::builtin();
    ctx.backends = pipeline::toy_backends(ctx.vocab);
    if (ctx.config.captioner_kind == "external")
        ctx.backends.caption = captioner::external_captioner(ctx.config.captioner_endpoint);
    if (ctx.config.perturber_kind == "external")
        ctx.backends.perturb = perturber::external_perturber(ctx.config.perturber_endpoint);
    if (ctx.config.generator_kind == "external")
        ctx.backends.generate = cfgen::external_generator(ctx.config.generator_endpoint);

    std::filesystem::create_directories(ctx.out);
    const auto world_path = ctx.out / "world.json";
    if (std::filesystem::exists(world_path)) {
        ctx.world = core::load_manifest(world_path);
    } else {
        ctx.world = pipeline::make_toy_world(ctx.config.toy, ctx.vocab, ctx.out, ctx.seed);
        core::save_manifest(ctx.world, world_path);
    }
    const auto pool_path = ctx.out / "pool.json";
    if (std::filesystem::exists(pool_path)) {
        ctx.pool = core::load_manifest(pool_path);
    } else {
        ctx.pool = dataset::subsample_images(
            dataset::filter_split(ctx.world, core::Split::train), ctx.config.fraction, ctx.seed);
        core::save_manifest(ctx.pool, pool_path);
    }
    return ctx;
}

std::vector<core::Caption> stage_caption(StageContext& ctx) {
    const auto captions = pipeline::caption_pool(ctx.pool, ctx.backends.caption, ctx.out);
    pipeline::save_captions_file(captions, ctx.out / "captions.json");
    std::printf("captioned %zu images -> %s\n", captions.size(),
                (ctx.out / "captions.json").string().c_str());
    return captions;
}

pipeline::SynthesisReport stage_synth(StageContext& ctx) {
    pipeline::SynthesisConfig config;
    config.generation = ctx.config.generation;
    config.retry_budget = ctx.config.retry_budget;
    config.workers = ctx.config.workers;
    config.media_root = ctx.out;
    config.checkpoint_file = ctx.out / "synthetic.checkpoint.json";
    if (std::filesystem::exists(ctx.out / "captions.json"))
        config.captions = pipeline::load_captions_file(ctx.out / "captions.json");
    const std::size_t n =
        ctx.config.synthetic_count
            ? *ctx.config.synthetic_count
            : static_cast<std::size_t>(ctx.config.synthetic_per_manual *
                                           static_cast<double>(ctx.pool.triplets.size()) +
                                       0.5);
    auto report = pipeline::synthesize_triplets(ctx.pool, n, ctx.backends, config, ctx.seed);
    core::save_manifest(report.manifest, ctx.out / "synthetic.json");
    std::printf("synthesized %zu/%zu triplets -> %s\n", report.produced, report.requested,
                (ctx.out / "synthetic.json").string().c_str());
    if (report.shortfall()) std::printf("shortfall: %s\n", report.shortfall_reason.c_str());
    return report;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"CIR triplet synthesis and evaluation toolkit"};
    app.set_version_flag("--version", std::string("forge ") + kVersion);
    app.require_subcommand(1);

    CommonArgs args;
    std::string manifest_file;

    auto* cmd_run = app.add_subcommand("run", "run the configured experiment end to end");
    add_common(cmd_run, args);
    auto* cmd_caption = app.add_subcommand("caption", "produce reference captions for the pool");
    add_common(cmd_caption, args);
    auto* cmd_perturb = app.add_subcommand("perturb", "produce counterfactual caption edits");
    add_common(cmd_perturb, args);
    auto* cmd_generate =
        app.add_subcommand("generate", "generate target images from persisted edits");
    add_common(cmd_generate, args);
    auto* cmd_synth = app.add_subcommand("synth", "closed-loop triplet synthesis");
    add_common(cmd_synth, args);
    auto* cmd_train = app.add_subcommand("train", "train the with/without arms");
    add_common(cmd_train, args);
    auto* cmd_eval = app.add_subcommand("eval", "evaluate the trained arms");
    add_common(cmd_eval, args);
    auto* cmd_ablate = app.add_subcommand("ablate", "run the fraction ablation");
    add_common(cmd_ablate, args);
    auto* cmd_stats = app.add_subcommand("stats", "print dataset statistics");
    cmd_stats->add_option("--manifest", manifest_file, "a specific manifest JSON file");
    CommonArgs stats_args;
    cmd_stats->add_option("--config", stats_args.config_file, "experiment config (INI)");
    cmd_stats->add_option("--out", stats_args.out_dir, "output directory");
    cmd_stats->add_option("--seed", stats_args.seed, "run seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (cmd_stats->parsed()) {
            auto print_stats = [](const std::string& label, const core::DatasetManifest& m) {
                std::printf("== %s ==\n", label.c_str());
                std::fputs(core::render_stats(core::compute_stats(m)).c_str(), stdout);
            };
            int violations_seen = 0;
            auto check = [&](const core::DatasetManifest& m) {
                for (const auto& v : core::validate_manifest(m)) {
                    std::fprintf(stderr, "  [%s] %s: %s\n", v.code.c_str(), v.subject.c_str(),
                                 v.detail.c_str());
                    ++violations_seen;
                }
            };
            if (!manifest_file.empty()) {
                const auto manifest = core::load_manifest(manifest_file);
                print_stats(manifest_file, manifest);
                check(manifest);
            } else if (!stats_args.config_file.empty() && !stats_args.out_dir.empty()) {
                // Stats over the experiment's manifests, building the world
                // and pool if they are not on disk yet.
                StageContext ctx = make_context(stats_args);
                print_stats("world", ctx.world);
                check(ctx.world);
                print_stats("pool (data-scarce)", ctx.pool);
                const auto synthetic_path = ctx.out / "synthetic.json";
                if (std::filesystem::exists(synthetic_path)) {
                    const auto synthetic = core::load_manifest(synthetic_path);
                    print_stats("synthetic", synthetic);
                    check(synthetic);
                }
            } else {
                std::fprintf(stderr, "stats needs --manifest or both --config and --out\n");
                return 1;
            }
            return violations_seen == 0 ? 0 : 1;
        }

        if (cmd_run->parsed())
            return report_bundle(
                pipeline::run_experiment(pipeline::ExperimentConfig::from_file(args.config_file),
                                         args.seed, args.out_dir));
        if (cmd_train->parsed() || cmd_eval->parsed() || cmd_ablate->parsed()) {
            // These stages are the tail of the full pipeline; run_experiment
            // resumes from whatever artifacts already exist.
            auto config = pipeline::ExperimentConfig::from_file(args.config_file);
            if (cmd_ablate->parsed()) config.ablation_enabled = true;
            return report_bundle(pipeline::run_experiment(config, args.seed, args.out_dir));
        }

        StageContext ctx = make_context(args);
        if (cmd_caption->parsed()) {
            stage_caption(ctx);
            return 0;
        }
        if (cmd_perturb->parsed() || cmd_synth->parsed() || cmd_generate->parsed()) {
            if (!std::filesystem::exists(ctx.out / "captions.json")) stage_caption(ctx);
            const auto report = stage_synth(ctx);
            nlohmann::ordered_json edits = nlohmann::ordered_json::array();
            for (const auto& t : report.manifest.triplets)
                if (t.edit) edits.push_back(core::edit_to_json(*t.edit));
            std::ofstream out(ctx.out / "edits.json", std::ios::binary);
            out << edits.dump(2) << "\n";
            return report.shortfall() ? 1 : 0;
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
