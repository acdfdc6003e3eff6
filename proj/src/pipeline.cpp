// Copyright (C) 2026 CIRForge Contributors
// SPDX-License-Identifier: Apache-2.0

#include "cirforge/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "cirforge/dataset.hpp"
#include "cirforge/errors.hpp"
#include "cirforge/hash.hpp"
#include "cirforge/manifest.hpp"
#include "cirforge/version.hpp"
#include "json.hpp"

namespace cirforge::pipeline {

using core::Caption;
using core::CaptionEdit;
using core::DatasetManifest;
using core::ImageRecord;
using captioner::SceneMeta;
using ordered_json = nlohmann::ordered_json;

Backends toy_backends(const captioner::Vocabulary& vocabulary) {
    Backends b;
    b.caption = captioner::toy_captioner(vocabulary);
    b.perturb = perturber::rule_based_perturber(vocabulary);
    b.generate = cfgen::toy_generator(vocabulary);
    return b;
}

namespace {

void write_text_file(const std::filesystem::path& file, const std::string& text) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw IoError("cannot open " + file.string() + " for writing");
    out << text;
    if (!out) throw IoError("failed writing " + file.string());
}

std::string read_text_file(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw IoError("cannot open " + file.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

std::string format_id(std::uint64_t n) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "img_%05llu", static_cast<unsigned long long>(n));
    return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// Toy world
// ---------------------------------------------------------------------------

DatasetManifest make_toy_world(const ToyWorldSpec& spec, const captioner::Vocabulary& vocabulary,
                               const std::filesystem::path& out_root, std::uint64_t seed,
                               const std::string& subdir) {
    if (spec.train_scenes < 2 || spec.test_scenes < 2)
        throw ConfigError("a toy world needs at least two scenes per split");
    std::filesystem::create_directories(out_root / subdir);

    auto scenes = captioner::all_scenes(vocabulary);
    if (spec.train_scenes + spec.test_scenes > scenes.size())
        throw ConfigError("vocabulary supports only " + std::to_string(scenes.size()) +
                          " distinct scenes");
    std::mt19937_64 rng(fnv1a64("toy-world", fnv1a64_u64(seed)));
    deterministic_shuffle(scenes, rng);

    DatasetManifest manifest;
    manifest.name = "toy";
    manifest.root = ".";

    std::uint64_t counter = 0;
    std::unordered_map<std::string, std::string> seen[2];  // scene key -> id, per split
    std::unordered_map<std::string, SceneMeta> scene_by_id;

    auto add_image = [&](const SceneMeta& scene, core::Split split) -> std::string {
        auto& ids = seen[split == core::Split::train ? 0 : 1];
        const std::string key = captioner::scene_to_json(scene);
        if (auto it = ids.find(key); it != ids.end()) return it->second;
        const std::string id = format_id(++counter);
        ImageRecord rec;
        rec.image_id = id;
        rec.uri = subdir + "/" + id + ".png";
        rec.sidecar = subdir + "/" + id + ".json";
        rec.split = split;
        rec.source = core::Source::original;
        raster::write_png(captioner::render_scene(scene, vocabulary), out_root / rec.uri);
        captioner::save_scene(scene, out_root / *rec.sidecar);
        manifest.images.push_back(rec);
        ids[key] = id;
        scene_by_id[id] = scene;
        return id;
    };

    auto build_split = [&](core::Split split, std::size_t n_scenes, std::size_t n_triplets,
                           std::size_t scene_offset) {
        std::vector<std::string> pool_ids;
        for (std::size_t i = 0; i < n_scenes; ++i)
            pool_ids.push_back(add_image(scenes[scene_offset + i], split));

        std::unordered_set<std::string> used;
        std::size_t made = 0, attempts = 0;
        while (made < n_triplets && attempts < 60 * n_triplets + 100) {
            ++attempts;
            // By value: add_image grows pool_ids below.
            const std::string ref_id = pool_ids[draw_below(rng, pool_ids.size())];
            const SceneMeta scene = scene_by_id.at(ref_id);

            std::vector<core::ComponentKind> kinds;
            for (core::ComponentKind k : core::kAllKinds)
                if (scene.component(k)) kinds.push_back(k);
            const core::ComponentKind kind = kinds[draw_below(rng, kinds.size())];

            const auto values = vocabulary.values(kind);
            const std::string old_value = *scene.component(kind);
            const std::string& new_value = values[draw_below(rng, values.size())];
            if (new_value == old_value) continue;
            if (!used.insert(ref_id + "\x1f" + core::to_string(kind) + "\x1f" + new_value).second)
                continue;

            SceneMeta target = scene;
            target.set_component(kind, new_value);
            const std::string target_id = add_image(target, split);
            pool_ids.push_back(target_id);

            core::Triplet t;
            t.reference_image_id = ref_id;
            t.target_image_id = target_id;
            t.modification_text = "replace the " + old_value + " with " + new_value;
            t.provenance = core::Provenance::manual;
            manifest.triplets.push_back(std::move(t));
            ++made;
        }
    };

    build_split(core::Split::train, spec.train_scenes, spec.train_triplets, 0);
    build_split(core::Split::test, spec.test_scenes, spec.test_triplets, spec.train_scenes);
    return manifest;
}

// ---------------------------------------------------------------------------
// Triplet synthesis
// ---------------------------------------------------------------------------

namespace {

struct CaptionCache {
    std::unordered_map<std::string, Caption> by_id;

    /// Captions the given refs in parallel; errors surface after the loop.
    void prefetch(const std::vector<const ImageRecord*>& refs,
                  const captioner::CaptionerBackend& backend,
                  const std::filesystem::path& media_root) {
        std::vector<const ImageRecord*> missing;
        for (const ImageRecord* ref : refs)
            if (!by_id.count(ref->image_id)) missing.push_back(ref);
        std::vector<Caption> fetched(missing.size());
        std::string error;
#pragma omp parallel for schedule(dynamic)
        for (long i = 0; i < static_cast<long>(missing.size()); ++i) {
            try {
                fetched[i] = perturber::parse_components(
                    captioner::generate_caption(*missing[i], backend, media_root));
            } catch (const std::exception& e) {
#pragma omp critical
                if (error.empty()) error = e.what();
            }
        }
        if (!error.empty()) throw BackendError("captioning failed: " + error, "");
        for (std::size_t i = 0; i < missing.size(); ++i)
            by_id[missing[i]->image_id] = std::move(fetched[i]);
    }
};

std::optional<CaptionEdit> propose_edit(const Caption& caption, const std::string& ref_id,
                                        std::uint64_t run_seed, std::uint64_t first_attempt,
                                        int attempts, const perturber::PerturberBackend& backend,
                                        const perturber::DedupRegistry& dedup) {
    for (int a = 0; a < attempts; ++a) {
        const std::uint64_t s = item_seed(run_seed, ref_id, first_attempt + a);
        std::mt19937_64 rng(s);
        core::ComponentKind kind;
        try {
            kind = perturber::sample_kind(backend.kind_weights, rng);
        } catch (const ConfigError&) {
            throw;
        }
        if (!caption.components.count(kind)) continue;
        try {
            CaptionEdit edit = perturber::perturb_caption(caption, kind, s, backend);
            if (!dedup.contains(ref_id, edit.kind, edit.new_value())) return edit;
        } catch (const UnperturbableError&) {
            continue;
        } catch (const ParseError&) {
            continue;  // bad external response burns one attempt
        }
    }
    return std::nullopt;
}

/// Deterministic walk of the whole edit space; guarantees that a reference
/// with any unused (kind, value) combination left yields an edit.
std::optional<CaptionEdit> exhaustive_edit(const Caption& caption, const std::string& ref_id,
                                           std::uint64_t rotation_seed,
                                           const perturber::PerturberBackend& backend,
                                           const perturber::DedupRegistry& dedup) {
    if (backend.kind != perturber::PerturberKind::rule_based) return std::nullopt;
    for (core::ComponentKind kind : core::kAllKinds) {
        const auto span = caption.components.find(kind);
        if (span == caption.components.end()) continue;
        const auto tokens = caption.tokens();
        std::string old_value;
        for (std::size_t i = span->second.start; i < span->second.end; ++i) {
            if (!old_value.empty()) old_value += ' ';
            old_value += tokens[i];
        }
        const auto values = backend.vocabulary.values(kind);
        if (values.empty()) continue;
        const std::size_t rot = rotation_seed % values.size();
        for (std::size_t t = 0; t < values.size(); ++t) {
            const std::string& v = values[(rot + t) % values.size()];
            if (v == old_value) continue;
            if (!dedup.contains(ref_id, kind, v))
                return perturber::perturb_caption_with_value(caption, kind, v);
        }
    }
    return std::nullopt;
}

struct CheckpointState {
    std::uint64_t cursor = 0;
    DatasetManifest manifest;
};

void save_checkpoint(const std::filesystem::path& file, const CheckpointState& state) {
    ordered_json j;
    j["cursor"] = state.cursor;
    j["manifest"] = nlohmann::ordered_json::parse(core::manifest_to_json(state.manifest));
    const auto tmp = file.string() + ".tmp";
    write_text_file(tmp, j.dump(2) + "\n");
    std::filesystem::rename(tmp, file);
}

CheckpointState load_checkpoint(const std::filesystem::path& file) {
    const nlohmann::json j = nlohmann::json::parse(read_text_file(file));
    CheckpointState state;
    state.cursor = j.at("cursor").get<std::uint64_t>();
    state.manifest = core::manifest_from_json(j.at("manifest").dump());
    return state;
}

}  // namespace

std::vector<Caption> caption_pool(const DatasetManifest& pool,
                                  const captioner::CaptionerBackend& backend,
                                  const std::filesystem::path& media_root) {
    CaptionCache cache;
    std::vector<const ImageRecord*> refs;
    for (const auto& rec : pool.images) refs.push_back(&rec);
    cache.prefetch(refs, backend, media_root);
    std::vector<Caption> captions;
    captions.reserve(refs.size());
    for (const ImageRecord* rec : refs) captions.push_back(cache.by_id.at(rec->image_id));
    return captions;
}

void save_captions_file(const std::vector<Caption>& captions, const std::filesystem::path& file) {
    ordered_json arr = ordered_json::array();
    for (const auto& c : captions) arr.push_back(core::caption_to_json(c));
    write_text_file(file, arr.dump(2) + "\n");
}

std::vector<Caption> load_captions_file(const std::filesystem::path& file) {
    nlohmann::json arr;
    try {
        arr = nlohmann::json::parse(read_text_file(file));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("bad_json", file.string() + " is not valid JSON: " + e.what());
    }
    std::vector<Caption> captions;
    for (const auto& j : arr) captions.push_back(core::caption_from_json(j));
    return captions;
}

SynthesisReport synthesize_triplets(const DatasetManifest& pool, std::size_t n,
                                    const Backends& backends, const SynthesisConfig& config,
                                    std::uint64_t seed) {
    config.generation.validate();
    std::vector<const ImageRecord*> refs;
    for (const auto& rec : pool.images)
        if (rec.source == core::Source::original) refs.push_back(&rec);
    if (refs.empty()) throw PreconditionError("synthesis pool has no original images");

    SynthesisReport report;
    report.requested = n;
    report.manifest.name = pool.name.empty() ? "synthetic" : pool.name + "-synthetic";
    report.manifest.root = pool.root;

    cfgen::SyntheticMediaWriter writer(config.media_root, "syn", config.media_uri_prefix);
    perturber::DedupRegistry dedup;
    std::unordered_set<std::string> pool_ids_in_manifest;
    std::uint64_t cursor = 0;

    if (config.checkpoint_file && std::filesystem::exists(*config.checkpoint_file)) {
        CheckpointState state = load_checkpoint(*config.checkpoint_file);
        report.manifest = std::move(state.manifest);
        cursor = state.cursor;
        writer.reserve_existing(report.manifest.images);
        for (const auto& t : report.manifest.triplets)
            if (t.edit) dedup.try_claim(t.reference_image_id, t.edit->kind, t.edit->new_value());
        for (const auto& rec : report.manifest.images)
            if (rec.source == core::Source::original) pool_ids_in_manifest.insert(rec.image_id);
    }

    auto persist = [&](std::uint64_t next_cursor) {
        if (!config.checkpoint_file) return;
        CheckpointState state;
        state.cursor = next_cursor;
        state.manifest = report.manifest;
        save_checkpoint(*config.checkpoint_file, state);
    };

    auto append_result = [&](const ImageRecord& ref, cfgen::GenerateResult&& result) {
        if (!pool_ids_in_manifest.count(ref.image_id)) {
            report.manifest.images.push_back(ref);
            pool_ids_in_manifest.insert(ref.image_id);
        }
        report.manifest.images.push_back(std::move(*result.record));
        report.manifest.triplets.push_back(std::move(*result.triplet));
    };

    CaptionCache captions;
    for (const auto& preset : config.captions) captions.by_id[preset.image_id] = preset;
    const std::size_t pool_size = refs.size();
    std::uint64_t items_since_commit = 0;

    while (report.manifest.triplets.size() < n) {
        const std::size_t pending = n - report.manifest.triplets.size();

        std::vector<const ImageRecord*> round_refs(pending);
        for (std::size_t i = 0; i < pending; ++i) round_refs[i] = refs[(cursor + i) % pool_size];
        captions.prefetch(round_refs, backends.caption, config.media_root);

        // Phase A: propose edits in parallel against the frozen dedup view.
        std::vector<std::optional<CaptionEdit>> proposals(pending);
        std::string propose_error;
#pragma omp parallel for schedule(dynamic) if (config.workers != 1)
        for (long i = 0; i < static_cast<long>(pending); ++i) {
            const std::uint64_t k = cursor + static_cast<std::uint64_t>(i);
            const ImageRecord& ref = *refs[k % pool_size];
            try {
                proposals[i] = propose_edit(
                    captions.by_id.at(ref.image_id), ref.image_id, seed,
                    (k / pool_size) * static_cast<std::uint64_t>(config.retry_budget),
                    config.retry_budget, backends.perturb, dedup);
            } catch (const std::exception& e) {
#pragma omp critical
                if (propose_error.empty()) propose_error = e.what();
            }
        }
        if (!propose_error.empty()) {
            persist(cursor);
            throw Error("edit proposal failed: " + propose_error);
        }

        // Phase B: claim in plan order; collisions re-draw serially.
        struct Accepted {
            const ImageRecord* ref;
            CaptionEdit edit;
            std::uint64_t item_seed_value;
        };
        std::vector<Accepted> accepted;
        for (std::size_t i = 0; i < pending; ++i) {
            const std::uint64_t k = cursor + i;
            const ImageRecord& ref = *refs[k % pool_size];
            const std::uint64_t round = k / pool_size;
            std::optional<CaptionEdit> edit = proposals[i];
            if (edit && !dedup.try_claim(ref.image_id, edit->kind, edit->new_value()))
                edit.reset();
            if (!edit) {
                edit = propose_edit(captions.by_id.at(ref.image_id), ref.image_id, seed,
                                    round * config.retry_budget + config.retry_budget,
                                    3 * config.retry_budget, backends.perturb, dedup);
                if (!edit)
                    edit = exhaustive_edit(captions.by_id.at(ref.image_id), ref.image_id,
                                           item_seed(seed, ref.image_id, round), backends.perturb,
                                           dedup);
                if (edit && !dedup.try_claim(ref.image_id, edit->kind, edit->new_value()))
                    edit.reset();
            }
            if (edit) {
                const std::uint64_t s =
                    item_seed(seed, ref.image_id, round * config.retry_budget);
                accepted.push_back({&ref, std::move(*edit), s});
            }
        }

        // Phase C: generation. The toy backend runs in plan order so ids and
        // bytes are reproducible; external backends fan out across workers.
        const bool parallel_generation =
            backends.generate.kind == cfgen::GeneratorKind::external_diffusion &&
            config.workers != 1;
        std::size_t committed = 0;
        if (!parallel_generation) {
            for (auto& item : accepted) {
                cfgen::GenerationConfig gen = config.generation;
                gen.seed = static_cast<std::int64_t>(item.item_seed_value);
                cfgen::GenerateResult result;
                try {
                    result = cfgen::generate_target(*item.ref, item.edit, gen, backends.generate,
                                                    writer, config.media_root);
                } catch (const std::exception& e) {
                    persist(cursor);
                    throw GenerationError("generation aborted (checkpoint saved): " +
                                          std::string(e.what()));
                }
                if (result.ok()) {
                    append_result(*item.ref, std::move(result));
                    ++committed;
                    if (config.checkpoint_file &&
                        report.manifest.triplets.size() % config.checkpoint_every == 0)
                        persist(cursor + pending);
                }
            }
        } else {
            std::vector<cfgen::GenerateResult> results(accepted.size());
            std::string gen_error;
#pragma omp parallel for schedule(dynamic)
            for (long i = 0; i < static_cast<long>(accepted.size()); ++i) {
                cfgen::GenerationConfig gen = config.generation;
                gen.seed = static_cast<std::int64_t>(accepted[i].item_seed_value);
                try {
                    results[i] = cfgen::generate_target(*accepted[i].ref, accepted[i].edit, gen,
                                                        backends.generate, writer,
                                                        config.media_root);
                } catch (const std::exception& e) {
#pragma omp critical
                    if (gen_error.empty()) gen_error = e.what();
                }
            }
            if (!gen_error.empty()) {
                persist(cursor);
                throw GenerationError("generation aborted (checkpoint saved): " + gen_error);
            }
            for (std::size_t i = 0; i < results.size(); ++i) {
                if (!results[i].ok()) continue;
                append_result(*accepted[i].ref, std::move(results[i]));
                ++committed;
            }
            if (config.checkpoint_file && committed > 0) persist(cursor + pending);
        }

        cursor += pending;
        if (committed == 0) {
            items_since_commit += pending;
            if (items_since_commit >= pool_size) {
                report.shortfall_reason =
                    "edit space exhausted after a full pass over " + std::to_string(pool_size) +
                    " references; produced " + std::to_string(report.manifest.triplets.size()) +
                    " of " + std::to_string(n);
                break;
            }
        } else {
            items_since_commit = 0;
        }
    }

    report.produced = report.manifest.triplets.size();
    if (config.checkpoint_file) {
        persist(cursor);
        if (!report.shortfall() && report.produced == n) {
            std::error_code ec;
            std::filesystem::remove(*config.checkpoint_file, ec);
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// Experiment config
// ---------------------------------------------------------------------------

namespace {

struct Ini {
    std::map<std::string, std::map<std::string, std::string>> sections;

    static Ini parse(const std::string& text) {
        Ini ini;
        std::string section;
        std::istringstream lines(text);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(lines, line)) {
            ++lineno;
            const auto comment = line.find_first_of("#;");
            if (comment != std::string::npos) line.erase(comment);
            auto trim = [](std::string s) {
                const auto b = s.find_first_not_of(" \t\r");
                const auto e = s.find_last_not_of(" \t\r");
                return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
            };
            line = trim(line);
            if (line.empty()) continue;
            if (line.front() == '[') {
                if (line.back() != ']')
                    throw ConfigError("config line " + std::to_string(lineno) +
                                      ": unterminated section header");
                section = trim(line.substr(1, line.size() - 2));
                ini.sections[section];
                continue;
            }
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
            const std::string key = trim(line.substr(0, eq));
            const std::string value = trim(line.substr(eq + 1));
            if (key.empty())
                throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
            ini.sections[section][key] = value;
        }
        return ini;
    }
};

class IniReader {
public:
    explicit IniReader(const Ini& ini) : ini_(ini) {}

    const std::string* find(const std::string& section, const std::string& key) {
        used_[section].insert(key);
        const auto s = ini_.sections.find(section);
        if (s == ini_.sections.end()) return nullptr;
        const auto k = s->second.find(key);
        return k == s->second.end() ? nullptr : &k->second;
    }

    std::string get(const std::string& s, const std::string& k, const std::string& fallback) {
        const auto* v = find(s, k);
        return v ? *v : fallback;
    }
    int get_int(const std::string& s, const std::string& k, int fallback) {
        const auto* v = find(s, k);
        if (!v) return fallback;
        try {
            return std::stoi(*v);
        } catch (...) {
            throw ConfigError("[" + s + "] " + k + " must be an integer, got \"" + *v + "\"");
        }
    }
    double get_double(const std::string& s, const std::string& k, double fallback) {
        const auto* v = find(s, k);
        if (!v) return fallback;
        try {
            return std::stod(*v);
        } catch (...) {
            throw ConfigError("[" + s + "] " + k + " must be a number, got \"" + *v + "\"");
        }
    }
    bool get_bool(const std::string& s, const std::string& k, bool fallback) {
        const auto* v = find(s, k);
        if (!v) return fallback;
        if (*v == "true" || *v == "1" || *v == "yes") return true;
        if (*v == "false" || *v == "0" || *v == "no") return false;
        throw ConfigError("[" + s + "] " + k + " must be a boolean, got \"" + *v + "\"");
    }
    std::vector<double> get_doubles(const std::string& s, const std::string& k,
                                    std::vector<double> fallback) {
        const auto* v = find(s, k);
        if (!v) return fallback;
        std::vector<double> out;
        std::istringstream parts(*v);
        std::string part;
        while (std::getline(parts, part, ',')) {
            try {
                out.push_back(std::stod(part));
            } catch (...) {
                throw ConfigError("[" + s + "] " + k + " must be a comma list of numbers");
            }
        }
        return out;
    }
    std::vector<int> get_ints(const std::string& s, const std::string& k,
                              std::vector<int> fallback) {
        const auto* v = find(s, k);
        if (!v) return fallback;
        std::vector<int> out;
        std::istringstream parts(*v);
        std::string part;
        while (std::getline(parts, part, ',')) {
            try {
                out.push_back(std::stoi(part));
            } catch (...) {
                throw ConfigError("[" + s + "] " + k + " must be a comma list of integers");
            }
        }
        return out;
    }

    void reject_unknown() const {
        for (const auto& [section, keys] : ini_.sections) {
            const auto used = used_.find(section);
            if (used == used_.end())
                throw ConfigError("unknown config section [" + section + "]");
            for (const auto& [key, _] : keys)
                if (!used->second.count(key))
                    throw ConfigError("unknown config key [" + section + "] " + key);
        }
    }

private:
    const Ini& ini_;
    std::map<std::string, std::set<std::string>> used_;
};

}  // namespace

ExperimentConfig ExperimentConfig::from_ini(const std::string& text) {
    const Ini ini = Ini::parse(text);
    IniReader r(ini);
    ExperimentConfig c;

    c.captioner_kind = r.get("backends", "captioner", c.captioner_kind);
    c.perturber_kind = r.get("backends", "perturber", c.perturber_kind);
    c.generator_kind = r.get("backends", "generator", c.generator_kind);
    c.captioner_endpoint = r.get("backends", "captioner_endpoint", "");
    c.perturber_endpoint = r.get("backends", "perturber_endpoint", "");
    c.generator_endpoint = r.get("backends", "generator_endpoint", "");
    const std::string vocab = r.get("backends", "vocabulary", "");
    if (!vocab.empty()) c.vocabulary_file = vocab;

    c.generation.num_inversion_steps =
        r.get_int("generation", "num_inversion_steps", c.generation.num_inversion_steps);
    c.generation.guidance_scale =
        r.get_double("generation", "guidance_scale", c.generation.guidance_scale);
    c.generation.cross_attention_injection_fraction =
        r.get_double("generation", "cross_attention_injection_fraction",
                     c.generation.cross_attention_injection_fraction);
    c.generation.self_attention_injection_fraction =
        r.get_double("generation", "self_attention_injection_fraction",
                     c.generation.self_attention_injection_fraction);
    c.generation.null_text_opt_iters =
        r.get_int("generation", "null_text_opt_iters", c.generation.null_text_opt_iters);
    c.generation.output_size = r.get_int("generation", "output_size", c.generation.output_size);
    c.generation.inversion_tolerance =
        r.get_double("generation", "inversion_tolerance", c.generation.inversion_tolerance);
    c.retry_budget = r.get_int("generation", "retry_budget", c.retry_budget);
    c.workers = r.get_int("generation", "workers", c.workers);

    c.dataset_kind = r.get("dataset", "kind", c.dataset_kind);
    c.toy.train_scenes =
        static_cast<std::size_t>(r.get_int("dataset", "train_scenes",
                                           static_cast<int>(c.toy.train_scenes)));
    c.toy.train_triplets = static_cast<std::size_t>(
        r.get_int("dataset", "train_triplets", static_cast<int>(c.toy.train_triplets)));
    c.toy.test_scenes = static_cast<std::size_t>(
        r.get_int("dataset", "test_scenes", static_cast<int>(c.toy.test_scenes)));
    c.toy.test_triplets = static_cast<std::size_t>(
        r.get_int("dataset", "test_triplets", static_cast<int>(c.toy.test_triplets)));
    c.fraction = r.get_double("dataset", "fraction", c.fraction);
    c.synthetic_per_manual =
        r.get_double("dataset", "synthetic_per_manual", c.synthetic_per_manual);
    const int explicit_count = r.get_int("dataset", "synthetic_count", -1);
    if (explicit_count >= 0) c.synthetic_count = static_cast<std::size_t>(explicit_count);

    c.train.epochs = r.get_int("train", "epochs", c.train.epochs);
    c.train.batch_size = r.get_int("train", "batch_size", c.train.batch_size);
    c.train.learning_rate = r.get_double("train", "learning_rate", c.train.learning_rate);
    c.train.temperature = r.get_double("train", "temperature", c.train.temperature);
    c.embed_dim = r.get_int("train", "dim", c.embed_dim);

    c.eval.ks = r.get_ints("eval", "ks", c.eval.ks);
    c.eval.exclude_reference = r.get_bool("eval", "exclude_reference", c.eval.exclude_reference);

    c.ablation_enabled = r.get_bool("ablation", "enabled", c.ablation_enabled);
    c.ablation_fractions = r.get_doubles("ablation", "fractions", c.ablation_fractions);

    r.reject_unknown();
    c.validate();
    return c;
}

ExperimentConfig ExperimentConfig::from_file(const std::filesystem::path& file) {
    return from_ini(read_text_file(file));
}

void ExperimentConfig::validate() const {
    auto check_kind = [](const std::string& what, const std::string& kind,
                         std::initializer_list<const char*> allowed) {
        for (const char* a : allowed)
            if (kind == a) return;
        throw ConfigError("unknown " + what + " kind \"" + kind + "\"");
    };
    check_kind("captioner", captioner_kind, {"toy", "external"});
    check_kind("perturber", perturber_kind, {"rule_based", "external"});
    check_kind("generator", generator_kind, {"toy", "external"});
    if (captioner_kind == "external" && captioner_endpoint.empty())
        throw ConfigError("external captioner needs captioner_endpoint");
    if (perturber_kind == "external" && perturber_endpoint.empty())
        throw ConfigError("external perturber needs perturber_endpoint");
    if (generator_kind == "external" && generator_endpoint.empty())
        throw ConfigError("external generator needs generator_endpoint");

    generation.validate();
    if (retry_budget < 1) throw ConfigError("retry_budget must be >= 1");
    if (workers < 1) throw ConfigError("workers must be >= 1");

    if (dataset_kind != "toy")
        throw ConfigError("dataset kind \"" + dataset_kind +
                          "\" is not runnable end to end; only the toy dataset is");
    if (!(fraction > 0.0) || fraction > 1.0)
        throw ConfigError("dataset fraction must be in (0, 1]");
    if (!synthetic_count && synthetic_per_manual <= 0)
        throw ConfigError("synthetic_per_manual must be positive");

    train.validate();
    if (embed_dim < 1) throw ConfigError("embedding dim must be positive");
    eval.validate();
    for (double f : ablation_fractions)
        if (!(f > 0.0) || f > 1.0) throw ConfigError("ablation fractions must be in (0, 1]");
    if (ablation_enabled && ablation_fractions.empty())
        throw ConfigError("ablation enabled but no fractions given");
}

std::string config_digest(const ExperimentConfig& config, std::uint64_t seed) {
    // Digest over the values that shape artifacts.
    std::ostringstream s;
    s << config.captioner_kind << '|' << config.perturber_kind << '|' << config.generator_kind
      << '|' << config.captioner_endpoint << '|' << config.perturber_endpoint << '|'
      << config.generator_endpoint << '|' << config.generation.num_inversion_steps << '|'
      << config.generation.guidance_scale << '|'
      << config.generation.cross_attention_injection_fraction << '|'
      << config.generation.self_attention_injection_fraction << '|'
      << config.generation.null_text_opt_iters << '|' << config.generation.output_size << '|'
      << config.generation.inversion_tolerance << '|' << config.retry_budget << '|'
      << config.dataset_kind << '|' << config.toy.train_scenes << '|' << config.toy.train_triplets
      << '|' << config.toy.test_scenes << '|' << config.toy.test_triplets << '|' << config.fraction
      << '|' << config.synthetic_per_manual << '|'
      << (config.synthetic_count ? std::to_string(*config.synthetic_count) : "auto") << '|'
      << config.train.epochs << '|' << config.train.batch_size << '|'
      << config.train.learning_rate << '|' << config.train.temperature << '|' << config.embed_dim
      << '|' << config.eval.exclude_reference << '|' << config.ablation_enabled << '|';
    for (int k : config.eval.ks) s << k << ',';
    s << '|';
    for (double f : config.ablation_fractions) s << f << ',';
    s << '|' << seed;
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(s.str())));
    return buf;
}

// ---------------------------------------------------------------------------
// Experiment runner
// ---------------------------------------------------------------------------

namespace {

captioner::Vocabulary load_vocabulary(const ExperimentConfig& config) {
    return config.vocabulary_file ? captioner::Vocabulary::load(*config.vocabulary_file)
                                  : captioner::Vocabulary::builtin();
}

Backends make_backends(const ExperimentConfig& config, const captioner::Vocabulary& vocab) {
    Backends b;
    b.caption = config.captioner_kind == "toy"
                    ? captioner::toy_captioner(vocab)
                    : captioner::external_captioner(config.captioner_endpoint);
    b.perturb = config.perturber_kind == "rule_based"
                    ? perturber::rule_based_perturber(vocab)
                    : perturber::external_perturber(config.perturber_endpoint);
    b.generate = config.generator_kind == "toy"
                     ? cfgen::toy_generator(vocab)
                     : cfgen::external_generator(config.generator_endpoint);
    return b;
}

void save_edits_file(const std::vector<core::Triplet>& triplets,
                     const std::filesystem::path& file) {
    ordered_json arr = ordered_json::array();
    for (const auto& t : triplets)
        if (t.edit) arr.push_back(core::edit_to_json(*t.edit));
    write_text_file(file, arr.dump(2) + "\n");
}

}  // namespace

ReportBundle run_experiment(const ExperimentConfig& config, std::uint64_t seed,
                            const std::filesystem::path& out_dir) {
    config.validate();
    std::filesystem::create_directories(out_dir);
    const std::string digest = config_digest(config, seed);

    ReportBundle bundle;
    bundle.out_dir = out_dir;

    // A completed bundle with the same digest is left untouched.
    const auto summary_path = out_dir / "summary.json";
    if (std::filesystem::exists(summary_path)) {
        try {
            const nlohmann::json old = nlohmann::json::parse(read_text_file(summary_path));
            if (old.value("status", "") == "complete" && old.value("config_digest", "") == digest) {
                bundle.status = "already_complete";
                for (const auto& [label, recalls] : old.at("results").items()) {
                    evalkit::EvalResult result;
                    result.num_queries = old.at("num_queries").get<std::size_t>();
                    for (const auto& [k, v] : recalls.items())
                        result.recall_at[std::stoi(k)] = v.get<double>();
                    bundle.results.emplace_back(label, std::move(result));
                }
                return bundle;
            }
        } catch (const std::exception&) {
            // Unreadable summary: fall through and recompute.
        }
    }

    std::vector<std::string> log;
    log.push_back(std::string("cirforge ") + kVersion);
    log.push_back("seed " + std::to_string(seed));
    log.push_back("config digest " + digest);
    log.push_back("backends " + config.captioner_kind + "/" + config.perturber_kind + "/" +
                  config.generator_kind);

    auto stage_done = [&](const std::string& name, const std::string& detail) {
        bundle.stages.push_back({name, "ok", detail});
        log.push_back("[" + name + "] " + detail);
    };
    auto finish = [&](const std::string& status) {
        bundle.status = status;

        ordered_json summary;
        summary["status"] = bundle.status;
        summary["config_digest"] = digest;
        summary["seed"] = seed;
        if (!bundle.failed_stage.empty()) {
            summary["failed_stage"] = bundle.failed_stage;
            summary["message"] = bundle.message;
        }
        ordered_json stages = ordered_json::array();
        for (const auto& s : bundle.stages) {
            ordered_json j;
            j["name"] = s.name;
            j["status"] = s.status;
            j["detail"] = s.detail;
            stages.push_back(std::move(j));
        }
        summary["stages"] = stages;
        ordered_json results = ordered_json::object();
        std::size_t num_queries = 0;
        for (const auto& [label, result] : bundle.results) {
            ordered_json row = ordered_json::object();
            for (const auto& [k, v] : result.recall_at) row[std::to_string(k)] = v;
            results[label] = std::move(row);
            num_queries = result.num_queries;
        }
        summary["results"] = results;
        summary["num_queries"] = num_queries;
        write_text_file(summary_path, summary.dump(2) + "\n");

        std::string log_text;
        for (const auto& line : log) log_text += line + "\n";
        write_text_file(out_dir / "run.log", log_text);
    };

    try {
        const captioner::Vocabulary vocab = load_vocabulary(config);
        const Backends backends = make_backends(config, vocab);

        // World: the full toy dataset, train and test splits.
        DatasetManifest world;
        const auto world_path = out_dir / "world.json";
        if (std::filesystem::exists(world_path)) {
            world = core::load_manifest(world_path);
            bundle.stages.push_back({"world", "skipped", "already on disk"});
        } else {
            world = make_toy_world(config.toy, vocab, out_dir, seed);
            core::save_manifest(world, world_path);
            const auto stats = core::compute_stats(world);
            stage_done("world", std::to_string(stats.total_images) + " images, " +
                                    std::to_string(stats.total_triplets) + " triplets");
        }

        // Data-scarce pool: the reduced train split.
        const DatasetManifest train_part = dataset::filter_split(world, core::Split::train);
        DatasetManifest pool;
        const auto pool_path = out_dir / "pool.json";
        if (std::filesystem::exists(pool_path)) {
            pool = core::load_manifest(pool_path);
            bundle.stages.push_back({"subsample", "skipped", "already on disk"});
        } else {
            pool = dataset::subsample_images(train_part, config.fraction, seed);
            core::save_manifest(pool, pool_path);
            char frac[16];
            std::snprintf(frac, sizeof(frac), "%.2f", config.fraction);
            stage_done("subsample", std::string("fraction ") + frac + " -> " +
                                        std::to_string(pool.images.size()) + " images, " +
                                        std::to_string(pool.triplets.size()) + " manual triplets");
        }

        // Reference captions for the pool, reused by the synth stage.
        const auto captions_path = out_dir / "captions.json";
        std::vector<Caption> captions;
        if (std::filesystem::exists(captions_path)) {
            captions = load_captions_file(captions_path);
            bundle.stages.push_back({"caption", "skipped", "already on disk"});
        } else {
            captions = caption_pool(pool, backends.caption, out_dir);
            save_captions_file(captions, captions_path);
            stage_done("caption", std::to_string(captions.size()) + " captions");
        }

        // Synthesis.
        const std::size_t n = config.synthetic_count
                                  ? *config.synthetic_count
                                  : static_cast<std::size_t>(std::floor(
                                        config.synthetic_per_manual *
                                            static_cast<double>(pool.triplets.size()) +
                                        0.5));
        DatasetManifest synthetic;
        const auto synthetic_path = out_dir / "synthetic.json";
        if (std::filesystem::exists(synthetic_path)) {
            synthetic = core::load_manifest(synthetic_path);
            bundle.stages.push_back({"synth", "skipped", "already on disk"});
        } else {
            SynthesisConfig synth_config;
            synth_config.generation = config.generation;
            synth_config.retry_budget = config.retry_budget;
            synth_config.workers = config.workers;
            synth_config.media_root = out_dir;
            synth_config.media_uri_prefix = "synthetic/";
            synth_config.checkpoint_file = out_dir / "synthetic.checkpoint.json";
            synth_config.captions = captions;
            SynthesisReport report = synthesize_triplets(pool, n, backends, synth_config, seed);
            synthetic = std::move(report.manifest);
            core::save_manifest(synthetic, synthetic_path);
            save_edits_file(synthetic.triplets, out_dir / "edits.json");
            std::string detail = "requested " + std::to_string(report.requested) + ", produced " +
                                 std::to_string(report.produced);
            if (report.shortfall()) detail += " (shortfall: " + report.shortfall_reason + ")";
            stage_done("synth", detail);
        }

        // Two training arms: the data-scarce manual triplets alone, and the
        // same arm plus the synthetic pool.
        std::filesystem::create_directories(out_dir / "models");
        toycir::TrainConfig train_config = config.train;
        train_config.seed = seed;

        struct Arm {
            std::string label;
            DatasetManifest data;
            std::filesystem::path checkpoint;
        };
        std::vector<Arm> arms;
        arms.push_back({"without_synthetic", pool, out_dir / "models" / "without_synthetic.ckpt"});
        arms.push_back(
            {"with_synthetic", dataset::merge(pool, synthetic), out_dir / "models" / "with_synthetic.ckpt"});

        std::vector<toycir::CIRModel> models;
        for (const auto& arm : arms) {
            toycir::CIRModel model(config.embed_dim, toycir::kDefaultHashSeed, out_dir);
            if (std::filesystem::exists(arm.checkpoint)) {
                model = toycir::CIRModel::load_checkpoint(arm.checkpoint, out_dir);
                bundle.stages.push_back({"train:" + arm.label, "skipped", "already on disk"});
            } else {
                toycir::TrainConfig arm_config = train_config;
                arm_config.batch_size = static_cast<int>(std::min<std::size_t>(
                    static_cast<std::size_t>(arm_config.batch_size), arm.data.triplets.size()));
                const auto trace = toycir::train(model, arm.data.triplets, arm.data, arm_config);
                model.save_checkpoint(arm.checkpoint);
                char loss[32];
                std::snprintf(loss, sizeof(loss), "%.6f", trace.empty() ? 0.0 : trace.back());
                stage_done("train:" + arm.label,
                           std::to_string(arm.data.triplets.size()) + " triplets, final loss " +
                               loss);
            }
            models.push_back(std::move(model));
        }

        // Evaluation on the test split.
        for (std::size_t i = 0; i < arms.size(); ++i) {
            const auto result = evalkit::evaluate(models[i], world, core::Split::test, config.eval);
            bundle.results.emplace_back(arms[i].label, result);
        }
        const auto table = evalkit::render_results_table(bundle.results);
        write_text_file(out_dir / "results.csv", table.csv);
        write_text_file(out_dir / "results.txt", table.text);
        stage_done("eval", std::to_string(bundle.results.front().second.num_queries) +
                               " queries per arm");

        // Optional ablation over original-data fractions.
        if (config.ablation_enabled) {
            const evalkit::TrainFn train_fn =
                [&](const DatasetManifest& data,
                    std::uint64_t train_seed) -> std::unique_ptr<evalkit::RetrievalModel> {
                auto model =
                    std::make_unique<toycir::CIRModel>(config.embed_dim, toycir::kDefaultHashSeed,
                                                       out_dir);
                toycir::TrainConfig fn_config = train_config;
                fn_config.seed = train_seed;
                fn_config.batch_size = static_cast<int>(std::min<std::size_t>(
                    static_cast<std::size_t>(fn_config.batch_size), data.triplets.size()));
                toycir::train(*model, data.triplets, data, fn_config);
                return model;
            };
            const auto ablation = evalkit::run_ablation(world, config.ablation_fractions,
                                                        synthetic, train_fn, config.eval, seed);
            write_text_file(out_dir / "ablation.csv", ablation.to_csv());
            stage_done("ablate", std::to_string(ablation.arms.size()) + " arms");
        }

        finish("complete");
    } catch (const std::exception& e) {
        bundle.failed_stage = bundle.stages.empty() ? "setup" : bundle.stages.back().name;
        bundle.message = e.what();
        log.push_back("FAILED after [" + bundle.failed_stage + "]: " + bundle.message);
        finish("failed");
    }
    return bundle;
}

ReportBundle run_experiment(const std::filesystem::path& config_file, std::uint64_t seed,
                            const std::filesystem::path& out_dir) {
    return run_experiment(ExperimentConfig::from_file(config_file), seed, out_dir);
}

}  // namespace cirforge::pipeline
