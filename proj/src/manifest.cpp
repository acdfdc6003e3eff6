// Copyright (C) 2026 CIRForge Contributors
// SPDX-License-Identifier: Apache-2.0

#include "cirforge/manifest.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "cirforge/errors.hpp"
#include "json.hpp"

namespace cirforge::core {

using ordered_json = nlohmann::ordered_json;

const ImageRecord* DatasetManifest::find_image(const std::string& image_id) const {
    for (const auto& rec : images) {
        if (rec.image_id == image_id) return &rec;
    }
    return nullptr;
}

std::filesystem::path DatasetManifest::resolve(const ImageRecord& record) const {
    std::filesystem::path uri(record.uri);
    if (uri.is_absolute() || root.empty()) return uri;
    return std::filesystem::path(root) / uri;
}

StatsTable compute_stats(const DatasetManifest& manifest) {
    std::unordered_map<std::string, const ImageRecord*> by_id;
    by_id.reserve(manifest.images.size());
    for (const auto& rec : manifest.images) by_id[rec.image_id] = &rec;

    StatsTable stats;
    stats.total_images = manifest.images.size();
    stats.total_triplets = manifest.triplets.size();
    for (const auto& rec : manifest.images) {
        ++stats.images_by_split[rec.split];
        ++stats.images_by_source[rec.source];
    }
    for (std::size_t i = 0; i < manifest.triplets.size(); ++i) {
        const Triplet& t = manifest.triplets[i];
        const auto ref = by_id.find(t.reference_image_id);
        const auto tgt = by_id.find(t.target_image_id);
        if (ref == by_id.end() || tgt == by_id.end()) {
            const std::string& missing =
                ref == by_id.end() ? t.reference_image_id : t.target_image_id;
            throw IntegrityError("triplet " + std::to_string(i) + " (" +
                                 t.reference_image_id + " -> " + t.target_image_id +
                                 ") references unknown image \"" + missing + "\"");
        }
        ++stats.triplets_by_provenance[t.provenance];
        const Split split = ref->second->split;
        if (split == Split::train && t.provenance == Provenance::manual) ++stats.train_triplets;
        if (split == Split::test) ++stats.test_triplets;
    }
    // Headline image counts follow the dataset-summary convention: original
    // pool sizes, with synthetic media reported separately by source.
    for (const auto& rec : manifest.images) {
        if (rec.source != Source::original) continue;
        if (rec.split == Split::train) ++stats.train_images;
        if (rec.split == Split::test) ++stats.test_images;
    }
    stats.synthetic_triplets = stats.triplets_by_provenance[Provenance::synthetic];
    return stats;
}

std::vector<Violation> validate_caption_spans(const Caption& caption,
                                              const std::string& subject) {
    std::vector<Violation> out;
    const std::size_t n = caption.tokens().size();
    std::vector<TokenSpan> seen;
    for (const auto& [kind, span] : caption.components) {
        if (!span.valid() || span.end > n) {
            out.push_back({"invalid_span", subject,
                           to_string(kind) + " span [" + std::to_string(span.start) + "," +
                               std::to_string(span.end) + ") out of bounds for " +
                               std::to_string(n) + " tokens"});
            continue;
        }
        for (const auto& other : seen) {
            if (span.overlaps(other)) {
                out.push_back({"invalid_span", subject, to_string(kind) + " span overlaps another"});
                break;
            }
        }
        seen.push_back(span);
    }
    return out;
}

namespace {

bool mentions(const std::string& text, const std::string& value) {
    if (value.empty()) return false;
    const auto text_tokens = tokenize(text);
    const auto value_tokens = tokenize(value);
    for (const auto& v : value_tokens) {
        if (std::find(text_tokens.begin(), text_tokens.end(), v) == text_tokens.end())
            return false;
    }
    return true;
}

/// Tokens of both captions with the changed spans removed must be identical:
/// the formal statement of a single-span edit.
bool outside_spans_identical(const CaptionEdit& edit) {
    const auto ref = edit.reference_caption.tokens();
    const auto cf = edit.counterfactual_caption.tokens();
    std::vector<std::string> ref_rest, cf_rest;
    for (std::size_t i = 0; i < ref.size(); ++i) {
        if (i < edit.changed_span_ref.start || i >= edit.changed_span_ref.end)
            ref_rest.push_back(ref[i]);
    }
    for (std::size_t i = 0; i < cf.size(); ++i) {
        if (i < edit.changed_span_cf.start || i >= edit.changed_span_cf.end)
            cf_rest.push_back(cf[i]);
    }
    return ref_rest == cf_rest;
}

void validate_embedded_edit(const CaptionEdit& edit, const std::string& subject,
                            std::vector<Violation>& out) {
    if (edit.reference_caption.text == edit.counterfactual_caption.text)
        out.push_back({"identity_edit", subject, "c_ref and c_cf are identical"});
    const auto ref_n = edit.reference_caption.tokens().size();
    const auto cf_n = edit.counterfactual_caption.tokens().size();
    if (!edit.changed_span_ref.valid() || edit.changed_span_ref.end > ref_n ||
        !edit.changed_span_cf.valid() || edit.changed_span_cf.end > cf_n) {
        out.push_back({"invalid_span", subject, "changed span out of bounds"});
        return;
    }
    if (!outside_spans_identical(edit))
        out.push_back({"multi_span", subject, "tokens outside the changed spans differ"});
    if (edit.modification_text.empty()) {
        out.push_back({"empty_modification", subject, "modification text is empty"});
    } else if (!mentions(edit.modification_text, edit.old_value()) ||
               !mentions(edit.modification_text, edit.new_value())) {
        out.push_back({"missing_mention", subject,
                       "modification text does not mention both \"" + edit.old_value() +
                           "\" and \"" + edit.new_value() + "\""});
    }
}

}  // namespace

std::vector<Violation> validate_manifest(const DatasetManifest& manifest) {
    std::vector<Violation> out;
    std::unordered_set<std::string> ids;
    for (const auto& rec : manifest.images) {
        if (!ids.insert(rec.image_id).second)
            out.push_back({"duplicate_image_id", rec.image_id, "image id appears twice"});
    }

    // Synthetic images must be the target of at least one synthetic triplet
    // carrying the generation edit.
    std::unordered_set<std::string> provenanced_targets;
    for (const auto& t : manifest.triplets) {
        if (t.provenance == Provenance::synthetic && t.edit.has_value())
            provenanced_targets.insert(t.target_image_id);
    }
    for (const auto& rec : manifest.images) {
        if (rec.source == Source::synthetic && !provenanced_targets.count(rec.image_id))
            out.push_back({"synthetic_image_without_provenance", rec.image_id,
                           "synthetic image is not the target of any synthetic triplet"});
    }

    for (std::size_t i = 0; i < manifest.triplets.size(); ++i) {
        const Triplet& t = manifest.triplets[i];
        const std::string subject = "triplet[" + std::to_string(i) + "]";
        if (!ids.count(t.reference_image_id))
            out.push_back({"dangling_reference", t.reference_image_id,
                           subject + " reference is not in images"});
        if (!ids.count(t.target_image_id))
            out.push_back({"dangling_reference", t.target_image_id,
                           subject + " target is not in images"});
        if (t.reference_image_id == t.target_image_id)
            out.push_back({"self_pair", subject,
                           "reference and target are both \"" + t.reference_image_id + "\""});
        if (t.provenance == Provenance::synthetic) {
            if (!t.edit.has_value()) {
                out.push_back({"missing_edit", subject, "synthetic triplet without an edit"});
            } else {
                if (t.edit->modification_text != t.modification_text)
                    out.push_back({"modification_mismatch", subject,
                                   "edit.modification_text differs from triplet text"});
                validate_embedded_edit(*t.edit, subject, out);
                auto ref_spans =
                    validate_caption_spans(t.edit->reference_caption, subject + ".c_ref");
                auto cf_spans =
                    validate_caption_spans(t.edit->counterfactual_caption, subject + ".c_cf");
                out.insert(out.end(), ref_spans.begin(), ref_spans.end());
                out.insert(out.end(), cf_spans.begin(), cf_spans.end());
            }
        }
    }
    return out;
}

namespace {

ordered_json span_to_json(const TokenSpan& span) {
    return ordered_json::array({span.start, span.end});
}

TokenSpan span_from_json(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != 2)
        throw ParseError("bad_span", "span must be a [start, end] pair");
    return TokenSpan{j[0].get<std::size_t>(), j[1].get<std::size_t>()};
}

}  // namespace

ordered_json caption_to_json(const Caption& caption) {
    ordered_json j;
    j["image_id"] = caption.image_id;
    j["text"] = caption.text;
    if (!caption.components.empty()) {
        ordered_json comps;
        for (const auto& [kind, span] : caption.components)
            comps[to_string(kind)] = span_to_json(span);
        j["components"] = comps;
    }
    return j;
}

Caption caption_from_json(const nlohmann::json& j) {
    Caption caption;
    caption.image_id = j.at("image_id").get<std::string>();
    caption.text = j.at("text").get<std::string>();
    if (j.contains("components")) {
        for (const auto& [key, value] : j.at("components").items())
            caption.components[component_kind_from_string(key)] = span_from_json(value);
    }
    return caption;
}

ordered_json edit_to_json(const CaptionEdit& edit) {
    ordered_json j;
    j["reference_caption"] = caption_to_json(edit.reference_caption);
    j["counterfactual_caption"] = caption_to_json(edit.counterfactual_caption);
    j["modification_text"] = edit.modification_text;
    j["kind"] = to_string(edit.kind);
    j["changed_span_ref"] = span_to_json(edit.changed_span_ref);
    j["changed_span_cf"] = span_to_json(edit.changed_span_cf);
    return j;
}

CaptionEdit edit_from_json(const nlohmann::json& j) {
    CaptionEdit edit;
    edit.reference_caption = caption_from_json(j.at("reference_caption"));
    edit.counterfactual_caption = caption_from_json(j.at("counterfactual_caption"));
    edit.modification_text = j.at("modification_text").get<std::string>();
    edit.kind = component_kind_from_string(j.at("kind").get<std::string>());
    edit.changed_span_ref = span_from_json(j.at("changed_span_ref"));
    edit.changed_span_cf = span_from_json(j.at("changed_span_cf"));
    return edit;
}

namespace {

ordered_json image_to_json(const ImageRecord& rec) {
    ordered_json j;
    j["image_id"] = rec.image_id;
    j["uri"] = rec.uri;
    j["split"] = to_string(rec.split);
    j["source"] = to_string(rec.source);
    if (rec.sidecar) j["sidecar"] = *rec.sidecar;
    return j;
}

ImageRecord image_from_json(const nlohmann::json& j) {
    ImageRecord rec;
    rec.image_id = j.at("image_id").get<std::string>();
    rec.uri = j.at("uri").get<std::string>();
    rec.split = split_from_string(j.at("split").get<std::string>());
    rec.source = source_from_string(j.at("source").get<std::string>());
    if (j.contains("sidecar")) rec.sidecar = j.at("sidecar").get<std::string>();
    return rec;
}

ordered_json triplet_to_json(const Triplet& t) {
    ordered_json j;
    j["reference_image_id"] = t.reference_image_id;
    j["modification_text"] = t.modification_text;
    j["target_image_id"] = t.target_image_id;
    j["provenance"] = to_string(t.provenance);
    if (t.edit) j["edit"] = edit_to_json(*t.edit);
    if (t.generation_seed) j["generation_seed"] = *t.generation_seed;
    if (t.injection) j["injection"] = to_string(*t.injection);
    if (t.source_captions) j["source_captions"] = *t.source_captions;
    return j;
}

Triplet triplet_from_json(const nlohmann::json& j) {
    Triplet t;
    t.reference_image_id = j.at("reference_image_id").get<std::string>();
    t.modification_text = j.at("modification_text").get<std::string>();
    t.target_image_id = j.at("target_image_id").get<std::string>();
    t.provenance = provenance_from_string(j.at("provenance").get<std::string>());
    if (j.contains("edit")) t.edit = edit_from_json(j.at("edit"));
    if (j.contains("generation_seed")) t.generation_seed = j.at("generation_seed").get<std::int64_t>();
    if (j.contains("injection"))
        t.injection = injection_mode_from_string(j.at("injection").get<std::string>());
    if (j.contains("source_captions"))
        t.source_captions = j.at("source_captions").get<std::vector<std::string>>();
    return t;
}

}  // namespace

std::string manifest_to_json(const DatasetManifest& manifest) {
    ordered_json j;
    j["name"] = manifest.name;
    j["root"] = manifest.root;
    j["images"] = ordered_json::array();
    for (const auto& rec : manifest.images) j["images"].push_back(image_to_json(rec));
    j["triplets"] = ordered_json::array();
    for (const auto& t : manifest.triplets) j["triplets"].push_back(triplet_to_json(t));
    return j.dump(2) + "\n";
}

DatasetManifest manifest_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("bad_json", std::string("manifest is not valid JSON: ") + e.what());
    }
    DatasetManifest manifest;
    manifest.name = j.value("name", "");
    manifest.root = j.value("root", "");
    if (j.contains("images"))
        for (const auto& rec : j.at("images")) manifest.images.push_back(image_from_json(rec));
    if (j.contains("triplets"))
        for (const auto& t : j.at("triplets")) manifest.triplets.push_back(triplet_from_json(t));
    return manifest;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& file) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw IoError("cannot open " + file.string() + " for writing");
    out << manifest_to_json(manifest);
    if (!out) throw IoError("failed writing " + file.string());
}

DatasetManifest load_manifest(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw IoError("cannot open " + file.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return manifest_from_json(buffer.str());
}

std::string render_stats(const StatsTable& stats) {
    std::ostringstream out;
    out << "images            " << stats.total_images << "\n";
    out << "  train           " << stats.train_images << "\n";
    auto val = stats.images_by_split.find(Split::val);
    out << "  val             " << (val == stats.images_by_split.end() ? 0 : val->second) << "\n";
    out << "  test            " << stats.test_images << "\n";
    auto synth_img = stats.images_by_source.find(Source::synthetic);
    out << "  synthetic       "
        << (synth_img == stats.images_by_source.end() ? 0 : synth_img->second) << "\n";
    out << "triplets          " << stats.total_triplets << "\n";
    out << "  train (manual)  " << stats.train_triplets << "\n";
    out << "  synthetic       " << stats.synthetic_triplets << "\n";
    out << "  test            " << stats.test_triplets << "\n";
    return out.str();
}

}  // namespace cirforge::core
