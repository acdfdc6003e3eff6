// Copyright (C) 2026 CIRForge Contributors
// SPDX-License-Identifier: Apache-2.0

#include "cirforge/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_map>
#include <unordered_set>

#include "cirforge/errors.hpp"
#include "cirforge/hash.hpp"
#include "json.hpp"

namespace cirforge::dataset {

using core::DatasetManifest;
using core::ImageRecord;
using core::Triplet;
using ordered_json = nlohmann::ordered_json;

namespace {

nlohmann::json parse_file(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw IoError("cannot open " + file.string());
    try {
        nlohmann::json j;
        in >> j;
        return j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("bad_json", file.string() + " is not valid JSON: " + e.what());
    }
}

std::string record_context(const std::filesystem::path& file, std::size_t index) {
    return file.string() + " record " + std::to_string(index);
}

}  // namespace

DatasetManifest load_cirr(const std::filesystem::path& captions_file,
                          const std::filesystem::path& split_file,
                          const std::filesystem::path& root, core::Split split) {
    const nlohmann::json split_json = parse_file(split_file);
    if (!split_json.is_object())
        throw ParseError("bad_schema", split_file.string() + " must map image names to paths");

    DatasetManifest manifest;
    manifest.name = "cirr";
    manifest.root = root.string();
    std::unordered_set<std::string> ids;
    for (const auto& [name, path] : split_json.items()) {
        if (!path.is_string())
            throw ParseError("bad_schema",
                             split_file.string() + " entry \"" + name + "\" is not a path");
        ImageRecord rec;
        rec.image_id = name;
        rec.uri = path.get<std::string>();
        rec.split = split;
        rec.source = core::Source::original;
        ids.insert(rec.image_id);
        manifest.images.push_back(std::move(rec));
    }

    const nlohmann::json captions = parse_file(captions_file);
    if (!captions.is_array())
        throw ParseError("bad_schema", captions_file.string() + " must be a list of records");
    for (std::size_t i = 0; i < captions.size(); ++i) {
        const auto& j = captions[i];
        if (!j.is_object() || !j.contains("reference") || !j.contains("target_hard") ||
            !j.contains("caption"))
            throw ParseError("bad_schema", record_context(captions_file, i) +
                                               " lacks reference/target_hard/caption");
        Triplet t;
        t.reference_image_id = j.at("reference").get<std::string>();
        t.target_image_id = j.at("target_hard").get<std::string>();
        t.modification_text = j.at("caption").get<std::string>();
        t.provenance = core::Provenance::manual;
        if (!ids.count(t.reference_image_id) || !ids.count(t.target_image_id))
            throw ParseError("bad_schema",
                             record_context(captions_file, i) + " references an image missing " +
                                 "from the split file");
        manifest.triplets.push_back(std::move(t));
    }
    return manifest;
}

DatasetManifest load_fashioniq(const std::vector<std::filesystem::path>& captions_files,
                               const std::filesystem::path& root, core::Split split) {
    DatasetManifest manifest;
    manifest.name = "fashioniq";
    manifest.root = root.string();
    std::unordered_set<std::string> ids;

    auto ensure_image = [&](const std::string& id) {
        if (ids.insert(id).second) {
            ImageRecord rec;
            rec.image_id = id;
            rec.uri = "images/" + id + ".png";
            rec.split = split;
            rec.source = core::Source::original;
            manifest.images.push_back(std::move(rec));
        }
    };

    for (const auto& file : captions_files) {
        const nlohmann::json records = parse_file(file);
        if (!records.is_array())
            throw ParseError("bad_schema", file.string() + " must be a list of records");
        for (std::size_t i = 0; i < records.size(); ++i) {
            const auto& j = records[i];
            if (!j.is_object() || !j.contains("candidate") || !j.contains("target") ||
                !j.contains("captions") || !j.at("captions").is_array())
                throw ParseError("bad_schema",
                                 record_context(file, i) + " lacks candidate/target/captions");
            Triplet t;
            t.reference_image_id = j.at("candidate").get<std::string>();
            t.target_image_id = j.at("target").get<std::string>();
            std::vector<std::string> captions;
            for (const auto& c : j.at("captions")) {
                if (!c.is_string())
                    throw ParseError("bad_schema",
                                     record_context(file, i) + " has a non-string caption");
                std::string text = c.get<std::string>();
                // The human annotations carry stray whitespace.
                while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back())))
                    text.pop_back();
                std::size_t start = 0;
                while (start < text.size() && std::isspace(static_cast<unsigned char>(text[start])))
                    ++start;
                captions.push_back(text.substr(start));
            }
            std::string joined;
            for (const auto& c : captions) {
                if (c.empty()) continue;
                if (!joined.empty()) joined += " and ";
                joined += c;
            }
            if (joined.empty())
                throw ParseError("bad_schema", record_context(file, i) + " has no usable caption");
            t.modification_text = joined;
            t.source_captions = captions;
            t.provenance = core::Provenance::manual;
            ensure_image(t.reference_image_id);
            ensure_image(t.target_image_id);
            manifest.triplets.push_back(std::move(t));
        }
    }
    return manifest;
}

std::size_t subsample_count(double fraction, std::size_t count) {
    return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(count) + 0.5));
}

DatasetManifest subsample_images(const DatasetManifest& manifest, double fraction,
                                 std::uint64_t seed) {
    if (!(fraction > 0.0) || fraction > 1.0)
        throw PreconditionError("fraction must be in (0, 1], got " + std::to_string(fraction));
    if (fraction == 1.0) return manifest;

    const std::size_t keep = subsample_count(fraction, manifest.images.size());
    std::vector<std::size_t> order(manifest.images.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::mt19937_64 rng(seed);
    deterministic_shuffle(order, rng);

    std::unordered_set<std::string> kept_ids;
    for (std::size_t i = 0; i < keep && i < order.size(); ++i)
        kept_ids.insert(manifest.images[order[i]].image_id);

    DatasetManifest out;
    out.name = manifest.name;
    out.root = manifest.root;
    for (const auto& rec : manifest.images)  // original order, stable across fractions
        if (kept_ids.count(rec.image_id)) out.images.push_back(rec);
    for (const auto& t : manifest.triplets)
        if (kept_ids.count(t.reference_image_id) && kept_ids.count(t.target_image_id))
            out.triplets.push_back(t);
    return out;
}

DatasetManifest merge(const DatasetManifest& manual, const DatasetManifest& synthetic) {
    if (manual.root != synthetic.root)
        throw IntegrityError("cannot merge manifests with different roots: \"" + manual.root +
                             "\" vs \"" + synthetic.root + "\"");

    DatasetManifest out;
    out.name = manual.name.empty() ? synthetic.name : manual.name + "+" + synthetic.name;
    out.root = manual.root;
    out.images = manual.images;
    out.triplets = manual.triplets;

    std::unordered_map<std::string, const ImageRecord*> by_id;
    for (const auto& rec : manual.images) by_id[rec.image_id] = &rec;
    for (const auto& rec : synthetic.images) {
        const auto it = by_id.find(rec.image_id);
        if (it == by_id.end()) {
            out.images.push_back(rec);
        } else if (!(*it->second == rec)) {
            throw IntegrityError("merge conflict: image \"" + rec.image_id +
                                 "\" differs between manifests");
        }
    }
    out.triplets.insert(out.triplets.end(), synthetic.triplets.begin(), synthetic.triplets.end());
    return out;
}

DatasetManifest filter_split(const DatasetManifest& manifest, core::Split split) {
    DatasetManifest out;
    out.name = manifest.name;
    out.root = manifest.root;
    std::unordered_set<std::string> ids;
    for (const auto& rec : manifest.images) {
        if (rec.split == split) {
            ids.insert(rec.image_id);
            out.images.push_back(rec);
        }
    }
    for (const auto& t : manifest.triplets)
        if (ids.count(t.reference_image_id) && ids.count(t.target_image_id))
            out.triplets.push_back(t);
    return out;
}

void export_cirr(const DatasetManifest& manifest, const std::filesystem::path& captions_file,
                 const std::filesystem::path& split_file) {
    ordered_json captions = ordered_json::array();
    for (std::size_t i = 0; i < manifest.triplets.size(); ++i) {
        const Triplet& t = manifest.triplets[i];
        ordered_json j;
        j["pairid"] = i;
        j["reference"] = t.reference_image_id;
        j["target_hard"] = t.target_image_id;
        j["caption"] = t.modification_text;
        captions.push_back(std::move(j));
    }
    ordered_json split = ordered_json::object();
    for (const auto& rec : manifest.images) split[rec.image_id] = rec.uri;

    std::ofstream cap_out(captions_file, std::ios::binary);
    if (!cap_out) throw IoError("cannot open " + captions_file.string() + " for writing");
    cap_out << captions.dump(2) << "\n";
    std::ofstream split_out(split_file, std::ios::binary);
    if (!split_out) throw IoError("cannot open " + split_file.string() + " for writing");
    split_out << split.dump(2) << "\n";
}

void export_fashioniq(const DatasetManifest& manifest,
                      const std::filesystem::path& captions_file) {
    ordered_json records = ordered_json::array();
    for (const auto& t : manifest.triplets) {
        ordered_json j;
        j["candidate"] = t.reference_image_id;
        j["target"] = t.target_image_id;
        j["captions"] = t.source_captions ? ordered_json(*t.source_captions)
                                          : ordered_json::array({t.modification_text});
        records.push_back(std::move(j));
    }
    std::ofstream out(captions_file, std::ios::binary);
    if (!out) throw IoError("cannot open " + captions_file.string() + " for writing");
    out << records.dump(2) << "\n";
}

}  // namespace cirforge::dataset
