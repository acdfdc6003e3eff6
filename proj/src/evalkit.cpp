// Copyright (C) 2026 CIRForge Contributors
// SPDX-License-Identifier: Apache-2.0

#include "cirforge/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <unordered_map>

#include "cirforge/dataset.hpp"
#include "cirforge/errors.hpp"

namespace cirforge::evalkit {

double EmbeddingVector::norm() const {
    double sum = 0;
    for (double v : values) sum += v * v;
    return std::sqrt(sum);
}

EmbeddingVector& EmbeddingVector::normalize() {
    const double n = norm();
    if (n > 0)
        for (double& v : values) v /= n;
    return *this;
}

double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.dim() != b.dim())
        throw Error("embedding dimension mismatch: " + std::to_string(a.dim()) + " vs " +
                    std::to_string(b.dim()));
    double dot = 0;
    for (std::size_t i = 0; i < a.values.size(); ++i) dot += a.values[i] * b.values[i];
    const double denom = a.norm() * b.norm();
    return denom > 0 ? dot / denom : 0.0;
}

void EvalConfig::validate() const {
    if (ks.empty()) throw ConfigError("ks must be non-empty");
    for (std::size_t i = 0; i < ks.size(); ++i) {
        if (ks[i] < 1) throw ConfigError("every k must be positive");
        if (i > 0 && ks[i] <= ks[i - 1]) throw ConfigError("ks must be strictly ascending");
    }
}

namespace {

double round2(double x) { return std::floor(x * 100.0 + 0.5) / 100.0; }

std::string format2(double x) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", x);
    return buf;
}

}  // namespace

EvalResult recall_at_k(const std::vector<std::size_t>& ranked_target_positions,
                       const std::vector<int>& ks) {
    if (ranked_target_positions.empty())
        throw Error("recall is undefined for an empty position list");
    for (std::size_t i = 0; i < ks.size(); ++i) {
        if (ks[i] < 1) throw ConfigError("every k must be positive");
        if (i > 0 && ks[i] <= ks[i - 1]) throw ConfigError("ks must be strictly ascending");
    }
    for (std::size_t p : ranked_target_positions)
        if (p < 1) throw PreconditionError("positions are 1-based");

    EvalResult result;
    result.num_queries = ranked_target_positions.size();
    for (int k : ks) {
        std::size_t hits = 0;
        for (std::size_t p : ranked_target_positions)
            if (p <= static_cast<std::size_t>(k)) ++hits;
        result.recall_at[k] =
            round2(100.0 * static_cast<double>(hits) / static_cast<double>(result.num_queries));
    }
    return result;
}

std::vector<std::string> rank_gallery(const EmbeddingVector& query,
                                      const std::vector<GalleryItem>& gallery,
                                      const std::optional<std::string>& exclude_id) {
    std::vector<const GalleryItem*> items;
    items.reserve(gallery.size());
    for (const auto& item : gallery) {
        if (exclude_id && item.image_id == *exclude_id) continue;
        if (item.embedding.dim() != query.dim())  // before the parallel region
            throw Error("embedding dimension mismatch: " + std::to_string(query.dim()) + " vs " +
                        std::to_string(item.embedding.dim()));
        items.push_back(&item);
    }

    std::vector<double> sims(items.size());
#pragma omp parallel for schedule(static)
    for (long i = 0; i < static_cast<long>(items.size()); ++i)
        sims[i] = cosine_similarity(query, items[i]->embedding);

    std::vector<std::size_t> order(items.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (sims[a] != sims[b]) return sims[a] > sims[b];
        return items[a]->image_id < items[b]->image_id;
    });

    std::vector<std::string> ranked;
    ranked.reserve(order.size());
    for (std::size_t i : order) ranked.push_back(items[i]->image_id);
    return ranked;
}

std::size_t gallery_rank_of(const EmbeddingVector& query, const std::vector<GalleryItem>& gallery,
                            const std::string& target_id,
                            const std::optional<std::string>& exclude_id) {
    const GalleryItem* target = nullptr;
    for (const auto& item : gallery) {
        if (item.image_id == target_id && (!exclude_id || item.image_id != *exclude_id)) {
            target = &item;
            break;
        }
    }
    if (!target) throw Error("target \"" + target_id + "\" is not in the gallery");

    const double target_sim = cosine_similarity(query, target->embedding);
    std::size_t ahead = 0;
    for (const auto& item : gallery) {
        if (&item == target) continue;
        if (exclude_id && item.image_id == *exclude_id) continue;
        const double sim = cosine_similarity(query, item.embedding);
        if (sim > target_sim || (sim == target_sim && item.image_id < target->image_id)) ++ahead;
    }
    return ahead + 1;
}

EvalResult evaluate(const RetrievalModel& model, const core::DatasetManifest& manifest,
                    core::Split split, const EvalConfig& config) {
    config.validate();

    std::vector<const core::ImageRecord*> split_images;
    std::unordered_map<std::string, const core::ImageRecord*> by_id;
    for (const auto& rec : manifest.images) {
        by_id[rec.image_id] = &rec;
        if (rec.split == split) split_images.push_back(&rec);
    }
    if (split_images.empty())
        throw Error("no images in split " + core::to_string(split));

    std::vector<GalleryItem> gallery(split_images.size());
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < static_cast<long>(split_images.size()); ++i) {
        gallery[i].image_id = split_images[i]->image_id;
        gallery[i].embedding = model.embed_image(*split_images[i]);
    }

    std::vector<const core::Triplet*> queries;
    for (const auto& t : manifest.triplets) {
        const auto ref = by_id.find(t.reference_image_id);
        if (ref != by_id.end() && ref->second->split == split) queries.push_back(&t);
    }
    if (queries.empty()) throw Error("no eval triplets in split " + core::to_string(split));

    std::vector<std::size_t> positions(queries.size(), 0);
    std::string error_message;
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < static_cast<long>(queries.size()); ++i) {
        const core::Triplet& t = *queries[i];
        try {
            const EmbeddingVector query =
                model.compose(*by_id.at(t.reference_image_id), t.modification_text);
            const std::optional<std::string> exclude =
                config.exclude_reference ? std::optional(t.reference_image_id) : std::nullopt;
            positions[i] = gallery_rank_of(query, gallery, t.target_image_id, exclude);
        } catch (const std::exception& e) {
#pragma omp critical
            if (error_message.empty())
                error_message = "query for triplet " + t.reference_image_id + " -> " +
                                t.target_image_id + " failed: " + e.what();
        }
    }
    if (!error_message.empty()) throw Error(error_message);

    return recall_at_k(positions, config.ks);
}

ResultsTable render_results_table(const std::vector<std::pair<std::string, EvalResult>>& rows) {
    ResultsTable out;
    out.csv = "label,k,recall\n";
    if (rows.empty()) {
        out.text = "label\n";
        return out;
    }

    const auto& ks_map = rows.front().second.recall_at;
    std::vector<int> ks;
    for (const auto& [k, _] : ks_map) ks.push_back(k);
    for (const auto& [label, result] : rows) {
        if (result.recall_at.size() != ks.size())
            throw Error("row \"" + label + "\" reports different ks");
        for (int k : ks)
            if (!result.recall_at.count(k)) throw Error("row \"" + label + "\" lacks R@" +
                                                        std::to_string(k));
    }

    std::size_t label_width = 5;  // "label"
    for (const auto& [label, _] : rows) label_width = std::max(label_width, label.size());

    std::string header = "label";
    header.append(label_width - 5, ' ');
    for (int k : ks) {
        std::string col = "R@" + std::to_string(k);
        header += "  ";
        header.append(col.size() < 8 ? 8 - col.size() : 0, ' ');
        header += col;
    }
    out.text = header + "\n";

    for (const auto& [label, result] : rows) {
        std::string line = label;
        line.append(label_width - label.size(), ' ');
        for (int k : ks) {
            const std::string value = format2(result.recall_at.at(k));
            line += "  ";
            line.append(value.size() < 8 ? 8 - value.size() : 0, ' ');
            line += value;
            out.csv += label + "," + std::to_string(k) + "," + value + "\n";
        }
        out.text += line + "\n";
    }
    return out;
}

std::string AblationTable::to_csv() const {
    std::string csv = "fraction,arm,k,recall\n";
    for (const auto& arm : arms) {
        for (const auto& [k, recall] : arm.result.recall_at) {
            csv += format2(arm.fraction) + "," + arm.arm + "," + std::to_string(k) + "," +
                   format2(recall) + "\n";
        }
    }
    return csv;
}

AblationTable run_ablation(const core::DatasetManifest& manifest,
                           const std::vector<double>& fractions,
                           const core::DatasetManifest& synthetic, const TrainFn& train_fn,
                           const EvalConfig& config, std::uint64_t seed) {
    config.validate();
    for (double f : fractions)
        if (!(f > 0.0) || f > 1.0)
            throw PreconditionError("ablation fraction must be in (0, 1], got " +
                                    std::to_string(f));

    const core::DatasetManifest train_part = dataset::filter_split(manifest, core::Split::train);

    AblationTable table;
    for (double fraction : fractions) {
        // One shared subsample seed nests the kept prefixes across fractions.
        const core::DatasetManifest reduced = dataset::subsample_images(train_part, fraction, seed);
        for (const bool with_synthetic : {false, true}) {
            const std::string arm_name = with_synthetic ? "with_synthetic" : "without_synthetic";
            core::DatasetManifest train_data =
                with_synthetic ? dataset::merge(reduced, synthetic) : reduced;
            std::unique_ptr<RetrievalModel> model;
            EvalResult result;
            try {
                model = train_fn(train_data, seed);
                result = evaluate(*model, manifest, core::Split::test, config);
            } catch (const std::exception& e) {
                throw Error("ablation arm (fraction " + format2(fraction) + ", " + arm_name +
                            ") failed: " + e.what());
            }
            table.arms.push_back({fraction, arm_name, std::move(result)});
        }
    }
    return table;
}

}  // namespace cirforge::evalkit
