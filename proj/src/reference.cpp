// Copyright (C) 2026 CIRForge Contributors
// SPDX-License-Identifier: Apache-2.0

#include "cirforge/reference.hpp"

#include <cmath>

#include "cirforge/errors.hpp"

namespace cirforge::reference {

using evalkit::EmbeddingVector;
using evalkit::GalleryItem;

namespace {

double dot_over_norms(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.dim() != b.dim()) throw Error("embedding dimension mismatch");
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        dot += a.values[i] * b.values[i];
        na += a.values[i] * a.values[i];
        nb += b.values[i] * b.values[i];
    }
    const double denom = std::sqrt(na) * std::sqrt(nb);
    return denom > 0 ? dot / denom : 0.0;
}

}  // namespace

std::vector<std::string> rank_gallery_serial(const EmbeddingVector& query,
                                             const std::vector<GalleryItem>& gallery,
                                             const std::optional<std::string>& exclude_id) {
    struct Scored {
        double sim;
        const std::string* id;
    };
    std::vector<Scored> scored;
    for (const auto& item : gallery) {
        if (exclude_id && item.image_id == *exclude_id) continue;
        scored.push_back({dot_over_norms(query, item.embedding), &item.image_id});
    }
    // Selection by repeated scan keeps this path independent of std::sort.
    std::vector<std::string> ranked;
    std::vector<bool> taken(scored.size(), false);
    for (std::size_t round = 0; round < scored.size(); ++round) {
        std::size_t best = scored.size();
        for (std::size_t i = 0; i < scored.size(); ++i) {
            if (taken[i]) continue;
            if (best == scored.size() || scored[i].sim > scored[best].sim ||
                (scored[i].sim == scored[best].sim && *scored[i].id < *scored[best].id))
                best = i;
        }
        taken[best] = true;
        ranked.push_back(*scored[best].id);
    }
    return ranked;
}

std::size_t gallery_rank_of_serial(const EmbeddingVector& query,
                                   const std::vector<GalleryItem>& gallery,
                                   const std::string& target_id,
                                   const std::optional<std::string>& exclude_id) {
    const auto ranked = rank_gallery_serial(query, gallery, exclude_id);
    for (std::size_t i = 0; i < ranked.size(); ++i)
        if (ranked[i] == target_id) return i + 1;
    throw Error("target \"" + target_id + "\" is not in the gallery");
}

evalkit::EvalResult recall_at_k_serial(const std::vector<std::size_t>& positions,
                                       const std::vector<int>& ks) {
    if (positions.empty()) throw Error("recall is undefined for an empty position list");
    evalkit::EvalResult result;
    result.num_queries = positions.size();
    for (int k : ks) {
        std::size_t hits = 0;
        for (std::size_t p : positions)
            if (p <= static_cast<std::size_t>(k)) ++hits;
        const double pct = 100.0 * static_cast<double>(hits) / static_cast<double>(positions.size());
        result.recall_at[k] = std::floor(pct * 100.0 + 0.5) / 100.0;
    }
    return result;
}

std::vector<GalleryItem> embed_gallery_serial(const evalkit::RetrievalModel& model,
                                              const std::vector<core::ImageRecord>& images) {
    std::vector<GalleryItem> gallery;
    gallery.reserve(images.size());
    for (const auto& rec : images)
        gallery.push_back({rec.image_id, model.embed_image(rec)});
    return gallery;
}

}  // namespace cirforge::reference
