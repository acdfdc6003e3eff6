// Copyright (C) 2026 CIRForge Contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cirforge/manifest.hpp"

namespace cirforge::evalkit {

/// Fixed-length real embedding.
struct EmbeddingVector {
    std::vector<double> values;

    std::size_t dim() const { return values.size(); }
    double norm() const;
    /// Scales to unit L2 norm; the zero vector stays zero.
    EmbeddingVector& normalize();

    friend bool operator==(const EmbeddingVector&, const EmbeddingVector&) = default;
};

/// Cosine similarity. Throws on dimension mismatch; zero vectors score 0.
double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b);

struct EvalConfig {
    std::vector<int> ks = {1, 5, 10, 50};
    /// Remove the query's reference image from the gallery before ranking
    /// (the CIRR protocol; FashionIQ-style evaluation keeps it).
    bool exclude_reference = true;

    void validate() const;  // ks non-empty, positive, strictly ascending
};

struct EvalResult {
    std::map<int, double> recall_at;  // percentage in [0, 100], 2 decimals
    std::size_t num_queries = 0;

    friend bool operator==(const EvalResult&, const EvalResult&) = default;
};

/// Recall@k from the 1-based rank of each query's ground truth:
/// 100 * |{p <= k}| / num_queries, reported to 2 decimals.
/// Throws on an empty position list (the metric is undefined).
EvalResult recall_at_k(const std::vector<std::size_t>& ranked_target_positions,
                       const std::vector<int>& ks);

struct GalleryItem {
    std::string image_id;
    EmbeddingVector embedding;
};

/// Ids sorted by descending cosine similarity to the query, ties broken by
/// ascending image_id; exclude_id is removed before ranking. Parallel over
/// gallery items.
std::vector<std::string> rank_gallery(const EmbeddingVector& query,
                                      const std::vector<GalleryItem>& gallery,
                                      const std::optional<std::string>& exclude_id = std::nullopt);

/// 1-based rank the target would get from rank_gallery, computed without
/// materializing the full ordering. Throws if target_id is absent.
std::size_t gallery_rank_of(const EmbeddingVector& query, const std::vector<GalleryItem>& gallery,
                            const std::string& target_id,
                            const std::optional<std::string>& exclude_id = std::nullopt);

/// What evaluate() needs from a CIR model: image embeddings for the gallery
/// and a composed query embedding for (reference image, modification text).
class RetrievalModel {
public:
    virtual ~RetrievalModel() = default;
    virtual EmbeddingVector embed_image(const core::ImageRecord& image) const = 0;
    virtual EmbeddingVector compose(const core::ImageRecord& reference,
                                    const std::string& text) const = 0;
};

/// Ranks the split's whole image gallery for every triplet whose reference
/// lies in the split; the ground-truth position is the rank of the triplet's
/// target. Queries run in parallel. A target missing from the gallery
/// aborts with the triplet id.
EvalResult evaluate(const RetrievalModel& model, const core::DatasetManifest& manifest,
                    core::Split split, const EvalConfig& config);

struct ResultsTable {
    std::string text;  // fixed-width
    std::string csv;   // label,k,recall
};

/// All rows must share the same ks.
ResultsTable render_results_table(const std::vector<std::pair<std::string, EvalResult>>& rows);

struct AblationArm {
    double fraction = 1.0;
    std::string arm;  // "without_synthetic" | "with_synthetic"
    EvalResult result;
};

struct AblationTable {
    std::vector<AblationArm> arms;

    /// CSV schema: fraction,arm,k,recall (2-decimal numbers).
    std::string to_csv() const;
};

using TrainFn = std::function<std::unique_ptr<RetrievalModel>(
    const core::DatasetManifest& train_data, std::uint64_t seed)>;

/// For each fraction: subsample the manifest's train images (one shared seed
/// keeps the prefixes nested), train one arm on the surviving manual
/// triplets and one on those plus the synthetic pool, and evaluate both on
/// the manifest's test split.
AblationTable run_ablation(const core::DatasetManifest& manifest,
                           const std::vector<double>& fractions,
                           const core::DatasetManifest& synthetic, const TrainFn& train_fn,
                           const EvalConfig& config, std::uint64_t seed);

}  // namespace cirforge::evalkit
