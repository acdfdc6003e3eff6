// Copyright (C) 2026 CIRForge Contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cirforge/evalkit.hpp"

namespace cirforge::toycir {

inline constexpr int kDefaultDim = 64;
inline constexpr std::uint64_t kDefaultHashSeed = 0x9E3779B97F4A7C15ULL;

/// Signed feature hashing of tokens into a dim-length vector (two probes per
/// token). Not normalized; callers normalize the final embedding.
evalkit::EmbeddingVector hash_tokens(const std::vector<std::string>& tokens, int dim,
                                     std::uint64_t hash_seed);

/// Hashed bag-of-attributes embedding of a toy image, read from its scene
/// sidecar. Unit-normalized, deterministic. Throws when the sidecar is
/// missing.
evalkit::EmbeddingVector featurize_toy_image(const core::ImageRecord& record,
                                             const std::filesystem::path& media_root = {},
                                             int dim = kDefaultDim,
                                             std::uint64_t hash_seed = kDefaultHashSeed);

/// Hashed bag of words plus adjacent-word bigrams, sharing the image hash
/// space so attribute words in the text and in scenes collide intentionally.
evalkit::EmbeddingVector featurize_text(const std::string& text, int dim = kDefaultDim,
                                        std::uint64_t hash_seed = kDefaultHashSeed);

struct TrainConfig {
    int epochs = 30;
    int batch_size = 32;
    double learning_rate = 0.5;
    double temperature = 0.1;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Minimal trainable CIR model: fixed hashed encoders for image and text, a
/// trainable affine fusion over their concatenation, unit-normalized output.
class CIRModel final : public evalkit::RetrievalModel {
public:
    explicit CIRModel(int dim = kDefaultDim, std::uint64_t hash_seed = kDefaultHashSeed,
                      std::filesystem::path media_root = {});

    int dim() const { return dim_; }
    std::uint64_t hash_seed() const { return hash_seed_; }
    const std::filesystem::path& media_root() const { return media_root_; }
    void set_media_root(std::filesystem::path root) { media_root_ = std::move(root); }

    /// W (dim x 2*dim, row-major) followed by b (dim). Initialized to the
    /// identity fusion: compose = normalize(image + text).
    std::vector<double>& params() { return params_; }
    const std::vector<double>& params() const { return params_; }

    evalkit::EmbeddingVector embed_image(const core::ImageRecord& image) const override;
    evalkit::EmbeddingVector text_embed(const std::string& text) const;
    /// normalize(W [image; text] + b)
    evalkit::EmbeddingVector compose_embeddings(const evalkit::EmbeddingVector& image,
                                                const evalkit::EmbeddingVector& text) const;
    evalkit::EmbeddingVector compose(const core::ImageRecord& reference,
                                     const std::string& text) const override;

    /// Versioned binary container: magic, JSON header (format_version, dim,
    /// hash_seed, params), raw little-endian doubles.
    void save_checkpoint(const std::filesystem::path& file) const;
    static CIRModel load_checkpoint(const std::filesystem::path& file,
                                    std::filesystem::path media_root = {});

private:
    int dim_;
    std::uint64_t hash_seed_;
    std::filesystem::path media_root_;
    std::vector<double> params_;
};

/// Precomputed features for one training triplet.
struct TrainExample {
    std::vector<double> fused_input;     // [image; text], length 2*dim
    evalkit::EmbeddingVector target;     // unit target-image embedding
    std::string reference_image_id;
    std::string target_image_id;
};

/// Resolves and embeds every triplet endpoint. Throws when a triplet's
/// media cannot be resolved.
std::vector<TrainExample> prepare_examples(const CIRModel& model,
                                           const std::vector<core::Triplet>& triplets,
                                           const core::DatasetManifest& manifest);

/// Mean in-batch contrastive loss
///   -log softmax_j( compose(ref_i, t_i) . target_j / temperature ) at j = i
/// and, when grad is non-null, its analytic gradient in param layout.
double batch_loss_and_grad(const CIRModel& model, std::span<const TrainExample> batch,
                           double temperature, std::vector<double>* grad);

/// Plain SGD over seeded shuffled batches. Returns the per-epoch mean loss.
/// Deterministic for fixed (data, config.seed). Throws TrainingError with
/// the offending batch's triplet ids when the loss turns non-finite.
std::vector<double> train(CIRModel& model, const std::vector<core::Triplet>& triplets,
                          const core::DatasetManifest& manifest, const TrainConfig& config);

/// Max over parameters of |analytic - central difference| divided by
/// max(1e-4, |analytic| + |difference|).
double finite_difference_check(CIRModel& model, std::span<const TrainExample> batch,
                               double temperature, double epsilon);

}  // namespace cirforge::toycir
