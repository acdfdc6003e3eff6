// Copyright (C) 2026 CIRForge Contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "cirforge/evalkit.hpp"

namespace cirforge::reference {

// Serial reference implementations of the parallel evaluation kernels.
// Plain loops, no OpenMP, no shared ranking helpers: they exist so tests can
// cross-check the parallel paths and the benchmark can compare them.

std::vector<std::string> rank_gallery_serial(
    const evalkit::EmbeddingVector& query, const std::vector<evalkit::GalleryItem>& gallery,
    const std::optional<std::string>& exclude_id = std::nullopt);

std::size_t gallery_rank_of_serial(const evalkit::EmbeddingVector& query,
                                   const std::vector<evalkit::GalleryItem>& gallery,
                                   const std::string& target_id,
                                   const std::optional<std::string>& exclude_id = std::nullopt);

evalkit::EvalResult recall_at_k_serial(const std::vector<std::size_t>& positions,
                                       const std::vector<int>& ks);

std::vector<evalkit::GalleryItem> embed_gallery_serial(
    const evalkit::RetrievalModel& model, const std::vector<core::ImageRecord>& images);

}  // namespace cirforge::reference
