// Copyright (C) 2026 CIRForge Contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "cirforge/manifest.hpp"

namespace cirforge::dataset {

/// Loads a CIRR split: caption records
///   {pairid: int, reference: string, target_hard: string, caption: string}
/// plus the split file mapping image name to relative path. Extra fields in
/// the public release are ignored so real data loads unmodified.
core::DatasetManifest load_cirr(const std::filesystem::path& captions_file,
                                const std::filesystem::path& split_file,
                                const std::filesystem::path& root,
                                core::Split split = core::Split::train);

/// Loads FashionIQ category caption files
///   {candidate: string, target: string, captions: [string, string]}
/// The per-pair captions are joined with " and " into one modification text
/// and kept alongside as source_captions.
core::DatasetManifest load_fashioniq(const std::vector<std::filesystem::path>& captions_files,
                                     const std::filesystem::path& root,
                                     core::Split split = core::Split::train);

/// round_half_up(fraction * count): the image count a subsample keeps.
std::size_t subsample_count(double fraction, std::size_t count);

/// Keeps a seeded uniform sample of the images (a prefix of one seeded
/// permutation, so smaller fractions are nested inside larger ones under the
/// same seed) and exactly the triplets whose both endpoints survive.
/// fraction 1.0 is the identity.
core::DatasetManifest subsample_images(const core::DatasetManifest& manifest, double fraction,
                                       std::uint64_t seed);

/// Union of images and triplets, provenance preserved. Identical records
/// under the same id merge; conflicting ones raise IntegrityError. Never
/// drops a triplet.
core::DatasetManifest merge(const core::DatasetManifest& manual,
                            const core::DatasetManifest& synthetic);

/// The sub-manifest of one split: its images plus the triplets fully inside
/// that split.
core::DatasetManifest filter_split(const core::DatasetManifest& manifest, core::Split split);

/// Writes the manifest's triplets in the CIRR schema (captions + split
/// map). Synthetic triplets put the synthetic target id in target_hard.
void export_cirr(const core::DatasetManifest& manifest,
                 const std::filesystem::path& captions_file,
                 const std::filesystem::path& split_file);

/// Writes the manifest's triplets in the FashionIQ schema. Triplets without
/// stored source captions export the modification text as a one-element
/// caption list.
void export_fashioniq(const core::DatasetManifest& manifest,
                      const std::filesystem::path& captions_file);

}  // namespace cirforge::dataset
