// Copyright (C) 2026 CIRForge Contributors
// SPDX-License-Identifier: Apache-2.0
//
// Benchmark comparing the OpenMP evaluation kernels against the serial
// reference implementations, plus the toy synthesis loop at 1 vs N workers.

#include <chrono>
#include <cstdio>
#include <random>

#include "CLI11.hpp"
#include "cirforge/dataset.hpp"
#include "cirforge/hash.hpp"
#include "cirforge/pipeline.hpp"
#include "cirforge/reference.hpp"
#include "cirforge/toycir.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

using namespace cirforge;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

evalkit::EmbeddingVector random_unit(std::mt19937_64& rng, std::size_t dim) {
    evalkit::EmbeddingVector v;
    v.values.resize(dim);
    for (double& x : v.values) x = draw_unit(rng) * 2.0 - 1.0;
    return v.normalize();
}

void bench_ranking(std::size_t gallery_size, std::size_t queries, std::size_t dim,
                   bool run_oracle) {
    std::mt19937_64 rng(1);
    std::vector<evalkit::GalleryItem> gallery;
    gallery.reserve(gallery_size);
    for (std::size_t i = 0; i < gallery_size; ++i)
        gallery.push_back({"img" + std::to_string(i), random_unit(rng, dim)});
    std::vector<evalkit::EmbeddingVector> qs;
    for (std::size_t i = 0; i < queries; ++i) qs.push_back(random_unit(rng, dim));

    auto rank_all = [&](std::vector<std::size_t>& out) {
#pragma omp parallel for schedule(dynamic)
        for (long i = 0; i < static_cast<long>(queries); ++i)
            out[i] = evalkit::gallery_rank_of(qs[i], gallery,
                                              gallery[i % gallery_size].image_id);
    };

    // Same kernel, one thread vs all threads.
#ifdef _OPENMP
    const int threads = omp_get_max_threads();
    omp_set_num_threads(1);
#endif
    std::vector<std::size_t> ranks_single(queries);
    auto start = Clock::now();
    rank_all(ranks_single);
    const double single_s = seconds_since(start);
#ifdef _OPENMP
    omp_set_num_threads(threads);
#endif
    std::vector<std::size_t> ranks_parallel(queries);
    start = Clock::now();
    rank_all(ranks_parallel);
    const double parallel_s = seconds_since(start);

    bool agree = ranks_parallel == ranks_single;
    std::string oracle_note;
    if (run_oracle) {
        // The naive selection-sort oracle kept for testing; quadratic in the
        // gallery, so only sensible at small sizes.
        start = Clock::now();
        std::vector<std::size_t> ranks_oracle(queries);
        for (std::size_t i = 0; i < queries; ++i)
            ranks_oracle[i] = reference::gallery_rank_of_serial(
                qs[i], gallery, gallery[i % gallery_size].image_id);
        const double oracle_s = seconds_since(start);
        agree &= ranks_oracle == ranks_parallel;
        char buf[48];
        std::snprintf(buf, sizeof(buf), "  oracle %.3fs", oracle_s);
        oracle_note = buf;
    }
    std::printf("rank   gallery=%-6zu queries=%-5zu dim=%-3zu  1 thread %.3fs  parallel %.3fs  "
                "speedup %.2fx%s  %s\n",
                gallery_size, queries, dim, single_s, parallel_s, single_s / parallel_s,
                oracle_note.c_str(), agree ? "results agree" : "RESULTS DIFFER");
}

void bench_synthesis(std::size_t scenes, std::size_t n, int workers) {
    const auto dir = std::filesystem::temp_directory_path() /
                     ("cirforge_bench_" + std::to_string(::getpid()) + "_" +
                      std::to_string(workers));
    std::filesystem::create_directories(dir);

    pipeline::ToyWorldSpec spec;
    spec.train_scenes = scenes;
    spec.train_triplets = 0;
    spec.test_scenes = 2;
    spec.test_triplets = 0;
    const auto world = pipeline::make_toy_world(spec, captioner::Vocabulary::builtin(), dir, 3);
    const auto pool = dataset::filter_split(world, core::Split::train);

    pipeline::SynthesisConfig config;
    config.media_root = dir;
    config.workers = workers;
#ifdef _OPENMP
    omp_set_num_threads(workers);
#endif
    const auto start = Clock::now();
    const auto report = pipeline::synthesize_triplets(pool, n, pipeline::toy_backends(), config, 5);
    const double elapsed = seconds_since(start);
    std::printf("synth  scenes=%-6zu n=%-7zu workers=%d  %.3fs  (%zu produced)\n", scenes, n,
                workers, elapsed, report.produced);

    std::error_code ec;
    std::filesystem::remove_all(dir, ec);
#ifdef _OPENMP
    omp_set_num_threads(0 < workers ? omp_get_num_procs() : 1);
#endif
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"parallel vs serial kernel benchmark"};
    std::size_t gallery = 4000, queries = 400, dim = 64, scenes = 200, triplets = 1000;
    bool quick = false;
    app.add_option("--gallery", gallery, "gallery size for ranking");
    app.add_option("--queries", queries, "ranking queries");
    app.add_option("--dim", dim, "embedding dimension");
    app.add_option("--scenes", scenes, "toy pool size for synthesis");
    app.add_option("--triplets", triplets, "synthesis target count");
    app.add_flag("--quick", quick, "tiny sizes for smoke testing");
    CLI11_PARSE(app, argc, argv);

    if (quick) {
        gallery = 200;
        queries = 40;
        scenes = 20;
        triplets = 40;
    }

#ifdef _OPENMP
    std::printf("OpenMP enabled, max threads %d\n", omp_get_max_threads());
#else
    std::printf("OpenMP disabled: parallel kernels run serially\n");
#endif
    bench_ranking(gallery, queries, dim, /*run_oracle=*/quick);
    bench_ranking(gallery / 4, queries * 2, dim / 2, /*run_oracle=*/quick);
    bench_synthesis(scenes, triplets, 1);
#ifdef _OPENMP
    bench_synthesis(scenes, triplets, omp_get_num_procs());
#endif
    return 0;
}
