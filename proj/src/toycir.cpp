// Copyright (C) 2026 CIRForge Contributors
// SPDX-License-Identifier: Apache-2.0

#include "cirforge/toycir.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "cirforge/errors.hpp"
#include "cirforge/hash.hpp"
#include "cirforge/toyworld.hpp"
#include "json.hpp"

namespace cirforge::toycir {

using evalkit::EmbeddingVector;

EmbeddingVector hash_tokens(const std::vector<std::string>& tokens, int dim,
                            std::uint64_t hash_seed) {
    if (dim < 1) throw ConfigError("embedding dim must be positive");
    EmbeddingVector v;
    v.values.assign(static_cast<std::size_t>(dim), 0.0);
    for (const auto& token : tokens) {
        const std::uint64_t h1 = seeded_hash(hash_seed, token);
        const std::uint64_t h2 = seeded_hash(hash_seed ^ 0xA3C59AC2B0F1E5D7ULL, token);
        v.values[h1 % dim] += (h1 >> 32) & 1 ? 1.0 : -1.0;
        v.values[h2 % dim] += (h2 >> 32) & 1 ? 1.0 : -1.0;
    }
    return v;
}

namespace {

std::vector<std::string> scene_tokens(const captioner::SceneMeta& scene) {
    std::vector<std::string> tokens;
    auto add = [&](const std::string& value) {
        for (auto& t : core::tokenize(value)) tokens.push_back(std::move(t));
    };
    add(scene.adjective);
    add(scene.subject);
    add(scene.background);
    add(scene.domain);
    if (scene.object) add(*scene.object);
    return tokens;
}

std::filesystem::path resolve(const std::filesystem::path& root, const std::string& rel) {
    std::filesystem::path p(rel);
    if (p.is_absolute() || root.empty()) return p;
    return root / p;
}

}  // namespace

EmbeddingVector featurize_toy_image(const core::ImageRecord& record,
                                    const std::filesystem::path& media_root, int dim,
                                    std::uint64_t hash_seed) {
    if (!record.sidecar)
        throw IoError("image " + record.image_id + " has no scene sidecar to featurize");
    const auto scene = captioner::load_scene(resolve(media_root, *record.sidecar));
    EmbeddingVector v = hash_tokens(scene_tokens(scene), dim, hash_seed);
    return v.normalize();
}

EmbeddingVector featurize_text(const std::string& text, int dim, std::uint64_t hash_seed) {
    auto tokens = core::tokenize(text);
    std::vector<std::string> grams = tokens;
    for (std::size_t i = 0; i + 1 < tokens.size(); ++i)
        grams.push_back(tokens[i] + "_" + tokens[i + 1]);
    EmbeddingVector v = hash_tokens(grams, dim, hash_seed);
    return v.normalize();
}

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (learning_rate <= 0) throw ConfigError("learning_rate must be positive");
    if (temperature <= 0) throw ConfigError("temperature must be positive");
}

CIRModel::CIRModel(int dim, std::uint64_t hash_seed, std::filesystem::path media_root)
    : dim_(dim), hash_seed_(hash_seed), media_root_(std::move(media_root)) {
    if (dim < 1) throw ConfigError("embedding dim must be positive");
    const std::size_t d = static_cast<std::size_t>(dim);
    params_.assign(d * 2 * d + d, 0.0);
    // Identity fusion: W = [I | I], b = 0.
    for (std::size_t r = 0; r < d; ++r) {
        params_[r * 2 * d + r] = 1.0;
        params_[r * 2 * d + d + r] = 1.0;
    }
}

EmbeddingVector CIRModel::embed_image(const core::ImageRecord& image) const {
    return featurize_toy_image(image, media_root_, dim_, hash_seed_);
}

EmbeddingVector CIRModel::text_embed(const std::string& text) const {
    return featurize_text(text, dim_, hash_seed_);
}

EmbeddingVector CIRModel::compose_embeddings(const EmbeddingVector& image,
                                             const EmbeddingVector& text) const {
    const std::size_t d = static_cast<std::size_t>(dim_);
    if (image.dim() != d || text.dim() != d)
        throw Error("compose expects embeddings of dim " + std::to_string(dim_));
    EmbeddingVector out;
    out.values.assign(d, 0.0);
    for (std::size_t r = 0; r < d; ++r) {
        double acc = params_[2 * d * d + r];  // bias
        const double* row = &params_[r * 2 * d];
        for (std::size_t c = 0; c < d; ++c) acc += row[c] * image.values[c];
        for (std::size_t c = 0; c < d; ++c) acc += row[d + c] * text.values[c];
        out.values[r] = acc;
    }
    return out.normalize();
}

EmbeddingVector CIRModel::compose(const core::ImageRecord& reference,
                                  const std::string& text) const {
    return compose_embeddings(embed_image(reference), text_embed(text));
}

namespace {
constexpr char kCheckpointMagic[4] = {'C', 'F', 'C', 'K'};
constexpr std::uint8_t kCheckpointVersion = 1;

void put_u32le(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out += static_cast<char>((v >> (8 * i)) & 0xFF);
}

void put_f64le(std::string& out, double d) {
    const std::uint64_t bits = std::bit_cast<std::uint64_t>(d);
    for (int i = 0; i < 8; ++i) out += static_cast<char>((bits >> (8 * i)) & 0xFF);
}
}  // namespace

void CIRModel::save_checkpoint(const std::filesystem::path& file) const {
    nlohmann::ordered_json header;
    header["format_version"] = kCheckpointVersion;
    header["dim"] = dim_;
    header["hash_seed"] = hash_seed_;
    header["params"] = params_.size();
    const std::string header_text = header.dump();

    std::string bytes(kCheckpointMagic, 4);
    bytes += static_cast<char>(kCheckpointVersion);
    put_u32le(bytes, static_cast<std::uint32_t>(header_text.size()));
    bytes += header_text;
    for (double p : params_) put_f64le(bytes, p);

    std::ofstream out(file, std::ios::binary);
    if (!out) throw IoError("cannot open " + file.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + file.string());
}

CIRModel CIRModel::load_checkpoint(const std::filesystem::path& file,
                                   std::filesystem::path media_root) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + file.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    const std::string bytes = buffer.str();

    if (bytes.size() < 9 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
        throw ParseError("bad_checkpoint", file.string() + " is not a model checkpoint");
    if (static_cast<std::uint8_t>(bytes[4]) != kCheckpointVersion)
        throw ParseError("bad_checkpoint", "unsupported checkpoint version");
    std::uint32_t header_len = 0;
    for (int i = 0; i < 4; ++i)
        header_len |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes[5 + i]))
                      << (8 * i);
    if (bytes.size() < 9 + header_len)
        throw ParseError("bad_checkpoint", "truncated checkpoint header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(9, header_len));
    } catch (const nlohmann::json::exception&) {
        throw ParseError("bad_checkpoint", "checkpoint header is not valid JSON");
    }
    const int dim = header.at("dim").get<int>();
    const std::uint64_t hash_seed = header.at("hash_seed").get<std::uint64_t>();
    const std::size_t count = header.at("params").get<std::size_t>();

    CIRModel model(dim, hash_seed, std::move(media_root));
    if (model.params_.size() != count)
        throw ParseError("bad_checkpoint", "parameter count does not match dim");
    if (bytes.size() != 9 + header_len + count * 8)
        throw ParseError("bad_checkpoint", "truncated parameter data");
    for (std::size_t i = 0; i < count; ++i) {
        std::uint64_t bits = 0;
        for (int k = 0; k < 8; ++k)
            bits |= static_cast<std::uint64_t>(
                        static_cast<std::uint8_t>(bytes[9 + header_len + i * 8 + k]))
                    << (8 * k);
        model.params_[i] = std::bit_cast<double>(bits);
    }
    return model;
}

std::vector<TrainExample> prepare_examples(const CIRModel& model,
                                           const std::vector<core::Triplet>& triplets,
                                           const core::DatasetManifest& manifest) {
    std::unordered_map<std::string, const core::ImageRecord*> by_id;
    for (const auto& rec : manifest.images) by_id[rec.image_id] = &rec;

    std::unordered_map<std::string, EmbeddingVector> image_cache;
    auto image_embedding = [&](const std::string& id) -> const EmbeddingVector& {
        auto cached = image_cache.find(id);
        if (cached != image_cache.end()) return cached->second;
        const auto rec = by_id.find(id);
        if (rec == by_id.end())
            throw IntegrityError("triplet references unknown image \"" + id + "\"");
        return image_cache.emplace(id, model.embed_image(*rec->second)).first->second;
    };

    std::vector<TrainExample> examples;
    examples.reserve(triplets.size());
    for (const auto& t : triplets) {
        TrainExample ex;
        const EmbeddingVector& ref = image_embedding(t.reference_image_id);
        const EmbeddingVector text = model.text_embed(t.modification_text);
        ex.fused_input.reserve(ref.dim() + text.dim());
        ex.fused_input.insert(ex.fused_input.end(), ref.values.begin(), ref.values.end());
        ex.fused_input.insert(ex.fused_input.end(), text.values.begin(), text.values.end());
        ex.target = image_embedding(t.target_image_id);
        ex.reference_image_id = t.reference_image_id;
        ex.target_image_id = t.target_image_id;
        examples.push_back(std::move(ex));
    }
    return examples;
}

double batch_loss_and_grad(const CIRModel& model, std::span<const TrainExample> batch,
                           double temperature, std::vector<double>* grad) {
    const std::size_t d = static_cast<std::size_t>(model.dim());
    const std::size_t batch_size = batch.size();
    if (batch_size == 0) throw PreconditionError("empty batch");
    const auto& params = model.params();
    if (grad) grad->assign(params.size(), 0.0);

    // Forward: u_i = W z_i + b, q_i = u_i / |u_i|.
    std::vector<std::vector<double>> u(batch_size), q(batch_size);
    std::vector<double> norms(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) {
        u[i].assign(d, 0.0);
        for (std::size_t r = 0; r < d; ++r) {
            double acc = params[2 * d * d + r];
            const double* row = &params[r * 2 * d];
            const double* z = batch[i].fused_input.data();
            for (std::size_t c = 0; c < 2 * d; ++c) acc += row[c] * z[c];
            u[i][r] = acc;
        }
        double norm = 0;
        for (double v : u[i]) norm += v * v;
        norm = std::sqrt(norm);
        norms[i] = norm;
        if (!std::isfinite(norm)) throw TrainingError("non-finite fusion output");
        if (norm < 1e-12) throw TrainingError("fusion output collapsed to zero");
        q[i] = u[i];
        for (double& v : q[i]) v /= norm;
    }

    // Scores and row-wise softmax with max subtraction.
    double loss = 0;
    std::vector<double> scores(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) {
        double row_max = -1e300;
        for (std::size_t j = 0; j < batch_size; ++j) {
            double s = 0;
            for (std::size_t r = 0; r < d; ++r) s += q[i][r] * batch[j].target.values[r];
            scores[j] = s / temperature;
            row_max = std::max(row_max, scores[j]);
        }
        double denom = 0;
        for (std::size_t j = 0; j < batch_size; ++j) denom += std::exp(scores[j] - row_max);
        loss += -(scores[i] - row_max) + std::log(denom);

        if (grad) {
            // dL/dq_i = (sum_j p_ij t_j - t_i) / (B * temperature)
            std::vector<double> gq(d, 0.0);
            for (std::size_t j = 0; j < batch_size; ++j) {
                const double p = std::exp(scores[j] - row_max) / denom;
                for (std::size_t r = 0; r < d; ++r) gq[r] += p * batch[j].target.values[r];
            }
            for (std::size_t r = 0; r < d; ++r)
                gq[r] = (gq[r] - batch[i].target.values[r]) /
                        (static_cast<double>(batch_size) * temperature);

            // Through the normalization: gu = (gq - (gq.q) q) / |u|.
            double gq_dot_q = 0;
            for (std::size_t r = 0; r < d; ++r) gq_dot_q += gq[r] * q[i][r];
            for (std::size_t r = 0; r < d; ++r) {
                const double gu = (gq[r] - gq_dot_q * q[i][r]) / norms[i];
                double* wrow = &(*grad)[r * 2 * d];
                const double* z = batch[i].fused_input.data();
                for (std::size_t c = 0; c < 2 * d; ++c) wrow[c] += gu * z[c];
                (*grad)[2 * d * d + r] += gu;
            }
        }
    }
    return loss / static_cast<double>(batch_size);
}

std::vector<double> train(CIRModel& model, const std::vector<core::Triplet>& triplets,
                          const core::DatasetManifest& manifest, const TrainConfig& config) {
    config.validate();
    if (triplets.empty()) throw PreconditionError("no triplets to train on");
    if (static_cast<std::size_t>(config.batch_size) > triplets.size())
        throw PreconditionError("batch_size " + std::to_string(config.batch_size) +
                                " exceeds triplet count " + std::to_string(triplets.size()));

    const auto examples = prepare_examples(model, triplets, manifest);
    std::vector<std::size_t> order(examples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::mt19937_64 rng(config.seed);

    std::vector<double> trace;
    std::vector<double> grad;
    std::vector<TrainExample> batch;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        deterministic_shuffle(order, rng);
        double epoch_loss = 0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t end =
                std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            batch.clear();
            for (std::size_t i = start; i < end; ++i) batch.push_back(examples[order[i]]);

            const auto batch_dump = [&] {
                std::string dump;
                for (const auto& ex : batch)
                    dump += " <" + ex.reference_image_id + " -> " + ex.target_image_id + ">";
                return dump;
            };
            double loss;
            try {
                loss = batch_loss_and_grad(model, batch, config.temperature, &grad);
            } catch (const TrainingError& e) {
                throw TrainingError(std::string(e.what()) + " in epoch " + std::to_string(epoch) +
                                    "; batch:" + batch_dump());
            }
            if (!std::isfinite(loss))
                throw TrainingError("non-finite loss in epoch " + std::to_string(epoch) +
                                    "; batch:" + batch_dump());
            auto& params = model.params();
            for (std::size_t i = 0; i < params.size(); ++i)
                params[i] -= config.learning_rate * grad[i];
            epoch_loss += loss * static_cast<double>(end - start);
        }
        trace.push_back(epoch_loss / static_cast<double>(order.size()));
    }
    return trace;
}

double finite_difference_check(CIRModel& model, std::span<const TrainExample> batch,
                               double temperature, double epsilon) {
    if (epsilon <= 0) throw PreconditionError("epsilon must be positive");
    std::vector<double> analytic;
    batch_loss_and_grad(model, batch, temperature, &analytic);

    auto& params = model.params();
    double worst = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double saved = params[i];
        params[i] = saved + epsilon;
        const double up = batch_loss_and_grad(model, batch, temperature, nullptr);
        params[i] = saved - epsilon;
        const double down = batch_loss_and_grad(model, batch, temperature, nullptr);
        params[i] = saved;
        const double fd = (up - down) / (2 * epsilon);
        const double rel =
            std::abs(analytic[i] - fd) / std::max(1e-4, std::abs(analytic[i]) + std::abs(fd));
        worst = std::max(worst, rel);
    }
    return worst;
}

}  // namespace cirforge::toycir
