// SPDX-License-Identifier: Apache-2.0

#include "streammem/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "streammem/errors.hpp"

namespace streammem {

namespace {

enum WeightKind : std::uint64_t { kQuery = 1, kKey = 2, kValue = 3, kOutput = 4, kSlot = 5 };

Matrix scaled_random(std::size_t rows, std::size_t cols, std::uint64_t seed, double scale) {
    Matrix m = seeded_random_matrix(rows, cols, seed);
    for (float& x : m.data()) {
        x = static_cast<float>(x * scale);
    }
    return m;
}

} // namespace

RopeConfig EncoderConfig::rope_config() const {
    RopeConfig r = rope;
    r.head_dim = head_dim;
    return r;
}

void EncoderConfig::validate() const {
    if (n_layers == 0 || n_heads == 0 || head_dim == 0 || tokens_per_frame == 0) {
        throw ConfigError("encoder: layer, head, head_dim and tokens_per_frame counts must be >= 1");
    }
    if (!std::isfinite(projector_jitter) || projector_jitter < 0.0f) {
        throw ConfigError("encoder: projector jitter must be finite and nonnegative");
    }
    rope_config().validate();
}

std::string_view to_string(ProxyMode m) {
    switch (m) {
    case ProxyMode::template_proxy:
        return "template";
    case ProxyMode::generic_text:
        return "generic";
    case ProxyMode::true_query:
        return "true";
    }
    return "?";
}

ProxyMode parse_proxy_mode(std::string_view s) {
    if (s == "template" || s == "template_proxy") {
        return ProxyMode::template_proxy;
    }
    if (s == "generic" || s == "generic_text") {
        return ProxyMode::generic_text;
    }
    if (s == "true" || s == "true_query") {
        return ProxyMode::true_query;
    }
    throw ConfigError("unknown query mode '" + std::string(s) + "'");
}

ProxyQuery ProxyQuery::fixed(ProxyMode mode, std::size_t d_model) {
    switch (mode) {
    case ProxyMode::template_proxy:
        return {mode, seeded_random_matrix(kTemplateProxyRows, d_model, kTemplateProxySeed)};
    case ProxyMode::generic_text:
        return {mode, seeded_random_matrix(kGenericTextRows, d_model, kGenericTextSeed)};
    case ProxyMode::true_query:
        break;
    }
    throw ConfigError("true_query proxy vectors must be supplied by the caller");
}

ProxyQuery ProxyQuery::true_query(Matrix vectors) {
    if (vectors.empty()) {
        throw ConfigError("true_query proxy needs at least one vector");
    }
    return {ProxyMode::true_query, std::move(vectors)};
}

Encoder::Encoder(EncoderConfig cfg)
    : cfg_((cfg.validate(), cfg)),
      rotary_(cfg_.rope_config()),
      logit_scale_(attention_logit_scale(cfg_.rope_config()) / std::sqrt(static_cast<double>(cfg_.head_dim))) {
    const std::size_t d = cfg_.d_model();
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));

    slots_.reserve(cfg_.tokens_per_frame);
    for (std::size_t s = 0; s < cfg_.tokens_per_frame; ++s) {
        Matrix slot = Matrix::identity(d);
        if (cfg_.projector_jitter > 0.0f) {
            const Matrix r = seeded_random_matrix(d, d, derive_seed(cfg_.weight_seed, kSlot, s));
            const double j = cfg_.projector_jitter * scale;
            for (std::size_t k = 0; k < slot.data().size(); ++k) {
                slot.data()[k] = static_cast<float>(slot.data()[k] + j * r.data()[k]);
            }
        }
        slots_.push_back(std::move(slot));
    }

    layers_.reserve(cfg_.n_layers);
    for (std::size_t i = 0; i < cfg_.n_layers; ++i) {
        LayerWeights w;
        w.query = scaled_random(d, d, derive_seed(cfg_.weight_seed, i, kQuery), scale);
        w.key = cfg_.tie_query_key ? w.query : scaled_random(d, d, derive_seed(cfg_.weight_seed, i, kKey), scale);
        w.value = scaled_random(d, d, derive_seed(cfg_.weight_seed, i, kValue), scale);
        w.output = scaled_random(d, d, derive_seed(cfg_.weight_seed, i, kOutput), scale);
        layers_.push_back(std::move(w));
    }
}

TokenBatch Encoder::tokenize(std::span<const FrameEmbedding> frames) const {
    if (frames.empty()) {
        throw DegenerateInputError("tokenize: no frames");
    }
    const std::size_t d = cfg_.d_model();
    const std::size_t tpf = cfg_.tokens_per_frame;
    TokenBatch out{Matrix(frames.size() * tpf, d), {}};
    out.frame_ids.reserve(frames.size() * tpf);
    std::vector<double> acc(d);
    for (std::size_t f = 0; f < frames.size(); ++f) {
        const auto& e = frames[f].embedding;
        if (e.size() != d) {
            throw ShapeError("tokenize: embedding width " + std::to_string(e.size()) + " != d_model " +
                             std::to_string(d));
        }
        for (std::size_t s = 0; s < tpf; ++s) {
            const Matrix& map = slots_[s];
            std::fill(acc.begin(), acc.end(), 0.0);
            for (std::size_t k = 0; k < d; ++k) {
                const double ek = e[k];
                const auto mrow = map.row(k);
                for (std::size_t c = 0; c < d; ++c) {
                    acc[c] += ek * mrow[c];
                }
            }
            auto row = out.tokens.row(f * tpf + s);
            for (std::size_t c = 0; c < d; ++c) {
                row[c] = static_cast<float>(acc[c]);
            }
            out.frame_ids.push_back(frames[f].frame_index);
        }
    }
    return out;
}

Matrix Encoder::project_queries(std::size_t layer, const Matrix& vectors) const {
    if (vectors.cols() != cfg_.d_model()) {
        throw ConfigError("query vectors must be d_model wide");
    }
    return matmul(vectors, layers_.at(layer).query);
}

std::vector<std::vector<float>> rotated_cache_keys(const LayerCache& cache, std::size_t head, const Rotary& rotary) {
    const auto positions = assign_positions(cache.position_ids(), rotary.config().mode);
    std::vector<std::vector<float>> out(cache.size());
    for (std::size_t j = 0; j < cache.size(); ++j) {
        const auto k = cache.key_head(j, head);
        out[j].assign(k.begin(), k.end());
        rotary.apply(out[j], positions[j]);
    }
    return out;
}

EncodedChunk Encoder::encode(const TokenBatch& batch, std::uint64_t first_position, const CompressedMemory& memory,
                             const ProxyQuery& proxy) const {
    const std::size_t n = batch.tokens.rows();
    const std::size_t d_model = cfg_.d_model();
    const std::size_t hd = cfg_.head_dim;
    const std::size_t heads = cfg_.n_heads;
    if (n == 0) {
        throw DegenerateInputError("encode: empty token batch");
    }
    if (batch.tokens.cols() != d_model || batch.frame_ids.size() != n) {
        throw ShapeError("encode: token batch does not match d_model / frame IDs");
    }
    if (memory.n_layers() != cfg_.n_layers || memory.n_heads() != heads || memory.head_dim() != hd) {
        throw ConfigError("encode: memory shape (" + std::to_string(memory.n_layers()) + " layers, " +
                          std::to_string(memory.n_heads()) + " heads, head_dim " + std::to_string(memory.head_dim()) +
                          ") does not match encoder");
    }
    if (proxy.vectors.empty() || proxy.vectors.cols() != d_model) {
        throw ConfigError("encode: proxy vectors must be q x d_model with q >= 1");
    }
    for (const auto& layer : memory.layers) {
        if (!layer.empty() && layer.position_ids().back() >= first_position) {
            throw ConfigError("encode: new positions must follow every cached position");
        }
    }

    const bool reassign = cfg_.rope.mode == PositionMode::reassign_contiguous;
    const std::size_t q_rows = proxy.vectors.rows();

    EncodedChunk out;
    out.tokens_per_frame = cfg_.tokens_per_frame;
    out.frame_ids = batch.frame_ids;
    out.position_ids.resize(n);
    for (std::size_t t = 0; t < n; ++t) {
        out.position_ids[t] = first_position + t;
    }

    Matrix x = batch.tokens;
    std::vector<double> logits;
    std::vector<double> acc(hd);
    for (std::size_t i = 0; i < cfg_.n_layers; ++i) {
        const LayerWeights& w = layers_[i];
        const LayerCache& mem = memory.layers[i];
        const std::size_t m = mem.size();
        const std::uint64_t base = reassign ? m : first_position;

        const Matrix q = matmul(x, w.query);
        const Matrix k = cfg_.tie_query_key ? q : matmul(x, w.key);
        const Matrix v = matmul(x, w.value);
        const Matrix qp = project_queries(i, proxy.vectors);

        Matrix attn_out(n, d_model);
        std::vector<double> score(n, 0.0);

        for (std::size_t h = 0; h < heads; ++h) {
            const auto mem_keys = rotated_cache_keys(mem, h, rotary_);
            std::vector<std::vector<float>> new_keys(n);
            for (std::size_t t = 0; t < n; ++t) {
                const auto src = k.row(t).subspan(h * hd, hd);
                new_keys[t].assign(src.begin(), src.end());
                rotary_.apply(new_keys[t], base + t);
            }

            std::vector<float> qt(hd);
            for (std::size_t t = 0; t < n; ++t) {
                const auto src = q.row(t).subspan(h * hd, hd);
                std::copy(src.begin(), src.end(), qt.begin());
                rotary_.apply(qt, base + t);

                logits.resize(m + t + 1);
                for (std::size_t j = 0; j < m; ++j) {
                    logits[j] = dot(qt, mem_keys[j]) * logit_scale_;
                }
                for (std::size_t j = 0; j <= t; ++j) {
                    logits[m + j] = dot(qt, new_keys[j]) * logit_scale_;
                }
                softmax_inplace(logits);

                std::fill(acc.begin(), acc.end(), 0.0);
                for (std::size_t j = 0; j < m; ++j) {
                    const auto vj = mem.value_head(j, h);
                    for (std::size_t c = 0; c < hd; ++c) {
                        acc[c] += logits[j] * vj[c];
                    }
                }
                for (std::size_t j = 0; j <= t; ++j) {
                    const auto vj = v.row(j).subspan(h * hd, hd);
                    for (std::size_t c = 0; c < hd; ++c) {
                        acc[c] += logits[m + j] * vj[c];
                    }
                }
                auto orow = attn_out.row(t).subspan(h * hd, hd);
                for (std::size_t c = 0; c < hd; ++c) {
                    orow[c] = static_cast<float>(acc[c]);
                }
            }

            // Proxy attention over the new chunk's keys only.
            logits.resize(n);
            for (std::size_t r = 0; r < q_rows; ++r) {
                const auto src = qp.row(r).subspan(h * hd, hd);
                std::copy(src.begin(), src.end(), qt.begin());
                rotary_.apply(qt, base + n + r);
                for (std::size_t j = 0; j < n; ++j) {
                    logits[j] = dot(qt, new_keys[j]) * logit_scale_;
                }
                softmax_inplace(logits);
                for (std::size_t j = 0; j < n; ++j) {
                    if (cfg_.aggregation == ScoreAggregation::mean) {
                        score[j] += logits[j];
                    } else {
                        score[j] = std::max(score[j], logits[j]);
                    }
                }
            }
        }

        double norm = static_cast<double>(n) / static_cast<double>(heads * q_rows);
        if (cfg_.aggregation == ScoreAggregation::max) {
            double total = 0.0;
            for (double s : score) {
                total += s;
            }
            norm = static_cast<double>(n) / total;
        }

        LayerCache layer(heads, hd);
        layer.reserve(n);
        for (std::size_t t = 0; t < n; ++t) {
            layer.push_back(k.row(t), v.row(t), static_cast<float>(score[t] * norm), out.position_ids[t],
                            out.frame_ids[t], false);
        }
        out.layers.push_back(std::move(layer));

        if (i + 1 < cfg_.n_layers) {
            const Matrix proj = matmul(attn_out, w.output);
            for (std::size_t c = 0; c < x.data().size(); ++c) {
                x.data()[c] += proj.data()[c];
            }
        }
    }
    return out;
}

TokenBatch tokenize_frames(std::span<const FrameEmbedding> frames, const EncoderConfig& cfg) {
    return Encoder(cfg).tokenize(frames);
}

} // namespace streammem
