// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "streammem/frame_filter.hpp"
#include "streammem/kv_memory.hpp"
#include "streammem/numerics.hpp"
#include "streammem/rope.hpp"

namespace streammem {

/// How per-token proxy attention is collapsed over query rows and heads.
enum class ScoreAggregation { mean, max };

/// Shape and seeds of the toy attention stack.
///
/// Each layer is multi-head causal attention plus a residual connection; there
/// is no MLP and no normalization. All weights are seeded_random_matrix draws
/// scaled by 1/sqrt(d_model).
struct EncoderConfig {
    std::size_t n_layers = 4;
    std::size_t n_heads = 2;
    std::size_t head_dim = 8;
    std::size_t tokens_per_frame = 4;
    std::uint64_t weight_seed = 42;
    /// Token slot s of a frame is embedding * (I + jitter * R_s / sqrt(d_model)).
    /// Zero gives the identity projector.
    float projector_jitter = 0.5f;
    /// Share one projection between queries and keys so logits are a
    /// positive semi-definite similarity of the projected inputs.
    bool tie_query_key = true;
    ScoreAggregation aggregation = ScoreAggregation::mean;
    /// head_dim inside is overwritten with the value above.
    RopeConfig rope;

    std::size_t d_model() const { return n_heads * head_dim; }
    RopeConfig rope_config() const;
    void validate() const;
};

enum class ProxyMode { template_proxy, generic_text, true_query };

std::string_view to_string(ProxyMode m);
ProxyMode parse_proxy_mode(std::string_view s);

inline constexpr std::size_t kTemplateProxyRows = 4;
inline constexpr std::size_t kGenericTextRows = 7;
inline constexpr std::uint64_t kTemplateProxySeed = 0x7E3A1A7E5EEDULL;
inline constexpr std::uint64_t kGenericTextSeed = 0x6E6E7E475EEDULL;

/// Query vectors that stand in for the (unknown) user question.
struct ProxyQuery {
    ProxyMode mode = ProxyMode::template_proxy;
    Matrix vectors; ///< q x d_model

    /// Fixed seeded vectors: 4 rows for the chat-template stand-in, 7 rows for
    /// the generic question. Throws ConfigError for ProxyMode::true_query.
    static ProxyQuery fixed(ProxyMode mode, std::size_t d_model);
    static ProxyQuery true_query(Matrix vectors);
};

struct TokenBatch {
    Matrix tokens;                       ///< n x d_model
    std::vector<std::int64_t> frame_ids; ///< source frame of every token
};

/// Output of one encoder pass over a chunk.
struct EncodedChunk {
    /// Per layer: new keys (pre-rotation), values, proxy scores, positions and
    /// frame IDs. Scores are nonnegative with mean exactly representing 1.
    std::vector<LayerCache> layers;
    std::vector<std::uint64_t> position_ids;
    std::vector<std::int64_t> frame_ids;
    std::size_t tokens_per_frame = 0;

    std::size_t size() const { return position_ids.size(); }
};

struct LayerWeights {
    Matrix query;
    Matrix key; ///< equals query when tie_query_key is set
    Matrix value;
    Matrix output;
};

class Encoder {
public:
    explicit Encoder(EncoderConfig cfg);

    const EncoderConfig& config() const { return cfg_; }
    const Rotary& rotary() const { return rotary_; }
    const LayerWeights& weights(std::size_t layer) const { return layers_.at(layer); }
    const Matrix& slot_map(std::size_t slot) const { return slots_.at(slot); }

    /// Expands each frame into tokens_per_frame tokens through the slot maps.
    /// Throws ShapeError if an embedding is not d_model wide.
    TokenBatch tokenize(std::span<const FrameEmbedding> frames) const;

    /// Runs the attention stack over the new tokens.
    ///
    /// Token t gets position first_position + t. Within each layer and head,
    /// new tokens attend causally over (memory keys, preceding new keys); keys
    /// are rotated at the positions assign_positions() yields for the layer.
    /// Proxy scores use the proxy rows projected with the layer's query weights
    /// and rotated just after the chunk, a softmax over the chunk's own keys,
    /// aggregated over rows and heads, then rescaled so the chunk's mean score is 1.
    ///
    /// Throws ConfigError if memory does not match the encoder shape or holds
    /// a position at or beyond first_position.
    EncodedChunk encode(const TokenBatch& batch, std::uint64_t first_position, const CompressedMemory& memory,
                        const ProxyQuery& proxy) const;

    /// vectors x W_query of the layer (q x d_model).
    Matrix project_queries(std::size_t layer, const Matrix& vectors) const;

    /// Logit multiplier: YaRN temperature / sqrt(head_dim).
    double logit_scale() const { return logit_scale_; }

private:
    EncoderConfig cfg_;
    Rotary rotary_;
    double logit_scale_;
    std::vector<Matrix> slots_;
    std::vector<LayerWeights> layers_;
};

/// Convenience wrapper around Encoder::tokenize.
TokenBatch tokenize_frames(std::span<const FrameEmbedding> frames, const EncoderConfig& cfg);

/// Rotated copies of every key of one head in a layer cache, using the
/// positions assign_positions() gives for mode.
std::vector<std::vector<float>> rotated_cache_keys(const LayerCache& cache, std::size_t head, const Rotary& rotary);

} // namespace streammem
