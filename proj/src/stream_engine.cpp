// SPDX-License-Identifier: Apache-2.0

#include "streammem/stream_engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <string>

#include "streammem/errors.hpp"

namespace streammem {

std::string_view to_string(Policy p) {
    switch (p) {
    case Policy::streammem:
        return "streammem";
    case Policy::fifo:
        return "fifo";
    case Policy::value_norm:
        return "value_norm";
    case Policy::random:
        return "random";
    }
    return "?";
}

std::string_view to_string(PruneSchedule s) {
    return s == PruneSchedule::after_append ? "after_append" : "before_append";
}

Policy parse_policy(std::string_view s) {
    if (s == "streammem") {
        return Policy::streammem;
    }
    if (s == "fifo") {
        return Policy::fifo;
    }
    if (s == "value_norm" || s == "value-norm") {
        return Policy::value_norm;
    }
    if (s == "random") {
        return Policy::random;
    }
    throw ConfigError("unknown policy '" + std::string(s) + "'");
}

PruneSchedule parse_schedule(std::string_view s) {
    if (s == "after_append" || s == "after") {
        return PruneSchedule::after_append;
    }
    if (s == "before_append" || s == "before") {
        return PruneSchedule::before_append;
    }
    throw ConfigError("unknown prune schedule '" + std::string(s) + "'");
}

std::uint64_t StreamConfig::min_per_layer_budget() const {
    return static_cast<std::uint64_t>(chunk_frames) * encoder.tokens_per_frame + chunk_frames;
}

void StreamConfig::validate() const {
    encoder.validate();
    if (chunk_frames < 1) {
        throw ConfigError("chunk_frames must be >= 1");
    }
    if (!(filter.threshold > 0.0) || std::isnan(filter.threshold)) {
        throw ConfigError("filter threshold must be > 0");
    }
    if (encoder.n_layers > std::numeric_limits<std::uint32_t>::max()) {
        throw ConfigError("too many layers");
    }
    const MemoryBudget b{budget, static_cast<std::uint32_t>(encoder.n_layers)};
    if (b.per_layer() < min_per_layer_budget()) {
        throw ConfigError("budget " + std::to_string(budget) + " gives " + std::to_string(b.per_layer()) +
                          " entries per layer; one chunk needs " + std::to_string(min_per_layer_budget()));
    }
    if (query_mode == ProxyMode::true_query) {
        if (!true_query || true_query->empty() || true_query->cols() != encoder.d_model()) {
            throw ConfigError("true_query mode needs q x d_model query vectors");
        }
    }
}

std::vector<float> apply_policy(const LayerCache& entries, Policy policy, const PolicyContext& ctx) {
    std::vector<float> out(entries.size());
    switch (policy) {
    case Policy::streammem: {
        const auto s = entries.scores();
        std::copy(s.begin(), s.end(), out.begin());
        break;
    }
    case Policy::fifo: {
        const auto pos = entries.position_ids();
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] = static_cast<float>(pos[i]);
        }
        break;
    }
    case Policy::value_norm:
        for (std::size_t i = 0; i < out.size(); ++i) {
            double total = 0.0;
            for (std::size_t h = 0; h < entries.n_heads(); ++h) {
                total += l2_norm(entries.value_head(i, h));
            }
            out[i] = static_cast<float>(total / static_cast<double>(entries.n_heads()));
        }
        break;
    case Policy::random: {
        const std::uint64_t seed = derive_seed(ctx.seed, ctx.step, ctx.layer);
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] = static_cast<float>(counter_uniform(seed, i));
        }
        break;
    }
    }
    return out;
}

namespace {

ProxyQuery make_proxy(const StreamConfig& cfg) {
    if (cfg.query_mode == ProxyMode::true_query) {
        return ProxyQuery::true_query(*cfg.true_query);
    }
    return ProxyQuery::fixed(cfg.query_mode, cfg.encoder.d_model());
}

const StreamConfig& validated(const StreamConfig& cfg) {
    cfg.validate();
    return cfg;
}

std::size_t count_prototypes(const CompressedMemory& memory) {
    std::size_t n = 0;
    for (const auto& layer : memory.layers) {
        const auto flags = layer.prototype_flags();
        n += static_cast<std::size_t>(std::count(flags.begin(), flags.end(), std::uint8_t{1}));
    }
    return n;
}

} // namespace

StreamEngine::StreamEngine(StreamConfig cfg, EvictionObserver observer)
    : cfg_(validated(cfg)),
      encoder_(cfg_.encoder),
      proxy_(make_proxy(cfg_)),
      memory_(cfg_.encoder.n_layers, cfg_.encoder.n_heads, cfg_.encoder.head_dim, cfg_.budget),
      observer_(std::move(observer)) {}

StepMetrics StreamEngine::push_chunk(std::span<const FrameEmbedding> frames) {
    const auto t0 = std::chrono::steady_clock::now();
    if (frames.empty()) {
        throw DegenerateInputError("push_chunk: empty chunk");
    }
    if (frames.size() > cfg_.chunk_frames) {
        throw ConfigError("push_chunk: chunk holds more than chunk_frames frames");
    }

    std::vector<FrameEmbedding> filtered;
    if (cfg_.filter_enabled) {
        filtered = filter_chunk(frames, cfg_.filter);
    } else {
        filtered.assign(frames.begin(), frames.end());
    }

    const TokenBatch batch = encoder_.tokenize(filtered);
    EncodedChunk encoded = encoder_.encode(batch, next_position_, memory_, proxy_);
    if (cfg_.score_override == ScoreOverride::position_id) {
        for (auto& layer : encoded.layers) {
            for (std::size_t j = 0; j < layer.size(); ++j) {
                layer.set_score(j, static_cast<float>(layer.position_ids()[j]));
            }
        }
    }
    next_position_ += encoded.size();

    const std::uint64_t step = memory_.step;
    PruneObserver prune_observer;
    if (observer_) {
        prune_observer = [&](std::size_t layer, const LayerCache& before, std::span<const std::size_t> kept) {
            observer_(step, layer, before, kept);
        };
    }

    StepMetrics metrics;
    metrics.step = step;
    metrics.frames_in = frames.size();
    metrics.frames_out = filtered.size();
    metrics.tokens = encoded.size();

    if (cfg_.schedule == PruneSchedule::before_append) {
        metrics.evicted += finalize_step(memory_, prune_observer);
    }

    std::vector<std::size_t> old_sizes;
    for (const auto& layer : memory_.layers) {
        old_sizes.push_back(layer.size());
    }
    append_chunk(memory_, encoded.layers, cfg_.merge, cfg_.insert, cfg_.prototype_score);

    for (std::size_t i = 0; i < memory_.layers.size(); ++i) {
        auto& layer = memory_.layers[i];
        const std::size_t begin = old_sizes[i];
        for (std::size_t j = begin; j < layer.size(); ++j) {
            ++inserted_by_frame_[layer.frame_ids()[j]];
        }
        if (cfg_.policy == Policy::streammem) {
            continue;
        }
        LayerCache run(layer.n_heads(), layer.head_dim());
        run.append_range(layer, begin, layer.size());
        const auto scores = apply_policy(run, cfg_.policy, {cfg_.policy_seed, step, i});
        for (std::size_t j = 0; j < scores.size(); ++j) {
            layer.set_score(begin + j, scores[j]);
        }
    }

    if (cfg_.schedule == PruneSchedule::after_append) {
        metrics.evicted += finalize_step(memory_, prune_observer);
    }
    ++memory_.step;

    for (const auto& layer : memory_.layers) {
        metrics.layer_lengths.push_back(layer.size());
    }
    metrics.prototypes = count_prototypes(memory_);
    metrics.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return metrics;
}

RunResult run_stream(std::span<const FrameEmbedding> source, const StreamConfig& cfg, EvictionObserver observer) {
    if (source.empty()) {
        throw DegenerateInputError("run_stream: empty stream");
    }
    StreamEngine engine(cfg, std::move(observer));
    RunResult result;
    for (std::size_t begin = 0; begin < source.size(); begin += cfg.chunk_frames) {
        const std::size_t len = std::min(cfg.chunk_frames, source.size() - begin);
        result.steps.push_back(engine.push_chunk(source.subspan(begin, len)));
    }
    result.memory = engine.memory();
    result.inserted_by_frame = engine.inserted_by_frame();
    return result;
}

std::vector<FrameMass> answer_query(const CompressedMemory& memory, const Matrix& query_vectors,
                                    const Encoder& encoder) {
    if (memory.empty()) {
        throw StateError("answer_query: memory is empty");
    }
    const auto& cfg = encoder.config();
    if (memory.n_layers() != cfg.n_layers || memory.n_heads() != cfg.n_heads || memory.head_dim() != cfg.head_dim) {
        throw ConfigError("answer_query: memory shape does not match encoder");
    }
    if (query_vectors.empty() || query_vectors.cols() != cfg.d_model()) {
        throw ConfigError("answer_query: query vectors must be q x d_model");
    }

    const CompressedMemory* view = &memory;
    CompressedMemory pruned;
    const std::uint64_t cap = memory.budget.per_layer();
    const bool over = std::any_of(memory.layers.begin(), memory.layers.end(),
                                  [&](const LayerCache& l) { return l.size() > cap; });
    if (over && cap > 0) {
        pruned = memory;
        finalize_step(pruned);
        view = &pruned;
    }

    std::uint64_t next_position = 0;
    for (const auto& layer : view->layers) {
        if (!layer.empty()) {
            next_position = std::max(next_position, layer.position_ids().back() + 1);
        }
    }

    const bool reassign = cfg.rope.mode == PositionMode::reassign_contiguous;
    const std::size_t hd = cfg.head_dim;
    std::map<std::int64_t, double> mass;
    std::size_t passes = 0;
    std::vector<double> logits;
    std::vector<float> qr(hd);
    for (std::size_t i = 0; i < view->n_layers(); ++i) {
        const LayerCache& layer = view->layers[i];
        if (layer.empty()) {
            continue;
        }
        const Matrix q = encoder.project_queries(i, query_vectors);
        const std::uint64_t base = reassign ? layer.size() : next_position;
        for (std::size_t h = 0; h < cfg.n_heads; ++h) {
            const auto keys = rotated_cache_keys(layer, h, encoder.rotary());
            for (std::size_t r = 0; r < q.rows(); ++r) {
                const auto src = q.row(r).subspan(h * hd, hd);
                std::copy(src.begin(), src.end(), qr.begin());
                encoder.rotary().apply(qr, base + r);
                logits.resize(layer.size());
                for (std::size_t j = 0; j < layer.size(); ++j) {
                    logits[j] = dot(qr, keys[j]) * encoder.logit_scale();
                }
                softmax_inplace(logits);
                for (std::size_t j = 0; j < layer.size(); ++j) {
                    mass[layer.frame_ids()[j]] += logits[j];
                }
                ++passes;
            }
        }
    }

    std::vector<FrameMass> out;
    out.reserve(mass.size());
    for (const auto& [frame, m] : mass) {
        out.push_back({frame, m / static_cast<double>(passes)});
    }
    std::stable_sort(out.begin(), out.end(), [](const FrameMass& a, const FrameMass& b) { return a.mass > b.mass; });
    return out;
}

} // namespace streammem
