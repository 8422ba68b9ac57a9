// SPDX-License-Identifier: Apache-2.0

#include "streammem/kv_memory.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "streammem/errors.hpp"

namespace streammem {

LayerCache::LayerCache(std::size_t n_heads, std::size_t head_dim) : n_heads_(n_heads), head_dim_(head_dim) {}

void LayerCache::push_back(std::span<const float> key, std::span<const float> value, float score,
                           std::uint64_t position, std::int64_t frame_id, bool prototype) {
    if (key.size() != width() || value.size() != width()) {
        throw ShapeError("LayerCache::push_back: expected key/value width " + std::to_string(width()));
    }
    keys_.insert(keys_.end(), key.begin(), key.end());
    values_.insert(values_.end(), value.begin(), value.end());
    scores_.push_back(score);
    positions_.push_back(position);
    frames_.push_back(frame_id);
    prototype_.push_back(prototype ? 1 : 0);
}

void LayerCache::append_range(const LayerCache& other, std::size_t begin, std::size_t end) {
    if (other.n_heads_ != n_heads_ || other.head_dim_ != head_dim_) {
        throw ShapeError("LayerCache::append_range: head layout mismatch");
    }
    for (std::size_t i = begin; i < end; ++i) {
        push_back(other.key(i), other.value(i), other.scores_[i], other.positions_[i], other.frames_[i],
                  other.prototype_[i] != 0);
    }
}

LayerCache LayerCache::select(std::span<const std::size_t> indices) const {
    LayerCache out(n_heads_, head_dim_);
    out.reserve(indices.size());
    for (std::size_t i : indices) {
        out.push_back(key(i), value(i), scores_[i], positions_[i], frames_[i], prototype_[i] != 0);
    }
    return out;
}

void LayerCache::reserve(std::size_t n) {
    keys_.reserve(n * width());
    values_.reserve(n * width());
    scores_.reserve(n);
    positions_.reserve(n);
    frames_.reserve(n);
    prototype_.reserve(n);
}

void LayerCache::check_invariants() const {
    const std::size_t n = scores_.size();
    if (keys_.size() != n * width() || values_.size() != n * width() || positions_.size() != n ||
        frames_.size() != n || prototype_.size() != n) {
        throw StateError("LayerCache: parallel arrays out of sync");
    }
    for (std::size_t i = 1; i < n; ++i) {
        if (positions_[i] < positions_[i - 1]) {
            throw StateError("LayerCache: position IDs decrease at entry " + std::to_string(i));
        }
    }
}

CompressedMemory::CompressedMemory(std::size_t n_layers, std::size_t n_heads, std::size_t head_dim,
                                   std::uint64_t total_budget)
    : layers(n_layers, LayerCache(n_heads, head_dim)),
      budget{total_budget, static_cast<std::uint32_t>(n_layers)} {}

std::size_t CompressedMemory::total_entries() const {
    std::size_t n = 0;
    for (const auto& l : layers) {
        n += l.size();
    }
    return n;
}

std::string_view to_string(MergeMode m) {
    switch (m) {
    case MergeMode::none:
        return "none";
    case MergeMode::average:
        return "average";
    case MergeMode::weighted:
        return "weighted";
    }
    return "?";
}

std::string_view to_string(InsertPosition p) { return p == InsertPosition::middle ? "middle" : "end"; }

std::string_view to_string(PrototypeScore p) { return p == PrototypeScore::max ? "max" : "mean"; }

MergeMode parse_merge_mode(std::string_view s) {
    if (s == "none") {
        return MergeMode::none;
    }
    if (s == "average" || s == "avg") {
        return MergeMode::average;
    }
    if (s == "weighted") {
        return MergeMode::weighted;
    }
    throw ConfigError("unknown merge mode '" + std::string(s) + "'");
}

InsertPosition parse_insert_position(std::string_view s) {
    if (s == "middle") {
        return InsertPosition::middle;
    }
    if (s == "end") {
        return InsertPosition::end;
    }
    throw ConfigError("unknown insert position '" + std::string(s) + "'");
}

PrototypeScore parse_prototype_score(std::string_view s) {
    if (s == "max") {
        return PrototypeScore::max;
    }
    if (s == "mean") {
        return PrototypeScore::mean;
    }
    throw ConfigError("unknown prototype score mode '" + std::string(s) + "'");
}

std::vector<std::size_t> topk_keep_indices(const LayerCache& cache, std::size_t k) {
    if (k < 1) {
        throw ConfigError("prune_topk: k must be >= 1");
    }
    std::vector<std::size_t> idx(cache.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (cache.size() <= k) {
        return idx;
    }
    const auto scores = cache.scores();
    const auto pos = cache.position_ids();
    const auto proto = cache.prototype_flags();
    auto better = [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) {
            return scores[a] > scores[b];
        }
        if (pos[a] != pos[b]) {
            return pos[a] < pos[b];
        }
        if (proto[a] != proto[b]) {
            return proto[a] > proto[b];
        }
        return a < b;
    };
    std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), better);
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

LayerCache prune_topk(const LayerCache& cache, std::size_t k) {
    const auto keep = topk_keep_indices(cache, k);
    if (keep.size() == cache.size()) {
        return cache;
    }
    return cache.select(keep);
}

Prototype merge_frame(const LayerCache& run, std::size_t begin, std::size_t end, MergeMode mode,
                      PrototypeScore score_mode) {
    if (begin >= end || end > run.size()) {
        throw DegenerateInputError("merge_frame: empty entry range");
    }
    const auto frames = run.frame_ids();
    for (std::size_t i = begin; i < end; ++i) {
        if (frames[i] != frames[begin]) {
            throw DegenerateInputError("merge_frame: entries span more than one frame");
        }
    }
    const std::size_t m = end - begin;
    const auto scores = run.scores();

    double total = 0.0;
    float best = scores[begin];
    for (std::size_t i = begin; i < end; ++i) {
        total += scores[i];
        best = std::max(best, scores[i]);
    }
    std::vector<double> alpha(m, 1.0 / static_cast<double>(m));
    if (mode == MergeMode::weighted && total > 0.0) {
        for (std::size_t j = 0; j < m; ++j) {
            alpha[j] = scores[begin + j] / total;
        }
    }

    const std::size_t w = run.width();
    std::vector<double> k_acc(w, 0.0);
    std::vector<double> v_acc(w, 0.0);
    for (std::size_t j = 0; j < m; ++j) {
        const auto k = run.key(begin + j);
        const auto v = run.value(begin + j);
        for (std::size_t c = 0; c < w; ++c) {
            k_acc[c] += alpha[j] * k[c];
            v_acc[c] += alpha[j] * v[c];
        }
    }

    Prototype p;
    p.key.resize(w);
    p.value.resize(w);
    for (std::size_t c = 0; c < w; ++c) {
        p.key[c] = static_cast<float>(k_acc[c]);
        p.value[c] = static_cast<float>(v_acc[c]);
    }
    p.score = score_mode == PrototypeScore::max ? best : static_cast<float>(total / static_cast<double>(m));
    const auto pos = run.position_ids();
    p.position_id = (pos[begin] + pos[end - 1]) / 2;
    p.frame_id = frames[begin];
    return p;
}

std::size_t append_layer(LayerCache& cache, const LayerCache& encoded, MergeMode mode, InsertPosition insert,
                         PrototypeScore score_mode) {
    if (encoded.n_heads() != cache.n_heads() || encoded.head_dim() != cache.head_dim()) {
        throw ShapeError("append_layer: head layout mismatch");
    }
    if (mode == MergeMode::none) {
        cache.append_range(encoded, 0, encoded.size());
        return 0;
    }
    cache.reserve(cache.size() + encoded.size() + encoded.size());
    const auto frames = encoded.frame_ids();
    std::size_t inserted = 0;
    std::size_t begin = 0;
    while (begin < encoded.size()) {
        std::size_t end = begin + 1;
        while (end < encoded.size() && frames[end] == frames[begin]) {
            ++end;
        }
        Prototype p = merge_frame(encoded, begin, end, mode, score_mode);
        if (insert == InsertPosition::middle) {
            const std::size_t split = begin + (end - begin) / 2;
            cache.append_range(encoded, begin, split);
            cache.push_back(p.key, p.value, p.score, p.position_id, p.frame_id, true);
            cache.append_range(encoded, split, end);
        } else {
            cache.append_range(encoded, begin, end);
            cache.push_back(p.key, p.value, p.score, encoded.position_ids()[end - 1], p.frame_id, true);
        }
        ++inserted;
        begin = end;
    }
    return inserted;
}

std::size_t append_chunk(CompressedMemory& memory, std::span<const LayerCache> encoded, MergeMode mode,
                         InsertPosition insert, PrototypeScore score_mode) {
    if (encoded.size() != memory.layers.size()) {
        throw ShapeError("append_chunk: encoded chunk has " + std::to_string(encoded.size()) + " layers, memory has " +
                         std::to_string(memory.layers.size()));
    }
    std::size_t inserted = 0;
    for (std::size_t i = 0; i < encoded.size(); ++i) {
        inserted = append_layer(memory.layers[i], encoded[i], mode, insert, score_mode);
    }
    return inserted;
}

std::size_t finalize_step(CompressedMemory& memory, const PruneObserver& observer) {
    const std::uint64_t cap = memory.budget.per_layer();
    std::size_t evicted = 0;
    for (std::size_t i = 0; i < memory.layers.size(); ++i) {
        auto& layer = memory.layers[i];
        if (layer.size() <= cap) {
            continue;
        }
        const auto keep = topk_keep_indices(layer, static_cast<std::size_t>(cap));
        if (observer) {
            observer(i, layer, keep);
        }
        evicted += layer.size() - keep.size();
        layer = layer.select(keep);
    }
    return evicted;
}

} // namespace streammem
