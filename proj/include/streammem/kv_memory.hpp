// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

namespace streammem {

/// Entry-count budget for the whole cache, split evenly over layers.
struct MemoryBudget {
    std::uint64_t total = 0;
    std::uint32_t n_layers = 1;

    /// floor(total / n_layers); the remainder is left unused.
    std::uint64_t per_layer() const { return n_layers == 0 ? 0 : total / n_layers; }

    bool operator==(const MemoryBudget&) const = default;
};

/// Cached keys/values of one transformer layer plus per-entry bookkeeping.
///
/// Keys are stored before rotary embedding; attention rotates them with the
/// positions handed out by assign_positions(). Each key/value row holds all
/// heads back to back (n_heads * head_dim floats).
class LayerCache {
public:
    LayerCache() = default;
    LayerCache(std::size_t n_heads, std::size_t head_dim);

    std::size_t size() const { return scores_.size(); }
    bool empty() const { return scores_.empty(); }
    std::size_t n_heads() const { return n_heads_; }
    std::size_t head_dim() const { return head_dim_; }
    std::size_t width() const { return n_heads_ * head_dim_; }

    std::span<const float> key(std::size_t i) const { return {keys_.data() + i * width(), width()}; }
    std::span<const float> value(std::size_t i) const { return {values_.data() + i * width(), width()}; }
    std::span<const float> key_head(std::size_t i, std::size_t h) const {
        return {keys_.data() + i * width() + h * head_dim_, head_dim_};
    }
    std::span<const float> value_head(std::size_t i, std::size_t h) const {
        return {values_.data() + i * width() + h * head_dim_, head_dim_};
    }

    std::span<const float> scores() const { return scores_; }
    std::span<const std::uint64_t> position_ids() const { return positions_; }
    std::span<const std::int64_t> frame_ids() const { return frames_; }
    std::span<const std::uint8_t> prototype_flags() const { return prototype_; }
    bool is_prototype(std::size_t i) const { return prototype_[i] != 0; }

    void set_score(std::size_t i, float s) { scores_[i] = s; }

    /// Appends one entry. Throws ShapeError if key/value width does not match.
    void push_back(std::span<const float> key, std::span<const float> value, float score, std::uint64_t position,
                   std::int64_t frame_id, bool prototype);

    /// Appends entries [begin, end) of other (same head layout).
    void append_range(const LayerCache& other, std::size_t begin, std::size_t end);

    /// Entries at the given ascending indices, in that order.
    LayerCache select(std::span<const std::size_t> indices) const;

    void reserve(std::size_t n);

    /// Throws StateError if parallel arrays disagree or position IDs decrease.
    void check_invariants() const;

    bool operator==(const LayerCache&) const = default;

private:
    std::size_t n_heads_ = 0;
    std::size_t head_dim_ = 0;
    std::vector<float> keys_;
    std::vector<float> values_;
    std::vector<float> scores_;
    std::vector<std::uint64_t> positions_;
    std::vector<std::int64_t> frames_;
    std::vector<std::uint8_t> prototype_;
};

/// The bounded store: one LayerCache per transformer layer.
struct CompressedMemory {
    std::vector<LayerCache> layers;
    MemoryBudget budget{0, 0};
    std::uint64_t step = 0;

    CompressedMemory() = default;
    CompressedMemory(std::size_t n_layers, std::size_t n_heads, std::size_t head_dim, std::uint64_t total_budget);

    std::size_t n_layers() const { return layers.size(); }
    std::size_t n_heads() const { return layers.empty() ? 0 : layers.front().n_heads(); }
    std::size_t head_dim() const { return layers.empty() ? 0 : layers.front().head_dim(); }
    std::size_t total_entries() const;
    bool empty() const { return total_entries() == 0; }

    bool operator==(const CompressedMemory&) const = default;
};

enum class MergeMode { none, average, weighted };
enum class InsertPosition { middle, end };
/// Score given to a frame prototype: the best of its tokens, or their mean.
enum class PrototypeScore { max, mean };

std::string_view to_string(MergeMode m);
std::string_view to_string(InsertPosition p);
std::string_view to_string(PrototypeScore p);
MergeMode parse_merge_mode(std::string_view s);
InsertPosition parse_insert_position(std::string_view s);
PrototypeScore parse_prototype_score(std::string_view s);

/// Indices (ascending) of the k entries that survive top-k selection.
///
/// Ranking: higher score first, then lower position ID, then prototype before
/// token, then lower index. Returns every index when size() <= k.
/// Throws ConfigError when k < 1.
std::vector<std::size_t> topk_keep_indices(const LayerCache& cache, std::size_t k);

/// Keeps the k highest-ranked entries in their original relative order.
LayerCache prune_topk(const LayerCache& cache, std::size_t k);

struct Prototype {
    std::vector<float> key;
    std::vector<float> value;
    float score = 0.0f;
    std::uint64_t position_id = 0;
    std::int64_t frame_id = 0;
};

/// Merges entries [begin, end) of run, which must all belong to one frame,
/// into a single key/value pair:
///   alpha_j = s_j / sum(s),  key = sum alpha_j K_j,  value = sum alpha_j V_j
/// computed per head in double precision. MergeMode::average (or a zero score
/// total) uses alpha_j = 1/m. position_id is floor((first + last) / 2) of the
/// frame's positions. Throws DegenerateInputError on an empty or mixed-frame range.
Prototype merge_frame(const LayerCache& run, std::size_t begin, std::size_t end, MergeMode mode,
                      PrototypeScore score_mode = PrototypeScore::max);

/// Appends one layer's worth of freshly encoded entries to cache, adding one
/// prototype per frame run unless mode is MergeMode::none.
///
/// With InsertPosition::middle the prototype goes after the first floor(m/2)
/// tokens of an m-token frame; with InsertPosition::end it follows the frame's
/// last token and takes that token's position ID so the timeline stays sorted.
/// Returns the number of prototypes inserted.
std::size_t append_layer(LayerCache& cache, const LayerCache& encoded, MergeMode mode, InsertPosition insert,
                         PrototypeScore score_mode = PrototypeScore::max);

/// append_layer() over every layer of memory. encoded must hold one cache per
/// layer with matching head layout; throws ShapeError otherwise.
/// Returns the prototypes inserted per layer.
std::size_t append_chunk(CompressedMemory& memory, std::span<const LayerCache> encoded, MergeMode mode,
                         InsertPosition insert, PrototypeScore score_mode = PrototypeScore::max);

/// Called once per pruned layer with the pre-prune cache and the kept indices.
using PruneObserver = std::function<void(std::size_t layer, const LayerCache& before, std::span<const std::size_t> kept)>;

/// Prunes every layer above budget.per_layer() down to it.
/// Returns the number of evicted entries summed over layers.
std::size_t finalize_step(CompressedMemory& memory, const PruneObserver& observer = {});

} // namespace streammem
