// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "streammem/encoder.hpp"
#include "streammem/frame_filter.hpp"
#include "streammem/kv_memory.hpp"

namespace streammem {

/// Which per-entry score decides eviction.
enum class Policy {
    streammem,  ///< proxy-attention saliency from the encoder
    fifo,       ///< position ID (oldest goes first)
    value_norm, ///< head-averaged L2 norm of the value vector
    random,     ///< seeded uniform draw
};

/// When over-budget layers are pruned relative to appending the new chunk.
enum class PruneSchedule {
    /// Append, then prune: the budget holds at every step boundary.
    after_append,
    /// Prune the old memory, then append: memory may exceed the budget by one
    /// chunk between steps. Readouts prune a copy first.
    before_append,
};

/// Test hook replacing encoder scores before they reach the memory.
enum class ScoreOverride { none, position_id };

std::string_view to_string(Policy p);
std::string_view to_string(PruneSchedule s);
Policy parse_policy(std::string_view s);
PruneSchedule parse_schedule(std::string_view s);

struct StreamConfig {
    std::size_t chunk_frames = 8;
    bool filter_enabled = true;
    FilterConfig filter;
    std::uint64_t budget = 6000;
    Policy policy = Policy::streammem;
    MergeMode merge = MergeMode::weighted;
    InsertPosition insert = InsertPosition::middle;
    PrototypeScore prototype_score = PrototypeScore::max;
    PruneSchedule schedule = PruneSchedule::after_append;
    ProxyMode query_mode = ProxyMode::template_proxy;
    /// Required when query_mode is ProxyMode::true_query.
    std::optional<Matrix> true_query;
    std::uint64_t policy_seed = 0;
    ScoreOverride score_override = ScoreOverride::none;
    EncoderConfig encoder;

    /// Smallest per-layer budget that fits one chunk plus its prototypes.
    std::uint64_t min_per_layer_budget() const;
    /// Throws ConfigError on any invalid or inconsistent field.
    void validate() const;
};

struct StepMetrics {
    std::uint64_t step = 0;
    std::size_t frames_in = 0;
    std::size_t frames_out = 0;
    std::size_t tokens = 0;
    std::vector<std::size_t> layer_lengths; ///< after this step's pruning
    std::size_t evicted = 0;                ///< summed over layers
    std::size_t prototypes = 0;             ///< resident prototypes, summed over layers
    double wall_ms = 0.0;                   ///< excluded from equality

    bool operator==(const StepMetrics& o) const {
        return step == o.step && frames_in == o.frames_in && frames_out == o.frames_out && tokens == o.tokens &&
               layer_lengths == o.layer_lengths && evicted == o.evicted && prototypes == o.prototypes;
    }
};

/// Scores used for eviction of a freshly appended run of entries.
///
/// streammem returns the stored scores unchanged; fifo returns position IDs;
/// value_norm the mean over heads of each value's L2 norm; random a uniform
/// draw keyed on (seed, step, layer, index in run).
struct PolicyContext {
    std::uint64_t seed = 0;
    std::uint64_t step = 0;
    std::size_t layer = 0;
};
std::vector<float> apply_policy(const LayerCache& entries, Policy policy, const PolicyContext& ctx = {});

/// Invoked for every pruned layer: step, layer, pre-prune cache, kept indices.
using EvictionObserver =
    std::function<void(std::uint64_t step, std::size_t layer, const LayerCache& before, std::span<const std::size_t> kept)>;

/// Incremental driver: fetch, filter, encode, score, append, prune.
class StreamEngine {
public:
    /// Throws ConfigError when the configuration is invalid or the budget cannot
    /// hold one chunk plus its prototypes.
    explicit StreamEngine(StreamConfig cfg, EvictionObserver observer = {});

    /// Processes one chunk of raw frames (at most chunk_frames).
    StepMetrics push_chunk(std::span<const FrameEmbedding> frames);

    const CompressedMemory& memory() const { return memory_; }
    const Encoder& encoder() const { return encoder_; }
    const StreamConfig& config() const { return cfg_; }
    std::uint64_t next_position() const { return next_position_; }

    /// Entries (over all layers, prototypes included) ever appended per frame.
    const std::map<std::int64_t, std::uint64_t>& inserted_by_frame() const { return inserted_by_frame_; }

private:
    StreamConfig cfg_;
    Encoder encoder_;
    ProxyQuery proxy_;
    CompressedMemory memory_;
    EvictionObserver observer_;
    std::uint64_t next_position_ = 0;
    std::map<std::int64_t, std::uint64_t> inserted_by_frame_;
};

struct RunResult {
    CompressedMemory memory;
    std::vector<StepMetrics> steps;
    std::map<std::int64_t, std::uint64_t> inserted_by_frame;
};

/// Runs the whole stream through a fresh engine, chunk_frames frames at a time.
/// Throws DegenerateInputError on an empty stream.
RunResult run_stream(std::span<const FrameEmbedding> source, const StreamConfig& cfg, EvictionObserver observer = {});

struct FrameMass {
    std::int64_t frame_id = 0;
    double mass = 0.0;

    bool operator==(const FrameMass&) const = default;
};

/// Query-aware readout over the compressed memory.
///
/// Query rows are projected with each layer's query weights and rotated just
/// past the newest cached position; a softmax over all entries of the layer is
/// computed per head and row, its mass summed per frame, and averaged over
/// layers, heads and rows. Frames come back by descending mass (ties: lower
/// frame ID). A memory above its budget is pruned on a copy first.
/// Throws StateError on empty memory.
std::vector<FrameMass> answer_query(const CompressedMemory& memory, const Matrix& query_vectors,
                                    const Encoder& encoder);

} // namespace streammem
