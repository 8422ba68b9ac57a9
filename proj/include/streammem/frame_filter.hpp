// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace streammem {

/// One (possibly merged) frame of the input stream.
struct FrameEmbedding {
    std::int64_t frame_index = 0; ///< earliest raw frame folded into this record
    std::vector<float> embedding;
    std::uint32_t weight = 1; ///< number of raw frames folded into this record

    bool operator==(const FrameEmbedding&) const = default;
};

enum class FilterComparison {
    /// Compare each frame against the running weighted average of the current run.
    accumulator,
    /// Compare each frame against the raw frame right before it.
    pairwise,
};

struct FilterConfig {
    /// Similarity threshold; a frame merges when cosine > threshold (strict).
    /// Any value above 1 disables merging.
    double threshold = 0.95;
    FilterComparison comparison = FilterComparison::accumulator;
};

/// Single left-to-right pass over one chunk that folds runs of near-duplicate
/// frames into weight-averaged records.
///
/// Throws DegenerateInputError on an empty chunk or zero-norm embedding and
/// ShapeError on inconsistent dimensions.
std::vector<FrameEmbedding> filter_chunk(std::span<const FrameEmbedding> frames, const FilterConfig& cfg = {});

} // namespace streammem
