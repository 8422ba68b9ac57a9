// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "streammem/frame_filter.hpp"
#include "streammem/stream_engine.hpp"

namespace streammem {

/// Recipe for a synthetic frame stream: slowly changing background scenes with
/// small per-frame noise, plus optional distinctive "needle" frames.
///
/// Background: every scene_frames frames a new base vector b ~ N(0, I) is drawn;
/// frame = b + noise * N(0, I). Needles point along the mean template-proxy row,
/// made orthogonal to the current scene base, scaled to needle_gain * sqrt(dim)
/// and jittered with the same noise.
struct SyntheticStreamConfig {
    std::size_t dim = 16;
    std::size_t frames = 64;
    std::uint64_t seed = 1;
    std::vector<std::int64_t> needles;
    std::size_t scene_frames = 32;
    double noise = 0.1;
    double needle_gain = 3.0;

    /// Throws ConfigError on zero sizes or needle times outside [0, frames) or repeated.
    void validate() const;
};

/// Unit vector along the mean row of the template proxy queries.
std::vector<float> needle_direction(std::size_t dim);

std::vector<FrameEmbedding> generate_stream(const SyntheticStreamConfig& cfg);

struct NeedleOutcome {
    std::int64_t frame = 0;
    std::uint64_t inserted = 0;  ///< entries ever appended for the frame (all layers)
    std::uint64_t surviving = 0; ///< entries left in final memory (all layers)
    double retained_fraction = 0.0;
    bool present = false;
    std::size_t rank = 0; ///< 1-based answer_query rank, 0 when absent from the readout
    double mass = 0.0;
    bool retained = false; ///< present and ranked within the top-rank cutoff
};

/// Checks one needle against a finished run, querying with its embedding.
NeedleOutcome evaluate_needle(const RunResult& run, const Encoder& encoder, const FrameEmbedding& needle,
                              std::size_t top_rank = 3);

struct NeedleExperimentConfig {
    std::size_t n_chunks = 128;
    std::vector<std::int64_t> needle_frames{43};
    std::vector<std::uint64_t> seeds;
    std::vector<Policy> policies{Policy::streammem, Policy::fifo, Policy::value_norm, Policy::random};
    StreamConfig base;
    SyntheticStreamConfig stream;
    /// When set, the budget is this fraction of the entries an unbounded run keeps.
    std::optional<double> budget_fraction = 0.25;
    std::size_t top_rank = 3;

    void validate() const;
};

struct NeedleRun {
    Policy policy = Policy::streammem;
    std::uint64_t seed = 0;
    std::uint64_t budget = 0;
    std::size_t unbounded_entries = 0; ///< per layer, without eviction
    std::vector<NeedleOutcome> needles;

    bool all_retained() const;
};

struct PolicySummary {
    Policy policy = Policy::streammem;
    std::size_t runs = 0;
    std::size_t retained_runs = 0;
    double retention_rate = 0.0;
    double mean_retained_fraction = 0.0;
};

struct NeedleReport {
    std::vector<NeedleRun> runs;
    std::vector<PolicySummary> summary;

    const PolicySummary& for_policy(Policy p) const;
};

/// For every seed: generate a stream, size the budget, run every policy and
/// score needle survival and readout rank.
NeedleReport needle_experiment(const NeedleExperimentConfig& cfg);

} // namespace streammem
