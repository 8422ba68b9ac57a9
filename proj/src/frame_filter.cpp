// SPDX-License-Identifier: Apache-2.0

#include "streammem/frame_filter.hpp"

#include "streammem/errors.hpp"
#include "streammem/numerics.hpp"

namespace streammem {

namespace {

// Weighted running sum of one merge run; the average is materialized on demand.
struct Run {
    std::int64_t frame_index = 0;
    std::uint64_t weight = 0;
    std::vector<double> weighted_sum;

    void start(const FrameEmbedding& f) {
        frame_index = f.frame_index;
        weight = 0;
        weighted_sum.assign(f.embedding.size(), 0.0);
        add(f);
    }

    void add(const FrameEmbedding& f) {
        for (std::size_t i = 0; i < weighted_sum.size(); ++i) {
            weighted_sum[i] += static_cast<double>(f.embedding[i]) * f.weight;
        }
        weight += f.weight;
    }

    std::vector<float> mean() const {
        std::vector<float> out(weighted_sum.size());
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] = static_cast<float>(weighted_sum[i] / static_cast<double>(weight));
        }
        return out;
    }

    FrameEmbedding emit() const { return {frame_index, mean(), static_cast<std::uint32_t>(weight)}; }
};

} // namespace

std::vector<FrameEmbedding> filter_chunk(std::span<const FrameEmbedding> frames, const FilterConfig& cfg) {
    if (frames.empty()) {
        throw DegenerateInputError("filter_chunk: empty chunk");
    }
    const std::size_t dim = frames.front().embedding.size();
    for (const auto& f : frames) {
        if (f.embedding.size() != dim) {
            throw ShapeError("filter_chunk: embedding dimension mismatch");
        }
        if (&f != &frames.front() && f.frame_index <= (&f - 1)->frame_index) {
            throw OrderingError("filter_chunk: frame indices must be strictly increasing");
        }
        if (f.weight == 0) {
            throw DegenerateInputError("filter_chunk: frame weight must be >= 1");
        }
    }

    std::vector<FrameEmbedding> out;
    Run run;
    run.start(frames.front());
    for (std::size_t i = 1; i < frames.size(); ++i) {
        const auto& next = frames[i];
        double sim = 0.0;
        if (cfg.comparison == FilterComparison::accumulator) {
            sim = cosine_similarity(run.mean(), next.embedding);
        } else {
            sim = cosine_similarity(frames[i - 1].embedding, next.embedding);
        }
        if (sim > cfg.threshold) {
            run.add(next);
        } else {
            out.push_back(run.emit());
            run.start(next);
        }
    }
    out.push_back(run.emit());
    return out;
}

} // namespace streammem
