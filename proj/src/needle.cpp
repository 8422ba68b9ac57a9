// SPDX-License-Identifier: Apache-2.0

#include "streammem/needle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <string>

#include "streammem/errors.hpp"
#include "streammem/numerics.hpp"

namespace streammem {

void SyntheticStreamConfig::validate() const {
    if (dim == 0 || frames == 0 || scene_frames == 0) {
        throw ConfigError("synthetic stream: dim, frames and scene_frames must be >= 1");
    }
    if (!(noise >= 0.0) || !(needle_gain > 0.0)) {
        throw ConfigError("synthetic stream: noise must be >= 0 and needle gain > 0");
    }
    std::set<std::int64_t> seen;
    for (auto t : needles) {
        if (t < 0 || static_cast<std::size_t>(t) >= frames) {
            throw ConfigError("needle time " + std::to_string(t) + " outside stream of " + std::to_string(frames) +
                              " frames");
        }
        if (!seen.insert(t).second) {
            throw ConfigError("needle time " + std::to_string(t) + " repeated");
        }
    }
}

std::vector<float> needle_direction(std::size_t dim) {
    const ProxyQuery proxy = ProxyQuery::fixed(ProxyMode::template_proxy, dim);
    std::vector<double> mean(dim, 0.0);
    for (std::size_t r = 0; r < proxy.vectors.rows(); ++r) {
        for (std::size_t c = 0; c < dim; ++c) {
            mean[c] += proxy.vectors(r, c);
        }
    }
    double norm = 0.0;
    for (double x : mean) {
        norm += x * x;
    }
    norm = std::sqrt(norm);
    std::vector<float> out(dim);
    for (std::size_t c = 0; c < dim; ++c) {
        out[c] = static_cast<float>(mean[c] / norm);
    }
    return out;
}

std::vector<FrameEmbedding> generate_stream(const SyntheticStreamConfig& cfg) {
    cfg.validate();
    const std::set<std::int64_t> needles(cfg.needles.begin(), cfg.needles.end());
    const std::vector<float> dir = needle_direction(cfg.dim);
    const std::uint64_t scene_seed = derive_seed(cfg.seed, 1);
    const std::uint64_t noise_seed = derive_seed(cfg.seed, 2);

    std::vector<FrameEmbedding> out;
    out.reserve(cfg.frames);
    std::vector<double> base(cfg.dim);
    std::size_t scene = static_cast<std::size_t>(-1);
    for (std::size_t f = 0; f < cfg.frames; ++f) {
        if (f / cfg.scene_frames != scene) {
            scene = f / cfg.scene_frames;
            for (std::size_t c = 0; c < cfg.dim; ++c) {
                base[c] = counter_normal(scene_seed, scene * cfg.dim + c);
            }
        }
        FrameEmbedding fe;
        fe.frame_index = static_cast<std::int64_t>(f);
        fe.embedding.resize(cfg.dim);
        std::vector<double> v(base);
        if (needles.count(static_cast<std::int64_t>(f)) != 0) {
            // Gram-Schmidt against the scene base keeps the needle off the background.
            double bb = 0.0;
            double db = 0.0;
            for (std::size_t c = 0; c < cfg.dim; ++c) {
                bb += base[c] * base[c];
                db += dir[c] * base[c];
            }
            double nn = 0.0;
            for (std::size_t c = 0; c < cfg.dim; ++c) {
                v[c] = dir[c] - (bb > 0.0 ? db / bb : 0.0) * base[c];
                nn += v[c] * v[c];
            }
            const double scale = cfg.needle_gain * std::sqrt(static_cast<double>(cfg.dim)) / std::sqrt(nn);
            for (double& x : v) {
                x *= scale;
            }
        }
        for (std::size_t c = 0; c < cfg.dim; ++c) {
            const double jitter = cfg.noise * counter_normal(noise_seed, f * cfg.dim + c);
            fe.embedding[c] = static_cast<float>(v[c] + jitter);
        }
        out.push_back(std::move(fe));
    }
    return out;
}

NeedleOutcome evaluate_needle(const RunResult& run, const Encoder& encoder, const FrameEmbedding& needle,
                              std::size_t top_rank) {
    NeedleOutcome o;
    o.frame = needle.frame_index;
    if (auto it = run.inserted_by_frame.find(needle.frame_index); it != run.inserted_by_frame.end()) {
        o.inserted = it->second;
    }
    for (const auto& layer : run.memory.layers) {
        const auto frames = layer.frame_ids();
        o.surviving += static_cast<std::uint64_t>(std::count(frames.begin(), frames.end(), needle.frame_index));
    }
    o.present = o.surviving > 0;
    o.retained_fraction = o.inserted == 0 ? 0.0 : static_cast<double>(o.surviving) / static_cast<double>(o.inserted);

    if (!run.memory.empty()) {
        const Matrix query(1, needle.embedding.size(), needle.embedding);
        const auto ranking = answer_query(run.memory, query, encoder);
        for (std::size_t r = 0; r < ranking.size(); ++r) {
            if (ranking[r].frame_id == needle.frame_index) {
                o.rank = r + 1;
                o.mass = ranking[r].mass;
                break;
            }
        }
    }
    o.retained = o.present && o.rank >= 1 && o.rank <= top_rank;
    return o;
}

void NeedleExperimentConfig::validate() const {
    if (n_chunks == 0) {
        throw ConfigError("needle experiment: n_chunks must be >= 1");
    }
    if (seeds.empty() || policies.empty()) {
        throw ConfigError("needle experiment: need at least one seed and one policy");
    }
    if (budget_fraction && !(*budget_fraction > 0.0 && *budget_fraction <= 1.0)) {
        throw ConfigError("needle experiment: budget fraction must be in (0, 1]");
    }
    SyntheticStreamConfig s = stream;
    s.frames = n_chunks * base.chunk_frames;
    s.needles = needle_frames;
    s.validate();
}

bool NeedleRun::all_retained() const {
    return std::all_of(needles.begin(), needles.end(), [](const NeedleOutcome& n) { return n.retained; });
}

const PolicySummary& NeedleReport::for_policy(Policy p) const {
    for (const auto& s : summary) {
        if (s.policy == p) {
            return s;
        }
    }
    throw StateError("needle report has no entry for policy " + std::string(to_string(p)));
}

NeedleReport needle_experiment(const NeedleExperimentConfig& cfg) {
    cfg.validate();
    NeedleReport report;
    for (Policy p : cfg.policies) {
        report.summary.push_back({p, 0, 0, 0.0, 0.0});
    }

    for (std::uint64_t seed : cfg.seeds) {
        SyntheticStreamConfig scfg = cfg.stream;
        scfg.frames = cfg.n_chunks * cfg.base.chunk_frames;
        scfg.needles = cfg.needle_frames;
        scfg.seed = seed;
        scfg.dim = cfg.base.encoder.d_model();
        const auto stream = generate_stream(scfg);

        StreamConfig run_cfg = cfg.base;
        run_cfg.encoder.weight_seed = derive_seed(cfg.base.encoder.weight_seed, seed);
        run_cfg.policy_seed = seed;

        std::size_t unbounded = 0;
        if (cfg.budget_fraction) {
            StreamConfig probe = run_cfg;
            probe.policy = Policy::streammem;
            probe.budget = std::numeric_limits<std::uint32_t>::max();
            const RunResult full = run_stream(stream, probe);
            unbounded = full.memory.layers.front().size();
            const auto per_layer = std::max<std::uint64_t>(
                run_cfg.min_per_layer_budget(),
                static_cast<std::uint64_t>(std::floor(*cfg.budget_fraction * static_cast<double>(unbounded))));
            run_cfg.budget = per_layer * run_cfg.encoder.n_layers;
        }

        for (std::size_t pi = 0; pi < cfg.policies.size(); ++pi) {
            StreamConfig pcfg = run_cfg;
            pcfg.policy = cfg.policies[pi];
            const RunResult run = run_stream(stream, pcfg);
            const Encoder encoder(pcfg.encoder);

            NeedleRun nr;
            nr.policy = pcfg.policy;
            nr.seed = seed;
            nr.budget = pcfg.budget;
            nr.unbounded_entries = unbounded;
            for (auto t : cfg.needle_frames) {
                nr.needles.push_back(evaluate_needle(run, encoder, stream[static_cast<std::size_t>(t)], cfg.top_rank));
            }

            auto& s = report.summary[pi];
            ++s.runs;
            s.retained_runs += nr.all_retained() ? 1 : 0;
            for (const auto& n : nr.needles) {
                s.mean_retained_fraction += n.retained_fraction;
            }
            report.runs.push_back(std::move(nr));
        }
    }

    for (auto& s : report.summary) {
        const double needles = static_cast<double>(std::max<std::size_t>(1, cfg.needle_frames.size()));
        s.retention_rate = s.runs == 0 ? 0.0 : static_cast<double>(s.retained_runs) / static_cast<double>(s.runs);
        s.mean_retained_fraction = s.runs == 0 ? 0.0 : s.mean_retained_fraction / (static_cast<double>(s.runs) * needles);
    }
    return report;
}

} // namespace streammem
