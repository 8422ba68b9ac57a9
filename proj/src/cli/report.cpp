// SPDX-License-Identifier: Apache-2.0

#include "streammem/cli.hpp"

namespace streammem::cli {

using nlohmann::json;

json config_to_json(const StreamConfig& cfg) {
    const auto& e = cfg.encoder;
    return {
        {"chunk_frames", cfg.chunk_frames},
        {"filter_enabled", cfg.filter_enabled},
        {"delta", cfg.filter.threshold},
        {"filter_mode", cfg.filter.comparison == FilterComparison::accumulator ? "accumulator" : "pairwise"},
        {"budget", cfg.budget},
        {"per_layer_budget", MemoryBudget{cfg.budget, static_cast<std::uint32_t>(e.n_layers)}.per_layer()},
        {"policy", to_string(cfg.policy)},
        {"merge", to_string(cfg.merge)},
        {"insert", to_string(cfg.insert)},
        {"prototype_score", to_string(cfg.prototype_score)},
        {"schedule", to_string(cfg.schedule)},
        {"query_mode", to_string(cfg.query_mode)},
        {"policy_seed", cfg.policy_seed},
        {"encoder",
         {{"layers", e.n_layers},
          {"heads", e.n_heads},
          {"head_dim", e.head_dim},
          {"tokens_per_frame", e.tokens_per_frame},
          {"weight_seed", e.weight_seed},
          {"projector_jitter", e.projector_jitter},
          {"tie_query_key", e.tie_query_key},
          {"aggregation", e.aggregation == ScoreAggregation::mean ? "mean" : "max"},
          {"rope",
           {{"mode", to_string(e.rope.mode)},
            {"yarn_factor", e.rope.yarn_factor},
            {"base_theta", e.rope.base_theta},
            {"original_context", e.rope.original_context},
            {"beta_fast", e.rope.beta_fast},
            {"beta_slow", e.rope.beta_slow},
            {"attention_temperature", e.rope.attention_temperature}}}}},
    };
}

json make_run_report(const StreamConfig& cfg, const StreamHeader& header, const RunResult& run,
                     const std::vector<NeedleOutcome>& needles, std::optional<double> runtime_ms) {
    json steps = json::array();
    std::size_t evicted = 0;
    for (const auto& s : run.steps) {
        steps.push_back({{"step", s.step},
                         {"frames_in", s.frames_in},
                         {"frames_out", s.frames_out},
                         {"tokens", s.tokens},
                         {"layer_lengths", s.layer_lengths},
                         {"evicted", s.evicted},
                         {"prototypes", s.prototypes}});
        evicted += s.evicted;
    }

    json sizes = json::array();
    std::size_t prototypes = 0;
    for (const auto& layer : run.memory.layers) {
        sizes.push_back(layer.size());
        for (auto f : layer.prototype_flags()) {
            prototypes += f;
        }
    }

    json needle_json = json::array();
    for (const auto& n : needles) {
        needle_json.push_back({{"frame", n.frame},
                               {"inserted", n.inserted},
                               {"surviving", n.surviving},
                               {"retained_fraction", n.retained_fraction},
                               {"present", n.present},
                               {"rank", n.rank},
                               {"mass", n.mass},
                               {"retained", n.retained}});
    }

    json report = {
        {"schema", "streammem.run_report"},
        {"schema_version", kReportSchemaVersion},
        {"config", config_to_json(cfg)},
        {"input", {{"dim", header.dim}, {"fps", header.fps}, {"count", header.count}}},
        {"steps", std::move(steps)},
        {"final_layer_sizes", std::move(sizes)},
        {"total_entries", run.memory.total_entries()},
        {"prototypes", prototypes},
        {"evicted_total", evicted},
        {"needles", std::move(needle_json)},
    };
    if (runtime_ms) {
        report["runtime_ms"] = *runtime_ms;
    }
    return report;
}

} // namespace streammem::cli
