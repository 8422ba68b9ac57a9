// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: one PASS/FAIL line per criterion, exit status 0 only when
// every criterion passes.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

#include "oracles.hpp"
#include "streammem/cli.hpp"
#include "streammem/errors.hpp"
#include "streammem/needle.hpp"
#include "streammem/snapshot.hpp"
#include "streammem/stream_engine.hpp"
#include "test_util.hpp"

using namespace streammem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c);
    return buf;
}

// Shared setup of criteria 1 and 4: 200 chunks, dim 16, 4 layers, 2 heads,
// chunk 8, 4 tokens per frame, M = 512.
StreamConfig budget_config() {
    StreamConfig c;
    c.encoder.n_layers = 4;
    c.encoder.n_heads = 2;
    c.encoder.head_dim = 8;
    c.encoder.tokens_per_frame = 4;
    c.encoder.rope.yarn_factor = 8.0;
    c.chunk_frames = 8;
    c.budget = 512;
    return c;
}

std::vector<FrameEmbedding> budget_stream() {
    std::mt19937_64 rng(2024);
    return testutil::random_frames(rng, 200 * 8, 16);
}

Outcome budget_invariant() {
    const auto t0 = Clock::now();
    const auto stream = budget_stream();
    StreamEngine engine(budget_config());
    std::size_t worst = 0;
    for (std::size_t b = 0; b < stream.size(); b += 8) {
        engine.push_chunk(std::span(stream).subspan(b, 8));
        worst = std::max(worst, engine.memory().total_entries());
    }
    const double secs = seconds_since(t0);
    Outcome o;
    o.pass = worst <= 512 && secs < 30.0;
    o.detail = fmt("max total entries %.0f (M = 512), %.2f s", static_cast<double>(worst), secs);
    return o;
}

Outcome proxy_score_oracle() {
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<int> layers(1, 3);
    std::uniform_int_distribution<int> heads(1, 3);
    std::uniform_int_distribution<int> half_hd(1, 3);
    std::uniform_int_distribution<int> tpf(1, 4);
    std::uniform_int_distribution<int> frames(1, 4);
    double worst = 0.0;
    int instances = 0;
    for (; instances < 120; ++instances) {
        EncoderConfig c;
        c.n_layers = static_cast<std::size_t>(layers(rng));
        c.n_heads = static_cast<std::size_t>(heads(rng));
        c.head_dim = static_cast<std::size_t>(2 * half_hd(rng));
        c.tokens_per_frame = static_cast<std::size_t>(tpf(rng));
        c.weight_seed = rng();
        const Encoder enc(c);
        const std::size_t d = c.d_model();
        const auto proxy = ProxyQuery::fixed(instances % 2 == 0 ? ProxyMode::template_proxy : ProxyMode::generic_text, d);

        CompressedMemory memory(c.n_layers, c.n_heads, c.head_dim, 1u << 20);
        std::uint64_t first = 0;
        if (instances % 3 != 0) {
            const auto prev = enc.encode(enc.tokenize(testutil::random_frames(rng, 2, d)), 0, memory, proxy);
            append_chunk(memory, prev.layers, MergeMode::weighted, InsertPosition::middle);
            first = prev.size();
        }
        const auto batch = enc.tokenize(testutil::random_frames(rng, static_cast<std::size_t>(frames(rng)), d, 10));
        const auto got = enc.encode(batch, first, memory, proxy);
        const auto ref = oracle::proxy_scores(enc, batch.tokens, first, memory, proxy.vectors);
        for (std::size_t i = 0; i < ref.size(); ++i) {
            for (std::size_t j = 0; j < ref[i].size(); ++j) {
                worst = std::max(worst, std::fabs(got.layers[i].scores()[j] - static_cast<double>(ref[i][j])));
            }
        }
    }
    Outcome o;
    o.pass = worst <= 1e-6;
    o.detail = fmt("%.0f instances, max |score - oracle| = %.3g (tol 1e-6)", instances, worst);
    return o;
}

Outcome prototype_oracle() {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<float> score(0.01f, 3.0f);
    std::uniform_int_distribution<int> tokens(1, 9);
    double worst_weighted = 0.0;
    double worst_uniform = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t m = static_cast<std::size_t>(tokens(rng));
        LayerCache c(2, 4);
        const bool uniform = trial % 2 == 1;
        const float shared = score(rng);
        for (std::size_t j = 0; j < m; ++j) {
            c.push_back(testutil::random_vector(rng, 8), testutil::random_vector(rng, 8), uniform ? shared : score(rng),
                        100 + j, 7, false);
        }
        const Prototype p = merge_frame(c, 0, m, MergeMode::weighted);
        const auto k = oracle::weighted_sum(c, 0, m, true, uniform);
        const auto v = oracle::weighted_sum(c, 0, m, false, uniform);
        double& worst = uniform ? worst_uniform : worst_weighted;
        for (std::size_t x = 0; x < 8; ++x) {
            worst = std::max(worst, std::fabs(p.key[x] - static_cast<double>(k[x])));
            worst = std::max(worst, std::fabs(p.value[x] - static_cast<double>(v[x])));
        }
    }
    Outcome o;
    o.pass = worst_weighted <= 1e-6 && worst_uniform <= 1e-6;
    o.detail = fmt("max error weighted %.3g, uniform-vs-mean %.3g (tol 1e-6)", worst_weighted, worst_uniform);
    return o;
}

Outcome topk_optimality() {
    const auto stream = budget_stream();
    std::size_t checked = 0;
    std::size_t mismatches = 0;
    std::size_t order_violations = 0;
    run_stream(stream, budget_config(), [&](auto, auto, const LayerCache& before, std::span<const std::size_t> kept) {
        ++checked;
        const std::vector<std::size_t> got(kept.begin(), kept.end());
        if (got != oracle::topk(before, kept.size())) {
            ++mismatches;
        }
        std::set<std::size_t> k(kept.begin(), kept.end());
        float min_kept = std::numeric_limits<float>::infinity();
        float max_evicted = -std::numeric_limits<float>::infinity();
        for (std::size_t i = 0; i < before.size(); ++i) {
            if (k.contains(i)) {
                min_kept = std::min(min_kept, before.scores()[i]);
            } else {
                max_evicted = std::max(max_evicted, before.scores()[i]);
            }
        }
        if (max_evicted > min_kept) {
            ++order_violations;
        }
    });
    Outcome o;
    o.pass = checked > 0 && mismatches == 0 && order_violations == 0;
    o.detail = fmt("%.0f prunes checked, %.0f oracle mismatches, %.0f score-order violations",
                   static_cast<double>(checked), static_cast<double>(mismatches),
                   static_cast<double>(order_violations));
    return o;
}

Outcome filter_correctness() {
    std::mt19937_64 rng(5);
    const auto base = testutil::random_vector(rng, 64);
    std::vector<FrameEmbedding> identical;
    std::vector<FrameEmbedding> orthogonal;
    for (int i = 0; i < 64; ++i) {
        identical.push_back({i, base, 1});
        // Near-orthogonal: one-hot plus a small perturbation.
        auto e = testutil::random_vector(rng, 64, 0.02f);
        e[static_cast<std::size_t>(i)] += 1.0f;
        orthogonal.push_back({i, e, 1});
    }
    bool identical_ok = true;
    bool orthogonal_ok = true;
    bool weights_ok = true;
    for (std::size_t b = 0; b < 64; b += 8) {
        const auto a = filter_chunk(std::span(identical).subspan(b, 8), {0.95});
        identical_ok = identical_ok && a.size() == 1 && a[0].weight == 8 && a[0].embedding == base;
        const auto chunk = std::span(orthogonal).subspan(b, 8);
        const auto o = filter_chunk(chunk, {0.95});
        orthogonal_ok = orthogonal_ok && std::ranges::equal(o, chunk);
    }
    for (int trial = 0; trial < 200; ++trial) {
        auto frames = testutil::random_frames(rng, 8, 6);
        for (std::size_t i = 1; i < frames.size(); ++i) {
            if (rng() % 2 == 0) {
                frames[i].embedding = frames[i - 1].embedding;
                frames[i].embedding[0] += 0.05f;
            }
        }
        std::uint64_t w = 0;
        for (const auto& f : filter_chunk(frames, {0.95})) {
            w += f.weight;
        }
        weights_ok = weights_ok && w == frames.size();
    }
    Outcome o;
    o.pass = identical_ok && orthogonal_ok && weights_ok;
    o.detail = std::string("identical -> 1 record/chunk: ") + (identical_ok ? "yes" : "no") +
               ", near-orthogonal unchanged: " + (orthogonal_ok ? "yes" : "no") +
               ", weights conserved: " + (weights_ok ? "yes" : "no");
    return o;
}

Outcome needle_retention() {
    const auto t0 = Clock::now();
    NeedleExperimentConfig c;
    c.n_chunks = 128;
    c.needle_frames = {5 * 8 + 3};
    for (std::uint64_t s = 1; s <= 20; ++s) {
        c.seeds.push_back(s);
    }
    c.policies = {Policy::streammem, Policy::fifo};
    c.base.encoder.rope.yarn_factor = 8.0;
    c.budget_fraction = 0.25;
    c.top_rank = 3;
    const NeedleReport r = needle_experiment(c);
    const double secs = seconds_since(t0);
    const double sm = r.for_policy(Policy::streammem).retention_rate;
    const double ff = r.for_policy(Policy::fifo).retention_rate;
    Outcome o;
    o.pass = sm >= 0.8 && ff == 0.0 && secs < 120.0;
    o.detail = fmt("streammem %.0f%%, fifo %.0f%% over 20 seeds, %.1f s", 100.0 * sm, 100.0 * ff, secs);
    return o;
}

using EvictionSet = std::set<std::tuple<std::uint64_t, std::size_t, std::uint64_t, std::int64_t>>;

EvictionSet evictions(const std::vector<FrameEmbedding>& stream, const StreamConfig& cfg) {
    EvictionSet out;
    run_stream(stream, cfg, [&](std::uint64_t step, std::size_t layer, const LayerCache& before, auto kept) {
        std::set<std::size_t> k(kept.begin(), kept.end());
        for (std::size_t i = 0; i < before.size(); ++i) {
            if (!k.contains(i)) {
                out.insert({step, layer, before.position_ids()[i], before.frame_ids()[i]});
            }
        }
    });
    return out;
}

Outcome policy_degeneracy() {
    std::size_t identical = 0;
    std::size_t total_evictions = 0;
    for (std::uint64_t s = 0; s < 10; ++s) {
        std::mt19937_64 rng(100 + s);
        const auto stream = testutil::random_frames(rng, 160, 16);
        StreamConfig fifo = budget_config();
        fifo.budget = 4 * 96;
        fifo.merge = MergeMode::none;
        fifo.policy = Policy::fifo;
        StreamConfig over = fifo;
        over.policy = Policy::streammem;
        over.score_override = ScoreOverride::position_id;
        const auto a = evictions(stream, fifo);
        total_evictions += a.size();
        identical += a == evictions(stream, over) ? 1 : 0;
    }
    Outcome o;
    o.pass = identical == 10 && total_evictions > 0;
    o.detail = fmt("%.0f/10 streams with identical eviction sets (%.0f evictions)", static_cast<double>(identical),
                   static_cast<double>(total_evictions));
    return o;
}

Outcome rope_yarn() {
    std::mt19937_64 rng(8);
    std::uniform_int_distribution<std::uint64_t> pos(0, 1u << 16);
    RopeConfig plain;
    plain.head_dim = 16;
    RopeConfig yarn = plain;
    yarn.yarn_factor = 8.0;
    double worst_oracle = 0.0;
    double worst_rel = 0.0;
    double worst_norm = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const auto q = testutil::random_vector(rng, 16);
        const auto k = testutil::random_vector(rng, 16);
        const auto p = pos(rng);
        const auto got = rotate(q, p, plain);
        const auto ref = oracle::plain_rope(q, p);
        for (std::size_t i = 0; i < 16; ++i) {
            worst_oracle = std::max(worst_oracle, std::fabs(got[i] - static_cast<double>(ref[i])));
        }
        const auto delta = pos(rng) % 4096;
        const auto c = pos(rng);
        const double a = dot(rotate(q, 0, plain), rotate(k, delta, plain));
        const double b = dot(rotate(q, c, plain), rotate(k, c + delta, plain));
        worst_rel = std::max(worst_rel, std::fabs(a - b));
        for (const auto& cfg : {plain, yarn}) {
            const auto r = rotate(q, p, cfg);
            worst_norm = std::max(worst_norm, std::fabs(l2_norm(r) - l2_norm(q)));
        }
    }
    Outcome o;
    o.pass = worst_oracle <= 1e-6 && worst_rel <= 1e-5 && worst_norm <= 1e-6;
    o.detail = fmt("oracle %.3g (tol 1e-6), relative %.3g (tol 1e-5), norm %.3g (tol 1e-6)", worst_oracle, worst_rel,
                   worst_norm);
    return o;
}

Outcome persistence() {
    std::mt19937_64 rng(9);
    std::size_t round_trips = 0;
    std::size_t corruptions = 0;
    std::size_t detected = 0;
    for (int trial = 0; trial < 10; ++trial) {
        const CompressedMemory m = testutil::random_memory(rng, 3, 2, 4, 12, 300);
        const std::string bytes = serialize_snapshot(m);
        const CompressedMemory back = deserialize_snapshot(bytes);
        round_trips += back == m && serialize_snapshot(back) == bytes ? 1 : 0;
        for (std::size_t i = 0; i < bytes.size(); ++i) {
            std::string bad = bytes;
            bad[i] = static_cast<char>(bad[i] ^ static_cast<char>(1 + rng() % 255));
            ++corruptions;
            try {
                deserialize_snapshot(bad);
            } catch (const FormatError&) {
                ++detected;
            }
        }
    }
    Outcome o;
    o.pass = round_trips == 10 && detected == corruptions;
    o.detail = fmt("%.0f/10 bit-identical round-trips, %.0f/%.0f corruptions detected",
                   static_cast<double>(round_trips), static_cast<double>(detected), static_cast<double>(corruptions));
    return o;
}

Outcome determinism() {
    testutil::TempDir dir;
    std::ostringstream sink;
    const auto stream = (dir / "s.jsonl").string();
    cli::run_cli({"gen", "--dim", "16", "--frames", "256", "--seed", "11", "--needles", "43", "--out", stream}, sink,
                 sink);
    auto run = [&](const std::string& tag) {
        const auto report = (dir / ("r" + tag + ".json")).string();
        const auto snap = (dir / ("m" + tag + ".skv")).string();
        const int code = cli::run_cli({"run", "--in", stream, "--budget", "512", "--policy", "random", "--seed", "5",
                                       "--report-out", report, "--snapshot-out", snap},
                                      sink, sink);
        std::ifstream r(report, std::ios::binary);
        std::ifstream s(snap, std::ios::binary);
        std::string rb{std::istreambuf_iterator<char>(r), std::istreambuf_iterator<char>()};
        std::string sb{std::istreambuf_iterator<char>(s), std::istreambuf_iterator<char>()};
        return std::tuple{code, rb, sb};
    };
    const auto [ca, ra, sa] = run("a");
    const auto [cb, rb, sb] = run("b");
    Outcome o;
    o.pass = ca == 0 && cb == 0 && !ra.empty() && !sa.empty() && ra == rb && sa == sb;
    o.detail = fmt("exit codes %.0f/%.0f, report %.0f bytes", ca, cb, static_cast<double>(ra.size())) +
               (ra == rb ? ", reports identical" : ", reports differ") +
               (sa == sb ? ", snapshots identical" : ", snapshots differ");
    return o;
}

} // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"budget invariant", budget_invariant},
        {"proxy-score oracle equivalence", proxy_score_oracle},
        {"prototype oracle equivalence", prototype_oracle},
        {"top-k optimality", topk_optimality},
        {"filter correctness", filter_correctness},
        {"needle retention", needle_retention},
        {"policy degeneracy", policy_degeneracy},
        {"rope / yarn", rope_yarn},
        {"persistence", persistence},
        {"determinism", determinism},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += o.pass ? 0 : 1;
        std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << (i + 1) << ". " << criteria[i].first << ": " << o.detail
                  << std::endl;
    }
    std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size()
              << " acceptance criteria passed" << std::endl;
    return failed == 0 ? 0 : 1;
}
