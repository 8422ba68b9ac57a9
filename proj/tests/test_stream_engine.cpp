// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <set>

#include "doctest.h"
#include "oracles.hpp"
#include "streammem/errors.hpp"
#include "streammem/stream_engine.hpp"
#include "test_util.hpp"

using namespace streammem;

namespace {

StreamConfig small_stream(std::uint64_t budget, Policy policy = Policy::streammem) {
    StreamConfig c;
    c.encoder.n_layers = 2;
    c.encoder.n_heads = 2;
    c.encoder.head_dim = 4;
    c.encoder.tokens_per_frame = 2;
    c.encoder.rope.yarn_factor = 8.0;
    c.chunk_frames = 4;
    c.budget = budget;
    c.policy = policy;
    c.policy_seed = 3;
    return c;
}

std::set<std::tuple<std::uint64_t, std::size_t, std::uint64_t, bool>> evictions(const StreamConfig& cfg,
                                                                                 const std::vector<FrameEmbedding>& s) {
    std::set<std::tuple<std::uint64_t, std::size_t, std::uint64_t, bool>> out;
    run_stream(s, cfg, [&](std::uint64_t step, std::size_t layer, const LayerCache& before, auto kept) {
        std::set<std::size_t> k(kept.begin(), kept.end());
        for (std::size_t i = 0; i < before.size(); ++i) {
            if (!k.contains(i)) {
                out.insert({step, layer, before.position_ids()[i], before.is_prototype(i)});
            }
        }
    });
    return out;
}

} // namespace

TEST_CASE("config validation") {
    StreamConfig c = small_stream(1000);
    CHECK_NOTHROW(c.validate());
    CHECK(c.min_per_layer_budget() == 4 * 2 + 4);

    c.budget = 2 * 12 - 1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK_THROWS_AS(StreamEngine{c}, ConfigError);
    c.budget = 2 * 12;
    CHECK_NOTHROW(c.validate());

    c = small_stream(1000);
    c.chunk_frames = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);

    c = small_stream(1000);
    c.query_mode = ProxyMode::true_query;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.true_query = Matrix(2, 8);
    CHECK_NOTHROW(c.validate());
    c.true_query = Matrix(2, 7);
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("stream config defaults") {
    const StreamConfig c;
    CHECK(c.chunk_frames == 8);
    CHECK(c.filter.threshold == 0.95);
    CHECK(c.budget == 6000);
    CHECK(c.merge == MergeMode::weighted);
    CHECK(c.insert == InsertPosition::middle);
}

TEST_CASE("run_stream: short stream under ample budget") {
    std::mt19937_64 rng(1);
    StreamConfig cfg = small_stream(10000);
    cfg.filter_enabled = false;
    const auto frames = testutil::random_frames(rng, 3, 8);
    const RunResult r = run_stream(frames, cfg);
    REQUIRE(r.steps.size() == 1);
    CHECK(r.steps[0].evicted == 0);
    CHECK(r.steps[0].tokens == 6);
    for (const auto& layer : r.memory.layers) {
        CHECK(layer.size() == 6 + 3);
    }
    CHECK(r.steps[0].prototypes == 2 * 3);
    CHECK(r.memory.step == 1);
}

TEST_CASE("run_stream: tight budget holds after every step") {
    std::mt19937_64 rng(2);
    const auto frames = testutil::random_frames(rng, 400, 8);
    for (auto policy : {Policy::streammem, Policy::fifo, Policy::value_norm, Policy::random}) {
        const StreamConfig cfg = small_stream(60, policy);
        std::size_t observed = 0;
        const RunResult r = run_stream(frames, cfg, [&](auto, auto, const LayerCache& before, auto kept) {
            ++observed;
            CHECK(kept.size() == 30);
            CHECK(before.size() > 30);
        });
        CHECK(r.steps.size() == 100);
        CHECK(observed > 0);
        for (const auto& s : r.steps) {
            REQUIRE(s.layer_lengths.size() == 2);
            for (auto len : s.layer_lengths) {
                CHECK(len <= 30);
            }
        }
        for (const auto& layer : r.memory.layers) {
            CHECK_NOTHROW(layer.check_invariants());
        }
    }
}

TEST_CASE("run_stream: metrics match the memory") {
    std::mt19937_64 rng(3);
    const auto frames = testutil::random_frames(rng, 40, 8);
    StreamEngine engine(small_stream(60));
    for (std::size_t b = 0; b < frames.size(); b += 4) {
        const auto m = engine.push_chunk(std::span(frames).subspan(b, 4));
        for (std::size_t i = 0; i < m.layer_lengths.size(); ++i) {
            CHECK(m.layer_lengths[i] == engine.memory().layers[i].size());
        }
        std::size_t protos = 0;
        for (const auto& layer : engine.memory().layers) {
            for (std::size_t j = 0; j < layer.size(); ++j) {
                protos += layer.is_prototype(j) ? 1 : 0;
            }
        }
        CHECK(m.prototypes == protos);
    }
    CHECK_THROWS_AS(engine.push_chunk(std::span(frames).subspan(0, 5)), ConfigError);
    CHECK_THROWS_AS(engine.push_chunk({}), DegenerateInputError);
}

TEST_CASE("run_stream: deterministic") {
    std::mt19937_64 rng(4);
    const auto frames = testutil::random_frames(rng, 60, 8);
    for (auto policy : {Policy::streammem, Policy::random}) {
        const StreamConfig cfg = small_stream(60, policy);
        const RunResult a = run_stream(frames, cfg);
        const RunResult b = run_stream(frames, cfg);
        CHECK(a.steps == b.steps);
        CHECK(a.memory == b.memory);
        CHECK(a.inserted_by_frame == b.inserted_by_frame);
    }
}

TEST_CASE("run_stream: empty stream throws") {
    CHECK_THROWS_AS(run_stream({}, small_stream(100)), DegenerateInputError);
}

TEST_CASE("run_stream: before-append schedule overshoots by at most one chunk") {
    std::mt19937_64 rng(5);
    const auto frames = testutil::random_frames(rng, 80, 8);
    StreamConfig cfg = small_stream(60);
    cfg.schedule = PruneSchedule::before_append;
    const RunResult r = run_stream(frames, cfg);
    bool exceeded = false;
    for (const auto& s : r.steps) {
        for (auto len : s.layer_lengths) {
            CHECK(len <= 30 + cfg.min_per_layer_budget());
            exceeded = exceeded || len > 30;
        }
    }
    CHECK(exceeded);
}

TEST_CASE("run_stream: filter reduces identical frames") {
    std::vector<FrameEmbedding> frames;
    for (int i = 0; i < 8; ++i) {
        frames.push_back({i, std::vector<float>(8, 1.0f), 1});
    }
    const RunResult r = run_stream(frames, small_stream(1000));
    REQUIRE(r.steps.size() == 2);
    CHECK(r.steps[0].frames_in == 4);
    CHECK(r.steps[0].frames_out == 1);
    CHECK(r.steps[0].tokens == 2);
}

TEST_CASE("apply_policy: fifo evicts the oldest") {
    LayerCache c(1, 2);
    for (std::uint64_t p : {3u, 7u, 9u}) {
        c.push_back(std::vector<float>{1, 1}, std::vector<float>{1, 1}, 0.5f, p, 0, false);
    }
    const auto s = apply_policy(c, Policy::fifo);
    for (std::size_t i = 0; i < 3; ++i) {
        c.set_score(i, s[i]);
    }
    CHECK(topk_keep_indices(c, 2) == std::vector<std::size_t>{1, 2});
}

TEST_CASE("apply_policy: zero value norm goes first") {
    LayerCache c(2, 2);
    c.push_back(std::vector<float>{1, 1, 1, 1}, std::vector<float>{1, 0, 0, 1}, 0.5f, 0, 0, false);
    c.push_back(std::vector<float>{1, 1, 1, 1}, std::vector<float>{0, 0, 0, 0}, 0.5f, 1, 0, false);
    c.push_back(std::vector<float>{1, 1, 1, 1}, std::vector<float>{3, 4, 0, 0}, 0.5f, 2, 0, false);
    const auto s = apply_policy(c, Policy::value_norm);
    CHECK(s[0] == doctest::Approx(1.0));
    CHECK(s[1] == 0.0f);
    CHECK(s[2] == doctest::Approx(2.5));
    for (std::size_t i = 0; i < 3; ++i) {
        c.set_score(i, s[i]);
    }
    CHECK(topk_keep_indices(c, 2) == std::vector<std::size_t>{0, 2});
}

TEST_CASE("apply_policy: streammem passes scores through, random is seeded") {
    std::mt19937_64 rng(6);
    const LayerCache c = testutil::random_cache(rng, 20, 2, 4);
    const auto s = apply_policy(c, Policy::streammem);
    CHECK(std::ranges::equal(s, c.scores()));
    CHECK(apply_policy(c, Policy::random, {1, 2, 3}) == apply_policy(c, Policy::random, {1, 2, 3}));
    CHECK(apply_policy(c, Policy::random, {1, 2, 3}) != apply_policy(c, Policy::random, {1, 2, 4}));
    CHECK(apply_policy(c, Policy::random, {1, 2, 3}) != apply_policy(c, Policy::random, {2, 2, 3}));
}

TEST_CASE("random policy: same eviction set across runs") {
    std::mt19937_64 rng(7);
    const auto frames = testutil::random_frames(rng, 80, 8);
    const StreamConfig cfg = small_stream(60, Policy::random);
    CHECK(evictions(cfg, frames) == evictions(cfg, frames));
}

TEST_CASE("position-id score override degenerates to fifo") {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 3; ++trial) {
        const auto frames = testutil::random_frames(rng, 60, 8);
        StreamConfig fifo = small_stream(60, Policy::fifo);
        fifo.merge = MergeMode::none;
        StreamConfig over = small_stream(60, Policy::streammem);
        over.merge = MergeMode::none;
        over.score_override = ScoreOverride::position_id;
        const auto a = evictions(fifo, frames);
        CHECK_FALSE(a.empty());
        CHECK(a == evictions(over, frames));
    }
}

TEST_CASE("answer_query: single frame memory") {
    std::mt19937_64 rng(9);
    StreamConfig cfg = small_stream(1000);
    const auto frames = testutil::random_frames(rng, 1, 8);
    const RunResult r = run_stream(frames, cfg);
    const Encoder enc(cfg.encoder);
    const auto ranking = answer_query(r.memory, testutil::random_matrix(rng, 3, 8), enc);
    REQUIRE(ranking.size() == 1);
    CHECK(ranking[0].frame_id == 0);
    CHECK(ranking[0].mass == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("answer_query: masses normalized, sorted, deterministic") {
    std::mt19937_64 rng(10);
    const StreamConfig cfg = small_stream(60);
    const RunResult r = run_stream(testutil::random_frames(rng, 40, 8), cfg);
    const Encoder enc(cfg.encoder);
    const Matrix q = testutil::random_matrix(rng, 2, 8);
    const auto a = answer_query(r.memory, q, enc);
    const auto b = answer_query(r.memory, q, enc);
    CHECK(a == b);
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        total += a[i].mass;
        CHECK(a[i].mass >= 0.0);
        if (i > 0) {
            CHECK(a[i - 1].mass >= a[i].mass);
        }
    }
    CHECK(std::fabs(total - 1.0) <= 1e-5);
}

TEST_CASE("answer_query: per layer and head masses sum to one") {
    // Single layer, single head, single query row: the readout is one softmax.
    std::mt19937_64 rng(11);
    StreamConfig cfg = small_stream(1000);
    cfg.encoder.n_layers = 1;
    cfg.encoder.n_heads = 1;
    cfg.encoder.head_dim = 8;
    const RunResult r = run_stream(testutil::random_frames(rng, 12, 8), cfg);
    const auto ranking = answer_query(r.memory, testutil::random_matrix(rng, 1, 8), Encoder(cfg.encoder));
    double total = 0.0;
    for (const auto& f : ranking) {
        total += f.mass;
    }
    CHECK(std::fabs(total - 1.0) <= 1e-5);
}

TEST_CASE("answer_query: identity projector ranks the needle first") {
    std::mt19937_64 rng(12);
    StreamConfig cfg = small_stream(1000);
    cfg.encoder.tokens_per_frame = 1;
    cfg.encoder.projector_jitter = 0.0f;
    cfg.encoder.n_layers = 1;
    cfg.filter_enabled = false;
    auto frames = testutil::random_frames(rng, 16, 8);
    // A large embedding aligns strongly with itself under a shared Q/K map.
    for (float& x : frames[5].embedding) {
        x *= 6.0f;
    }
    const RunResult r = run_stream(frames, cfg);
    const Matrix q(1, 8, frames[5].embedding);
    const auto ranking = answer_query(r.memory, q, Encoder(cfg.encoder));
    CHECK(ranking.front().frame_id == 5);
}

TEST_CASE("answer_query: errors and over-budget memories") {
    const StreamConfig cfg = small_stream(60);
    const Encoder enc(cfg.encoder);
    const CompressedMemory empty(2, 2, 4, 60);
    CHECK_THROWS_AS(answer_query(empty, Matrix(1, 8), enc), StateError);

    std::mt19937_64 rng(13);
    StreamConfig before = cfg;
    before.schedule = PruneSchedule::before_append;
    const RunResult r = run_stream(testutil::random_frames(rng, 40, 8), before);
    CHECK(r.memory.layers[0].size() > 30);
    CompressedMemory pruned = r.memory;
    finalize_step(pruned);
    const Matrix q = testutil::random_matrix(rng, 1, 8);
    CHECK(answer_query(r.memory, q, enc) == answer_query(pruned, q, enc));
    CHECK_THROWS_AS(answer_query(r.memory, Matrix(1, 7), enc), ConfigError);
}

TEST_CASE("policy and schedule names round-trip") {
    for (auto p : {Policy::streammem, Policy::fifo, Policy::value_norm, Policy::random}) {
        CHECK(parse_policy(to_string(p)) == p);
    }
    for (auto s : {PruneSchedule::after_append, PruneSchedule::before_append}) {
        CHECK(parse_schedule(to_string(s)) == s);
    }
    CHECK_THROWS_AS(parse_policy("lru"), ConfigError);
}
