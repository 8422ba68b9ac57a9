// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <chrono>
#include <fstream>
#include <future>
#include <ostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "streammem/cli.hpp"
#include "streammem/errors.hpp"
#include "streammem/snapshot.hpp"

namespace streammem::cli {

using nlohmann::json;

namespace {

struct ModelOptions {
    std::size_t layers = 4;
    std::size_t heads = 2;
    std::size_t tokens_per_frame = 4;
    std::uint64_t seed = 42;
    double yarn = 8.0;
    std::string rope_mode = "preserve_yarn";
    double original_context = 512.0;
    bool no_temperature = false;
    float jitter = 0.5f;
    std::string aggregation = "mean";
};

struct StreamOptions {
    std::size_t chunk_frames = 8;
    double delta = 0.95;
    bool no_filter = false;
    std::string filter_mode = "accumulator";
    std::uint64_t budget = 6000;
    std::string policy = "streammem";
    std::string merge = "weighted";
    std::string insert = "middle";
    std::string prototype_score = "max";
    std::string schedule = "after";
    std::string query_mode = "template";
    std::string query_file;
};

void add_model_options(CLI::App* app, ModelOptions& o, bool with_shape) {
    if (with_shape) {
        app->add_option("--layers", o.layers, "Transformer layers")->check(CLI::PositiveNumber);
        app->add_option("--heads", o.heads, "Attention heads (must divide the stream dim)")
            ->check(CLI::PositiveNumber);
    }
    app->add_option("--tokens-per-frame", o.tokens_per_frame, "Tokens produced per frame")
        ->check(CLI::PositiveNumber);
    app->add_option("--seed", o.seed, "Model weight seed (also seeds the random policy)");
    app->add_option("--yarn", o.yarn, "YaRN scaling factor (>= 1)");
    app->add_option("--rope-mode", o.rope_mode, "Position handling")
        ->check(CLI::IsMember({"preserve_yarn", "preserve", "reassign_contiguous", "reassign"}));
    app->add_option("--original-context", o.original_context, "Trained context length for the YaRN ramp")
        ->check(CLI::PositiveNumber);
    app->add_flag("--no-temperature", o.no_temperature, "Disable the YaRN attention temperature");
    app->add_option("--projector-jitter", o.jitter, "Slot-map perturbation around identity")
        ->check(CLI::NonNegativeNumber);
    app->add_option("--score-agg", o.aggregation, "Proxy score aggregation")->check(CLI::IsMember({"mean", "max"}));
}

void add_stream_options(CLI::App* app, StreamOptions& o, bool with_budget_policy) {
    app->add_option("--chunk-frames", o.chunk_frames, "Frames per chunk")->check(CLI::PositiveNumber);
    app->add_option("--delta", o.delta, "Frame filter cosine threshold (> 1 disables merging)")
        ->check(CLI::PositiveNumber);
    app->add_flag("--no-filter", o.no_filter, "Skip input frame filtering");
    app->add_option("--filter-mode", o.filter_mode, "Filter comparison")
        ->check(CLI::IsMember({"accumulator", "pairwise"}));
    if (with_budget_policy) {
        app->add_option("--budget", o.budget, "Total cache entries over all layers")->check(CLI::PositiveNumber);
        app->add_option("--policy", o.policy, "Eviction policy")
            ->check(CLI::IsMember({"streammem", "fifo", "value_norm", "random"}));
    }
    app->add_option("--merge", o.merge, "Frame prototype merging")
        ->check(CLI::IsMember({"none", "average", "weighted"}));
    app->add_option("--insert", o.insert, "Prototype insert position")->check(CLI::IsMember({"middle", "end"}));
    app->add_option("--prototype-score", o.prototype_score, "Prototype score")
        ->check(CLI::IsMember({"max", "mean"}));
    app->add_option("--schedule", o.schedule, "Prune after or before appending each chunk")
        ->check(CLI::IsMember({"after", "before"}));
    app->add_option("--query-mode", o.query_mode, "Proxy query used for saliency")
        ->check(CLI::IsMember({"template", "generic", "true"}));
    app->add_option("--query-file", o.query_file, "JSON {\"vectors\": [[...]]} for --query-mode true");
}

EncoderConfig make_encoder_config(const ModelOptions& m, std::size_t layers, std::size_t heads,
                                  std::size_t head_dim) {
    EncoderConfig e;
    e.n_layers = layers;
    e.n_heads = heads;
    e.head_dim = head_dim;
    e.tokens_per_frame = m.tokens_per_frame;
    e.weight_seed = m.seed;
    e.projector_jitter = m.jitter;
    e.aggregation = m.aggregation == "max" ? ScoreAggregation::max : ScoreAggregation::mean;
    e.rope.mode = parse_position_mode(m.rope_mode);
    e.rope.yarn_factor = m.yarn;
    e.rope.original_context = m.original_context;
    e.rope.attention_temperature = !m.no_temperature;
    e.rope.head_dim = head_dim;
    return e;
}

StreamConfig make_stream_config(const ModelOptions& m, const StreamOptions& s, std::size_t dim) {
    if (dim % m.heads != 0) {
        throw ConfigError("stream dim " + std::to_string(dim) + " is not divisible by --heads " +
                          std::to_string(m.heads));
    }
    StreamConfig cfg;
    cfg.encoder = make_encoder_config(m, m.layers, m.heads, dim / m.heads);
    cfg.chunk_frames = s.chunk_frames;
    cfg.filter_enabled = !s.no_filter;
    cfg.filter.threshold = s.delta;
    cfg.filter.comparison = s.filter_mode == "pairwise" ? FilterComparison::pairwise : FilterComparison::accumulator;
    cfg.budget = s.budget;
    cfg.policy = parse_policy(s.policy);
    cfg.merge = parse_merge_mode(s.merge);
    cfg.insert = parse_insert_position(s.insert);
    cfg.prototype_score = parse_prototype_score(s.prototype_score);
    cfg.schedule = parse_schedule(s.schedule);
    cfg.query_mode = parse_proxy_mode(s.query_mode);
    cfg.policy_seed = m.seed;
    if (cfg.query_mode == ProxyMode::true_query) {
        if (s.query_file.empty()) {
            throw ConfigError("--query-mode true needs --query-file");
        }
        cfg.true_query = read_query_file(s.query_file, dim);
    }
    cfg.validate();
    return cfg;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item.erase(0, item.find_first_not_of(" \t"));
        item.erase(item.find_last_not_of(" \t") + 1);
        if (!item.empty()) {
            out.push_back(item);
        }
    }
    return out;
}

template <typename T>
T parse_integer(const std::string& s, const std::string& what) {
    T v{};
    std::size_t used = 0;
    try {
        if constexpr (std::is_signed_v<T>) {
            v = static_cast<T>(std::stoll(s, &used));
        } else {
            if (!s.empty() && s.front() == '-') {
                throw std::invalid_argument(s);
            }
            v = static_cast<T>(std::stoull(s, &used));
        }
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != s.size()) {
        throw CLI::ValidationError(what, "'" + s + "' is not an integer");
    }
    return v;
}

void write_json(const json& j, const std::string& path, std::ostream& out) {
    if (path.empty() || path == "-") {
        out << j.dump(2) << '\n';
        return;
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
        throw FormatError("cannot open '" + path + "' for writing");
    }
    f << j.dump(2) << '\n';
    if (!f) {
        throw FormatError("failed writing '" + path + "'");
    }
}

std::vector<NeedleOutcome> evaluate_needles(const StreamFile& file, const RunResult& run, const StreamConfig& cfg) {
    std::vector<NeedleOutcome> out;
    if (file.header.needles.empty()) {
        return out;
    }
    const Encoder encoder(cfg.encoder);
    for (auto t : file.header.needles) {
        out.push_back(evaluate_needle(run, encoder, file.frames[static_cast<std::size_t>(t)]));
    }
    return out;
}

struct CellResult {
    json report;
    RunResult run;
};

CellResult run_cell(const StreamFile& file, const StreamConfig& cfg, bool timings) {
    const auto t0 = std::chrono::steady_clock::now();
    RunResult run = run_stream(file.frames, cfg);
    const auto needles = evaluate_needles(file, run, cfg);
    std::optional<double> runtime;
    if (timings) {
        runtime = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    }
    json report = make_run_report(cfg, file.header, run, needles, runtime);
    return {std::move(report), std::move(run)};
}

// ---------------------------------------------------------------------------

struct GenOptions {
    std::size_t dim = 16;
    std::size_t frames = 64;
    std::uint64_t seed = 1;
    std::string needles;
    std::string out;
    double fps = 0.5;
    std::size_t scene_frames = 32;
    double noise = 0.1;
    double needle_gain = 3.0;
};

int cmd_gen(const GenOptions& o, std::ostream& out) {
    SyntheticStreamConfig cfg;
    cfg.dim = o.dim;
    cfg.frames = o.frames;
    cfg.seed = o.seed;
    cfg.scene_frames = o.scene_frames;
    cfg.noise = o.noise;
    cfg.needle_gain = o.needle_gain;
    for (const auto& t : split_list(o.needles)) {
        cfg.needles.push_back(parse_integer<std::int64_t>(t, "--needles"));
    }
    StreamFile file;
    file.frames = generate_stream(cfg);
    file.header = {cfg.dim, o.fps, file.frames.size(), cfg.needles};
    if (o.out.empty() || o.out == "-") {
        write_stream_file(file, out);
    } else {
        write_stream_file(file, std::filesystem::path(o.out));
    }
    return kExitOk;
}

struct RunOptions {
    std::string in;
    std::string snapshot_out;
    std::string report_out;
    bool timings = false;
};

int cmd_run(const RunOptions& r, const ModelOptions& m, const StreamOptions& s, std::ostream& out) {
    const StreamFile file = read_stream_file(std::filesystem::path(r.in));
    const StreamConfig cfg = make_stream_config(m, s, file.header.dim);
    const CellResult cell = run_cell(file, cfg, r.timings);
    if (!r.snapshot_out.empty()) {
        snapshot_save(cell.run.memory, r.snapshot_out);
    }
    write_json(cell.report, r.report_out, out);
    return kExitOk;
}

struct CompareOptions {
    std::string in;
    std::string budgets = "6000,12000,24000";
    std::string policies = "streammem,fifo,value_norm,random";
    std::string report_out;
    bool timings = false;
};

int cmd_compare(const CompareOptions& c, const ModelOptions& m, const StreamOptions& s, std::ostream& out) {
    std::vector<std::uint64_t> budgets;
    for (const auto& b : split_list(c.budgets)) {
        budgets.push_back(parse_integer<std::uint64_t>(b, "--budgets"));
    }
    const auto policies = split_list(c.policies);
    if (budgets.empty()) {
        throw CLI::ValidationError("--budgets", "budget list is empty");
    }
    if (policies.empty()) {
        throw CLI::ValidationError("--policies", "policy list is empty");
    }
    for (const auto& p : policies) {
        parse_policy(p);
    }

    const StreamFile file = read_stream_file(std::filesystem::path(c.in));
    std::vector<StreamConfig> grid;
    for (auto b : budgets) {
        for (const auto& p : policies) {
            StreamOptions cell = s;
            cell.budget = b;
            cell.policy = p;
            grid.push_back(make_stream_config(m, cell, file.header.dim));
        }
    }

    // Cells are independent engines; results are stored by grid index.
    std::vector<json> reports(grid.size());
    const std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
    for (std::size_t begin = 0; begin < grid.size(); begin += workers) {
        const std::size_t end = std::min(grid.size(), begin + workers);
        std::vector<std::future<json>> batch;
        for (std::size_t i = begin; i < end; ++i) {
            batch.push_back(std::async(std::launch::async,
                                       [&, i] { return run_cell(file, grid[i], c.timings).report; }));
        }
        for (std::size_t i = begin; i < end; ++i) {
            reports[i] = batch[i - begin].get();
        }
    }

    json cells = json::array();
    for (std::size_t i = 0; i < grid.size(); ++i) {
        cells.push_back({{"budget", grid[i].budget}, {"policy", to_string(grid[i].policy)}, {"report", reports[i]}});
    }
    const json report = {{"schema", "streammem.compare_report"},
                         {"schema_version", kReportSchemaVersion},
                         {"budgets", budgets},
                         {"policies", policies},
                         {"cells", std::move(cells)}};
    write_json(report, c.report_out, out);
    return kExitOk;
}

struct AskOptions {
    std::string snapshot;
    std::string query_file;
    std::int64_t query_frame_idx = -1;
    std::string in;
    std::size_t top_k = 5;
};

int cmd_ask(const AskOptions& a, const ModelOptions& m, std::ostream& out) {
    const CompressedMemory memory = snapshot_load(a.snapshot);
    if (memory.n_layers() == 0 || memory.n_heads() == 0 || memory.head_dim() == 0) {
        throw FormatError("snapshot has an empty model shape");
    }
    const EncoderConfig ecfg = make_encoder_config(m, memory.n_layers(), memory.n_heads(), memory.head_dim());
    const Encoder encoder(ecfg);
    const std::size_t width = ecfg.d_model();

    Matrix query;
    if (!a.query_file.empty()) {
        query = read_query_file(a.query_file, width);
    } else {
        if (a.in.empty()) {
            throw ConfigError("--query-frame-idx needs --in to look up the frame embedding");
        }
        const StreamFile file = read_stream_file(std::filesystem::path(a.in));
        if (a.query_frame_idx < 0 || static_cast<std::size_t>(a.query_frame_idx) >= file.frames.size()) {
            throw ConfigError("--query-frame-idx " + std::to_string(a.query_frame_idx) + " outside the stream");
        }
        const auto& emb = file.frames[static_cast<std::size_t>(a.query_frame_idx)].embedding;
        if (emb.size() != width) {
            throw ShapeError("stream dim does not match snapshot width");
        }
        query = Matrix(1, width, emb);
    }

    const auto ranking = answer_query(memory, query, encoder);
    double total = 0.0;
    for (const auto& f : ranking) {
        total += f.mass;
    }
    json frames = json::array();
    for (std::size_t i = 0; i < std::min(a.top_k, ranking.size()); ++i) {
        frames.push_back({{"frame", ranking[i].frame_id}, {"mass", ranking[i].mass}});
    }
    const json result = {{"schema", "streammem.ask_result"},
                         {"schema_version", kReportSchemaVersion},
                         {"snapshot",
                          {{"layers", memory.n_layers()},
                           {"heads", memory.n_heads()},
                           {"head_dim", memory.head_dim()},
                           {"entries", memory.total_entries()},
                           {"step", memory.step}}},
                         {"top_k", a.top_k},
                         {"frames", std::move(frames)},
                         {"total_mass", total}};
    out << result.dump(2) << '\n';
    return kExitOk;
}

} // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"streammem: bounded KV-cache compression for streaming token sequences", "streammem"};
    app.require_subcommand(1);

    GenOptions gen_opts;
    auto* gen = app.add_subcommand("gen", "Write a deterministic synthetic stream file");
    gen->add_option("--dim", gen_opts.dim, "Embedding dimension")->check(CLI::PositiveNumber);
    gen->add_option("--frames", gen_opts.frames, "Number of frames")->check(CLI::PositiveNumber);
    gen->add_option("--seed", gen_opts.seed, "Stream seed");
    gen->add_option("--needles", gen_opts.needles, "Comma-separated needle frame indices");
    gen->add_option("--out", gen_opts.out, "Output path (stdout when omitted)");
    gen->add_option("--fps", gen_opts.fps, "Frame rate recorded in the header")->check(CLI::PositiveNumber);
    gen->add_option("--scene-frames", gen_opts.scene_frames, "Frames per background scene")
        ->check(CLI::PositiveNumber);
    gen->add_option("--noise", gen_opts.noise, "Per-frame background noise")->check(CLI::NonNegativeNumber);
    gen->add_option("--needle-gain", gen_opts.needle_gain, "Needle norm relative to sqrt(dim)")
        ->check(CLI::PositiveNumber);

    RunOptions run_opts;
    ModelOptions run_model;
    StreamOptions run_stream_opts;
    auto* run = app.add_subcommand("run", "Compress a stream file and write a run report");
    run->add_option("--in", run_opts.in, "Stream file")->required();
    run->add_option("--snapshot-out", run_opts.snapshot_out, "Write the final memory snapshot here");
    run->add_option("--report-out", run_opts.report_out, "Report path (stdout when omitted)");
    run->add_flag("--timings", run_opts.timings, "Include wall-clock runtime in the report");
    add_model_options(run, run_model, true);
    add_stream_options(run, run_stream_opts, true);

    CompareOptions cmp_opts;
    ModelOptions cmp_model;
    StreamOptions cmp_stream_opts;
    auto* cmp = app.add_subcommand("compare", "Sweep budgets x policies over one stream file");
    cmp->add_option("--in", cmp_opts.in, "Stream file")->required();
    cmp->add_option("--budgets", cmp_opts.budgets, "Comma-separated total budgets");
    cmp->add_option("--policies", cmp_opts.policies, "Comma-separated policies");
    cmp->add_option("--report-out", cmp_opts.report_out, "Report path (stdout when omitted)");
    cmp->add_flag("--timings", cmp_opts.timings, "Include wall-clock runtime in cell reports");
    add_model_options(cmp, cmp_model, true);
    add_stream_options(cmp, cmp_stream_opts, false);

    AskOptions ask_opts;
    ModelOptions ask_model;
    auto* ask = app.add_subcommand("ask", "Rank frames in a snapshot by query attention mass");
    ask->add_option("--snapshot", ask_opts.snapshot, "Snapshot file")->required();
    auto* qfile = ask->add_option("--query-file", ask_opts.query_file, "JSON {\"vectors\": [[...]]}");
    auto* qidx = ask->add_option("--query-frame-idx", ask_opts.query_frame_idx, "Use this frame of --in as query");
    qfile->excludes(qidx);
    ask->add_option("--in", ask_opts.in, "Stream file for --query-frame-idx");
    ask->add_option("--top-k", ask_opts.top_k, "Frames to print")->check(CLI::PositiveNumber);
    add_model_options(ask, ask_model, false);

    std::vector<std::string> argv_store;
    argv_store.reserve(args.size() + 1);
    argv_store.emplace_back("streammem");
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& a : argv_store) {
        argv.push_back(a.data());
    }

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
        if (*ask && ask_opts.query_file.empty() && ask_opts.query_frame_idx < 0) {
            throw CLI::RequiredError("ask needs --query-file or --query-frame-idx");
        }
        if (*gen) {
            return cmd_gen(gen_opts, out);
        }
        if (*run) {
            return cmd_run(run_opts, run_model, run_stream_opts, out);
        }
        if (*cmp) {
            return cmd_compare(cmp_opts, cmp_model, cmp_stream_opts, out);
        }
        return cmd_ask(ask_opts, ask_model, out);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << '\n';
        return kExitInput;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const Error& e) {
        err << "input error: " << e.what() << '\n';
        return kExitInput;
    }
}

} // namespace streammem::cli
