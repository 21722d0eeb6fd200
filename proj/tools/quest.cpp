// Command-line driver: gen, index, query, bench.

#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "quest/config.hpp"
#include "quest/error.hpp"
#include "quest/executor.hpp"
#include "quest/index.hpp"
#include "quest/query.hpp"
#include "quest/workload.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace quest;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitProvider = 3;
constexpr int kExitBudget = 4;

int exit_code(const Error &e)
{
    switch (e.code()) {
    case ErrorCode::Provider: return kExitProvider;
    case ErrorCode::BudgetExceeded: return kExitBudget;
    case ErrorCode::Internal: return 1;
    default: return kExitValidation;
    }
}

void write_json(const fs::path &path, const json &j)
{
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    std::ofstream os(path);
    if (!os)
        throw IoError("cannot write " + path.string());
    os << j.dump(2) << '\n';
}

/*----------------------------------------------------------------------------------------------------------------------
 * gen
 *--------------------------------------------------------------------------------------------------------------------*/

struct GenArgs
{
    std::string preset = "nba";
    std::size_t docs = 200;
    std::uint64_t seed = 7;
    std::size_t avg_tokens = 416;
    std::size_t dim = 256;
    std::size_t distractors = 0;
    std::string asymmetry;
    std::size_t queries = 10;
    fs::path out = "workload";
};

int cmd_gen(const GenArgs &a)
{
    auto spec = workload_preset(a.preset, a.docs, a.seed);
    spec.avg_tokens = a.avg_tokens;
    spec.dim = a.dim;
    spec.distractors = a.distractors;
    spec.asymmetry_attribute = a.asymmetry;
    ApproxTokenizer tok;
    auto w = generate_workload(spec, tok);
    write_workload(w, a.out);

    Config cfg;
    cfg.corpus = "corpus.jsonl";
    cfg.schema = "schema.json";
    cfg.artifacts = "artifacts";
    cfg.embedder.dim = a.dim;
    cfg.provider.truth = "truth.jsonl";
    write_json(a.out / "config.json", cfg.to_json());

    std::ofstream qs(a.out / "queries.jsonl");
    std::vector<std::string> groups{"C1", "C2", "C3"};
    if (a.preset == "nba")
        groups.insert(groups.end(), {"E1", "E2", "E3", "F"});
    for (auto &g : groups)
        for (auto &q : generate_queries(w, g, a.queries, a.seed ^ std::hash<std::string>{}(g)))
            qs << json{{"group", q.group}, {"query", q.text}}.dump() << '\n';

    fmt::print("documents: {}, average tokens: {:.1f}, tables: {}, truth entries: {}\n", w.corpus.size(),
               w.corpus.average_tokens(), w.tables.size(), w.truth->size());
    fmt::print("wrote {}\n", a.out.string());
    return kExitOk;
}

/*----------------------------------------------------------------------------------------------------------------------
 * index
 *--------------------------------------------------------------------------------------------------------------------*/

int cmd_index(const Config &cfg)
{
    ApproxTokenizer tok;
    auto corpus = std::make_shared<Corpus>(load_corpus(cfg.corpus, tok));
    Catalog catalog(corpus);
    catalog.load_schema(cfg.schema);
    auto embedder = cfg.make_embedder();
    LeadSentenceSummarizer summarizer;
    auto segments = prepare_corpus(*corpus, *embedder, tok, summarizer, {cfg.merge_threshold});
    auto nseg = segments.size();
    auto index = build_indexes(corpus->documents(), std::move(segments), embedder->id());

    fs::create_directories(cfg.artifacts);
    corpus->save(cfg.artifacts / "catalog.jsonl");
    catalog.save_schema(cfg.artifacts / "schema.json");
    index.save(cfg.artifacts / "index");
    write_json(cfg.artifacts / "index_report.json",
               {{"documents", corpus->size()}, {"segments", nseg}, {"embedder", embedder->id()},
                {"average_tokens", corpus->average_tokens()}});
    fmt::print("documents: {}, segments: {}\n", corpus->size(), nseg);
    return kExitOk;
}

/*----------------------------------------------------------------------------------------------------------------------
 * query
 *--------------------------------------------------------------------------------------------------------------------*/

struct QueryArgs
{
    std::string sql;
    std::string strategy = "quest";
    bool explain = false;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> budget;
    std::string out;
    std::string format = "jsonl";
    std::optional<double> p_in;
    bool eager = false;
    std::vector<std::string> join_sequence;
};

int cmd_query(const Config &cfg, const QueryArgs &a)
{
    ApproxTokenizer tok;
    auto corpus = std::make_shared<Corpus>(Corpus::load_saved(cfg.artifacts / "catalog.jsonl"));
    Catalog catalog(corpus);
    catalog.load_schema(cfg.artifacts / "schema.json");
    auto index = TwoLevelIndex::load(cfg.artifacts / "index");
    auto embedder = cfg.make_embedder();
    if (index.documents().embedder_id() != embedder->id())
        throw ValidationError(fmt::format("index was built with {}, config selects {}; re-run index",
                                          index.documents().embedder_id(), embedder->id()));

    auto opts = cfg.engine_options();
    opts.strategy = a.strategy;
    opts.eager = a.eager;
    opts.join_sequence = a.join_sequence;
    opts.explain_p_in = a.p_in;
    if (a.seed)
        opts.seed = *a.seed;
    if (a.budget)
        opts.budget = a.budget;

    auto q = parse_query(a.sql, catalog);
    auto provider = a.explain ? nullptr : cfg.make_provider(tok);
    // EXPLAIN never calls the provider; a mock over an empty truth table stands in.
    MockProvider idle(std::make_shared<TruthTable>(), tok);
    ExtractionCache cache;
    EngineContext ctx{&catalog, &index, embedder.get(), &tok, provider ? provider.get() : &idle, &cache};
    QueryEngine engine(ctx, opts);
    auto state_dir = cfg.artifacts / "state";

    if (a.explain) {
        engine.load_state(state_dir);
        auto text = engine.explain(q);
        std::cout << text;
        write_json(cfg.artifacts / "last_report.json",
                   {{"explain", true}, {"strategy", a.strategy}, {"provider_calls", 0}, {"plan", text}});
        return kExitOk;
    }

    auto rs = engine.execute(q);
    engine.save_state(state_dir);
    {
        std::ofstream audit(cfg.artifacts / "audit.jsonl");
        engine.audit().write(audit);
    }

    std::ostringstream body;
    if (a.format == "csv")
        rs.write_csv(body);
    else
        rs.write_jsonl(body);
    fs::path report_path = cfg.artifacts / "last_report.json";
    if (a.out.empty()) {
        std::cout << body.str();
    } else {
        std::ofstream os(a.out);
        if (!os)
            throw IoError("cannot write " + a.out);
        os << body.str();
        report_path = a.out + ".report.json";
    }
    write_json(report_path, rs.report.to_json());

    const auto &r = rs.report;
    fmt::print(stderr, "tuples: {}, tokens: {} (in {}, out {}), provider calls: {}, wall: {:.1f} ms{}\n", r.tuples,
               r.tokens(), r.tokens_in, r.tokens_out, r.provider_calls, r.wall_ms,
               r.partial ? " [partial: budget exceeded]" : "");
    for (auto &w : r.warnings)
        fmt::print(stderr, "warning: {}\n", w);
    return r.partial ? kExitBudget : kExitOk;
}

/*----------------------------------------------------------------------------------------------------------------------
 * bench
 *--------------------------------------------------------------------------------------------------------------------*/

struct BenchArgs
{
    std::string preset = "nba";
    std::size_t docs = 200;
    std::uint64_t seed = 42;
    std::uint64_t data_seed = 7;
    std::size_t queries = 10;
    std::vector<std::string> groups;
    std::string out = "bench.csv";
    std::optional<std::size_t> budget;
};

int cmd_bench(const std::optional<Config> &cfg, const BenchArgs &a)
{
    auto spec = workload_preset(a.preset, a.docs, a.data_seed);
    if (cfg)
        spec.dim = cfg->embedder.dim;
    ApproxTokenizer tok;
    auto w = generate_workload(spec, tok);
    auto wb = make_workbench(w);

    BenchOptions bo;
    if (cfg)
        bo.engine = cfg->engine_options();
    bo.engine.budget = a.budget;
    bo.seed = a.seed;
    bo.engine.seed = a.seed;
    bo.queries_per_group = a.queries;
    if (!a.groups.empty())
        bo.groups = a.groups;
    else if (a.preset != "nba")
        bo.groups = {"C1", "C2", "C3"};

    auto rows = run_bench(*wb, w, bo);
    std::ofstream os(a.out);
    if (!os)
        throw IoError("cannot write " + a.out);
    write_bench_csv(rows, os);
    write_bench_table(rows, std::cout);
    fmt::print("wrote {}\n", a.out);
    return kExitOk;
}

}

int main(int argc, char **argv)
{
    CLI::App app{"Cost-aware SPJ queries over document collections"};
    app.require_subcommand(1);

    std::string config_path;
    app.add_option("--config", config_path, "Configuration file (JSON)");

    GenArgs gen;
    auto *g = app.add_subcommand("gen", "Generate a synthetic corpus with planted values and truth sidecar");
    g->add_option("--preset", gen.preset, "nba or single")->capture_default_str();
    g->add_option("--docs", gen.docs, "Documents in the main table")->capture_default_str();
    g->add_option("--seed", gen.seed)->capture_default_str();
    g->add_option("--avg-tokens", gen.avg_tokens)->capture_default_str();
    g->add_option("--dim", gen.dim, "Embedding dimension")->capture_default_str();
    g->add_option("--distractors", gen.distractors, "Off-topic documents in the main table");
    g->add_option("--asymmetry", gen.asymmetry, "Attribute whose cost is concentrated in odd documents");
    g->add_option("--queries", gen.queries, "Queries per group")->capture_default_str();
    g->add_option("--out", gen.out, "Output directory")->capture_default_str();

    auto *ix = app.add_subcommand("index", "Build the catalog and both indexes");

    QueryArgs qa;
    auto *q = app.add_subcommand("query", "Run or explain a query");
    q->add_option("sql", qa.sql, "SELECT ... FROM ... [JOIN ... ON ...] [WHERE ...]")->required();
    q->add_option("--strategy", qa.strategy, "quest, exhaust, selectivity, avg-cost, random or pushdown")
        ->capture_default_str();
    q->add_flag("--explain", qa.explain, "Print plans without provider calls");
    q->add_option("--seed", qa.seed);
    q->add_option("--budget", qa.budget, "Token ceiling");
    q->add_option("--out", qa.out, "Result file (default: stdout)");
    q->add_option("--format", qa.format, "jsonl or csv")->check(CLI::IsMember({"jsonl", "csv"}))->capture_default_str();
    q->add_option("--p-in", qa.p_in, "IN selectivity assumed by --explain for joins")->check(CLI::Range(0.0, 1.0));
    q->add_flag("--eager", qa.eager, "Extract every referenced attribute, then evaluate");
    q->add_option("--join-sequence", qa.join_sequence, "Forced table order for multi-way joins")->delimiter(',');

    BenchArgs ba;
    auto *b = app.add_subcommand("bench", "Run the strategy comparison on a generated workload");
    b->add_option("--preset", ba.preset)->capture_default_str();
    b->add_option("--docs", ba.docs)->capture_default_str();
    b->add_option("--seed", ba.seed, "Query and sampling seed")->capture_default_str();
    b->add_option("--data-seed", ba.data_seed, "Generator seed")->capture_default_str();
    b->add_option("--queries", ba.queries, "Queries per group")->capture_default_str();
    b->add_option("--groups", ba.groups, "Subset of C1,C2,C3,E1,E2,E3,F")->delimiter(',');
    b->add_option("--out", ba.out, "CSV report")->capture_default_str();
    b->add_option("--budget", ba.budget);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : kExitValidation;
    }

    try {
        std::optional<Config> cfg;
        if (!config_path.empty())
            cfg = Config::load(config_path);
        if (*g)
            return cmd_gen(gen);
        if (*b)
            return cmd_bench(cfg, ba);
        if (!cfg)
            throw ValidationError("--config is required for this command");
        if (*ix)
            return cmd_index(*cfg);
        return cmd_query(*cfg, qa);
    } catch (const Error &e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return exit_code(e);
    } catch (const std::exception &e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return 1;
    }
}
