#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <sys/wait.h>

#include <fmt/format.h>
#include <json.hpp>

#include "helpers.hpp"
#include "quest/config.hpp"
#include "quest/error.hpp"
#include "quest/executor.hpp"
#include "quest/workload.hpp"

using namespace quest;
namespace fs = std::filesystem;

namespace {

struct Run
{
    int code;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path &p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Run run(const fs::path &dir, const std::string &args)
{
    auto out = dir / "stdout.txt", err = dir / "stderr.txt";
    auto cmd = fmt::format("'{}' {} > '{}' 2> '{}'", QUEST_BIN, args, out.string(), err.string());
    int status = std::system(cmd.c_str());
    int code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return {code, slurp(out), slurp(err)};
}

/// Generated workload plus built index under one scratch directory.
fs::path prepared(const std::string &name, std::size_t docs)
{
    auto dir = testing::scratch_dir(name);
    auto g = run(dir, fmt::format("gen --preset single --docs {} --seed 3 --queries 2 --out '{}'", docs, (dir / "w").string()));
    REQUIRE_MESSAGE(g.code == 0, g.err);
    auto ix = run(dir, fmt::format("--config '{}' index", (dir / "w" / "config.json").string()));
    REQUIRE_MESSAGE(ix.code == 0, ix.err);
    return dir;
}

}

TEST_CASE("planted selectivity is reproduced within three standard deviations")
{
    ApproxTokenizer tok;
    auto w = generate_workload(workload_preset("single", 100, 21), tok);
    AttributeSpec age = *w.tables[0].find("age");
    std::size_t hits = 0;
    for (auto &d : w.corpus.documents()) {
        auto *e = w.truth->find(d.doc_id, age);
        REQUIRE(e);
        hits += std::get<double>(e->value) > 35;
    }
    double frac = hits / 100.0, sigma = std::sqrt(0.3 * 0.7 / 100);
    CHECK(std::abs(frac - 0.3) <= 3 * sigma);
}

TEST_CASE("generator validation")
{
    auto spec = workload_preset("single", 0, 1);
    CHECK_THROWS_AS(validate(spec), ValidationError);
    spec = workload_preset("single", 10, 1);
    spec.tables[0].attributes[1].selectivity = 1.5;
    CHECK_THROWS_AS(validate(spec), ValidationError);
    CHECK_THROWS_AS(workload_preset("tennis", 10, 1), ValidationError);
    ApproxTokenizer tok;
    CHECK_THROWS_AS(generate_workload(workload_preset("single", 0, 1), tok), ValidationError);
}

TEST_CASE("generated value spans point at the value text")
{
    ApproxTokenizer tok;
    auto w = generate_workload(workload_preset("nba", 30, 2), tok);
    for (auto &[key, e] : w.truth->entries()) {
        auto *d = w.corpus.find(key.first);
        REQUIRE(d);
        REQUIRE(e.span.end <= d->text.size());
        CHECK(d->text.substr(e.span.start, e.span.end - e.span.start) == to_string(e.value));
    }
}

TEST_CASE("configuration invariants")
{
    nlohmann::json base = {{"corpus", "c.jsonl"}, {"schema", "s.json"}, {"provider", {{"kind", "mock"}, {"truth", "t.jsonl"}}}};
    auto ok = Config::from_json(base, "/data");
    CHECK(ok.sample_rate == 0.05);
    CHECK(ok.k == 3);
    CHECK(ok.initial_tau == 1.2);
    CHECK(ok.corpus == fs::path("/data/c.jsonl"));
    CHECK(ok.provider.truth == fs::path("/data/t.jsonl"));

    auto bad = [&](nlohmann::json patch) {
        auto j = base;
        j.merge_patch(patch);
        CHECK_THROWS_AS(Config::from_json(j, "/data"), ValidationError);
    };
    bad({{"sample_rate", 0}});
    bad({{"sample_rate", 1.5}});
    bad({{"k", 0}});
    bad({{"embedder", {{"dim", 4}}}});
    bad({{"provider", {{"kind", "oracle"}}}});

    auto again = Config::from_json(ok.to_json(), "");
    CHECK(again.to_json() == ok.to_json());
}

TEST_CASE("explain makes no provider calls")
{
    ApproxTokenizer tok;
    auto w = generate_workload(workload_preset("single", 30, 5), tok);
    auto wb = make_workbench(w);
    MockProvider mock(wb->truth, tok);
    ExtractionCache cache;
    QueryEngine engine({&wb->catalog, &wb->index, wb->embedder.get(), &tok, &mock, &cache});
    auto q = parse_query("SELECT name FROM Player WHERE age > 35 AND (points > 20 OR assists > 5)", wb->catalog);
    auto text = engine.explain(q);
    CHECK_FALSE(text.empty());
    CHECK(mock.calls() == 0);
}

TEST_CASE("index command is reproducible")
{
    auto dir = prepared("cli-index", 40);
    auto cfg = (dir / "w" / "config.json").string();
    auto art = dir / "w" / "artifacts";
    std::map<std::string, std::string> first;
    for (auto &e : fs::recursive_directory_iterator(art))
        if (e.is_regular_file())
            first[fs::relative(e.path(), art).string()] = slurp(e.path());
    auto again = run(dir, fmt::format("--config '{}' index", cfg));
    REQUIRE(again.code == 0);
    CHECK(again.out.rfind("documents: 40, segments: ", 0) == 0);
    std::size_t compared = 0;
    for (auto &[rel, bytes] : first) {
        CHECK_MESSAGE(slurp(art / rel) == bytes, rel);
        ++compared;
    }
    CHECK(compared >= 5);
}

TEST_CASE("a corrupt corpus record is reported with its line number")
{
    auto dir = prepared("cli-corrupt", 10);
    auto corpus = dir / "w" / "corpus.jsonl";
    auto text = slurp(corpus);
    auto second = text.find('\n', text.find('\n') + 1);
    text.insert(second + 1, "{broken\n");
    std::ofstream(corpus, std::ios::binary) << text;
    auto r = run(dir, fmt::format("--config '{}' index", (dir / "w" / "config.json").string()));
    CHECK(r.code == 2);
    CHECK_MESSAGE(r.err.find("corpus.jsonl:3:") != std::string::npos, r.err);
}

TEST_CASE("query command")
{
    auto dir = prepared("cli-query", 40);
    auto cfg = (dir / "w" / "config.json").string();
    auto art = dir / "w" / "artifacts";

    auto ex = run(dir, fmt::format("--config '{}' query --explain \"SELECT name FROM Player WHERE age > 35\"", cfg));
    REQUIRE_MESSAGE(ex.code == 0, ex.err);
    CHECK_FALSE(fs::exists(art / "audit.jsonl"));
    auto rep = nlohmann::json::parse(slurp(art / "last_report.json"));
    CHECK(rep.at("provider_calls") == 0);

    auto q = run(dir, fmt::format("--config '{}' query \"SELECT name FROM Player WHERE age > 35\" --out '{}'", cfg,
                                  (dir / "rows.jsonl").string()));
    REQUIRE_MESSAGE(q.code == 0, q.err);
    CHECK(fs::exists(art / "audit.jsonl"));
    auto report = nlohmann::json::parse(slurp(dir / "rows.jsonl.report.json"));
    CHECK(report.at("provider_calls").get<int>() > 0);
    CHECK(q.err.find("tuples: ") != std::string::npos);

    std::string nine = "SELECT name FROM Player WHERE age > 1 AND points > 1 AND rebounds > 1 AND assists > 1 AND "
                       "height > 1 AND all_stars > 1 AND age < 99 AND points < 99 AND rebounds < 99";
    auto guard = run(dir, fmt::format("--config '{}' query --strategy exhaust \"{}\"", cfg, nine));
    CHECK(guard.code == 2);
    CHECK(guard.err.find("exhaustive ordering is limited to 8") != std::string::npos);

    auto bad = run(dir, fmt::format("--config '{}' query \"SELECT name FROM Player WHERE NOT age > 3\"", cfg));
    CHECK(bad.code == 2);
    auto budget = run(dir, fmt::format("--config '{}' query --budget 500 \"SELECT name FROM Player WHERE age > 3\"", cfg));
    CHECK(budget.code == 4);
}

TEST_CASE("bench output is identical across runs")
{
    auto dir = testing::scratch_dir("cli-bench");
    auto args = [&](const char *name) {
        return fmt::format("bench --preset nba --docs 40 --queries 2 --groups C1,C2,E1 --out '{}'", (dir / name).string());
    };
    auto a = run(dir, args("a.csv"));
    REQUIRE_MESSAGE(a.code == 0, a.err);
    auto b = run(dir, args("b.csv"));
    REQUIRE(b.code == 0);
    auto csv = slurp(dir / "a.csv");
    CHECK(csv == slurp(dir / "b.csv"));
    CHECK(csv.rfind("group,strategy,mean_tokens,mean_calls,mean_wall_ms,f1\n", 0) == 0);
}
