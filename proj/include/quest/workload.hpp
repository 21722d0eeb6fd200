#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "quest/catalog.hpp"
#include "quest/embed.hpp"
#include "quest/executor.hpp"
#include "quest/extract.hpp"
#include "quest/index.hpp"

namespace quest {

/// Generation parameters of one attribute.
struct AttributePlan
{
    std::string name;
    DType dtype = DType::Number;
    /// Integer values in [lo, hi]; `threshold` splits them so that P(value > threshold) = selectivity.
    int lo = 0;
    int hi = 100;
    int threshold = 50;
    double selectivity = 0.5;
    /// Extra keyword sentences per document, uniform in [min_mentions, max_mentions]. They are
    /// retrieved with the value sentence and set the per-document extraction cost.
    std::size_t min_mentions = 0;
    std::size_t max_mentions = 0;
    double null_rate = 0;
    /// For string / categorical attributes: values are drawn from this table's `key` values
    /// (a foreign key), or are fresh unique names when empty.
    std::string references;
};

struct TablePlan
{
    std::string name;
    std::string prefix;   ///< document ids are prefix-NNN
    std::size_t docs = 0;
    std::vector<std::string> domain;   ///< topic words shared by every document of the table
    std::string key;                   ///< attribute holding the table's unique name
    std::vector<AttributePlan> attributes;
};

struct WorkloadSpec
{
    std::vector<TablePlan> tables;
    std::size_t avg_tokens = 416;
    std::size_t token_spread = 40;   ///< documents come in pairs at avg +- an offset up to this
    std::size_t keywords = 5;        ///< per attribute
    /// Cost asymmetry: odd documents get `asymmetry_mentions` keyword sentences for this
    /// attribute, even documents none.
    std::string asymmetry_attribute;
    std::size_t asymmetry_mentions = 4;
    std::size_t distractors = 0;     ///< off-topic documents added to the first table
    std::uint64_t seed = 7;
    std::size_t dim = 256;
};

/// "nba": Player (`docs` documents), Team, City and Owner. "single": the Player table alone.
WorkloadSpec workload_preset(std::string_view name, std::size_t docs = 200, std::uint64_t seed = 7);

/// Throws ValidationError on zero documents, selectivities outside (0, 1) and the like.
void validate(const WorkloadSpec &spec);

struct GeneratedWorkload
{
    WorkloadSpec spec;
    Corpus corpus;
    std::vector<TableSpec> tables;
    std::shared_ptr<TruthTable> truth;
    std::map<std::string, std::vector<std::string>> keywords;   ///< qualified attribute -> keywords
};

GeneratedWorkload generate_workload(const WorkloadSpec &spec, const Tokenizer &tok);

/// corpus.jsonl, schema.json and truth.jsonl under `dir`.
void write_workload(const GeneratedWorkload &w, const std::filesystem::path &dir);

/// Catalog, index and embedder over a generated (or loaded) corpus.
struct Workbench
{
    std::shared_ptr<Corpus> corpus;
    Catalog catalog;
    TwoLevelIndex index;
    std::unique_ptr<Embedder> embedder;
    ApproxTokenizer tokenizer;
    std::shared_ptr<const TruthTable> truth;
};

std::unique_ptr<Workbench> make_workbench(const GeneratedWorkload &w);

struct WorkloadQuery
{
    std::string group;
    std::string text;
    double in_selectivity = 0;   ///< join groups: true fraction of target documents matching the IN set
};

/// Single-table groups C1 (1 filter), C2 (2-3), C3 (4-5) mixing conjunctions, disjunctions
/// and nested trees; join groups E1/E2/E3 bucketed by IN selectivity (0-0.3, 0.3-0.6,
/// 0.6-1) and F (three-way joins). Join groups need the "nba" preset.
std::vector<WorkloadQuery> generate_queries(const GeneratedWorkload &w, const std::string &group, std::size_t count,
                                            std::uint64_t seed);

/// Result rows of `q` evaluated directly on the planted values of every table document.
std::vector<std::vector<Value>> ground_truth(const QuerySpec &q, const Catalog &catalog, const TruthTable &truth);

struct RunOutcome
{
    ResultSet result;
    Score score;
};

/// Executes `q` with a fresh cache and mock provider.
RunOutcome run_query(const Workbench &wb, const QuerySpec &q, const EngineOptions &opts);

struct BenchRow
{
    std::string group;
    std::string strategy;
    double mean_tokens = 0;
    double mean_calls = 0;
    double mean_wall_ms = 0;   ///< simulated provider latency
    double f1 = 0;
};

struct BenchOptions
{
    std::vector<std::string> groups{"C1", "C2", "C3", "E1", "E2", "E3", "F"};
    std::vector<std::string> single_table_strategies{"quest", "exhaust", "avg-cost", "selectivity", "random"};
    std::vector<std::string> join_strategies{"quest", "pushdown"};
    std::size_t queries_per_group = 10;
    std::uint64_t seed = 42;
    EngineOptions engine;
};

std::vector<BenchRow> run_bench(const Workbench &wb, const GeneratedWorkload &w, const BenchOptions &opts);

void write_bench_csv(const std::vector<BenchRow> &rows, std::ostream &os);
void write_bench_table(const std::vector<BenchRow> &rows, std::ostream &os);

}
