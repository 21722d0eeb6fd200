#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "quest/catalog.hpp"
#include "quest/embed.hpp"
#include "quest/extract.hpp"
#include "quest/index.hpp"
#include "quest/planner.hpp"
#include "quest/query.hpp"
#include "quest/stats.hpp"

namespace quest {

struct EngineOptions
{
    /// Filter ordering ("quest", "exhaust", "selectivity", "avg-cost", "random"), or
    /// "pushdown": quest ordering with filters pushed to every join side before joining.
    std::string strategy = "quest";
    double sample_rate = kDefaultSampleRate;
    std::uint64_t seed = 42;
    double initial_tau = 1.2;
    double default_gamma = 0.5;
    EvidenceParams evidence;
    std::optional<std::size_t> budget;
    std::size_t workers = 1;
    ExtractorOptions extractor;
    /// Extract every referenced attribute of every retrieved document, then evaluate.
    bool eager = false;
    /// Forced left-deep table order for multi-way joins; empty = adaptive.
    std::vector<std::string> join_sequence;
    /// IN-filter selectivity assumed by EXPLAIN when no sample is available.
    std::optional<double> explain_p_in;
};

/// Statistics gathered for one table while serving one query.
struct TableState
{
    std::string table;
    std::vector<AttributeSpec> attributes;
    Embedding query_embedding;
    std::vector<std::string> candidates;   ///< table documents
    std::vector<std::string> retrieved;    ///< D_Q under the initial threshold
    std::vector<std::string> refined;      ///< D_Q* under the calibrated threshold
    std::vector<std::string> sample;
    std::vector<TupleRecord> sample_records;
    SampleSplit split;
    ThresholdState thresholds;
    std::map<std::string, EvidenceSet> evidence;
    std::size_t sample_tokens = 0;
};

struct JoinStep
{
    std::string driving;        ///< table (or tables already joined) supplying values
    std::string target;
    std::string driving_attr;
    std::string target_attr;
    std::size_t in_values = 0;
    double p_in = 0;
    double estimated_cost = 0;  ///< expected target-side cost with the IN filter
    std::size_t tokens = 0;     ///< realized tokens of this step
};

struct SessionReport
{
    std::string strategy;
    std::size_t tuples = 0;
    std::size_t tokens_in = 0;
    std::size_t tokens_out = 0;
    std::size_t provider_calls = 0;
    std::size_t sample_tokens = 0;
    double wall_ms = 0;
    double provider_latency_ms = 0;   ///< provider-reported latency (simulated for the mock)
    bool partial = false;
    std::vector<std::string> warnings;
    std::vector<std::string> failed_docs;
    std::map<std::string, std::size_t> per_doc_tokens;
    std::vector<std::string> join_sequence;
    std::vector<JoinStep> join_steps;
    std::optional<JoinPlanChoice> join_choice;
    std::map<std::string, double> tau;

    std::size_t tokens() const { return tokens_in + tokens_out; }
    nlohmann::json to_json() const;
};

struct ResultSet
{
    std::vector<AttributeSpec> columns;
    std::vector<TupleRecord> tuples;   ///< doc_id joins source ids with '|'
    SessionReport report;

    /// Values in column order, one row per tuple.
    std::vector<std::vector<Value>> rows() const;
    /// Line-delimited JSON records keyed by qualified column name.
    void write_jsonl(std::ostream &os) const;
    void write_csv(std::ostream &os) const;
};

/// Extracts one attribute of the document being evaluated: its value and the tokens spent
/// (0 on a cache hit).
using AttributeFetch = std::function<std::pair<Value, std::size_t>(const AttributeSpec &)>;

struct DocumentEvaluation
{
    bool passed = false;
    std::size_t tokens = 0;
    std::vector<std::size_t> initial_order;
    std::vector<std::size_t> evaluated;   ///< leaf ids in evaluation order
    std::size_t replans = 0;
    double expected_cost = 0;             ///< of the initial plan, by the optimizer's estimate
};

/// Lazy short-circuit evaluation of one document. `prefix` attributes are fetched first
/// (their filters become free), then filters run in the strategy's order, skipping any
/// whose enclosing sub-expression is already decided. A replanning strategy re-orders the
/// residual expression whenever an extraction makes a pending filter free. `tail`
/// attributes are fetched only when the expression holds. `tree` may be null (no filters).
DocumentEvaluation evaluate_document(const PlanNode *tree, const std::vector<Predicate> &preds,
                                     std::vector<LeafEstimate> est, std::span<const double> avg_cost,
                                     std::uint64_t seed, const OrderingStrategy &strategy,
                                     const std::vector<AttributeSpec> &prefix, const std::vector<AttributeSpec> &tail,
                                     const AttributeFetch &fetch);

/// Everything the engine reads; owned by the caller.
struct EngineContext
{
    const Catalog *catalog = nullptr;
    const TwoLevelIndex *index = nullptr;
    const Embedder *embedder = nullptr;
    const Tokenizer *tokenizer = nullptr;
    ExtractionProvider *provider = nullptr;
    ExtractionCache *cache = nullptr;
};

class QueryEngine
{
    EngineContext ctx_;
    EngineOptions opts_;
    std::map<std::string, TableState> state_;
    std::unique_ptr<AuditLog> audit_;

public:
    QueryEngine(EngineContext ctx, EngineOptions opts = {});

    /// Runs the query. Budget exhaustion returns the partial result with `report.partial`
    /// set; the caller decides how to surface it.
    ResultSet execute(const QuerySpec &q);

    /// Plans without provider calls, from persisted or default statistics.
    std::string explain(const QuerySpec &q) const;

    const std::map<std::string, TableState> &tables() const { return state_; }
    /// Audit log of the most recent `execute`.
    const AuditLog &audit() const { return *audit_; }
    const EngineOptions &options() const { return opts_; }

    /// Thresholds, evidence and sample records of the last run, for later EXPLAIN.
    void save_state(const std::filesystem::path &dir) const;
    void load_state(const std::filesystem::path &dir);
};

struct Score
{
    double precision = 0;
    double recall = 0;
    double f1 = 0;
};

/// Tuples compare by value as multisets. P = 1 for an empty result; F1 = 0 when P + R = 0.
Score score_results(const std::vector<std::vector<Value>> &result, const std::vector<std::vector<Value>> &truth);

}
