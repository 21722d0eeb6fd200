#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "quest/catalog.hpp"

namespace quest {

/// One round trip to an extraction provider.
struct ProviderRequest
{
    enum class Kind {
        Extract,      ///< one attribute from retrieved segments
        Sample,       ///< every listed attribute from the whole document
        Synthesize,   ///< exemplar passages for an attribute that has no evidence
    };

    Kind kind = Kind::Extract;
    std::string doc_id;
    std::vector<AttributeSpec> attributes;
    std::vector<const Segment *> segments;
    std::string prompt;
    std::size_t count = 0;   ///< exemplars wanted (Synthesize)
};

struct ProviderResponse
{
    std::string content;
    std::size_t input_tokens = 0;
    std::size_t output_tokens = 0;
    double latency_ms = 0;
};

class ExtractionProvider
{
public:
    virtual ~ExtractionProvider() = default;
    /// Throws ProviderError on transport failure.
    virtual ProviderResponse complete(const ProviderRequest &req) = 0;
    virtual std::string id() const = 0;
};

struct TruthEntry
{
    Value value;
    Span span;
};

/// Ground truth for generated corpora: (doc_id, attribute) -> value and character span.
/// Attributes are keyed "Table.attr" when qualified, else by plain name.
class TruthTable
{
    std::map<std::pair<std::string, std::string>, TruthEntry> entries_;
    std::map<std::string, std::vector<std::string>> exemplars_;

public:
    void set(const std::string &doc_id, const std::string &attr, TruthEntry e);
    void add_exemplar(const std::string &attr, std::string text);

    /// Looks up the qualified key first, then the plain attribute name.
    const TruthEntry *find(const std::string &doc_id, const AttributeSpec &attr) const;
    const std::vector<std::string> *exemplars(const AttributeSpec &attr) const;
    std::size_t size() const { return entries_.size(); }
    const auto &entries() const { return entries_; }

    /// Records: {"doc_id","attribute","value","span_start","span_end"} and
    /// {"kind":"exemplar","attribute","text"}.
    void save(const std::filesystem::path &path) const;
    static TruthTable load(const std::filesystem::path &path);
};

/// How the mock bills a call.
enum class MockCostModel {
    Prompt,   ///< tokens(prompt) in, tokens(reply) out
    Exact,    ///< sum of supplied segment tokens in, nothing out
};

/// Deterministic provider backed by a truth table: a value is returned iff one of the
/// supplied segments overlaps its recorded span. Never touches the network.
class MockProvider final : public ExtractionProvider
{
    std::shared_ptr<const TruthTable> truth_;
    const Tokenizer &tok_;
    MockCostModel cost_;
    std::atomic<std::size_t> calls_{0};
    std::atomic<std::size_t> fail_next_{0};

public:
    MockProvider(std::shared_ptr<const TruthTable> truth, const Tokenizer &tok,
                 MockCostModel cost = MockCostModel::Exact)
        : truth_(std::move(truth)), tok_(tok), cost_(cost)
    { }

    ProviderResponse complete(const ProviderRequest &req) override;
    std::string id() const override { return "mock"; }

    std::size_t calls() const { return calls_; }
    /// Make the next `n` calls fail with ProviderError (for retry tests).
    void fail_next(std::size_t n) { fail_next_ = n; }

    /// Simulated latency: fixed overhead plus a per-token term.
    static double simulated_latency_ms(std::size_t in, std::size_t out) { return 20.0 + 0.05 * in + 0.5 * out; }
};

struct HttpProviderConfig
{
    std::string url;   ///< chat-completions endpoint
    std::string model;
    std::string api_key;
    double timeout_s = 60;
};

/// Chat-completions client; see src/http.cpp.
std::unique_ptr<ExtractionProvider> make_http_provider(HttpProviderConfig cfg, const Tokenizer &tok);

struct ExtractionResult
{
    Value value;
    std::vector<std::string> provenance;
    std::size_t input_tokens = 0;
    std::size_t output_tokens = 0;
    bool parse_warning = false;

    bool operator==(const ExtractionResult &) const = default;
};

struct ExtractionRequest
{
    std::string doc_id;
    AttributeSpec attribute;
    std::vector<const Segment *> segments;
    std::size_t prompt_budget = 1u << 20;
};

/// Parses a provider reply for one attribute: an object with a scalar "value" (and optionally
/// "segments"), or a bare scalar. Lists and malformed text yield NULL with the warning flag.
ExtractionResult parse_extraction(const std::string &content, DType dtype,
                                  const std::vector<const Segment *> &supplied);

std::string build_extraction_prompt(const AttributeSpec &attr, const std::vector<const Segment *> &segments);
std::string build_sample_prompt(const std::vector<AttributeSpec> &attrs, const std::vector<const Segment *> &segments);
std::string build_synthesis_prompt(const AttributeSpec &attr, std::size_t count);

std::size_t count_tokens(std::string_view text, const Tokenizer &tok);

/// (doc_id, qualified attribute) -> result, with per-key single flight.
class ExtractionCache
{
    using Key = std::pair<std::string, std::string>;
    mutable std::mutex mu_;
    std::map<Key, std::shared_future<ExtractionResult>> entries_;

public:
    /// Returns the cached result, or runs `compute` once even under concurrent misses.
    /// `hit` reports whether this caller reused an existing (or in-flight) entry.
    template <class F>
    ExtractionResult get_or_compute(const std::string &doc_id, const std::string &attr, F &&compute, bool &hit);

    std::optional<ExtractionResult> peek(const std::string &doc_id, const std::string &attr) const;
    bool contains(const std::string &doc_id, const std::string &attr) const { return peek(doc_id, attr).has_value(); }
    void put(const std::string &doc_id, const std::string &attr, ExtractionResult r);
    std::size_t size() const;
};

template <class F>
ExtractionResult ExtractionCache::get_or_compute(const std::string &doc_id, const std::string &attr, F &&compute,
                                                 bool &hit)
{
    std::promise<ExtractionResult> promise;
    std::shared_future<ExtractionResult> fut;
    {
        std::lock_guard lk(mu_);
        auto it = entries_.find({doc_id, attr});
        if (it != entries_.end()) {
            hit = true;
            fut = it->second;
        } else {
            hit = false;
            fut = promise.get_future().share();
            entries_.emplace(Key{doc_id, attr}, fut);
        }
    }
    if (hit)
        return fut.get();
    try {
        promise.set_value(compute());
    } catch (...) {
        {
            std::lock_guard lk(mu_);
            entries_.erase({doc_id, attr});
        }
        promise.set_exception(std::current_exception());
    }
    return fut.get();
}

struct AuditEntry
{
    std::size_t seq = 0;
    std::string doc_id;
    std::string attribute;   ///< qualified name, comma-joined for sample calls
    std::string phase;       ///< "extract", "sample" or "synthesize"
    std::size_t input_tokens = 0;
    std::size_t output_tokens = 0;
};

/// Append-only record of every provider call.
class AuditLog
{
    mutable std::mutex mu_;
    std::vector<AuditEntry> entries_;
    std::size_t next_ = 0;

public:
    void record(AuditEntry e);
    /// Entries grouped by document (in id order) with call order kept within a document, renumbered
    /// from 0. Worker scheduling does not change the result.
    std::vector<AuditEntry> entries() const;
    std::size_t size() const;
    std::size_t total_tokens() const;
    bool contains(const std::string &doc_id, const std::string &attribute) const;
    /// One JSON record per line: {timestamp, doc_id, attribute, phase, input_tokens, output_tokens}.
    void write(std::ostream &os) const;
};

/// Running token/call totals for one session, with an optional hard ceiling.
class TokenMeter
{
    std::atomic<std::size_t> in_{0}, out_{0}, calls_{0};
    std::atomic<double> latency_ms_{0};
    std::optional<std::size_t> budget_;

public:
    explicit TokenMeter(std::optional<std::size_t> budget = std::nullopt) : budget_(budget) { }
    /// Adds a call's usage; throws BudgetExceeded once the total passes the ceiling.
    void charge(std::size_t in, std::size_t out, double latency_ms);

    std::size_t input_tokens() const { return in_; }
    std::size_t output_tokens() const { return out_; }
    std::size_t total() const { return in_ + out_; }
    std::size_t calls() const { return calls_; }
    double latency_ms() const { return latency_ms_; }
    std::optional<std::size_t> budget() const { return budget_; }
};

struct ExtractorOptions
{
    std::size_t max_attempts = 3;
    std::chrono::milliseconds backoff{100};   ///< doubled after each failed attempt
};

struct ExtractionOutcome
{
    ExtractionResult result;
    bool cache_hit = false;
    std::size_t tokens_added = 0;
};

struct SampleExtraction
{
    TupleRecord record;
    std::size_t tokens = 0;
};

/// Provider calls with caching, retries, accounting, and auditing.
class Extractor
{
    ExtractionProvider &provider_;
    const Tokenizer &tok_;
    ExtractionCache &cache_;
    AuditLog &audit_;
    TokenMeter &meter_;
    ExtractorOptions opts_;

    ProviderResponse call(const ProviderRequest &req, const std::string &doc_id, const std::string &attr,
                          const char *phase);

public:
    Extractor(ExtractionProvider &provider, const Tokenizer &tok, ExtractionCache &cache, AuditLog &audit,
              TokenMeter &meter, ExtractorOptions opts = {})
        : provider_(provider), tok_(tok), cache_(cache), audit_(audit), meter_(meter), opts_(opts)
    { }

    /// Cache-aware extraction from retrieved segments. An empty segment list is NULL at zero
    /// cost without a provider call.
    ExtractionOutcome extract_attribute(const ExtractionRequest &req);

    /// Whole-document extraction of every attribute in one call. Results are seeded into the
    /// cache so the document is never billed twice for the same attribute.
    SampleExtraction extract_for_sample(const Document &doc, const std::vector<const Segment *> &segments,
                                        const std::vector<AttributeSpec> &attrs);

    /// Exemplar passages for evidence fallback.
    std::vector<std::string> synthesize(const AttributeSpec &attr, std::size_t count);

    ExtractionCache &cache() { return cache_; }
    const Tokenizer &tokenizer() const { return tok_; }
};

}
