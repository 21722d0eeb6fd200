#include "quest/executor.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

#include <fmt/format.h>

#include "quest/error.hpp"

namespace quest {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::uint64_t fnv1a(std::string_view s)
{
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

template <class F>
void parallel_for(std::size_t n, std::size_t workers, F &&fn)
{
    if (workers <= 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i)
            fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::atomic<bool> stop{false};
    std::exception_ptr err;
    std::mutex mu;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < std::min(workers, n); ++w)
        pool.emplace_back([&] {
            while (!stop) {
                std::size_t i = next++;
                if (i >= n)
                    break;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lk(mu);
                    if (!err)
                        err = std::current_exception();
                    stop = true;
                }
            }
        });
    for (auto &t : pool)
        t.join();
    if (err)
        std::rethrow_exception(err);
}

bool evaluate_expression(const ExpressionNode &n, const std::function<Value(const AttributeSpec &)> &value_of)
{
    if (n.is_leaf())
        return n.predicate->evaluate(value_of(n.predicate->attribute));
    if (n.kind == ExpressionNode::Kind::And)
        return std::all_of(n.children.begin(), n.children.end(),
                           [&](auto &c) { return evaluate_expression(c, value_of); });
    return std::any_of(n.children.begin(), n.children.end(), [&](auto &c) { return evaluate_expression(c, value_of); });
}

void add_unique(std::vector<AttributeSpec> &v, const AttributeSpec &a)
{
    if (std::find(v.begin(), v.end(), a) == v.end())
        v.push_back(a);
}

bool join_fold(const AttributeSpec &a, const AttributeSpec &b)
{
    return a.dtype == DType::Categorical || b.dtype == DType::Categorical;
}

}

/*----------------------------------------------------------------------------------------------------------------------
 * Per-document evaluation
 *--------------------------------------------------------------------------------------------------------------------*/

DocumentEvaluation evaluate_document(const PlanNode *tree, const std::vector<Predicate> &preds,
                                     std::vector<LeafEstimate> est, std::span<const double> avg_cost,
                                     std::uint64_t seed, const OrderingStrategy &strategy,
                                     const std::vector<AttributeSpec> &prefix, const std::vector<AttributeSpec> &tail,
                                     const AttributeFetch &fetch)
{
    DocumentEvaluation ev;
    auto zero_attr = [&](const AttributeSpec &a) {
        bool freed_pending = false;
        for (std::size_t i = 0; i < preds.size(); ++i)
            if (preds[i].attribute == a && est[i].cost > 0) {
                est[i].cost = 0;
                freed_pending = true;
            }
        return freed_pending;
    };

    for (auto &a : prefix) {
        ev.tokens += fetch(a).second;
        zero_attr(a);
    }

    if (tree) {
        PlanningInput in{est, avg_cost, seed};
        auto order = strategy.order(*tree, in);
        ev.initial_order = order;
        ev.expected_cost = block_order_cost(*tree, est, order);
        std::vector<std::optional<bool>> values(preds.size());
        std::size_t pos = 0;
        while (!evaluate_partial(*tree, values)) {
            auto pend = pending_leaves(*tree, values);
            while (pos < order.size() && std::find(pend.begin(), pend.end(), order[pos]) == pend.end())
                ++pos;
            std::size_t leaf = pos < order.size() ? order[pos] : pend.front();
            const auto &pred = preds[leaf];
            auto [value, tokens] = fetch(pred.attribute);
            ev.tokens += tokens;
            ev.evaluated.push_back(leaf);
            values[leaf] = pred.evaluate(value);

            // Other filters on the same attribute are free from now on.
            std::vector<std::optional<bool>> before = values;
            bool freed = false;
            for (std::size_t i = 0; i < preds.size(); ++i)
                if (i != leaf && !values[i] && preds[i].attribute == pred.attribute && est[i].cost > 0)
                    freed = true;
            zero_attr(pred.attribute);
            est[leaf].cost = 0;
            if (freed && strategy.replans()) {
                if (auto rest = residual(*tree, values)) {
                    PlanningInput again{est, avg_cost, seed};
                    order = strategy.order(*rest, again);
                    pos = 0;
                    ++ev.replans;
                }
            }
        }
        ev.passed = *evaluate_partial(*tree, values);
    } else {
        ev.passed = true;
    }

    if (ev.passed)
        for (auto &a : tail)
            ev.tokens += fetch(a).second;
    return ev;
}

/*----------------------------------------------------------------------------------------------------------------------
 * Results
 *--------------------------------------------------------------------------------------------------------------------*/

json SessionReport::to_json() const
{
    json j = {{"strategy", strategy},
              {"tuples", tuples},
              {"tokens_in", tokens_in},
              {"tokens_out", tokens_out},
              {"tokens", tokens()},
              {"provider_calls", provider_calls},
              {"sample_tokens", sample_tokens},
              {"wall_time_ms", wall_ms},
              {"provider_latency_ms", provider_latency_ms},
              {"partial", partial},
              {"warnings", warnings},
              {"failed_docs", failed_docs},
              {"per_doc", per_doc_tokens},
              {"tau", tau}};
    if (!join_sequence.empty())
        j["join_sequence"] = join_sequence;
    if (join_choice)
        j["join_plan"] = {{"driving", join_choice->driving},
                          {"target", join_choice->target},
                          {"left_score", join_choice->left_score},
                          {"right_score", join_choice->right_score}};
    for (auto &s : join_steps)
        j["join_steps"].push_back({{"driving", s.driving},
                                   {"target", s.target},
                                   {"driving_attr", s.driving_attr},
                                   {"target_attr", s.target_attr},
                                   {"in_values", s.in_values},
                                   {"p_in", s.p_in},
                                   {"estimated_cost", s.estimated_cost},
                                   {"tokens", s.tokens}});
    return j;
}

std::vector<std::vector<Value>> ResultSet::rows() const
{
    std::vector<std::vector<Value>> out;
    for (auto &t : tuples) {
        std::vector<Value> row;
        for (auto &c : columns)
            row.push_back(t.get(c.qualified()));
        out.push_back(std::move(row));
    }
    return out;
}

void ResultSet::write_jsonl(std::ostream &os) const
{
    for (auto &t : tuples) {
        json j = json::object();
        j["_doc"] = t.doc_id;
        for (auto &c : columns)
            j[c.qualified()] = to_json(t.get(c.qualified()));
        os << j.dump() << '\n';
    }
}

void ResultSet::write_csv(std::ostream &os) const
{
    auto quote = [](const std::string &s) {
        if (s.find_first_of(",\"\n") == std::string::npos)
            return s;
        std::string out = "\"";
        for (char c : s)
            out += c == '"' ? std::string("\"\"") : std::string(1, c);
        return out + "\"";
    };
    for (std::size_t i = 0; i < columns.size(); ++i)
        os << (i ? "," : "") << quote(columns[i].qualified());
    os << '\n';
    for (auto &row : rows()) {
        for (std::size_t i = 0; i < row.size(); ++i)
            os << (i ? "," : "") << (is_null(row[i]) ? "" : quote(to_string(row[i])));
        os << '\n';
    }
}

Score score_results(const std::vector<std::vector<Value>> &result, const std::vector<std::vector<Value>> &truth)
{
    auto key = [](const std::vector<Value> &row) {
        std::string k;
        for (auto &v : row)
            k += canonical_key(v, false) + '\x1f';
        return k;
    };
    std::map<std::string, std::size_t> want;
    for (auto &r : truth)
        ++want[key(r)];
    std::size_t hit = 0;
    for (auto &r : result) {
        auto it = want.find(key(r));
        if (it != want.end() && it->second > 0) {
            --it->second;
            ++hit;
        }
    }
    Score s;
    s.precision = result.empty() ? 1.0 : static_cast<double>(hit) / static_cast<double>(result.size());
    s.recall = truth.empty() ? 1.0 : static_cast<double>(hit) / static_cast<double>(truth.size());
    s.f1 = s.precision + s.recall == 0 ? 0.0 : 2 * s.precision * s.recall / (s.precision + s.recall);
    return s;
}

/*----------------------------------------------------------------------------------------------------------------------
 * Session
 *--------------------------------------------------------------------------------------------------------------------*/

namespace {

/// Filters of one table, indexed by leaf id.
struct Filters
{
    std::optional<PlanNode> tree;
    std::vector<Predicate> preds;
    std::vector<FilterStats> stats;

    std::vector<AttributeSpec> attributes() const
    {
        std::vector<AttributeSpec> out;
        for (auto &p : preds)
            add_unique(out, p.attribute);
        return out;
    }

    Filters with_in(Predicate in, FilterStats st) const
    {
        Filters f = *this;
        std::size_t id = f.preds.size();
        f.preds.push_back(std::move(in));
        f.stats.push_back(st);
        f.tree = tree ? PlanNode::combine(PlanNode::Kind::And, {PlanNode::make_leaf(id), *tree}) : PlanNode::make_leaf(id);
        return f;
    }
};

/// A (partially) joined relation: each row maps table -> document.
struct Relation
{
    std::vector<std::string> tables;
    std::vector<std::map<std::string, std::string>> rows;

    bool has(const std::string &t) const { return std::find(tables.begin(), tables.end(), t) != tables.end(); }
};

class Session
{
    const EngineContext &ctx_;
    const EngineOptions &opts_;
    std::map<std::string, TableState> &state_;
    TokenMeter meter_;
    Extractor extractor_;
    std::unique_ptr<OrderingStrategy> strategy_;
    bool pushdown_ = false;
    std::mutex mu_;
    std::map<std::string, std::map<std::string, double>> avg_cost_;

public:
    SessionReport report;

    Session(const EngineContext &ctx, const EngineOptions &opts, std::map<std::string, TableState> &state,
            AuditLog &audit)
        : ctx_(ctx)
        , opts_(opts)
        , state_(state)
        , meter_(opts.budget)
        , extractor_(*ctx.provider, *ctx.tokenizer, *ctx.cache, audit, meter_, opts.extractor)
    {
        pushdown_ = opts.strategy == "pushdown";
        strategy_ = make_strategy(pushdown_ ? "quest" : opts.strategy);
        report.strategy = opts.eager ? "eager" : opts.strategy;
    }

    void finish()
    {
        report.tokens_in = meter_.input_tokens();
        report.tokens_out = meter_.output_tokens();
        report.provider_calls = meter_.calls();
        report.provider_latency_ms = meter_.latency_ms();
        for (auto &[t, st] : state_)
            report.tau[t] = st.thresholds.tau;
    }

    void warn(std::string w)
    {
        std::lock_guard lk(mu_);
        report.warnings.push_back(std::move(w));
    }

    void charge_doc(const std::string &doc, std::size_t tokens)
    {
        if (tokens == 0)
            return;
        std::lock_guard lk(mu_);
        report.per_doc_tokens[doc] += tokens;
    }

    std::size_t tokens_so_far() const { return meter_.total(); }

    /*------------------------------------------------------------------------------------------------------------------
     * Preparation: retrieval, sampling, calibration
     *----------------------------------------------------------------------------------------------------------------*/

    TableState &prepare(const QuerySpec &q, const std::string &table)
    {
        TableState st;
        st.table = table;
        st.attributes = q.referenced_attributes(table);
        if (st.attributes.empty())
            st.attributes = ctx_.catalog->table(table).attributes;
        st.candidates = ctx_.catalog->table_documents(table);
        st.query_embedding = query_embedding(st.attributes, *ctx_.embedder);
        st.thresholds.tau = opts_.initial_tau;
        st.retrieved = retrieve_documents(ctx_.index->documents(), st.query_embedding, opts_.initial_tau, &st.candidates);
        st.refined = st.retrieved;

        auto before = meter_.total();
        st.sample = sample_documents(st.retrieved, opts_.sample_rate, opts_.seed ^ fnv1a(table));
        for (auto &id : st.sample) {
            const auto *doc = ctx_.catalog->corpus().find(id);
            try {
                auto s = extractor_.extract_for_sample(*doc, ctx_.index->segments_of(id), st.attributes);
                charge_doc(id, s.tokens);
                st.sample_records.push_back(std::move(s.record));
            } catch (const ProviderError &e) {
                warn(fmt::format("sample {} skipped: {}", id, e.what()));
            }
        }
        st.split = split_sample(st.sample_records, st.attributes);

        if (!st.retrieved.empty()) {
            std::map<std::string, bool> relevance;
            for (auto &id : st.split.relevant)
                relevance[id] = true;
            for (auto &id : st.split.irrelevant)
                relevance[id] = false;
            try {
                st.thresholds.tau = calibrate_tau(ctx_.index->documents(), st.query_embedding, relevance);
                st.thresholds.calibrated = true;
                st.refined = retrieve_documents(ctx_.index->documents(), st.query_embedding, st.thresholds.tau,
                                                &st.retrieved);
            } catch (const CalibrationFailed &e) {
                warn(fmt::format("{}: {}; keeping tau {}", table, e.what(), opts_.initial_tau));
            }
        }

        for (auto &a : st.attributes) {
            auto key = a.qualified();
            std::vector<Embedding> prov;
            for (auto &r : st.sample_records) {
                auto it = r.provenance.find(key);
                if (it == r.provenance.end())
                    continue;
                for (auto &sid : it->second)
                    if (const auto *seg = ctx_.index->segment(sid))
                        prov.push_back(seg->embedding);
            }
            try {
                st.evidence[key] = collect_evidence(
                    a, prov, *ctx_.embedder,
                    [&](const AttributeSpec &attr, std::size_t n) { return extractor_.synthesize(attr, n); },
                    opts_.evidence);
            } catch (const EvidenceUnavailable &e) {
                warn(e.what());
                EvidenceSet ev;
                ev.attribute = a;
                ev.source = EvidenceSource::Synthesized;
                ev.centers.push_back(ctx_.embedder->embed(a.name + ": " + a.description));
                st.evidence[key] = std::move(ev);
            }
            auto g = calibrate_gamma(prov, opts_.default_gamma);
            st.thresholds.gamma[key] = g.gamma;
            st.thresholds.gamma_fallback[key] = g.fallback;
            if (g.fallback)
                warn(fmt::format("{}: fewer than two provenance segments, gamma defaults to {}", key, g.gamma));
        }
        st.sample_tokens = meter_.total() - before;
        report.sample_tokens += st.sample_tokens;

        // Sample-average retrieval cost per attribute, for the average-cost baseline.
        auto &avg = avg_cost_[table];
        for (auto &a : st.attributes) {
            double sum = 0;
            for (auto &id : st.sample)
                sum += static_cast<double>(
                    retrieve_segments(*ctx_.index, id, st.evidence[a.qualified()], st.thresholds.gamma[a.qualified()])
                        .total_tokens);
            avg[a.qualified()] = st.sample.empty() ? 0 : sum / static_cast<double>(st.sample.size());
        }

        state_[table] = std::move(st);
        return state_[table];
    }

    Filters make_filters(const std::optional<ExpressionNode> &where, const TableState &st) const
    {
        Filters f;
        if (!where)
            return f;
        f.tree = PlanNode::from(*where);
        for (auto *p : leaves(*where)) {
            f.preds.push_back(*p);
            f.stats.push_back(estimate_selectivity(*p, st.sample_records));
        }
        return f;
    }

    RetrievalContext retrieval(const TableState &st) const
    {
        return {ctx_.index, &st.evidence, &st.thresholds.gamma};
    }

    /// Per-leaf estimates for one document: selectivity from the sample, this document's cost.
    std::vector<LeafEstimate> estimates(const Filters &f, const DocCostVector &costs) const
    {
        std::vector<LeafEstimate> est;
        for (std::size_t i = 0; i < f.preds.size(); ++i)
            est.push_back({f.stats[i].selectivity, static_cast<double>(costs.at(f.preds[i].attribute))});
        return est;
    }

    std::vector<double> averages(const TableState &st, const Filters &f)
    {
        std::vector<double> out;
        auto &avg = avg_cost_[st.table];
        for (auto &p : f.preds)
            out.push_back(avg[p.attribute.qualified()]);
        return out;
    }

    /*------------------------------------------------------------------------------------------------------------------
     * Extraction and document runs
     *----------------------------------------------------------------------------------------------------------------*/

    std::pair<Value, std::size_t> fetch(const TableState &st, const std::string &doc, const AttributeSpec &a)
    {
        auto key = a.qualified();
        auto ev = st.evidence.find(key);
        if (ev == st.evidence.end())
            throw UnknownSymbol("no evidence for " + key);
        auto sel = retrieve_segments(*ctx_.index, doc, ev->second, st.thresholds.gamma.at(key));
        ExtractionRequest req{doc, a, sel.segments};
        auto out = extractor_.extract_attribute(req);
        if (out.result.parse_warning && !out.cache_hit)
            warn(fmt::format("{} {}: unparseable provider output", doc, key));
        charge_doc(doc, out.tokens_added);
        return {out.result.value, out.tokens_added};
    }

    /// Value of an attribute for a document, extracting when needed.
    Value value_of(const std::string &table, const std::string &doc, const AttributeSpec &a)
    {
        if (auto hit = ctx_.cache->peek(doc, a.qualified()))
            return hit->value;
        return fetch(state_.at(table), doc, a).first;
    }

    struct RunResult
    {
        std::vector<std::string> passed;
        std::size_t tokens = 0;
    };

    /// Evaluates `f` on every refined document of the table, fetching `tail` for survivors.
    RunResult run_table(const TableState &st, const Filters &f, const std::vector<AttributeSpec> &prefix,
                        const std::vector<AttributeSpec> &tail)
    {
        const auto &docs = st.refined;
        std::vector<char> passed(docs.size(), 0);
        auto before = meter_.total();
        auto avg = averages(st, f);
        auto attrs = f.attributes();
        parallel_for(docs.size(), opts_.workers, [&](std::size_t i) {
            const auto &doc = docs[i];
            try {
                auto costs = measure_costs(doc, attrs, retrieval(st), *ctx_.cache);
                auto est = estimates(f, costs);
                auto ev = evaluate_document(f.tree ? &*f.tree : nullptr, f.preds, std::move(est), avg,
                                            opts_.seed ^ fnv1a(doc), *strategy_, prefix, tail,
                                            [&](const AttributeSpec &a) { return fetch(st, doc, a); });
                passed[i] = ev.passed;
            } catch (const ProviderError &e) {
                std::lock_guard lk(mu_);
                report.failed_docs.push_back(doc);
                report.warnings.push_back(fmt::format("{} failed: {}", doc, e.what()));
            }
        });
        RunResult r;
        for (std::size_t i = 0; i < docs.size(); ++i)
            if (passed[i])
                r.passed.push_back(docs[i]);
        r.tokens = meter_.total() - before;
        return r;
    }

    /// Extract-everything baseline for one table.
    std::vector<std::string> run_table_eager(const TableState &st, const std::optional<ExpressionNode> &where)
    {
        std::vector<std::string> out;
        for (auto &doc : st.refined) {
            try {
                std::map<std::string, Value> vals;
                for (auto &a : st.attributes)
                    vals[a.qualified()] = fetch(st, doc, a).first;
                if (!where || evaluate_expression(*where, [&](const AttributeSpec &a) { return vals[a.qualified()]; }))
                    out.push_back(doc);
            } catch (const ProviderError &e) {
                report.failed_docs.push_back(doc);
                warn(fmt::format("{} failed: {}", doc, e.what()));
            }
        }
        return out;
    }

    /*------------------------------------------------------------------------------------------------------------------
     * Result assembly
     *----------------------------------------------------------------------------------------------------------------*/

    TupleRecord project(const QuerySpec &q, const std::map<std::string, std::string> &row)
    {
        TupleRecord rec;
        for (auto &t : q.tables) {
            auto it = row.find(t.name);
            if (it == row.end())
                continue;
            rec.doc_id += (rec.doc_id.empty() ? "" : "|") + it->second;
        }
        for (auto &a : q.select) {
            const auto &doc = row.at(a.table);
            auto key = a.qualified();
            Value v = value_of(a.table, doc, a);
            rec.values[key] = v;
            if (auto hit = ctx_.cache->peek(doc, key))
                rec.provenance[key] = hit->provenance;
        }
        return rec;
    }

    /*------------------------------------------------------------------------------------------------------------------
     * Single table
     *----------------------------------------------------------------------------------------------------------------*/

    ResultSet single_table(const QuerySpec &q, std::vector<TupleRecord> &out)
    {
        ResultSet rs;
        const auto &name = q.tables.front().name;
        auto &st = prepare(q, name);
        auto select = q.select_of(name);
        std::vector<std::string> passed;
        if (opts_.eager) {
            passed = run_table_eager(st, q.where);
        } else {
            auto f = make_filters(q.where, st);
            std::vector<AttributeSpec> prefix;
            if (f.tree && f.tree->kind == PlanNode::Kind::Or)
                for (auto &a : select)
                    if (std::find_if(f.preds.begin(), f.preds.end(),
                                     [&](auto &p) { return p.attribute == a; }) != f.preds.end())
                        add_unique(prefix, a);
            passed = run_table(st, f, prefix, select).passed;
        }
        for (auto &doc : passed)
            out.push_back(project(q, {{name, doc}}));
        return rs;
    }

    /*------------------------------------------------------------------------------------------------------------------
     * Joins
     *----------------------------------------------------------------------------------------------------------------*/

    JoinSide side_summary(const TableState &st, const Filters &f, const AttributeSpec &join_attr) const
    {
        JoinSide s;
        s.table = st.table;
        s.docs = st.refined.size();
        auto attrs = f.attributes();
        add_unique(attrs, join_attr);
        for (auto &doc : st.refined) {
            auto costs = measure_costs(doc, attrs, retrieval(st), *ctx_.cache);
            auto est = estimates(f, costs);
            if (f.tree) {
                s.filter_cost += order_expression(*f.tree, est).expected_cost;
                s.prob = tree_probability(*f.tree, est);
            }
            s.join_cost += static_cast<double>(costs.at(join_attr));
        }
        return s;
    }

    /// Expected cost of running `f` (which already contains the IN filter) over the table.
    double estimated_side_cost(const TableState &st, const Filters &f) const
    {
        double total = 0;
        auto attrs = f.attributes();
        for (auto &doc : st.refined) {
            auto costs = measure_costs(doc, attrs, retrieval(st), *ctx_.cache);
            total += order_expression(*f.tree, estimates(f, costs)).expected_cost;
        }
        return total;
    }

    struct Candidate
    {
        std::string table;
        JoinEdge edge;   ///< left side in the relation, right side in `table`
        Filters filters;
        Predicate in;
        double p_in = 0;
        double estimate = 0;
        std::set<std::string> keys;
    };

    /// Orients `e` so that its left attribute belongs to the relation.
    static JoinEdge oriented(const JoinEdge &e, const Relation &rel)
    {
        return rel.has(e.left.table) ? e : JoinEdge{e.right, e.left};
    }

    Candidate build_candidate(const Relation &rel, const JoinEdge &e, const std::map<std::string, Filters> &filters)
    {
        Candidate c;
        c.edge = oriented(e, rel);
        c.table = c.edge.right.table;
        bool fold = join_fold(c.edge.left, c.edge.right);
        std::vector<Value> values;
        std::set<std::string> seen_docs;
        for (auto &row : rel.rows) {
            const auto &doc = row.at(c.edge.left.table);
            if (!seen_docs.insert(doc).second)
                continue;
            Value v = value_of(c.edge.left.table, doc, c.edge.left);
            if (is_null(v))
                continue;
            values.push_back(v);
            c.keys.insert(canonical_key(v, fold));
        }
        c.in = transform_join_to_in(values, c.edge.right, fold);
        const auto &st = state_.at(c.table);
        auto est = estimate_in_selectivity(c.keys, c.edge.right, st.sample_records, fold);
        c.p_in = est.selectivity;
        c.filters = filters.at(c.table).with_in(c.in, est);
        c.estimate = estimated_side_cost(st, c.filters);
        return c;
    }

    /// Runs the target side with the IN filter and joins it into `rel`; other edges between
    /// the new table and the relation act as equality checks.
    void join_into(Relation &rel, const Candidate &c, const std::vector<JoinEdge> &edges)
    {
        auto before = meter_.total();
        const auto &st = state_.at(c.table);
        auto run = run_table(st, c.filters, {}, {});
        bool fold = join_fold(c.edge.left, c.edge.right);

        std::map<std::string, std::vector<std::string>> by_key;
        for (auto &doc : run.passed) {
            Value v = value_of(c.table, doc, c.edge.right);
            if (!is_null(v))
                by_key[canonical_key(v, fold)].push_back(doc);
        }
        std::vector<std::map<std::string, std::string>> rows;
        for (auto &row : rel.rows) {
            Value v = value_of(c.edge.left.table, row.at(c.edge.left.table), c.edge.left);
            if (is_null(v))
                continue;
            auto it = by_key.find(canonical_key(v, fold));
            if (it == by_key.end())
                continue;
            for (auto &doc : it->second) {
                auto r = row;
                r[c.table] = doc;
                rows.push_back(std::move(r));
            }
        }
        rel.tables.push_back(c.table);
        rel.rows = std::move(rows);
        apply_cycle_edges(rel, c.table, c.edge, edges);

        JoinStep step;
        step.driving = c.edge.left.table;
        step.target = c.table;
        step.driving_attr = c.edge.left.qualified();
        step.target_attr = c.edge.right.qualified();
        step.in_values = c.in.literals.size();
        step.p_in = c.p_in;
        step.estimated_cost = c.estimate;
        step.tokens = meter_.total() - before;
        report.join_steps.push_back(step);
    }

    void apply_cycle_edges(Relation &rel, const std::string &added, const JoinEdge &used,
                           const std::vector<JoinEdge> &edges)
    {
        for (auto &e : edges) {
            bool touches = e.left.table == added || e.right.table == added;
            bool closes = rel.has(e.left.table) && rel.has(e.right.table);
            bool same = (e.left == used.left && e.right == used.right) || (e.left == used.right && e.right == used.left);
            if (!touches || !closes || same)
                continue;
            bool fold = join_fold(e.left, e.right);
            std::vector<std::map<std::string, std::string>> kept;
            for (auto &row : rel.rows) {
                Value a = value_of(e.left.table, row.at(e.left.table), e.left);
                Value b = value_of(e.right.table, row.at(e.right.table), e.right);
                if (values_equal(a, b, fold))
                    kept.push_back(row);
            }
            rel.rows = std::move(kept);
        }
    }

    /// Hash join of per-table survivor lists over the query's edges, in breadth-first order
    /// from the first table.
    Relation join_survivors(const QuerySpec &q, const std::map<std::string, std::vector<std::string>> &survivors)
    {
        Relation rel;
        const auto &first = q.tables.front().name;
        rel.tables.push_back(first);
        for (auto &d : survivors.at(first))
            rel.rows.push_back({{first, d}});
        while (rel.tables.size() < q.tables.size()) {
            const JoinEdge *pick = nullptr;
            for (auto &e : q.joins)
                if (rel.has(e.left.table) != rel.has(e.right.table)) {
                    pick = &e;
                    break;
                }
            if (!pick)
                throw PlannerError("join graph is not connected");
            auto e = oriented(*pick, rel);
            bool fold = join_fold(e.left, e.right);
            std::map<std::string, std::vector<std::string>> by_key;
            for (auto &doc : survivors.at(e.right.table)) {
                Value v = value_of(e.right.table, doc, e.right);
                if (!is_null(v))
                    by_key[canonical_key(v, fold)].push_back(doc);
            }
            std::vector<std::map<std::string, std::string>> rows;
            for (auto &row : rel.rows) {
                Value v = value_of(e.left.table, row.at(e.left.table), e.left);
                if (is_null(v))
                    continue;
                auto it = by_key.find(canonical_key(v, fold));
                if (it == by_key.end())
                    continue;
                for (auto &doc : it->second) {
                    auto r = row;
                    r[e.right.table] = doc;
                    rows.push_back(std::move(r));
                }
            }
            rel.tables.push_back(e.right.table);
            rel.rows = std::move(rows);
            apply_cycle_edges(rel, e.right.table, e, q.joins);
        }
        return rel;
    }

    std::vector<AttributeSpec> join_attributes(const QuerySpec &q, const std::string &table) const
    {
        std::vector<AttributeSpec> out;
        for (auto &e : q.joins) {
            if (e.left.table == table)
                add_unique(out, e.left);
            if (e.right.table == table)
                add_unique(out, e.right);
        }
        return out;
    }

    void join_query(const QuerySpec &q, std::vector<TupleRecord> &out)
    {
        for (auto &t : q.tables)
            prepare(q, t.name);
        auto parts = split_where_by_table(q);
        std::map<std::string, Filters> filters;
        for (auto &t : q.tables)
            filters[t.name] = make_filters(parts[t.name], state_.at(t.name));

        Relation rel;
        if (opts_.eager || pushdown_) {
            std::map<std::string, std::vector<std::string>> survivors;
            for (auto &t : q.tables) {
                const auto &st = state_.at(t.name);
                if (opts_.eager)
                    survivors[t.name] = run_table_eager(st, parts[t.name]);
                else
                    survivors[t.name] = run_table(st, filters[t.name], {}, join_attributes(q, t.name)).passed;
            }
            rel = join_survivors(q, survivors);
            report.join_sequence = rel.tables;
        } else {
            try {
                rel = adaptive_join(q, filters);
            } catch (const EmptyJoinInput &e) {
                warn(std::string(e.what()) + "; join result is empty");
                rel.rows.clear();
            }
        }
        for (auto &row : rel.rows)
            out.push_back(project(q, row));
    }

    Relation adaptive_join(const QuerySpec &q, const std::map<std::string, Filters> &filters)
    {
        const auto &forced = opts_.join_sequence;
        if (!forced.empty()) {
            auto seqs = left_deep_sequences(q.join_graph());
            if (std::find(seqs.begin(), seqs.end(), forced) == seqs.end())
                throw PlannerError("forced join sequence is not a connected left-deep order");
        }

        // First edge: the one whose cheaper side scores lowest.
        const JoinEdge *first = nullptr;
        JoinPlanChoice choice{};
        double best = 0;
        for (auto &e : q.joins) {
            if (!forced.empty()) {
                bool match = (e.left.table == forced[0] && e.right.table == forced[1]) ||
                             (e.right.table == forced[0] && e.left.table == forced[1]);
                if (!match)
                    continue;
            }
            auto l = side_summary(state_.at(e.left.table), filters.at(e.left.table), e.left);
            auto r = side_summary(state_.at(e.right.table), filters.at(e.right.table), e.right);
            auto c = plan_single_join(l, r);
            if (!forced.empty() && c.driving != forced[0]) {
                std::swap(c.driving, c.target);
                c.kind = c.kind == JoinPlanKind::FilterLeftThenIn ? JoinPlanKind::FilterRightThenIn
                                                                  : JoinPlanKind::FilterLeftThenIn;
            }
            double s = std::min(c.left_score, c.right_score);
            if (!first || s < best) {
                first = &e;
                best = s;
                choice = c;
            }
            if (!forced.empty())
                break;
        }
        if (!first)
            throw PlannerError("no join edge between the first two tables of the forced sequence");
        report.join_choice = choice;

        const auto &drive_attr = first->left.table == choice.driving ? first->left : first->right;
        auto drive = run_table(state_.at(choice.driving), filters.at(choice.driving), {}, {drive_attr});
        Relation rel;
        rel.tables.push_back(choice.driving);
        for (auto &d : drive.passed)
            rel.rows.push_back({{choice.driving, d}});
        report.join_sequence.push_back(choice.driving);

        auto c = build_candidate(rel, *first, filters);
        join_into(rel, c, q.joins);
        report.join_sequence.push_back(c.table);

        while (rel.tables.size() < q.tables.size()) {
            std::optional<Candidate> pick;
            std::set<std::string> considered;
            for (auto &e : q.joins) {
                if (rel.has(e.left.table) == rel.has(e.right.table))
                    continue;
                auto target = rel.has(e.left.table) ? e.right.table : e.left.table;
                if (!forced.empty() && target != forced[rel.tables.size()])
                    continue;
                if (!considered.insert(target).second)
                    continue;
                auto cand = build_candidate(rel, e, filters);
                if (!pick || cand.estimate < pick->estimate)
                    pick = std::move(cand);
            }
            if (!pick)
                throw PlannerError("join graph is not connected");
            join_into(rel, *pick, q.joins);
            report.join_sequence.push_back(pick->table);
        }
        return rel;
    }
};

}

/*----------------------------------------------------------------------------------------------------------------------
 * Engine
 *--------------------------------------------------------------------------------------------------------------------*/

QueryEngine::QueryEngine(EngineContext ctx, EngineOptions opts)
    : ctx_(ctx), opts_(std::move(opts)), audit_(std::make_unique<AuditLog>())
{
    if (!ctx_.catalog || !ctx_.index || !ctx_.embedder || !ctx_.tokenizer || !ctx_.provider || !ctx_.cache)
        throw ValidationError("query engine context is incomplete");
    if (opts_.strategy != "pushdown")
        make_strategy(opts_.strategy);
    if (!(opts_.sample_rate > 0 && opts_.sample_rate <= 1))
        throw ValidationError("sample rate must be in (0, 1]");
}

ResultSet QueryEngine::execute(const QuerySpec &q)
{
    auto start = std::chrono::steady_clock::now();
    audit_ = std::make_unique<AuditLog>();
    state_.clear();
    Session s(ctx_, opts_, state_, *audit_);
    ResultSet rs;
    rs.columns = q.select;
    try {
        if (q.is_join())
            s.join_query(q, rs.tuples);
        else
            s.single_table(q, rs.tuples);
    } catch (const BudgetExceeded &e) {
        s.report.partial = true;
        s.report.warnings.push_back(e.what());
    }
    s.finish();
    rs.report = std::move(s.report);
    rs.report.tuples = rs.tuples.size();
    rs.report.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return rs;
}

/*----------------------------------------------------------------------------------------------------------------------
 * EXPLAIN
 *--------------------------------------------------------------------------------------------------------------------*/

namespace {

struct ExplainTable
{
    TableState st;
    Filters filters;
    bool from_state = false;
};

}

std::string QueryEngine::explain(const QuerySpec &q) const
{
    std::string out = "query: " + to_string(q) + "\n";
    out += "strategy: " + opts_.strategy + "\n";
    auto strategy = make_strategy(opts_.strategy == "pushdown" ? "quest" : opts_.strategy);

    std::map<std::string, std::optional<ExpressionNode>> parts;
    if (q.is_join())
        parts = split_where_by_table(q);
    else
        parts[q.tables.front().name] = q.where;

    std::map<std::string, ExplainTable> tables;
    for (auto &t : q.tables) {
        ExplainTable et;
        auto saved = state_.find(t.name);
        auto attrs = q.referenced_attributes(t.name);
        if (saved != state_.end()) {
            et.st = saved->second;
            et.from_state = true;
        } else {
            et.st.table = t.name;
            et.st.thresholds.tau = opts_.initial_tau;
        }
        et.st.attributes = attrs;
        et.st.candidates = ctx_.catalog->table_documents(t.name);
        et.st.query_embedding = query_embedding(attrs, *ctx_.embedder);
        et.st.retrieved = retrieve_documents(ctx_.index->documents(), et.st.query_embedding, et.st.thresholds.tau,
                                             &et.st.candidates);
        et.st.refined = et.st.retrieved;
        for (auto &a : attrs) {
            auto key = a.qualified();
            if (!et.st.evidence.count(key)) {
                EvidenceSet ev;
                ev.attribute = a;
                ev.source = EvidenceSource::Synthesized;
                ev.centers.push_back(ctx_.embedder->embed(a.name + ": " + a.description));
                et.st.evidence[key] = std::move(ev);
            }
            if (!et.st.thresholds.gamma.count(key))
                et.st.thresholds.gamma[key] = opts_.default_gamma;
        }
        const auto &where = parts[t.name];
        if (where) {
            et.filters.tree = PlanNode::from(*where);
            for (auto *p : leaves(*where)) {
                et.filters.preds.push_back(*p);
                et.filters.stats.push_back(et.st.sample_records.empty() ? FilterStats{}
                                                                        : estimate_selectivity(*p, et.st.sample_records));
            }
        }

        out += fmt::format("table {}: {} documents, {} retrieved (tau {:.4f}{}), statistics from {}\n", t.name,
                           et.st.candidates.size(), et.st.retrieved.size(), et.st.thresholds.tau,
                           et.st.thresholds.calibrated ? ", calibrated" : ", initial",
                           et.from_state ? "last run" : "defaults (p = 0.5, attribute text as evidence)");
        for (std::size_t i = 0; i < et.filters.preds.size(); ++i)
            out += fmt::format("  #{} {}  p={:.4f} support={}\n", i, to_string(et.filters.preds[i]),
                               et.filters.stats[i].selectivity, et.filters.stats[i].support);

        RetrievalContext rc{ctx_.index, &et.st.evidence, &et.st.thresholds.gamma};
        auto fattrs = et.filters.attributes();
        double total = 0;
        for (auto &doc : et.st.refined) {
            auto costs = measure_costs(doc, fattrs, rc, *ctx_.cache);
            if (!et.filters.tree) {
                out += fmt::format("  {}: no filters\n", doc);
                continue;
            }
            std::vector<LeafEstimate> est;
            for (std::size_t i = 0; i < et.filters.preds.size(); ++i)
                est.push_back({et.filters.stats[i].selectivity,
                               static_cast<double>(costs.at(et.filters.preds[i].attribute))});
            std::vector<double> avg(est.size(), 0);
            auto order = strategy->order(*et.filters.tree, {est, avg, opts_.seed ^ fnv1a(doc)});
            double expected = block_order_cost(*et.filters.tree, est, order);
            total += expected;
            auto plan = order_expression(*et.filters.tree, est);
            std::string seq;
            for (auto id : order)
                seq += (seq.empty() ? "#" : " -> #") + std::to_string(id);
            out += fmt::format("  {}: {}  expected {:.2f}\n", doc, seq, expected);
            for (auto &u : plan.steps) {
                std::string ids;
                for (auto id : u.leaves)
                    ids += (ids.empty() ? "#" : ",#") + std::to_string(id);
                out += fmt::format("      unit {} cost {:.2f} p {:.4f} priority {}\n", ids, u.cost, u.prob,
                                   std::isinf(u.priority) ? std::string("inf") : fmt::format("{:.6f}", u.priority));
            }
        }
        if (et.filters.tree)
            out += fmt::format("  expected filter cost over {} documents: {:.2f}\n", et.st.refined.size(), total);
        tables[t.name] = std::move(et);
    }

    for (auto &e : q.joins) {
        auto summarize = [&](const ExplainTable &et, const AttributeSpec &attr, std::optional<double> p_in) {
            JoinSide s;
            s.table = et.st.table;
            s.docs = et.st.refined.size();
            double transformed = 0;
            RetrievalContext rc{ctx_.index, &et.st.evidence, &et.st.thresholds.gamma};
            auto attrs = et.filters.attributes();
            add_unique(attrs, attr);
            for (auto &doc : et.st.refined) {
                auto costs = measure_costs(doc, attrs, rc, *ctx_.cache);
                std::vector<LeafEstimate> est;
                for (std::size_t i = 0; i < et.filters.preds.size(); ++i)
                    est.push_back({et.filters.stats[i].selectivity,
                                   static_cast<double>(costs.at(et.filters.preds[i].attribute))});
                double ca = static_cast<double>(costs.at(attr));
                if (et.filters.tree) {
                    s.filter_cost += order_expression(*et.filters.tree, est).expected_cost;
                    s.prob = tree_probability(*et.filters.tree, est);
                }
                s.join_cost += ca;
                if (p_in) {
                    std::size_t id = est.size();
                    est.push_back({*p_in, ca});
                    PlanNode tree = et.filters.tree ? PlanNode::combine(PlanNode::Kind::And,
                                                                        {PlanNode::make_leaf(id), *et.filters.tree})
                                                    : PlanNode::make_leaf(id);
                    transformed += order_expression(tree, est).expected_cost;
                }
            }
            return std::make_pair(s, transformed);
        };
        double p_in = opts_.explain_p_in.value_or(0.5);
        auto [l, l_in] = summarize(tables.at(e.left.table), e.left, p_in);
        auto [r, r_in] = summarize(tables.at(e.right.table), e.right, p_in);
        auto choice = plan_single_join(l, r);
        double plan1 = plan_cost_plan1(l, r);
        double plan2 = l.score() + r_in;
        double plan3 = r.score() + l_in;
        bool left_drives = choice.kind == JoinPlanKind::FilterLeftThenIn;
        out += fmt::format("join {} = {} (IN selectivity {:.4f}{})\n", e.left.qualified(), e.right.qualified(), p_in,
                           opts_.explain_p_in ? "" : ", assumed");
        out += fmt::format("  score({}) = {:.2f}   score({}) = {:.2f}\n", l.table, l.score(), r.table, r.score());
        out += fmt::format("  push filters to both sides:        {:.2f}\n", plan1);
        out += fmt::format("  filter {} then IN on {}: {:.2f}{}\n", l.table, r.table, plan2,
                           left_drives ? "   <- chosen" : "");
        out += fmt::format("  filter {} then IN on {}: {:.2f}{}\n", r.table, l.table, plan3,
                           left_drives ? "" : "   <- chosen");
    }
    if (q.joins.size() > 1)
        out += "  (further join partners are chosen during execution from exact value sets)\n";
    return out;
}

void QueryEngine::save_state(const fs::path &dir) const
{
    fs::create_directories(dir);
    std::map<std::string, ThresholdState> thresholds;
    std::map<std::string, EvidenceSet> evidence;
    std::ofstream samples(dir / "samples.jsonl");
    if (!samples)
        throw IoError("cannot write " + (dir / "samples.jsonl").string());
    for (auto &[t, st] : state_) {
        thresholds[t] = st.thresholds;
        for (auto &[k, ev] : st.evidence)
            evidence[k] = ev;
        for (auto &r : st.sample_records) {
            json vals = json::object(), prov = json::object();
            for (auto &[k, v] : r.values)
                vals[k] = to_json(v);
            for (auto &[k, p] : r.provenance)
                prov[k] = p;
            samples << json{{"table", t}, {"doc_id", r.doc_id}, {"values", vals}, {"provenance", prov}}.dump() << '\n';
        }
    }
    save_evidence_state(dir / "state.jsonl", thresholds, evidence);
}

void QueryEngine::load_state(const fs::path &dir)
{
    if (!fs::exists(dir / "state.jsonl"))
        return;
    std::map<std::string, ThresholdState> thresholds;
    std::map<std::string, EvidenceSet> evidence;
    load_evidence_state(dir / "state.jsonl", thresholds, evidence);
    for (auto &[t, th] : thresholds) {
        auto &st = state_[t];
        st.table = t;
        st.thresholds = th;
    }
    for (auto &[k, ev] : evidence) {
        auto table = k.substr(0, k.find('.'));
        if (const auto *spec = ctx_.catalog->find_table(table)) {
            EvidenceSet e = ev;
            if (const auto *a = spec->find(e.attribute.name))
                e.attribute = *a;
            state_[spec->name].table = spec->name;
            state_[spec->name].evidence[k] = std::move(e);
        }
    }
    auto path = dir / "samples.jsonl";
    std::ifstream is(path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty())
            continue;
        try {
            auto j = json::parse(line);
            TupleRecord r;
            r.doc_id = j.at("doc_id").get<std::string>();
            for (auto &[k, v] : j.at("values").items())
                r.values[k] = value_from_json(v);
            for (auto &[k, p] : j.at("provenance").items())
                r.provenance[k] = p.get<std::vector<std::string>>();
            state_[j.at("table").get<std::string>()].sample_records.push_back(std::move(r));
        } catch (const json::exception &e) {
            throw FormatError(path.string(), lineno, e.what());
        }
    }
}

}
