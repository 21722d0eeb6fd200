#include "quest/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "quest/error.hpp"

namespace quest {

std::vector<std::string> sample_documents(const std::vector<std::string> &dq, double rate, std::uint64_t seed)
{
    if (!(rate > 0 && rate <= 1))
        throw ValidationError("sample rate must be in (0, 1]");
    if (dq.empty())
        return {};
    auto n = static_cast<std::size_t>(std::llround(rate * static_cast<double>(dq.size())));
    n = std::clamp<std::size_t>(n, 1, dq.size());

    // Partial Fisher-Yates over positions, then restore D_Q order.
    std::vector<std::size_t> pos(dq.size());
    std::iota(pos.begin(), pos.end(), 0);
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, pos.size() - 1);
        std::swap(pos[i], pos[pick(rng)]);
    }
    pos.resize(n);
    std::sort(pos.begin(), pos.end());
    std::vector<std::string> out;
    for (auto p : pos)
        out.push_back(dq[p]);
    return out;
}

SampleSplit split_sample(const std::vector<TupleRecord> &sample, const std::vector<AttributeSpec> &attrs)
{
    SampleSplit s;
    for (auto &r : sample) {
        bool any = std::any_of(attrs.begin(), attrs.end(), [&](auto &a) { return !is_null(r.get(a.qualified())); });
        (any ? s.relevant : s.irrelevant).push_back(r.doc_id);
    }
    return s;
}

FilterStats estimate_selectivity(const Predicate &pred, const std::vector<TupleRecord> &sample)
{
    FilterStats st;
    auto key = pred.attribute.qualified();
    for (auto &r : sample) {
        const auto &v = r.get(key);
        if (is_null(v))
            continue;
        ++st.support;
        if (pred.evaluate(v))
            ++st.satisfied;
    }
    if (st.support == 0) {
        st.no_information = true;
        st.selectivity = 0.5;
        return st;
    }
    st.selectivity = (static_cast<double>(st.satisfied) + 1) / (static_cast<double>(st.support) + 2);
    return st;
}

std::size_t DocCostVector::at(const AttributeSpec &a) const
{
    auto it = cost.find(a.qualified());
    if (it == cost.end())
        throw UnknownSymbol("no cost measured for " + a.qualified() + " on " + doc_id);
    return it->second;
}

DocCostVector measure_costs(const std::string &doc_id, const std::vector<AttributeSpec> &attrs,
                            const RetrievalContext &ctx, const ExtractionCache &cache)
{
    DocCostVector out;
    out.doc_id = doc_id;
    for (auto &a : attrs) {
        auto key = a.qualified();
        if (out.cost.count(key))
            continue;
        auto ev = ctx.evidence->find(key);
        auto g = ctx.gamma->find(key);
        if (ev == ctx.evidence->end() || g == ctx.gamma->end())
            throw UnknownSymbol("no evidence for " + key);
        auto sel = retrieve_segments(*ctx.index, doc_id, ev->second, g->second);
        out.cost[key] = cache.contains(doc_id, key) ? 0 : sel.total_tokens;
        out.selection[key] = std::move(sel);
    }
    return out;
}

FilterStats estimate_in_selectivity(const std::set<std::string> &values, const AttributeSpec &attr,
                                    const std::vector<TupleRecord> &sample, bool fold)
{
    FilterStats st;
    auto key = attr.qualified();
    for (auto &r : sample) {
        const auto &v = r.get(key);
        if (is_null(v))
            continue;
        ++st.support;
        if (values.count(canonical_key(v, fold)))
            ++st.satisfied;
    }
    st.no_information = st.support == 0;
    st.selectivity = (static_cast<double>(st.satisfied) + 1) / (static_cast<double>(st.support) + 2);
    return st;
}

}
