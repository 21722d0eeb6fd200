#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "quest/catalog.hpp"
#include "quest/extract.hpp"
#include "quest/index.hpp"
#include "quest/query.hpp"

namespace quest {

inline constexpr double kDefaultSampleRate = 0.05;

struct SamplePlan
{
    double rate = kDefaultSampleRate;
    std::uint64_t seed = 0;
    std::vector<std::string> sampled_ids;
};

/// Uniform sample without replacement of max(1, round(rate * |D_Q|)) ids, returned in D_Q order.
std::vector<std::string> sample_documents(const std::vector<std::string> &dq, double rate, std::uint64_t seed);

struct SampleSplit
{
    std::vector<std::string> relevant;     ///< at least one query attribute found
    std::vector<std::string> irrelevant;   ///< every query attribute NULL
};

SampleSplit split_sample(const std::vector<TupleRecord> &sample, const std::vector<AttributeSpec> &attrs);

struct FilterStats
{
    double selectivity = 0.5;
    std::size_t support = 0;     ///< sample documents with a non-NULL value
    std::size_t satisfied = 0;
    bool no_information = false;
};

/// (satisfied + 1) / (support + 2); NULL values do not count as support.
FilterStats estimate_selectivity(const Predicate &pred, const std::vector<TupleRecord> &sample);

/// Segment selections and their token costs for one document.
struct DocCostVector
{
    std::string doc_id;
    std::map<std::string, std::size_t> cost;            ///< qualified attribute -> tokens (0 when cached)
    std::map<std::string, SegmentSelection> selection;   ///< retrieved segments, even when cached

    std::size_t at(const AttributeSpec &a) const;
};

/// Per-attribute evidence and gamma for one table.
struct RetrievalContext
{
    const TwoLevelIndex *index = nullptr;
    const std::map<std::string, EvidenceSet> *evidence = nullptr;
    const std::map<std::string, double> *gamma = nullptr;
};

/// Cost of each attribute = tokens of its retrieved segments, or 0 when the (doc, attribute)
/// pair is already in the cache. Reads the cache without side effects; no provider calls.
DocCostVector measure_costs(const std::string &doc_id, const std::vector<AttributeSpec> &attrs,
                            const RetrievalContext &ctx, const ExtractionCache &cache);

/// Smoothed fraction of sample documents whose (non-NULL) `attr` value is in `values`.
/// `values` holds canonical keys built with the same `fold` setting. An empty set yields the smoothing floor 1 / (support + 2).
FilterStats estimate_in_selectivity(const std::set<std::string> &values, const AttributeSpec &attr,
                                    const std::vector<TupleRecord> &sample, bool fold);

}
