#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "quest/catalog.hpp"
#include "quest/embed.hpp"

namespace quest {

enum class IndexLevel { Document, Segment };

struct Neighbor
{
    std::string id;
    double distance;
};

/// Exact (linear-scan) vector index. Vectors are stored as 32-bit floats, which is also the
/// on-disk representation, so a reloaded index answers queries bit-identically.
class VectorIndex
{
    IndexLevel level_ = IndexLevel::Document;
    std::size_t dim_ = 0;
    std::string embedder_id_;
    std::vector<std::string> ids_;
    std::vector<float> data_;
    std::unordered_map<std::string, std::size_t> by_id_;

public:
    VectorIndex() = default;
    VectorIndex(IndexLevel level, std::size_t dim, std::string embedder_id)
        : level_(level), dim_(dim), embedder_id_(std::move(embedder_id))
    { }

    /// Throws DimMismatch on wrong dimensionality and DuplicateId on a repeated id.
    void add(const std::string &id, std::span<const float> v);

    IndexLevel level() const { return level_; }
    std::size_t dim() const { return dim_; }
    std::size_t size() const { return ids_.size(); }
    const std::string &embedder_id() const { return embedder_id_; }
    const std::vector<std::string> &ids() const { return ids_; }

    std::span<const float> vector(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }
    std::optional<std::span<const float>> find(std::string_view id) const;

    /// All entries with distance strictly below `radius`, in insertion order.
    std::vector<Neighbor> within(std::span<const float> q, double radius) const;
    /// k nearest entries, ties broken by insertion order.
    std::vector<Neighbor> nearest(std::span<const float> q, std::size_t k) const;

    /// Binary layout: magic "QVI1", u32 header length, JSON header {dim,count,level,embedder},
    /// then per entry: u32 id length, id bytes, dim little-endian float32.
    void save(const std::filesystem::path &path) const;
    static VectorIndex load(const std::filesystem::path &path);

    bool operator==(const VectorIndex &o) const
    {
        return level_ == o.level_ && dim_ == o.dim_ && embedder_id_ == o.embedder_id_ && ids_ == o.ids_ &&
               data_ == o.data_;
    }
};

struct SegmentationParams
{
    double merge_threshold = 0.75;   ///< cosine similarity adjacent sentences must exceed to merge
};

/// Sentence split, then greedy merge of consecutive sentences whose embedding cosine
/// similarity exceeds the threshold. Segment spans tile the document text.
std::vector<Segment> segment_document(const Document &doc, const Embedder &embedder, const Tokenizer &tok,
                                      const SegmentationParams &params = {});

/// Document-level index over summary embeddings plus segment-level index over chunks.
class TwoLevelIndex
{
    VectorIndex docs_;
    VectorIndex segs_;
    std::vector<Segment> segments_;
    std::unordered_map<std::string, std::vector<std::size_t>> doc_segments_;
    std::unordered_map<std::string, std::size_t> seg_pos_;

    void rebuild_lookup();

public:
    TwoLevelIndex() = default;

    const VectorIndex &documents() const { return docs_; }
    const VectorIndex &segments() const { return segs_; }
    const std::vector<Segment> &all_segments() const { return segments_; }

    /// Segments of `doc_id` in document order (empty when unknown).
    std::vector<const Segment *> segments_of(std::string_view doc_id) const;
    const Segment *segment(std::string_view seg_id) const;

    void save(const std::filesystem::path &dir) const;
    static TwoLevelIndex load(const std::filesystem::path &dir);

    friend TwoLevelIndex build_indexes(std::span<const Document> docs, std::vector<Segment> segments,
                                       const std::string &embedder_id);
};

/// Fills in summaries and summary embeddings of every document, and segments them.
std::vector<Segment> prepare_corpus(Corpus &corpus, const Embedder &embedder, const Tokenizer &tok,
                                    const Summarizer &summarizer, const SegmentationParams &params = {});

/// Requires every document to carry an embedding. Throws DimMismatch when dimensions disagree.
TwoLevelIndex build_indexes(std::span<const Document> docs, std::vector<Segment> segments,
                            const std::string &embedder_id = "");

/// Normalized mean of the embeddings of "name: description" for each attribute.
Embedding query_embedding(std::span<const AttributeSpec> attrs, const Embedder &embedder);

/// D_Q = { d : dist(e(d), eQ) < tau }, optionally restricted to `candidates`; index order.
std::vector<std::string> retrieve_documents(const VectorIndex &index, std::span<const float> eQ, double tau,
                                            const std::vector<std::string> *candidates = nullptr);

/// tau = max over relevant sample documents of dist(e(d), eQ), plus the 0.1 margin.
/// Throws CalibrationFailed when no sampled document is relevant.
double calibrate_tau(const VectorIndex &index, std::span<const float> eQ,
                     const std::map<std::string, bool> &sample_relevance);

inline constexpr double kThresholdMargin = 0.1;

struct GammaCalibration
{
    double gamma;
    bool fallback;   ///< fewer than two embeddings; `gamma` is the configured default
};

/// gamma = max pairwise distance among the attribute's provenance embeddings, plus 0.1.
GammaCalibration calibrate_gamma(std::span<const Embedding> provenance, double default_gamma);

/// Deterministic k-means: farthest-point seeding starting from the first point, then Lloyd
/// iterations until assignments stop changing or `max_iter` is reached. Returns raw (unnormalized) centers.
std::vector<Embedding> kmeans(std::span<const Embedding> points, std::size_t k, std::size_t max_iter = 50);

enum class EvidenceSource { Sampled, Synthesized };

struct EvidenceSet
{
    AttributeSpec attribute;
    std::vector<Embedding> centers;
    EvidenceSource source = EvidenceSource::Sampled;
};

struct EvidenceParams
{
    std::size_t k = 3;
    std::size_t synth_count = 20;
};

/// Returns exemplar texts for an attribute; may throw ProviderError.
using ExemplarSource = std::function<std::vector<std::string>(const AttributeSpec &, std::size_t)>;

/// Clusters provenance embeddings (or, when there are none, embeddings of synthesized
/// exemplars) into at most k unit-norm centers. Synthesis failure -> EvidenceUnavailable.
EvidenceSet collect_evidence(const AttributeSpec &attr, std::span<const Embedding> provenance,
                             const Embedder &embedder, const ExemplarSource &synthesize,
                             const EvidenceParams &params = {});

struct SegmentSelection
{
    std::vector<const Segment *> segments;   ///< document order, duplicate free
    std::size_t total_tokens = 0;

    std::vector<std::string> ids() const;
};

/// Union over evidence centers of the doc's segments closer than gamma, deduplicated.
SegmentSelection retrieve_segments(const TwoLevelIndex &index, std::string_view doc_id,
                                   const EvidenceSet &evidence, double gamma);

struct ThresholdState
{
    double tau = 1.2;
    std::map<std::string, double> gamma;           ///< qualified attribute -> gamma
    std::map<std::string, bool> gamma_fallback;
    bool calibrated = false;
};

/// Per-attribute records: {"kind":"tau",...} and {"kind":"attribute","attribute",gamma,fallback,source,centers}.
void save_evidence_state(const std::filesystem::path &path, const std::map<std::string, ThresholdState> &thresholds,
                         const std::map<std::string, EvidenceSet> &evidence);
void load_evidence_state(const std::filesystem::path &path, std::map<std::string, ThresholdState> &thresholds,
                         std::map<std::string, EvidenceSet> &evidence);

}
