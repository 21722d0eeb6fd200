#include "quest/index.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "quest/error.hpp"

namespace quest {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'Q', 'V', 'I', '1'};

void put_u32(std::ostream &os, std::uint32_t v)
{
    char b[4];
    for (int i = 0; i < 4; ++i)
        b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    os.write(b, 4);
}

std::uint32_t get_u32(std::istream &is, const fs::path &path)
{
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char *>(b), 4))
        throw IoError(path.string() + ": truncated index file");
    return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
}

std::string_view level_name(IndexLevel l) { return l == IndexLevel::Document ? "document" : "segment"; }

}

void VectorIndex::add(const std::string &id, std::span<const float> v)
{
    if (v.size() != dim_)
        throw DimMismatch(id + ": expected " + std::to_string(dim_) + ", got " + std::to_string(v.size()));
    if (by_id_.count(id))
        throw DuplicateId(id);
    by_id_.emplace(id, ids_.size());
    ids_.push_back(id);
    data_.insert(data_.end(), v.begin(), v.end());
}

std::optional<std::span<const float>> VectorIndex::find(std::string_view id) const
{
    auto it = by_id_.find(std::string(id));
    if (it == by_id_.end())
        return std::nullopt;
    return vector(it->second);
}

std::vector<Neighbor> VectorIndex::within(std::span<const float> q, double radius) const
{
    if (q.size() != dim_)
        throw DimMismatch("query " + std::to_string(q.size()) + " vs index " + std::to_string(dim_));
    std::vector<Neighbor> out;
    for (std::size_t i = 0; i < ids_.size(); ++i) {
        double d = distance(vector(i), q);
        if (d < radius)
            out.push_back({ids_[i], d});
    }
    return out;
}

std::vector<Neighbor> VectorIndex::nearest(std::span<const float> q, std::size_t k) const
{
    if (q.size() != dim_)
        throw DimMismatch("query " + std::to_string(q.size()) + " vs index " + std::to_string(dim_));
    std::vector<Neighbor> all;
    all.reserve(ids_.size());
    for (std::size_t i = 0; i < ids_.size(); ++i)
        all.push_back({ids_[i], distance(vector(i), q)});
    std::stable_sort(all.begin(), all.end(), [](auto &a, auto &b) { return a.distance < b.distance; });
    if (all.size() > k)
        all.resize(k);
    return all;
}

void VectorIndex::save(const fs::path &path) const
{
    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw IoError("cannot write " + path.string());
    json header = {{"dim", dim_}, {"count", ids_.size()}, {"level", level_name(level_)}, {"embedder", embedder_id_}};
    std::string h = header.dump();
    os.write(kMagic, 4);
    put_u32(os, static_cast<std::uint32_t>(h.size()));
    os.write(h.data(), static_cast<std::streamsize>(h.size()));
    for (std::size_t i = 0; i < ids_.size(); ++i) {
        put_u32(os, static_cast<std::uint32_t>(ids_[i].size()));
        os.write(ids_[i].data(), static_cast<std::streamsize>(ids_[i].size()));
        for (float f : vector(i))
            put_u32(os, std::bit_cast<std::uint32_t>(f));
    }
    if (!os)
        throw IoError("write failed: " + path.string());
}

VectorIndex VectorIndex::load(const fs::path &path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw IoError("cannot read " + path.string());
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw IoError(path.string() + ": not a vector index");
    std::string h(get_u32(is, path), '\0');
    if (!is.read(h.data(), static_cast<std::streamsize>(h.size())))
        throw IoError(path.string() + ": truncated header");
    json header;
    try {
        header = json::parse(h);
    } catch (const json::exception &e) {
        throw IoError(path.string() + ": bad header: " + e.what());
    }
    auto level = header.at("level").get<std::string>() == "document" ? IndexLevel::Document : IndexLevel::Segment;
    VectorIndex idx(level, header.at("dim").get<std::size_t>(), header.at("embedder").get<std::string>());
    auto count = header.at("count").get<std::size_t>();
    std::vector<float> v(idx.dim_);
    for (std::size_t i = 0; i < count; ++i) {
        std::string id(get_u32(is, path), '\0');
        if (!is.read(id.data(), static_cast<std::streamsize>(id.size())))
            throw IoError(path.string() + ": truncated entry");
        for (auto &f : v)
            f = std::bit_cast<float>(get_u32(is, path));
        idx.add(id, v);
    }
    return idx;
}

std::vector<Segment> segment_document(const Document &doc, const Embedder &embedder, const Tokenizer &tok,
                                      const SegmentationParams &params)
{
    auto spans = split_sentences(doc.text);
    std::vector<Span> merged;
    Embedding prev;
    for (auto &s : spans) {
        auto e = embedder.embed(std::string_view(doc.text).substr(s.start, s.end - s.start));
        if (!merged.empty() && cosine(prev, e) > params.merge_threshold)
            merged.back().end = s.end;
        else
            merged.push_back(s);
        prev = std::move(e);
    }

    std::vector<Segment> out;
    out.reserve(merged.size());
    for (std::size_t i = 0; i < merged.size(); ++i) {
        Segment seg;
        seg.seg_id = doc.doc_id + "#" + std::to_string(i);
        seg.doc_id = doc.doc_id;
        seg.span = merged[i];
        seg.text = doc.text.substr(merged[i].start, merged[i].end - merged[i].start);
        seg.token_count = tok.count(seg.text);
        seg.embedding = embedder.embed(seg.text);
        out.push_back(std::move(seg));
    }
    return out;
}

void TwoLevelIndex::rebuild_lookup()
{
    doc_segments_.clear();
    seg_pos_.clear();
    for (std::size_t i = 0; i < segments_.size(); ++i) {
        doc_segments_[segments_[i].doc_id].push_back(i);
        seg_pos_[segments_[i].seg_id] = i;
    }
    for (auto &[_, v] : doc_segments_)
        std::stable_sort(v.begin(), v.end(),
                         [&](std::size_t a, std::size_t b) { return segments_[a].span.start < segments_[b].span.start; });
}

std::vector<const Segment *> TwoLevelIndex::segments_of(std::string_view doc_id) const
{
    std::vector<const Segment *> out;
    auto it = doc_segments_.find(std::string(doc_id));
    if (it == doc_segments_.end())
        return out;
    for (auto i : it->second)
        out.push_back(&segments_[i]);
    return out;
}

const Segment *TwoLevelIndex::segment(std::string_view seg_id) const
{
    auto it = seg_pos_.find(std::string(seg_id));
    return it == seg_pos_.end() ? nullptr : &segments_[it->second];
}

void TwoLevelIndex::save(const fs::path &dir) const
{
    fs::create_directories(dir);
    docs_.save(dir / "documents.idx");
    segs_.save(dir / "segments.idx");
    std::ofstream os(dir / "segments.jsonl");
    if (!os)
        throw IoError("cannot write " + (dir / "segments.jsonl").string());
    for (auto &s : segments_) {
        json j = {{"seg_id", s.seg_id}, {"doc_id", s.doc_id},   {"start", s.span.start},
                  {"end", s.span.end},   {"text", s.text},       {"token_count", s.token_count}};
        os << j.dump() << '\n';
    }
}

TwoLevelIndex TwoLevelIndex::load(const fs::path &dir)
{
    TwoLevelIndex idx;
    idx.docs_ = VectorIndex::load(dir / "documents.idx");
    idx.segs_ = VectorIndex::load(dir / "segments.idx");
    auto meta = dir / "segments.jsonl";
    std::ifstream is(meta);
    if (!is)
        throw IoError("cannot read " + meta.string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty())
            continue;
        try {
            auto j = json::parse(line);
            Segment s;
            s.seg_id = j.at("seg_id").get<std::string>();
            s.doc_id = j.at("doc_id").get<std::string>();
            s.span = {j.at("start").get<std::size_t>(), j.at("end").get<std::size_t>()};
            s.text = j.at("text").get<std::string>();
            s.token_count = j.at("token_count").get<std::size_t>();
            auto v = idx.segs_.find(s.seg_id);
            if (!v)
                throw FormatError(meta.string(), lineno, "segment " + s.seg_id + " missing from segment index");
            s.embedding.assign(v->begin(), v->end());
            idx.segments_.push_back(std::move(s));
        } catch (const json::exception &e) {
            throw FormatError(meta.string(), lineno, e.what());
        }
    }
    idx.rebuild_lookup();
    return idx;
}

std::vector<Segment> prepare_corpus(Corpus &corpus, const Embedder &embedder, const Tokenizer &tok,
                                    const Summarizer &summarizer, const SegmentationParams &params)
{
    std::vector<Segment> segments;
    for (auto &d : corpus.documents()) {
        d.summary = summarizer.summarize(d.text);
        d.embedding = embedder.embed(d.summary);
        auto segs = segment_document(d, embedder, tok, params);
        segments.insert(segments.end(), std::make_move_iterator(segs.begin()), std::make_move_iterator(segs.end()));
    }
    return segments;
}

TwoLevelIndex build_indexes(std::span<const Document> docs, std::vector<Segment> segments,
                            const std::string &embedder_id)
{
    std::size_t dim = 0;
    if (!docs.empty() && docs.front().embedding)
        dim = docs.front().embedding->size();
    else if (!segments.empty())
        dim = segments.front().embedding.size();
    TwoLevelIndex idx;
    idx.docs_ = VectorIndex(IndexLevel::Document, dim, embedder_id);
    idx.segs_ = VectorIndex(IndexLevel::Segment, dim, embedder_id);
    for (auto &d : docs) {
        if (!d.embedding)
            throw ValidationError("document " + d.doc_id + " has no embedding");
        idx.docs_.add(d.doc_id, *d.embedding);
    }
    for (auto &s : segments)
        idx.segs_.add(s.seg_id, s.embedding);
    idx.segments_ = std::move(segments);
    idx.rebuild_lookup();
    return idx;
}

Embedding query_embedding(std::span<const AttributeSpec> attrs, const Embedder &embedder)
{
    if (attrs.empty())
        throw ValidationError("query embedding needs at least one attribute");
    std::vector<Embedding> es;
    es.reserve(attrs.size());
    for (auto &a : attrs)
        es.push_back(embedder.embed(a.name + ": " + a.description));
    return mean_direction(es);
}

std::vector<std::string> retrieve_documents(const VectorIndex &index, std::span<const float> eQ, double tau,
                                            const std::vector<std::string> *candidates)
{
    if (tau < 0)
        throw ValidationError("tau must be non-negative");
    std::vector<std::string> out;
    if (candidates) {
        for (auto &id : *candidates) {
            auto v = index.find(id);
            if (v && distance(*v, eQ) < tau)
                out.push_back(id);
        }
        return out;
    }
    for (auto &n : index.within(eQ, tau))
        out.push_back(n.id);
    return out;
}

double calibrate_tau(const VectorIndex &index, std::span<const float> eQ,
                     const std::map<std::string, bool> &sample_relevance)
{
    double best = -1;
    for (auto &[id, relevant] : sample_relevance) {
        if (!relevant)
            continue;
        auto v = index.find(id);
        if (!v)
            throw UnknownSymbol("document " + id + " not in index");
        best = std::max(best, distance(*v, eQ));
    }
    if (best < 0)
        throw CalibrationFailed("no sampled document carries any query attribute");
    return best + kThresholdMargin;
}

GammaCalibration calibrate_gamma(std::span<const Embedding> provenance, double default_gamma)
{
    if (provenance.size() < 2)
        return {default_gamma, true};
    double best = 0;
    for (std::size_t i = 0; i < provenance.size(); ++i)
        for (std::size_t j = i + 1; j < provenance.size(); ++j)
            best = std::max(best, distance(provenance[i], provenance[j]));
    return {best + kThresholdMargin, false};
}

std::vector<Embedding> kmeans(std::span<const Embedding> points, std::size_t k, std::size_t max_iter)
{
    std::size_t n = points.size();
    if (n == 0 || k == 0)
        return {};
    k = std::min(k, n);
    std::size_t dim = points.front().size();

    // Farthest-point seeding from point 0: each new seed maximizes its distance to the
    // nearest seed so far (first index wins ties).
    std::vector<Embedding> centers{points[0]};
    std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
    while (centers.size() < k) {
        std::size_t pick = 0;
        double far = -1;
        for (std::size_t i = 0; i < n; ++i) {
            nearest[i] = std::min(nearest[i], distance(points[i], centers.back()));
            if (nearest[i] > far) {
                far = nearest[i];
                pick = i;
            }
        }
        centers.push_back(points[pick]);
    }

    std::vector<std::size_t> assign(n, k);
    for (std::size_t it = 0; it < max_iter; ++it) {
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best = 0;
            double bd = std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < k; ++c) {
                double d = distance(points[i], centers[c]);
                if (d < bd) {
                    bd = d;
                    best = c;
                }
            }
            if (assign[i] != best) {
                assign[i] = best;
                changed = true;
            }
        }
        if (!changed)
            break;
        std::vector<std::vector<double>> sum(k, std::vector<double>(dim, 0.0));
        std::vector<std::size_t> cnt(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            ++cnt[assign[i]];
            for (std::size_t d = 0; d < dim; ++d)
                sum[assign[i]][d] += points[i][d];
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (cnt[c] == 0)
                continue;   // empty cluster keeps its previous center
            for (std::size_t d = 0; d < dim; ++d)
                centers[c][d] = static_cast<float>(sum[c][d] / static_cast<double>(cnt[c]));
        }
    }
    return centers;
}

EvidenceSet collect_evidence(const AttributeSpec &attr, std::span<const Embedding> provenance,
                             const Embedder &embedder, const ExemplarSource &synthesize,
                             const EvidenceParams &params)
{
    EvidenceSet ev;
    ev.attribute = attr;
    std::vector<Embedding> points(provenance.begin(), provenance.end());
    if (points.empty()) {
        ev.source = EvidenceSource::Synthesized;
        std::vector<std::string> texts;
        try {
            if (!synthesize)
                throw ProviderError("no exemplar source configured");
            texts = synthesize(attr, params.synth_count);
        } catch (const Error &e) {
            throw EvidenceUnavailable(attr.qualified() + ": " + e.what());
        }
        if (texts.empty())
            throw EvidenceUnavailable(attr.qualified() + ": provider returned no exemplars");
        for (auto &t : texts)
            points.push_back(embedder.embed(t));
    }
    for (auto &c : kmeans(points, params.k))
        ev.centers.push_back(normalized(c));
    return ev;
}

std::vector<std::string> SegmentSelection::ids() const
{
    std::vector<std::string> out;
    out.reserve(segments.size());
    for (auto *s : segments)
        out.push_back(s->seg_id);
    return out;
}

SegmentSelection retrieve_segments(const TwoLevelIndex &index, std::string_view doc_id, const EvidenceSet &evidence,
                                   double gamma)
{
    SegmentSelection sel;
    for (auto *s : index.segments_of(doc_id)) {
        bool hit = std::any_of(evidence.centers.begin(), evidence.centers.end(),
                               [&](const Embedding &c) { return distance(s->embedding, c) < gamma; });
        if (hit) {
            sel.segments.push_back(s);
            sel.total_tokens += s->token_count;
        }
    }
    return sel;
}

void save_evidence_state(const fs::path &path, const std::map<std::string, ThresholdState> &thresholds,
                         const std::map<std::string, EvidenceSet> &evidence)
{
    std::ofstream os(path);
    if (!os)
        throw IoError("cannot write " + path.string());
    for (auto &[table, st] : thresholds) {
        json j = {{"kind", "tau"}, {"table", table}, {"tau", st.tau}, {"calibrated", st.calibrated}};
        os << j.dump() << '\n';
        for (auto &[attr, g] : st.gamma) {
            json a = {{"kind", "gamma"}, {"table", table}, {"attribute", attr}, {"gamma", g}};
            auto f = st.gamma_fallback.find(attr);
            a["fallback"] = f != st.gamma_fallback.end() && f->second;
            os << a.dump() << '\n';
        }
    }
    for (auto &[attr, ev] : evidence) {
        json c = json::array();
        for (auto &v : ev.centers)
            c.push_back(v);
        json j = {{"kind", "evidence"},
                  {"attribute", attr},
                  {"source", ev.source == EvidenceSource::Sampled ? "sampled" : "synthesized"},
                  {"centers", c}};
        os << j.dump() << '\n';
    }
}

void load_evidence_state(const fs::path &path, std::map<std::string, ThresholdState> &thresholds,
                         std::map<std::string, EvidenceSet> &evidence)
{
    std::ifstream is(path);
    if (!is)
        throw IoError("cannot read " + path.string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty())
            continue;
        try {
            auto j = json::parse(line);
            auto kind = j.at("kind").get<std::string>();
            if (kind == "tau") {
                auto &st = thresholds[j.at("table").get<std::string>()];
                st.tau = j.at("tau").get<double>();
                st.calibrated = j.at("calibrated").get<bool>();
            } else if (kind == "gamma") {
                auto &st = thresholds[j.at("table").get<std::string>()];
                auto attr = j.at("attribute").get<std::string>();
                st.gamma[attr] = j.at("gamma").get<double>();
                st.gamma_fallback[attr] = j.at("fallback").get<bool>();
            } else if (kind == "evidence") {
                auto attr = j.at("attribute").get<std::string>();
                EvidenceSet ev;
                auto dot = attr.find('.');
                ev.attribute.table = attr.substr(0, dot);
                ev.attribute.name = dot == std::string::npos ? attr : attr.substr(dot + 1);
                ev.source = j.at("source").get<std::string>() == "sampled" ? EvidenceSource::Sampled
                                                                             : EvidenceSource::Synthesized;
                for (auto &c : j.at("centers"))
                    ev.centers.push_back(c.get<Embedding>());
                evidence[attr] = std::move(ev);
            } else {
                throw FormatError(path.string(), lineno, "unknown record kind " + kind);
            }
        } catch (const json::exception &e) {
            throw FormatError(path.string(), lineno, e.what());
        }
    }
}

}
