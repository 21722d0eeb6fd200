#include "quest/extract.hpp"

#include <algorithm>
#include <fstream>
#include <thread>

#include <fmt/format.h>
#include <json.hpp>

#include "quest/error.hpp"

namespace quest {

namespace fs = std::filesystem;
using nlohmann::json;

void TruthTable::set(const std::string &doc_id, const std::string &attr, TruthEntry e)
{
    entries_[{doc_id, attr}] = std::move(e);
}

void TruthTable::add_exemplar(const std::string &attr, std::string text) { exemplars_[attr].push_back(std::move(text)); }

const TruthEntry *TruthTable::find(const std::string &doc_id, const AttributeSpec &attr) const
{
    auto it = entries_.find({doc_id, attr.qualified()});
    if (it == entries_.end())
        it = entries_.find({doc_id, attr.name});
    return it == entries_.end() ? nullptr : &it->second;
}

const std::vector<std::string> *TruthTable::exemplars(const AttributeSpec &attr) const
{
    auto it = exemplars_.find(attr.qualified());
    if (it == exemplars_.end())
        it = exemplars_.find(attr.name);
    return it == exemplars_.end() ? nullptr : &it->second;
}

void TruthTable::save(const fs::path &path) const
{
    std::ofstream os(path);
    if (!os)
        throw IoError("cannot write " + path.string());
    for (auto &[key, e] : entries_) {
        json j = {{"doc_id", key.first},
                  {"attribute", key.second},
                  {"value", to_json(e.value)},
                  {"span_start", e.span.start},
                  {"span_end", e.span.end}};
        os << j.dump() << '\n';
    }
    for (auto &[attr, texts] : exemplars_)
        for (auto &t : texts)
            os << json{{"kind", "exemplar"}, {"attribute", attr}, {"text", t}}.dump() << '\n';
}

TruthTable TruthTable::load(const fs::path &path)
{
    std::ifstream is(path);
    if (!is)
        throw IoError("cannot read " + path.string());
    TruthTable t;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty())
            continue;
        try {
            auto j = json::parse(line);
            if (j.value("kind", "") == "exemplar") {
                t.add_exemplar(j.at("attribute").get<std::string>(), j.at("text").get<std::string>());
                continue;
            }
            TruthEntry e{value_from_json(j.at("value")),
                         {j.at("span_start").get<std::size_t>(), j.at("span_end").get<std::size_t>()}};
            if (e.span.start > e.span.end)
                throw FormatError(path.string(), lineno, "span_start > span_end");
            t.set(j.at("doc_id").get<std::string>(), j.at("attribute").get<std::string>(), std::move(e));
        } catch (const json::exception &e) {
            throw FormatError(path.string(), lineno, e.what());
        }
    }
    return t;
}

namespace {

json answer_for(const TruthTable &truth, const std::string &doc_id, const AttributeSpec &attr,
                const std::vector<const Segment *> &segments)
{
    json seg_ids = json::array();
    const auto *e = truth.find(doc_id, attr);
    if (e && !is_null(e->value)) {
        for (auto *s : segments)
            if (s->span.overlaps(e->span))
                seg_ids.push_back(s->seg_id);
    }
    if (seg_ids.empty())
        return {{"value", nullptr}, {"segments", json::array()}};
    return {{"value", to_json(e->value)}, {"segments", seg_ids}};
}

}

ProviderResponse MockProvider::complete(const ProviderRequest &req)
{
    ++calls_;
    for (auto n = fail_next_.load(); n > 0; n = fail_next_.load())
        if (fail_next_.compare_exchange_weak(n, n - 1))
            throw ProviderError("injected mock failure");

    json reply;
    switch (req.kind) {
    case ProviderRequest::Kind::Extract:
        if (req.attributes.size() != 1)
            throw ProviderError("extract request must name one attribute");
        reply = answer_for(*truth_, req.doc_id, req.attributes.front(), req.segments);
        break;
    case ProviderRequest::Kind::Sample:
        reply = json::object();
        for (auto &a : req.attributes)
            reply[a.qualified()] = answer_for(*truth_, req.doc_id, a, req.segments);
        break;
    case ProviderRequest::Kind::Synthesize: {
        reply = json::array();
        const auto &a = req.attributes.front();
        const auto *ex = truth_->exemplars(a);
        for (std::size_t i = 0; i < req.count; ++i) {
            if (ex && !ex->empty())
                reply.push_back((*ex)[i % ex->size()]);
            else
                reply.push_back(fmt::format("{} {} {}", a.name, a.description, i));
        }
        break;
    }
    }

    ProviderResponse r;
    r.content = reply.dump();
    if (cost_ == MockCostModel::Exact && req.kind != ProviderRequest::Kind::Synthesize) {
        for (auto *s : req.segments)
            r.input_tokens += s->token_count;
    } else {
        r.input_tokens = tok_.count(req.prompt);
        r.output_tokens = tok_.count(r.content);
    }
    r.latency_ms = simulated_latency_ms(r.input_tokens, r.output_tokens);
    return r;
}

std::size_t count_tokens(std::string_view text, const Tokenizer &tok) { return tok.count(text); }

std::string build_extraction_prompt(const AttributeSpec &attr, const std::vector<const Segment *> &segments)
{
    std::string p = fmt::format(
        "Extract the attribute \"{}\" ({}) from the passages below. Answer with a JSON object "
        "{{\"value\": <{}|null>, \"segments\": [<ids of passages used>]}}. Return a single value, never a list. "
        "Use null when the passages do not state it.\n",
        attr.name, attr.description, to_string(attr.dtype));
    for (auto *s : segments)
        p += fmt::format("[{}] {}\n", s->seg_id, s->text);
    return p;
}

std::string build_sample_prompt(const std::vector<AttributeSpec> &attrs, const std::vector<const Segment *> &segments)
{
    std::string p = "Read the document below and extract each attribute. Answer with one JSON object mapping each "
                    "attribute key to {\"value\": <value|null>, \"segments\": [<ids of passages used>]}.\n";
    for (auto &a : attrs)
        p += fmt::format("- {}: {} ({})\n", a.qualified(), a.description, to_string(a.dtype));
    for (auto *s : segments)
        p += fmt::format("[{}] {}\n", s->seg_id, s->text);
    return p;
}

std::string build_synthesis_prompt(const AttributeSpec &attr, std::size_t count)
{
    return fmt::format("Write {} short, varied passages such as might appear in a document, each stating the "
                       "attribute \"{}\" ({}). Answer with a JSON array of strings.",
                       count, attr.name, attr.description);
}

ExtractionResult parse_extraction(const std::string &content, DType dtype, const std::vector<const Segment *> &supplied)
{
    ExtractionResult r;
    json j;
    try {
        j = json::parse(content);
    } catch (const json::exception &) {
        r.parse_warning = true;
        return r;
    }
    json v = j;
    json segs;
    if (j.is_object()) {
        if (!j.contains("value")) {
            r.parse_warning = true;
            return r;
        }
        v = j["value"];
        if (j.contains("segments"))
            segs = j["segments"];
    }
    if (v.is_array() || v.is_object()) {
        r.parse_warning = true;
        return r;
    }
    Value raw = value_from_json(v);
    r.value = coerce(raw, dtype);
    if (is_null(r.value)) {
        r.parse_warning = !is_null(raw);
        return r;
    }
    if (segs.is_array()) {
        for (auto &s : segs) {
            if (!s.is_string())
                continue;
            auto id = s.get<std::string>();
            bool known = std::any_of(supplied.begin(), supplied.end(), [&](auto *x) { return x->seg_id == id; });
            if (known && std::find(r.provenance.begin(), r.provenance.end(), id) == r.provenance.end())
                r.provenance.push_back(id);
        }
    }
    if (r.provenance.empty())
        for (auto *s : supplied)
            r.provenance.push_back(s->seg_id);
    return r;
}

std::optional<ExtractionResult> ExtractionCache::peek(const std::string &doc_id, const std::string &attr) const
{
    std::lock_guard lk(mu_);
    auto it = entries_.find({doc_id, attr});
    if (it == entries_.end())
        return std::nullopt;
    if (it->second.wait_for(std::chrono::seconds(0)) != std::future_status::ready)
        return std::nullopt;
    return it->second.get();
}

void ExtractionCache::put(const std::string &doc_id, const std::string &attr, ExtractionResult r)
{
    std::promise<ExtractionResult> p;
    p.set_value(std::move(r));
    std::lock_guard lk(mu_);
    entries_[{doc_id, attr}] = p.get_future().share();
}

std::size_t ExtractionCache::size() const
{
    std::lock_guard lk(mu_);
    return entries_.size();
}

void AuditLog::record(AuditEntry e)
{
    std::lock_guard lk(mu_);
    e.seq = next_++;
    entries_.push_back(std::move(e));
}

std::vector<AuditEntry> AuditLog::entries() const
{
    std::lock_guard lk(mu_);
    auto out = entries_;
    std::stable_sort(out.begin(), out.end(), [](auto &a, auto &b) { return a.doc_id < b.doc_id; });
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i].seq = i;
    return out;
}

std::size_t AuditLog::size() const
{
    std::lock_guard lk(mu_);
    return entries_.size();
}

std::size_t AuditLog::total_tokens() const
{
    std::lock_guard lk(mu_);
    std::size_t t = 0;
    for (auto &e : entries_)
        t += e.input_tokens + e.output_tokens;
    return t;
}

bool AuditLog::contains(const std::string &doc_id, const std::string &attribute) const
{
    std::lock_guard lk(mu_);
    return std::any_of(entries_.begin(), entries_.end(), [&](auto &e) {
        if (e.doc_id != doc_id)
            return false;
        if (e.attribute == attribute)
            return true;
        // sample calls list several attributes
        std::string_view list = e.attribute;
        std::size_t pos = 0;
        while (pos <= list.size()) {
            auto comma = list.find(',', pos);
            auto item = list.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos);
            if (item == attribute)
                return true;
            if (comma == std::string_view::npos)
                break;
            pos = comma + 1;
        }
        return false;
    });
}

void AuditLog::write(std::ostream &os) const
{
    std::size_t ts = 0;
    for (auto &e : entries()) {
        json j = {{"timestamp", ts++},          {"doc_id", e.doc_id},
                  {"attribute", e.attribute},   {"phase", e.phase},
                  {"input_tokens", e.input_tokens}, {"output_tokens", e.output_tokens}};
        os << j.dump() << '\n';
    }
}

void TokenMeter::charge(std::size_t in, std::size_t out, double latency_ms)
{
    ++calls_;
    in_ += in;
    out_ += out;
    double cur = latency_ms_.load();
    while (!latency_ms_.compare_exchange_weak(cur, cur + latency_ms)) { }
    if (budget_ && in_ + out_ > *budget_)
        throw BudgetExceeded(fmt::format("{} tokens used, budget {}", in_ + out_, *budget_));
}

ProviderResponse Extractor::call(const ProviderRequest &req, const std::string &doc_id, const std::string &attr,
                                 const char *phase)
{
    auto delay = opts_.backoff;
    for (std::size_t attempt = 1;; ++attempt) {
        try {
            auto r = provider_.complete(req);
            audit_.record({0, doc_id, attr, phase, r.input_tokens, r.output_tokens});
            meter_.charge(r.input_tokens, r.output_tokens, r.latency_ms);
            return r;
        } catch (const ProviderError &) {
            if (attempt >= opts_.max_attempts)
                throw;
            std::this_thread::sleep_for(delay);
            delay *= 2;
        }
    }
}

ExtractionOutcome Extractor::extract_attribute(const ExtractionRequest &req)
{
    for (auto *s : req.segments)
        if (s->doc_id != req.doc_id)
            throw ValidationError("segment " + s->seg_id + " does not belong to " + req.doc_id);

    ExtractionOutcome out;
    auto key = req.attribute.qualified();
    out.result = cache_.get_or_compute(
        req.doc_id, key,
        [&] {
            ExtractionResult r;
            if (req.segments.empty())
                return r;
            // Keep the longest document-ordered prefix of segments that fits the prompt budget.
            std::vector<const Segment *> segs;
            std::size_t used = 0;
            for (auto *s : req.segments) {
                if (used + s->token_count > req.prompt_budget)
                    break;
                used += s->token_count;
                segs.push_back(s);
            }
            if (segs.empty())
                return r;
            ProviderRequest pr;
            pr.kind = ProviderRequest::Kind::Extract;
            pr.doc_id = req.doc_id;
            pr.attributes = {req.attribute};
            pr.segments = segs;
            pr.prompt = build_extraction_prompt(req.attribute, segs);
            auto resp = call(pr, req.doc_id, key, "extract");
            r = parse_extraction(resp.content, req.attribute.dtype, segs);
            r.input_tokens = resp.input_tokens;
            r.output_tokens = resp.output_tokens;
            return r;
        },
        out.cache_hit);
    out.tokens_added = out.cache_hit ? 0 : out.result.input_tokens + out.result.output_tokens;
    return out;
}

SampleExtraction Extractor::extract_for_sample(const Document &doc, const std::vector<const Segment *> &segments,
                                               const std::vector<AttributeSpec> &attrs)
{
    SampleExtraction out;
    out.record.doc_id = doc.doc_id;
    if (attrs.empty())
        return out;

    ProviderRequest pr;
    pr.kind = ProviderRequest::Kind::Sample;
    pr.doc_id = doc.doc_id;
    pr.attributes = attrs;
    pr.segments = segments;
    pr.prompt = build_sample_prompt(attrs, segments);
    std::string keys;
    for (auto &a : attrs)
        keys += (keys.empty() ? "" : ",") + a.qualified();
    auto resp = call(pr, doc.doc_id, keys, "sample");
    out.tokens = resp.input_tokens + resp.output_tokens;

    json reply;
    try {
        reply = json::parse(resp.content);
    } catch (const json::exception &) {
        reply = json::object();
    }
    for (auto &a : attrs) {
        auto key = a.qualified();
        ExtractionResult r;
        if (reply.is_object() && reply.contains(key))
            r = parse_extraction(reply[key].dump(), a.dtype, segments);
        else if (reply.is_object() && reply.contains(a.name))
            r = parse_extraction(reply[a.name].dump(), a.dtype, segments);
        else
            r.parse_warning = true;
        out.record.values[key] = r.value;
        out.record.provenance[key] = r.provenance;
        // Already paid for in the sample call.
        if (!cache_.contains(doc.doc_id, key))
            cache_.put(doc.doc_id, key, r);
    }
    return out;
}

std::vector<std::string> Extractor::synthesize(const AttributeSpec &attr, std::size_t count)
{
    ProviderRequest pr;
    pr.kind = ProviderRequest::Kind::Synthesize;
    pr.attributes = {attr};
    pr.count = count;
    pr.prompt = build_synthesis_prompt(attr, count);
    auto resp = call(pr, "", attr.qualified(), "synthesize");
    std::vector<std::string> out;
    try {
        auto j = json::parse(resp.content);
        if (!j.is_array())
            throw ProviderError("exemplar reply is not a list");
        for (auto &x : j)
            if (x.is_string())
                out.push_back(x.get<std::string>());
    } catch (const json::exception &e) {
        throw ProviderError(std::string("bad exemplar reply: ") + e.what());
    }
    return out;
}

}
