#include "quest/catalog.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <fmt/format.h>

#include "quest/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace quest {

/*----------------------------------------------------------------------------------------------------------------------
 * Values
 *--------------------------------------------------------------------------------------------------------------------*/

std::string_view to_string(DType t)
{
    switch (t) {
    case DType::Number: return "number";
    case DType::String: return "string";
    case DType::Categorical: return "categorical";
    }
    return "string";
}

std::optional<DType> parse_dtype(std::string_view s)
{
    if (s == "number") return DType::Number;
    if (s == "string") return DType::String;
    if (s == "categorical") return DType::Categorical;
    return std::nullopt;
}

std::string trim(std::string_view s)
{
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos)
        return {};
    auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

std::string to_lower(std::string_view s)
{
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

std::string to_string(const Value &v)
{
    if (is_null(v))
        return "NULL";
    if (auto d = std::get_if<double>(&v)) {
        if (std::floor(*d) == *d && std::abs(*d) < 1e15)
            return fmt::format("{}", static_cast<long long>(*d));
        return fmt::format("{}", *d);
    }
    return std::get<std::string>(v);
}

std::string canonical_key(const Value &v, bool fold)
{
    if (is_null(v))
        return "\x01NULL";
    if (std::holds_alternative<double>(v))
        return to_string(v);
    std::string s = trim(std::get<std::string>(v));
    return fold ? to_lower(s) : s;
}

Value coerce(const Value &v, DType t)
{
    if (is_null(v))
        return v;
    if (t == DType::Number) {
        if (std::holds_alternative<double>(v))
            return v;
        std::string s = trim(std::get<std::string>(v));
        if (s.empty())
            return std::monostate{};
        try {
            std::size_t used = 0;
            double d = std::stod(s, &used);
            if (used != s.size() || !std::isfinite(d))
                return std::monostate{};
            return d;
        } catch (const std::exception &) {
            return std::monostate{};
        }
    }
    if (std::holds_alternative<double>(v))
        return to_string(v);
    return trim(std::get<std::string>(v));
}

bool values_equal(const Value &a, const Value &b, bool fold)
{
    if (is_null(a) || is_null(b))
        return false;
    return canonical_key(a, fold) == canonical_key(b, fold);
}

json to_json(const Value &v)
{
    if (is_null(v))
        return nullptr;
    if (auto d = std::get_if<double>(&v))
        return *d;
    return std::get<std::string>(v);
}

Value value_from_json(const json &j)
{
    if (j.is_number())
        return j.get<double>();
    if (j.is_string())
        return j.get<std::string>();
    if (j.is_boolean())
        return std::string(j.get<bool>() ? "true" : "false");
    return std::monostate{};
}

/*----------------------------------------------------------------------------------------------------------------------
 * Schema types
 *--------------------------------------------------------------------------------------------------------------------*/

const AttributeSpec *TableSpec::find(std::string_view attr) const
{
    for (auto &a : attributes)
        if (a.name == attr)
            return &a;
    return nullptr;
}

const Value &TupleRecord::get(const std::string &attr) const
{
    static const Value null_value;
    auto it = values.find(attr);
    return it == values.end() ? null_value : it->second;
}

bool glob_match(std::string_view p, std::string_view t)
{
    std::size_t pi = 0, ti = 0, star = std::string_view::npos, mark = 0;
    while (ti < t.size()) {
        if (pi < p.size() && (p[pi] == '?' || p[pi] == t[ti])) {
            ++pi;
            ++ti;
        } else if (pi < p.size() && p[pi] == '*') {
            star = pi++;
            mark = ti;
        } else if (star != std::string_view::npos) {
            pi = star + 1;
            ti = ++mark;
        } else {
            return false;
        }
    }
    while (pi < p.size() && p[pi] == '*')
        ++pi;
    return pi == p.size();
}

/*----------------------------------------------------------------------------------------------------------------------
 * Corpus
 *--------------------------------------------------------------------------------------------------------------------*/

void Corpus::add(Document doc, const Tokenizer &tok)
{
    if (doc.doc_id.empty())
        throw ValidationError("document id must not be empty");
    if (by_id_.count(doc.doc_id))
        throw DuplicateId(doc.doc_id);
    if (trim(doc.text).empty())
        throw EmptyDocument(doc.doc_id);
    doc.token_count = tok.count(doc.text);
    by_id_.emplace(doc.doc_id, docs_.size());
    docs_.push_back(std::move(doc));
}

const Document *Corpus::find(std::string_view id) const
{
    auto it = by_id_.find(std::string(id));
    return it == by_id_.end() ? nullptr : &docs_[it->second];
}

Document *Corpus::find(std::string_view id)
{
    auto it = by_id_.find(std::string(id));
    return it == by_id_.end() ? nullptr : &docs_[it->second];
}

double Corpus::average_tokens() const
{
    if (docs_.empty())
        return 0.0;
    double sum = 0;
    for (auto &d : docs_)
        sum += static_cast<double>(d.token_count);
    return sum / static_cast<double>(docs_.size());
}

std::vector<std::string> Corpus::resolve(const CorpusFilter &f) const
{
    std::vector<std::string> out;
    if (f.empty()) {
        for (auto &d : docs_)
            out.push_back(d.doc_id);
        return out;
    }
    std::set<std::string> wanted(f.ids.begin(), f.ids.end());
    for (auto &d : docs_) {
        if (wanted.count(d.doc_id) || (!f.glob.empty() && glob_match(f.glob, d.doc_id)))
            out.push_back(d.doc_id);
    }
    return out;
}

void Corpus::save(const fs::path &path) const
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw IoError("cannot write " + path.string());
    for (auto &d : docs_) {
        json j = {{"id", d.doc_id}, {"text", d.text}, {"token_count", d.token_count}, {"summary", d.summary}};
        out << j.dump() << '\n';
    }
}

Corpus Corpus::load_saved(const fs::path &path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot read " + path.string());
    Corpus c;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty())
            continue;
        json j;
        try {
            j = json::parse(line);
            Document d;
            d.doc_id = j.at("id").get<std::string>();
            d.text = j.at("text").get<std::string>();
            d.token_count = j.at("token_count").get<std::size_t>();
            d.summary = j.value("summary", "");
            if (c.by_id_.count(d.doc_id))
                throw DuplicateId(d.doc_id);
            c.by_id_.emplace(d.doc_id, c.docs_.size());
            c.docs_.push_back(std::move(d));
        } catch (const json::exception &e) {
            throw FormatError(path.string(), lineno, e.what());
        }
    }
    return c;
}

Corpus load_corpus(const fs::path &source, const Tokenizer &tok)
{
    Corpus c;
    if (fs::is_directory(source)) {
        std::vector<fs::path> files;
        for (auto &e : fs::directory_iterator(source))
            if (e.is_regular_file() && e.path().extension() == ".txt")
                files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (auto &f : files) {
            std::ifstream in(f, std::ios::binary);
            if (!in)
                throw IoError("cannot read " + f.string());
            std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
            c.add(Document{f.stem().string(), std::move(text), 0, {}, {}}, tok);
        }
        return c;
    }
    std::ifstream in(source, std::ios::binary);
    if (!in)
        throw IoError("cannot read " + source.string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty())
            continue;
        Document d;
        try {
            auto j = json::parse(line);
            d.doc_id = j.at("id").get<std::string>();
            d.text = j.at("text").get<std::string>();
        } catch (const json::exception &e) {
            throw FormatError(source.string(), lineno, e.what());
        }
        c.add(std::move(d), tok);
    }
    return c;
}

/*----------------------------------------------------------------------------------------------------------------------
 * Catalog
 *--------------------------------------------------------------------------------------------------------------------*/

const Corpus &Catalog::corpus() const
{
    if (!corpus_)
        throw UnknownCorpus("no corpus loaded");
    return *corpus_;
}

const TableSpec &Catalog::register_table(TableSpec spec)
{
    if (!corpus_)
        throw UnknownCorpus("no corpus loaded for table " + spec.name);
    if (spec.name.empty())
        throw InvalidSchema("table name must not be empty");
    if (tables_.count(spec.name))
        throw DuplicateId("table " + spec.name);
    if (spec.attributes.empty())
        throw InvalidSchema("table " + spec.name + " has no attributes");
    std::set<std::string> names;
    for (auto &a : spec.attributes) {
        a.table = spec.name;
        if (a.name.empty())
            throw InvalidSchema("attribute with empty name in " + spec.name);
        if (!names.insert(a.name).second)
            throw InvalidSchema("duplicate attribute " + a.qualified());
        if (trim(a.description).empty())
            throw InvalidSchema("attribute " + a.qualified() + " needs a description");
    }
    auto docs = corpus_->resolve(spec.corpus_filter);
    if (docs.empty())
        throw InvalidSchema("corpus filter of " + spec.name + " selects no documents");
    table_docs_[spec.name] = std::move(docs);
    auto name = spec.name;
    return tables_.emplace(name, std::move(spec)).first->second;
}

const TableSpec *Catalog::find_table(std::string_view name) const
{
    auto it = tables_.find(std::string(name));
    if (it != tables_.end())
        return &it->second;
    for (auto &[n, t] : tables_)
        if (to_lower(n) == to_lower(name))
            return &t;
    return nullptr;
}

const TableSpec &Catalog::table(std::string_view name) const
{
    if (auto t = find_table(name))
        return *t;
    throw UnknownSymbol("table " + std::string(name));
}

const std::vector<std::string> &Catalog::table_documents(std::string_view name) const
{
    return table_docs_.at(table(name).name);
}

std::vector<std::string> Catalog::table_names() const
{
    std::vector<std::string> out;
    for (auto &[n, _] : tables_)
        out.push_back(n);
    return out;
}

void Catalog::save_schema(const fs::path &path) const
{
    json tables = json::array();
    for (auto &[name, t] : tables_) {
        json attrs = json::array();
        for (auto &a : t.attributes)
            attrs.push_back({{"name", a.name}, {"description", a.description}, {"dtype", to_string(a.dtype)}});
        tables.push_back({{"name", name},
                          {"attributes", attrs},
                          {"corpus_filter", {{"ids", t.corpus_filter.ids}, {"glob", t.corpus_filter.glob}}}});
    }
    std::ofstream out(path);
    if (!out)
        throw IoError("cannot write " + path.string());
    out << json{{"tables", tables}}.dump(2) << '\n';
}

void Catalog::load_schema(const fs::path &path)
{
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot read " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception &e) {
        throw FormatError(path.string(), 0, e.what());
    }
    for (auto &t : j.at("tables")) {
        TableSpec spec;
        spec.name = t.at("name").get<std::string>();
        for (auto &a : t.at("attributes")) {
            AttributeSpec attr;
            attr.name = a.at("name").get<std::string>();
            attr.description = a.value("description", "");
            auto dt = parse_dtype(a.value("dtype", "string"));
            if (!dt)
                throw InvalidSchema("unknown dtype for " + attr.name);
            attr.dtype = *dt;
            spec.attributes.push_back(std::move(attr));
        }
        if (t.contains("corpus_filter")) {
            auto &f = t["corpus_filter"];
            spec.corpus_filter.ids = f.value("ids", std::vector<std::string>{});
            spec.corpus_filter.glob = f.value("glob", "");
        }
        register_table(std::move(spec));
    }
}

/*----------------------------------------------------------------------------------------------------------------------
 * TupleStore
 *--------------------------------------------------------------------------------------------------------------------*/

void TupleStore::put(const std::string &doc_id, const std::string &attr, Value v, std::vector<std::string> provenance)
{
    std::lock_guard lock(mu_);
    auto &rec = records_[doc_id];
    rec.doc_id = doc_id;
    rec.values[attr] = std::move(v);
    rec.provenance[attr] = std::move(provenance);
}

std::optional<TupleRecord> TupleStore::get(const std::string &doc_id) const
{
    std::lock_guard lock(mu_);
    auto it = records_.find(doc_id);
    if (it == records_.end())
        return std::nullopt;
    return it->second;
}

std::size_t TupleStore::size() const
{
    std::lock_guard lock(mu_);
    return records_.size();
}

bool provenance_closed(const TupleRecord &rec, const std::vector<Segment> &doc_segments)
{
    std::set<std::string> ids;
    for (auto &s : doc_segments)
        ids.insert(s.seg_id);
    for (auto &[attr, segs] : rec.provenance)
        for (auto &s : segs)
            if (!ids.count(s))
                return false;
    return true;
}

}
