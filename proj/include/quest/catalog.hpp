#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "quest/text.hpp"
#include "quest/value.hpp"

namespace quest {

struct Document
{
    std::string doc_id;
    std::string text;
    std::size_t token_count = 0;
    std::string summary;
    std::optional<std::vector<float>> embedding;
};

struct Segment
{
    std::string seg_id;
    std::string doc_id;
    Span span;
    std::string text;
    std::size_t token_count = 0;
    std::vector<float> embedding;
};

struct AttributeSpec
{
    std::string table;
    std::string name;
    std::string description;
    DType dtype = DType::String;

    /// "Table.name"; the key used by caches, stats and provenance maps.
    std::string qualified() const { return table + "." + name; }
    bool operator==(const AttributeSpec &o) const { return table == o.table && name == o.name; }
};

/// Which documents back a table: an explicit id list, a glob over ids, or (both empty) all.
struct CorpusFilter
{
    std::vector<std::string> ids;
    std::string glob;

    bool empty() const { return ids.empty() && glob.empty(); }
};

struct TableSpec
{
    std::string name;
    std::vector<AttributeSpec> attributes;
    CorpusFilter corpus_filter;

    const AttributeSpec *find(std::string_view attr) const;
};

struct TupleRecord
{
    std::string doc_id;
    std::map<std::string, Value> values;                          ///< qualified attribute -> value
    std::map<std::string, std::vector<std::string>> provenance;   ///< qualified attribute -> seg ids

    const Value &get(const std::string &attr) const;
};

/// Shell-style matching with `*` and `?`.
bool glob_match(std::string_view pattern, std::string_view text);

class Corpus
{
    std::vector<Document> docs_;
    std::unordered_map<std::string, std::size_t> by_id_;

public:
    Corpus() = default;

    /// Adds a document, computing its token count. Throws DuplicateId / EmptyDocument.
    void add(Document doc, const Tokenizer &tok);

    const std::vector<Document> &documents() const { return docs_; }
    std::vector<Document> &documents() { return docs_; }
    const Document *find(std::string_view id) const;
    Document *find(std::string_view id);
    std::size_t size() const { return docs_.size(); }

    double average_tokens() const;

    /// Resolve a table's corpus filter into doc ids, in corpus order.
    std::vector<std::string> resolve(const CorpusFilter &f) const;

    /// One JSON record per line: {"id","text","token_count","summary"}.
    void save(const std::filesystem::path &path) const;
    static Corpus load_saved(const std::filesystem::path &path);
};

/// Load raw input: a directory of `*.txt` files (id = file stem, sorted by name) or a
/// line-delimited record file with `{"id", "text"}` fields.
Corpus load_corpus(const std::filesystem::path &source, const Tokenizer &tok);

class Catalog
{
    std::shared_ptr<const Corpus> corpus_;
    std::map<std::string, TableSpec> tables_;
    std::map<std::string, std::vector<std::string>> table_docs_;

public:
    Catalog() = default;
    explicit Catalog(std::shared_ptr<const Corpus> corpus) : corpus_(std::move(corpus)) { }

    void attach(std::shared_ptr<const Corpus> corpus) { corpus_ = std::move(corpus); }
    const Corpus &corpus() const;
    bool has_corpus() const { return corpus_ != nullptr; }

    /// Validates and registers a table. Throws UnknownCorpus, InvalidSchema, DuplicateId.
    const TableSpec &register_table(TableSpec spec);

    const TableSpec *find_table(std::string_view name) const;
    const TableSpec &table(std::string_view name) const;
    const std::vector<std::string> &table_documents(std::string_view name) const;
    std::vector<std::string> table_names() const;

    void save_schema(const std::filesystem::path &path) const;
    void load_schema(const std::filesystem::path &path);
};

/// Append-only tuple store with last-writer-wins per (doc_id, attribute).
class TupleStore
{
    mutable std::mutex mu_;
    std::map<std::string, TupleRecord> records_;

public:
    void put(const std::string &doc_id, const std::string &attr, Value v, std::vector<std::string> provenance);
    std::optional<TupleRecord> get(const std::string &doc_id) const;
    std::size_t size() const;
};

/// True when every provenance seg id belongs to `doc_segments`.
bool provenance_closed(const TupleRecord &rec, const std::vector<Segment> &doc_segments);

}
