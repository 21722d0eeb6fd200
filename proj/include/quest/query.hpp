#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "quest/catalog.hpp"

namespace quest {

enum class CompareOp { Eq, Le, Ge, Range, In };

/// A single filter over one attribute.
///
/// `Le`/`Ge` carry one literal, `Range` carries `lo <= hi`, `In` a non-empty set. Strict
/// comparisons (`<`, `>`) are open-range predicates: `Ge` with `lo_open` is `>`.
struct Predicate
{
    AttributeSpec attribute;
    CompareOp op = CompareOp::Eq;
    std::vector<Value> literals;
    bool lo_open = false;
    bool hi_open = false;
    bool synthetic = false;   ///< produced by join transformation

    /// NULL never satisfies a predicate.
    bool evaluate(const Value &v) const;
};

std::string to_string(const Predicate &p);

struct ExpressionNode
{
    enum class Kind { Leaf, And, Or };

    Kind kind = Kind::Leaf;
    std::vector<ExpressionNode> children;
    std::optional<Predicate> predicate;

    static ExpressionNode leaf(Predicate p);
    /// Builds an n-ary node, splicing in children of the same kind. One child collapses to itself.
    static ExpressionNode combine(Kind kind, std::vector<ExpressionNode> children);

    bool is_leaf() const { return kind == Kind::Leaf; }
    std::size_t leaf_count() const;
};

ExpressionNode flatten(const ExpressionNode &node);

/// Left-to-right leaf enumeration. Pointers stay valid while `node` is alive and unmodified.
std::vector<const Predicate *> leaves(const ExpressionNode &node);

/// Canonical text. AND binds tighter than OR, so only OR-under-AND gets parentheses.
std::string to_string(const ExpressionNode &node);

bool structurally_equal(const ExpressionNode &a, const ExpressionNode &b);

struct JoinEdge
{
    AttributeSpec left;
    AttributeSpec right;
};

struct JoinGraph
{
    std::vector<std::string> nodes;
    std::vector<JoinEdge> edges;

    bool connected() const;
};

struct QuerySpec
{
    std::vector<AttributeSpec> select;
    std::vector<TableSpec> tables;
    std::optional<ExpressionNode> where;
    std::vector<JoinEdge> joins;

    JoinGraph join_graph() const;
    bool is_join() const { return tables.size() > 1; }
    const TableSpec &table(std::string_view name) const;

    /// Attributes of `table` referenced anywhere in the query (SELECT, WHERE, join keys), deduplicated.
    std::vector<AttributeSpec> referenced_attributes(std::string_view table) const;
    std::vector<AttributeSpec> select_of(std::string_view table) const;
    std::vector<AttributeSpec> where_attributes() const;
};

/// Parses `SELECT attrs FROM table [JOIN table ON a = b]* [WHERE expr]` against the catalog.
///
/// Throws ParseError (with offset), UnknownSymbol, TypeError, PlannerError (disconnected joins).
QuerySpec parse_query(std::string_view text, const Catalog &catalog);

std::string to_string(const QuerySpec &q);

/// Splits a WHERE clause into per-table filter expressions. The root must be a conjunction of
/// single-table sub-expressions (or a single-table expression); anything else is a PlannerError.
std::map<std::string, std::optional<ExpressionNode>> split_where_by_table(const QuerySpec &q);

}
