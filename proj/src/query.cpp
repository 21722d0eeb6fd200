#include "quest/query.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

#include <fmt/format.h>

#include "quest/error.hpp"

namespace quest {

/*----------------------------------------------------------------------------------------------------------------------
 * Predicate
 *--------------------------------------------------------------------------------------------------------------------*/

namespace {

int compare_values(const Value &a, const Value &b, bool fold)
{
    if (auto x = std::get_if<double>(&a)) {
        double y = std::get<double>(b);
        if (std::abs(*x - y) <= 1e-9 * std::max(1.0, std::abs(y)))
            return 0;
        return *x < y ? -1 : 1;
    }
    auto x = canonical_key(a, fold);
    auto y = canonical_key(b, fold);
    return x.compare(y) < 0 ? -1 : (x == y ? 0 : 1);
}

bool same_type(const Value &a, const Value &b) { return a.index() == b.index(); }

std::string literal_text(const Value &v)
{
    if (std::holds_alternative<std::string>(v)) {
        std::string out = "'";
        for (char c : std::get<std::string>(v)) {
            if (c == '\'')
                out += '\'';
            out += c;
        }
        return out + "'";
    }
    return to_string(v);
}

}

bool Predicate::evaluate(const Value &raw) const
{
    if (is_null(raw))
        return false;
    Value v = coerce(raw, attribute.dtype);
    if (is_null(v))
        return false;
    const bool fold = attribute.dtype == DType::Categorical;
    auto cmp = [&](const Value &lit) {
        if (!same_type(v, lit))
            return std::optional<int>{};
        return std::optional<int>{compare_values(v, lit, fold)};
    };
    switch (op) {
    case CompareOp::Eq: {
        auto c = cmp(literals.at(0));
        return c && *c == 0;
    }
    case CompareOp::Ge: {
        auto c = cmp(literals.at(0));
        return c && (lo_open ? *c > 0 : *c >= 0);
    }
    case CompareOp::Le: {
        auto c = cmp(literals.at(0));
        return c && (hi_open ? *c < 0 : *c <= 0);
    }
    case CompareOp::Range: {
        auto lo = cmp(literals.at(0));
        auto hi = cmp(literals.at(1));
        return lo && hi && (lo_open ? *lo > 0 : *lo >= 0) && (hi_open ? *hi < 0 : *hi <= 0);
    }
    case CompareOp::In:
        for (auto &lit : literals) {
            auto c = cmp(lit);
            if (c && *c == 0)
                return true;
        }
        return false;
    }
    return false;
}

std::string to_string(const Predicate &p)
{
    const std::string a = p.attribute.qualified();
    switch (p.op) {
    case CompareOp::Eq: return fmt::format("{} = {}", a, literal_text(p.literals.at(0)));
    case CompareOp::Ge: return fmt::format("{} {} {}", a, p.lo_open ? ">" : ">=", literal_text(p.literals.at(0)));
    case CompareOp::Le: return fmt::format("{} {} {}", a, p.hi_open ? "<" : "<=", literal_text(p.literals.at(0)));
    case CompareOp::Range:
        if (!p.lo_open && !p.hi_open)
            return fmt::format("{} BETWEEN {} AND {}", a, literal_text(p.literals.at(0)), literal_text(p.literals.at(1)));
        return fmt::format("({} {} {} AND {} {} {})", a, p.lo_open ? ">" : ">=", literal_text(p.literals.at(0)), a,
                           p.hi_open ? "<" : "<=", literal_text(p.literals.at(1)));
    case CompareOp::In: {
        std::string out = a + " IN (";
        for (std::size_t i = 0; i < p.literals.size(); ++i)
            out += (i ? ", " : "") + literal_text(p.literals[i]);
        return out + ")";
    }
    }
    return a;
}

/*----------------------------------------------------------------------------------------------------------------------
 * Expression trees
 *--------------------------------------------------------------------------------------------------------------------*/

ExpressionNode ExpressionNode::leaf(Predicate p)
{
    ExpressionNode n;
    n.kind = Kind::Leaf;
    n.predicate = std::move(p);
    return n;
}

ExpressionNode ExpressionNode::combine(Kind kind, std::vector<ExpressionNode> children)
{
    if (children.empty())
        throw ValidationError("boolean node without children");
    if (children.size() == 1)
        return std::move(children.front());
    ExpressionNode n;
    n.kind = kind;
    for (auto &c : children) {
        if (c.kind == kind) {
            for (auto &g : c.children)
                n.children.push_back(std::move(g));
        } else {
            n.children.push_back(std::move(c));
        }
    }
    return n;
}

std::size_t ExpressionNode::leaf_count() const
{
    if (is_leaf())
        return 1;
    std::size_t n = 0;
    for (auto &c : children)
        n += c.leaf_count();
    return n;
}

ExpressionNode flatten(const ExpressionNode &node)
{
    if (node.is_leaf())
        return node;
    std::vector<ExpressionNode> kids;
    kids.reserve(node.children.size());
    for (auto &c : node.children)
        kids.push_back(flatten(c));
    return ExpressionNode::combine(node.kind, std::move(kids));
}

namespace {

void collect_leaves(const ExpressionNode &n, std::vector<const Predicate *> &out)
{
    if (n.is_leaf()) {
        out.push_back(&*n.predicate);
        return;
    }
    for (auto &c : n.children)
        collect_leaves(c, out);
}

}

std::vector<const Predicate *> leaves(const ExpressionNode &node)
{
    std::vector<const Predicate *> out;
    collect_leaves(node, out);
    return out;
}

std::string to_string(const ExpressionNode &node)
{
    if (node.is_leaf())
        return to_string(*node.predicate);
    const bool is_and = node.kind == ExpressionNode::Kind::And;
    std::string out;
    for (std::size_t i = 0; i < node.children.size(); ++i) {
        if (i)
            out += is_and ? " AND " : " OR ";
        auto &c = node.children[i];
        bool paren = is_and && c.kind == ExpressionNode::Kind::Or;
        out += paren ? "(" + to_string(c) + ")" : to_string(c);
    }
    return out;
}

bool structurally_equal(const ExpressionNode &a, const ExpressionNode &b)
{
    if (a.kind != b.kind || a.children.size() != b.children.size())
        return false;
    if (a.is_leaf())
        return to_string(*a.predicate) == to_string(*b.predicate) && a.predicate->synthetic == b.predicate->synthetic;
    for (std::size_t i = 0; i < a.children.size(); ++i)
        if (!structurally_equal(a.children[i], b.children[i]))
            return false;
    return true;
}

/*----------------------------------------------------------------------------------------------------------------------
 * QuerySpec
 *--------------------------------------------------------------------------------------------------------------------*/

bool JoinGraph::connected() const
{
    if (nodes.size() <= 1)
        return true;
    std::set<std::string> seen{nodes.front()};
    bool grew = true;
    while (grew) {
        grew = false;
        for (auto &e : edges) {
            bool l = seen.count(e.left.table), r = seen.count(e.right.table);
            if (l != r) {
                seen.insert(l ? e.right.table : e.left.table);
                grew = true;
            }
        }
    }
    return seen.size() == nodes.size();
}

JoinGraph QuerySpec::join_graph() const
{
    JoinGraph g;
    for (auto &t : tables)
        g.nodes.push_back(t.name);
    g.edges = joins;
    return g;
}

const TableSpec &QuerySpec::table(std::string_view name) const
{
    for (auto &t : tables)
        if (t.name == name)
            return t;
    throw UnknownSymbol("table " + std::string(name) + " not in query");
}

namespace {

void add_unique(std::vector<AttributeSpec> &out, const AttributeSpec &a)
{
    if (std::find(out.begin(), out.end(), a) == out.end())
        out.push_back(a);
}

}

std::vector<AttributeSpec> QuerySpec::referenced_attributes(std::string_view table) const
{
    std::vector<AttributeSpec> out;
    for (auto &a : select)
        if (a.table == table)
            add_unique(out, a);
    if (where)
        for (auto *p : leaves(*where))
            if (p->attribute.table == table)
                add_unique(out, p->attribute);
    for (auto &e : joins) {
        if (e.left.table == table)
            add_unique(out, e.left);
        if (e.right.table == table)
            add_unique(out, e.right);
    }
    return out;
}

std::vector<AttributeSpec> QuerySpec::select_of(std::string_view table) const
{
    std::vector<AttributeSpec> out;
    for (auto &a : select)
        if (a.table == table)
            add_unique(out, a);
    return out;
}

std::vector<AttributeSpec> QuerySpec::where_attributes() const
{
    std::vector<AttributeSpec> out;
    if (where)
        for (auto *p : leaves(*where))
            add_unique(out, p->attribute);
    return out;
}

std::string to_string(const QuerySpec &q)
{
    std::string out = "SELECT ";
    for (std::size_t i = 0; i < q.select.size(); ++i)
        out += (i ? ", " : "") + q.select[i].qualified();
    out += " FROM " + q.tables.front().name;
    std::set<std::string> placed{q.tables.front().name};
    std::vector<bool> used(q.joins.size(), false);
    // Emit joins so that every JOIN names a table connected to what is already placed.
    for (std::size_t round = 0; round < q.joins.size(); ++round) {
        for (std::size_t i = 0; i < q.joins.size(); ++i) {
            if (used[i])
                continue;
            auto &e = q.joins[i];
            bool l = placed.count(e.left.table), r = placed.count(e.right.table);
            if (!l && !r)
                continue;
            used[i] = true;
            if (l && r) {
                // Both sides already present: an extra equality condition.
                continue;
            }
            const std::string &next = l ? e.right.table : e.left.table;
            out += " JOIN " + next + " ON " + e.left.qualified() + " = " + e.right.qualified();
            placed.insert(next);
        }
    }
    if (q.where)
        out += " WHERE " + to_string(*q.where);
    return out;
}

std::map<std::string, std::optional<ExpressionNode>> split_where_by_table(const QuerySpec &q)
{
    std::map<std::string, std::optional<ExpressionNode>> out;
    for (auto &t : q.tables)
        out[t.name] = std::nullopt;
    if (!q.where)
        return out;

    auto table_of = [](const ExpressionNode &n) -> std::optional<std::string> {
        std::set<std::string> ts;
        for (auto *p : leaves(n))
            ts.insert(p->attribute.table);
        if (ts.size() != 1)
            return std::nullopt;
        return *ts.begin();
    };

    std::vector<const ExpressionNode *> parts;
    if (q.where->kind == ExpressionNode::Kind::And) {
        for (auto &c : q.where->children)
            parts.push_back(&c);
    } else {
        parts.push_back(&*q.where);
    }
    std::map<std::string, std::vector<ExpressionNode>> grouped;
    for (auto *p : parts) {
        auto t = table_of(*p);
        if (!t)
            throw PlannerError("a WHERE sub-expression spans several tables: " + to_string(*p));
        grouped[*t].push_back(*p);
    }
    for (auto &[t, kids] : grouped)
        out[t] = ExpressionNode::combine(ExpressionNode::Kind::And, std::move(kids));
    return out;
}

/*----------------------------------------------------------------------------------------------------------------------
 * Lexer and parser
 *--------------------------------------------------------------------------------------------------------------------*/

namespace {

enum class Tok { Ident, Number, String, Comma, LParen, RParen, Dot, Star, Eq, Le, Ge, Lt, Gt, End };

struct Token
{
    Tok kind;
    std::string text;
    std::size_t pos;
};

std::vector<Token> lex(std::string_view s)
{
    std::vector<Token> out;
    std::size_t i = 0;
    while (i < s.size()) {
        unsigned char c = s[i];
        if (std::isspace(c)) {
            ++i;
            continue;
        }
        std::size_t start = i;
        if (std::isalpha(c) || c == '_') {
            while (i < s.size() && (std::isalnum(static_cast<unsigned char>(s[i])) || s[i] == '_'))
                ++i;
            out.push_back({Tok::Ident, std::string(s.substr(start, i - start)), start});
        } else if (std::isdigit(c) || ((c == '-' || c == '+') && i + 1 < s.size() &&
                                       (std::isdigit(static_cast<unsigned char>(s[i + 1])) || s[i + 1] == '.'))) {
            ++i;
            bool dot = false;
            while (i < s.size() && (std::isdigit(static_cast<unsigned char>(s[i])) || (s[i] == '.' && !dot))) {
                dot |= s[i] == '.';
                ++i;
            }
            out.push_back({Tok::Number, std::string(s.substr(start, i - start)), start});
        } else if (c == '\'') {
            std::string lit;
            ++i;
            bool closed = false;
            while (i < s.size()) {
                if (s[i] == '\'') {
                    if (i + 1 < s.size() && s[i + 1] == '\'') {
                        lit += '\'';
                        i += 2;
                        continue;
                    }
                    ++i;
                    closed = true;
                    break;
                }
                lit += s[i++];
            }
            if (!closed)
                throw ParseError(start, "unterminated string literal");
            out.push_back({Tok::String, std::move(lit), start});
        } else {
            auto two = s.substr(i, 2);
            if (two == "<=") { out.push_back({Tok::Le, "<=", start}); i += 2; }
            else if (two == ">=") { out.push_back({Tok::Ge, ">=", start}); i += 2; }
            else if (c == '<') { out.push_back({Tok::Lt, "<", start}); ++i; }
            else if (c == '>') { out.push_back({Tok::Gt, ">", start}); ++i; }
            else if (c == '=') { out.push_back({Tok::Eq, "=", start}); ++i; }
            else if (c == ',') { out.push_back({Tok::Comma, ",", start}); ++i; }
            else if (c == '(') { out.push_back({Tok::LParen, "(", start}); ++i; }
            else if (c == ')') { out.push_back({Tok::RParen, ")", start}); ++i; }
            else if (c == '.') { out.push_back({Tok::Dot, ".", start}); ++i; }
            else if (c == '*') { out.push_back({Tok::Star, "*", start}); ++i; }
            else throw ParseError(start, fmt::format("unexpected character '{}'", static_cast<char>(c)));
        }
    }
    out.push_back({Tok::End, "", s.size()});
    return out;
}

bool keyword_eq(const Token &t, std::string_view kw)
{
    if (t.kind != Tok::Ident || t.text.size() != kw.size())
        return false;
    for (std::size_t i = 0; i < kw.size(); ++i)
        if (std::toupper(static_cast<unsigned char>(t.text[i])) != kw[i])
            return false;
    return true;
}

const std::set<std::string> kReserved{"SELECT", "FROM", "JOIN", "ON", "WHERE", "AND", "OR", "BETWEEN", "IN", "NOT", "AS"};

bool is_reserved(const Token &t)
{
    if (t.kind != Tok::Ident)
        return false;
    std::string up;
    for (char c : t.text)
        up += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return kReserved.count(up) > 0;
}

struct ColumnRef
{
    std::string qualifier;
    std::string name;
    std::size_t pos;
};

class Parser
{
    std::vector<Token> toks_;
    std::size_t i_ = 0;
    const Catalog &catalog_;
    std::vector<const TableSpec *> tables_;
    std::map<std::string, const TableSpec *> aliases_;   // lower-case alias or name -> table

public:
    Parser(std::string_view text, const Catalog &catalog) : toks_(lex(text)), catalog_(catalog) { }

    QuerySpec parse()
    {
        QuerySpec q;
        expect_kw("SELECT");
        bool star = false;
        std::vector<ColumnRef> select_refs;
        if (peek().kind == Tok::Star) {
            next();
            star = true;
        } else {
            select_refs.push_back(column());
            while (peek().kind == Tok::Comma) {
                next();
                select_refs.push_back(column());
            }
        }
        expect_kw("FROM");
        add_table();
        std::vector<std::tuple<ColumnRef, ColumnRef>> join_refs;
        while (keyword_eq(peek(), "JOIN")) {
            next();
            add_table();
            expect_kw("ON");
            auto l = column();
            expect(Tok::Eq, "'='");
            auto r = column();
            join_refs.emplace_back(l, r);
        }
        if (keyword_eq(peek(), "WHERE")) {
            next();
            q.where = or_expr();
        }
        if (peek().kind != Tok::End)
            throw ParseError(peek().pos, "unexpected '" + peek().text + "'");

        for (auto *t : tables_)
            q.tables.push_back(*t);
        if (star) {
            for (auto *t : tables_)
                for (auto &a : t->attributes)
                    q.select.push_back(a);
        } else {
            for (auto &r : select_refs) {
                auto a = resolve(r);
                if (std::find(q.select.begin(), q.select.end(), a) == q.select.end())
                    q.select.push_back(a);
            }
        }
        for (auto &[l, r] : join_refs) {
            auto la = resolve(l), ra = resolve(r);
            if (la.table == ra.table)
                throw PlannerError("join edge " + la.qualified() + " = " + ra.qualified() + " is a self-loop");
            if ((la.dtype == DType::Number) != (ra.dtype == DType::Number))
                throw TypeError("join keys " + la.qualified() + " and " + ra.qualified() + " have incompatible types");
            q.joins.push_back({la, ra});
        }
        if (!q.join_graph().connected())
            throw PlannerError("join graph is not connected");
        return q;
    }

private:
    const Token &peek() const { return toks_[i_]; }
    const Token &next() { return toks_[i_++]; }

    void expect_kw(std::string_view kw)
    {
        if (!keyword_eq(peek(), kw))
            throw ParseError(peek().pos, fmt::format("expected {}", kw));
        next();
    }

    const Token &expect(Tok kind, std::string_view what)
    {
        if (peek().kind != kind)
            throw ParseError(peek().pos, fmt::format("expected {}", what));
        return next();
    }

    std::string identifier()
    {
        if (peek().kind != Tok::Ident || is_reserved(peek()))
            throw ParseError(peek().pos, "expected identifier");
        return next().text;
    }

    void add_table()
    {
        auto pos = peek().pos;
        auto name = identifier();
        auto *t = catalog_.find_table(name);
        if (!t)
            throw UnknownSymbol(fmt::format("table {} (at {})", name, pos));
        if (std::find(tables_.begin(), tables_.end(), t) != tables_.end())
            throw PlannerError("table " + t->name + " appears twice");
        tables_.push_back(t);
        aliases_[to_lower(t->name)] = t;
        if (keyword_eq(peek(), "AS"))
            next();
        if (peek().kind == Tok::Ident && !is_reserved(peek()))
            aliases_[to_lower(next().text)] = t;
    }

    ColumnRef column()
    {
        auto pos = peek().pos;
        auto first = identifier();
        if (peek().kind == Tok::Dot) {
            next();
            return {first, identifier(), pos};
        }
        return {"", first, pos};
    }

    AttributeSpec resolve(const ColumnRef &r) const
    {
        if (!r.qualifier.empty()) {
            auto it = aliases_.find(to_lower(r.qualifier));
            if (it == aliases_.end())
                throw UnknownSymbol(fmt::format("table or alias {} (at {})", r.qualifier, r.pos));
            if (auto a = it->second->find(r.name))
                return *a;
            throw UnknownSymbol(fmt::format("attribute {}.{} (at {})", r.qualifier, r.name, r.pos));
        }
        const AttributeSpec *found = nullptr;
        for (auto *t : tables_) {
            if (auto a = t->find(r.name)) {
                if (found)
                    throw UnknownSymbol(fmt::format("ambiguous attribute {} (at {})", r.name, r.pos));
                found = a;
            }
        }
        if (!found)
            throw UnknownSymbol(fmt::format("attribute {} (at {})", r.name, r.pos));
        return *found;
    }

    ExpressionNode or_expr()
    {
        std::vector<ExpressionNode> kids{and_expr()};
        while (keyword_eq(peek(), "OR")) {
            next();
            kids.push_back(and_expr());
        }
        return ExpressionNode::combine(ExpressionNode::Kind::Or, std::move(kids));
    }

    ExpressionNode and_expr()
    {
        std::vector<ExpressionNode> kids{primary()};
        while (keyword_eq(peek(), "AND")) {
            next();
            kids.push_back(primary());
        }
        return ExpressionNode::combine(ExpressionNode::Kind::And, std::move(kids));
    }

    ExpressionNode primary()
    {
        if (keyword_eq(peek(), "NOT"))
            throw ParseError(peek().pos, "NOT is not supported");
        if (peek().kind == Tok::LParen) {
            next();
            auto e = or_expr();
            expect(Tok::RParen, "')'");
            return e;
        }
        return ExpressionNode::leaf(comparison());
    }

    Value literal(const AttributeSpec &a)
    {
        const Token &t = peek();
        if (t.kind == Tok::Number) {
            next();
            if (a.dtype != DType::Number)
                throw TypeError(fmt::format("{} is {}, got a number (at {})", a.qualified(), to_string(a.dtype), t.pos));
            return std::stod(t.text);
        }
        if (t.kind == Tok::String) {
            next();
            if (a.dtype == DType::Number)
                throw TypeError(fmt::format("{} is a number, got a string (at {})", a.qualified(), t.pos));
            return t.text;
        }
        throw ParseError(t.pos, "expected literal");
    }

    Predicate comparison()
    {
        auto ref = column();
        Predicate p;
        p.attribute = resolve(ref);
        const Token &op = peek();
        auto categorical_guard = [&](std::size_t pos) {
            if (p.attribute.dtype == DType::Categorical)
                throw TypeError(fmt::format("categorical {} admits only = and IN (at {})", p.attribute.qualified(), pos));
        };
        switch (op.kind) {
        case Tok::Eq:
            next();
            p.op = CompareOp::Eq;
            p.literals.push_back(literal(p.attribute));
            break;
        case Tok::Le:
        case Tok::Lt:
            categorical_guard(op.pos);
            p.op = CompareOp::Le;
            p.hi_open = op.kind == Tok::Lt;
            next();
            p.literals.push_back(literal(p.attribute));
            break;
        case Tok::Ge:
        case Tok::Gt:
            categorical_guard(op.pos);
            p.op = CompareOp::Ge;
            p.lo_open = op.kind == Tok::Gt;
            next();
            p.literals.push_back(literal(p.attribute));
            break;
        default:
            if (keyword_eq(op, "BETWEEN")) {
                categorical_guard(op.pos);
                next();
                p.op = CompareOp::Range;
                auto lo_pos = peek().pos;
                p.literals.push_back(literal(p.attribute));
                expect_kw("AND");
                p.literals.push_back(literal(p.attribute));
                if (compare_values(p.literals[0], p.literals[1], false) > 0)
                    throw ParseError(lo_pos, "BETWEEN bounds out of order");
            } else if (keyword_eq(op, "IN")) {
                next();
                p.op = CompareOp::In;
                expect(Tok::LParen, "'('");
                p.literals.push_back(literal(p.attribute));
                while (peek().kind == Tok::Comma) {
                    next();
                    p.literals.push_back(literal(p.attribute));
                }
                expect(Tok::RParen, "')'");
            } else if (keyword_eq(op, "NOT")) {
                throw ParseError(op.pos, "NOT is not supported");
            } else {
                throw ParseError(op.pos, "expected comparison operator");
            }
        }
        return p;
    }
};

}

QuerySpec parse_query(std::string_view text, const Catalog &catalog)
{
    return Parser(text, catalog).parse();
}

}
