#include <doctest.h>

#include <random>

#include "quest/error.hpp"
#include "quest/query.hpp"

using namespace quest;
using Kind = ExpressionNode::Kind;

namespace {

Catalog players_catalog()
{
    ApproxTokenizer tok;
    auto corpus = std::make_shared<Corpus>();
    corpus->add({"p1", "Player one."}, tok);
    Catalog cat(corpus);
    std::vector<AttributeSpec> attrs{{"Players", "name", "player name", DType::String},
                                     {"Players", "age", "age", DType::Number},
                                     {"Players", "all_stars", "all-star selections", DType::Number},
                                     {"Players", "team", "team", DType::Categorical}};
    for (int i = 1; i <= 5; ++i)
        attrs.push_back({"Players", "t" + std::to_string(i), "test attribute", DType::Number});
    cat.register_table({"Players", attrs, {}});
    cat.register_table({"T", {{"T", "x", "x", DType::Number}}, {}});
    return cat;
}

std::vector<std::string> leaf_names(const ExpressionNode &n)
{
    std::vector<std::string> out;
    for (auto *p : leaves(n))
        out.push_back(p->attribute.name);
    return out;
}

ExpressionNode random_tree(std::mt19937_64 &rng, int &next, int budget)
{
    if (budget == 1) {
        Predicate p{{"Players", "t" + std::to_string(next % 5 + 1), "test attribute", DType::Number}, CompareOp::Ge, {Value{double(next)}}};
        ++next;
        return ExpressionNode::leaf(p);
    }
    int left = std::uniform_int_distribution<int>(1, budget - 1)(rng);
    auto kind = rng() % 2 ? Kind::And : Kind::Or;
    auto a = random_tree(rng, next, left);
    auto b = random_tree(rng, next, budget - left);
    return ExpressionNode::combine(kind, {a, b});
}

}

TEST_CASE("conjunction of two comparisons")
{
    auto cat = players_catalog();
    auto q = parse_query("SELECT name FROM Players WHERE age > 35 AND all_stars > 12", cat);
    REQUIRE(q.where);
    CHECK(q.where->kind == Kind::And);
    REQUIRE(q.where->children.size() == 2);
    auto &age = *q.where->children[0].predicate;
    CHECK(age.attribute.name == "age");
    CHECK(age.op == CompareOp::Ge);
    CHECK(age.lo_open);
    CHECK(std::get<double>(age.literals[0]) == 35);
    CHECK(age.evaluate(Value{36.0}));
    CHECK_FALSE(age.evaluate(Value{35.0}));
    CHECK_FALSE(age.evaluate(Value{}));
    CHECK(q.select.size() == 1);
    CHECK(q.select[0].qualified() == "Players.name");
}

TEST_CASE("nested disjunctions")
{
    auto cat = players_catalog();
    auto q = parse_query("SELECT name FROM Players WHERE (t1 > 1 OR t2 > 2) AND (t3 > 3 OR t4 > 4 AND t5 > 5)", cat);
    REQUIRE(q.where);
    auto &root = *q.where;
    CHECK(root.kind == Kind::And);
    REQUIRE(root.children.size() == 2);
    CHECK(root.children[0].kind == Kind::Or);
    CHECK(leaf_names(root.children[0]) == std::vector<std::string>{"t1", "t2"});
    auto &right = root.children[1];
    CHECK(right.kind == Kind::Or);
    REQUIRE(right.children.size() == 2);
    CHECK(right.children[0].is_leaf());
    CHECK(right.children[1].kind == Kind::And);
    CHECK(leaf_names(root) == std::vector<std::string>{"t1", "t2", "t3", "t4", "t5"});
}

TEST_CASE("query without WHERE")
{
    auto cat = players_catalog();
    auto q = parse_query("SELECT x FROM T", cat);
    CHECK_FALSE(q.where);
    CHECK(q.select[0].qualified() == "T.x");
}

TEST_CASE("leaves")
{
    Predicate p{{"T", "x", "test attribute", DType::Number}, CompareOp::Le, {Value{3.0}}};
    auto one = ExpressionNode::leaf(p);
    REQUIRE(leaves(one).size() == 1);
    CHECK(leaves(one)[0]->attribute.name == "x");

    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        int next = 0;
        auto t = random_tree(rng, next, 7);
        auto ls = leaves(t);
        REQUIRE(ls.size() == 7);
        for (std::size_t i = 0; i < ls.size(); ++i)
            CHECK(std::get<double>(ls[i]->literals[0]) == double(i));
    }
}

TEST_CASE("AND binds tighter than OR")
{
    auto cat = players_catalog();
    auto q = parse_query("SELECT name FROM Players WHERE t1 = 1 OR t2 = 2 AND t3 = 3", cat);
    auto &root = *q.where;
    CHECK(root.kind == Kind::Or);
    CHECK(root.children[0].is_leaf());
    CHECK(root.children[1].kind == Kind::And);
    CHECK(leaf_names(root.children[1]) == std::vector<std::string>{"t2", "t3"});
}

TEST_CASE("same-precedence runs flatten")
{
    auto cat = players_catalog();
    auto q = parse_query("SELECT name FROM Players WHERE t1 = 1 AND (t2 = 2 AND t3 = 3) AND t4 = 4", cat);
    CHECK(q.where->kind == Kind::And);
    CHECK(q.where->children.size() == 4);
}

TEST_CASE("print and parse round trip")
{
    auto cat = players_catalog();
    for (auto text : {"SELECT name FROM Players WHERE age > 35 AND all_stars > 12",
                      "SELECT name, age FROM Players WHERE (t1 > 1 OR t2 <= 2) AND (t3 >= 3 OR t4 < 4 AND t5 = 5)",
                      "SELECT name FROM Players WHERE age BETWEEN 20 AND 30 OR team IN ('Lakers', 'Celtics')",
                      "SELECT name FROM Players WHERE name = 'O''Neal'"}) {
        auto q = parse_query(text, cat);
        auto again = parse_query(to_string(q), cat);
        REQUIRE(again.where);
        CHECK(structurally_equal(*q.where, *again.where));
        CHECK(to_string(again) == to_string(q));
    }
}

TEST_CASE("flatten is idempotent")
{
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        int next = 0;
        auto t = random_tree(rng, next, 2 + trial % 8);
        auto once = flatten(t);
        CHECK(structurally_equal(flatten(once), once));
        CHECK(leaves(once).size() == leaves(t).size());
    }
}

TEST_CASE("parse errors")
{
    auto cat = players_catalog();
    CHECK_THROWS_AS(parse_query("SELECT name FROM Players WHERE NOT age > 3", cat), ParseError);
    CHECK_THROWS_AS(parse_query("SELECT name FROM Nowhere", cat), UnknownSymbol);
    CHECK_THROWS_AS(parse_query("SELECT height FROM Players", cat), UnknownSymbol);
    CHECK_THROWS_AS(parse_query("SELECT name FROM Players WHERE age = 'old'", cat), TypeError);
    CHECK_THROWS_AS(parse_query("SELECT name FROM Players WHERE team > 3", cat), TypeError);
    try {
        parse_query("SELECT name FROM Players WHERE age >", cat);
        FAIL("expected ParseError");
    } catch (const ParseError &e) {
        CHECK(e.position == 36);
    }
}

TEST_CASE("join parsing and WHERE split")
{
    ApproxTokenizer tok;
    auto corpus = std::make_shared<Corpus>();
    corpus->add({"p1", "Player."}, tok);
    corpus->add({"t1", "Team."}, tok);
    Catalog cat(corpus);
    cat.register_table({"P", {{"P", "name", "test attribute", DType::String}, {"P", "age", "test attribute", DType::Number}, {"P", "team", "test attribute", DType::Categorical}}, {{}, "p*"}});
    cat.register_table({"T", {{"T", "name", "test attribute", DType::Categorical}, {"T", "wins", "test attribute", DType::Number}}, {{}, "t*"}});
    auto q = parse_query("SELECT P.name, T.name FROM P JOIN T ON P.team = T.name WHERE P.age > 30 AND T.wins > 5", cat);
    CHECK(q.is_join());
    CHECK(q.join_graph().connected());
    auto split = split_where_by_table(q);
    REQUIRE(split.at("P"));
    REQUIRE(split.at("T"));
    CHECK(leaf_names(*split.at("P")) == std::vector<std::string>{"age"});
    CHECK(leaf_names(*split.at("T")) == std::vector<std::string>{"wins"});
    auto bad = parse_query("SELECT P.name FROM P JOIN T ON P.team = T.name WHERE P.age > 30 OR T.wins > 5", cat);
    CHECK_THROWS_AS(split_where_by_table(bad), PlannerError);
}
