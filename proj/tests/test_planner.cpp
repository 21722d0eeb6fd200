#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <set>

#include "quest/error.hpp"
#include "quest/planner.hpp"

using namespace quest;
using Kind = PlanNode::Kind;

namespace {

PlanNode L(std::size_t i) { return PlanNode::make_leaf(i); }
PlanNode And(std::vector<PlanNode> c) { return PlanNode::combine(Kind::And, std::move(c)); }
PlanNode Or(std::vector<PlanNode> c) { return PlanNode::combine(Kind::Or, std::move(c)); }

double conj_cost(const std::vector<LeafEstimate> &u, const std::vector<std::size_t> &order)
{
    std::vector<double> c, p;
    for (auto i : order) {
        c.push_back(u[i].cost);
        p.push_back(u[i].p);
    }
    return expected_cost_conjunction(c, p);
}

double disj_cost(const std::vector<LeafEstimate> &u, const std::vector<std::size_t> &order)
{
    std::vector<double> c, p;
    for (auto i : order) {
        c.push_back(u[i].cost);
        p.push_back(u[i].p);
    }
    return expected_cost_disjunction(c, p);
}

std::vector<LeafEstimate> random_units(std::mt19937_64 &rng, std::size_t n)
{
    std::uniform_real_distribution<double> p(0.01, 0.99), c(1, 1000);
    std::vector<LeafEstimate> u(n);
    for (auto &x : u)
        x = {p(rng), c(rng)};
    return u;
}

PlanNode random_tree(std::mt19937_64 &rng, std::size_t &next, std::size_t n)
{
    if (n == 1)
        return L(next++);
    std::size_t parts = std::uniform_int_distribution<std::size_t>(2, std::min<std::size_t>(n, 3))(rng);
    std::vector<std::size_t> sizes(parts, 1);
    for (std::size_t r = n - parts; r > 0; --r)
        sizes[rng() % parts]++;
    std::vector<PlanNode> kids;
    for (auto s : sizes)
        kids.push_back(random_tree(rng, next, s));
    return PlanNode::combine(rng() % 2 ? Kind::And : Kind::Or, std::move(kids));
}

SideModel side(std::string name, std::size_t docs, double p, double c, double join_cost)
{
    SideModel s;
    s.table = std::move(name);
    s.docs = docs;
    s.filters = L(0);
    s.leaves = {{p, c}};
    s.join_cost = join_cost;
    return s;
}

}

TEST_CASE("expected cost of a conjunction")
{
    std::vector<double> c{10, 100}, p{0.5, 0.9};
    CHECK(expected_cost_conjunction(c, p) == doctest::Approx(60));
    CHECK(expected_cost_conjunction(std::vector<double>{30}, std::vector<double>{0.4}) == doctest::Approx(30));
    std::vector<double> rc{100, 10}, rp{0.9, 0.5};
    CHECK(expected_cost_conjunction(rc, rp) == doctest::Approx(109));
    CHECK(expected_cost_conjunction(c, p, 20) == doctest::Approx(60 + 20 * 0.45));
}

TEST_CASE("expected cost of a disjunction")
{
    std::vector<double> c{10, 10}, p{0.9, 0.1};
    CHECK(expected_cost_disjunction(c, p) == doctest::Approx(11));
    std::vector<double> zero{0, 0};
    CHECK(expected_cost_disjunction(c, zero) == doctest::Approx(20));
    CHECK(expected_cost_disjunction(std::vector<double>{10}, std::vector<double>{0.3}, 100) == doctest::Approx(40));
}

TEST_CASE("conjunction ordering")
{
    std::vector<LeafEstimate> u{{0.2, 30}, {0.1, 30}, {0.5, 10}};
    CHECK(priority(u[0], true) == doctest::Approx(0.8 / 30));
    CHECK(priority(u[1], true) == doctest::Approx(0.03));
    CHECK(priority(u[2], true) == doctest::Approx(0.05));
    auto o = order_conjunction(u);
    CHECK(o == std::vector<std::size_t>{2, 1, 0});
    std::vector<std::size_t> perm{0, 1, 2};
    double best = 1e300;
    do
        best = std::min(best, conj_cost(u, perm));
    while (std::next_permutation(perm.begin(), perm.end()));
    CHECK(conj_cost(u, o) == doctest::Approx(best));

    std::vector<LeafEstimate> same(4, {0.3, 20});
    CHECK(order_conjunction(same) == std::vector<std::size_t>{0, 1, 2, 3});
    CHECK(priority({0.3, 0}, true) == std::numeric_limits<double>::infinity());
}

TEST_CASE("per-document costs flip the order of the same query")
{
    // filter 0: age > 35, filter 1: all_stars > 12
    std::vector<LeafEstimate> d1{{0.3, 20}, {0.25, 200}};
    std::vector<LeafEstimate> d2{{0.3, 200}, {0.25, 20}};
    CHECK(order_conjunction(d1) == std::vector<std::size_t>{0, 1});
    CHECK(order_conjunction(d2) == std::vector<std::size_t>{1, 0});
}

TEST_CASE("disjunction ordering")
{
    std::vector<LeafEstimate> u{{0.1, 10}, {0.9, 10}};
    auto o = order_disjunction(u);
    CHECK(o == std::vector<std::size_t>{1, 0});
    CHECK(disj_cost(u, o) == doctest::Approx(11));
    std::vector<LeafEstimate> eq{{0.4, 30}, {0.4, 10}, {0.4, 20}};
    CHECK(order_disjunction(eq) == std::vector<std::size_t>{1, 2, 0});
}

TEST_CASE("sorted orders are optimal among all permutations")
{
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 200; ++trial) {
        std::size_t n = 1 + trial % 6;
        auto u = random_units(rng, n);
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        double best_c = 1e300, best_d = 1e300;
        do {
            best_c = std::min(best_c, conj_cost(u, perm));
            best_d = std::min(best_d, disj_cost(u, perm));
        } while (std::next_permutation(perm.begin(), perm.end()));
        CHECK(conj_cost(u, order_conjunction(u)) <= best_c * (1 + 1e-9));
        CHECK(disj_cost(u, order_disjunction(u)) <= best_d * (1 + 1e-9));
    }
}

TEST_CASE("adjacent swaps never help and scaling keeps the order")
{
    std::mt19937_64 rng(77);
    for (int trial = 0; trial < 200; ++trial) {
        auto u = random_units(rng, 2 + trial % 6);
        auto o = order_conjunction(u);
        double base = conj_cost(u, o);
        for (std::size_t i = 0; i + 1 < o.size(); ++i) {
            auto s = o;
            std::swap(s[i], s[i + 1]);
            CHECK(conj_cost(u, s) >= base * (1 - 1e-9));
        }
        auto scaled = u;
        for (auto &x : scaled)
            x.cost *= 3.7;
        CHECK(order_conjunction(scaled) == o);
        CHECK(order_disjunction(scaled) == order_disjunction(u));
    }
}

TEST_CASE("expression tree ordering keeps sub-expressions contiguous")
{
    // (t1 OR t2) AND (t3 OR t4 AND t5), leaves 0..4
    auto tree = And({Or({L(0), L(1)}), Or({L(2), And({L(3), L(4)})})});
    std::vector<LeafEstimate> est{{0.1, 5}, {0.1, 10}, {0.5, 10}, {0.5, 10}, {0.2, 10}};
    auto plan = order_expression(tree, est);
    CHECK(plan.order == std::vector<std::size_t>{0, 1, 2, 4, 3});
    CHECK(is_block_contiguous(tree, plan.order));
    CHECK(plan.steps.size() == 2);
    CHECK(plan.expected_cost == doctest::Approx(simulate_expected_cost(tree, est, plan.order)));
    CHECK(plan.prob == doctest::Approx(tree_probability(tree, est)));

    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<LeafEstimate> r = random_units(rng, 5);
        auto p = order_expression(tree, r);
        CHECK(is_block_contiguous(tree, p.order));
        std::vector<std::size_t> oo = p.order;
        std::sort(oo.begin(), oo.end());
        CHECK(oo == std::vector<std::size_t>{0, 1, 2, 3, 4});
    }

    auto single = order_expression(L(0), std::vector<LeafEstimate>{{0.4, 30}});
    CHECK(single.order == std::vector<std::size_t>{0});
    CHECK(single.expected_cost == doctest::Approx(30));
}

TEST_CASE("tree optimum matches block enumeration and short-circuit simulation")
{
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 100; ++trial) {
        std::size_t n = 2 + trial % 5, next = 0;
        auto tree = random_tree(rng, next, n);
        auto est = random_units(rng, n);
        auto plan = order_expression(tree, est);
        double best_block = 1e300;
        for (auto &o : block_orders(tree)) {
            CHECK(is_block_contiguous(tree, o));
            double c = block_order_cost(tree, est, o);
            CHECK(c == doctest::Approx(simulate_expected_cost(tree, est, o)).epsilon(1e-9));
            best_block = std::min(best_block, c);
        }
        CHECK(plan.expected_cost == doctest::Approx(best_block).epsilon(1e-9));
        CHECK(plan.expected_cost == doctest::Approx(simulate_expected_cost(tree, est, plan.order)).epsilon(1e-9));
        if (tree.depth() <= 2) {
            std::vector<std::size_t> perm(n);
            std::iota(perm.begin(), perm.end(), 0);
            do
                CHECK(plan.expected_cost <= simulate_expected_cost(tree, est, perm) * (1 + 1e-9));
            while (std::next_permutation(perm.begin(), perm.end()));
        }
    }
}

TEST_CASE("residual trees and partial evaluation")
{
    auto tree = And({Or({L(0), L(1)}), L(2)});
    std::vector<std::optional<bool>> v(3);
    CHECK_FALSE(evaluate_partial(tree, v));
    v[0] = true;
    CHECK(pending_leaves(tree, v) == std::vector<std::size_t>{2});
    auto r = residual(tree, v);
    REQUIRE(r);
    CHECK(r->is_leaf());
    CHECK(r->leaf == 2);
    v[2] = false;
    CHECK(evaluate_partial(tree, v) == false);
    CHECK_FALSE(residual(tree, v));
}

TEST_CASE("worked join example")
{
    auto t1 = side("T1", 30, 0.1, 50, 30);
    auto t2 = side("T2", 51, 0.3, 50, 30);
    auto s1 = t1.summarize(), s2 = t2.summarize();
    CHECK(s1.filter_cost == 1500);
    CHECK(s1.score() == 1590);
    CHECK(s2.filter_cost == 2550);
    CHECK(s2.score() == 3009);
    auto choice = plan_single_join(s1, s2);
    CHECK(choice.kind == JoinPlanKind::FilterLeftThenIn);
    CHECK(choice.driving == "T1");
    CHECK(plan_cost_plan1(s1, s2) == 4599);
    CHECK(t2.transformed_cost(0.1) == doctest::Approx(1785).epsilon(1e-12));
    auto costs = join_plan_costs(t1, t2, 0.1);
    CHECK(costs.plan1 == doctest::Approx(4599).epsilon(1e-12));
    CHECK(costs.plan2 == doctest::Approx(3375).epsilon(1e-12));
    CHECK(costs.choice.driving == "T1");
}

TEST_CASE("a heavily filtered right side drives")
{
    auto t1 = side("T1", 30, 0.6, 50, 30);
    auto t2 = side("T2", 51, 0.02, 5, 30);
    auto costs = join_plan_costs(t1, t2, 0.1);
    CHECK(costs.choice.kind == JoinPlanKind::FilterRightThenIn);
    CHECK(costs.plan3 < costs.plan2);
    CHECK(costs.plan1 >= std::min(costs.plan2, costs.plan3));
}

TEST_CASE("symmetric sides: the smaller table drives")
{
    JoinSide a{"A", 40, 100, 0.5, 60}, b{"B", 20, 100, 0.5, 60};
    CHECK(plan_single_join(a, b).driving == "B");
    CHECK(plan_single_join(b, a).driving == "B");
}

TEST_CASE("pushing filters to both sides never beats the better transformed plan")
{
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> p(0.01, 0.99), c(1, 1000);
    for (int i = 0; i < 300; ++i) {
        auto a = side("A", 1 + rng() % 100, p(rng), c(rng), c(rng));
        auto b = side("B", 1 + rng() % 100, p(rng), c(rng), c(rng));
        auto costs = join_plan_costs(a, b, p(rng));
        CHECK(costs.plan1 >= std::min(costs.plan2, costs.plan3) * (1 - 1e-9));
    }
}

TEST_CASE("join to IN transformation")
{
    AttributeSpec target{"Teams", "t_name", "", DType::Categorical};
    auto in = transform_join_to_in({Value{std::string("Lakers")}, Value{std::string("Celtics")},
                                    Value{std::string("Warriors")}},
                                   target, true);
    CHECK(in.op == CompareOp::In);
    CHECK(in.synthetic);
    std::set<std::string> got;
    for (auto &v : in.literals)
        got.insert(std::get<std::string>(v));
    CHECK(got == std::set<std::string>{"Warriors", "Celtics", "Lakers"});
    CHECK(in.evaluate(Value{std::string("lakers")}));
    CHECK_FALSE(in.evaluate(Value{std::string("Bulls")}));

    auto dup = transform_join_to_in({Value{std::string("A")}, Value{std::string("A")}, Value{std::string("B")}, Value{}},
                                    target, true);
    CHECK(dup.literals.size() == 2);
    CHECK_THROWS_AS(transform_join_to_in({}, target, true), EmptyJoinInput);
    CHECK_THROWS_AS(transform_join_to_in({Value{}}, target, true), EmptyJoinInput);
}

TEST_CASE("left-deep sequences keep every prefix connected")
{
    AttributeSpec pt{"Player", "team", "", DType::Categorical}, tn{"Team", "name", "", DType::Categorical},
        tc{"Team", "city", "", DType::Categorical}, cn{"City", "name", "", DType::Categorical},
        ot{"Owner", "team", "", DType::Categorical};
    JoinGraph g{{"Player", "Team", "City", "Owner"}, {{pt, tn}, {tc, cn}, {ot, tn}}};
    auto seqs = left_deep_sequences(g);
    CHECK(seqs.size() == 12);
    for (auto &s : seqs) {
        REQUIRE(s.size() == 4);
        // Team must appear by position 1 since it is the only hub
        auto pos = std::find(s.begin(), s.end(), "Team") - s.begin();
        CHECK(pos <= 1);
    }
    JoinGraph two{{"A", "B"}, {{{"A", "k", "", DType::Number}, {"B", "k", "", DType::Number}}}};
    CHECK(left_deep_sequences(two).size() == 2);
}

TEST_CASE("per-document orders beat any single global order")
{
    std::mt19937_64 rng(13);
    for (int trial = 0; trial < 20; ++trial) {
        std::size_t n = 2 + trial % 4, docs = 10 + trial % 40;
        std::vector<double> p(n);
        for (auto &x : p)
            x = std::uniform_real_distribution<double>(0.05, 0.95)(rng);
        std::vector<std::vector<LeafEstimate>> per_doc;
        for (std::size_t d = 0; d < docs; ++d) {
            std::vector<LeafEstimate> u(n);
            for (std::size_t i = 0; i < n; ++i)
                u[i] = {p[i], std::uniform_real_distribution<double>(1, 500)(rng)};
            per_doc.push_back(u);
        }
        double adaptive = 0;
        for (auto &u : per_doc)
            adaptive += conj_cost(u, order_conjunction(u));
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        double best_global = 1e300;
        do {
            double s = 0;
            for (auto &u : per_doc)
                s += conj_cost(u, perm);
            best_global = std::min(best_global, s);
        } while (std::next_permutation(perm.begin(), perm.end()));
        CHECK(adaptive <= best_global * (1 + 1e-9));
    }
}

TEST_CASE("strategies")
{
    CHECK_THROWS_AS(make_strategy("fastest"), ValidationError);
    auto tree = And({L(0), L(1), L(2)});
    std::vector<LeafEstimate> est{{0.9, 10}, {0.1, 100}, {0.5, 50}};
    std::vector<double> avg{10, 100, 50};
    PlanningInput in{est, avg, 1};
    auto quest = make_strategy("quest");
    auto exhaust = make_strategy("exhaust");
    CHECK(quest->order(tree, in) == exhaust->order(tree, in));
    CHECK(make_strategy("selectivity")->order(tree, in) == std::vector<std::size_t>{1, 2, 0});
    CHECK(make_strategy("avg-cost")->order(tree, in).front() == 0);
    auto r = make_strategy("random")->order(tree, in);
    CHECK(r == make_strategy("random")->order(tree, in));
    std::size_t next = 0;
    std::mt19937_64 rng(1);
    auto big = random_tree(rng, next, kExhaustMaxLeaves + 1);
    std::vector<LeafEstimate> many(kExhaustMaxLeaves + 1, {0.5, 10});
    std::vector<double> avg_many(kExhaustMaxLeaves + 1, 10);
    CHECK_THROWS_AS(exhaust->order(big, {many, avg_many, 1}), ValidationError);
}
