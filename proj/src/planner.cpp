#include "quest/planner.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <set>

#include "quest/error.hpp"

namespace quest {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kTieEps = 1e-12;

bool nearly_equal(double a, double b)
{
    if (a == b)
        return true;
    if (std::isinf(a) || std::isinf(b))
        return false;
    return std::abs(a - b) <= kTieEps * std::max(std::abs(a), std::abs(b));
}

struct Unit
{
    std::vector<std::size_t> order;
    double cost = 0;
    double prob = 0;
    std::size_t min_leaf = 0;
};

// Sort key shared by flat ordering and the tree DP.
std::vector<std::size_t> sort_units(const std::vector<Unit> &units, bool conjunctive)
{
    std::vector<double> pri(units.size());
    for (std::size_t i = 0; i < units.size(); ++i)
        pri[i] = priority({units[i].prob, units[i].cost}, conjunctive);
    std::vector<std::size_t> idx(units.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (!nearly_equal(pri[a], pri[b]))
            return pri[a] > pri[b];
        if (!nearly_equal(units[a].cost, units[b].cost))
            return units[a].cost < units[b].cost;
        return units[a].min_leaf < units[b].min_leaf;
    });
    return idx;
}

Unit compose(const std::vector<Unit> &kids, const std::vector<std::size_t> &idx, bool conjunctive)
{
    Unit u;
    double reach = 1;
    u.min_leaf = std::numeric_limits<std::size_t>::max();
    for (auto i : idx) {
        u.cost += reach * kids[i].cost;
        reach *= conjunctive ? kids[i].prob : 1 - kids[i].prob;
        u.order.insert(u.order.end(), kids[i].order.begin(), kids[i].order.end());
        u.min_leaf = std::min(u.min_leaf, kids[i].min_leaf);
    }
    u.prob = conjunctive ? reach : 1 - reach;
    return u;
}

Unit solve(const PlanNode &n, std::span<const LeafEstimate> est)
{
    if (n.is_leaf())
        return {{n.leaf}, est[n.leaf].cost, est[n.leaf].p, n.leaf};
    std::vector<Unit> kids;
    kids.reserve(n.children.size());
    for (auto &c : n.children)
        kids.push_back(solve(c, est));
    bool conj = n.kind == PlanNode::Kind::And;
    return compose(kids, sort_units(kids, conj), conj);
}

}

double expected_cost_conjunction(std::span<const double> costs, std::span<const double> probs, double tail)
{
    if (costs.size() != probs.size())
        throw ValidationError("costs and probabilities differ in length");
    double total = 0, reach = 1;
    for (std::size_t i = 0; i < costs.size(); ++i) {
        total += costs[i] * reach;
        reach *= probs[i];
    }
    return total + tail * reach;
}

double expected_cost_disjunction(std::span<const double> costs, std::span<const double> probs, double tail)
{
    if (costs.size() != probs.size())
        throw ValidationError("costs and probabilities differ in length");
    double total = 0, reach = 1;
    for (std::size_t i = 0; i < costs.size(); ++i) {
        total += costs[i] * reach;
        reach *= 1 - probs[i];
    }
    return total + tail * (1 - reach);
}

double priority(const LeafEstimate &u, bool conjunctive)
{
    if (u.cost <= 0)
        return kInf;
    return (conjunctive ? 1 - u.p : u.p) / u.cost;
}

std::vector<std::size_t> order_conjunction(std::span<const LeafEstimate> units)
{
    std::vector<Unit> us;
    for (std::size_t i = 0; i < units.size(); ++i)
        us.push_back({{i}, units[i].cost, units[i].p, i});
    return sort_units(us, true);
}

std::vector<std::size_t> order_disjunction(std::span<const LeafEstimate> units)
{
    std::vector<Unit> us;
    for (std::size_t i = 0; i < units.size(); ++i)
        us.push_back({{i}, units[i].cost, units[i].p, i});
    return sort_units(us, false);
}

/*----------------------------------------------------------------------------------------------------------------------
 * Plan trees
 *--------------------------------------------------------------------------------------------------------------------*/

namespace {

PlanNode from_expr(const ExpressionNode &e, std::size_t &next)
{
    if (e.is_leaf())
        return PlanNode::make_leaf(next++);
    std::vector<PlanNode> kids;
    for (auto &c : e.children)
        kids.push_back(from_expr(c, next));
    return PlanNode::combine(e.kind == ExpressionNode::Kind::And ? PlanNode::Kind::And : PlanNode::Kind::Or,
                             std::move(kids));
}

void collect_ids(const PlanNode &n, std::vector<std::size_t> &out)
{
    if (n.is_leaf()) {
        out.push_back(n.leaf);
        return;
    }
    for (auto &c : n.children)
        collect_ids(c, out);
}

}

PlanNode PlanNode::from(const ExpressionNode &expr)
{
    std::size_t next = 0;
    return from_expr(expr, next);
}

PlanNode PlanNode::make_leaf(std::size_t id)
{
    PlanNode n;
    n.leaf = id;
    return n;
}

PlanNode PlanNode::combine(Kind kind, std::vector<PlanNode> children)
{
    if (kind == Kind::Leaf)
        throw ValidationError("combine needs AND or OR");
    if (children.empty())
        throw ValidationError("combine needs at least one child");
    if (children.size() == 1)
        return std::move(children.front());
    PlanNode n;
    n.kind = kind;
    for (auto &c : children) {
        if (c.kind == kind)
            for (auto &g : c.children)
                n.children.push_back(std::move(g));
        else
            n.children.push_back(std::move(c));
    }
    return n;
}

std::vector<std::size_t> PlanNode::leaf_ids() const
{
    std::vector<std::size_t> out;
    collect_ids(*this, out);
    return out;
}

std::size_t PlanNode::min_leaf() const
{
    auto ids = leaf_ids();
    return *std::min_element(ids.begin(), ids.end());
}

std::size_t PlanNode::depth() const
{
    std::size_t d = 0;
    for (auto &c : children)
        d = std::max(d, c.depth());
    return is_leaf() ? 0 : d + 1;
}

std::string to_string(const PlanNode &n)
{
    if (n.is_leaf())
        return "#" + std::to_string(n.leaf);
    std::string out = n.kind == PlanNode::Kind::And ? "AND(" : "OR(";
    for (std::size_t i = 0; i < n.children.size(); ++i)
        out += (i ? ", " : "") + to_string(n.children[i]);
    return out + ")";
}

OrderedPlan order_expression(const PlanNode &tree, std::span<const LeafEstimate> est)
{
    OrderedPlan plan;
    if (tree.is_leaf()) {
        const auto &e = est[tree.leaf];
        plan.order = {tree.leaf};
        plan.expected_cost = e.cost;
        plan.prob = e.p;
        plan.steps.push_back({{tree.leaf}, e.cost, e.p, priority(e, true)});
        return plan;
    }
    bool conj = tree.kind == PlanNode::Kind::And;
    std::vector<Unit> kids;
    for (auto &c : tree.children)
        kids.push_back(solve(c, est));
    auto idx = sort_units(kids, conj);
    auto root = compose(kids, idx, conj);
    plan.order = root.order;
    plan.expected_cost = root.cost;
    plan.prob = root.prob;
    for (auto i : idx)
        plan.steps.push_back({kids[i].order, kids[i].cost, kids[i].prob, priority({kids[i].prob, kids[i].cost}, conj)});
    return plan;
}

namespace {

// Cost/probability of `n` when children run in order of first appearance in `pos`.
std::pair<double, double> cost_by_position(const PlanNode &n, std::span<const LeafEstimate> est,
                                           const std::vector<std::size_t> &pos, std::size_t &first)
{
    if (n.is_leaf()) {
        first = pos[n.leaf];
        return {est[n.leaf].cost, est[n.leaf].p};
    }
    struct Kid
    {
        double cost, prob;
        std::size_t first;
    };
    std::vector<Kid> kids;
    for (auto &c : n.children) {
        std::size_t f = 0;
        auto [cost, prob] = cost_by_position(c, est, pos, f);
        kids.push_back({cost, prob, f});
    }
    std::sort(kids.begin(), kids.end(), [](auto &a, auto &b) { return a.first < b.first; });
    first = kids.front().first;
    bool conj = n.kind == PlanNode::Kind::And;
    double total = 0, reach = 1;
    for (auto &k : kids) {
        total += reach * k.cost;
        reach *= conj ? k.prob : 1 - k.prob;
    }
    return {total, conj ? reach : 1 - reach};
}

std::vector<std::size_t> positions(const PlanNode &tree, std::span<const std::size_t> order)
{
    auto ids = tree.leaf_ids();
    std::size_t hi = ids.empty() ? 0 : *std::max_element(ids.begin(), ids.end());
    std::vector<std::size_t> pos(hi + 1, std::numeric_limits<std::size_t>::max());
    for (std::size_t i = 0; i < order.size(); ++i)
        if (order[i] <= hi)
            pos[order[i]] = i;
    for (auto id : ids)
        if (pos[id] == std::numeric_limits<std::size_t>::max())
            throw ValidationError("order does not cover leaf #" + std::to_string(id));
    return pos;
}

bool contiguous(const PlanNode &n, const std::vector<std::size_t> &pos, std::size_t &lo, std::size_t &hi,
                std::size_t &count)
{
    if (n.is_leaf()) {
        lo = hi = pos[n.leaf];
        count = 1;
        return true;
    }
    lo = std::numeric_limits<std::size_t>::max();
    hi = 0;
    count = 0;
    for (auto &c : n.children) {
        std::size_t l, h, k;
        if (!contiguous(c, pos, l, h, k))
            return false;
        lo = std::min(lo, l);
        hi = std::max(hi, h);
        count += k;
    }
    return hi - lo + 1 == count;
}

}

double block_order_cost(const PlanNode &tree, std::span<const LeafEstimate> est, std::span<const std::size_t> order)
{
    auto pos = positions(tree, order);
    std::size_t first = 0;
    return cost_by_position(tree, est, pos, first).first;
}

double tree_probability(const PlanNode &tree, std::span<const LeafEstimate> est)
{
    if (tree.is_leaf())
        return est[tree.leaf].p;
    bool conj = tree.kind == PlanNode::Kind::And;
    double reach = 1;
    for (auto &c : tree.children) {
        double p = tree_probability(c, est);
        reach *= conj ? p : 1 - p;
    }
    return conj ? reach : 1 - reach;
}

bool is_block_contiguous(const PlanNode &tree, std::span<const std::size_t> order)
{
    auto pos = positions(tree, order);
    std::size_t lo, hi, count;
    return contiguous(tree, pos, lo, hi, count);
}

std::vector<std::vector<std::size_t>> block_orders(const PlanNode &tree)
{
    if (tree.is_leaf())
        return {{tree.leaf}};
    std::vector<std::vector<std::vector<std::size_t>>> kid_orders;
    for (auto &c : tree.children)
        kid_orders.push_back(block_orders(c));

    std::vector<std::vector<std::size_t>> out;
    std::vector<std::size_t> perm(tree.children.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::vector<std::size_t> seq;
    std::function<void(std::size_t)> product = [&](std::size_t i) {
        if (i == perm.size()) {
            out.push_back(seq);
            return;
        }
        for (auto &o : kid_orders[perm[i]]) {
            auto mark = seq.size();
            seq.insert(seq.end(), o.begin(), o.end());
            product(i + 1);
            seq.resize(mark);
        }
    };
    do {
        product(0);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return out;
}

std::optional<bool> evaluate_partial(const PlanNode &tree, std::span<const std::optional<bool>> values)
{
    if (tree.is_leaf())
        return values[tree.leaf];
    bool conj = tree.kind == PlanNode::Kind::And;
    bool all_known = true;
    for (auto &c : tree.children) {
        auto v = evaluate_partial(c, values);
        if (!v)
            all_known = false;
        else if (*v != conj)
            return !conj;   // AND saw False, OR saw True
    }
    if (all_known)
        return conj;
    return std::nullopt;
}

namespace {

void collect_pending(const PlanNode &n, std::span<const std::optional<bool>> values, std::vector<std::size_t> &out)
{
    if (evaluate_partial(n, values))
        return;
    if (n.is_leaf()) {
        out.push_back(n.leaf);
        return;
    }
    for (auto &c : n.children)
        collect_pending(c, values, out);
}

}

std::vector<std::size_t> pending_leaves(const PlanNode &tree, std::span<const std::optional<bool>> values)
{
    std::vector<std::size_t> out;
    collect_pending(tree, values, out);
    return out;
}

std::optional<PlanNode> residual(const PlanNode &tree, std::span<const std::optional<bool>> values)
{
    if (evaluate_partial(tree, values))
        return std::nullopt;
    if (tree.is_leaf())
        return tree;
    std::vector<PlanNode> kids;
    for (auto &c : tree.children)
        if (auto r = residual(c, values))
            kids.push_back(std::move(*r));
    return PlanNode::combine(tree.kind, std::move(kids));
}

double simulate_expected_cost(const PlanNode &tree, std::span<const LeafEstimate> est,
                              std::span<const std::size_t> order)
{
    auto ids = tree.leaf_ids();
    if (ids.size() > 20)
        throw ValidationError("simulation limited to 20 leaves");
    std::size_t hi = *std::max_element(ids.begin(), ids.end());
    double total = 0;
    std::vector<std::optional<bool>> values(hi + 1);
    for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << ids.size()); ++mask) {
        double prob = 1;
        std::vector<bool> truth(hi + 1, false);
        for (std::size_t i = 0; i < ids.size(); ++i) {
            bool t = (mask >> i) & 1;
            truth[ids[i]] = t;
            prob *= t ? est[ids[i]].p : 1 - est[ids[i]].p;
        }
        std::fill(values.begin(), values.end(), std::nullopt);
        double cost = 0;
        for (auto id : order) {
            if (evaluate_partial(tree, values))
                break;
            auto pend = pending_leaves(tree, values);
            if (std::find(pend.begin(), pend.end(), id) == pend.end())
                continue;
            cost += est[id].cost;
            values[id] = truth[id];
        }
        total += prob * cost;
    }
    return total;
}

/*----------------------------------------------------------------------------------------------------------------------
 * Strategies
 *--------------------------------------------------------------------------------------------------------------------*/

namespace {

class QuestStrategy final : public OrderingStrategy
{
public:
    std::string name() const override { return "quest"; }
    bool replans() const override { return true; }
    std::vector<std::size_t> order(const PlanNode &tree, const PlanningInput &in) const override
    {
        return order_expression(tree, in.est).order;
    }
};

class ExhaustStrategy final : public OrderingStrategy
{
public:
    std::string name() const override { return "exhaust"; }
    bool replans() const override { return true; }
    std::vector<std::size_t> order(const PlanNode &tree, const PlanningInput &in) const override
    {
        auto ids = tree.leaf_ids();
        if (ids.size() > kExhaustMaxLeaves)
            throw ValidationError("exhaustive ordering is limited to " + std::to_string(kExhaustMaxLeaves) +
                                  " filters, query has " + std::to_string(ids.size()));
        std::vector<std::size_t> best;
        double best_cost = kInf;
        for (auto &o : block_orders(tree)) {
            double c = block_order_cost(tree, in.est, o);
            bool better = best.empty() || (!nearly_equal(c, best_cost) && c < best_cost);
            if (!better && nearly_equal(c, best_cost)) {
                // Lexicographic on (cost, id) of the leaf sequence.
                for (std::size_t i = 0; i < o.size(); ++i) {
                    auto a = std::make_pair(in.est[o[i]].cost, o[i]);
                    auto b = std::make_pair(in.est[best[i]].cost, best[i]);
                    if (a != b) {
                        better = a < b;
                        break;
                    }
                }
            }
            if (better) {
                best = o;
                best_cost = c;
            }
        }
        return best;
    }
};

// DP over substituted costs; zero-cost leaves stay free so they still run first.
class SubstitutedCostStrategy final : public OrderingStrategy
{
    std::string name_;
    bool use_average_;

public:
    SubstitutedCostStrategy(std::string name, bool use_average) : name_(std::move(name)), use_average_(use_average) { }
    std::string name() const override { return name_; }
    std::vector<std::size_t> order(const PlanNode &tree, const PlanningInput &in) const override
    {
        std::vector<LeafEstimate> est(in.est.begin(), in.est.end());
        for (std::size_t i = 0; i < est.size(); ++i) {
            if (est[i].cost <= 0)
                continue;
            est[i].cost = use_average_ ? std::max(in.avg_cost[i], 1e-6) : 1.0;
        }
        return order_expression(tree, est).order;
    }
};

class RandomStrategy final : public OrderingStrategy
{
    static std::vector<std::size_t> shuffle(const PlanNode &n, const PlanningInput &in, std::mt19937_64 &rng)
    {
        if (n.is_leaf())
            return {n.leaf};
        std::vector<std::vector<std::size_t>> kids;
        for (auto &c : n.children)
            kids.push_back(shuffle(c, in, rng));
        for (std::size_t i = kids.size(); i > 1; --i) {
            std::uniform_int_distribution<std::size_t> pick(0, i - 1);
            std::swap(kids[i - 1], kids[pick(rng)]);
        }
        std::stable_partition(kids.begin(), kids.end(), [&](auto &k) {
            return std::all_of(k.begin(), k.end(), [&](std::size_t id) { return in.est[id].cost <= 0; });
        });
        std::vector<std::size_t> out;
        for (auto &k : kids)
            out.insert(out.end(), k.begin(), k.end());
        return out;
    }

public:
    std::string name() const override { return "random"; }
    std::vector<std::size_t> order(const PlanNode &tree, const PlanningInput &in) const override
    {
        std::mt19937_64 rng(in.seed);
        return shuffle(tree, in, rng);
    }
};

}

std::unique_ptr<OrderingStrategy> make_strategy(std::string_view name)
{
    if (name == "quest")
        return std::make_unique<QuestStrategy>();
    if (name == "exhaust")
        return std::make_unique<ExhaustStrategy>();
    if (name == "selectivity")
        return std::make_unique<SubstitutedCostStrategy>("selectivity", false);
    if (name == "avg-cost")
        return std::make_unique<SubstitutedCostStrategy>("avg-cost", true);
    if (name == "random")
        return std::make_unique<RandomStrategy>();
    throw ValidationError("unknown strategy '" + std::string(name) + "'");
}

/*----------------------------------------------------------------------------------------------------------------------
 * Joins
 *--------------------------------------------------------------------------------------------------------------------*/

JoinPlanChoice plan_single_join(const JoinSide &left, const JoinSide &right)
{
    JoinPlanChoice c;
    c.left_score = left.score();
    c.right_score = right.score();
    bool left_drives;
    if (!nearly_equal(c.left_score, c.right_score))
        left_drives = c.left_score < c.right_score;
    else
        left_drives = left.docs <= right.docs;
    c.kind = left_drives ? JoinPlanKind::FilterLeftThenIn : JoinPlanKind::FilterRightThenIn;
    c.driving = left_drives ? left.table : right.table;
    c.target = left_drives ? right.table : left.table;
    return c;
}

double plan_cost_plan1(const JoinSide &left, const JoinSide &right) { return left.score() + right.score(); }

JoinSide SideModel::summarize() const
{
    JoinSide s;
    s.table = table;
    s.docs = docs;
    s.join_cost = static_cast<double>(docs) * join_cost;
    if (filters) {
        auto plan = order_expression(*filters, leaves);
        s.filter_cost = static_cast<double>(docs) * plan.expected_cost;
        s.prob = plan.prob;
    }
    return s;
}

double SideModel::transformed_cost(double p_in) const
{
    std::vector<LeafEstimate> est = leaves;
    std::size_t in_id = est.size();
    est.push_back({p_in, join_cost});
    PlanNode tree = filters ? PlanNode::combine(PlanNode::Kind::And, {*filters, PlanNode::make_leaf(in_id)})
                            : PlanNode::make_leaf(in_id);
    return static_cast<double>(docs) * order_expression(tree, est).expected_cost;
}

JoinPlanCosts join_plan_costs(const SideModel &left, const SideModel &right, double p_in)
{
    JoinPlanCosts c;
    auto l = left.summarize(), r = right.summarize();
    c.plan1 = plan_cost_plan1(l, r);
    c.plan2 = l.score() + right.transformed_cost(p_in);
    c.plan3 = r.score() + left.transformed_cost(p_in);
    c.choice = plan_single_join(l, r);
    return c;
}

Predicate transform_join_to_in(const std::vector<Value> &values, const AttributeSpec &target, bool fold)
{
    Predicate p;
    p.attribute = target;
    p.op = CompareOp::In;
    p.synthetic = true;
    std::set<std::string> seen;
    for (auto &v : values) {
        if (is_null(v))
            continue;
        Value c = coerce(v, target.dtype);
        if (is_null(c))
            continue;
        if (seen.insert(canonical_key(c, fold)).second)
            p.literals.push_back(c);
    }
    if (p.literals.empty())
        throw EmptyJoinInput("no join values for " + target.qualified());
    return p;
}

std::vector<std::vector<std::string>> left_deep_sequences(const JoinGraph &g)
{
    std::vector<std::vector<std::string>> out;
    std::vector<std::string> seq;
    std::function<void()> extend = [&] {
        if (seq.size() == g.nodes.size()) {
            out.push_back(seq);
            return;
        }
        for (auto &t : g.nodes) {
            if (std::find(seq.begin(), seq.end(), t) != seq.end())
                continue;
            bool adjacent = seq.empty();
            for (auto &e : g.edges) {
                if (adjacent)
                    break;
                bool l_in = std::find(seq.begin(), seq.end(), e.left.table) != seq.end();
                bool r_in = std::find(seq.begin(), seq.end(), e.right.table) != seq.end();
                adjacent = (e.left.table == t && r_in) || (e.right.table == t && l_in);
            }
            if (!adjacent)
                continue;
            seq.push_back(t);
            extend();
            seq.pop_back();
        }
    };
    extend();
    return out;
}

}
