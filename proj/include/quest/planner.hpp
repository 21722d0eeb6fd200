#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "quest/query.hpp"

namespace quest {

/// Estimated behaviour of one filter (or sub-expression) on one document.
struct LeafEstimate
{
    double p = 0.5;      ///< probability of evaluating True
    double cost = 0;     ///< tokens to evaluate
};

/// Expected tokens of evaluating filters in the given order under AND semantics, plus
/// `tail` (SELECT extraction) paid only when every filter passes.
double expected_cost_conjunction(std::span<const double> costs, std::span<const double> probs, double tail = 0);

/// Same under OR semantics; the tail is paid when any filter passes.
double expected_cost_disjunction(std::span<const double> costs, std::span<const double> probs, double tail = 0);

/// (1 - p) / c in a conjunction, p / c in a disjunction; +inf for zero cost.
double priority(const LeafEstimate &u, bool conjunctive);

/// Descending priority; equal priorities go to the cheaper unit, then to the earlier one.
std::vector<std::size_t> order_conjunction(std::span<const LeafEstimate> units);
std::vector<std::size_t> order_disjunction(std::span<const LeafEstimate> units);

/// Expression tree over leaf ids. Ids index the caller's estimate arrays and survive
/// simplification, so residual trees can be planned with the same arrays.
struct PlanNode
{
    enum class Kind { Leaf, And, Or };

    Kind kind = Kind::Leaf;
    std::vector<PlanNode> children;
    std::size_t leaf = 0;

    /// Numbers leaves left to right, matching `leaves(expr)`.
    static PlanNode from(const ExpressionNode &expr);
    static PlanNode make_leaf(std::size_t id);
    /// n-ary node with same-kind children spliced in; a single child collapses to itself.
    static PlanNode combine(Kind kind, std::vector<PlanNode> children);

    bool is_leaf() const { return kind == Kind::Leaf; }
    std::vector<std::size_t> leaf_ids() const;
    std::size_t min_leaf() const;
    std::size_t depth() const;
};

std::string to_string(const PlanNode &n);

/// A child of the root as the optimizer saw it.
struct PrioritizedFilter
{
    std::vector<std::size_t> leaves;   ///< the unit's leaves in execution order
    double cost = 0;                   ///< optimal expected cost of the unit
    double prob = 0;
    double priority = 0;
};

struct OrderedPlan
{
    std::vector<std::size_t> order;          ///< flattened leaf order; sub-expressions contiguous
    double expected_cost = 0;
    double prob = 0;                         ///< probability the expression is True
    std::vector<PrioritizedFilter> steps;    ///< root-level units in order
};

/// Postorder dynamic program: each node orders its children by the priority of their
/// optimal (cost, probability); AND composes p as a product, OR as 1 - prod(1 - p).
OrderedPlan order_expression(const PlanNode &tree, std::span<const LeafEstimate> est);

/// Expected cost of a block-contiguous order computed from the tree structure.
double block_order_cost(const PlanNode &tree, std::span<const LeafEstimate> est, std::span<const std::size_t> order);

/// Probability that the tree evaluates True, assuming independent leaves.
double tree_probability(const PlanNode &tree, std::span<const LeafEstimate> est);

bool is_block_contiguous(const PlanNode &tree, std::span<const std::size_t> order);

/// Every block-contiguous order (product of child permutations at every node).
std::vector<std::vector<std::size_t>> block_orders(const PlanNode &tree);

/// Three-valued evaluation: nullopt while undetermined.
std::optional<bool> evaluate_partial(const PlanNode &tree, std::span<const std::optional<bool>> values);

/// Unknown leaves whose every ancestor is still undetermined, left to right.
std::vector<std::size_t> pending_leaves(const PlanNode &tree, std::span<const std::optional<bool>> values);

/// The tree with known leaves substituted and simplified; nullopt once determined.
std::optional<PlanNode> residual(const PlanNode &tree, std::span<const std::optional<bool>> values);

/// Walks `order`, evaluating a leaf only while it is pending, and stops when the root is
/// determined. Expected cost by enumerating every truth assignment; needs <= 20 leaves.
double simulate_expected_cost(const PlanNode &tree, std::span<const LeafEstimate> est,
                              std::span<const std::size_t> order);

/// How a strategy sees one document.
struct PlanningInput
{
    std::span<const LeafEstimate> est;   ///< per leaf: estimated selectivity, this document's cost
    std::span<const double> avg_cost;    ///< per leaf: sample-average cost
    std::uint64_t seed = 0;              ///< per-document seed for randomized strategies
};

/// Ordering interface shared by the optimizer and the baselines, so everything except the
/// order itself is common code.
class OrderingStrategy
{
public:
    virtual ~OrderingStrategy() = default;
    virtual std::string name() const = 0;
    /// Whether the executor re-plans the residual expression after an extraction makes a
    /// pending filter free.
    virtual bool replans() const { return false; }
    virtual std::vector<std::size_t> order(const PlanNode &tree, const PlanningInput &in) const = 0;
};

inline constexpr std::size_t kExhaustMaxLeaves = 8;

/// "quest", "exhaust", "selectivity", "avg-cost" or "random". Throws ValidationError otherwise.
std::unique_ptr<OrderingStrategy> make_strategy(std::string_view name);

/// Aggregate view of one join side over its refined document set.
struct JoinSide
{
    std::string table;
    std::size_t docs = 0;
    double filter_cost = 0;   ///< sum over documents of the optimal expected filter cost
    double prob = 1;          ///< probability a document passes the side's filters
    double join_cost = 0;     ///< sum over documents of the join attribute's cost

    /// First two terms of the transformed-plan cost: filters, then the join attribute of survivors.
    double score() const { return filter_cost + prob * join_cost; }
};

enum class JoinPlanKind {
    FilterLeftThenIn,    ///< drive from the left table, IN filter on the right
    FilterRightThenIn,   ///< drive from the right table, IN filter on the left
};

struct JoinPlanChoice
{
    JoinPlanKind kind;
    std::string driving;
    std::string target;
    double left_score = 0;
    double right_score = 0;
};

/// Lower score drives; ties go to the side with fewer documents, then the left side.
JoinPlanChoice plan_single_join(const JoinSide &left, const JoinSide &right);

/// Push filters to both sides, extract both join attributes, join.
double plan_cost_plan1(const JoinSide &left, const JoinSide &right);

/// Uniform per-document model of a join side, for plan costing outside execution.
struct SideModel
{
    std::string table;
    std::size_t docs = 0;
    std::optional<PlanNode> filters;
    std::vector<LeafEstimate> leaves;   ///< indexed by the filter tree's leaf ids
    double join_cost = 0;               ///< per document

    JoinSide summarize() const;
    /// Expected cost of the side once the join becomes an IN filter with selectivity `p_in`.
    double transformed_cost(double p_in) const;
};

struct JoinPlanCosts
{
    double plan1 = 0;
    double plan2 = 0;   ///< left drives
    double plan3 = 0;   ///< right drives
    JoinPlanChoice choice;
};

JoinPlanCosts join_plan_costs(const SideModel &left, const SideModel &right, double p_in);

/// Synthetic IN filter over `target` from the driving side's values; NULLs dropped,
/// duplicates (by canonical key) collapsed in first-seen order. Throws EmptyJoinInput.
Predicate transform_join_to_in(const std::vector<Value> &values, const AttributeSpec &target, bool fold);

/// Table sequences in which every prefix is connected in the join graph.
std::vector<std::vector<std::string>> left_deep_sequences(const JoinGraph &g);

}
