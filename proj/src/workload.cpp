#include "quest/workload.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include <fmt/format.h>

#include "quest/error.hpp"
#include "quest/query.hpp"

namespace quest {

namespace fs = std::filesystem;

/*----------------------------------------------------------------------------------------------------------------------
 * Presets
 *--------------------------------------------------------------------------------------------------------------------*/

namespace {

AttributePlan key_attr(std::string name, DType dtype) { return {.name = std::move(name), .dtype = dtype}; }

AttributePlan fk_attr(std::string name, std::string table)
{
    return {.name = std::move(name), .dtype = DType::Categorical, .references = std::move(table)};
}

AttributePlan num_attr(std::string name, int lo, int hi, int threshold, double p, std::size_t min_m, std::size_t max_m)
{
    return {.name = std::move(name),
            .dtype = DType::Number,
            .lo = lo,
            .hi = hi,
            .threshold = threshold,
            .selectivity = p,
            .min_mentions = min_m,
            .max_mentions = max_m};
}

TablePlan player_table(std::size_t docs, bool with_team)
{
    TablePlan t{.name = "Player",
                .prefix = "player",
                .docs = docs,
                .domain = {"basketball", "player", "career", "league", "roster", "season"},
                .key = "name"};
    t.attributes.push_back(key_attr("name", DType::String));
    if (with_team)
        t.attributes.push_back(fk_attr("team", "Team"));
    t.attributes.push_back(num_attr("age", 19, 42, 35, 0.3, 0, 3));
    t.attributes.push_back(num_attr("all_stars", 0, 20, 12, 0.25, 0, 3));
    t.attributes.push_back(num_attr("points", 0, 40, 20, 0.5, 1, 5));
    t.attributes.push_back(num_attr("rebounds", 0, 15, 7, 0.6, 0, 3));
    t.attributes.push_back(num_attr("assists", 0, 12, 5, 0.4, 0, 4));
    t.attributes.push_back(num_attr("height", 180, 225, 200, 0.7, 0, 2));
    return t;
}

}

WorkloadSpec workload_preset(std::string_view name, std::size_t docs, std::uint64_t seed)
{
    WorkloadSpec s;
    s.seed = seed;
    if (name == "single") {
        s.tables.push_back(player_table(docs, false));
        return s;
    }
    if (name != "nba")
        throw ValidationError(fmt::format("unknown workload preset '{}' (expected nba or single)", name));
    s.tables.push_back(player_table(docs, true));

    TablePlan team{.name = "Team",
                   .prefix = "team",
                   .docs = 30,
                   .domain = {"franchise", "club", "arena", "history", "conference", "titles"},
                   .key = "name"};
    team.attributes = {key_attr("name", DType::Categorical), fk_attr("city", "City"),
                       num_attr("championships", 0, 17, 6, 0.3, 0, 3), num_attr("founded", 1946, 2004, 1970, 0.5, 0, 2),
                       num_attr("arena_capacity", 12000, 22000, 18000, 0.4, 0, 2)};
    s.tables.push_back(std::move(team));

    TablePlan city{.name = "City",
                   .prefix = "city",
                   .docs = 30,
                   .domain = {"municipal", "urban", "district", "metro", "county", "downtown"},
                   .key = "name"};
    city.attributes = {key_attr("name", DType::Categorical),
                       num_attr("population", 100000, 9000000, 2000000, 0.4, 0, 2),
                       num_attr("elevation", 0, 2000, 500, 0.5, 0, 2)};
    s.tables.push_back(std::move(city));

    TablePlan owner{.name = "Owner",
                    .prefix = "owner",
                    .docs = 30,
                    .domain = {"investor", "businessman", "ownership", "fortune", "holdings", "executive"},
                    .key = "name"};
    owner.attributes = {key_attr("name", DType::String), fk_attr("team", "Team"),
                        num_attr("net_worth", 1, 100, 10, 0.5, 0, 2)};
    s.tables.push_back(std::move(owner));
    return s;
}

void validate(const WorkloadSpec &spec)
{
    if (spec.tables.empty())
        throw ValidationError("workload has no tables");
    if (spec.dim < 8)
        throw ValidationError("embedding dimension must be at least 8");
    if (spec.keywords == 0)
        throw ValidationError("attributes need at least one keyword");
    if (spec.token_spread >= spec.avg_tokens)
        throw ValidationError("token spread must be below the average length");
    std::set<std::string> names;
    for (auto &t : spec.tables) {
        if (t.docs == 0)
            throw ValidationError(fmt::format("table {} must have at least one document", t.name));
        if (!names.insert(t.name).second)
            throw ValidationError("duplicate table " + t.name);
        if (t.attributes.empty())
            throw ValidationError(fmt::format("table {} has no attributes", t.name));
        for (auto &a : t.attributes) {
            if (a.dtype == DType::Number) {
                if (!(a.selectivity > 0 && a.selectivity < 1))
                    throw ValidationError(
                        fmt::format("{}.{}: planted selectivity {} is outside (0, 1)", t.name, a.name, a.selectivity));
                if (!(a.lo <= a.threshold && a.threshold < a.hi))
                    throw ValidationError(fmt::format("{}.{}: threshold must lie in [lo, hi)", t.name, a.name));
            }
            if (a.min_mentions > a.max_mentions)
                throw ValidationError(fmt::format("{}.{}: min_mentions above max_mentions", t.name, a.name));
            if (a.null_rate < 0 || a.null_rate >= 1)
                throw ValidationError(fmt::format("{}.{}: null rate must be in [0, 1)", t.name, a.name));
        }
    }
    for (auto &t : spec.tables)
        for (auto &a : t.attributes)
            if (!a.references.empty() && !names.count(a.references))
                throw ValidationError(fmt::format("{}.{} references unknown table {}", t.name, a.name, a.references));
}

/*----------------------------------------------------------------------------------------------------------------------
 * Generation
 *--------------------------------------------------------------------------------------------------------------------*/

namespace {

const char *kConsonants = "bdfgklmnprstvz";
const char *kVowels = "aeiou";

class Words
{
    std::mt19937_64 &rng_;
    const HashedBowEmbedder &hasher_;
    std::set<std::size_t> &reserved_;
    std::set<std::string> used_;

public:
    Words(std::mt19937_64 &rng, const HashedBowEmbedder &hasher, std::set<std::size_t> &reserved)
        : rng_(rng), hasher_(hasher), reserved_(reserved)
    { }

    std::string raw(std::size_t syllables)
    {
        std::string w;
        for (std::size_t i = 0; i < syllables; ++i) {
            w += kConsonants[rng_() % 14];
            w += kVowels[rng_() % 5];
        }
        return w;
    }

    /// A fresh word whose hash bucket is not reserved. With `reserve`, its bucket becomes reserved.
    std::string fresh(bool reserve, std::size_t syllables = 2)
    {
        for (;;) {
            auto w = raw(syllables + rng_() % 2);
            auto b = hasher_.bucket(w).first;
            if (reserved_.count(b) || used_.count(w))
                continue;
            used_.insert(w);
            if (reserve)
                reserved_.insert(b);
            return w;
        }
    }

    void reserve_text(std::string_view text)
    {
        for (auto &w : words(text))
            reserved_.insert(hasher_.bucket(w).first);
    }
};

std::string capitalize(std::string s)
{
    if (!s.empty())
        s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
    return s;
}

std::string join(const std::vector<std::string> &ws, const char *sep = " ")
{
    std::string out;
    for (std::size_t i = 0; i < ws.size(); ++i)
        out += (i ? sep : "") + ws[i];
    return out;
}

struct Sentence
{
    std::string text;
    int attr = -1;                        ///< attribute index, -1 for topic and filler
    std::optional<std::size_t> value_at;  ///< offset of the value inside `text`
    std::size_t value_len = 0;
};

}

GeneratedWorkload generate_workload(const WorkloadSpec &spec, const Tokenizer &tok)
{
    validate(spec);
    GeneratedWorkload w;
    w.spec = spec;
    w.truth = std::make_shared<TruthTable>();
    std::mt19937_64 rng(spec.seed);
    HashedBowEmbedder hasher(spec.dim);

    struct TableWords
    {
        std::set<std::size_t> reserved;
        std::vector<std::vector<std::string>> keywords;
        std::vector<std::string> filler;
        std::vector<std::string> keys;   ///< unique names for the key attribute
    };
    std::map<std::string, TableWords> tw;

    // Vocabulary: keywords and names avoid every reserved bucket of their table, so the
    // geometry within a table is controlled; tables never share documents.
    for (auto &t : spec.tables) {
        auto &v = tw[t.name];
        Words gen(rng, hasher, v.reserved);
        for (auto &d : t.domain)
            gen.reserve_text(d);
        for (auto &a : t.attributes)
            gen.reserve_text(a.name);
        for (auto &a : t.attributes) {
            std::vector<std::string> kws;
            for (std::size_t i = 0; i < spec.keywords; ++i)
                kws.push_back(gen.fresh(true));
            w.keywords[t.name + "." + a.name] = kws;
            v.keywords.push_back(std::move(kws));
        }
        for (std::size_t i = 0; i < t.docs; ++i)
            v.keys.push_back(capitalize(gen.fresh(false, 3)));
        for (std::size_t i = 0; i < 400; ++i)
            v.filler.push_back(gen.fresh(false));
    }

    const std::vector<std::string> off_topic{"weather", "forecast", "rainfall", "storm", "cloud", "humidity"};
    auto topics = [](const std::vector<std::string> &domain) {
        std::vector<std::string> out;
        for (std::size_t i = 0; i < 5; ++i) {
            std::vector<std::string> ws;
            for (std::size_t j = 0; j < domain.size(); ++j)
                ws.push_back(domain[(i + j) % domain.size()]);
            ws[0] = capitalize(ws[0]);
            out.push_back(join(ws) + ".");
        }
        return out;
    };

    std::vector<Document> docs;
    for (auto &t : spec.tables) {
        auto &v = tw.at(t.name);
        TableSpec ts;
        ts.name = t.name;
        ts.corpus_filter.glob = t.prefix + "-*";
        for (std::size_t i = 0; i < t.attributes.size(); ++i) {
            auto &a = t.attributes[i];
            auto kws = v.keywords[i];
            ts.attributes.push_back({t.name, a.name, join(t.domain) + " " + kws[0] + " " + kws[1] + " " + kws[2], a.dtype});
        }
        w.tables.push_back(ts);

        auto filler_sentence = [&](std::size_t n) {
            std::vector<std::string> ws;
            for (std::size_t i = 0; i < n; ++i)
                ws.push_back(v.filler[rng() % v.filler.size()]);
            ws[0] = capitalize(ws[0]);
            return Sentence{join(ws) + "."};
        };

        // Paired lengths around the average.
        std::vector<std::size_t> lengths(t.docs + spec.distractors * (&t == &spec.tables.front()), spec.avg_tokens);
        for (std::size_t i = 0; i + 1 < lengths.size(); i += 2) {
            auto d = static_cast<std::size_t>(rng() % (spec.token_spread + 1));
            lengths[i] += d;
            lengths[i + 1] -= d;
        }

        auto topic = topics(t.domain);
        auto distractor_topic = topics(off_topic);
        for (std::size_t di = 0; di < lengths.size(); ++di) {
            bool distractor = di >= t.docs;
            std::string id = distractor ? fmt::format("{}-x{:03}", t.prefix, di - t.docs)
                                        : fmt::format("{}-{:03}", t.prefix, di);

            std::vector<Sentence> items;
            if (!distractor) {
                for (std::size_t ai = 0; ai < t.attributes.size(); ++ai) {
                    auto &a = t.attributes[ai];
                    const auto &kws = v.keywords[ai];
                    std::string value_text;
                    Value value;
                    std::uniform_real_distribution<double> unit(0, 1);
                    bool null = a.null_rate > 0 && unit(rng) < a.null_rate;
                    if (a.name == t.key && a.references.empty()) {
                        value_text = v.keys[di];
                        value = value_text;
                    } else if (!a.references.empty()) {
                        const auto &keys = tw.at(a.references).keys;
                        value_text = keys[rng() % keys.size()];
                        value = value_text;
                    } else {
                        bool above = unit(rng) < a.selectivity;
                        int lo = above ? a.threshold + 1 : a.lo;
                        int hi = above ? a.hi : a.threshold;
                        int x = std::uniform_int_distribution<int>(lo, hi)(rng);
                        value_text = std::to_string(x);
                        value = static_cast<double>(x);
                    }
                    if (!null) {
                        Sentence s;
                        s.text = capitalize(a.name) + " " + join(kws) + " ";
                        s.value_at = s.text.size();
                        s.value_len = value_text.size();
                        s.text += value_text + ".";
                        s.attr = static_cast<int>(ai);
                        items.push_back(std::move(s));
                        w.truth->set(id, t.name + "." + a.name, {value, {}});
                    }
                    std::size_t mentions;
                    if (a.name == spec.asymmetry_attribute)
                        mentions = di % 2 ? spec.asymmetry_mentions : 0;
                    else
                        mentions = a.min_mentions + rng() % (a.max_mentions - a.min_mentions + 1);
                    for (std::size_t m = 0; m < mentions; ++m) {
                        auto ws = kws;
                        std::shuffle(ws.begin(), ws.end(), rng);
                        ws.push_back(a.name);
                        ws[0] = capitalize(ws[0]);
                        items.push_back({join(ws) + ".", static_cast<int>(ai)});
                    }
                }
                std::shuffle(items.begin(), items.end(), rng);
            }

            // Five paragraphs, each led by a topic sentence; same-attribute neighbours are
            // separated by filler so segmentation keeps them apart.
            const auto &lead = distractor ? distractor_topic : topic;
            std::vector<std::vector<Sentence>> paras(5);
            for (std::size_t p = 0; p < 5; ++p)
                paras[p].push_back({lead[p]});
            for (std::size_t i = 0; i < items.size(); ++i) {
                auto &para = paras[i * 5 / std::max<std::size_t>(items.size(), 1)];
                if (para.back().attr >= 0 && para.back().attr == items[i].attr)
                    para.push_back(filler_sentence(3));
                para.push_back(items[i]);
            }

            std::string text;
            std::size_t target = lengths[di] * 4;
            std::vector<std::pair<int, std::size_t>> value_offsets;   // attr, offset
            std::vector<std::size_t> value_lens;
            for (std::size_t p = 0; p < 5; ++p) {
                if (p)
                    text += "\n\n";
                for (std::size_t si = 0; si < paras[p].size(); ++si) {
                    if (si)
                        text += ' ';
                    auto &s = paras[p][si];
                    if (s.value_at) {
                        value_offsets.push_back({s.attr, text.size() + *s.value_at});
                        value_lens.push_back(s.value_len);
                    }
                    text += s.text;
                }
            }
            // Pad with filler to exactly `target` characters (= the target token count).
            for (;;) {
                auto s = filler_sentence(3 + rng() % 4).text;
                if (text.size() + 1 + s.size() + 12 > target)
                    break;
                text += ' ' + s;
            }
            if (text.size() + 4 > target)
                throw ValidationError(fmt::format("{}: content needs more than {} tokens; raise avg_tokens", id,
                                                  lengths[di]));
            std::size_t rest = target - text.size() - 1;   // sentence length incl. the period
            std::string last;
            while (last.size() + 1 < rest) {
                auto wd = v.filler[rng() % v.filler.size()];
                std::size_t room = rest - 1 - last.size() - (last.empty() ? 0 : 1);
                if (wd.size() > room || room - wd.size() < 3)
                    wd = std::string(room, 'x');
                last += (last.empty() ? "" : " ") + wd;
            }
            text += ' ' + capitalize(last) + ".";

            for (std::size_t i = 0; i < value_offsets.size(); ++i) {
                auto &a = t.attributes[value_offsets[i].first];
                auto key = t.name + "." + a.name;
                TruthEntry e = *w.truth->find(id, AttributeSpec{t.name, a.name, "", a.dtype});
                e.span = {value_offsets[i].second, value_offsets[i].second + value_lens[i]};
                w.truth->set(id, key, e);
            }
            docs.push_back({id, std::move(text)});
        }

        // Exemplars: value sentences of the first few documents, for evidence synthesis.
        for (std::size_t ai = 0; ai < t.attributes.size(); ++ai) {
            auto &a = t.attributes[ai];
            for (std::size_t i = 0; i < std::min<std::size_t>(5, t.docs); ++i)
                w.truth->add_exemplar(t.name + "." + a.name,
                                      capitalize(a.name) + " " + join(v.keywords[ai]) + " " +
                                          (a.dtype == DType::Number ? std::to_string(a.lo + static_cast<int>(i))
                                                                    : v.keys[i]) + ".");
        }
    }

    for (auto &d : docs)
        w.corpus.add(std::move(d), tok);
    return w;
}

void write_workload(const GeneratedWorkload &w, const fs::path &dir)
{
    fs::create_directories(dir);
    {
        std::ofstream os(dir / "corpus.jsonl");
        if (!os)
            throw IoError("cannot write " + (dir / "corpus.jsonl").string());
        for (auto &d : w.corpus.documents())
            os << nlohmann::json{{"id", d.doc_id}, {"text", d.text}}.dump() << '\n';
    }
    auto corpus = std::make_shared<Corpus>(w.corpus);
    Catalog cat(corpus);
    for (auto &t : w.tables)
        cat.register_table(t);
    cat.save_schema(dir / "schema.json");
    w.truth->save(dir / "truth.jsonl");
}

std::unique_ptr<Workbench> make_workbench(const GeneratedWorkload &w)
{
    auto wb = std::make_unique<Workbench>();
    wb->corpus = std::make_shared<Corpus>(w.corpus);
    wb->embedder = std::make_unique<HashedBowEmbedder>(w.spec.dim);
    LeadSentenceSummarizer summarizer;
    auto segments = prepare_corpus(*wb->corpus, *wb->embedder, wb->tokenizer, summarizer);
    wb->index = build_indexes(wb->corpus->documents(), std::move(segments), wb->embedder->id());
    wb->catalog.attach(wb->corpus);
    for (auto &t : w.tables)
        wb->catalog.register_table(t);
    wb->truth = w.truth;
    return wb;
}

/*----------------------------------------------------------------------------------------------------------------------
 * Queries
 *--------------------------------------------------------------------------------------------------------------------*/

namespace {

const TablePlan &plan_of(const WorkloadSpec &s, std::string_view table)
{
    for (auto &t : s.tables)
        if (t.name == table)
            return t;
    throw ValidationError(fmt::format("workload has no table {}", table));
}

std::vector<const AttributePlan *> numeric(const TablePlan &t)
{
    std::vector<const AttributePlan *> out;
    for (auto &a : t.attributes)
        if (a.dtype == DType::Number)
            out.push_back(&a);
    return out;
}

std::string leaf_text(const std::string &table, const AttributePlan &a, std::mt19937_64 &rng)
{
    if (rng() % 2)
        return fmt::format("{}.{} > {}", table, a.name, a.threshold);
    return fmt::format("{}.{} <= {}", table, a.name, a.threshold);
}

/// Boolean shape over n leaves; `variant` picks among conjunction, disjunction and nesting.
std::string shape(const std::vector<std::string> &l, std::size_t variant)
{
    auto n = l.size();
    if (n == 1)
        return l[0];
    switch (variant % 3) {
    case 0: return join(l, " AND ");
    case 1: return join(l, " OR ");
    default:
        if (n == 2)
            return l[0] + " AND " + l[1];
        if (n == 3)
            return variant % 2 ? l[0] + " AND " + l[1] + " OR " + l[2] : "(" + l[0] + " OR " + l[1] + ") AND " + l[2];
        if (n == 4)
            return variant % 2 ? l[0] + " AND " + l[1] + " OR " + l[2] + " AND " + l[3]
                               : "(" + l[0] + " OR " + l[1] + ") AND " + l[2] + " AND " + l[3];
        return variant % 2 ? "(" + l[0] + " OR " + l[1] + ") AND (" + l[2] + " OR " + l[3] + ") AND " + l[4]
                           : l[0] + " AND " + l[1] + " OR " + l[2] + " AND " + l[3] + " AND " + l[4];
    }
}

Value truth_value(const TruthTable &truth, const std::string &doc, const AttributeSpec &a)
{
    const auto *e = truth.find(doc, a);
    return e ? e->value : Value{};
}

/// Fraction of `target` documents whose join value lies in the key set of `driver` documents
/// passing `filter`.
double true_in_selectivity(const Catalog &cat, const TruthTable &truth, const std::string &driver,
                           const AttributeSpec &driver_key, const Predicate &filter, const std::string &target,
                           const AttributeSpec &target_attr)
{
    std::set<std::string> keys;
    for (auto &d : cat.table_documents(driver))
        if (filter.evaluate(truth_value(truth, d, filter.attribute)))
            keys.insert(canonical_key(truth_value(truth, d, driver_key), true));
    std::size_t hit = 0, total = 0;
    for (auto &d : cat.table_documents(target)) {
        auto v = truth_value(truth, d, target_attr);
        if (is_null(v))
            continue;
        ++total;
        hit += keys.count(canonical_key(v, true));
    }
    return total ? static_cast<double>(hit) / static_cast<double>(total) : 0.0;
}

}

std::vector<WorkloadQuery> generate_queries(const GeneratedWorkload &w, const std::string &group, std::size_t count,
                                            std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::vector<WorkloadQuery> out;
    const auto &player = plan_of(w.spec, "Player");
    auto attrs = numeric(player);

    auto pick = [&](std::vector<const AttributePlan *> pool, std::size_t n) {
        std::shuffle(pool.begin(), pool.end(), rng);
        pool.resize(std::min(n, pool.size()));
        return pool;
    };

    if (group == "C1" || group == "C2" || group == "C3") {
        for (std::size_t i = 0; i < count; ++i) {
            std::size_t n = group == "C1" ? 1 : group == "C2" ? 2 + rng() % 2 : 4 + rng() % 2;
            std::vector<std::string> leaves;
            for (auto *a : pick(attrs, n))
                leaves.push_back(leaf_text("Player", *a, rng));
            out.push_back({group, "SELECT Player.name FROM Player WHERE " + shape(leaves, i)});
        }
        return out;
    }

    if (group == "E1" || group == "E2" || group == "E3") {
        plan_of(w.spec, "Team");
        double lo = group == "E1" ? 0.0 : group == "E2" ? 0.3 : 0.6;
        double hi = group == "E1" ? 0.3 : group == "E2" ? 0.6 : 1.0;
        Catalog cat(std::make_shared<Corpus>(w.corpus));
        for (auto &t : w.tables)
            cat.register_table(t);
        const auto &team = cat.table("Team");
        const auto &players = cat.table("Player");
        std::vector<const AttributePlan *> expensive;
        for (auto *a : attrs)
            if (a->max_mentions >= 3)
                expensive.push_back(a);
        for (std::size_t attempt = 0; out.size() < count && attempt < 2000; ++attempt) {
            // Team filter threshold swept over the attribute range to land in the bucket.
            const char *tattr = rng() % 2 ? "championships" : "founded";
            const auto *ta = team.find(tattr);
            const auto &tp = *std::find_if(plan_of(w.spec, "Team").attributes.begin(),
                                           plan_of(w.spec, "Team").attributes.end(),
                                           [&](auto &a) { return a.name == tattr; });
            int t = std::uniform_int_distribution<int>(tp.lo, tp.hi - 1)(rng);
            Predicate f{*ta, CompareOp::Ge, {static_cast<double>(t)}, true};
            double p = true_in_selectivity(cat, *w.truth, "Team", *team.find("name"), f, "Player",
                                           *players.find("team"));
            if (!(p > lo && p <= hi) || p == 0)
                continue;
            std::vector<std::string> where{fmt::format("Team.{} > {}", tattr, t)};
            for (auto *a : pick(expensive, 2))
                where.push_back(leaf_text("Player", *a, rng));
            out.push_back({group,
                           "SELECT Player.name, Team.name FROM Player JOIN Team ON Player.team = Team.name WHERE " +
                               join(where, " AND "),
                           p});
        }
        if (out.size() < count)
            throw ValidationError(fmt::format("could not generate {} queries for {}", count, group));
        return out;
    }

    if (group == "F") {
        plan_of(w.spec, "City");
        for (std::size_t i = 0; i < count; ++i) {
            auto a = pick(attrs, 1).front();
            int champs = std::uniform_int_distribution<int>(2, 12)(rng);
            std::string q;
            if (i % 2 == 0)
                q = fmt::format("SELECT Player.name, Team.name, City.name FROM Player JOIN Team ON Player.team = "
                                "Team.name JOIN City ON Team.city = City.name WHERE {} AND Team.championships > {} "
                                "AND City.population > {}",
                                leaf_text("Player", *a, rng), champs,
                                std::uniform_int_distribution<int>(1000000, 6000000)(rng));
            else
                q = fmt::format("SELECT Player.name, Team.name, Owner.name FROM Player JOIN Team ON Player.team = "
                                "Team.name JOIN Owner ON Owner.team = Team.name WHERE {} AND Team.championships > {} "
                                "AND Owner.net_worth > {}",
                                leaf_text("Player", *a, rng), champs, std::uniform_int_distribution<int>(5, 60)(rng));
            out.push_back({group, q});
        }
        return out;
    }
    throw ValidationError("unknown query group " + group);
}

std::vector<std::vector<Value>> ground_truth(const QuerySpec &q, const Catalog &catalog, const TruthTable &truth)
{
    using Row = std::map<std::string, std::string>;
    auto relevant = [&](const std::string &table, const std::string &doc) {
        for (auto &a : catalog.table(table).attributes)
            if (!is_null(truth_value(truth, doc, a)))
                return true;
        return false;
    };
    std::vector<Row> rows{Row{}};
    std::vector<std::string> present;
    for (auto &t : q.tables) {
        std::vector<Row> next;
        for (auto &r : rows)
            for (auto &d : catalog.table_documents(t.name)) {
                if (!relevant(t.name, d))
                    continue;
                Row nr = r;
                nr[t.name] = d;
                bool ok = true;
                for (auto &e : q.joins) {
                    if (!nr.count(e.left.table) || !nr.count(e.right.table))
                        continue;
                    if (e.left.table != t.name && e.right.table != t.name)
                        continue;
                    auto a = truth_value(truth, nr[e.left.table], e.left);
                    auto b = truth_value(truth, nr[e.right.table], e.right);
                    bool fold = e.left.dtype == DType::Categorical || e.right.dtype == DType::Categorical;
                    if (is_null(a) || is_null(b) || !values_equal(a, b, fold)) {
                        ok = false;
                        break;
                    }
                }
                if (ok)
                    next.push_back(std::move(nr));
            }
        rows = std::move(next);
    }

    std::function<bool(const ExpressionNode &, const Row &)> holds = [&](const ExpressionNode &n, const Row &r) {
        if (n.is_leaf())
            return n.predicate->evaluate(truth_value(truth, r.at(n.predicate->attribute.table), n.predicate->attribute));
        if (n.kind == ExpressionNode::Kind::And)
            return std::all_of(n.children.begin(), n.children.end(), [&](auto &c) { return holds(c, r); });
        return std::any_of(n.children.begin(), n.children.end(), [&](auto &c) { return holds(c, r); });
    };

    std::vector<std::vector<Value>> out;
    for (auto &r : rows) {
        if (q.where && !holds(*q.where, r))
            continue;
        std::vector<Value> vals;
        for (auto &a : q.select)
            vals.push_back(truth_value(truth, r.at(a.table), a));
        out.push_back(std::move(vals));
    }
    return out;
}

/*----------------------------------------------------------------------------------------------------------------------
 * Benchmark
 *--------------------------------------------------------------------------------------------------------------------*/

RunOutcome run_query(const Workbench &wb, const QuerySpec &q, const EngineOptions &opts)
{
    ExtractionCache cache;
    MockProvider provider(wb.truth, wb.tokenizer);
    EngineContext ctx{&wb.catalog, &wb.index, wb.embedder.get(), &wb.tokenizer, &provider, &cache};
    QueryEngine engine(ctx, opts);
    RunOutcome out{engine.execute(q), {}};
    out.score = score_results(out.result.rows(), ground_truth(q, wb.catalog, *wb.truth));
    return out;
}

std::vector<BenchRow> run_bench(const Workbench &wb, const GeneratedWorkload &w, const BenchOptions &opts)
{
    std::vector<BenchRow> rows;
    for (auto &group : opts.groups) {
        auto queries = generate_queries(w, group, opts.queries_per_group, opts.seed ^ std::hash<std::string>{}(group));
        std::vector<QuerySpec> parsed;
        for (auto &wq : queries)
            parsed.push_back(parse_query(wq.text, wb.catalog));
        bool join = group[0] == 'E' || group[0] == 'F';
        for (auto &strategy : join ? opts.join_strategies : opts.single_table_strategies) {
            BenchRow row{group, strategy};
            for (auto &q : parsed) {
                EngineOptions eo = opts.engine;
                eo.strategy = strategy;
                auto r = run_query(wb, q, eo);
                row.mean_tokens += static_cast<double>(r.result.report.tokens());
                row.mean_calls += static_cast<double>(r.result.report.provider_calls);
                row.mean_wall_ms += r.result.report.provider_latency_ms;
                row.f1 += r.score.f1;
            }
            double n = static_cast<double>(std::max<std::size_t>(parsed.size(), 1));
            row.mean_tokens /= n;
            row.mean_calls /= n;
            row.mean_wall_ms /= n;
            row.f1 /= n;
            rows.push_back(row);
        }
    }
    return rows;
}

void write_bench_csv(const std::vector<BenchRow> &rows, std::ostream &os)
{
    os << "group,strategy,mean_tokens,mean_calls,mean_wall_ms,f1\n";
    for (auto &r : rows)
        os << fmt::format("{},{},{:.2f},{:.2f},{:.2f},{:.4f}\n", r.group, r.strategy, r.mean_tokens, r.mean_calls,
                          r.mean_wall_ms, r.f1);
}

void write_bench_table(const std::vector<BenchRow> &rows, std::ostream &os)
{
    os << fmt::format("{:<6} {:<12} {:>12} {:>10} {:>12} {:>7}\n", "group", "strategy", "mean tokens", "calls",
                      "wall ms", "F1");
    for (auto &r : rows)
        os << fmt::format("{:<6} {:<12} {:>12.1f} {:>10.1f} {:>12.1f} {:>7.3f}\n", r.group, r.strategy, r.mean_tokens,
                          r.mean_calls, r.mean_wall_ms, r.f1);
}

}
