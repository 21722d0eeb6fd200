#pragma once

#include <cmath>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "quest/catalog.hpp"
#include "quest/embed.hpp"
#include "quest/index.hpp"

namespace testing {

/// Embedder with hand-placed vectors for known texts; anything else falls back to hashing.
class FixedEmbedder final : public quest::Embedder
{
    std::size_t dim_;
    std::map<std::string, quest::Embedding, std::less<>> table_;
    quest::HashedBowEmbedder fallback_;

public:
    explicit FixedEmbedder(std::size_t dim) : dim_(dim), fallback_(dim) { }

    void set(std::string text, quest::Embedding v) { table_[std::move(text)] = quest::normalized(v); }

    std::size_t dim() const override { return dim_; }
    std::string id() const override { return "fixed"; }
    quest::Embedding embed(std::string_view text) const override
    {
        auto it = table_.find(text);
        return it != table_.end() ? it->second : fallback_.embed(text);
    }
};

/// Unit vector at distance `d` from e0, rotated into axis `axis`.
inline quest::Embedding at_distance(std::size_t dim, double d, std::size_t axis)
{
    // |e0 - v| = d with v = cos(t) e0 + sin(t) e_axis  =>  cos(t) = 1 - d^2 / 2
    double c = 1 - d * d / 2;
    quest::Embedding v(dim, 0.0f);
    v[0] = static_cast<float>(c);
    v[axis] = static_cast<float>(std::sqrt(std::max(0.0, 1 - c * c)));
    return v;
}

inline quest::Embedding axis(std::size_t dim, std::size_t i)
{
    quest::Embedding v(dim, 0.0f);
    v[i] = 1.0f;
    return v;
}

inline quest::Embedding random_unit(std::size_t dim, std::mt19937_64 &rng)
{
    std::normal_distribution<double> n(0, 1);
    quest::Embedding v(dim);
    for (auto &x : v)
        x = static_cast<float>(n(rng));
    return quest::normalized(v);
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string &name)
{
    auto p = std::filesystem::temp_directory_path() / ("quest-test-" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}
