#include "quest/embed.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "quest/error.hpp"
#include "quest/text.hpp"

namespace quest {

namespace {

// FNV-1a, 64 bit.
std::uint64_t fnv1a(std::string_view s)
{
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}

HashedBowEmbedder::HashedBowEmbedder(std::size_t dim) : dim_(dim)
{
    if (dim < 8)
        throw ValidationError("embedding dimension must be at least 8");
}

std::string HashedBowEmbedder::id() const { return "hashed-bow-" + std::to_string(dim_); }

std::pair<std::size_t, float> HashedBowEmbedder::bucket(std::string_view word) const
{
    auto h = fnv1a(word);
    return {static_cast<std::size_t>(h % dim_), (h >> 63) ? -1.0f : 1.0f};
}

Embedding HashedBowEmbedder::embed(std::string_view text) const
{
    std::vector<double> acc(dim_, 0.0);
    auto ws = words(text);
    for (auto &w : ws) {
        // bare numbers carry no topic
        if (std::all_of(w.begin(), w.end(), [](unsigned char c) { return std::isdigit(c); }))
            continue;
        auto [b, s] = bucket(w);
        acc[b] += s;
    }
    double n = 0;
    for (double x : acc)
        n += x * x;
    Embedding out(dim_, 0.0f);
    if (n == 0) {
        // No words: a fixed unit vector keeps the invariant without favouring any bucket.
        out[0] = 1.0f;
        return out;
    }
    n = std::sqrt(n);
    for (std::size_t i = 0; i < dim_; ++i)
        out[i] = static_cast<float>(acc[i] / n);
    return out;
}

double dot(std::span<const float> a, std::span<const float> b)
{
    if (a.size() != b.size())
        throw DimMismatch(std::to_string(a.size()) + " vs " + std::to_string(b.size()));
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return s;
}

double norm(std::span<const float> a)
{
    double s = 0;
    for (float x : a)
        s += static_cast<double>(x) * x;
    return std::sqrt(s);
}

double distance(std::span<const float> a, std::span<const float> b)
{
    if (a.size() != b.size())
        throw DimMismatch(std::to_string(a.size()) + " vs " + std::to_string(b.size()));
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        s += d * d;
    }
    return std::sqrt(s);
}

double cosine(std::span<const float> a, std::span<const float> b)
{
    double na = norm(a), nb = norm(b);
    if (na == 0 || nb == 0)
        return 0;
    return dot(a, b) / (na * nb);
}

Embedding normalized(std::span<const float> v)
{
    double n = norm(v);
    Embedding out(v.begin(), v.end());
    if (n == 0)
        return out;
    for (auto &x : out)
        x = static_cast<float>(x / n);
    return out;
}

Embedding mean_direction(std::span<const Embedding> vs)
{
    if (vs.empty())
        throw ValidationError("mean of zero vectors");
    std::vector<double> acc(vs.front().size(), 0.0);
    for (auto &v : vs) {
        if (v.size() != acc.size())
            throw DimMismatch(std::to_string(v.size()) + " vs " + std::to_string(acc.size()));
        for (std::size_t i = 0; i < v.size(); ++i)
            acc[i] += v[i];
    }
    double n = 0;
    for (double x : acc)
        n += x * x;
    n = std::sqrt(n);
    Embedding out(acc.size());
    for (std::size_t i = 0; i < acc.size(); ++i)
        out[i] = static_cast<float>(n == 0 ? 0.0 : acc[i] / n);
    return out;
}

bool is_unit(std::span<const float> v, double tol) { return std::abs(norm(v) - 1.0) <= tol; }

}
