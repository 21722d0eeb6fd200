#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace quest {

using Embedding = std::vector<float>;

/// Text -> unit vector of fixed dimension.
class Embedder
{
public:
    virtual ~Embedder() = default;
    virtual std::size_t dim() const = 0;
    virtual std::string id() const = 0;
    virtual Embedding embed(std::string_view text) const = 0;
};

/// Signed feature hashing over lower-cased words (bare numbers skipped), L2-normalized. Deterministic and
/// dependency-free; words that co-occur produce nearby vectors, which is all the
/// synthetic corpora rely on.
class HashedBowEmbedder final : public Embedder
{
    std::size_t dim_;

public:
    explicit HashedBowEmbedder(std::size_t dim = 256);
    std::size_t dim() const override { return dim_; }
    std::string id() const override;
    Embedding embed(std::string_view text) const override;

    /// Bucket and sign a word hashes to.
    std::pair<std::size_t, float> bucket(std::string_view word) const;
};

struct HttpEmbedderConfig
{
    std::string url;     ///< full endpoint, e.g. http://localhost:8080/v1/embeddings
    std::string model;
    std::string api_key;
    std::size_t dim = 0;
};

/// Embedding-service client speaking the common `{"model","input"} -> {"data":[{"embedding"}]}` shape.
std::unique_ptr<Embedder> make_http_embedder(HttpEmbedderConfig cfg);

double dot(std::span<const float> a, std::span<const float> b);
double norm(std::span<const float> a);
/// Euclidean distance.
double distance(std::span<const float> a, std::span<const float> b);
double cosine(std::span<const float> a, std::span<const float> b);
Embedding normalized(std::span<const float> v);
/// Normalized arithmetic mean.
Embedding mean_direction(std::span<const Embedding> vs);
bool is_unit(std::span<const float> v, double tol = 1e-6);

}
