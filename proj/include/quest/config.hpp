#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include <json.hpp>

#include "quest/embed.hpp"
#include "quest/executor.hpp"
#include "quest/extract.hpp"

namespace quest {

struct EmbedderConfig
{
    std::string kind = "hashed";   ///< "hashed" or "http"
    std::size_t dim = 256;
    std::string url;
    std::string model;
    std::string api_key_env;       ///< environment variable holding the key
};

struct ProviderConfig
{
    std::string kind = "mock";     ///< "mock" or "http"
    std::filesystem::path truth;   ///< mock: truth sidecar
    std::string url;
    std::string model;
    std::string api_key_env;
    double timeout_s = 60;
};

/// Run configuration. Relative paths resolve against the config file's directory.
struct Config
{
    std::filesystem::path corpus;
    std::filesystem::path schema;
    std::filesystem::path artifacts = "artifacts";
    EmbedderConfig embedder;
    ProviderConfig provider;
    double sample_rate = 0.05;
    std::size_t k = 3;
    double initial_tau = 1.2;
    double default_gamma = 0.5;
    double merge_threshold = 0.75;
    std::uint64_t seed = 42;
    std::optional<std::size_t> budget;
    std::size_t workers = 1;

    /// Throws ValidationError: rate outside (0, 1], k < 1, dim < 8, unknown kinds.
    void validate() const;

    static Config from_json(const nlohmann::json &j, const std::filesystem::path &base = {});
    static Config load(const std::filesystem::path &path);
    nlohmann::json to_json() const;

    EngineOptions engine_options() const;
    std::unique_ptr<Embedder> make_embedder() const;
    /// Loads the truth sidecar for the mock provider.
    std::unique_ptr<ExtractionProvider> make_provider(const Tokenizer &tok) const;
};

}
