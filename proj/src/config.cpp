#include "quest/config.hpp"

#include <cstdlib>
#include <fstream>

#include <fmt/format.h>

#include "quest/error.hpp"

namespace quest {

using nlohmann::json;
namespace fs = std::filesystem;

void Config::validate() const
{
    if (!(sample_rate > 0 && sample_rate <= 1))
        throw ValidationError(fmt::format("sample_rate {} is outside (0, 1]", sample_rate));
    if (k < 1)
        throw ValidationError("k must be at least 1");
    if (embedder.dim < 8)
        throw ValidationError(fmt::format("embedding dimension {} is below 8", embedder.dim));
    if (embedder.kind != "hashed" && embedder.kind != "http")
        throw ValidationError("embedder kind must be hashed or http");
    if (provider.kind != "mock" && provider.kind != "http")
        throw ValidationError("provider kind must be mock or http");
    if (provider.kind == "mock" && provider.truth.empty())
        throw ValidationError("mock provider needs a truth sidecar path");
    if (provider.kind == "http" && provider.url.empty())
        throw ValidationError("http provider needs a url");
    if (!(initial_tau > 0) || !(default_gamma > 0))
        throw ValidationError("thresholds must be positive");
    if (workers < 1)
        throw ValidationError("workers must be at least 1");
}

Config Config::from_json(const json &j, const fs::path &base)
{
    Config c;
    auto path = [&](const char *key, fs::path &out) {
        if (j.contains(key)) {
            fs::path p = j.at(key).get<std::string>();
            out = p.is_relative() && !base.empty() ? base / p : p;
        }
    };
    try {
        path("corpus", c.corpus);
        path("schema", c.schema);
        if (j.contains("artifacts"))
            path("artifacts", c.artifacts);
        else if (!base.empty())
            c.artifacts = base / c.artifacts;
        if (j.contains("embedder")) {
            auto &e = j.at("embedder");
            c.embedder.kind = e.value("kind", c.embedder.kind);
            c.embedder.dim = e.value("dim", c.embedder.dim);
            c.embedder.url = e.value("url", "");
            c.embedder.model = e.value("model", "");
            c.embedder.api_key_env = e.value("api_key_env", "");
        }
        if (j.contains("provider")) {
            auto &p = j.at("provider");
            c.provider.kind = p.value("kind", c.provider.kind);
            if (p.contains("truth")) {
                fs::path t = p.at("truth").get<std::string>();
                c.provider.truth = t.is_relative() && !base.empty() ? base / t : t;
            }
            c.provider.url = p.value("url", "");
            c.provider.model = p.value("model", "");
            c.provider.api_key_env = p.value("api_key_env", "");
            c.provider.timeout_s = p.value("timeout_s", c.provider.timeout_s);
        }
        c.sample_rate = j.value("sample_rate", c.sample_rate);
        c.k = j.value("k", c.k);
        c.initial_tau = j.value("initial_tau", c.initial_tau);
        c.default_gamma = j.value("default_gamma", c.default_gamma);
        c.merge_threshold = j.value("merge_threshold", c.merge_threshold);
        c.seed = j.value("seed", c.seed);
        if (j.contains("budget") && !j.at("budget").is_null())
            c.budget = j.at("budget").get<std::size_t>();
        c.workers = j.value("workers", c.workers);
    } catch (const json::exception &e) {
        throw ValidationError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

Config Config::load(const fs::path &path)
{
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot read config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception &e) {
        throw FormatError(path.string(), 0, e.what());
    }
    return from_json(j, path.parent_path());
}

json Config::to_json() const
{
    json j = {{"corpus", corpus.string()},
              {"schema", schema.string()},
              {"artifacts", artifacts.string()},
              {"embedder", {{"kind", embedder.kind}, {"dim", embedder.dim}}},
              {"provider", {{"kind", provider.kind}}},
              {"sample_rate", sample_rate},
              {"k", k},
              {"initial_tau", initial_tau},
              {"default_gamma", default_gamma},
              {"merge_threshold", merge_threshold},
              {"seed", seed},
              {"budget", budget ? json(*budget) : json(nullptr)},
              {"workers", workers}};
    if (embedder.kind == "http")
        j["embedder"].update({{"url", embedder.url}, {"model", embedder.model}, {"api_key_env", embedder.api_key_env}});
    if (provider.kind == "mock")
        j["provider"]["truth"] = provider.truth.string();
    else
        j["provider"].update({{"url", provider.url},
                              {"model", provider.model},
                              {"api_key_env", provider.api_key_env},
                              {"timeout_s", provider.timeout_s}});
    return j;
}

EngineOptions Config::engine_options() const
{
    EngineOptions o;
    o.sample_rate = sample_rate;
    o.seed = seed;
    o.initial_tau = initial_tau;
    o.default_gamma = default_gamma;
    o.evidence.k = k;
    o.budget = budget;
    o.workers = workers;
    return o;
}

namespace {

std::string env_or_empty(const std::string &name)
{
    if (name.empty())
        return {};
    const char *v = std::getenv(name.c_str());
    return v ? v : "";
}

}

std::unique_ptr<Embedder> Config::make_embedder() const
{
    if (embedder.kind == "hashed")
        return std::make_unique<HashedBowEmbedder>(embedder.dim);
    return make_http_embedder({embedder.url, embedder.model, env_or_empty(embedder.api_key_env), embedder.dim});
}

std::unique_ptr<ExtractionProvider> Config::make_provider(const Tokenizer &tok) const
{
    if (provider.kind == "mock")
        return std::make_unique<MockProvider>(std::make_shared<TruthTable>(TruthTable::load(provider.truth)), tok);
    return make_http_provider({provider.url, provider.model, env_or_empty(provider.api_key_env), provider.timeout_s},
                              tok);
}

}
