// HTTP clients for real deployments: a chat-completions extraction provider and an
// embeddings service. Nothing else in the library touches the network.
#ifdef QUEST_HTTPS
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>

#include <chrono>

#include <json.hpp>

#include "quest/embed.hpp"
#include "quest/error.hpp"
#include "quest/extract.hpp"

namespace quest {

using nlohmann::json;

namespace {

struct Endpoint
{
    std::string base;   ///< scheme://host[:port]
    std::string path;
};

Endpoint split_url(const std::string &url)
{
    auto scheme = url.find("://");
    if (scheme == std::string::npos)
        throw ValidationError("endpoint URL needs a scheme: " + url);
    auto slash = url.find('/', scheme + 3);
    if (slash == std::string::npos)
        return {url, "/"};
    return {url.substr(0, slash), url.substr(slash)};
}

json post_json(const std::string &url, const std::string &api_key, const json &body, double timeout_s)
{
    auto ep = split_url(url);
    httplib::Client cli(ep.base);
    auto secs = static_cast<time_t>(timeout_s);
    cli.set_connection_timeout(secs, 0);
    cli.set_read_timeout(secs, 0);
    httplib::Headers headers;
    if (!api_key.empty())
        headers.emplace("Authorization", "Bearer " + api_key);
    auto res = cli.Post(ep.path, headers, body.dump(), "application/json");
    if (!res)
        throw ProviderError(url + ": " + httplib::to_string(res.error()));
    if (res->status != 200)
        throw ProviderError(url + ": HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
    try {
        return json::parse(res->body);
    } catch (const json::exception &e) {
        throw ProviderError(url + ": malformed response: " + e.what());
    }
}

class HttpProvider final : public ExtractionProvider
{
    HttpProviderConfig cfg_;
    const Tokenizer &tok_;

public:
    HttpProvider(HttpProviderConfig cfg, const Tokenizer &tok) : cfg_(std::move(cfg)), tok_(tok) { }

    std::string id() const override { return "http:" + cfg_.model; }

    ProviderResponse complete(const ProviderRequest &req) override
    {
        json body = {{"model", cfg_.model},
                     {"temperature", 0},
                     {"messages", json::array({{{"role", "system"},
                                                {"content", "You extract structured data. Reply with JSON only."}},
                                               {{"role", "user"}, {"content", req.prompt}}})}};
        auto start = std::chrono::steady_clock::now();
        auto j = post_json(cfg_.url, cfg_.api_key, body, cfg_.timeout_s);
        auto ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();

        ProviderResponse r;
        try {
            r.content = j.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const json::exception &e) {
            throw ProviderError("response lacks choices[0].message.content: " + std::string(e.what()));
        }
        // Models often wrap JSON in a fenced block.
        auto open = r.content.find("```");
        if (open != std::string::npos) {
            auto nl = r.content.find('\n', open);
            auto close = r.content.rfind("```");
            if (nl != std::string::npos && close > nl)
                r.content = r.content.substr(nl + 1, close - nl - 1);
        }
        if (j.contains("usage")) {
            r.input_tokens = j["usage"].value("prompt_tokens", std::size_t{0});
            r.output_tokens = j["usage"].value("completion_tokens", std::size_t{0});
        } else {
            r.input_tokens = tok_.count(req.prompt);
            r.output_tokens = tok_.count(r.content);
        }
        r.latency_ms = ms;
        return r;
    }
};

class HttpEmbedder final : public Embedder
{
    HttpEmbedderConfig cfg_;

public:
    explicit HttpEmbedder(HttpEmbedderConfig cfg) : cfg_(std::move(cfg))
    {
        if (cfg_.dim < 8)
            throw ValidationError("embedding dimension must be at least 8");
    }

    std::size_t dim() const override { return cfg_.dim; }
    std::string id() const override { return "http:" + cfg_.model + ":" + std::to_string(cfg_.dim); }

    Embedding embed(std::string_view text) const override
    {
        json body = {{"model", cfg_.model}, {"input", std::string(text)}};
        auto j = post_json(cfg_.url, cfg_.api_key, body, 60);
        Embedding v;
        try {
            v = j.at("data").at(0).at("embedding").get<Embedding>();
        } catch (const json::exception &e) {
            throw ProviderError("embedding response malformed: " + std::string(e.what()));
        }
        if (v.size() != cfg_.dim)
            throw DimMismatch("embedding service returned " + std::to_string(v.size()) + ", configured " +
                              std::to_string(cfg_.dim));
        return normalized(v);
    }
};

}

std::unique_ptr<ExtractionProvider> make_http_provider(HttpProviderConfig cfg, const Tokenizer &tok)
{
    return std::make_unique<HttpProvider>(std::move(cfg), tok);
}

std::unique_ptr<Embedder> make_http_embedder(HttpEmbedderConfig cfg)
{
    return std::make_unique<HttpEmbedder>(std::move(cfg));
}

}
