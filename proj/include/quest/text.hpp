#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace quest {

/// Half-open character range `[start, end)` into a document's text.
struct Span
{
    std::size_t start = 0;
    std::size_t end = 0;

    bool overlaps(const Span &o) const { return start < o.end && o.start < end; }
    bool operator==(const Span &) const = default;
};

/// Token counting contract. All cost arithmetic goes through one configured instance.
class Tokenizer
{
public:
    virtual ~Tokenizer() = default;
    virtual std::size_t count(std::string_view text) const = 0;
    virtual std::string id() const = 0;
};

/// ceil(code points / 4).
class ApproxTokenizer final : public Tokenizer
{
public:
    std::size_t count(std::string_view text) const override;
    std::string id() const override { return "approx-chars/4"; }
};

std::size_t utf8_length(std::string_view s);

/// Sentence boundaries: a sentence ends after `.`, `?` or `!` followed by whitespace.
/// The returned spans tile the text: each span runs up to the start of the next one, so
/// trailing whitespace belongs to the preceding sentence.
std::vector<Span> split_sentences(std::string_view text);

class Summarizer
{
public:
    virtual ~Summarizer() = default;
    virtual std::string summarize(std::string_view text) const = 0;
};

/// First sentence of each paragraph (blank-line separated), at most `max_sentences` of them.
class LeadSentenceSummarizer final : public Summarizer
{
    std::size_t max_sentences_;

public:
    explicit LeadSentenceSummarizer(std::size_t max_sentences = 5) : max_sentences_(max_sentences) { }
    std::string summarize(std::string_view text) const override;
};

/// Lower-cased alphanumeric words.
std::vector<std::string> words(std::string_view text);

}
