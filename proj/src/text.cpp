#include "quest/text.hpp"

#include <cctype>

namespace quest {

std::size_t utf8_length(std::string_view s)
{
    std::size_t n = 0;
    for (unsigned char c : s)
        if ((c & 0xC0) != 0x80)
            ++n;
    return n;
}

std::size_t ApproxTokenizer::count(std::string_view text) const
{
    return (utf8_length(text) + 3) / 4;
}

namespace {

bool is_space(char c) { return c == ' ' || c == '\n' || c == '\t' || c == '\r' || c == '\f' || c == '\v'; }

bool is_terminator(char c) { return c == '.' || c == '?' || c == '!'; }

}

std::vector<Span> split_sentences(std::string_view text)
{
    std::vector<Span> out;
    if (text.empty())
        return out;
    std::size_t start = 0;
    std::size_t i = 0;
    while (i < text.size()) {
        if (is_terminator(text[i]) && i + 1 < text.size() && is_space(text[i + 1])) {
            std::size_t j = i + 1;
            while (j < text.size() && is_space(text[j]))
                ++j;
            if (j >= text.size())
                break;
            out.push_back({start, j});
            start = j;
            i = j;
            continue;
        }
        ++i;
    }
    out.push_back({start, text.size()});
    return out;
}

std::string LeadSentenceSummarizer::summarize(std::string_view text) const
{
    std::string summary;
    std::size_t taken = 0;
    std::size_t pos = 0;
    while (pos < text.size() && taken < max_sentences_) {
        std::size_t brk = text.find("\n\n", pos);
        std::string_view para = text.substr(pos, brk == std::string_view::npos ? std::string_view::npos : brk - pos);
        pos = brk == std::string_view::npos ? text.size() : brk + 2;

        std::size_t lead = 0;
        while (lead < para.size() && is_space(para[lead]))
            ++lead;
        para.remove_prefix(lead);
        if (para.empty())
            continue;
        auto sentences = split_sentences(para);
        std::string_view first = para.substr(sentences.front().start, sentences.front().end - sentences.front().start);
        while (!first.empty() && is_space(first.back()))
            first.remove_suffix(1);
        if (first.empty())
            continue;
        if (!summary.empty())
            summary += ' ';
        summary += first;
        ++taken;
    }
    return summary;
}

std::vector<std::string> words(std::string_view text)
{
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        auto c = static_cast<unsigned char>(ch);
        if (std::isalnum(c) || c >= 0x80) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty())
        out.push_back(std::move(cur));
    return out;
}

}
