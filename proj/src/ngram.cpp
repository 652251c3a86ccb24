#include "tdlm/ngram.hpp"

#include <cmath>
#include <limits>

#include "tdlm/errors.hpp"

namespace tdlm {

namespace {

Sentence padded(const Sentence& sentence, std::size_t n)
{
    Sentence out(n - 1, kBeginMarker);
    out.insert(out.end(), sentence.begin(), sentence.end());
    out.push_back(kEndMarker);
    return out;
}

// Visits (context, word) for every predicted position of a padded sentence.
template <typename Visitor>
void for_each_prediction(const Sentence& sentence, std::size_t n, Visitor&& visit)
{
    const Sentence seq = padded(sentence, n);
    for (std::size_t i = n - 1; i < seq.size(); ++i) {
        std::vector<std::string> context(seq.begin() + static_cast<std::ptrdiff_t>(i - (n - 1)),
                                         seq.begin() + static_cast<std::ptrdiff_t>(i));
        visit(context, seq[i]);
    }
}

} // namespace

std::size_t NgramCounts::count(const std::vector<std::string>& context, const std::string& word) const
{
    auto row = contexts.find(context);
    if (row == contexts.end()) return 0;
    auto it = row->second.next.find(word);
    return it == row->second.next.end() ? 0 : it->second;
}

std::size_t NgramCounts::context_total(const std::vector<std::string>& context) const
{
    auto row = contexts.find(context);
    return row == contexts.end() ? 0 : row->second.total;
}

NgramCounts count_ngrams(const std::vector<Sentence>& corpus, std::size_t n)
{
    if (n < 1) throw ParameterError("count_ngrams: order must be at least 1");
    NgramCounts counts;
    counts.order = n;
    for (const auto& sentence : corpus) {
        for_each_prediction(sentence, n, [&](const std::vector<std::string>& context, const std::string& word) {
            auto& row = counts.contexts[context];
            ++row.next[word];
            ++row.total;
            counts.types.insert(word);
        });
    }
    return counts;
}

double conditional_prob(const NgramCounts& counts, const std::vector<std::string>& context,
                        const std::string& word, double add_k, std::size_t vocab_size)
{
    if (context.size() != counts.order - 1) {
        throw ParameterError("conditional_prob: context has " + std::to_string(context.size()) +
                             " tokens, order " + std::to_string(counts.order) + " needs " +
                             std::to_string(counts.order - 1));
    }
    if (add_k < 0.0) throw ParameterError("conditional_prob: add_k must be non-negative");
    const double v = static_cast<double>(vocab_size != 0 ? vocab_size : counts.types.size());
    const double numerator = static_cast<double>(counts.count(context, word)) + add_k;
    const double denominator = static_cast<double>(counts.context_total(context)) + add_k * v;
    if (denominator == 0.0) return 0.0;
    return numerator / denominator;
}

LogProb sequence_log_prob(const NgramCounts& counts, const Sentence& tokens, double add_k,
                          std::size_t vocab_size)
{
    LogProb result;
    for_each_prediction(tokens, counts.order, [&](const std::vector<std::string>& context, const std::string& word) {
        ++result.predictions;
        if (result.zero_probability) return;
        const double p = conditional_prob(counts, context, word, add_k, vocab_size);
        if (p == 0.0) {
            result.zero_probability = true;
            result.value = -std::numeric_limits<double>::infinity();
            return;
        }
        result.value += std::log(p);
    });
    return result;
}

Perplexity perplexity(const NgramCounts& counts, const std::vector<Sentence>& sentences, double add_k,
                      std::size_t vocab_size)
{
    double log_prob = 0.0;
    std::size_t n = 0;
    for (const auto& s : sentences) {
        const LogProb lp = sequence_log_prob(counts, s, add_k, vocab_size);
        if (lp.zero_probability) return {std::numeric_limits<double>::infinity(), true};
        log_prob += lp.value;
        n += lp.predictions;
    }
    if (n == 0) throw ValidationError("perplexity: no tokens to score");
    return {std::exp(-log_prob / static_cast<double>(n)), false};
}

Perplexity perplexity_from_cross_entropy(const NgramCounts& counts,
                                         const std::vector<Sentence>& sentences, double add_k,
                                         std::size_t vocab_size)
{
    std::vector<double> token_ce;
    bool infinite = false;
    for (const auto& s : sentences) {
        for_each_prediction(s, counts.order, [&](const std::vector<std::string>& context, const std::string& word) {
            const double p = conditional_prob(counts, context, word, add_k, vocab_size);
            if (p == 0.0) infinite = true;
            else token_ce.push_back(-std::log(p));
        });
    }
    if (infinite) return {std::numeric_limits<double>::infinity(), true};
    if (token_ce.empty()) throw ValidationError("perplexity: no tokens to score");
    double mean_ce = 0.0;
    for (double ce : token_ce) mean_ce += ce;
    mean_ce /= static_cast<double>(token_ce.size());
    return {std::exp(mean_ce), false};
}

} // namespace tdlm
