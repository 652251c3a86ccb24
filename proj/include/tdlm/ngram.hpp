#pragma once

#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace tdlm {

inline const std::string kBeginMarker = "<s>";
inline const std::string kEndMarker = "</s>";

using Sentence = std::vector<std::string>;

/// Count table of an order-n model: context (n-1 tokens) -> next token -> count.
struct NgramCounts {
    struct Row {
        std::map<std::string, std::size_t> next;
        std::size_t total = 0;
    };

    std::size_t order = 1;
    std::map<std::vector<std::string>, Row> contexts;
    /// Every token that can be predicted (words plus the end marker).
    std::set<std::string> types;

    std::size_t count(const std::vector<std::string>& context, const std::string& word) const;
    std::size_t context_total(const std::vector<std::string>& context) const;
};

/// Pads each sentence with n-1 begin markers and one end marker, then counts n-grams.
NgramCounts count_ngrams(const std::vector<Sentence>& corpus, std::size_t n);

/// (C(context, word) + k) / (C(context) + k |V|). With k = 0 an unseen context
/// or pair yields exactly 0. vocab_size = 0 uses the number of observed types.
double conditional_prob(const NgramCounts& counts, const std::vector<std::string>& context,
                        const std::string& word, double add_k = 0.0, std::size_t vocab_size = 0);

struct LogProb {
    double value = 0.0;
    /// Set when some factor is exactly zero; value is then -infinity.
    bool zero_probability = false;
    /// Number of predicted tokens (words plus the end marker).
    std::size_t predictions = 0;
};

/// Chain-rule log probability of one sentence, end marker included.
LogProb sequence_log_prob(const NgramCounts& counts, const Sentence& tokens, double add_k = 0.0,
                          std::size_t vocab_size = 0);

struct Perplexity {
    double value = 0.0;
    bool infinite = false;
};

/// exp(-(1/N) log P) over all sentences, N counting predicted tokens.
Perplexity perplexity(const NgramCounts& counts, const std::vector<Sentence>& sentences,
                      double add_k = 0.0, std::size_t vocab_size = 0);

/// Same quantity as exp(mean per-token cross-entropy), accumulated token by token.
Perplexity perplexity_from_cross_entropy(const NgramCounts& counts,
                                         const std::vector<Sentence>& sentences,
                                         double add_k = 0.0, std::size_t vocab_size = 0);

} // namespace tdlm
