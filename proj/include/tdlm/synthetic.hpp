#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tdlm/data.hpp"
#include "tdlm/paraphrase.hpp"
#include "tdlm/wsd.hpp"

namespace tdlm {

/// Distinct pronounceable pseudo-words built from consonant-vowel syllables.
std::vector<std::string> pseudo_words(std::size_t count, std::uint64_t seed, std::size_t min_syllables = 2,
                                      std::size_t max_syllables = 3);

struct CorpusSpec {
    std::size_t documents = 3000;
    std::size_t sentences_per_document = 8;
    std::size_t topics = 8;
    std::size_t nouns_per_topic = 16;
    std::size_t verbs_per_topic = 10;
    std::size_t adjectives_per_topic = 8;
    /// Probability that a content word comes from the document's topic.
    double topic_purity = 0.85;
};

/// Templated sentences over topic-specific word classes with verb agreement,
/// so a masked model has local and document-level structure to learn.
std::vector<TextDocument> synth_corpus(const CorpusSpec& spec, std::uint64_t seed);

struct WsdWorldSpec {
    std::size_t lemmas = 50;
    std::size_t min_senses = 2;
    std::size_t max_senses = 12;
    /// Every sense belongs to one domain; a lemma's senses use distinct domains.
    std::size_t domains = 12;
    std::size_t cues_per_domain = 4;
    /// Domain cues listed in each gloss, capped at cues_per_domain.
    std::size_t gloss_cues = 4;
    std::size_t fillers = 60;
    std::size_t train_per_lemma = 60;
    std::size_t test_per_lemma = 10;
    std::size_t context_fillers = 6;
    std::size_t context_cues = 2;
};

struct WsdWorld {
    SenseInventory inventory;
    std::vector<WsdInstance> train;
    std::vector<WsdInstance> test;
    /// Every context sentence and every "lemma : gloss" line, for tokenizer training.
    std::vector<std::string> text;
};

WsdWorld synth_wsd_world(const WsdWorldSpec& spec, std::uint64_t seed);

struct MppWorldSpec {
    std::size_t base_words = 400;
    /// The first `replaceable` base words have synonyms.
    std::size_t replaceable = 240;
    std::size_t synonyms_per_word = 2;
    std::size_t dim = 32;
    std::size_t paragraphs = 600;
    std::size_t words_per_paragraph = 80;
    /// Synonym vectors are base + offset * u + noise for a shared unit direction u.
    double offset = 3.0;
    double noise = 0.5;
};

struct MppWorld {
    std::vector<std::string> paragraphs;
    SynonymTable synonyms;
    WordVectorTable vectors;
};

MppWorld synth_mpp_world(const MppWorldSpec& spec, std::uint64_t seed);

} // namespace tdlm
