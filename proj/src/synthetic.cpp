#include "tdlm/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "tdlm/random.hpp"

namespace tdlm {

namespace {

constexpr const char* kConsonants[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"};
constexpr const char* kVowels[] = {"a", "e", "i", "o", "u"};

template <typename T>
const T& pick(const std::vector<T>& items, Rng& rng)
{
    return items[static_cast<std::size_t>(rng.below(items.size()))];
}

std::string join(const std::vector<std::string>& words)
{
    std::string out;
    for (const auto& w : words) {
        if (!out.empty()) out += ' ';
        out += w;
    }
    return out;
}

} // namespace

std::vector<std::string> pseudo_words(std::size_t count, std::uint64_t seed, std::size_t min_syllables,
                                      std::size_t max_syllables)
{
    if (min_syllables == 0 || max_syllables < min_syllables) throw ParameterError("pseudo_words: bad syllable range");
    Rng rng(seed);
    std::set<std::string> seen;
    std::vector<std::string> out;
    std::size_t attempts = 0;
    while (out.size() < count) {
        if (++attempts > count * 1000 + 1000) throw ParameterError("pseudo_words: cannot find enough distinct words");
        const std::size_t syllables = min_syllables + rng.below(max_syllables - min_syllables + 1);
        std::string w;
        for (std::size_t s = 0; s < syllables; ++s) {
            w += kConsonants[rng.below(std::size(kConsonants))];
            w += kVowels[rng.below(std::size(kVowels))];
        }
        if (seen.insert(w).second) out.push_back(std::move(w));
    }
    return out;
}

std::vector<TextDocument> synth_corpus(const CorpusSpec& spec, std::uint64_t seed)
{
    if (spec.topics == 0 || spec.nouns_per_topic == 0 || spec.verbs_per_topic == 0 || spec.adjectives_per_topic == 0) {
        throw ParameterError("synth_corpus: every word class needs at least one word");
    }
    const std::size_t per_topic = spec.nouns_per_topic + spec.verbs_per_topic + spec.adjectives_per_topic;
    auto lexicon = pseudo_words(spec.topics * per_topic, derive_seed(seed, 1));
    std::vector<std::vector<std::string>> nouns(spec.topics), verbs(spec.topics), adjectives(spec.topics);
    std::size_t next = 0;
    for (std::size_t t = 0; t < spec.topics; ++t) {
        for (std::size_t i = 0; i < spec.nouns_per_topic; ++i) nouns[t].push_back(lexicon[next++]);
        for (std::size_t i = 0; i < spec.verbs_per_topic; ++i) verbs[t].push_back(lexicon[next++]);
        for (std::size_t i = 0; i < spec.adjectives_per_topic; ++i) adjectives[t].push_back(lexicon[next++]);
    }
    const std::vector<std::string> determiners{"the", "a", "every", "some"};
    const std::vector<std::string> prepositions{"in", "on", "near", "with"};

    Rng rng(derive_seed(seed, 2));
    const auto topic_of = [&](std::size_t doc_topic) {
        return rng.bernoulli(spec.topic_purity) ? doc_topic : static_cast<std::size_t>(rng.below(spec.topics));
    };
    // Plural subjects (marked "s" after the noun) take the verb's "en" form.
    const auto noun_phrase = [&](std::size_t topic, std::vector<std::string>& out, bool with_adjective) {
        out.push_back(pick(determiners, rng));
        if (with_adjective) out.push_back(pick(adjectives[topic_of(topic)], rng));
        out.push_back(pick(nouns[topic_of(topic)], rng));
    };
    std::vector<TextDocument> docs;
    for (std::size_t d = 0; d < spec.documents; ++d) {
        const std::size_t topic = rng.below(spec.topics);
        TextDocument doc;
        for (std::size_t s = 0; s < spec.sentences_per_document; ++s) {
            std::vector<std::string> words;
            noun_phrase(topic, words, rng.bernoulli(0.5));
            const bool plural = rng.bernoulli(0.4);
            if (plural) words.push_back("s");
            std::string verb = pick(verbs[topic_of(topic)], rng);
            words.push_back(plural ? verb + "en" : verb);
            switch (rng.below(3)) {
            case 0:
                noun_phrase(topic, words, true);
                break;
            case 1:
                noun_phrase(topic, words, false);
                words.push_back(pick(prepositions, rng));
                noun_phrase(topic, words, rng.bernoulli(0.5));
                break;
            default:
                words.push_back(pick(prepositions, rng));
                noun_phrase(topic, words, false);
                break;
            }
            doc.sentences.push_back(join(words));
        }
        docs.push_back(std::move(doc));
    }
    return docs;
}

WsdWorld synth_wsd_world(const WsdWorldSpec& spec, std::uint64_t seed)
{
    if (spec.min_senses < 1 || spec.max_senses < spec.min_senses) throw ParameterError("wsd world: bad sense range");
    if (spec.max_senses > spec.domains) throw ParameterError("wsd world: need at least max_senses domains");
    if (spec.context_cues > spec.cues_per_domain) throw ParameterError("wsd world: too many cues per context");
    const std::size_t words_needed = spec.lemmas + spec.domains * spec.cues_per_domain + spec.fillers +
                                     spec.lemmas * spec.max_senses;
    const auto words = pseudo_words(words_needed, derive_seed(seed, 1));
    std::size_t next = 0;
    std::vector<std::string> lemmas(words.begin(), words.begin() + static_cast<std::ptrdiff_t>(spec.lemmas));
    next += spec.lemmas;
    std::vector<std::vector<std::string>> cues(spec.domains);
    for (auto& domain : cues)
        for (std::size_t i = 0; i < spec.cues_per_domain; ++i) domain.push_back(words[next++]);
    std::vector<std::string> fillers(words.begin() + static_cast<std::ptrdiff_t>(next),
                                     words.begin() + static_cast<std::ptrdiff_t>(next + spec.fillers));
    next += spec.fillers;

    Rng rng(derive_seed(seed, 2));
    WsdWorld world;
    struct LemmaInfo {
        std::string pos;
        std::vector<std::size_t> domains;
        std::vector<std::string> ids;
    };
    std::vector<LemmaInfo> info(spec.lemmas);
    const std::vector<std::string> kinds{"a kind of", "an act of", "a state of", "a part of"};
    for (std::size_t l = 0; l < spec.lemmas; ++l) {
        LemmaInfo& li = info[l];
        li.pos = rng.bernoulli(0.6) ? "n" : "v";
        const std::size_t senses = spec.min_senses + rng.below(spec.max_senses - spec.min_senses + 1);
        std::vector<std::size_t> domain_order(spec.domains);
        std::iota(domain_order.begin(), domain_order.end(), 0);
        rng.shuffle(domain_order);
        li.domains.assign(domain_order.begin(), domain_order.begin() + static_cast<std::ptrdiff_t>(senses));
        for (std::size_t s = 0; s < senses; ++s) {
            const auto& domain = cues[li.domains[s]];
            std::vector<std::size_t> cue_order(domain.size());
            std::iota(cue_order.begin(), cue_order.end(), 0);
            rng.shuffle(cue_order);
            std::vector<std::string> gloss{pick(kinds, rng)};
            for (std::size_t c = 0; c < spec.gloss_cues && c < cue_order.size(); ++c) gloss.push_back(domain[cue_order[c]]);
            gloss.push_back(words[next++]);
            const std::string id = lemmas[l] + "%" + li.pos + "." + std::to_string(s + 1);
            li.ids.push_back(id);
            world.inventory.add(lemmas[l], li.pos, {id, join(gloss)});
            world.text.push_back(lemmas[l] + " : " + join(gloss));
        }
    }

    const auto make_instance = [&](std::size_t l, const std::string& dataset) {
        const LemmaInfo& li = info[l];
        const std::size_t s = rng.below(li.ids.size());
        std::vector<std::string> tokens;
        for (std::size_t i = 0; i < spec.context_fillers; ++i) tokens.push_back(pick(fillers, rng));
        for (std::size_t i = 0; i < spec.context_cues; ++i) tokens.push_back(pick(cues[li.domains[s]], rng));
        rng.shuffle(tokens);
        const std::size_t target = rng.below(tokens.size() + 1);
        tokens.insert(tokens.begin() + static_cast<std::ptrdiff_t>(target), lemmas[l]);
        world.text.push_back(join(tokens));
        return WsdInstance{std::move(tokens), target, lemmas[l], li.pos, {li.ids[s]}, dataset};
    };
    for (std::size_t r = 0; r < spec.train_per_lemma; ++r)
        for (std::size_t l = 0; l < spec.lemmas; ++l) world.train.push_back(make_instance(l, "train"));
    for (std::size_t r = 0; r < spec.test_per_lemma; ++r)
        for (std::size_t l = 0; l < spec.lemmas; ++l) world.test.push_back(make_instance(l, "test"));
    return world;
}

MppWorld synth_mpp_world(const MppWorldSpec& spec, std::uint64_t seed)
{
    if (spec.replaceable > spec.base_words || spec.dim == 0 || spec.base_words == 0) {
        throw ParameterError("mpp world: inconsistent sizes");
    }
    const auto words = pseudo_words(spec.base_words * (1 + spec.synonyms_per_word), derive_seed(seed, 1));
    Rng rng(derive_seed(seed, 2));
    std::vector<double> direction(spec.dim);
    double norm = 0.0;
    for (double& v : direction) {
        v = rng.normal();
        norm += v * v;
    }
    for (double& v : direction) v /= std::sqrt(norm);

    MppWorld world;
    world.vectors.dim = spec.dim;
    std::size_t next = spec.base_words;
    for (std::size_t i = 0; i < spec.base_words; ++i) {
        std::vector<double> base(spec.dim);
        for (double& v : base) v = rng.normal();
        if (i < spec.replaceable) {
            for (std::size_t k = 0; k < spec.synonyms_per_word; ++k) {
                std::vector<double> syn(spec.dim);
                for (std::size_t j = 0; j < spec.dim; ++j)
                    syn[j] = base[j] + spec.offset * direction[j] + spec.noise * rng.normal();
                world.synonyms[words[i]].push_back(words[next]);
                world.vectors.vectors.emplace(words[next++], std::move(syn));
            }
        }
        world.vectors.vectors.emplace(words[i], std::move(base));
    }
    for (std::size_t p = 0; p < spec.paragraphs; ++p) {
        std::vector<std::string> para;
        for (std::size_t w = 0; w < spec.words_per_paragraph; ++w) para.push_back(words[rng.below(spec.base_words)]);
        world.paragraphs.push_back(join(para));
    }
    return world;
}

} // namespace tdlm
