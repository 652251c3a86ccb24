#include "tdlm/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <map>
#include <set>

#include "tdlm/errors.hpp"
#include "tdlm/text.hpp"

namespace tdlm {

namespace {

const std::vector<std::string> kSpecialNames = {"[PAD]", "[UNK]", "[CLS]", "[SEP]",
                                                "[MASK]", "[TGT]", "[/TGT]"};

// Initial symbols of a word: its code points followed by the end-of-word sentinel.
std::vector<std::string> word_symbols(std::string_view word)
{
    std::vector<std::string> symbols;
    for (char32_t cp : text::decode_utf8(word)) symbols.push_back(text::encode_utf8(cp));
    symbols.emplace_back(kEndOfWord);
    return symbols;
}

void merge_pair(std::vector<std::string>& symbols, const std::string& left, const std::string& right)
{
    std::vector<std::string> merged;
    merged.reserve(symbols.size());
    for (std::size_t i = 0; i < symbols.size(); ++i) {
        if (i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
            merged.push_back(left + right);
            ++i;
        } else {
            merged.push_back(std::move(symbols[i]));
        }
    }
    symbols = std::move(merged);
}

} // namespace

Vocabulary::Vocabulary()
{
    for (const auto& name : kSpecialNames) add(name);
}

std::int32_t Vocabulary::add(std::string token)
{
    if (ids_.contains(token)) throw ValidationError("vocabulary: duplicate token '" + token + "'");
    const auto id = static_cast<std::int32_t>(tokens_.size());
    ids_.emplace(token, id);
    tokens_.push_back(std::move(token));
    return id;
}

std::optional<std::int32_t> Vocabulary::find(std::string_view token) const
{
    auto it = ids_.find(std::string(token));
    if (it == ids_.end()) return std::nullopt;
    return it->second;
}

const std::string& Vocabulary::token(std::int32_t id) const
{
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
        throw IndexError("vocabulary: id " + std::to_string(id) + " outside vocabulary of size " +
                         std::to_string(tokens_.size()));
    }
    return tokens_[static_cast<std::size_t>(id)];
}

std::uint64_t Vocabulary::hash() const
{
    std::uint64_t h = text::fnv1a("");
    for (const auto& t : tokens_) {
        h = text::fnv1a(t, h);
        h = text::fnv1a("\n", h);
    }
    return h;
}

std::pair<Vocabulary, MergeRules> bpe_train(const std::vector<std::string>& corpus,
                                            std::size_t target_vocab_size,
                                            const TokenizerOptions& options)
{
    std::map<std::string, std::size_t> word_counts;
    for (const auto& line : corpus) {
        const std::string normalized = options.lowercase ? text::to_lower(line) : line;
        for (auto& word : text::split_whitespace(normalized)) ++word_counts[word];
    }
    if (word_counts.empty()) throw ValidationError("bpe_train: empty corpus");

    std::vector<std::pair<std::vector<std::string>, std::size_t>> words;
    std::set<std::string> base;
    for (const auto& [word, count] : word_counts) {
        auto symbols = word_symbols(word);
        base.insert(symbols.begin(), symbols.end());
        words.emplace_back(std::move(symbols), count);
    }
    if (target_vocab_size <= base.size() + kNumSpecials) {
        throw ParameterError("bpe_train: target vocabulary " + std::to_string(target_vocab_size) +
                             " must exceed " + std::to_string(base.size() + kNumSpecials) +
                             " (base symbols + specials)");
    }

    Vocabulary vocab;
    for (const auto& symbol : base) vocab.add(symbol);
    MergeRules merges;
    while (vocab.size() < target_vocab_size) {
        std::map<std::pair<std::string, std::string>, std::size_t> pair_counts;
        for (const auto& [symbols, count] : words)
            for (std::size_t i = 0; i + 1 < symbols.size(); ++i)
                pair_counts[{symbols[i], symbols[i + 1]}] += count;

        // std::map iterates in lexicographic order, so the first maximum wins ties.
        const std::pair<std::string, std::string>* best = nullptr;
        std::size_t best_count = 0;
        for (const auto& [pair, count] : pair_counts) {
            if (count > best_count && !vocab.find(pair.first + pair.second)) {
                best = &pair;
                best_count = count;
            }
        }
        if (best == nullptr) break;
        const MergeRule rule{best->first, best->second};
        vocab.add(rule.left + rule.right);
        for (auto& [symbols, count] : words) merge_pair(symbols, rule.left, rule.right);
        merges.push_back(rule);
    }
    return {std::move(vocab), std::move(merges)};
}

std::size_t Tokenizer::PairHash::operator()(const std::pair<std::string, std::string>& p) const
{
    return static_cast<std::size_t>(text::fnv1a(p.second, text::fnv1a(p.first + '\x1f')));
}

Tokenizer::Tokenizer(Vocabulary vocab, MergeRules merges, TokenizerOptions options)
    : vocab_(std::move(vocab)), merges_(std::move(merges)), options_(options)
{
    for (std::size_t i = 0; i < merges_.size(); ++i) {
        ranks_.emplace(std::make_pair(merges_[i].left, merges_[i].right), i);
    }
}

Tokenizer Tokenizer::train(const std::vector<std::string>& corpus, std::size_t target_vocab_size,
                           const TokenizerOptions& options)
{
    auto [vocab, merges] = bpe_train(corpus, target_vocab_size, options);
    return Tokenizer(std::move(vocab), std::move(merges), options);
}

std::vector<std::int32_t> Tokenizer::encode_word(std::string_view word) const
{
    auto symbols = word_symbols(word);
    while (symbols.size() > 1) {
        std::size_t best_rank = std::numeric_limits<std::size_t>::max();
        std::size_t best_at = 0;
        for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
            auto it = ranks_.find({symbols[i], symbols[i + 1]});
            if (it != ranks_.end() && it->second < best_rank) {
                best_rank = it->second;
                best_at = i;
            }
        }
        if (best_rank == std::numeric_limits<std::size_t>::max()) break;
        const std::string left = symbols[best_at];
        const std::string right = symbols[best_at + 1];
        merge_pair(symbols, left, right);
    }
    std::vector<std::int32_t> ids;
    ids.reserve(symbols.size());
    for (const auto& s : symbols) {
        auto id = vocab_.find(s);
        // Unknown symbols and any surface form colliding with a special map to UNK.
        ids.push_back(id && !is_special(*id) ? *id : kUnkId);
    }
    return ids;
}

std::vector<std::int32_t> Tokenizer::encode(std::string_view text_in) const
{
    const std::string normalized = options_.lowercase ? text::to_lower(text_in) : std::string(text_in);
    std::vector<std::int32_t> ids;
    for (const auto& word : text::split_whitespace(normalized)) {
        auto piece = encode_word(word);
        ids.insert(ids.end(), piece.begin(), piece.end());
    }
    return ids;
}

std::string Tokenizer::decode(std::span<const std::int32_t> ids) const
{
    std::string joined;
    for (std::int32_t id : ids) {
        const std::string& token = vocab_.token(id);
        if (is_special(id)) continue;
        joined += token;
    }
    std::string out;
    std::size_t pos = 0;
    while (pos < joined.size()) {
        const std::size_t hit = joined.find(kEndOfWord, pos);
        if (hit == std::string::npos) {
            out.append(joined, pos, std::string::npos);
            break;
        }
        out.append(joined, pos, hit - pos);
        out += ' ';
        pos = hit + kEndOfWord.size();
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out;
}

void Tokenizer::save(const std::filesystem::path& dir) const
{
    std::filesystem::create_directories(dir);
    std::ofstream vocab_out(dir / "vocab.txt", std::ios::binary);
    std::ofstream merges_out(dir / "merges.txt", std::ios::binary);
    if (!vocab_out || !merges_out) throw IoError("tokenizer: cannot write into " + dir.string());
    for (const auto& token : vocab_.tokens()) vocab_out << token << '\n';
    for (const auto& rule : merges_) merges_out << rule.left << ' ' << rule.right << '\n';
}

Tokenizer Tokenizer::load(const std::filesystem::path& dir, TokenizerOptions options)
{
    std::ifstream vocab_in(dir / "vocab.txt", std::ios::binary);
    std::ifstream merges_in(dir / "merges.txt", std::ios::binary);
    if (!vocab_in || !merges_in) throw IoError("tokenizer: missing vocab.txt/merges.txt in " + dir.string());
    Vocabulary vocab;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(vocab_in, line)) {
        if (line_no < static_cast<std::size_t>(kNumSpecials)) {
            if (line != kSpecialNames[line_no]) {
                throw FormatError("vocab.txt line " + std::to_string(line_no + 1) +
                                  ": expected special token " + kSpecialNames[line_no]);
            }
        } else {
            vocab.add(line);
        }
        ++line_no;
    }
    MergeRules merges;
    line_no = 0;
    while (std::getline(merges_in, line)) {
        ++line_no;
        const auto space = line.find(' ');
        if (space == std::string::npos || space == 0 || space + 1 >= line.size()) {
            throw FormatError("merges.txt line " + std::to_string(line_no) + ": expected 'left right'");
        }
        merges.push_back({line.substr(0, space), line.substr(space + 1)});
    }
    return Tokenizer(std::move(vocab), std::move(merges), options);
}

} // namespace tdlm
