#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace tdlm {

/// Reserved ids shared by every vocabulary.
enum SpecialId : std::int32_t {
    kPadId = 0,
    kUnkId = 1,
    kClsId = 2,
    kSepId = 3,
    kMaskId = 4,
    kTargetOpenId = 5,
    kTargetCloseId = 6,
};
inline constexpr std::int32_t kNumSpecials = 7;
inline constexpr std::string_view kEndOfWord = "</w>";

inline bool is_special(std::int32_t id) { return id >= 0 && id < kNumSpecials; }

/// Dense bidirectional token <-> id map with the specials at ids 0..6.
class Vocabulary {
public:
    Vocabulary();

    /// Appends a new surface form; duplicates are rejected.
    std::int32_t add(std::string token);
    std::optional<std::int32_t> find(std::string_view token) const;
    const std::string& token(std::int32_t id) const;
    std::size_t size() const { return tokens_.size(); }
    const std::vector<std::string>& tokens() const { return tokens_; }

    /// Content hash used to check that models share a vocabulary.
    std::uint64_t hash() const;

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::int32_t> ids_;
};

struct MergeRule {
    std::string left;
    std::string right;
    bool operator==(const MergeRule&) const = default;
};
using MergeRules = std::vector<MergeRule>;

struct TokenizerOptions {
    bool lowercase = true;
};

/// Learns merge rules by repeatedly merging the most frequent adjacent pair.
/// Ties go to the lexicographically smallest (left, right) pair.
std::pair<Vocabulary, MergeRules> bpe_train(const std::vector<std::string>& corpus,
                                            std::size_t target_vocab_size,
                                            const TokenizerOptions& options = {});

/// Byte-pair-encoding tokenizer. Immutable once built.
class Tokenizer {
public:
    Tokenizer() = default;
    Tokenizer(Vocabulary vocab, MergeRules merges, TokenizerOptions options = {});

    static Tokenizer train(const std::vector<std::string>& corpus, std::size_t target_vocab_size,
                           const TokenizerOptions& options = {});

    std::vector<std::int32_t> encode(std::string_view text) const;
    /// Encodes one pre-split word.
    std::vector<std::int32_t> encode_word(std::string_view word) const;
    /// Concatenates surface forms, dropping specials; throws IndexError on bad ids.
    std::string decode(std::span<const std::int32_t> ids) const;

    const Vocabulary& vocab() const { return vocab_; }
    const MergeRules& merges() const { return merges_; }
    const TokenizerOptions& options() const { return options_; }
    std::size_t vocab_size() const { return vocab_.size(); }

    /// Writes vocab.txt and merges.txt into dir.
    void save(const std::filesystem::path& dir) const;
    static Tokenizer load(const std::filesystem::path& dir, TokenizerOptions options = {});

private:
    struct PairHash {
        std::size_t operator()(const std::pair<std::string, std::string>& p) const;
    };
    Vocabulary vocab_;
    MergeRules merges_;
    TokenizerOptions options_;
    std::unordered_map<std::pair<std::string, std::string>, std::size_t, PairHash> ranks_;
};

} // namespace tdlm
