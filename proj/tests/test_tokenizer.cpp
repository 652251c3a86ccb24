#include <doctest.h>

#include <fstream>

#include "helpers.hpp"
#include "tdlm/errors.hpp"
#include "tdlm/tokenizer.hpp"

using namespace tdlm;

namespace {

const std::vector<std::string> kCorpus{"low lower lowest", "low Low"};

} // namespace

TEST_CASE("BPE learns merges in frequency order with lexicographic tie-breaks")
{
    // Word counts: low x3, lower x1, lowest x1, each word ending in </w>. By hand:
    // tie (l,o)=(o,w)=5 -> "l" first; (lo,w)=5; (low,</w>)=3; (low,e)=2;
    // then the count-1 pairs in lexicographic order.
    const auto [vocab, merges] = bpe_train(kCorpus, 100);
    const MergeRules expected{{"l", "o"},    {"lo", "w"},         {"low", "</w>"},
                              {"low", "e"},  {"lowe", "r"},       {"lowe", "s"},
                              {"lower", "</w>"}, {"lowes", "t"},  {"lowest", "</w>"}};
    CHECK(merges == expected);
    // 7 specials + 8 base symbols + 9 merges; training stops when no pair remains.
    CHECK(vocab.size() == 24);
    CHECK(vocab.token(kMaskId) == "[MASK]");
    CHECK(*vocab.find("</w>") == 7);
    CHECK(*vocab.find("e") == 8);
    CHECK(*vocab.find("low</w>") == 17);
    CHECK(*vocab.find("lowest</w>") == 23);
}

TEST_CASE("target size caps the number of merges")
{
    const auto [vocab, merges] = bpe_train(kCorpus, 17);
    CHECK(vocab.size() == 17);
    CHECK(merges.size() == 2);
    CHECK_THROWS_AS(bpe_train(kCorpus, 15), ParameterError);
    CHECK_THROWS_AS(bpe_train({"   "}, 100), ValidationError);
}

TEST_CASE("encode applies merges by rank and maps unknown symbols to UNK")
{
    const Tokenizer tok = Tokenizer::train(kCorpus, 100);
    CHECK(tok.encode("lowest LOW") == std::vector<std::int32_t>{23, 17});
    // No (low,s) rule; 'z' never occurs in training.
    CHECK(tok.encode("lows") == std::vector<std::int32_t>{16, 12, 7});
    CHECK(tok.encode("lowz") == std::vector<std::int32_t>{16, kUnkId, 7});
    CHECK(tok.encode("") .empty());
    CHECK(tok.decode(tok.encode("lower lowest low")) == "lower lowest low");
    // Specials are skipped when decoding.
    CHECK(tok.decode(std::vector<std::int32_t>{kClsId, 23, kSepId}) == "lowest");
}

TEST_CASE("case is preserved when lowercasing is off")
{
    TokenizerOptions keep;
    keep.lowercase = false;
    const Tokenizer tok = Tokenizer::train(kCorpus, 100, keep);
    CHECK(tok.vocab().find("L").has_value());
    CHECK(tok.encode("Low").front() != tok.encode("low").front());
}

TEST_CASE("save and load reproduce the tokenizer")
{
    test::TempDir dir("tok");
    const Tokenizer tok = Tokenizer::train(kCorpus, 100);
    tok.save(dir.path());
    const Tokenizer back = Tokenizer::load(dir.path());
    CHECK(back.vocab().tokens() == tok.vocab().tokens());
    CHECK(back.merges() == tok.merges());
    CHECK(back.vocab().hash() == tok.vocab().hash());
    CHECK(back.encode("lowest lower") == tok.encode("lowest lower"));

    std::ofstream(dir / "vocab.txt") << "nonsense\n";
    CHECK_THROWS_AS(Tokenizer::load(dir.path()), FormatError);
    CHECK_THROWS_AS(Tokenizer::load(dir / "missing"), IoError);
}

TEST_CASE("vocabulary hash depends on content and order")
{
    Vocabulary a, b;
    a.add("x");
    a.add("y");
    b.add("y");
    b.add("x");
    CHECK(a.hash() != b.hash());
    Vocabulary c;
    c.add("x");
    c.add("y");
    CHECK(a.hash() == c.hash());
    CHECK_THROWS(a.add("x"));
}

TEST_CASE("training is deterministic and multilingual text round-trips")
{
    const std::vector<std::string> corpus{"straße straße über", "naïve café café", "ünïcödé"};
    const Tokenizer a = Tokenizer::train(corpus, 60);
    const Tokenizer b = Tokenizer::train(corpus, 60);
    CHECK(a.merges() == b.merges());
    CHECK(a.decode(a.encode("Café über straße")) == "café über straße");
}
