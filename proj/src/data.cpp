#include "tdlm/data.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include "tdlm/errors.hpp"
#include "tdlm/random.hpp"
#include "tdlm/text.hpp"

namespace tdlm {

std::vector<TextDocument> parse_corpus(std::string_view content)
{
    if (auto bad = text::find_invalid_utf8(content)) {
        throw IoError("corpus: malformed UTF-8 at byte offset " + std::to_string(*bad));
    }
    const std::string normalized = text::normalize_newlines(content);
    std::vector<TextDocument> docs;
    TextDocument current;
    std::istringstream in(normalized);
    std::string line;
    while (std::getline(in, line)) {
        const bool blank = text::split_whitespace(line).empty();
        if (blank) {
            if (!current.sentences.empty()) docs.push_back(std::move(current));
            current = {};
        } else {
            current.sentences.push_back(line);
        }
    }
    if (!current.sentences.empty()) docs.push_back(std::move(current));
    return docs;
}

std::vector<TextDocument> read_corpus(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("corpus: cannot open " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_corpus(buffer.str());
}

std::vector<Document> tokenize_corpus(const std::vector<TextDocument>& docs, const Tokenizer& tokenizer)
{
    std::vector<Document> out;
    out.reserve(docs.size());
    for (const auto& doc : docs) {
        Document d;
        for (const auto& sentence : doc.sentences) {
            auto ids = tokenizer.encode(sentence);
            if (!ids.empty()) d.sentences.push_back(std::move(ids));
        }
        if (!d.sentences.empty()) out.push_back(std::move(d));
    }
    return out;
}

std::vector<Document> load_corpus(const std::filesystem::path& path, const Tokenizer& tokenizer)
{
    return tokenize_corpus(read_corpus(path), tokenizer);
}

std::vector<std::string> corpus_lines(const std::vector<TextDocument>& docs)
{
    std::vector<std::string> lines;
    for (const auto& d : docs) lines.insert(lines.end(), d.sentences.begin(), d.sentences.end());
    return lines;
}

void write_corpus(const std::filesystem::path& path, const std::vector<TextDocument>& docs)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("corpus: cannot write " + path.string());
    for (std::size_t i = 0; i < docs.size(); ++i) {
        if (i) out << '\n';
        for (const auto& s : docs[i].sentences) out << s << '\n';
    }
}

MaskedBatch dynamic_mask(const TokenBatch& batch, const MaskingConfig& config, std::uint64_t seed)
{
    if (!(config.mask_prob > 0.0 && config.mask_prob < 1.0)) {
        throw ParameterError("dynamic_mask: mask probability must be in (0, 1)");
    }
    if (config.mask_fraction < 0.0 || config.random_fraction < 0.0 ||
        config.mask_fraction + config.random_fraction > 1.0) {
        throw ParameterError("dynamic_mask: replacement fractions must be non-negative and sum to at most 1");
    }
    const bool can_randomize = config.vocab_size > static_cast<std::size_t>(kNumSpecials);
    if (config.random_fraction > 0.0 && !can_randomize) {
        throw ParameterError("dynamic_mask: random replacement needs the vocabulary size");
    }
    MaskedBatch out;
    static_cast<TokenBatch&>(out) = batch;
    if (out.pad.empty()) out.pad.assign(batch.tokens(), false);
    out.targets.assign(batch.tokens(), kIgnoreTarget);
    out.seed = seed;

    Rng rng(seed);
    bool any_eligible = false;
    for (std::size_t i = 0; i < out.ids.size(); ++i) {
        const std::int32_t original = out.ids[i];
        if (out.pad[i] || is_special(original)) continue;
        any_eligible = true;
        if (!rng.bernoulli(config.mask_prob)) continue;
        out.targets[i] = original;
        const double u = rng.uniform();
        if (u < config.mask_fraction) {
            out.ids[i] = kMaskId;
        } else if (u < config.mask_fraction + config.random_fraction) {
            const auto span = config.vocab_size - static_cast<std::size_t>(kNumSpecials);
            out.ids[i] = kNumSpecials + static_cast<std::int32_t>(rng.below(span));
        }
    }
    out.nothing_maskable = !any_eligible;
    return out;
}

MaskedBatch dynamic_mask(std::span<const std::int32_t> tokens, double mask_prob, std::uint64_t seed,
                         std::size_t vocab_size)
{
    TokenBatch batch;
    batch.batch = 1;
    batch.seq = tokens.size();
    batch.ids.assign(tokens.begin(), tokens.end());
    batch.pad.assign(tokens.size(), false);
    MaskingConfig config;
    config.mask_prob = mask_prob;
    config.vocab_size = vocab_size;
    return dynamic_mask(batch, config, seed);
}

std::vector<std::vector<std::int32_t>> pack_sequences(const std::vector<Document>& docs, std::size_t seq_len)
{
    if (seq_len < 3) throw ParameterError("pack_sequences: sequence length must leave room for CLS/SEP");
    const std::size_t budget = seq_len - 2;
    std::vector<std::vector<std::int32_t>> out;
    for (const auto& doc : docs) {
        std::vector<std::int32_t> current{kClsId};
        for (const auto& sentence : doc.sentences) {
            const std::size_t take = std::min(sentence.size(), budget);
            if (current.size() > 1 && current.size() - 1 + take > budget) {
                current.push_back(kSepId);
                out.push_back(std::move(current));
                current = {kClsId};
            }
            current.insert(current.end(), sentence.begin(), sentence.begin() + static_cast<std::ptrdiff_t>(take));
        }
        if (current.size() > 1) {
            current.push_back(kSepId);
            out.push_back(std::move(current));
        }
    }
    return out;
}

TokenBatch collate(const std::vector<std::vector<std::int32_t>>& sequences, std::span<const std::size_t> which)
{
    TokenBatch batch;
    batch.batch = which.size();
    for (std::size_t i : which) batch.seq = std::max(batch.seq, sequences.at(i).size());
    batch.ids.assign(batch.tokens(), kPadId);
    batch.pad.assign(batch.tokens(), true);
    for (std::size_t b = 0; b < which.size(); ++b) {
        const auto& s = sequences[which[b]];
        for (std::size_t j = 0; j < s.size(); ++j) {
            batch.ids[b * batch.seq + j] = s[j];
            batch.pad[b * batch.seq + j] = false;
        }
    }
    return batch;
}

std::vector<TokenBatch> make_batches(const std::vector<Document>& docs, std::size_t batch_size,
                                     std::size_t seq_len, std::uint64_t shuffle_seed)
{
    if (batch_size == 0) throw ParameterError("make_batches: batch size must be at least 1");
    const auto sequences = pack_sequences(docs, seq_len);
    std::vector<std::size_t> order(sequences.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(shuffle_seed);
    rng.shuffle(order);
    std::vector<TokenBatch> batches;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        const std::size_t end = std::min(order.size(), start + batch_size);
        batches.push_back(collate(sequences, std::span(order).subspan(start, end - start)));
    }
    return batches;
}

BatchStream::BatchStream(std::vector<std::vector<std::int32_t>> sequences, BatchStreamConfig config)
    : sequences_(std::move(sequences)), config_(config)
{
    if (sequences_.empty()) throw ValidationError("batch stream: no sequences");
    if (config_.batch_size == 0) throw ParameterError("batch stream: batch size must be at least 1");
    start_epoch();
}

std::size_t BatchStream::batches_per_epoch() const
{
    return (sequences_.size() + config_.batch_size - 1) / config_.batch_size;
}

void BatchStream::start_epoch()
{
    order_.resize(sequences_.size());
    std::iota(order_.begin(), order_.end(), 0);
    Rng rng(derive_seed(config_.seed, epoch_));
    rng.shuffle(order_);
    cursor_ = 0;
}

MaskedBatch BatchStream::next()
{
    if (cursor_ >= order_.size()) {
        ++epoch_;
        start_epoch();
    }
    const std::size_t end = std::min(order_.size(), cursor_ + config_.batch_size);
    const TokenBatch batch = collate(sequences_, std::span(order_).subspan(cursor_, end - cursor_));
    cursor_ = end;
    const std::uint64_t mask_seed = derive_seed(config_.seed ^ 0x6d61736bULL, produced_++);
    return dynamic_mask(batch, config_.masking, mask_seed);
}

PrefetchingBatchStream::PrefetchingBatchStream(BatchStream stream, std::size_t capacity)
    : stream_(std::make_unique<BatchStream>(std::move(stream))), queue_(capacity)
{
    producer_ = std::jthread([this](std::stop_token stop) {
        while (!stop.stop_requested()) queue_.push(stream_->next());
    });
}

PrefetchingBatchStream::~PrefetchingBatchStream()
{
    producer_.request_stop();
    queue_.close();
}

MaskedBatch PrefetchingBatchStream::next()
{
    auto item = queue_.pop();
    if (!item) throw StateError("batch stream closed");
    return std::move(*item);
}

} // namespace tdlm
