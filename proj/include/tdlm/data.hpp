#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "tdlm/batch.hpp"
#include "tdlm/parallel.hpp"
#include "tdlm/tokenizer.hpp"

namespace tdlm {

/// Raw corpus document: one entry per non-empty line.
struct TextDocument {
    std::vector<std::string> sentences;
};

/// Tokenized document; sentences are never empty.
struct Document {
    std::vector<std::vector<std::int32_t>> sentences;
};

/// Blank-line-separated documents, one sentence per line. CRLF is normalized
/// to LF first; malformed UTF-8 raises IoError with the byte offset.
std::vector<TextDocument> parse_corpus(std::string_view content);
std::vector<TextDocument> read_corpus(const std::filesystem::path& path);
std::vector<Document> tokenize_corpus(const std::vector<TextDocument>& docs, const Tokenizer& tokenizer);
std::vector<Document> load_corpus(const std::filesystem::path& path, const Tokenizer& tokenizer);
/// All sentences of all documents, in order.
std::vector<std::string> corpus_lines(const std::vector<TextDocument>& docs);
void write_corpus(const std::filesystem::path& path, const std::vector<TextDocument>& docs);

struct MaskingConfig {
    double mask_prob = 0.15;
    /// Of the selected positions: fraction replaced by MASK, by a random token;
    /// the remainder keep their token.
    double mask_fraction = 0.8;
    double random_fraction = 0.1;
    std::size_t vocab_size = 0;
};

/// Corrupts every non-special, non-pad position independently.
MaskedBatch dynamic_mask(const TokenBatch& batch, const MaskingConfig& config, std::uint64_t seed);
MaskedBatch dynamic_mask(std::span<const std::int32_t> tokens, double mask_prob, std::uint64_t seed,
                         std::size_t vocab_size);

/// Packs consecutive sentences of one document into [CLS] ... [SEP] sequences
/// of at most seq_len tokens; over-long sentences are truncated.
std::vector<std::vector<std::int32_t>> pack_sequences(const std::vector<Document>& docs, std::size_t seq_len);

/// Right-pads the selected sequences to their longest member.
TokenBatch collate(const std::vector<std::vector<std::int32_t>>& sequences, std::span<const std::size_t> which);

/// One epoch of seed-shuffled, unmasked batches.
std::vector<TokenBatch> make_batches(const std::vector<Document>& docs, std::size_t batch_size,
                                     std::size_t seq_len, std::uint64_t shuffle_seed);

struct BatchStreamConfig {
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
    MaskingConfig masking;
};

/// Endless stream of masked batches. Epoch e uses a shuffle derived from
/// (seed, e) and every batch gets fresh masking derived from its global index.
class BatchStream {
public:
    BatchStream(std::vector<std::vector<std::int32_t>> sequences, BatchStreamConfig config);

    MaskedBatch next();
    std::size_t epoch() const { return epoch_; }
    std::size_t batches_per_epoch() const;

private:
    void start_epoch();

    std::vector<std::vector<std::int32_t>> sequences_;
    BatchStreamConfig config_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
    std::size_t epoch_ = 0;
    std::uint64_t produced_ = 0;
};

/// Runs a BatchStream on a producer thread behind a bounded queue; the
/// consumed order is identical to calling BatchStream::next directly.
class PrefetchingBatchStream {
public:
    PrefetchingBatchStream(BatchStream stream, std::size_t capacity);
    ~PrefetchingBatchStream();
    PrefetchingBatchStream(const PrefetchingBatchStream&) = delete;
    PrefetchingBatchStream& operator=(const PrefetchingBatchStream&) = delete;

    MaskedBatch next();

private:
    std::unique_ptr<BatchStream> stream_;
    BoundedQueue<MaskedBatch> queue_;
    std::jthread producer_;
};

} // namespace tdlm
