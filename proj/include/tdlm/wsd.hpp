#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tdlm/training.hpp"

namespace tdlm {

struct Sense {
    std::string id;
    std::string gloss;
};

/// (lemma, part of speech) -> ordered senses.
class SenseInventory {
public:
    /// Rejects duplicate sense ids and empty glosses.
    void add(const std::string& lemma, const std::string& pos, Sense sense);
    /// Senses of (lemma, pos); an empty pos returns the union over all parts of speech.
    std::vector<Sense> lookup(const std::string& lemma, const std::string& pos) const;
    bool contains_sense(const std::string& sense_id) const { return ids_.contains(sense_id); }
    std::size_t lemma_count() const { return entries_.size(); }
    std::size_t sense_count() const { return ids_.size(); }
    bool empty() const { return entries_.empty(); }
    const std::map<std::pair<std::string, std::string>, std::vector<Sense>>& entries() const { return entries_; }

private:
    std::map<std::pair<std::string, std::string>, std::vector<Sense>> entries_;
    std::set<std::string> ids_;
};

/// One {"lemma","pos","sense_id","gloss"} object per row.
SenseInventory parse_sense_inventory(const std::vector<nlohmann::json>& rows);
SenseInventory load_sense_inventory(const std::filesystem::path& path);
std::vector<nlohmann::json> sense_inventory_rows(const SenseInventory& inventory);

struct WsdInstance {
    std::vector<std::string> tokens;
    std::size_t target_index = 0;
    std::string lemma;
    std::string pos;
    std::vector<std::string> gold;
    std::string dataset;
};

std::vector<WsdInstance> parse_wsd_instances(const std::vector<nlohmann::json>& rows);
std::vector<WsdInstance> load_wsd_instances(const std::filesystem::path& path);
nlohmann::json to_json(const WsdInstance& instance);

struct ContextGlossPair {
    std::vector<std::int32_t> ids;
    /// 1 positive, 0 negative; meaningless on pad slots.
    int label = 0;
    bool pad = false;
    std::string sense_id;
};

struct CandidateSet {
    std::vector<ContextGlossPair> slots;

    std::size_t real_count() const;
    std::vector<std::size_t> real_slots() const;
};

inline constexpr std::size_t kDefaultCandidates = 8;
inline constexpr std::size_t kMaxPairLength = 160;

/// [CLS] left [TGT] target [/TGT] right [SEP] lemma : gloss [SEP]; the context
/// is trimmed around the target first when the pair exceeds max_len.
std::vector<std::int32_t> encode_context_gloss(const Tokenizer& tokenizer, const WsdInstance& instance,
                                               const std::string& gloss, std::size_t max_len = kMaxPairLength);

/// K == 0 keeps every sense (inference). With more than K senses, K are
/// sampled with all gold senses kept (gold beyond K rotates by seed).
CandidateSet build_candidate_set(const WsdInstance& instance, const SenseInventory& inventory,
                                 const Tokenizer& tokenizer, std::size_t k, std::uint64_t seed,
                                 std::size_t max_len = kMaxPairLength);

/// Collates the real slots into one right-padded batch.
TokenBatch candidate_batch(const CandidateSet& set);

struct LmgcScores {
    /// Positive-class probability per real slot (in slot order).
    Tensor probs;
    std::vector<std::size_t> real_slots;
    /// One entry per slot; pads hold nullopt.
    std::vector<std::optional<double>> per_slot() const;
    std::size_t slot_count = 0;
};

LmgcScores lmgc_forward(Tape& tape, const Model& model, const CandidateSet& set,
                        const ForwardOptions& options = {});

/// Mean focal loss over real slots.
Tensor lmgc_loss(Tape& tape, const LmgcScores& scores, const CandidateSet& set, double gamma, double alpha,
                 bool paper_literal = false);

enum class MlmReduction { sum, mean };

struct LmgcmTerms {
    Tensor total;
    Tensor focal;
    Tensor mlm;  // undefined when nothing was masked
    std::size_t masked = 0;
    MaskedBatch corrupted;
};

/// Focal loss on the clean pairs plus MLM cross-entropy on an independently
/// corrupted copy; both passes share parameters.
LmgcmTerms lmgcm_loss(Tape& tape, const Model& model, const CandidateSet& set, std::uint64_t mask_seed,
                      double gamma, double alpha, MlmReduction reduction = MlmReduction::sum,
                      const ForwardOptions& options = {}, double mask_prob = 0.15);

/// Argmax over real slots; ties go to the lowest slot.
std::string predict_sense(const std::vector<std::optional<double>>& probs, const CandidateSet& set);

struct WsdScore {
    std::string dataset;
    std::size_t instances = 0;
    std::size_t correct = 0;
    double f1 = 0.0;
};

struct WsdReport {
    std::vector<WsdScore> datasets;
    WsdScore pooled;
    std::size_t missing_lemmas = 0;
};

WsdReport evaluate_wsd(const Model& model, const std::vector<WsdInstance>& instances,
                       const SenseInventory& inventory, const Tokenizer& tokenizer);
void write_wsd_report(const std::filesystem::path& path, const WsdReport& report);

enum class WsdObjective { lmgc, lmgcm };

struct WsdTrainConfig {
    WsdObjective objective = WsdObjective::lmgc;
    std::size_t epochs = 3;
    std::size_t candidates = kDefaultCandidates;
    std::size_t instances_per_step = 4;
    double gamma = 2.0;
    double alpha = 0.25;
    bool paper_literal_focal = false;
    MlmReduction mlm_reduction = MlmReduction::sum;
    double mask_prob = 0.15;
    AdamWConfig optim{2e-5, 0.9, 0.999, 1e-8, 0.01};
    std::uint64_t seed = 0;
};

struct WsdEpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
};

/// Adds the 2-class head when absent and trains on candidate sets resampled each epoch.
std::vector<WsdEpochRecord> train_wsd(Model& model, const std::vector<WsdInstance>& instances,
                                      const SenseInventory& inventory, const Tokenizer& tokenizer,
                                      const WsdTrainConfig& config);

/// Held-out MLM batches built from every real candidate pair, masked once with mask_seed.
std::vector<MaskedBatch> wsd_mlm_batches(const std::vector<WsdInstance>& instances,
                                         const SenseInventory& inventory, const Tokenizer& tokenizer,
                                         std::uint64_t mask_seed, std::size_t pairs_per_batch = 16,
                                         double mask_prob = 0.15);

} // namespace tdlm
