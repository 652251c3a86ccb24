#include "tdlm/wsd.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>

#include "tdlm/jsonl.hpp"
#include "tdlm/random.hpp"

namespace tdlm {

namespace {

std::string required_string(const nlohmann::json& row, const char* key, std::size_t line)
{
    const auto it = row.find(key);
    if (it == row.end() || !it->is_string()) {
        throw FormatError("line " + std::to_string(line) + ": missing string field '" + key + "'");
    }
    return it->get<std::string>();
}

} // namespace

void SenseInventory::add(const std::string& lemma, const std::string& pos, Sense sense)
{
    if (lemma.empty()) throw FormatError("sense inventory: empty lemma");
    if (sense.id.empty()) throw FormatError("sense inventory: empty sense id for lemma '" + lemma + "'");
    if (sense.gloss.find_first_not_of(" \t\r\n") == std::string::npos) {
        throw FormatError("sense inventory: empty gloss for sense '" + sense.id + "'");
    }
    if (!ids_.insert(sense.id).second) throw FormatError("sense inventory: duplicate sense id '" + sense.id + "'");
    entries_[{lemma, pos}].push_back(std::move(sense));
}

std::vector<Sense> SenseInventory::lookup(const std::string& lemma, const std::string& pos) const
{
    if (!pos.empty()) {
        const auto it = entries_.find({lemma, pos});
        return it == entries_.end() ? std::vector<Sense>{} : it->second;
    }
    std::vector<Sense> all;
    for (auto it = entries_.lower_bound({lemma, ""}); it != entries_.end() && it->first.first == lemma; ++it)
        all.insert(all.end(), it->second.begin(), it->second.end());
    return all;
}

SenseInventory parse_sense_inventory(const std::vector<nlohmann::json>& rows)
{
    SenseInventory inventory;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& row = rows[i];
        const std::size_t line = i + 1;
        if (!row.is_object()) throw FormatError("line " + std::to_string(line) + ": expected an object");
        const auto lemma = required_string(row, "lemma", line);
        const auto pos = row.contains("pos") && row["pos"].is_string() ? row["pos"].get<std::string>() : "";
        Sense sense{required_string(row, "sense_id", line), required_string(row, "gloss", line)};
        try {
            inventory.add(lemma, pos, std::move(sense));
        } catch (const FormatError& e) {
            throw FormatError("line " + std::to_string(line) + ": " + e.what());
        }
    }
    if (inventory.empty()) throw FormatError("sense inventory is empty");
    return inventory;
}

SenseInventory load_sense_inventory(const std::filesystem::path& path)
{
    try {
        return parse_sense_inventory(read_jsonl(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

std::vector<nlohmann::json> sense_inventory_rows(const SenseInventory& inventory)
{
    std::vector<nlohmann::json> rows;
    for (const auto& [key, senses] : inventory.entries())
        for (const auto& s : senses)
            rows.push_back({{"lemma", key.first}, {"pos", key.second}, {"sense_id", s.id}, {"gloss", s.gloss}});
    return rows;
}

std::vector<WsdInstance> parse_wsd_instances(const std::vector<nlohmann::json>& rows)
{
    std::vector<WsdInstance> out;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& row = rows[i];
        const std::size_t line = i + 1;
        try {
            WsdInstance inst;
            inst.tokens = row.at("tokens").get<std::vector<std::string>>();
            inst.target_index = row.at("target_index").get<std::size_t>();
            inst.lemma = row.at("lemma").get<std::string>();
            inst.pos = row.value("pos", "");
            inst.gold = row.value("gold", std::vector<std::string>{});
            inst.dataset = row.value("dataset", "all");
            if (inst.target_index >= inst.tokens.size()) {
                throw FormatError("target_index " + std::to_string(inst.target_index) + " outside " +
                                  std::to_string(inst.tokens.size()) + " tokens");
            }
            out.push_back(std::move(inst));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("line " + std::to_string(line) + ": " + e.what());
        } catch (const FormatError& e) {
            throw FormatError("line " + std::to_string(line) + ": " + e.what());
        }
    }
    return out;
}

std::vector<WsdInstance> load_wsd_instances(const std::filesystem::path& path)
{
    try {
        return parse_wsd_instances(read_jsonl(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

nlohmann::json to_json(const WsdInstance& instance)
{
    return {{"tokens", instance.tokens}, {"target_index", instance.target_index}, {"lemma", instance.lemma},
            {"pos", instance.pos},       {"gold", instance.gold},                 {"dataset", instance.dataset}};
}

std::size_t CandidateSet::real_count() const
{
    return static_cast<std::size_t>(std::count_if(slots.begin(), slots.end(), [](const auto& s) { return !s.pad; }));
}

std::vector<std::size_t> CandidateSet::real_slots() const
{
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < slots.size(); ++i)
        if (!slots[i].pad) out.push_back(i);
    return out;
}

std::vector<std::int32_t> encode_context_gloss(const Tokenizer& tokenizer, const WsdInstance& instance,
                                               const std::string& gloss, std::size_t max_len)
{
    if (instance.target_index >= instance.tokens.size()) throw ValidationError("wsd instance: target outside context");
    const std::span<const std::string> words(instance.tokens);
    std::vector<std::vector<std::int32_t>> pieces;
    for (const auto& w : words) pieces.push_back(tokenizer.encode(w));
    const auto lemma = tokenizer.encode(instance.lemma);
    const auto colon = tokenizer.encode(":");
    auto gloss_ids = tokenizer.encode(gloss);

    const std::size_t fixed = 1 + 2 + 1 + lemma.size() + colon.size() + 1;
    std::size_t left = instance.target_index, right = instance.target_index + 1;
    std::size_t lo = 0, hi = words.size();
    const auto context_len = [&] {
        std::size_t n = 0;
        for (std::size_t i = lo; i < hi; ++i) n += pieces[i].size();
        return n;
    };
    // Drop context words farthest from the target until the pair fits.
    while (fixed + context_len() + gloss_ids.size() > max_len && (lo < left || hi > right)) {
        if (left - lo >= hi - right) ++lo;
        else --hi;
    }
    if (fixed + context_len() > max_len) throw ValidationError("wsd pair: target and markers exceed max length");
    const std::size_t room = max_len - fixed - context_len();
    if (gloss_ids.size() > room) gloss_ids.resize(room);

    std::vector<std::int32_t> ids{kClsId};
    for (std::size_t i = lo; i < hi; ++i) {
        if (i == instance.target_index) ids.push_back(kTargetOpenId);
        ids.insert(ids.end(), pieces[i].begin(), pieces[i].end());
        if (i == instance.target_index) ids.push_back(kTargetCloseId);
    }
    ids.push_back(kSepId);
    ids.insert(ids.end(), lemma.begin(), lemma.end());
    ids.insert(ids.end(), colon.begin(), colon.end());
    ids.insert(ids.end(), gloss_ids.begin(), gloss_ids.end());
    ids.push_back(kSepId);
    return ids;
}

CandidateSet build_candidate_set(const WsdInstance& instance, const SenseInventory& inventory,
                                 const Tokenizer& tokenizer, std::size_t k, std::uint64_t seed, std::size_t max_len)
{
    const auto senses = inventory.lookup(instance.lemma, instance.pos);
    if (senses.empty()) throw DataError("lemma '" + instance.lemma + "/" + instance.pos + "' not in sense inventory");
    const auto is_gold = [&](const std::string& id) {
        return std::find(instance.gold.begin(), instance.gold.end(), id) != instance.gold.end();
    };
    for (const auto& g : instance.gold) {
        if (std::none_of(senses.begin(), senses.end(), [&](const Sense& s) { return s.id == g; })) {
            throw DataError("gold sense '" + g + "' is not a sense of '" + instance.lemma + "'");
        }
    }

    std::vector<std::size_t> chosen(senses.size());
    std::iota(chosen.begin(), chosen.end(), 0);
    if (k != 0 && senses.size() > k) {
        Rng rng(seed);
        std::vector<std::size_t> gold, other;
        for (std::size_t i = 0; i < senses.size(); ++i) (is_gold(senses[i].id) ? gold : other).push_back(i);
        rng.shuffle(gold);
        rng.shuffle(other);
        chosen.assign(gold.begin(), gold.begin() + static_cast<std::ptrdiff_t>(std::min(gold.size(), k)));
        for (std::size_t i = 0; chosen.size() < k; ++i) chosen.push_back(other[i]);
        std::sort(chosen.begin(), chosen.end());
    }

    CandidateSet set;
    for (std::size_t i : chosen) {
        ContextGlossPair pair;
        pair.ids = encode_context_gloss(tokenizer, instance, senses[i].gloss, max_len);
        pair.label = is_gold(senses[i].id) ? 1 : 0;
        pair.sense_id = senses[i].id;
        set.slots.push_back(std::move(pair));
    }
    while (k != 0 && set.slots.size() < k) {
        ContextGlossPair pad;
        pad.pad = true;
        set.slots.push_back(std::move(pad));
    }
    return set;
}

TokenBatch candidate_batch(const CandidateSet& set)
{
    std::vector<std::vector<std::int32_t>> sequences;
    for (const auto& s : set.slots)
        if (!s.pad) sequences.push_back(s.ids);
    if (sequences.empty()) throw ValidationError("candidate set has no real slots");
    std::vector<std::size_t> which(sequences.size());
    std::iota(which.begin(), which.end(), 0);
    return collate(sequences, which);
}

std::vector<std::optional<double>> LmgcScores::per_slot() const
{
    std::vector<std::optional<double>> out(slot_count);
    for (std::size_t i = 0; i < real_slots.size(); ++i) out[real_slots[i]] = probs[i];
    return out;
}

LmgcScores lmgc_forward(Tape& tape, const Model& model, const CandidateSet& set, const ForwardOptions& options)
{
    if (!model.params.head || model.params.head->weight.dim(0) != 2) {
        throw ConfigError("lmgc_forward: model needs a 2-class head");
    }
    const TokenBatch batch = candidate_batch(set);
    const ForwardOutput out = encode(tape, model, batch, options);
    const Tensor probs = cls_head_forward(tape, out.aggregate, *model.params.head, HeadKind::classify);
    LmgcScores scores;
    scores.probs = select_column(tape, probs, 1);
    scores.real_slots = set.real_slots();
    scores.slot_count = set.slots.size();
    return scores;
}

Tensor lmgc_loss(Tape& tape, const LmgcScores& scores, const CandidateSet& set, double gamma, double alpha,
                 bool paper_literal)
{
    std::vector<std::int32_t> labels;
    for (std::size_t slot : scores.real_slots) labels.push_back(set.slots[slot].label);
    return focal_loss(tape, scores.probs, labels, gamma, alpha, paper_literal);
}

LmgcmTerms lmgcm_loss(Tape& tape, const Model& model, const CandidateSet& set, std::uint64_t mask_seed,
                      double gamma, double alpha, MlmReduction reduction, const ForwardOptions& options,
                      double mask_prob)
{
    LmgcmTerms terms;
    terms.focal = lmgc_loss(tape, lmgc_forward(tape, model, set, options), set, gamma, alpha);
    MaskingConfig masking;
    masking.mask_prob = mask_prob;
    masking.vocab_size = model.config.vocab_size;
    terms.corrupted = dynamic_mask(candidate_batch(set), masking, mask_seed);
    const auto targets = terms.corrupted.target_ids();
    terms.masked = targets.size();
    terms.total = terms.focal;
    if (!targets.empty()) {
        const ForwardOutput out = mlm_forward(tape, model, terms.corrupted, options);
        terms.mlm = cross_entropy(tape, out.mlm_logits, targets, true);
        if (reduction == MlmReduction::sum) terms.mlm = scale(tape, terms.mlm, static_cast<double>(targets.size()));
        terms.total = add(tape, terms.focal, terms.mlm);
    }
    return terms;
}

std::string predict_sense(const std::vector<std::optional<double>>& probs, const CandidateSet& set)
{
    if (probs.size() != set.slots.size()) throw DimensionError("predict_sense: one score per slot required");
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (set.slots[i].pad || !probs[i]) continue;
        if (!best || *probs[i] > *probs[*best]) best = i;
    }
    if (!best) throw ValidationError("predict_sense: no real candidate");
    return set.slots[*best].sense_id;
}

WsdReport evaluate_wsd(const Model& model, const std::vector<WsdInstance>& instances,
                       const SenseInventory& inventory, const Tokenizer& tokenizer)
{
    if (instances.empty()) throw ValidationError("evaluate_wsd: no instances");
    std::vector<int> verdict(instances.size(), 0);  // 1 correct, 0 wrong, -1 missing lemma
    parallel_for(instances.size(), [&](std::size_t i) {
        const auto& inst = instances[i];
        if (inventory.lookup(inst.lemma, inst.pos).empty()) {
            verdict[i] = -1;
            return;
        }
        const CandidateSet set = build_candidate_set(inst, inventory, tokenizer, 0, 0);
        const LmgcScores scores = lmgc_forward(inference_tape(), model, set);
        const auto predicted = predict_sense(scores.per_slot(), set);
        verdict[i] = std::find(inst.gold.begin(), inst.gold.end(), predicted) != inst.gold.end() ? 1 : 0;
    });

    WsdReport report;
    report.pooled.dataset = "all";
    std::map<std::string, WsdScore> by_dataset;
    for (std::size_t i = 0; i < instances.size(); ++i) {
        if (verdict[i] < 0) {
            ++report.missing_lemmas;
            std::cerr << "warning: lemma '" << instances[i].lemma << "' missing from inventory\n";
        }
        auto& d = by_dataset[instances[i].dataset];
        d.dataset = instances[i].dataset;
        ++d.instances;
        ++report.pooled.instances;
        if (verdict[i] == 1) {
            ++d.correct;
            ++report.pooled.correct;
        }
    }
    const auto finish = [](WsdScore& s) { s.f1 = static_cast<double>(s.correct) / static_cast<double>(s.instances); };
    for (auto& [name, s] : by_dataset) {
        finish(s);
        report.datasets.push_back(s);
    }
    finish(report.pooled);
    return report;
}

void write_wsd_report(const std::filesystem::path& path, const WsdReport& report)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << "dataset,instances,correct,F1\n" << std::setprecision(17);
    for (const auto& s : report.datasets) out << s.dataset << ',' << s.instances << ',' << s.correct << ',' << s.f1 << '\n';
    out << "ALL," << report.pooled.instances << ',' << report.pooled.correct << ',' << report.pooled.f1 << '\n';
}

std::vector<WsdEpochRecord> train_wsd(Model& model, const std::vector<WsdInstance>& instances,
                                      const SenseInventory& inventory, const Tokenizer& tokenizer,
                                      const WsdTrainConfig& config)
{
    if (instances.empty()) throw ValidationError("train_wsd: no training instances");
    if (config.instances_per_step == 0) throw ConfigError("train_wsd: instances_per_step must be positive");
    for (const auto& inst : instances)
        if (inst.gold.empty()) throw DataError("train_wsd: training instance without gold senses");
    if (!model.params.head) add_head(model, 2, config.seed);
    model.params.set_requires_grad(true);
    auto params = model.params.list();
    AdamWState state;
    std::vector<WsdEpochRecord> records;
    std::uint64_t counter = 0;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::vector<std::size_t> order(instances.size());
        std::iota(order.begin(), order.end(), 0);
        Rng(derive_seed(config.seed, epoch)).shuffle(order);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += config.instances_per_step) {
            const std::size_t end = std::min(order.size(), start + config.instances_per_step);
            const double weight = 1.0 / static_cast<double>(end - start);
            for (std::size_t j = start; j < end; ++j, ++counter) {
                const auto& inst = instances[order[j]];
                const CandidateSet set = build_candidate_set(inst, inventory, tokenizer, config.candidates,
                                                             derive_seed(config.seed ^ 0x63616e64ULL, counter));
                Rng rng(derive_seed(config.seed ^ 0x64726f70ULL, counter));
                const ForwardOptions options{true, &rng};
                Tape tape;
                Tensor loss;
                if (config.objective == WsdObjective::lmgc) {
                    loss = lmgc_loss(tape, lmgc_forward(tape, model, set, options), set, config.gamma, config.alpha,
                                     config.paper_literal_focal);
                } else {
                    loss = lmgcm_loss(tape, model, set, derive_seed(config.seed ^ 0x6d61736bULL, counter),
                                      config.gamma, config.alpha, config.mlm_reduction, options, config.mask_prob)
                               .total;
                }
                epoch_loss += loss.item();
                tape.backward(scale(tape, loss, weight));
            }
            adamw_step(params, state, config.optim);
            zero_grad(params);
        }
        records.push_back({epoch + 1, epoch_loss / static_cast<double>(instances.size())});
    }
    return records;
}

std::vector<MaskedBatch> wsd_mlm_batches(const std::vector<WsdInstance>& instances,
                                         const SenseInventory& inventory, const Tokenizer& tokenizer,
                                         std::uint64_t mask_seed, std::size_t pairs_per_batch, double mask_prob)
{
    if (pairs_per_batch == 0) throw ParameterError("wsd_mlm_batches: batch size must be positive");
    std::vector<std::vector<std::int32_t>> pairs;
    for (const auto& inst : instances) {
        if (inventory.lookup(inst.lemma, inst.pos).empty()) continue;
        for (auto& slot : build_candidate_set(inst, inventory, tokenizer, 0, 0).slots) pairs.push_back(std::move(slot.ids));
    }
    MaskingConfig masking;
    masking.mask_prob = mask_prob;
    masking.vocab_size = tokenizer.vocab_size();
    std::vector<MaskedBatch> out;
    std::vector<std::size_t> which;
    for (std::size_t start = 0; start < pairs.size(); start += pairs_per_batch) {
        which.clear();
        for (std::size_t i = start; i < std::min(pairs.size(), start + pairs_per_batch); ++i) which.push_back(i);
        out.push_back(dynamic_mask(collate(pairs, which), masking, derive_seed(mask_seed, out.size())));
    }
    return out;
}

} // namespace tdlm
