#include "tdlm/training.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>

#include "tdlm/random.hpp"

namespace tdlm {

void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRecord>& records)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << "step,train_loss,branch,val_ce,val_ppl\n";
    out << std::setprecision(17);
    for (const auto& r : records) {
        out << r.step << ',' << r.train_loss << ',' << r.branch << ',';
        if (r.val_ce) out << *r.val_ce;
        out << ',';
        if (r.val_ppl) out << *r.val_ppl;
        out << '\n';
    }
}

std::vector<MaskedBatch> make_validation_batches(const std::vector<Document>& docs, std::size_t seq_len,
                                                 std::size_t batch_size, double mask_prob,
                                                 std::uint64_t mask_seed, std::size_t vocab_size)
{
    const auto sequences = pack_sequences(docs, seq_len);
    MaskingConfig masking;
    masking.mask_prob = mask_prob;
    masking.vocab_size = vocab_size;
    std::vector<MaskedBatch> out;
    std::vector<std::size_t> which;
    for (std::size_t start = 0; start < sequences.size(); start += batch_size) {
        which.clear();
        for (std::size_t i = start; i < std::min(sequences.size(), start + batch_size); ++i) which.push_back(i);
        out.push_back(dynamic_mask(collate(sequences, which), masking, derive_seed(mask_seed, out.size())));
    }
    return out;
}

ValidationResult validate_ce(const Model& model, const std::vector<MaskedBatch>& held_out)
{
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& batch : held_out) {
        const auto targets = batch.target_ids();
        if (targets.empty()) continue;
        Tape& tape = inference_tape();
        const ForwardOutput out = mlm_forward(tape, model, batch);
        total += cross_entropy(tape, out.mlm_logits, targets, true).item() * static_cast<double>(targets.size());
        count += targets.size();
    }
    if (count == 0) throw ValidationError("validate_ce: held-out set has no masked tokens");
    ValidationResult r;
    r.tokens = count;
    r.ce = total / static_cast<double>(count);
    r.ppl = std::exp(r.ce);
    return r;
}

std::vector<LossRecord> run_training(std::vector<Tensor> params, const Model& evaluated,
                                     const std::vector<std::vector<std::int32_t>>& sequences,
                                     const std::vector<MaskedBatch>& validation, const TrainConfig& config,
                                     const StepLoss& step_loss, const BranchName& branch)
{
    std::vector<LossRecord> records;
    if (config.max_steps == 0) return records;
    if (config.accumulation == 0) throw ParameterError("training: accumulation must be at least 1");

    BatchStreamConfig stream_config;
    stream_config.batch_size = config.batch_size;
    stream_config.seed = config.seed;
    stream_config.masking.mask_prob = config.mask_prob;
    stream_config.masking.vocab_size = evaluated.config.vocab_size;
    PrefetchingBatchStream stream(BatchStream(sequences, stream_config), config.prefetch);

    AdamWState state;
    for (auto& p : params) p.zero_grad();
    const double micro_weight = 1.0 / static_cast<double>(config.accumulation);
    for (std::size_t step = 1; step <= config.max_steps; ++step) {
        double step_loss_value = 0.0;
        for (std::size_t micro = 0; micro < config.accumulation; ++micro) {
            const MaskedBatch batch = stream.next();
            Rng rng(derive_seed(config.seed ^ 0x64726f70ULL, (step - 1) * config.accumulation + micro));
            Tape tape;
            Tensor loss = step_loss(tape, batch, step, rng);
            if (!loss.defined()) continue;
            step_loss_value += loss.item() * micro_weight;
            tape.backward(scale(tape, loss, micro_weight));
        }
        adamw_step(params, state, config.optim);
        zero_grad(params);

        LossRecord record;
        record.step = step;
        record.train_loss = step_loss_value;
        record.branch = branch(step);
        const bool validate_now = !validation.empty() &&
            ((config.val_every != 0 && step % config.val_every == 0) || step == config.max_steps);
        if (validate_now) {
            const ValidationResult v = validate_ce(evaluated, validation);
            record.val_ce = v.ce;
            record.val_ppl = v.ppl;
        }
        records.push_back(std::move(record));
    }
    return records;
}

std::vector<LossRecord> train_mlm(Model& model, const std::vector<Document>& train,
                                  const std::vector<MaskedBatch>& validation, const TrainConfig& config)
{
    const auto sequences = pack_sequences(train, std::min(config.seq_len, model.config.max_seq));
    model.params.set_requires_grad(true);
    const StepLoss loss = [&model](Tape& tape, const MaskedBatch& batch, std::size_t, Rng& rng) {
        const auto targets = batch.target_ids();
        if (targets.empty()) return Tensor();
        ForwardOptions options{true, &rng};
        const ForwardOutput out = mlm_forward(tape, model, batch, options);
        return cross_entropy(tape, out.mlm_logits, targets, true);
    };
    return run_training(model.params.list(), model, sequences, validation, config, loss,
                        [](std::size_t) { return std::string("gt"); });
}

} // namespace tdlm
