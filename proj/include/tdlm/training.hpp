#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tdlm/data.hpp"
#include "tdlm/optim.hpp"
#include "tdlm/transformer.hpp"

namespace tdlm {

struct TrainConfig {
    std::size_t max_steps = 1000;
    std::size_t batch_size = 32;
    /// Micro-batches averaged into one optimizer step.
    std::size_t accumulation = 1;
    std::size_t seq_len = 64;
    AdamWConfig optim{1e-3, 0.9, 0.999, 1e-8, 0.01};
    double mask_prob = 0.15;
    std::uint64_t seed = 0;
    /// Validation cadence in optimizer steps; 0 validates only at the end.
    std::size_t val_every = 100;
    std::size_t prefetch = 4;
};

/// One row of a loss curve.
struct LossRecord {
    std::size_t step = 0;
    double train_loss = 0.0;
    std::string branch = "gt";
    std::optional<double> val_ce;
    std::optional<double> val_ppl;
};

void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRecord>& records);

struct ValidationResult {
    double ce = 0.0;
    double ppl = 0.0;
    std::size_t tokens = 0;
};

/// Held-out batches masked once with a fixed seed so checkpoints compare fairly.
std::vector<MaskedBatch> make_validation_batches(const std::vector<Document>& docs, std::size_t seq_len,
                                                 std::size_t batch_size, double mask_prob,
                                                 std::uint64_t mask_seed, std::size_t vocab_size);

/// Mean token-level cross-entropy at masked positions (T = 1) and exp of it.
ValidationResult validate_ce(const Model& model, const std::vector<MaskedBatch>& held_out);

/// Builds a differentiable loss for step k (1-based) from one micro-batch.
using StepLoss = std::function<Tensor(Tape& tape, const MaskedBatch& batch, std::size_t step, Rng& rng)>;
/// Names the loss branch taken at step k.
using BranchName = std::function<std::string(std::size_t step)>;

/// Shared optimizer loop: streams masked batches, accumulates micro-batch
/// gradients, applies AdamW to params, and records the loss curve.
std::vector<LossRecord> run_training(std::vector<Tensor> params, const Model& evaluated,
                                     const std::vector<std::vector<std::int32_t>>& sequences,
                                     const std::vector<MaskedBatch>& validation, const TrainConfig& config,
                                     const StepLoss& step_loss, const BranchName& branch);

/// Plain masked-language-model training (teacher pre-training, scratch baselines).
std::vector<LossRecord> train_mlm(Model& model, const std::vector<Document>& train,
                                  const std::vector<MaskedBatch>& validation, const TrainConfig& config);

} // namespace tdlm
