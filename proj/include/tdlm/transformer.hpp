#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tdlm/autodiff.hpp"
#include "tdlm/batch.hpp"

namespace tdlm {

enum class AttentionMode { full, windowed };

struct ModelConfig {
    std::size_t layers = 2;
    std::size_t hidden = 64;
    std::size_t heads = 2;
    std::size_t ff = 256;
    std::size_t vocab_size = 0;
    std::size_t max_seq = 128;
    double dropout = 0.1;
    AttentionMode attention = AttentionMode::full;
    std::size_t window = 0;
    std::vector<std::size_t> global_positions;
    double init_std = 0.02;

    std::size_t head_dim() const { return hidden / heads; }
    /// Throws ParameterError on inconsistent settings.
    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

struct LayerParams {
    Tensor ln1_gain, ln1_bias;
    Tensor wq, wk, wv, wo;
    Tensor ln2_gain, ln2_bias;
    Tensor w1, b1, w2, b2;
};

/// Classification/regression head: weight is classes x hidden.
struct HeadParams {
    Tensor weight;
    Tensor bias;
};

struct ModelParams {
    Tensor token_embedding;  // vocab x hidden, also the tied MLM projection
    std::vector<LayerParams> layers;
    Tensor final_gain, final_bias;
    Tensor mlm_bias;
    std::optional<HeadParams> head;

    /// Stable (name, tensor) listing used by optimizers and checkpoints.
    std::vector<std::pair<std::string, Tensor>> named() const;
    std::vector<Tensor> list() const;
    ModelParams clone() const;
    void set_requires_grad(bool flag);
};

struct Model {
    ModelConfig config;
    ModelParams params;
    /// Vocabulary hash of the tokenizer the model was trained with; 0 if unknown.
    std::uint64_t vocab_hash = 0;

    Model clone() const { return {config, params.clone(), vocab_hash}; }
};

/// normal(0, init_std) weights, zero biases, unit layer-norm gains. The token table starts at
/// std 1/sqrt(H) because encode scales it by sqrt(H).
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);
Model make_model(const ModelConfig& config, std::uint64_t seed);

/// Adds a classes x hidden head; classes == 1 makes a regression head.
void add_head(Model& model, std::size_t classes, std::uint64_t seed);

/// Interleaved sinusoids: row p, column 2i = sin(p / 10000^(2i/H)), 2i+1 = cos(...).
Tensor sinusoidal_positions(std::size_t seq, std::size_t hidden);

struct ForwardOptions {
    /// Enables dropout; requires rng.
    bool train = false;
    Rng* rng = nullptr;
};

struct ForwardOutput {
    Tensor hidden;                     // final (normalized) states, batch*seq x H
    std::vector<Tensor> layer_hidden;  // embedding output + one per layer
    Tensor mlm_logits;                 // masked positions x vocab, when requested
    std::vector<std::size_t> mlm_positions;
    Tensor aggregate;                  // hidden state at each sequence's first position, batch x H
};

ForwardOutput encode(Tape& tape, const Model& model, const TokenBatch& batch,
                     const ForwardOptions& options = {});

/// Tied projection of the selected hidden rows onto the vocabulary.
Tensor mlm_logits(Tape& tape, const Model& model, const Tensor& hidden,
                  std::span<const std::size_t> positions);

/// Encoder pass plus logits at the batch's target positions.
ForwardOutput mlm_forward(Tape& tape, const Model& model, const MaskedBatch& batch,
                          const ForwardOptions& options = {});

enum class HeadKind { classify, regress };

/// classify: softmax(C W^T + B) per row; regress: the raw C W^T + B.
Tensor cls_head_forward(Tape& tape, const Tensor& aggregate, const HeadParams& head, HeadKind kind);

/// Keeps the top layer and every second layer below it (ceil(L/2) layers).
Model init_student_from(const Model& teacher);
std::vector<std::size_t> student_layer_indices(std::size_t teacher_layers);

} // namespace tdlm
