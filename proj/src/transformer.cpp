#include "tdlm/transformer.hpp"

#include <cmath>

#include "tdlm/random.hpp"

namespace tdlm {

namespace {

Tensor normal_tensor(Shape shape, double stddev, Rng& rng)
{
    const std::size_t n = shape_size(shape);
    std::vector<double> values(n);
    for (double& x : values) x = rng.normal(0.0, stddev);
    return Tensor(std::move(shape), std::move(values), true);
}

LayerParams clone_layer(const LayerParams& l)
{
    return {l.ln1_gain.clone(true), l.ln1_bias.clone(true), l.wq.clone(true), l.wk.clone(true),
            l.wv.clone(true),       l.wo.clone(true),       l.ln2_gain.clone(true), l.ln2_bias.clone(true),
            l.w1.clone(true),       l.b1.clone(true),       l.w2.clone(true), l.b2.clone(true)};
}

} // namespace

void ModelConfig::validate() const
{
    if (hidden == 0 || heads == 0) throw ParameterError("model config: hidden and heads must be positive");
    if (hidden % heads != 0) {
        throw ParameterError("model config: hidden " + std::to_string(hidden) +
                             " not divisible by heads " + std::to_string(heads));
    }
    if (hidden % 2 != 0) throw ParameterError("model config: hidden must be even for sinusoidal positions");
    if (ff == 0) throw ParameterError("model config: feed-forward width must be positive");
    if (vocab_size <= 7) throw ParameterError("model config: vocabulary must extend past the specials");
    if (max_seq == 0) throw ParameterError("model config: max_seq must be positive");
    if (dropout < 0.0 || dropout >= 1.0) throw ParameterError("model config: dropout must be in [0, 1)");
    for (std::size_t g : global_positions)
        if (g >= max_seq) throw ParameterError("model config: global position outside [0, max_seq)");
}

std::vector<std::pair<std::string, Tensor>> ModelParams::named() const
{
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("token_embedding", token_embedding);
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const std::string p = "layers." + std::to_string(i) + ".";
        const LayerParams& l = layers[i];
        out.emplace_back(p + "ln1.gain", l.ln1_gain);
        out.emplace_back(p + "ln1.bias", l.ln1_bias);
        out.emplace_back(p + "attn.wq", l.wq);
        out.emplace_back(p + "attn.wk", l.wk);
        out.emplace_back(p + "attn.wv", l.wv);
        out.emplace_back(p + "attn.wo", l.wo);
        out.emplace_back(p + "ln2.gain", l.ln2_gain);
        out.emplace_back(p + "ln2.bias", l.ln2_bias);
        out.emplace_back(p + "ff.w1", l.w1);
        out.emplace_back(p + "ff.b1", l.b1);
        out.emplace_back(p + "ff.w2", l.w2);
        out.emplace_back(p + "ff.b2", l.b2);
    }
    out.emplace_back("final_norm.gain", final_gain);
    out.emplace_back("final_norm.bias", final_bias);
    out.emplace_back("mlm_bias", mlm_bias);
    if (head) {
        out.emplace_back("head.weight", head->weight);
        out.emplace_back("head.bias", head->bias);
    }
    return out;
}

std::vector<Tensor> ModelParams::list() const
{
    std::vector<Tensor> out;
    for (auto& [name, t] : named()) out.push_back(t);
    return out;
}

ModelParams ModelParams::clone() const
{
    ModelParams p;
    p.token_embedding = token_embedding.clone(true);
    for (const auto& l : layers) p.layers.push_back(clone_layer(l));
    p.final_gain = final_gain.clone(true);
    p.final_bias = final_bias.clone(true);
    p.mlm_bias = mlm_bias.clone(true);
    if (head) p.head = HeadParams{head->weight.clone(true), head->bias.clone(true)};
    return p;
}

void ModelParams::set_requires_grad(bool flag)
{
    for (auto& [name, t] : named()) {
        Tensor handle = t;
        handle.set_requires_grad(flag);
    }
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed)
{
    config.validate();
    Rng rng(seed);
    const std::size_t h = config.hidden, f = config.ff;
    ModelParams p;
    p.token_embedding = normal_tensor({config.vocab_size, h}, 1.0 / std::sqrt(static_cast<double>(h)), rng);
    for (std::size_t i = 0; i < config.layers; ++i) {
        LayerParams l;
        l.ln1_gain = Tensor::full({h}, 1.0, true);
        l.ln1_bias = Tensor::zeros({h}, true);
        l.wq = normal_tensor({h, h}, config.init_std, rng);
        l.wk = normal_tensor({h, h}, config.init_std, rng);
        l.wv = normal_tensor({h, h}, config.init_std, rng);
        l.wo = normal_tensor({h, h}, config.init_std, rng);
        l.ln2_gain = Tensor::full({h}, 1.0, true);
        l.ln2_bias = Tensor::zeros({h}, true);
        l.w1 = normal_tensor({h, f}, config.init_std, rng);
        l.b1 = Tensor::zeros({f}, true);
        l.w2 = normal_tensor({f, h}, config.init_std, rng);
        l.b2 = Tensor::zeros({h}, true);
        p.layers.push_back(std::move(l));
    }
    p.final_gain = Tensor::full({h}, 1.0, true);
    p.final_bias = Tensor::zeros({h}, true);
    p.mlm_bias = Tensor::zeros({config.vocab_size}, true);
    return p;
}

Model make_model(const ModelConfig& config, std::uint64_t seed)
{
    return {config, init_params(config, seed), 0};
}

void add_head(Model& model, std::size_t classes, std::uint64_t seed)
{
    if (classes == 0) throw ParameterError("add_head: need at least one output");
    Rng rng(derive_seed(seed, 0x4ead));
    model.params.head = HeadParams{normal_tensor({classes, model.config.hidden}, model.config.init_std, rng),
                                   Tensor::zeros({classes}, true)};
}

Tensor sinusoidal_positions(std::size_t seq, std::size_t hidden)
{
    if (hidden % 2 != 0) throw ParameterError("sinusoidal_positions: hidden size must be even");
    if (seq == 0 || hidden == 0) throw ParameterError("sinusoidal_positions: empty table");
    std::vector<double> values(seq * hidden);
    for (std::size_t pos = 0; pos < seq; ++pos) {
        for (std::size_t i = 0; i < hidden / 2; ++i) {
            const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(hidden));
            const double angle = static_cast<double>(pos) * freq;
            values[pos * hidden + 2 * i] = std::sin(angle);
            values[pos * hidden + 2 * i + 1] = std::cos(angle);
        }
    }
    return Tensor({seq, hidden}, std::move(values));
}

ForwardOutput encode(Tape& tape, const Model& model, const TokenBatch& batch, const ForwardOptions& options)
{
    const ModelConfig& cfg = model.config;
    const ModelParams& p = model.params;
    if (batch.seq == 0 || batch.batch == 0) throw ValidationError("encode: empty batch");
    if (batch.seq > cfg.max_seq) {
        throw ParameterError("encode: sequence length " + std::to_string(batch.seq) +
                             " exceeds model maximum " + std::to_string(cfg.max_seq));
    }
    if (batch.ids.size() != batch.tokens() || (!batch.pad.empty() && batch.pad.size() != batch.tokens())) {
        throw DimensionError("encode: batch arrays do not match batch x seq");
    }
    const bool use_dropout = options.train && cfg.dropout > 0.0;
    if (use_dropout && options.rng == nullptr) throw ParameterError("encode: training mode needs an rng");
    const auto drop = [&](const Tensor& x) {
        return use_dropout ? dropout(tape, x, cfg.dropout, *options.rng) : x;
    };

    const Tensor positions = sinusoidal_positions(batch.seq, cfg.hidden);
    std::vector<double> tiled(batch.tokens() * cfg.hidden);
    for (std::size_t b = 0; b < batch.batch; ++b)
        std::copy(positions.values().begin(), positions.values().end(),
                  tiled.begin() + static_cast<std::ptrdiff_t>(b * batch.seq * cfg.hidden));
    const Tensor position_stream({batch.tokens(), cfg.hidden}, std::move(tiled));

    AttentionLayout layout;
    layout.batch = batch.batch;
    layout.seq = batch.seq;
    layout.heads = cfg.heads;
    layout.pad = batch.pad;
    if (cfg.attention == AttentionMode::windowed) {
        layout.windowed = true;
        layout.window = cfg.window;
        for (std::size_t g : cfg.global_positions)
            if (g < batch.seq) layout.global_positions.push_back(g);
    }

    ForwardOutput out;
        // Token rows are scaled up to the unit scale of the sinusoids; otherwise position dominates the stream.
    const Tensor tokens = scale(tape, embedding(tape, p.token_embedding, batch.ids), std::sqrt(static_cast<double>(cfg.hidden)));
    Tensor x = drop(add(tape, tokens, position_stream));
    out.layer_hidden.push_back(x);
    for (const LayerParams& l : p.layers) {
        const Tensor a = layer_norm(tape, x, l.ln1_gain, l.ln1_bias);
        const Tensor q = matmul(tape, a, l.wq);
        const Tensor k = matmul(tape, a, l.wk);
        const Tensor v = matmul(tape, a, l.wv);
        const Tensor attended = multi_head_attention(tape, q, k, v, layout);
        x = add(tape, x, drop(matmul(tape, attended, l.wo)));
        const Tensor b = layer_norm(tape, x, l.ln2_gain, l.ln2_bias);
        const Tensor inner = gelu(tape, add_row(tape, matmul(tape, b, l.w1), l.b1));
        x = add(tape, x, drop(add_row(tape, matmul(tape, inner, l.w2), l.b2)));
        out.layer_hidden.push_back(x);
    }
    out.hidden = layer_norm(tape, x, p.final_gain, p.final_bias);
    std::vector<std::size_t> firsts(batch.batch);
    for (std::size_t b = 0; b < batch.batch; ++b) firsts[b] = b * batch.seq;
    out.aggregate = gather_rows(tape, out.hidden, firsts);
    return out;
}

Tensor mlm_logits(Tape& tape, const Model& model, const Tensor& hidden, std::span<const std::size_t> positions)
{
    const Tensor selected = gather_rows(tape, hidden, positions);
    const Tensor projection = transpose(tape, model.params.token_embedding);
    return add_row(tape, matmul(tape, selected, projection), model.params.mlm_bias);
}

ForwardOutput mlm_forward(Tape& tape, const Model& model, const MaskedBatch& batch, const ForwardOptions& options)
{
    ForwardOutput out = encode(tape, model, batch, options);
    out.mlm_positions = batch.target_positions();
    if (!out.mlm_positions.empty()) out.mlm_logits = mlm_logits(tape, model, out.hidden, out.mlm_positions);
    return out;
}

Tensor cls_head_forward(Tape& tape, const Tensor& aggregate, const HeadParams& head, HeadKind kind)
{
    const std::size_t classes = head.weight.dim(0);
    if (kind == HeadKind::classify && classes < 2) throw ParameterError("cls_head_forward: classify needs K >= 2");
    if (kind == HeadKind::regress && classes != 1) throw ParameterError("cls_head_forward: regress needs K == 1");
    Tensor c = aggregate.rank() == 1 ? reshape(tape, aggregate, {1, aggregate.size()}) : aggregate;
    const Tensor scores = add_row(tape, matmul(tape, c, transpose(tape, head.weight)), head.bias);
    if (kind == HeadKind::regress) return scores;
    return softmax_temperature(tape, scores, 1.0);
}

std::vector<std::size_t> student_layer_indices(std::size_t teacher_layers)
{
    if (teacher_layers < 2) throw ParameterError("init_student_from: teacher needs at least 2 layers");
    std::vector<std::size_t> keep;
    for (std::size_t i = teacher_layers; i >= 2; i -= 2) keep.insert(keep.begin(), i - 1);
    if (teacher_layers % 2 == 1) keep.insert(keep.begin(), 0);
    return keep;
}

Model init_student_from(const Model& teacher)
{
    const auto keep = student_layer_indices(teacher.config.layers);
    Model student = teacher.clone();
    student.config.layers = keep.size();
    student.params.layers.clear();
    for (std::size_t i : keep) student.params.layers.push_back(clone_layer(teacher.params.layers[i]));
    return student;
}

} // namespace tdlm
