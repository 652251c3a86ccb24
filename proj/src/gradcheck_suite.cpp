#include "tdlm/gradcheck_suite.hpp"

#include "tdlm/gradcheck.hpp"
#include "tdlm/random.hpp"
#include "tdlm/transformer.hpp"

namespace tdlm {
namespace {

Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0)
{
    std::vector<double> v(shape_size(shape));
    for (double& x : v) x = lo + (hi - lo) * rng.uniform();
    return Tensor(std::move(shape), std::move(v), true);
}

Tensor fixed(Rng& rng, Shape shape)
{
    Tensor t = random_tensor(rng, std::move(shape));
    t.set_requires_grad(false);
    return t;
}

// Reduce to a scalar through a fixed random weighting so every output entry matters.
Tensor project(Tape& tape, const Tensor& out, const Tensor& weights)
{
    return sum(tape, mul(tape, out, weights));
}

} // namespace

std::vector<GradCheckCase> run_gradcheck_suite(double h)
{
    std::vector<GradCheckCase> out;
    Rng rng(20240611);
    const auto check = [&](std::string name, const ScalarFunction& f, std::vector<Tensor> inputs) {
        out.push_back({std::move(name), grad_check(f, std::move(inputs), h)});
    };

    const Tensor a = random_tensor(rng, {3, 4});
    const Tensor b = random_tensor(rng, {3, 4});
    const Tensor c = random_tensor(rng, {4, 5});
    const Tensor w34 = fixed(rng, {3, 4});
    const Tensor w35 = fixed(rng, {3, 5});
    const Tensor w43 = fixed(rng, {4, 3});
    const Tensor bias = random_tensor(rng, {4});

    check("matmul", [&](Tape& t) { return project(t, matmul(t, a, c), w35); }, {a, c});
    check("transpose", [&](Tape& t) { return project(t, transpose(t, a), w43); }, {a});
    check("add", [&](Tape& t) { return project(t, add(t, a, b), w34); }, {a, b});
    check("sub", [&](Tape& t) { return project(t, sub(t, a, b), w34); }, {a, b});
    check("mul", [&](Tape& t) { return project(t, mul(t, a, b), w34); }, {a, b});
    check("scale", [&](Tape& t) { return project(t, scale(t, a, -1.7), w34); }, {a});
    check("add_row", [&](Tape& t) { return project(t, add_row(t, a, bias), w34); }, {a, bias});
    check("sum", [&](Tape& t) { return sum(t, mul(t, a, a)); }, {a});
    check("mean", [&](Tape& t) { return mean(t, mul(t, a, b)); }, {a, b});
    check("reshape", [&](Tape& t) { return project(t, reshape(t, a, {4, 3}), w43); }, {a});
    check("gelu", [&](Tape& t) { return project(t, gelu(t, a), w34); }, {a});
    check("tanh", [&](Tape& t) { return project(t, tanh(t, a), w34); }, {a});

    const Tensor table = random_tensor(rng, {6, 4});
    const std::vector<std::int32_t> ids{1, 4, 1};
    check("embedding", [&](Tape& t) { return project(t, embedding(t, table, ids), w34); }, {table});
    const std::vector<std::size_t> rows{2, 0, 2};
    check("gather_rows", [&](Tape& t) { return project(t, gather_rows(t, a, rows), w34); }, {a});
    const Tensor w3 = fixed(rng, {3});
    check("select_column", [&](Tape& t) { return project(t, select_column(t, a, 2), w3); }, {a});

    const Tensor gain = random_tensor(rng, {4}, 0.5, 1.5);
    check("layer_norm", [&](Tape& t) { return project(t, layer_norm(t, a, gain, bias), w34); }, {a, gain, bias});
    check("dropout", [&](Tape& t) {
        Rng local(7);
        return project(t, dropout(t, a, 0.3, local), w34);
    }, {a});

    check("softmax_temperature", [&](Tape& t) { return project(t, softmax_temperature(t, a, 2.5), w34); }, {a});
    check("log_softmax", [&](Tape& t) { return project(t, log_softmax(t, a, 1.5), w34); }, {a});

    const std::vector<std::int32_t> classes{0, 3, 2};
    check("cross_entropy_logits", [&](Tape& t) { return cross_entropy(t, a, classes, true, 2.0); }, {a});
    // Probability inputs must be normalized rows, so they come from a softmax.
    check("cross_entropy_probs", [&](Tape& t) {
        return cross_entropy(t, softmax_temperature(t, a, 1.0), classes, false);
    }, {a});
    check("cross_entropy_soft", [&](Tape& t) {
        return cross_entropy(t, a, softmax_temperature(t, b, 1.0), true, 2.5);
    }, {a, b});
    check("kl_divergence", [&](Tape& t) {
        return kl_divergence(t, softmax_temperature(t, a, 1.0), softmax_temperature(t, b, 1.0));
    }, {a, b});
    check("mse", [&](Tape& t) { return mse(t, a, b); }, {a, b});

    const Tensor p = random_tensor(rng, {6}, 0.1, 0.9);
    const std::vector<std::int32_t> labels{1, 0, 0, 1, 0, 1};
    check("focal_loss", [&](Tape& t) { return focal_loss(t, p, labels, 2.0, 0.25); }, {p});
    check("focal_loss_literal", [&](Tape& t) { return focal_loss(t, p, labels, 2.0, 0.25, true); }, {p});

    // Two sequences of length 4, hidden 4, two heads; the last key of sequence 1 is padding.
    const Tensor xq = random_tensor(rng, {8, 4});
    const Tensor xk = random_tensor(rng, {8, 4});
    const Tensor xv = random_tensor(rng, {8, 4});
    const Tensor w84 = fixed(rng, {8, 4});
    AttentionLayout layout;
    layout.batch = 2;
    layout.seq = 4;
    layout.heads = 2;
    layout.pad = {false, false, false, false, false, false, false, true};
    check("multi_head_attention", [&](Tape& t) {
        return project(t, multi_head_attention(t, xq, xk, xv, layout), w84);
    }, {xq, xk, xv});
    const Tensor sq = random_tensor(rng, {6, 3});
    const Tensor sk = random_tensor(rng, {6, 3});
    const Tensor sv = random_tensor(rng, {6, 3});
    const Tensor w63 = fixed(rng, {6, 3});
    const std::vector<bool> pad{false, false, false, false, false, true};
    check("attention", [&](Tape& t) { return project(t, attention(t, sq, sk, sv, pad), w63); }, {sq, sk, sv});
    check("windowed_attention", [&](Tape& t) {
        return project(t, windowed_attention(t, sq, sk, sv, 1, {0}, pad), w63);
    }, {sq, sk, sv});

    // Toy masked LM: the fixed configuration used for end-to-end checking.
    ModelConfig config;
    config.layers = 2;
    config.hidden = 4;
    config.heads = 2;
    config.ff = 8;
    config.vocab_size = 12;
    config.max_seq = 8;
    config.dropout = 0.0;
    config.init_std = 0.5;
    const Model model = make_model(config, 0);
    MaskedBatch batch;
    batch.batch = 2;
    batch.seq = 4;
    batch.ids = {2, 8, 9, 3, 2, 11, 4, 3};
    batch.pad.assign(8, false);
    batch.targets = {5, 8, 9, 7, 6, 11, 7, 10};
    check("transformer_mlm", [&](Tape& t) {
        const ForwardOutput fwd = mlm_forward(t, model, batch);
        return cross_entropy(t, fwd.mlm_logits, batch.target_ids(), true);
    }, model.params.list());
    return out;
}

} // namespace tdlm
