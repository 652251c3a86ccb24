#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "helpers.hpp"
#include "tdlm/distill.hpp"
#include "tdlm/errors.hpp"
#include "tdlm/synthetic.hpp"

using namespace tdlm;

namespace {

std::vector<double> vals(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

std::vector<double> random_dist(Rng& rng, std::size_t n)
{
    std::vector<double> d(n);
    double total = 0.0;
    for (double& x : d) total += (x = rng.uniform() + 1e-3);
    for (double& x : d) x /= total;
    return d;
}

std::vector<std::span<const double>> spans(const std::vector<std::vector<double>>& ds)
{
    return {ds.begin(), ds.end()};
}

struct Fixture {
    Tokenizer tok;
    std::vector<Document> train;
    std::vector<MaskedBatch> validation;
    ModelConfig config;

    Fixture()
    {
        CorpusSpec spec;
        spec.documents = 60;
        spec.sentences_per_document = 4;
        const auto docs = synth_corpus(spec, 1);
        tok = Tokenizer::train(corpus_lines(docs), 200);
        const auto all = tokenize_corpus(docs, tok);
        train.assign(all.begin(), all.begin() + 50);
        const std::vector<Document> held(all.begin() + 50, all.end());
        validation = make_validation_batches(held, 32, 8, 0.15, 99, tok.vocab_size());
        config.layers = 2;
        config.hidden = 16;
        config.heads = 2;
        config.ff = 32;
        config.vocab_size = tok.vocab_size();
        config.max_seq = 32;
        config.dropout = 0.0;
    }

    Model model(std::uint64_t seed, std::size_t layers = 2) const
    {
        ModelConfig c = config;
        c.layers = layers;
        Model m = make_model(c, seed);
        m.vocab_hash = tok.vocab().hash();
        return m;
    }

    DistillConfig distill_config(std::size_t steps) const
    {
        DistillConfig d;
        d.train.max_steps = steps;
        d.train.batch_size = 4;
        d.train.seq_len = 32;
        d.train.val_every = 0;
        d.train.seed = 5;
        return d;
    }
};

} // namespace

TEST_CASE("confidence weights by hand and their properties")
{
    const std::vector<std::vector<double>> two{{0.9, 0.1}, {0.3, 0.7}};
    const auto w = confidence_weights(spans(two), 0);
    CHECK(w[0] == doctest::Approx(0.75).epsilon(1e-14));
    CHECK(w[1] == doctest::Approx(0.25).epsilon(1e-14));

    const std::vector<std::vector<double>> same{{0.2, 0.8}, {0.2, 0.8}, {0.2, 0.8}};
    for (double x : confidence_weights(spans(same), 1)) CHECK(x == doctest::Approx(1.0 / 3.0));

    const double eps = 1e-9;
    const std::vector<std::vector<double>> sharp{{1 - eps, eps}, {eps, 1 - eps}};
    CHECK(confidence_weights(spans(sharp), 0)[0] > 1 - 1e-8);

    Rng rng(3);
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<std::vector<double>> ds;
        const std::size_t n = 1 + rng.below(4);
        for (std::size_t i = 0; i < n; ++i) ds.push_back(random_dist(rng, 6));
        const auto gold = static_cast<std::int32_t>(rng.below(6));
        for (WeightingMode mode : {WeightingMode::confidence, WeightingMode::paper_literal}) {
            const auto wt = confidence_weights(spans(ds), gold, mode);
            double total = 0.0;
            for (double x : wt) {
                CHECK(x >= 0.0);
                total += x;
            }
            CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
        }
        const auto wt = confidence_weights(spans(ds), gold);

        // Permuting teachers permutes weights.
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        rng.shuffle(perm);
        std::vector<std::vector<double>> shuffled;
        for (std::size_t i : perm) shuffled.push_back(ds[i]);
        const auto ws = confidence_weights(spans(shuffled), gold);
        for (std::size_t i = 0; i < n; ++i) CHECK(ws[i] == doctest::Approx(wt[perm[i]]).epsilon(1e-14));

        // Raising teacher 0's gold probability (other mass rescaled) never lowers its weight.
        auto boosted = ds;
        const double old_gold = boosted[0][gold];
        const double new_gold = old_gold + (1 - old_gold) * rng.uniform();
        for (std::size_t j = 0; j < 6; ++j)
            boosted[0][j] = static_cast<std::int32_t>(j) == gold ? new_gold
                                                                 : boosted[0][j] * (1 - new_gold) / (1 - old_gold);
        CHECK(confidence_weights(spans(boosted), gold)[0] >= wt[0] - 1e-15);

        // The convex combination is a distribution.
        const auto target = weighted_target(spans(ds), wt);
        double mass = 0.0;
        for (double x : target) mass += x;
        CHECK(mass == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("weighted target and feature target")
{
    const std::vector<std::vector<double>> ds{{0.6, 0.4}, {0.1, 0.9}};
    const std::vector<double> pick_first{1.0, 0.0};
    CHECK(weighted_target(spans(ds), pick_first) == ds[0]);
    const std::vector<std::vector<double>> twins{{0.6, 0.4}, {0.6, 0.4}};
    const std::vector<double> mix{0.3, 0.7};
    const auto t = weighted_target(spans(twins), mix);
    CHECK(t[0] == doctest::Approx(0.6));
    CHECK(t[1] == doctest::Approx(0.4));

    Rng rng(8);
    const Tensor h1 = test::uniform_tensor(rng, {3, 4});
    const Tensor h2 = test::uniform_tensor(rng, {3, 4});
    RowMatrix only(3, 1);
    only.setOnes();
    CHECK(vals(feature_target({h1}, only)) == vals(h1));
    RowMatrix w(3, 2);
    w << 0.2, 0.8, 0.5, 0.5, 1.0, 0.0;
    const Tensor f = feature_target({h1, h2}, w);
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 4; ++c) {
            const double lo = std::min(h1.at(r, c), h2.at(r, c)), hi = std::max(h1.at(r, c), h2.at(r, c));
            CHECK(f.at(r, c) >= lo - 1e-15);
            CHECK(f.at(r, c) <= hi + 1e-15);
        }
    CHECK(f.at(2, 1) == h1.at(2, 1));
}

TEST_CASE("ground-truth branch schedule")
{
    CHECK(is_ground_truth_step(200, 100));
    CHECK_FALSE(is_ground_truth_step(201, 100));
    CHECK(is_ground_truth_step(7, 1));
    DistillConfig bad;
    bad.temperature = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = {};
    bad.ground_truth_step = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("teacher outputs")
{
    const Fixture fx;
    const Model teacher = fx.model(1);
    const TeacherSet one{{&teacher}};
    const MaskedBatch& batch = fx.validation.front();
    const TeacherOutputs out = teacher_forward_all(one, batch, 1.0);
    REQUIRE(out.distributions.size() == 1);
    const std::size_t m = batch.target_positions().size();
    CHECK(out.distributions[0].shape() == Shape{m, fx.tok.vocab_size()});

    // At a huge temperature the distribution is flat.
    const TeacherOutputs hot = teacher_forward_all(one, batch, 1e6);
    const auto row = hot.distributions[0].values().subspan(0, fx.tok.vocab_size());
    const auto [lo, hi] = std::minmax_element(row.begin(), row.end());
    CHECK(*hi - *lo < 1e-3);

    // Thread count changes nothing.
    const Model second = fx.model(2);
    const TeacherSet two{{&teacher, &second}};
    const auto serial = teacher_forward_all(two, batch, 2.5, 1);
    const auto threaded = teacher_forward_all(two, batch, 2.5, 2);
    CHECK(vals(serial.distributions[1]) == vals(threaded.distributions[1]));
    CHECK(vals(serial.hidden[0]) == vals(threaded.hidden[0]));
}

TEST_CASE("the distillation branch collapses to MLM with a one-hot teacher")
{
    const Fixture fx;
    const Student student = make_student(fx.model(4), fx.config.hidden, 1);
    CHECK_FALSE(student.projection.defined());
    const MaskedBatch& batch = fx.validation.front();
    const auto gold = batch.target_ids();
    DistillTargets targets;
    std::vector<double> onehot(gold.size() * fx.tok.vocab_size(), 0.0);
    for (std::size_t i = 0; i < gold.size(); ++i) onehot[i * fx.tok.vocab_size() + gold[i]] = 1.0;
    targets.soft_target = Tensor({gold.size(), fx.tok.vocab_size()}, onehot);
    DistillConfig cfg;
    cfg.temperature = 1.0;
    cfg.feature_weight = 0.0;
    cfg.ground_truth_step = 100;
    const double distilled = distill_loss(inference_tape(), student, batch, targets, cfg, 101).item();
    const double hard = distill_loss(inference_tape(), student, batch, targets, cfg, 100).item();
    CHECK(std::abs(distilled - hard) < 1e-9);
    CHECK_THROWS_AS(distill_loss(inference_tape(), student, batch, targets, cfg, 0), ParameterError);
}

TEST_CASE("validation CE of a uniform model is ln V")
{
    const Fixture fx;
    Model m = fx.model(3);
    std::fill(m.params.token_embedding.mutable_values().begin(), m.params.token_embedding.mutable_values().end(), 0.0);
    std::fill(m.params.mlm_bias.mutable_values().begin(), m.params.mlm_bias.mutable_values().end(), 0.0);
    const ValidationResult r = validate_ce(m, fx.validation);
    CHECK(r.ce == doctest::Approx(std::log(static_cast<double>(fx.tok.vocab_size()))).epsilon(1e-12));
    CHECK(std::abs(r.ppl - std::exp(r.ce)) < 1e-9);
    CHECK(r.tokens > 0);
}

TEST_CASE("training runs: frozen teachers, zero steps, determinism, CE decreases")
{
    const Fixture fx;
    const Model teacher = fx.model(1, 4);
    const auto teacher_before = vals(teacher.params.layers[2].w1);
    const TeacherSet teachers{{&teacher}};

    Student zero = make_student(init_student_from(teacher), teacher.config.hidden, 2);
    const auto before = vals(zero.model.params.layers[0].wq);
    train_distill(zero, teachers, fx.train, fx.validation, fx.distill_config(0));
    CHECK(vals(zero.model.params.layers[0].wq) == before);

    Student a = make_student(init_student_from(teacher), teacher.config.hidden, 2);
    Student b = make_student(init_student_from(teacher), teacher.config.hidden, 2);
    auto cfg = fx.distill_config(6);
    cfg.ground_truth_step = 3;
    const auto log_a = train_distill(a, teachers, fx.train, fx.validation, cfg);
    train_distill(b, teachers, fx.train, fx.validation, cfg);
    CHECK(vals(a.model.params.layers[1].w2) == vals(b.model.params.layers[1].w2));
    CHECK(vals(a.model.params.layers[1].w2) != vals(zero.model.params.layers[1].w2));
    CHECK(vals(teacher.params.layers[2].w1) == teacher_before);
    REQUIRE(log_a.size() >= 6);
    CHECK(log_a[2].branch == "gt");
    CHECK(log_a[3].branch != "gt");

    // A narrower student needs a projection.
    Model narrow_model = fx.model(6);
    ModelConfig nc = fx.config;
    nc.hidden = 8;
    narrow_model = make_model(nc, 6);
    narrow_model.vocab_hash = fx.tok.vocab().hash();
    Student narrow = make_student(narrow_model, teacher.config.hidden, 3);
    CHECK(narrow.projection.shape() == Shape{8, 16});
    CHECK_NOTHROW(train_distill(narrow, teachers, fx.train, fx.validation, fx.distill_config(2)));

    Model stranger = fx.model(7);
    stranger.vocab_hash = 12345;
    CHECK_THROWS_AS(TeacherSet{{&teacher}}.validate(stranger), ConfigError);
}

TEST_CASE("plain MLM training lowers validation CE")
{
    const Fixture fx;
    Model m = fx.model(11);
    const double initial = validate_ce(m, fx.validation).ce;
    TrainConfig cfg;
    cfg.max_steps = 150;
    cfg.batch_size = 8;
    cfg.seq_len = 32;
    cfg.val_every = 0;
    cfg.optim.lr = 3e-3;
    train_mlm(m, fx.train, fx.validation, cfg);
    CHECK(validate_ce(m, fx.validation).ce < initial - 0.5);
}
