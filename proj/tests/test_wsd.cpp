#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "helpers.hpp"
#include "tdlm/errors.hpp"
#include "tdlm/jsonl.hpp"
#include "tdlm/synthetic.hpp"
#include "tdlm/wsd.hpp"

using namespace tdlm;
using nlohmann::json;

namespace {

struct Fixture {
    SenseInventory inventory;
    Tokenizer tok;
    WsdInstance instance;
    Model model;

    Fixture()
    {
        inventory.add("bank", "n", {"bank.1", "land beside a river"});
        inventory.add("bank", "n", {"bank.2", "institution that keeps money"});
        inventory.add("bank", "v", {"bank.3", "tilt an aircraft"});
        for (int i = 4; i <= 12; ++i)
            inventory.add("bank", "n", {"bank." + std::to_string(i), "sense number " + std::to_string(i)});
        tok = Tokenizer::train({"he sat on the bank of the river", "bank : land beside a river",
                                "institution that keeps money tilt an aircraft sense number"},
                               120);
        instance.tokens = {"he", "sat", "on", "the", "bank", "of", "the", "river"};
        instance.target_index = 4;
        instance.lemma = "bank";
        instance.pos = "n";
        instance.gold = {"bank.1"};
        ModelConfig c;
        c.layers = 1;
        c.hidden = 8;
        c.heads = 2;
        c.ff = 16;
        c.vocab_size = tok.vocab_size();
        c.max_seq = 64;
        c.dropout = 0.0;
        model = make_model(c, 1);
        add_head(model, 2, 2);
    }
};

CandidateSet scored_set(std::vector<int> labels, std::size_t pads)
{
    CandidateSet set;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        ContextGlossPair p;
        p.label = labels[i];
        p.sense_id = "s" + std::to_string(i);
        p.ids = {kClsId, 10, kSepId};
        set.slots.push_back(p);
    }
    for (std::size_t i = 0; i < pads; ++i) {
        ContextGlossPair p;
        p.pad = true;
        set.slots.push_back(p);
    }
    return set;
}

} // namespace

TEST_CASE("inventory lookup and validation")
{
    const Fixture fx;
    CHECK(fx.inventory.lookup("bank", "n").size() == 11);
    CHECK(fx.inventory.lookup("bank", "v").size() == 1);
    // No part of speech: union over all of them.
    CHECK(fx.inventory.lookup("bank", "").size() == 12);
    CHECK(fx.inventory.lookup("river", "n").empty());

    SenseInventory inv;
    inv.add("a", "n", {"a.1", "x"});
    CHECK_THROWS_AS(inv.add("a", "n", {"a.1", "y"}), FormatError);
    CHECK_THROWS_AS(inv.add("a", "n", {"a.2", ""}), FormatError);

    const auto rows = sense_inventory_rows(fx.inventory);
    CHECK(rows.size() == 12);
    const SenseInventory back = parse_sense_inventory(rows);
    CHECK(back.sense_count() == 12);
    CHECK(back.lookup("bank", "n").front().gloss == fx.inventory.lookup("bank", "n").front().gloss);
    CHECK_THROWS_AS(parse_sense_inventory({json{{"lemma", "a"}}}), FormatError);
    CHECK_THROWS_AS(parse_sense_inventory({}), FormatError);
}

TEST_CASE("instance files")
{
    const Fixture fx;
    test::TempDir dir("wsd");
    write_jsonl(dir / "i.jsonl", {to_json(fx.instance)});
    const auto back = load_wsd_instances(dir / "i.jsonl");
    REQUIRE(back.size() == 1);
    CHECK(back[0].tokens == fx.instance.tokens);
    CHECK(back[0].gold == fx.instance.gold);
    std::ofstream(dir / "bad.jsonl") << R"({"tokens":["a"],"target_index":3,"lemma":"a"})" << "\n";
    CHECK_THROWS_AS(load_wsd_instances(dir / "bad.jsonl"), FormatError);
}

TEST_CASE("context-gloss pair layout")
{
    const Fixture fx;
    const auto ids = encode_context_gloss(fx.tok, fx.instance, "land beside a river");
    CHECK(ids.front() == kClsId);
    CHECK(ids.back() == kSepId);
    CHECK(std::count(ids.begin(), ids.end(), kSepId) == 2);
    const auto open = std::find(ids.begin(), ids.end(), kTargetOpenId);
    const auto close = std::find(ids.begin(), ids.end(), kTargetCloseId);
    REQUIRE(open != ids.end());
    REQUIRE(close != ids.end());
    CHECK(std::vector<std::int32_t>(open + 1, close) == fx.tok.encode("bank"));

    // Trimming keeps the target and shortens the context around it.
    const auto short_ids = encode_context_gloss(fx.tok, fx.instance, "land beside a river", 16);
    CHECK(short_ids.size() <= 16);
    CHECK(std::find(short_ids.begin(), short_ids.end(), kTargetOpenId) != short_ids.end());
    CHECK_THROWS_AS(encode_context_gloss(fx.tok, fx.instance, "x", 5), ValidationError);
}

TEST_CASE("candidate sets keep gold and are deterministic")
{
    const Fixture fx;
    const CandidateSet all = build_candidate_set(fx.instance, fx.inventory, fx.tok, 0, 0);
    CHECK(all.slots.size() == 11);
    CHECK(all.real_count() == 11);

    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const CandidateSet s = build_candidate_set(fx.instance, fx.inventory, fx.tok, 8, seed);
        CHECK(s.slots.size() == 8);
        CHECK(std::count_if(s.slots.begin(), s.slots.end(), [](const auto& p) { return p.sense_id == "bank.1"; }) == 1);
        CHECK(std::count_if(s.slots.begin(), s.slots.end(), [](const auto& p) { return p.label == 1; }) == 1);
        const CandidateSet again = build_candidate_set(fx.instance, fx.inventory, fx.tok, 8, seed);
        for (std::size_t i = 0; i < 8; ++i) CHECK(again.slots[i].sense_id == s.slots[i].sense_id);
    }

    // Fewer senses than K: pads fill the set.
    WsdInstance verb = fx.instance;
    verb.pos = "v";
    verb.gold = {"bank.3"};
    const CandidateSet padded = build_candidate_set(verb, fx.inventory, fx.tok, 8, 0);
    CHECK(padded.slots.size() == 8);
    CHECK(padded.real_count() == 1);

    WsdInstance wrong = fx.instance;
    wrong.gold = {"bank.3"};
    CHECK_THROWS_AS(build_candidate_set(wrong, fx.inventory, fx.tok, 8, 0), DataError);
    WsdInstance unknown = fx.instance;
    unknown.lemma = "river";
    CHECK_THROWS_AS(build_candidate_set(unknown, fx.inventory, fx.tok, 8, 0), DataError);
}

TEST_CASE("scoring: zero head, batching, pads")
{
    Fixture fx;
    const CandidateSet set = build_candidate_set(fx.instance, fx.inventory, fx.tok, 8, 3);
    const LmgcScores batched = lmgc_forward(inference_tape(), fx.model, set);
    CHECK(batched.real_slots.size() == 8);
    // One pair at a time gives the same scores.
    for (std::size_t i = 0; i < set.slots.size(); ++i) {
        CandidateSet single;
        single.slots = {set.slots[i]};
        const LmgcScores one = lmgc_forward(inference_tape(), fx.model, single);
        CHECK(std::abs(one.probs[0] - batched.probs[i]) < 1e-12);
    }

    WsdInstance verb = fx.instance;
    verb.pos = "v";
    verb.gold = {"bank.3"};
    const CandidateSet padded = build_candidate_set(verb, fx.inventory, fx.tok, 8, 0);
    const auto per_slot = lmgc_forward(inference_tape(), fx.model, padded).per_slot();
    CHECK(per_slot[0].has_value());
    for (std::size_t i = 1; i < 8; ++i) CHECK_FALSE(per_slot[i].has_value());

    auto zero = [](Tensor t) { std::fill(t.mutable_values().begin(), t.mutable_values().end(), 0.0); };
    zero(fx.model.params.head->weight);
    zero(fx.model.params.head->bias);
    const LmgcScores flat = lmgc_forward(inference_tape(), fx.model, set);
    for (double p : flat.probs.values()) CHECK(p == doctest::Approx(0.5).epsilon(1e-15));

    CandidateSet empty = scored_set({}, 3);
    CHECK_THROWS_AS(lmgc_forward(inference_tape(), fx.model, empty), ValidationError);
}

TEST_CASE("LMGC loss equals the hand-summed focal terms")
{
    const CandidateSet set = scored_set({1, 0, 0}, 2);
    LmgcScores scores;
    scores.probs = Tensor::vector({0.7, 0.2, 0.4});
    scores.real_slots = {0, 1, 2};
    scores.slot_count = 5;
    const double expected =
        (focal_loss(0.7, 1, 2.0, 0.25) + focal_loss(0.2, 0, 2.0, 0.25) + focal_loss(0.4, 0, 2.0, 0.25)) / 3.0;
    CHECK(std::abs(lmgc_loss(inference_tape(), scores, set, 2.0, 0.25).item() - expected) < 1e-15);

    LmgcScores perfect = scores;
    perfect.probs = Tensor::vector({1.0, 0.0, 0.0});
    CHECK(lmgc_loss(inference_tape(), perfect, set, 2.0, 0.25).item() == doctest::Approx(0.0));

    const CandidateSet lone = scored_set({1}, 7);
    LmgcScores one;
    one.probs = Tensor::vector({0.3});
    one.real_slots = {0};
    one.slot_count = 8;
    CHECK(lmgc_loss(inference_tape(), one, lone, 2.0, 0.25).item() == doctest::Approx(focal_loss(0.3, 1, 2.0, 0.25)));
}

TEST_CASE("LMGC-M decomposes into focal plus MLM")
{
    const Fixture fx;
    const CandidateSet set = build_candidate_set(fx.instance, fx.inventory, fx.tok, 8, 1);
    const LmgcmTerms terms = lmgcm_loss(inference_tape(), fx.model, set, 77, 2.0, 0.25);
    REQUIRE(terms.masked > 0);

    // Independent recomputation of both paths.
    const double focal = lmgc_loss(inference_tape(), lmgc_forward(inference_tape(), fx.model, set), set, 2.0, 0.25).item();
    MaskingConfig masking;
    masking.vocab_size = fx.model.config.vocab_size;
    const MaskedBatch corrupted = dynamic_mask(candidate_batch(set), masking, 77);
    CHECK(corrupted.ids == terms.corrupted.ids);
    // The MLM term is the same per-token CE the validation code computes.
    const ValidationResult v = validate_ce(fx.model, {corrupted});
    CHECK(v.tokens == terms.masked);
    CHECK(std::abs(terms.mlm.item() - v.ce * static_cast<double>(v.tokens)) < 1e-12 * v.tokens * 10);
    CHECK(std::abs(terms.total.item() - (focal + v.ce * static_cast<double>(v.tokens))) < 1e-10);
    CHECK(std::abs(terms.focal.item() - focal) < 1e-15);

    const LmgcmTerms mean =
        lmgcm_loss(inference_tape(), fx.model, set, 77, 2.0, 0.25, MlmReduction::mean);
    CHECK(std::abs(mean.mlm.item() - v.ce) < 1e-12);

    // Nothing maskable: the joint loss is the focal loss.
    const LmgcmTerms none = lmgcm_loss(inference_tape(), fx.model, set, 77, 2.0, 0.25, MlmReduction::sum, {}, 1e-12);
    CHECK(none.masked == 0);
    CHECK(none.total.item() == terms.focal.item());
}

TEST_CASE("sense prediction")
{
    const CandidateSet set = scored_set({1, 0, 0}, 2);
    CHECK(predict_sense({0.9, 0.1, 0.3, std::nullopt, std::nullopt}, set) == "s0");
    CHECK(predict_sense({0.2, 0.6, 0.6, std::nullopt, std::nullopt}, set) == "s1");
    const CandidateSet lone = scored_set({0}, 1);
    CHECK(predict_sense({0.01, std::nullopt}, lone) == "s0");
    // Extra pads never change the answer.
    const CandidateSet more = scored_set({1, 0, 0}, 6);
    std::vector<std::optional<double>> probs{0.2, 0.6, 0.5};
    probs.resize(9);
    CHECK(predict_sense(probs, more) == "s1");
    CHECK_THROWS_AS(predict_sense({0.5}, set), DimensionError);
}

TEST_CASE("evaluation report")
{
    Fixture fx;
    // A head that prefers nothing: every prediction is the first sense.
    auto zero = [](Tensor t) { std::fill(t.mutable_values().begin(), t.mutable_values().end(), 0.0); };
    zero(fx.model.params.head->weight);
    zero(fx.model.params.head->bias);
    std::vector<WsdInstance> instances(4, fx.instance);
    instances[1].gold = {"bank.2"};
    instances[2].dataset = "other";
    instances[3].lemma = "river";
    const WsdReport r = evaluate_wsd(fx.model, instances, fx.inventory, fx.tok);
    CHECK(r.pooled.instances == 4);
    CHECK(r.pooled.correct == 2);
    CHECK(r.pooled.f1 == 0.5);
    CHECK(r.missing_lemmas == 1);
    REQUIRE(r.datasets.size() == 2);
    CHECK(r.datasets[1].dataset == "other");
    CHECK(r.datasets[1].f1 == 1.0);
    CHECK_THROWS_AS(evaluate_wsd(fx.model, {}, fx.inventory, fx.tok), ValidationError);

    test::TempDir dir("wsdr");
    write_wsd_report(dir / "r.csv", r);
    std::ifstream in(dir / "r.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "dataset,instances,correct,F1");
}

TEST_CASE("synthetic world shape and a short LMGC run")
{
    WsdWorldSpec spec;
    spec.lemmas = 6;
    spec.train_per_lemma = 4;
    spec.test_per_lemma = 2;
    const WsdWorld w = synth_wsd_world(spec, 7);
    CHECK(w.inventory.lemma_count() == 6);
    CHECK(w.train.size() == 24);
    CHECK(w.test.size() == 12);
    for (const auto& [key, senses] : w.inventory.entries()) {
        CHECK(senses.size() >= 2);
        CHECK(senses.size() <= 12);
    }
    for (const auto& inst : w.train) {
        const auto senses = w.inventory.lookup(inst.lemma, inst.pos);
        CHECK(std::any_of(senses.begin(), senses.end(), [&](const Sense& s) { return s.id == inst.gold[0]; }));
    }
    const WsdWorld again = synth_wsd_world(spec, 7);
    CHECK(again.train[5].tokens == w.train[5].tokens);

    const Tokenizer tok = Tokenizer::train(w.text, 300);
    ModelConfig c;
    c.layers = 1;
    c.hidden = 16;
    c.heads = 2;
    c.ff = 32;
    c.vocab_size = tok.vocab_size();
    c.max_seq = 64;
    Model a = make_model(c, 3), b = make_model(c, 3);
    WsdTrainConfig tc;
    tc.epochs = 1;
    tc.optim.lr = 1e-3;
    tc.objective = WsdObjective::lmgcm;
    const auto ra = train_wsd(a, w.train, w.inventory, tok, tc);
    const auto rb = train_wsd(b, w.train, w.inventory, tok, tc);
    REQUIRE(ra.size() == 1);
    CHECK(std::isfinite(ra[0].train_loss));
    CHECK(ra[0].train_loss == rb[0].train_loss);
    CHECK(a.params.head.has_value());
    const auto batches = wsd_mlm_batches(w.test, w.inventory, tok, 5);
    CHECK(std::isfinite(validate_ce(a, batches).ce));
}
