#include <doctest.h>

#include <cmath>

#include "tdlm/metrics.hpp"
#include "tdlm/random.hpp"

using namespace tdlm;

using Ints = std::vector<int>;
using Reals = std::vector<double>;

TEST_CASE("F1-micro and accuracy")
{
    CHECK(f1_micro(Ints{1, 0, 1}, Ints{1, 0, 1}) == 1.0);
    CHECK(f1_micro(Ints{1, 0, 1, 1}, Ints{1, 0, 0, 1}) == 0.75);
    CHECK(f1_micro(Ints{1, 1, 0}, Ints{0, 0, 1}) == 0.0);

    Rng rng(1);
    for (int trial = 0; trial < 500; ++trial) {
        Ints p, l;
        const auto n = 1 + rng.below(30);
        for (std::size_t i = 0; i < n; ++i) {
            p.push_back(static_cast<int>(rng.below(2)));
            l.push_back(static_cast<int>(rng.below(2)));
        }
        CHECK(f1_micro(p, l) == doctest::Approx(accuracy(p, l)).epsilon(1e-15));
    }
    CHECK_THROWS(f1_micro(Ints{1}, Ints{1, 0}));
    CHECK_THROWS(accuracy(Ints{}, Ints{}));
}

TEST_CASE("Matthews correlation")
{
    CHECK(matthews_corr(Ints{1, 0, 1, 0}, Ints{1, 0, 1, 0}) == doctest::Approx(1.0));
    CHECK(matthews_corr(Ints{0, 1, 0, 1}, Ints{1, 0, 1, 0}) == doctest::Approx(-1.0));
    CHECK(matthews_corr(Ints{1, 1, 0, 0}, Ints{1, 0, 1, 0}) == 0.0);
    // By hand: tp=3 fp=2 fn=1 tn=2.
    const Ints p{1, 1, 0, 1, 0, 0, 1, 1}, l{1, 0, 0, 1, 1, 0, 1, 0};
    const ConfusionCounts c = confusion(p, l);
    CHECK(c.tp == 3);
    CHECK(c.fp == 2);
    CHECK(c.fn == 1);
    CHECK(c.tn == 2);
    CHECK(std::abs(matthews_corr(p, l) - 0.2581988897471611) < 1e-15);
    // Empty marginal.
    CHECK(matthews_corr(Ints{1, 1, 1}, Ints{1, 0, 1}) == 0.0);

    Rng rng(2);
    for (int trial = 0; trial < 300; ++trial) {
        Ints a, b;
        for (int i = 0; i < 12; ++i) {
            a.push_back(static_cast<int>(rng.below(2)));
            b.push_back(static_cast<int>(rng.below(2)));
        }
        Ints na, nb;
        for (int v : a) na.push_back(1 - v);
        for (int v : b) nb.push_back(1 - v);
        CHECK(matthews_corr(na, nb) == doctest::Approx(matthews_corr(a, b)).epsilon(1e-14));
    }
}

TEST_CASE("Spearman correlation")
{
    CHECK(*spearman_rho(Reals{1, 2, 3, 4}, Reals{10, 20, 30, 45}) == doctest::Approx(1.0));
    CHECK(*spearman_rho(Reals{1, 2, 3, 4}, Reals{4, 3, 2, 1}) == doctest::Approx(-1.0));
    CHECK(*spearman_rho(Reals{1, 2, 3}, Reals{1, 3, 2}) == doctest::Approx(0.5));
    // Ties, scipy.stats.spearmanr oracle.
    CHECK(std::abs(*spearman_rho(Reals{1, 2, 2, 3, 5, 4}, Reals{2, 1, 4, 4, 6, 3}) - 0.6617647058823529) < 1e-14);
    CHECK(fractional_ranks(Reals{10, 20, 20, 5}) == Reals{2, 3.5, 3.5, 1});
    CHECK_FALSE(spearman_rho(Reals{1, 1, 1}, Reals{1, 2, 3}).has_value());

    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        Reals x, y, fx;
        for (int i = 0; i < 15; ++i) {
            x.push_back(rng.normal());
            y.push_back(rng.normal());
        }
        for (double v : x) fx.push_back(std::exp(3 * v) + 7);
        CHECK(*spearman_rho(fx, y) == doctest::Approx(*spearman_rho(x, y)).epsilon(1e-12));
    }
}
