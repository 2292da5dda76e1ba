#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "pase/metrics.hpp"

using namespace pase;

TEST_CASE("perfect predictions") {
    const std::vector<double> truth = {1.0, -2.0, 0.5, -0.5, 3.0};
    auto rep = compute_regression_metrics(truth, truth);
    REQUIRE(rep.acc2_nonneg == 1.0);
    REQUIRE(rep.acc2_pos == 1.0);
    REQUIRE(rep.acc7 == 1.0);
    REQUIRE(rep.f1_nonneg == 1.0);
    REQUIRE(rep.f1_pos == 1.0);
    REQUIRE(rep.mae == 0.0);
    REQUIRE(rep.corr == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("four-element worked example") {
    const std::vector<double> pred = {1.0, -1.0, 0.5, -0.5};
    const std::vector<double> truth = {1.0, -1.0, -0.5, 0.5};
    auto rep = compute_regression_metrics(pred, truth);
    REQUIRE(rep.acc2_pos == Catch::Approx(0.5).margin(0.0));
    REQUIRE(rep.n_pos == 4);
    REQUIRE(rep.mae == Catch::Approx(0.5).margin(0.0));
    // hand oracle: means are 0, cov = 1.5/4, var = 2.5/4 each side
    REQUIRE(rep.corr == Catch::Approx(1.5 / 2.5).margin(1e-12));
}

TEST_CASE("zero targets are dropped only under the POS convention") {
    const std::vector<double> pred = {0.4, -0.7, 1.2};
    const std::vector<double> truth = {0.0, -1.0, 1.0};
    auto rep = compute_regression_metrics(pred, truth);
    REQUIRE(rep.n_nonneg == 3);
    REQUIRE(rep.n_pos == 2);
    REQUIRE(rep.acc2_pos == 1.0);
    REQUIRE(rep.acc2_nonneg == 1.0);
}

TEST_CASE("conventions agree when no target is zero") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> d(-3.0, 3.0);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<double> pred(40), truth(40);
        for (std::size_t i = 0; i < 40; ++i) {
            pred[i] = d(rng);
            truth[i] = d(rng);
            if (truth[i] == 0.0) truth[i] = 0.1;
        }
        auto rep = compute_regression_metrics(pred, truth);
        // Predictions that are exactly zero would split the conventions,
        // but a continuous draw never lands there.
        REQUIRE(rep.acc2_pos == rep.acc2_nonneg);
    }
}

TEST_CASE("correlation is invariant under positive affine transforms") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> d(-3.0, 3.0);
    std::vector<double> pred(25), truth(25);
    for (std::size_t i = 0; i < 25; ++i) {
        pred[i] = d(rng);
        truth[i] = d(rng);
    }
    auto base = compute_regression_metrics(pred, truth);
    std::vector<double> scaled(25);
    for (std::size_t i = 0; i < 25; ++i) scaled[i] = 0.4 * pred[i] + 1.3;
    auto moved = compute_regression_metrics(scaled, truth);
    REQUIRE(moved.corr == Catch::Approx(base.corr).margin(1e-12));
}

TEST_CASE("zero-variance input flags correlation undefined") {
    const std::vector<double> pred = {1.0, 1.0, 1.0};
    const std::vector<double> truth = {0.5, -0.5, 1.0};
    auto rep = compute_regression_metrics(pred, truth);
    REQUIRE_FALSE(rep.corr_defined);
    REQUIRE(rep.corr == 0.0);
}

TEST_CASE("classification metrics") {
    // three classes, one mistake: sample 3 (class 1 predicted as 2)
    Tensor2 dist(4, 3);
    dist.at(0, 0) = 0.9; dist.at(0, 1) = 0.05; dist.at(0, 2) = 0.05;
    dist.at(1, 1) = 0.8; dist.at(1, 0) = 0.1;  dist.at(1, 2) = 0.1;
    dist.at(2, 2) = 0.7; dist.at(2, 0) = 0.2;  dist.at(2, 1) = 0.1;
    dist.at(3, 2) = 0.6; dist.at(3, 1) = 0.3;  dist.at(3, 0) = 0.1;
    const std::vector<std::uint32_t> labels = {0, 1, 2, 1};

    auto rep = compute_classification_metrics(dist, labels);
    REQUIRE(rep.accuracy == Catch::Approx(0.75).margin(0.0));
    REQUIRE(rep.wa == Catch::Approx(0.75).margin(1e-12));
    REQUIRE(rep.per_class_f1.at(0) == 1.0);
    // class 1: precision 1, recall 1/2 -> f1 = 2/3
    REQUIRE(rep.per_class_f1.at(1) == Catch::Approx(2.0 / 3.0).margin(1e-12));
    // class 2: precision 1/2, recall 1 -> f1 = 2/3
    REQUIRE(rep.per_class_f1.at(2) == Catch::Approx(2.0 / 3.0).margin(1e-12));
    REQUIRE(rep.weighted_f1 ==
            Catch::Approx((1.0 + 2.0 * 2.0 / 3.0 + 2.0 / 3.0) / 4.0).margin(1e-12));
}

TEST_CASE("weighted F1 equals accuracy when every class is perfect") {
    Tensor2 dist(3, 2);
    dist.at(0, 0) = 1.0;
    dist.at(1, 1) = 1.0;
    dist.at(2, 0) = 1.0;
    auto rep = compute_classification_metrics(dist, {0, 1, 0});
    REQUIRE(rep.weighted_f1 == rep.accuracy);
    REQUIRE(rep.accuracy == 1.0);
}

TEST_CASE("classification with scores fills the regression family") {
    Tensor2 dist(2, 3);
    dist.at(0, 0) = 1.0;   // class 0 -> expected score -3
    dist.at(1, 2) = 1.0;   // class 2 -> expected score +3
    const std::vector<std::uint32_t> labels = {0, 2};
    const std::vector<double> scores = {-3.0, 3.0};
    auto rep = compute_classification_metrics(dist, labels, &scores);
    REQUIRE(rep.acc2_nonneg == 1.0);
    REQUIRE(rep.mae == 0.0);
    REQUIRE(rep.accuracy == 1.0);
}

TEST_CASE("aggregate_runs") {
    SECTION("identical reports have zero std") {
        MetricsReport r;
        r.accuracy = 0.8;
        auto agg = aggregate_runs({r, r, r});
        REQUIRE(agg.at("accuracy").mean == Catch::Approx(0.8).margin(1e-15));
        REQUIRE(agg.at("accuracy").stddev == 0.0);
    }
    SECTION("two-point formula") {
        MetricsReport a, b;
        a.accuracy = 0.8;
        b.accuracy = 0.9;
        auto agg = aggregate_runs({a, b});
        REQUIRE(agg.at("accuracy").mean == Catch::Approx(0.85).margin(1e-15));
        REQUIRE(agg.at("accuracy").stddev ==
                Catch::Approx(0.0707106781).margin(1e-9));
    }
    SECTION("empty list throws") {
        REQUIRE_THROWS_AS(aggregate_runs({}), std::invalid_argument);
    }
}
