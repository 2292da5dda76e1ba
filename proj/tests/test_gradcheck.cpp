#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "pase/gradcheck.hpp"
#include "pase/graph.hpp"
#include "pase/params.hpp"

using namespace pase;

TEST_CASE("sum of squares passes at 1e-6") {
    std::mt19937_64 rng(5);
    ParamSet params;
    params.add("x", ParamGroup::Shared, randn(3, 4, rng));
    params.add("y", ParamGroup::Shared, randn(2, 2, rng));

    auto f = [](Graph& g, const std::unordered_map<std::string, NodeId>& ids) {
        NodeId x = ids.at("x");
        NodeId y = ids.at("y");
        return g.add(g.sum_all(g.mul(x, x)), g.sum_all(g.mul(y, y)));
    };
    auto result = finite_diff_check(f, params, 1e-6, 1e-6);
    INFO(result.worst_param << "[" << result.worst_index
                            << "] rel=" << result.max_rel_error);
    REQUIRE(result.pass);
}

TEST_CASE("composite softmax loss passes at 1e-4") {
    std::mt19937_64 rng(17);
    ParamSet params;
    params.add("w", ParamGroup::Shared, randn(3, 4, rng, 0.5));
    params.add("h", ParamGroup::Text, rand_uniform(4, 3, rng, -2.0, 2.0));

    auto f = [](Graph& g, const std::unordered_map<std::string, NodeId>& ids) {
        NodeId z = g.matmul(ids.at("h"), ids.at("w"));
        return g.scalar_mul(g.mean_all(g.log_softmax_rows(z)), -1.0);
    };
    auto result = finite_diff_check(f, params, 1e-6, 1e-4);
    REQUIRE(result.pass);
}

TEST_CASE("intentionally wrong gradient rule fails") {
    // The builder freezes a copy of x into a constant, so the tape gradient
    // of x*const(x) is const(x) while the true derivative of x^2 is 2x.
    std::mt19937_64 rng(29);
    ParamSet params;
    params.add("x", ParamGroup::Shared, rand_uniform(2, 2, rng, 0.5, 2.0));

    auto f = [&params](Graph& g, const std::unordered_map<std::string, NodeId>& ids) {
        NodeId frozen = g.constant(params.at("x").value);
        return g.sum_all(g.mul(ids.at("x"), frozen));
    };
    auto result = finite_diff_check(f, params, 1e-6, 1e-4);
    REQUIRE_FALSE(result.pass);
    REQUIRE(result.max_rel_error > 0.1);
}

TEST_CASE("non-finite perturbed loss is reported with coordinate") {
    ParamSet params;
    params.add("x", ParamGroup::Shared, Tensor2::scalar(1e-7));

    auto f = [](Graph& g, const std::unordered_map<std::string, NodeId>& ids) {
        return g.sum_all(g.log(ids.at("x")));  // x - h goes negative
    };
    auto result = finite_diff_check(f, params, 1e-6, 1e-4);
    REQUIRE_FALSE(result.pass);
    REQUIRE_FALSE(result.failure.empty());
    REQUIRE(result.failure.find("x[0]") != std::string::npos);
}
