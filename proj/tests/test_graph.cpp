#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "pase/graph.hpp"
#include "pase/tensor.hpp"

using namespace pase;

namespace {

Tensor2 random_tensor(std::size_t r, std::size_t c, std::mt19937_64& rng,
                      double lo = -2.0, double hi = 2.0) {
    return rand_uniform(r, c, rng, lo, hi);
}

// Central finite difference of a scalar-valued graph function with respect
// to one leaf tensor. Rebuilds the graph for every perturbed coordinate.
template <typename BuildFn>
Tensor2 numeric_grad(const Tensor2& x, BuildFn build, double h = 1e-6) {
    Tensor2 out(x.rows, x.cols);
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        Tensor2 xp = x, xm = x;
        xp.data[i] += h;
        xm.data[i] -= h;
        Graph gp, gm;
        const double fp = gp.value(build(gp, gp.input(xp))).scalar_value();
        const double fm = gm.value(build(gm, gm.input(xm))).scalar_value();
        out.data[i] = (fp - fm) / (2.0 * h);
    }
    return out;
}

double max_rel_error(const Tensor2& analytic, const Tensor2& numeric) {
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.data.size(); ++i) {
        const double denom = std::max(
            {std::abs(analytic.data[i]), std::abs(numeric.data[i]), 1e-8});
        worst = std::max(worst,
                         std::abs(analytic.data[i] - numeric.data[i]) / denom);
    }
    return worst;
}

}  // namespace

TEST_CASE("sigmoid of zero is one half") {
    Graph g;
    NodeId x = g.input(Tensor2::scalar(0.0));
    NodeId y = g.sigmoid(x);
    REQUIRE(g.value(y).scalar_value() == Catch::Approx(0.5).margin(0.0));
}

TEST_CASE("sigmoid gradient at zero is one quarter") {
    Graph g;
    NodeId x = g.input(Tensor2::scalar(0.0));
    NodeId y = g.sigmoid(x);
    g.backward(y);
    REQUIRE(g.grad(x).scalar_value() == Catch::Approx(0.25).margin(1e-15));
}

TEST_CASE("softmax rows sum to one within 1e-12") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        Graph g;
        Tensor2 x = random_tensor(5, 9, rng, -30.0, 30.0);
        const Tensor2& y = g.value(g.softmax_rows(g.input(x)));
        for (std::size_t i = 0; i < y.rows; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < y.cols; ++j) {
                REQUIRE(y.at(i, j) >= 0.0);
                s += y.at(i, j);
            }
            REQUIRE(std::abs(s - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("matmul with identity is identity") {
    std::mt19937_64 rng(11);
    Tensor2 x = random_tensor(3, 6, rng);
    Graph g;
    NodeId y = g.matmul(g.input(identity_matrix(3)), g.input(x));
    REQUIRE(max_abs_diff(g.value(y), x) == 0.0);
}

TEST_CASE("mean-all gradient is 1/n everywhere") {
    Graph g;
    NodeId x = g.input(Tensor2(4, 5, 2.5));
    g.backward(g.mean_all(x));
    for (double v : g.grad(x).data)
        REQUIRE(v == Catch::Approx(1.0 / 20.0).margin(0.0));
}

TEST_CASE("matmul gradient matches central differences") {
    std::mt19937_64 rng(3);
    Tensor2 a = random_tensor(3, 4, rng);
    Tensor2 b = random_tensor(4, 2, rng);

    Graph g;
    NodeId na = g.input(a);
    NodeId nb = g.input(b);
    NodeId loss = g.sum_all(g.mul(g.matmul(na, nb), g.constant(random_tensor(3, 2, rng))));
    // Re-derive the same weighting constant for the numeric side.
    std::mt19937_64 rng2(3);
    (void)random_tensor(3, 4, rng2);
    (void)random_tensor(4, 2, rng2);
    Tensor2 w = random_tensor(3, 2, rng2);
    g.backward(loss);

    Tensor2 num_a = numeric_grad(a, [&](Graph& gg, NodeId xa) {
        return gg.sum_all(gg.mul(gg.matmul(xa, gg.input(b)), gg.constant(w)));
    });
    Tensor2 num_b = numeric_grad(b, [&](Graph& gg, NodeId xb) {
        return gg.sum_all(gg.mul(gg.matmul(gg.input(a), xb), gg.constant(w)));
    });
    REQUIRE(max_rel_error(g.grad(na), num_a) < 1e-5);
    REQUIRE(max_rel_error(g.grad(nb), num_b) < 1e-5);
}

TEST_CASE("every primitive matches finite differences on random inputs") {
    // Scalarize each op through mean-all so the whole Jacobian is exercised.
    std::mt19937_64 rng(101);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t r = 2 + trial % 3, c = 2 + (trial / 3) % 4;
        Tensor2 x = random_tensor(r, c, rng);
        Tensor2 x2 = random_tensor(r, c, rng);
        Tensor2 bias = random_tensor(1, c, rng);
        Tensor2 m = random_tensor(c, 3, rng);
        Tensor2 w_concat = random_tensor(r, 2 * c, rng);
        Tensor2 w_t = random_tensor(c, r, rng);

        struct Case {
            const char* name;
            std::function<NodeId(Graph&, NodeId)> build;
        };
        const std::vector<Case> cases = {
            {"add", [&](Graph& g, NodeId a) { return g.mean_all(g.add(a, g.input(x2))); }},
            {"add-bias", [&](Graph& g, NodeId a) { return g.mean_all(g.add(a, g.input(bias))); }},
            {"sub", [&](Graph& g, NodeId a) { return g.mean_all(g.sub(a, g.input(x2))); }},
            {"mul", [&](Graph& g, NodeId a) { return g.mean_all(g.mul(a, g.input(x2))); }},
            {"scalar-mul", [&](Graph& g, NodeId a) { return g.mean_all(g.scalar_mul(a, -1.7)); }},
            {"sigmoid", [&](Graph& g, NodeId a) { return g.mean_all(g.sigmoid(a)); }},
            {"exp", [&](Graph& g, NodeId a) { return g.mean_all(g.exp(a)); }},
            {"softmax", [&](Graph& g, NodeId a) { return g.mean_all(g.mul(g.softmax_rows(a), g.constant(x2))); }},
            {"log-softmax", [&](Graph& g, NodeId a) { return g.mean_all(g.mul(g.log_softmax_rows(a), g.constant(x2))); }},
            {"sum", [&](Graph& g, NodeId a) { return g.sum_all(g.mul(a, g.constant(x2))); }},
            {"concat", [&](Graph& g, NodeId a) { return g.mean_all(g.mul(g.concat_cols(a, g.input(x2)), g.constant(w_concat))); }},
            {"l2norm", [&](Graph& g, NodeId a) { return g.mean_all(g.mul(g.l2_normalize_rows(a), g.constant(x2))); }},
            {"transpose", [&](Graph& g, NodeId a) { return g.mean_all(g.mul(g.transpose(a), g.constant(w_t))); }},
            {"matmul", [&](Graph& g, NodeId a) { return g.mean_all(g.matmul(a, g.input(m))); }},
        };
        for (const auto& cse : cases) {
            INFO(cse.name << " trial " << trial);
            Graph g;
            NodeId a = g.input(x);
            NodeId loss = cse.build(g, a);
            g.backward(loss);
            Tensor2 num = numeric_grad(x, cse.build);
            REQUIRE(max_rel_error(g.grad(a), num) < 1e-5);
        }
    }
    // relu and log checked on inputs away from their kinks/domain edge.
    for (int trial = 0; trial < 10; ++trial) {
        Tensor2 xp = random_tensor(3, 4, rng, 0.5, 2.0);
        for (auto which : {0, 1}) {
            auto build = [&, which](Graph& g, NodeId a) {
                NodeId y = which == 0 ? g.relu(a) : g.log(a);
                return g.mean_all(y);
            };
            Graph g;
            NodeId a = g.input(xp);
            g.backward(build(g, a));
            REQUIRE(max_rel_error(g.grad(a), numeric_grad(xp, build)) < 1e-5);
        }
    }
}

TEST_CASE("backward is linear in the loss") {
    std::mt19937_64 rng(23);
    Tensor2 x = random_tensor(3, 3, rng);
    const double ca = 1.7, cb = -0.4;

    auto l1 = [](Graph& g, NodeId a) { return g.mean_all(g.sigmoid(a)); };
    auto l2 = [](Graph& g, NodeId a) { return g.sum_all(g.mul(a, a)); };

    Graph g;
    NodeId a = g.input(x);
    NodeId combined = g.add(g.scalar_mul(l1(g, a), ca), g.scalar_mul(l2(g, a), cb));
    g.backward(combined);
    Tensor2 gc = g.grad(a);

    Graph g1;
    NodeId a1 = g1.input(x);
    g1.backward(l1(g1, a1));
    Graph g2;
    NodeId a2 = g2.input(x);
    g2.backward(l2(g2, a2));

    for (std::size_t i = 0; i < gc.data.size(); ++i) {
        const double expect = ca * g1.grad(a1).data[i] + cb * g2.grad(a2).data[i];
        REQUIRE(std::abs(gc.data[i] - expect) < 1e-12);
    }
}

TEST_CASE("identical op sequences produce bit-identical values") {
    auto run = [] {
        std::mt19937_64 rng(99);
        Graph g;
        NodeId x = g.input(rand_uniform(4, 4, rng, -2.0, 2.0));
        NodeId y = g.softmax_rows(g.matmul(x, g.input(rand_uniform(4, 4, rng, -1.0, 1.0))));
        return g.value(g.mean_all(y)).scalar_value();
    };
    const double once = run(), twice = run();
    REQUIRE(std::memcmp(&once, &twice, sizeof(double)) == 0);
}

TEST_CASE("unreachable nodes get zero gradient") {
    Graph g;
    NodeId used = g.input(Tensor2::scalar(2.0));
    NodeId unused = g.input(Tensor2(2, 2, 1.0));
    g.backward(g.mul(used, used));
    for (double v : g.grad(unused).data) REQUIRE(v == 0.0);
}

TEST_CASE("error contracts") {
    SECTION("shape mismatch names op and shapes") {
        Graph g;
        NodeId a = g.input(Tensor2(3, 4));
        NodeId b = g.input(Tensor2(5, 2));
        REQUIRE_THROWS_WITH(g.matmul(a, b),
                            Catch::Matchers::ContainsSubstring("matmul") &&
                                Catch::Matchers::ContainsSubstring("3x4") &&
                                Catch::Matchers::ContainsSubstring("5x2"));
    }
    SECTION("log of nonpositive input") {
        Graph g;
        NodeId a = g.input(Tensor2::scalar(-1.0));
        REQUIRE_THROWS_WITH(g.log(a),
                            Catch::Matchers::ContainsSubstring("non-finite"));
    }
    SECTION("non-scalar loss") {
        Graph g;
        NodeId a = g.input(Tensor2(2, 2, 1.0));
        REQUIRE_THROWS_AS(g.backward(a), std::invalid_argument);
    }
    SECTION("backward twice without reset") {
        Graph g;
        NodeId a = g.input(Tensor2::scalar(1.0));
        NodeId loss = g.mul(a, a);
        g.backward(loss);
        REQUIRE_THROWS_AS(g.backward(loss), std::logic_error);
        g.reset_gradients();
        REQUIRE_NOTHROW(g.backward(loss));
    }
}
