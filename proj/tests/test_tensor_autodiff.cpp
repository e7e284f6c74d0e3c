#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "trusttune/errors.hpp"
#include "trusttune/grad_check.hpp"
#include "trusttune/graph.hpp"
#include "trusttune/rng.hpp"

using namespace trusttune;

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t = Tensor::zeros(shape);
    for (double& v : t.values) v = rng.uniform(lo, hi);
    return t;
}

// FD check for a graph program over `params`.
double fd_check(const std::function<NodeId(Graph&, std::vector<NodeId>&)>& build,
                std::vector<Tensor*> params, double h = 1e-5) {
    auto eval = [&](bool with_grad) {
        Graph g;
        std::vector<NodeId> nodes;
        for (Tensor* p : params) nodes.push_back(g.param(*p));
        NodeId loss = build(g, nodes);
        const double v = g.scalar_value(loss);
        if (with_grad) g.backward(loss);
        return v;
    };
    return check_gradients(eval, params, h);
}

// Weighted sum against a fixed random tensor turns any output into a scalar
// with nondegenerate gradients. The weights are frozen at construction so the
// loss stays a fixed function across FD evaluations.
struct WeightedSum {
    Tensor c;
    WeightedSum(const Shape& shape, Rng& rng) : c(random_tensor(shape, rng)) {}
    NodeId operator()(Graph& g, NodeId out) const { return g.sum_all(g.mul(out, g.constant(c))); }
};

}  // namespace

TEST_CASE("matmul with identity preserves values") {
    Graph g;
    Tensor eye({2, 2}, {1, 0, 0, 1});
    Rng rng(7);
    Tensor x = random_tensor({2, 5}, rng);
    NodeId out = g.matmul(g.constant(eye), g.constant(x));
    CHECK(g.value(out).values == x.values);
}

TEST_CASE("softmax closed forms") {
    Graph g;
    NodeId a = g.softmax_rows(g.constant(Tensor({2}, {0.0, 0.0})));
    CHECK(g.value(a).values[0] == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(g.value(a).values[1] == doctest::Approx(0.5).epsilon(1e-14));

    NodeId b = g.softmax_rows(g.constant(Tensor({2}, {std::log(2.0), 0.0})));
    CHECK(g.value(b).values[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
    CHECK(g.value(b).values[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
}

TEST_CASE("softmax rows are distributions") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        Graph g;
        Tensor x = random_tensor({4, 6}, rng, -30.0, 30.0);
        const Tensor& s = g.value(g.softmax_rows(g.constant(x)));
        for (std::size_t r = 0; r < 4; ++r) {
            double sum = 0.0;
            for (std::size_t c = 0; c < 6; ++c) {
                CHECK(s.values[r * 6 + c] >= 0.0);
                sum += s.values[r * 6 + c];
            }
            CHECK(std::abs(sum - 1.0) <= 1e-12);
        }
    }
}

TEST_CASE("backward of sum is all-ones; x*x summed gives 2x") {
    Tensor x({3}, {3.0, 3.0, 3.0});
    Graph g;
    NodeId xn = g.param(x);
    g.backward(g.sum_all(xn));
    for (double v : *x.grad) CHECK(v == 1.0);

    Tensor y({1}, {3.0});
    Graph g2;
    NodeId yn = g2.param(y);
    g2.backward(g2.sum_all(g2.mul(yn, yn)));
    CHECK((*y.grad)[0] == doctest::Approx(6.0).epsilon(1e-14));
}

TEST_CASE("three-layer random composition matches finite differences") {
    Rng rng(23);
    Tensor w1 = random_tensor({4, 5}, rng);
    Tensor w2 = random_tensor({5, 3}, rng);
    Tensor w3 = random_tensor({3, 2}, rng);
    Tensor x = random_tensor({2, 4}, rng);
    auto build = [&](Graph& g, std::vector<NodeId>& p) {
        NodeId h1 = g.tanh_op(g.matmul(p[3], p[0]));
        NodeId h2 = g.tanh_op(g.matmul(h1, p[1]));
        NodeId out = g.softmax_rows(g.matmul(h2, p[2]));
        return g.sum_all(g.mul(out, out));
    };
    CHECK(fd_check(build, {&w1, &w2, &w3, &x}) <= 1e-4);
}

TEST_CASE("check_gradients is near-exact for a linear loss") {
    Rng rng(31);
    Tensor x = random_tensor({6}, rng);
    Tensor c = random_tensor({6}, rng);
    auto build = [&](Graph& g, std::vector<NodeId>& p) {
        return g.sum_all(g.mul(p[0], g.constant(c)));
    };
    CHECK(fd_check(build, {&x}) <= 1e-10);
}

TEST_CASE("softmax + cross-entropy composite gradient") {
    Rng rng(37);
    Tensor logits = random_tensor({1, 5}, rng);
    auto build = [&](Graph& g, std::vector<NodeId>& p) {
        NodeId logp = g.log_softmax_rows(p[0]);
        return g.scale(g.select(logp, 2), -1.0);
    };
    CHECK(fd_check(build, {&logits}) <= 1e-6);
}

TEST_CASE("every registered op passes the finite-difference property") {
    Rng rng(41);

    SUBCASE("matmul") {
        Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
        WeightedSum ws({3, 2}, rng);
        CHECK(fd_check([&](Graph& g, std::vector<NodeId>& p) { return ws(g, g.matmul(p[0], p[1])); },
                       {&a, &b}) <= 1e-4);
    }
    SUBCASE("transpose") {
        Tensor a = random_tensor({3, 4}, rng);
        WeightedSum ws({4, 3}, rng);
        CHECK(fd_check([&](Graph& g, std::vector<NodeId>& p) { return ws(g, g.transpose(p[0])); },
                       {&a}) <= 1e-4);
    }
    SUBCASE("add / sub / multiply") {
        Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
        WeightedSum ws({3, 4}, rng);
        CHECK(fd_check([&](Graph& g, std::vector<NodeId>& p) { return ws(g, g.add(p[0], p[1])); },
                       {&a, &b}) <= 1e-4);
        CHECK(fd_check([&](Graph& g, std::vector<NodeId>& p) { return ws(g, g.sub(p[0], p[1])); },
                       {&a, &b}) <= 1e-4);
        CHECK(fd_check([&](Graph& g, std::vector<NodeId>& p) { return ws(g, g.mul(p[0], p[1])); },
                       {&a, &b}) <= 1e-4);
    }
    SUBCASE("add_row_bias") {
        Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4}, rng);
        WeightedSum ws({3, 4}, rng);
        CHECK(fd_check([&](Graph& g, std::vector<NodeId>& p) { return ws(g, g.add_row_bias(p[0], p[1])); },
                       {&a, &b}) <= 1e-4);
    }
    SUBCASE("scale / scale_by / reciprocal") {
        Tensor a = random_tensor({2, 3}, rng);
        Tensor s = random_tensor({1}, rng, 0.5, 1.5);
        WeightedSum ws({2, 3}, rng);
        CHECK(fd_check([&](Graph& g, std::vector<NodeId>& p) { return ws(g, g.scale(p[0], -2.5)); },
                       {&a}) <= 1e-4);
        CHECK(fd_check([&](Graph& g, std::vector<NodeId>& p) { return ws(g, g.scale_by(p[0], p[1])); },
                       {&a, &s}) <= 1e-4);
        CHECK(fd_check(
                  [&](Graph& g, std::vector<NodeId>& p) { return ws(g, g.scale_by(p[0], g.reciprocal(p[1]))); },
                  {&a, &s}) <= 1e-4);
    }
    SUBCASE("tanh") {
        Tensor a = random_tensor({2, 5}, rng);
        WeightedSum ws({2, 5}, rng);
        CHECK(fd_check([&](Graph& g, std::vector<NodeId>& p) { return ws(g, g.tanh_op(p[0])); },
                       {&a}) <= 1e-4);
    }
    SUBCASE("log") {
        Tensor a = random_tensor({2, 5}, rng, 0.5, 1.5);
        WeightedSum ws({2, 5}, rng);
        CHECK(fd_check([&](Graph& g, std::vector<NodeId>& p) { return ws(g, g.log_floored(p[0])); },
                       {&a}) <= 1e-4);
    }
    SUBCASE("softmax / log_softmax") {
        Tensor a = random_tensor({3, 4}, rng);
        WeightedSum ws({3, 4}, rng);
        CHECK(fd_check([&](Graph& g, std::vector<NodeId>& p) { return ws(g, g.softmax_rows(p[0])); },
                       {&a}) <= 1e-4);
        CHECK(fd_check([&](Graph& g, std::vector<NodeId>& p) { return ws(g, g.log_softmax_rows(p[0])); },
                       {&a}) <= 1e-4);
    }
    SUBCASE("reductions") {
        Tensor a = random_tensor({3, 4}, rng);
        WeightedSum ws({1, 4}, rng);
        CHECK(fd_check([&](Graph& g, std::vector<NodeId>& p) { return g.sum_all(p[0]); }, {&a}) <= 1e-4);
        CHECK(fd_check([&](Graph& g, std::vector<NodeId>& p) { return g.mean_all(p[0]); }, {&a}) <= 1e-4);
        CHECK(fd_check([&](Graph& g, std::vector<NodeId>& p) { return ws(g, g.mean_rows(p[0])); },
                       {&a}) <= 1e-4);
    }
    SUBCASE("row / select") {
        Tensor a = random_tensor({3, 4}, rng);
        WeightedSum ws({1, 4}, rng);
        CHECK(fd_check([&](Graph& g, std::vector<NodeId>& p) { return ws(g, g.row(p[0], 1)); }, {&a}) <= 1e-4);
        CHECK(fd_check([&](Graph& g, std::vector<NodeId>& p) { return g.select(p[0], 5); }, {&a}) <= 1e-4);
    }
    SUBCASE("layer_norm") {
        Tensor x = random_tensor({3, 6}, rng);
        Tensor gain = random_tensor({6}, rng, 0.5, 1.5);
        Tensor bias = random_tensor({6}, rng);
        WeightedSum ws({3, 6}, rng);
        CHECK(fd_check(
                  [&](Graph& g, std::vector<NodeId>& p) { return ws(g, g.layer_norm(p[0], p[1], p[2])); },
                  {&x, &gain, &bias}) <= 1e-4);
    }
    SUBCASE("embedding") {
        Tensor table = random_tensor({6, 4}, rng);
        std::vector<int> ids{0, 3, 3, 5};
        WeightedSum ws({4, 4}, rng);
        CHECK(fd_check([&](Graph& g, std::vector<NodeId>& p) { return ws(g, g.embedding(p[0], ids)); },
                       {&table}) <= 1e-4);
    }
    SUBCASE("concat_rows") {
        Tensor a = random_tensor({2, 3}, rng), b = random_tensor({4, 3}, rng);
        WeightedSum ws({6, 3}, rng);
        CHECK(fd_check([&](Graph& g, std::vector<NodeId>& p) { return ws(g, g.concat_rows(p[0], p[1])); },
                       {&a, &b}) <= 1e-4);
    }
}

TEST_CASE("replaying an identical graph reproduces bitwise-identical outputs") {
    Rng seed_rng(53);
    Tensor a = random_tensor({4, 4}, seed_rng);
    Tensor b = random_tensor({4, 4}, seed_rng);
    auto run = [&]() {
        Graph g;
        NodeId out = g.softmax_rows(g.matmul(g.tanh_op(g.constant(a)), g.constant(b)));
        return g.value(out).values;
    };
    CHECK(run() == run());
}

TEST_CASE("pass counters and the xFP rule") {
    Graph g;
    Tensor x({2}, {1.0, 2.0});
    NodeId loss = g.sum_all(g.param(x));
    g.count_forward_pass();
    g.backward(loss);
    PassCounters c = g.pass_counters();
    CHECK(c.forward == 1);
    CHECK(c.backward == 1);
    CHECK(c.xfp() == 3);

    CHECK(PassCounters{2, 1}.xfp() == 4);
    CHECK(PassCounters{3, 3}.xfp() == 9);
}

TEST_CASE("gradient accumulates across backward calls") {
    Tensor x({2}, {1.0, 2.0});
    Graph g;
    NodeId loss = g.sum_all(g.param(x));
    g.backward(loss);
    g.backward(loss);
    CHECK((*x.grad)[0] == 2.0);
    CHECK(g.backward_count() == 2);
}

TEST_CASE("shape and numeric errors") {
    Graph g;
    NodeId a = g.constant(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
    CHECK_THROWS_WITH_AS(g.matmul(a, a), doctest::Contains("matmul"), ShapeError);
    CHECK_THROWS_AS(g.add(a, g.constant(Tensor({3}, {1, 2, 3}))), ShapeError);
    CHECK_THROWS_AS(g.concat_rows(a, g.constant(Tensor({2, 2}, {1, 2, 3, 4}))), ShapeError);
    CHECK_THROWS_AS(g.backward(a), ShapeError);  // loss not scalar
    CHECK_THROWS_AS(g.reciprocal(g.constant(Tensor({1}, {0.0}))), NumericError);
    CHECK_THROWS_AS(g.embedding(a, {7}), ShapeError);  // out-of-vocabulary id
    CHECK_THROWS_AS(g.embedding(a, {}), ShapeError);   // empty sequence

    Graph empty;
    CHECK_THROWS_AS(empty.backward(0), Error);  // backward before any forward
}

TEST_CASE("log is floored, not infinite") {
    Graph g;
    const Tensor& v = g.value(g.log_floored(g.constant(Tensor({2}, {0.0, 1.0}))));
    CHECK(v.values[0] == doctest::Approx(std::log(1e-12)));
    CHECK(v.values[1] == 0.0);
}
