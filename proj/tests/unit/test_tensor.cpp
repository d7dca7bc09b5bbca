#include <doctest.h>

#include "ostr/errors.hpp"
#include "ostr/gradcheck.hpp"
#include "ostr/tensor.hpp"

#include <cmath>

using namespace ostr;
using TD = Tensor<double>;

namespace {

std::vector<double> values(const TD& t) { return {t.data().begin(), t.data().end()}; }

} // namespace

TEST_CASE("matmul identity and orthogonal cases")
{
    auto id = TD::from({2, 2}, {1, 0, 0, 1});
    auto b = TD::from({2, 2}, {1, 2, 3, 4});
    CHECK(values(matmul(id, b)) == std::vector<double>{1, 2, 3, 4});

    auto row = TD::from({1, 2}, {1, 0});
    auto col = TD::from({2, 1}, {0, 1});
    CHECK(values(matmul(row, col)) == std::vector<double>{0});

    CHECK_THROWS_AS(matmul(TD::zeros({2, 3}), TD::zeros({2, 3})), DimensionError);
}

TEST_CASE("matmul gradient matches finite differences")
{
    Rng rng(11);
    for (int trial = 0; trial < 5; ++trial) {
        auto a = random_tensor(rng, {3, 4});
        auto b = random_tensor(rng, {4, 2});
        auto rep = gradcheck([](const auto& in) { return matmul(in[0], in[1]); }, {a, b});
        CHECK(rep.max_rel_error < 1e-4);
    }
}

TEST_CASE("conv2d identity and summing kernels")
{
    auto x = TD::from({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    auto k1 = TD::from({1, 1, 1, 1}, {1});
    CHECK(values(conv2d(x, k1, 1, 0)) == values(x));

    auto ones = TD::full({1, 2, 2}, 1.0);
    auto sumk = TD::full({1, 1, 2, 2}, 1.0);
    auto out = conv2d(ones, sumk, 1, 0);
    CHECK(out.shape() == Shape{1, 1, 1});
    CHECK(out[0] == 4.0);

    CHECK_THROWS_AS(conv2d(x, k1, 0, 0), DimensionError);
    CHECK_THROWS_AS(conv2d(x, TD::zeros({1, 1, 5, 5}), 1, 0), DimensionError);
    CHECK_THROWS_AS(conv2d(x, TD::zeros({1, 2, 1, 1}), 1, 0), DimensionError);
}

TEST_CASE("conv2d gradient with stride, padding and bias")
{
    Rng rng(3);
    auto x = random_tensor(rng, {2, 5, 5});
    auto w = random_tensor(rng, {3, 2, 3, 3});
    auto b = random_tensor(rng, {3});
    auto rep = gradcheck([](const auto& in) { return conv2d(in[0], in[1], in[2], 1, 1); }, {x, w, b});
    CHECK(rep.max_rel_error < 1e-4);
    auto rep2 = gradcheck([](const auto& in) { return conv2d(in[0], in[1], 2, 1); }, {x, w});
    CHECK(rep2.max_rel_error < 1e-4);
}

TEST_CASE("pointwise values and sigmoid gradient at zero")
{
    CHECK(sigmoid(TD::scalar(0.0))[0] == doctest::Approx(0.5));
    CHECK(relu(TD::scalar(-3.0))[0] == 0.0);
    CHECK(relu(TD::scalar(3.0))[0] == 3.0);

    auto x = TD::scalar(0.0, true);
    auto y = sigmoid(x);
    backward(y);
    CHECK(x.grad()[0] == doctest::Approx(0.25).epsilon(1e-12));
    auto rep = gradcheck([](const auto& in) { return sigmoid(in[0]); }, {TD::scalar(0.0)});
    CHECK(rep.max_rel_error < 1e-8);
}

TEST_CASE("l2_normalize contract")
{
    auto v = l2_normalize(TD::from({2}, {3, 4}));
    CHECK(v[0] == doctest::Approx(0.6));
    CHECK(v[1] == doctest::Approx(0.8));

    auto u = TD::from({3}, {0, 1, 0});
    CHECK(values(l2_normalize(u)) == values(u));

    Rng rng(5);
    auto r = random_tensor(rng, {8});
    auto n = l2_normalize(r);
    double sq = 0;
    for (auto x : n.data()) sq += x * x;
    CHECK(std::sqrt(sq) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(gradcheck([](const auto& in) { return l2_normalize(in[0]); }, {r}).max_rel_error < 1e-4);

    CHECK_THROWS_AS(l2_normalize(TD::zeros({4}), NormMode::Strict), DegenerateInputError);
    // Training mode floors the denominator instead of failing.
    auto z = l2_normalize(TD::zeros({4}), NormMode::Training);
    CHECK(std::isfinite(z[0]));
}

TEST_CASE("softmax cross-entropy")
{
    const std::size_t n = 7;
    auto uniform = TD::full({n}, 0.3);
    auto onehot = TD::zeros({n});
    onehot.mutable_data()[2] = 1.0;
    CHECK(softmax_cross_entropy(uniform, onehot)[0] == doctest::Approx(std::log(double(n))));

    auto confident = TD::from({3}, {1e4, 0, 0});
    auto t0 = TD::from({3}, {1, 0, 0});
    CHECK(softmax_cross_entropy(confident, t0)[0] == doctest::Approx(0.0).epsilon(1e-12));

    Rng rng(9);
    auto logits = random_tensor(rng, {6}, -3, 3);
    auto t = TD::zeros({6});
    t.mutable_data()[4] = 1.0;
    double se = 0;
    for (auto a : logits.data()) se += std::exp(a);
    const double direct = -std::log(std::exp(logits[4]) / se);
    CHECK(std::abs(softmax_cross_entropy(logits, t)[0] - direct) < 1e-6);

    CHECK_THROWS_AS(softmax_cross_entropy(logits, TD::zeros({6})), ContractError);
    auto two = TD::zeros({6});
    two.mutable_data()[0] = two.mutable_data()[1] = 1.0;
    CHECK_THROWS_AS(softmax_cross_entropy(logits, two), ContractError);

    // gradient = softmax - onehot
    auto x = TD::from({6}, values(logits), true);
    backward(softmax_cross_entropy(x, t));
    for (std::size_t i = 0; i < 6; ++i) {
        const double p = std::exp(logits[i]) / se;
        CHECK(x.grad()[i] == doctest::Approx(p - (i == 4 ? 1.0 : 0.0)).epsilon(1e-10));
    }
}

TEST_CASE("gradcheck on linear and composed graphs")
{
    Rng rng(21);
    auto a = random_tensor(rng, {3, 3});
    auto x = random_tensor(rng, {3, 2});
    auto lin = gradcheck([](const auto& in) { return matmul(in[0], in[1]); }, {a, x});
    CHECK(lin.max_rel_error < 1e-10);
    auto comp = gradcheck([](const auto& in) { return sigmoid(matmul(in[0], in[1])); }, {a, x});
    CHECK(comp.max_rel_error < 1e-6);
}

TEST_CASE("shared sub-expressions accumulate gradients")
{
    auto x = TD::scalar(1.7, true);
    backward(add(x, x));
    CHECK(x.grad()[0] == 2.0);

    auto y = TD::from({2}, {0.5, -1.0}, true);
    auto s = sum(mul(y, y));
    backward(s);
    CHECK(y.grad()[0] == doctest::Approx(1.0));
    CHECK(y.grad()[1] == doctest::Approx(-2.0));
}

TEST_CASE("tape records ops in execution order")
{
    auto a = TD::from({2, 2}, {1, 2, 3, 4}, true);
    auto b = TD::from({2, 2}, {1, 0, 0, 1}, true);
    auto loss = sum(relu(matmul(a, b)));
    ComputationTape<double> tape(loss);
    const auto ops = tape.op_names();
    REQUIRE(ops.size() == 5);
    CHECK(ops[2] == std::string("matmul"));
    CHECK(ops[3] == std::string("relu"));
    CHECK(ops[4] == std::string("sum"));
    tape.backward();
    CHECK(a.has_grad());
    CHECK(b.has_grad());
}

TEST_CASE("forward results are bit-identical across runs")
{
    Rng r1(4), r2(4);
    auto x1 = random_tensor(r1, {2, 6, 6});
    auto w1 = random_tensor(r1, {3, 2, 3, 3});
    auto x2 = random_tensor(r2, {2, 6, 6});
    auto w2 = random_tensor(r2, {3, 2, 3, 3});
    CHECK(values(conv2d(x1, w1, 1, 1)) == values(conv2d(x2, w2, 1, 1)));
}

TEST_CASE("layout and reduction ops")
{
    Rng rng(8);
    auto x = random_tensor(rng, {3, 5});
    CHECK(gradcheck([](const auto& in) { return softmax_rows(in[0]); }, {x}).max_rel_error < 1e-4);
    CHECK(gradcheck([](const auto& in) { return l2_normalize_rows(in[0]); }, {x}).max_rel_error < 1e-4);
    CHECK(gradcheck([](const auto& in) { return transpose(in[0]); }, {x}).max_rel_error < 1e-8);
    const std::size_t cols[] = {4, 0, 4};
    CHECK(gradcheck([&](const auto& in) { return select_columns(in[0], std::span<const std::size_t>(cols)); }, {x})
              .max_rel_error < 1e-8);
    auto s = random_tensor(rng, {1});
    CHECK(gradcheck([](const auto& in) { return append_scalar_column(in[0], in[1]); }, {x, s}).max_rel_error < 1e-8);
    auto sq = random_tensor(rng, {4, 4});
    CHECK(gradcheck([](const auto& in) { return zero_diagonal(in[0]); }, {sq}).max_rel_error < 1e-8);
    std::vector<std::vector<std::size_t>> groups{{0, 3}, {1}, {2, 4}};
    CHECK(gradcheck([&](const auto& in) { return column_group_max(in[0], groups); }, {x}).max_rel_error < 1e-8);
    auto img = random_tensor(rng, {3, 4, 5});
    CHECK(gradcheck([](const auto& in) { return global_avg_pool(in[0]); }, {img}).max_rel_error < 1e-8);
    CHECK(gradcheck([](const auto& in) { return scale(in[0], in[1]); }, {x, s}).max_rel_error < 1e-8);
    CHECK_THROWS_AS(reshape(x, {4, 4}), DimensionError);
    CHECK_THROWS_AS(Tensor<double>::from({2, 2}, {1, 2, 3}), DimensionError);
}
