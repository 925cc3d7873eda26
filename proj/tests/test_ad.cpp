#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dsplat/ad.hpp"
#include "dsplat/rng.hpp"

#include <cmath>
#include <functional>

using namespace dsplat;
using ad::Array;
using ad::Ref;
using ad::Tape;

TEST_CASE("mul of a variable with itself doubles the adjoint") {
    Tape t;
    const Ref x = t.input(Array::scalar(3.0));
    const Ref y = ad::mul(t, x, x);
    CHECK(t.value(y).data[0] == doctest::Approx(9.0));
    t.backward(y);
    CHECK(t.grad(x).data[0] == doctest::Approx(6.0));
}

TEST_CASE("sigmoid at zero") {
    Tape t;
    const Ref x = t.input(Array::scalar(0.0));
    const Ref y = ad::sigmoid(t, x);
    CHECK(t.value(y).data[0] == doctest::Approx(0.5));
    t.backward(y);
    CHECK(t.grad(x).data[0] == doctest::Approx(0.25));
}

TEST_CASE("stop-gradient blocks flow") {
    Tape t;
    const Ref x = t.input(Array::scalar(2.0));
    const Ref y = t.input(Array::scalar(3.0));
    const Ref z = ad::mul(t, ad::stop_gradient(t, x), y);
    CHECK(t.value(z).data[0] == doctest::Approx(6.0));
    t.backward(z);
    CHECK(t.grad(x).data[0] == 0.0);
    CHECK(t.grad(y).data[0] == doctest::Approx(2.0));
}

TEST_CASE("sum backward is all ones") {
    Tape t;
    Array v = Array::zeros({5});
    for (int i = 0; i < 5; ++i) v.data[i] = i * 0.7;
    const Ref x = t.input(v);
    const Ref s = ad::sum(t, x);
    t.backward(s);
    for (int i = 0; i < 5; ++i) CHECK(t.grad(x).data[i] == 1.0);
}

TEST_CASE("backward requires a scalar output") {
    Tape t;
    const Ref x = t.input(Array::zeros({3}));
    const Ref y = ad::relu(t, x);
    CHECK_THROWS_AS(t.backward(y), std::invalid_argument);
}

TEST_CASE("shape mismatch names the primitive and shapes") {
    Tape t;
    const Ref a = t.input(Array::zeros({2, 3}));
    const Ref b = t.input(Array::zeros({4, 5}));
    try {
        ad::matmul(t, a, b);
        FAIL("expected throw");
    } catch (const std::invalid_argument& e) {
        const std::string msg = e.what();
        CHECK(msg.find("matmul") != std::string::npos);
        CHECK(msg.find("(2,3)") != std::string::npos);
        CHECK(msg.find("(4,5)") != std::string::npos);
    }
}

TEST_CASE("check_gradients on sin") {
    const double err = ad::check_gradients(
        [](Tape& t, Ref x) { return ad::sum(t, ad::sin(t, x)); },
        Array::scalar(1.0));
    CHECK(err <= 1e-9);
}

namespace {

Array random_array(ad::Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
    Array a = Array::zeros(std::move(shape));
    for (int64_t i = 0; i < a.size(); ++i) a.data[i] = rng.uniform(lo, hi);
    return a;
}

} // namespace

TEST_CASE("every primitive matches central finite differences to 1e-6") {
    Rng rng(7);
    struct Case {
        const char* name;
        std::function<Ref(Tape&, const std::vector<Ref>&)> f;
        std::vector<Array> points;
    };
    Array a5 = random_array({5}, rng);
    Array b5 = random_array({5}, rng);
    Array pos5 = random_array({5}, rng, 0.3, 2.5);
    Array m23 = random_array({2, 3}, rng);
    Array m34 = random_array({3, 4}, rng);
    Array row3 = random_array({1, 3}, rng);
    Array clamp_in = random_array({6}, rng, -2.0, 2.0);
    // Keep samples away from the clamp kinks; the derivative jumps there.
    for (int64_t i = 0; i < clamp_in.size(); ++i)
        if (std::abs(std::abs(clamp_in.data[i]) - 1.0) < 0.05)
            clamp_in.data[i] += 0.1;

    auto idx = std::make_shared<std::vector<int64_t>>(
        std::vector<int64_t>{0, 2, 2, 4, 1});

    std::vector<Case> cases;
    cases.push_back({"add", [](Tape& t, const std::vector<Ref>& in) {
                         return ad::sum(t, ad::add(t, in[0], in[1]));
                     }, {a5, b5}});
    cases.push_back({"sub", [](Tape& t, const std::vector<Ref>& in) {
                         return ad::sum(t, ad::mul(t, ad::sub(t, in[0], in[1]),
                                                   in[0]));
                     }, {a5, b5}});
    cases.push_back({"mul", [](Tape& t, const std::vector<Ref>& in) {
                         return ad::sum(t, ad::mul(t, in[0], in[1]));
                     }, {a5, b5}});
    cases.push_back({"div", [](Tape& t, const std::vector<Ref>& in) {
                         return ad::sum(t, ad::div(t, in[0], in[1]));
                     }, {a5, pos5}});
    cases.push_back({"matmul", [](Tape& t, const std::vector<Ref>& in) {
                         return ad::sum(t, ad::matmul(t, in[0], in[1]));
                     }, {m23, m34}});
    cases.push_back({"row broadcast add",
                     [](Tape& t, const std::vector<Ref>& in) {
                         return ad::sum(t, ad::mul(t, ad::add(t, in[0], in[1]),
                                                   in[0]));
                     }, {m23, row3}});
    cases.push_back({"sin", [](Tape& t, const std::vector<Ref>& in) {
                         return ad::sum(t, ad::sin(t, in[0]));
                     }, {a5}});
    cases.push_back({"cos", [](Tape& t, const std::vector<Ref>& in) {
                         return ad::sum(t, ad::cos(t, in[0]));
                     }, {a5}});
    cases.push_back({"exp", [](Tape& t, const std::vector<Ref>& in) {
                         return ad::sum(t, ad::exp(t, in[0]));
                     }, {a5}});
    cases.push_back({"log", [](Tape& t, const std::vector<Ref>& in) {
                         return ad::sum(t, ad::log(t, in[0]));
                     }, {pos5}});
    cases.push_back({"sigmoid", [](Tape& t, const std::vector<Ref>& in) {
                         return ad::sum(t, ad::sigmoid(t, in[0]));
                     }, {a5}});
    cases.push_back({"relu", [](Tape& t, const std::vector<Ref>& in) {
                         return ad::sum(t, ad::relu(t, in[0]));
                     }, {a5}});
    cases.push_back({"clamp", [](Tape& t, const std::vector<Ref>& in) {
                         return ad::sum(t, ad::clamp(t, in[0], -1.0, 1.0));
                     }, {clamp_in}});
    cases.push_back({"mean", [](Tape& t, const std::vector<Ref>& in) {
                         return ad::mean(t, ad::mul(t, in[0], in[0]));
                     }, {a5}});
    cases.push_back({"abs", [](Tape& t, const std::vector<Ref>& in) {
                         return ad::sum(t, ad::abs(t, in[0]));
                     }, {pos5}});
    cases.push_back({"norm_l1", [](Tape& t, const std::vector<Ref>& in) {
                         return ad::norm_l1(t, in[0]);
                     }, {a5}});
    cases.push_back({"norm_l2", [](Tape& t, const std::vector<Ref>& in) {
                         return ad::norm_l2(t, in[0]);
                     }, {a5}});
    cases.push_back({"concat0", [](Tape& t, const std::vector<Ref>& in) {
                         const Ref c = ad::concat(t, in[0], in[1], 0);
                         return ad::sum(t, ad::mul(t, c, c));
                     }, {a5, b5}});
    cases.push_back({"concat1", [](Tape& t, const std::vector<Ref>& in) {
                         const Ref c = ad::concat(t, in[0], in[1], 1);
                         return ad::sum(t, ad::mul(t, c, c));
                     }, {m23, random_array({2, 2}, rng)}});
    cases.push_back({"gather", [idx](Tape& t, const std::vector<Ref>& in) {
                         const Ref g = ad::gather(t, in[0], idx, {5});
                         return ad::sum(t, ad::mul(t, g, g));
                     }, {a5}});

    for (const Case& c : cases) {
        const double err = ad::check_gradients_multi(c.f, c.points);
        INFO(c.name);
        CHECK(err <= 1e-6);
    }
}

TEST_CASE("gather scatters adjoints additively on collisions") {
    Tape t;
    Array v = Array::zeros({3});
    v.data << 1.0, 2.0, 3.0;
    const Ref x = t.input(v);
    auto idx = std::make_shared<std::vector<int64_t>>(
        std::vector<int64_t>{1, 1, 1, 0});
    const Ref g = ad::gather(t, x, idx, {4});
    const Ref s = ad::sum(t, g);
    t.backward(s);
    CHECK(t.grad(x).data[0] == doctest::Approx(1.0));
    CHECK(t.grad(x).data[1] == doctest::Approx(3.0));
    CHECK(t.grad(x).data[2] == 0.0);
}

TEST_CASE("random 3-layer MLP matches finite differences to 1e-6") {
    Rng rng(21);
    Array x = random_array({4, 6}, rng, -1.0, 1.0);
    Array w1 = random_array({6, 8}, rng, -0.5, 0.5);
    Array b1 = random_array({1, 8}, rng, -0.5, 0.5);
    Array w2 = random_array({8, 8}, rng, -0.5, 0.5);
    Array b2 = random_array({1, 8}, rng, -0.5, 0.5);
    Array w3 = random_array({8, 1}, rng, -0.5, 0.5);

    auto f = [](Tape& t, const std::vector<Ref>& in) {
        Ref h = ad::sigmoid(t, ad::add(t, ad::matmul(t, in[0], in[1]), in[2]));
        h = ad::sigmoid(t, ad::add(t, ad::matmul(t, h, in[3]), in[4]));
        return ad::sum(t, ad::matmul(t, h, in[5]));
    };
    const double err = ad::check_gradients_multi(f, {x, w1, b1, w2, b2, w3});
    CHECK(err <= 1e-6);
}

TEST_CASE("forward and backward are deterministic across runs") {
    auto run = [] {
        Rng rng(5);
        Tape t;
        const Ref x = t.input(random_array({4, 4}, rng));
        const Ref w = t.input(random_array({4, 4}, rng));
        const Ref y = ad::sum(t, ad::sigmoid(t, ad::matmul(t, x, w)));
        t.backward(y);
        return std::make_pair(t.value(y).data[0], t.grad(x).data);
    };
    const auto a = run();
    const auto b = run();
    CHECK(a.first == b.first);
    for (int64_t i = 0; i < a.second.size(); ++i)
        CHECK(a.second[i] == b.second[i]);
}

TEST_CASE("record rejects wrong arity") {
    Tape t;
    const Ref x = t.input(Array::zeros({2}));
    const Ref refs[1] = {x};
    CHECK_THROWS(t.record(ad::Op::Add, refs));
}

TEST_CASE("adjoint accumulates across multiple uses") {
    Tape t;
    const Ref x = t.input(Array::scalar(1.5));
    const Ref y = ad::add(t, ad::mul(t, x, x), ad::sin(t, x));
    t.backward(y);
    CHECK(t.grad(x).data[0] == doctest::Approx(2 * 1.5 + std::cos(1.5)));
}
