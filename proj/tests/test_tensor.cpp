#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "rnnkit/grad_check.hpp"
#include "rnnkit/tensor.hpp"

using rnnkit::Tensor;
using rnnkit::Tape;
using Td = Tensor<double>;

namespace {

Td random_tensor(rnnkit::Shape shape, std::mt19937& rng, double scale = 1.0) {
    return Td::uniform(std::move(shape), -scale, scale, rng, false);
}

}  // namespace

TEST_CASE("matmul values") {
    Td eye = Td::from({2, 2}, {1, 0, 0, 1});
    Td m = Td::from({2, 2}, {1, 2, 3, 4});
    Td out = rnnkit::matmul(eye, m);
    for (int i = 0; i < 4; ++i) CHECK(out.data()[i] == m.data()[i]);

    Td a = Td::from({1, 2}, {1, 2});
    Td b = Td::from({2, 1}, {3, 4});
    CHECK(rnnkit::matmul(a, b).item() == doctest::Approx(11.0));
}

TEST_CASE("matmul shape mismatch reports both shapes") {
    Td a = Td::zeros({2, 3});
    Td b = Td::zeros({2, 3});
    try {
        rnnkit::matmul(a, b);
        FAIL("expected dimension error");
    } catch (const std::invalid_argument& e) {
        std::string msg = e.what();
        CHECK(msg.find("[2, 3]") != std::string::npos);
    }
}

TEST_CASE("matmul gradient: dA is row-sums of b, and matches finite differences") {
    std::mt19937 rng(11);
    Td a = random_tensor({3, 4}, rng);
    Td b = random_tensor({4, 2}, rng);
    a.set_requires_grad(true);

    {
        Tape<double> tape;
        Tape<double>::Scope scope(tape);
        Td loss = rnnkit::sum(rnnkit::matmul(a, b));
        rnnkit::backward(loss);
    }
    // d sum(AB) / dA[i,k] = sum_j b[k,j]
    for (int i = 0; i < 3; ++i)
        for (int k = 0; k < 4; ++k) {
            double row_sum = b.at(k, 0) + b.at(k, 1);
            CHECK(a.grad()[static_cast<std::size_t>(i) * 4 + k] == doctest::Approx(row_sum));
        }

    Td inputs[] = {a, b};
    auto report = rnnkit::grad_check<double>([&] { return rnnkit::sum(rnnkit::matmul(a, b)); },
                                             inputs, 1e-5, 1e-6);
    CHECK(report.pass);
}

TEST_CASE("elementwise values") {
    Td a = Td::from({3}, {1, 2, 3});
    Td b = Td::from({3}, {4, 5, 6});
    Td m = rnnkit::mul(a, b);
    CHECK(m.data()[0] == 4);
    CHECK(m.data()[1] == 10);
    CHECK(m.data()[2] == 18);

    Td s = rnnkit::mul_scalar(Td::from({2}, {2, 4}), 0.5);
    CHECK(s.data()[0] == 1);
    CHECK(s.data()[1] == 2);

    CHECK_THROWS_AS(rnnkit::add(Td::zeros({2}), Td::zeros({3})), std::invalid_argument);
}

TEST_CASE("add gradient is ones") {
    std::mt19937 rng(3);
    Td a = random_tensor({2, 3}, rng);
    Td b = random_tensor({2, 3}, rng);
    Td inputs[] = {a, b};
    auto report = rnnkit::grad_check<double>([&] { return rnnkit::sum(rnnkit::add(a, b)); },
                                             inputs, 1e-5, 1e-6);
    CHECK(report.pass);
    for (double g : a.grad()) CHECK(g == doctest::Approx(1.0));
}

TEST_CASE("activations at zero") {
    Td z = Td::zeros({4});
    CHECK(rnnkit::sigmoid(z).data()[0] == doctest::Approx(0.5));
    CHECK(rnnkit::tanh(z).data()[0] == doctest::Approx(0.0));

    z.set_requires_grad(true);
    {
        Tape<double> tape;
        Tape<double>::Scope scope(tape);
        rnnkit::backward(rnnkit::sum(rnnkit::sigmoid(z)));
    }
    for (double g : z.grad()) CHECK(g == doctest::Approx(0.25));
}

TEST_CASE("concat values and inverses") {
    Td a = Td::from({2, 1}, {1, 2});
    Td b = Td::from({2, 1}, {3, 4});
    Td c = rnnkit::concat<double>({a, b}, 1);
    CHECK(c.at(0, 0) == 1);
    CHECK(c.at(0, 1) == 3);
    CHECK(c.at(1, 0) == 2);
    CHECK(c.at(1, 1) == 4);

    Td single = rnnkit::concat<double>({a}, 0);
    for (int i = 0; i < 2; ++i) CHECK(single.data()[i] == a.data()[i]);

    // slice(concat(a, b)) returns a and b bit-exactly
    Td back_a = rnnkit::slice(c, 1, 0, 1);
    Td back_b = rnnkit::slice(c, 1, 1, 1);
    for (int i = 0; i < 2; ++i) {
        CHECK(back_a.data()[i] == a.data()[i]);
        CHECK(back_b.data()[i] == b.data()[i]);
    }

    CHECK_THROWS_AS(rnnkit::concat<double>({a, b}, 2), std::invalid_argument);
    CHECK_THROWS_AS(rnnkit::concat<double>({a, Td::zeros({3, 1})}, 1), std::invalid_argument);
}

TEST_CASE("concat then slice round-trips on rank-3") {
    std::mt19937 rng(7);
    for (int axis = 0; axis < 3; ++axis) {
        Td a = random_tensor({2, 3, 4}, rng);
        Td b = random_tensor({2, 3, 4}, rng);
        Td c = rnnkit::concat<double>({a, b}, axis);
        Td back = rnnkit::slice(c, axis, a.shape()[static_cast<std::size_t>(axis)],
                                b.shape()[static_cast<std::size_t>(axis)]);
        for (std::size_t i = 0; i < b.size(); ++i) CHECK(back.data()[i] == b.data()[i]);
    }
}

TEST_CASE("softmax_xent values") {
    // uniform logits over V=10: loss = ln 10
    Td logits = Td::zeros({2, 10});
    Td loss = rnnkit::softmax_xent(logits, {3, 7}, {1, 1});
    CHECK(loss.item() == doctest::Approx(std::log(10.0)).epsilon(1e-12));

    // one-hot-by-large-margin logits matching the target drive loss to 0
    Td strong = Td::zeros({1, 5});
    strong.at(0, 2) = 50.0;
    CHECK(rnnkit::softmax_xent(strong, {2}, {1}).item() == doctest::Approx(0.0).epsilon(1e-9));

    CHECK_THROWS_AS(rnnkit::softmax_xent(logits, {3, 10}, {1, 1}), std::out_of_range);
    CHECK_THROWS_AS(rnnkit::softmax_xent(logits, {3, 7}, {0, 0}), std::invalid_argument);
}

TEST_CASE("softmax_xent masked rows do not contribute") {
    Td logits = Td::zeros({2, 4});
    logits.at(1, 0) = 100.0;  // masked row, arbitrary junk
    Td loss = rnnkit::softmax_xent(logits, {1, 3}, {1, 0});
    CHECK(loss.item() == doctest::Approx(std::log(4.0)));
}

TEST_CASE("softmax_xent gradient vs finite differences") {
    std::mt19937 rng(23);
    Td logits = random_tensor({2, 3}, rng);
    std::vector<int> targets = {2, 0};
    std::vector<std::uint8_t> mask = {1, 1};
    Td inputs[] = {logits};
    auto report = rnnkit::grad_check<double>(
        [&] { return rnnkit::softmax_xent(logits, targets, mask); }, inputs, 1e-5, 1e-4);
    CHECK(report.pass);
}

TEST_CASE("softmax_xent is invariant to a constant shift per row") {
    std::mt19937 rng(29);
    Td logits = random_tensor({4, 7}, rng, 3.0);
    std::vector<int> targets = {1, 6, 0, 3};
    std::vector<std::uint8_t> mask = {1, 1, 1, 1};
    double base = rnnkit::softmax_xent(logits, targets, mask).item();

    Td shifted = Td::from(logits.shape(), {logits.data().begin(), logits.data().end()});
    for (auto& v : shifted.data()) v += 123.456;
    double moved = rnnkit::softmax_xent(shifted, targets, mask).item();
    CHECK(std::abs(base - moved) < 1e-9);
}

TEST_CASE("backward: sum gives ones, disconnected stays zero, non-scalar rejected") {
    std::mt19937 rng(31);
    Td w = random_tensor({2, 3}, rng);
    w.set_requires_grad(true);
    Td lonely = Td::zeros({2}, true);

    Tape<double> tape;
    Tape<double>::Scope scope(tape);
    Td loss = rnnkit::sum(w);
    rnnkit::backward(loss);
    for (double g : w.grad()) CHECK(g == doctest::Approx(1.0));
    for (double g : lonely.grad()) CHECK(g == 0.0);

    CHECK_THROWS_AS(rnnkit::backward(w), std::invalid_argument);
}

TEST_CASE("backward twice accumulates") {
    Td w = Td::from({3}, {1, 2, 3}, true);
    Tape<double> tape;
    Tape<double>::Scope scope(tape);
    Td loss = rnnkit::sum(w);
    rnnkit::backward(loss);
    rnnkit::backward(loss);
    for (double g : w.grad()) CHECK(g == doctest::Approx(2.0));
}

TEST_CASE("grad_check on sigmoid sum at zero") {
    Td x = Td::zeros({5});
    Td inputs[] = {x};
    auto report = rnnkit::grad_check<double>([&] { return rnnkit::sum(rnnkit::sigmoid(x)); },
                                             inputs, 1e-5, 1e-6);
    CHECK(report.pass);
    CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("grad_check rejects eps = 0") {
    Td x = Td::zeros({2});
    Td inputs[] = {x};
    CHECK_THROWS_AS(rnnkit::grad_check<double>([&] { return rnnkit::sum(x); }, inputs, 0.0, 1e-4),
                    std::invalid_argument);
}

TEST_CASE("softmax_rows: masked entries zero, rows sum to one, fully masked row rejected") {
    std::mt19937 rng(37);
    Td scores = random_tensor({3, 5}, rng, 2.0);
    std::vector<std::uint8_t> mask(15, 1);
    mask[2] = 0;
    mask[9] = 0;
    Td p = rnnkit::softmax_rows(scores, mask);
    for (int i = 0; i < 3; ++i) {
        double row = 0;
        for (int j = 0; j < 5; ++j) row += p.at(i, j);
        CHECK(row == doctest::Approx(1.0).epsilon(1e-9));
    }
    CHECK(p.data()[2] == 0.0);
    CHECK(p.data()[9] == 0.0);

    std::vector<std::uint8_t> dead(15, 1);
    for (int j = 0; j < 5; ++j) dead[5 + j] = 0;
    CHECK_THROWS_AS(rnnkit::softmax_rows(scores, dead), std::invalid_argument);
}

TEST_CASE("embed_rows gathers and scatters, repeated ids accumulate") {
    Td table = Td::from({3, 2}, {1, 2, 3, 4, 5, 6}, true);
    std::vector<int> ids = {2, 0, 2};
    Tape<double> tape;
    Tape<double>::Scope scope(tape);
    Td rows = rnnkit::embed_rows(table, ids);
    CHECK(rows.at(0, 0) == 5);
    CHECK(rows.at(2, 1) == 6);
    rnnkit::backward(rnnkit::sum(rows));
    CHECK(table.grad()[0] == doctest::Approx(1.0));  // row 0 used once
    CHECK(table.grad()[4] == doctest::Approx(2.0));  // row 2 used twice
    CHECK(table.grad()[2] == 0.0);                   // row 1 unused

    CHECK_THROWS_AS(rnnkit::embed_rows(table, {3}), std::out_of_range);
}

TEST_CASE("finite-difference sweep across every differentiable op") {
    std::mt19937 rng(1234);
    std::uniform_int_distribution<int> dim(1, 4);
    int checked = 0;
    for (int iter = 0; iter < 120; ++iter) {
        const int which = iter % 12;
        const int m = dim(rng), k = dim(rng), n = dim(rng);
        std::function<Td()> f;
        std::vector<Td> ins;
        switch (which) {
            case 0: {
                Td a = random_tensor({m, k}, rng), b = random_tensor({k, n}, rng);
                ins = {a, b};
                f = [=] { return rnnkit::sum(rnnkit::matmul(a, b)); };
                break;
            }
            case 1: {
                Td a = random_tensor({m, n}, rng), b = random_tensor({m, n}, rng);
                ins = {a, b};
                f = [=] { return rnnkit::sum(rnnkit::mul(a, b)); };
                break;
            }
            case 2: {
                Td a = random_tensor({m, n}, rng), b = random_tensor({m, n}, rng);
                ins = {a, b};
                f = [=] { return rnnkit::sum(rnnkit::sub(a, b)); };
                break;
            }
            case 3: {
                Td a = random_tensor({m, n}, rng);
                ins = {a};
                f = [=] { return rnnkit::sum(rnnkit::sigmoid(a)); };
                break;
            }
            case 4: {
                Td a = random_tensor({m, n}, rng);
                ins = {a};
                f = [=] { return rnnkit::sum(rnnkit::tanh(a)); };
                break;
            }
            case 5: {
                Td a = random_tensor({m, n}, rng), b = random_tensor({m, n}, rng);
                ins = {a, b};
                f = [=] { return rnnkit::sum(rnnkit::concat<double>({a, b}, 1)); };
                break;
            }
            case 6: {
                Td a = random_tensor({m, k + 1}, rng);
                ins = {a};
                f = [=] { return rnnkit::sum(rnnkit::slice(a, 1, 1, k)); };
                break;
            }
            case 7: {
                Td a = random_tensor({m, n}, rng), s = random_tensor({m, 1}, rng);
                ins = {a, s};
                f = [=] { return rnnkit::sum(rnnkit::scale_rows(a, s)); };
                break;
            }
            case 8: {
                Td a = random_tensor({m, n}, rng);
                ins = {a};
                f = [=] { return rnnkit::sum(rnnkit::mul_scalar(rnnkit::one_minus(a), 0.7)); };
                break;
            }
            case 9: {
                Td a = random_tensor({m, n, k}, rng);
                ins = {a};
                f = [=] { return rnnkit::sum(rnnkit::reshape(a, {m * n * k})); };
                break;
            }
            case 10: {
                const int v = n + 1;
                Td logits = random_tensor({m, v}, rng, 2.0);
                std::vector<int> targets(static_cast<std::size_t>(m));
                std::vector<std::uint8_t> mask(static_cast<std::size_t>(m), 1);
                std::uniform_int_distribution<int> pick(0, v - 1);
                for (auto& t : targets) t = pick(rng);
                ins = {logits};
                f = [=] { return rnnkit::softmax_xent(logits, targets, mask); };
                break;
            }
            default: {
                Td scores = random_tensor({m, n + 1}, rng, 2.0);
                Td weights = random_tensor({m, n + 1}, rng);
                std::vector<std::uint8_t> mask(static_cast<std::size_t>(m) * (n + 1), 1);
                mask[0] = n > 0 ? 0 : 1;
                ins = {scores, weights};
                f = [=] { return rnnkit::sum(rnnkit::mul(rnnkit::softmax_rows(scores, mask), weights)); };
                break;
            }
        }
        auto report = rnnkit::grad_check<double>(f, ins, 1e-5, 1e-4);
        INFO("op ", which, " iteration ", iter, " rel err ", report.max_rel_err);
        CHECK(report.pass);
        ++checked;
    }
    CHECK(checked >= 100);
}

TEST_CASE("no op emits non-finite values for finite inputs") {
    std::mt19937 rng(55);
    Td big = random_tensor({4, 6}, rng, 60.0);  // deep saturation territory
    CHECK(rnnkit::sigmoid(big).all_finite());
    CHECK(rnnkit::tanh(big).all_finite());
    std::vector<int> targets = {0, 1, 2, 3};
    std::vector<std::uint8_t> mask = {1, 1, 1, 1};
    CHECK(rnnkit::softmax_xent(big, targets, mask).all_finite());
    CHECK(rnnkit::softmax_rows(big, std::vector<std::uint8_t>(24, 1)).all_finite());
    CHECK(rnnkit::matmul(big, random_tensor({6, 2}, rng, 60.0)).all_finite());
}

TEST_CASE("reverse_time honors per-row lengths and round-trips") {
    // T=3, b=2, d=1; row 0 has length 3, row 1 has length 2
    Td xs = Td::from({3, 2, 1}, {1, 10, 2, 20, 3, 30});
    Td rev = rnnkit::reverse_time(xs, {3, 2});
    CHECK(rev.at(0, 0, 0) == 3);
    CHECK(rev.at(1, 0, 0) == 2);
    CHECK(rev.at(2, 0, 0) == 1);
    CHECK(rev.at(0, 1, 0) == 20);
    CHECK(rev.at(1, 1, 0) == 10);
    CHECK(rev.at(2, 1, 0) == 30);  // padding untouched

    Td twice = rnnkit::reverse_time(rev, {3, 2});
    for (std::size_t i = 0; i < xs.size(); ++i) CHECK(twice.data()[i] == xs.data()[i]);

    std::mt19937 rng(77);
    Td r = random_tensor({4, 2, 3}, rng);
    Td ins[] = {r};
    auto report = rnnkit::grad_check<double>(
        [&] { return rnnkit::sum(rnnkit::reverse_time(r, {4, 2})); }, ins, 1e-5, 1e-6);
    CHECK(report.pass);
}
