#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "l2s/nn/params.hpp"
#include "l2s/nn/tensor.hpp"
#include "testutil.hpp"

using namespace l2s;

namespace {

using Builder = std::function<nn::Tensor<double>(const std::vector<nn::Tensor<double>>&)>;

Matrix<double> rand_matrix(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0,
                           double hi = 1.0) {
    Matrix<double> m(r, c);
    for (auto& v : m.data) v = rng.uniform(lo, hi);
    return m;
}

// Keeps kinked nonlinearities (relu, abs) away from zero crossings.
Matrix<double> rand_matrix_off_zero(std::size_t r, std::size_t c, Rng& rng) {
    Matrix<double> m(r, c);
    for (auto& v : m.data) {
        v = rng.uniform(0.1, 1.0);
        if (rng.uniform() < 0.5) v = -v;
    }
    return m;
}

// Checks d(sum w . f(inputs)) / d(input entries) against central differences.
void check_grads(std::vector<Matrix<double>> inputs, const Builder& f, Rng& rng,
                 double rel = 1e-6, double abs = 1e-9) {
    std::vector<nn::Tensor<double>> leaves;
    for (const auto& m : inputs) leaves.push_back(nn::from_matrix(m, true));
    auto y = f(leaves);
    Matrix<double> w = rand_matrix(y->rows, y->cols, rng);
    auto loss = nn::sum_all(nn::mul(y, nn::from_matrix(w)));
    nn::backward(loss);

    auto eval = [&](std::size_t k, std::size_t i, double delta) {
        nn::NoGradGuard guard;
        const double keep = inputs[k].data[i];
        inputs[k].data[i] = keep + delta;
        std::vector<nn::Tensor<double>> ts;
        for (const auto& m : inputs) ts.push_back(nn::from_matrix(m));
        auto out = f(ts);
        inputs[k].data[i] = keep;
        double s = 0;
        for (std::size_t j = 0; j < out->size(); ++j) s += out->val[j] * w.data[j];
        return s;
    };
    const double h = 1e-6;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        REQUIRE(leaves[k]->grad.size() == inputs[k].data.size());
        for (std::size_t i = 0; i < inputs[k].data.size(); ++i) {
            const double fd = (eval(k, i, h) - eval(k, i, -h)) / (2 * h);
            const double an = leaves[k]->grad[i];
            INFO("input ", k, " entry ", i, " analytic ", an, " fd ", fd);
            CHECK(testutil::fd_close(an, fd, rel, abs));
        }
    }
}

std::pair<std::size_t, std::size_t> rand_shape(Rng& rng, std::size_t max_dim = 6) {
    return {(std::size_t)rng.uniform_int(1, (std::int64_t)max_dim),
            (std::size_t)rng.uniform_int(1, (std::int64_t)max_dim)};
}

}  // namespace

TEST_CASE("matmul forward example and gradient") {
    // 3x4 times 4x2 against a hand-computed entry.
    Matrix<double> a(3, 4), b(4, 2);
    for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] = 0.25 * (double)(i + 1);
    for (std::size_t i = 0; i < b.data.size(); ++i) b.data[i] = 0.5 - 0.125 * (double)i;
    auto y = nn::matmul(nn::from_matrix(a), nn::from_matrix(b));
    REQUIRE(y->rows == 3);
    REQUIRE(y->cols == 2);
    double expect = 0;
    for (std::size_t k = 0; k < 4; ++k) expect += a.at(1, k) * b.at(k, 1);
    CHECK(y->at(1, 1) == doctest::Approx(expect).epsilon(1e-12));

    Rng rng(101);
    check_grads({a, b}, [](const auto& t) { return nn::matmul(t[0], t[1]); }, rng);
    for (int i = 0; i < 10; ++i) {
        const auto [m, k] = rand_shape(rng);
        const auto [k2, n] = rand_shape(rng);
        (void)k2;
        check_grads({rand_matrix(m, k, rng), rand_matrix(k, n, rng)},
                    [](const auto& t) { return nn::matmul(t[0], t[1]); }, rng);
    }
    CHECK_THROWS_AS(nn::matmul(nn::from_matrix(a), nn::from_matrix(a)), ShapeError);
}

TEST_CASE("add and mul with row broadcast") {
    Rng rng(102);
    for (int i = 0; i < 10; ++i) {
        const auto [r, c] = rand_shape(rng);
        check_grads({rand_matrix(r, c, rng), rand_matrix(r, c, rng)},
                    [](const auto& t) { return nn::add(t[0], t[1]); }, rng);
        check_grads({rand_matrix(r, c, rng), rand_matrix(r, c, rng)},
                    [](const auto& t) { return nn::mul(t[0], t[1]); }, rng);
        if (r > 1) {
            check_grads({rand_matrix(r, c, rng), rand_matrix(1, c, rng)},
                        [](const auto& t) { return nn::add(t[0], t[1]); }, rng);
            check_grads({rand_matrix(r, c, rng), rand_matrix(1, c, rng)},
                        [](const auto& t) { return nn::mul(t[0], t[1]); }, rng);
        }
    }
    Matrix<double> a(2, 3), bad(2, 2);
    CHECK_THROWS_AS(nn::add(nn::from_matrix(a), nn::from_matrix(bad)), ShapeError);
    CHECK_THROWS_AS(nn::mul(nn::from_matrix(a), nn::from_matrix(bad)), ShapeError);
}

TEST_CASE("scale, concat_cols, slice_cols, reshape") {
    Rng rng(103);
    for (int i = 0; i < 10; ++i) {
        const auto [r, c] = rand_shape(rng);
        check_grads({rand_matrix(r, c, rng)},
                    [](const auto& t) { return nn::scale(t[0], 1.7); }, rng);
        const auto c2 = (std::size_t)rng.uniform_int(1, 5);
        check_grads({rand_matrix(r, c, rng), rand_matrix(r, c2, rng)},
                    [](const auto& t) { return nn::concat_cols(t[0], t[1]); }, rng);
        if (c >= 2)
            check_grads({rand_matrix(r, c, rng)},
                        [c = c](const auto& t) { return nn::slice_cols(t[0], 1, c); }, rng);
        check_grads({rand_matrix(r, c, rng)},
                    [r = r, c = c](const auto& t) { return nn::reshape(t[0], c, r); }, rng);
    }
    // slice keeps [c0, c1) and reshape validates the element count
    Matrix<double> m = rand_matrix(2, 4, rng);
    auto s = nn::slice_cols(nn::from_matrix(m), 1, 3);
    REQUIRE(s->cols == 2);
    CHECK(s->at(1, 0) == m.at(1, 1));
    CHECK_THROWS_AS(nn::reshape(nn::from_matrix(m), 3, 3), ShapeError);
    CHECK_THROWS_AS(nn::slice_cols(nn::from_matrix(m), 3, 2), ShapeError);
}

TEST_CASE("elementwise nonlinearities") {
    Rng rng(104);
    for (int i = 0; i < 10; ++i) {
        const auto [r, c] = rand_shape(rng);
        check_grads({rand_matrix(r, c, rng)},
                    [](const auto& t) { return nn::gelu(t[0]); }, rng);
        check_grads({rand_matrix(r, c, rng)},
                    [](const auto& t) { return nn::sigmoid(t[0]); }, rng);
        check_grads({rand_matrix_off_zero(r, c, rng)},
                    [](const auto& t) { return nn::relu(t[0]); }, rng);
        check_grads({rand_matrix_off_zero(r, c, rng)},
                    [](const auto& t) { return nn::abs_t(t[0]); }, rng);
    }
    // relu and abs pass zero gradient exactly at 0
    Matrix<double> z(1, 2);
    auto zr = nn::from_matrix(z, true);
    nn::backward(nn::sum_all(nn::relu(zr)));
    CHECK(zr->grad[0] == 0.0);
    auto za = nn::from_matrix(z, true);
    nn::backward(nn::sum_all(nn::abs_t(za)));
    CHECK(za->grad[0] == 0.0);
    // gelu uses the exact erf form
    Matrix<double> x(1, 1);
    x.data[0] = 0.7;
    auto g = nn::gelu(nn::from_matrix(x));
    CHECK(g->val[0] ==
          doctest::Approx(0.7 * 0.5 * (1.0 + std::erf(0.7 / std::sqrt(2.0)))).epsilon(1e-12));
}

TEST_CASE("layer_norm, softmax_rows and reductions") {
    Rng rng(105);
    for (int i = 0; i < 10; ++i) {
        const std::size_t r = (std::size_t)rng.uniform_int(1, 5);
        const std::size_t c = (std::size_t)rng.uniform_int(2, 7);
        check_grads({rand_matrix(r, c, rng)},
                    [](const auto& t) { return nn::layer_norm(t[0]); }, rng, 1e-5, 1e-8);
        check_grads({rand_matrix(r, c, rng)},
                    [](const auto& t) { return nn::softmax_rows(t[0]); }, rng);
        check_grads({rand_matrix(r, c, rng)},
                    [](const auto& t) { return nn::row_sum(t[0]); }, rng);
        check_grads({rand_matrix(r, c, rng)},
                    [](const auto& t) { return nn::sum_all(t[0]); }, rng);
        check_grads({rand_matrix(3 * r, c, rng)},
                    [r = r](const auto& t) { return nn::sum_row_blocks(t[0], 3); }, rng);
    }
    // layer_norm output has ~zero mean and ~unit variance per row
    Matrix<double> m = rand_matrix(4, 16, rng, -3.0, 3.0);
    auto y = nn::layer_norm(nn::from_matrix(m));
    for (std::size_t r = 0; r < 4; ++r) {
        double mean = 0, var = 0;
        for (std::size_t c = 0; c < 16; ++c) mean += y->at(r, c);
        mean /= 16;
        for (std::size_t c = 0; c < 16; ++c) var += (y->at(r, c) - mean) * (y->at(r, c) - mean);
        var /= 16;
        CHECK(std::abs(mean) < 1e-9);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
    }
    // softmax rows sum to one
    auto sm = nn::softmax_rows(nn::from_matrix(m));
    for (std::size_t r = 0; r < 4; ++r) {
        double s = 0;
        for (std::size_t c = 0; c < 16; ++c) s += sm->at(r, c);
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
    CHECK_THROWS_AS(nn::sum_row_blocks(nn::from_matrix(m), 3), ShapeError);
}

TEST_CASE("scale_rows and gather_rows") {
    Rng rng(106);
    for (int i = 0; i < 10; ++i) {
        const auto [r, c] = rand_shape(rng);
        check_grads({rand_matrix(r, c, rng), rand_matrix(r, 1, rng)},
                    [](const auto& t) { return nn::scale_rows(t[0], t[1]); }, rng);

        std::vector<int> idx;
        for (int j = 0; j < 7; ++j) idx.push_back((int)rng.uniform_int(0, (std::int64_t)r - 1));
        check_grads({rand_matrix(r, c, rng)},
                    [idx](const auto& t) { return nn::gather_rows(t[0], idx); }, rng);
    }
    // duplicate gather indices accumulate gradient
    Matrix<double> m = rand_matrix(3, 2, rng);
    auto leaf = nn::from_matrix(m, true);
    auto g = nn::gather_rows(leaf, {1, 1, 1});
    nn::backward(nn::sum_all(g));
    CHECK(leaf->grad[1 * 2 + 0] == doctest::Approx(3.0));
    CHECK(leaf->grad[0] == 0.0);
    CHECK_THROWS_AS(nn::gather_rows(leaf, {5}), ShapeError);
    CHECK_THROWS_AS(nn::scale_rows(leaf, nn::from_matrix(rand_matrix(2, 1, rng))), ShapeError);
}

TEST_CASE("unit_normalize_rows: unit rows pass through, zero rows stay zero") {
    Matrix<double> m(3, 4);
    // row 0: already unit; row 1: arbitrary; row 2: zero
    m.at(0, 0) = 0.6;
    m.at(0, 1) = 0.8;
    m.at(1, 0) = 3.0;
    m.at(1, 2) = -4.0;
    auto leaf = nn::from_matrix(m, true);
    auto y = nn::unit_normalize_rows(leaf);
    CHECK(y->at(0, 0) == doctest::Approx(0.6).epsilon(1e-12));  // identity on unit input
    CHECK(y->at(0, 1) == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(y->at(1, 0) == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(y->at(1, 2) == doctest::Approx(-0.8).epsilon(1e-12));
    for (std::size_t c = 0; c < 4; ++c) CHECK(y->at(2, c) == 0.0);

    nn::backward(nn::sum_all(y));
    for (std::size_t c = 0; c < 4; ++c) CHECK(leaf->grad[2 * 4 + c] == 0.0);  // no grad

    Rng rng(107);
    for (int i = 0; i < 10; ++i) {
        const auto [r, c] = rand_shape(rng);
        check_grads({rand_matrix_off_zero(r, c, rng)},
                    [](const auto& t) { return nn::unit_normalize_rows(t[0]); }, rng, 1e-5, 1e-8);
    }
}

TEST_CASE("diamond graph accumulates both paths once") {
    // z = sum(x * y + x); dz/dx = y + 1 even though x appears twice.
    Matrix<double> xm(2, 2), ym(2, 2);
    xm.data = {0.5, -1.0, 2.0, 0.25};
    ym.data = {3.0, 0.5, -2.0, 1.0};
    auto x = nn::from_matrix(xm, true);
    auto y = nn::from_matrix(ym, true);
    auto z = nn::sum_all(nn::add(nn::mul(x, y), x));
    nn::backward(z);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(x->grad[i] == doctest::Approx(ym.data[i] + 1.0).epsilon(1e-12));
        CHECK(y->grad[i] == doctest::Approx(xm.data[i]).epsilon(1e-12));
    }
}

TEST_CASE("stop_gradient blocks the tape exactly") {
    Matrix<double> xm(1, 3);
    xm.data = {1.0, 2.0, 3.0};
    auto x = nn::from_matrix(xm, true);
    auto z = nn::sum_all(nn::mul(nn::stop_gradient(x), x));
    nn::backward(z);
    // d/dx of sg(x) * x is sg(x), not 2x.
    for (std::size_t i = 0; i < 3; ++i)
        CHECK(x->grad[i] == doctest::Approx(xm.data[i]).epsilon(1e-12));

    auto detached = nn::stop_gradient(x);
    CHECK_FALSE(detached->requires_grad);
    CHECK(detached->parents.empty());
}

TEST_CASE("no-grad guard suppresses graph construction") {
    Matrix<double> m(2, 2);
    auto x = nn::from_matrix(m, true);
    nn::Tensor<double> y;
    {
        nn::NoGradGuard guard;
        y = nn::relu(nn::add(x, x));
    }
    CHECK_FALSE(y->requires_grad);
    CHECK(y->parents.empty());
    CHECK(y->backward_fn == nullptr);
    // guard restores the previous state
    auto z = nn::add(x, x);
    CHECK(z->requires_grad);
}

TEST_CASE("backward_multi visits shared nodes once") {
    // Two seeds sharing one sub-graph: grads add, the shared node runs once.
    Matrix<double> m(1, 2);
    m.data = {2.0, -3.0};
    auto x = nn::from_matrix(m, true);
    auto mid = nn::scale(x, 2.0);
    auto a = nn::sum_all(mid);
    auto b = nn::sum_all(nn::mul(mid, mid));
    a->ensure_grad();
    a->grad[0] = 1.0;
    b->ensure_grad();
    b->grad[0] = 1.0;
    nn::backward_multi<double>({a, b});
    // d(a)/dx = 2, d(b)/dx = 8x; both land in one pass.
    CHECK(x->grad[0] == doctest::Approx(2.0 + 8.0 * 2.0).epsilon(1e-12));
    CHECK(x->grad[1] == doctest::Approx(2.0 + 8.0 * -3.0).epsilon(1e-12));
}

TEST_CASE("backward rejects non-scalar roots and accumulates across calls") {
    Matrix<double> m(2, 2);
    auto x = nn::from_matrix(m, true);
    auto y = nn::scale(x, 3.0);
    CHECK_THROWS_AS(nn::backward(y), ShapeError);
    auto s = nn::sum_all(y);
    nn::backward(s);
    CHECK(x->grad[0] == doctest::Approx(3.0));
}

TEST_CASE("param store: deterministic order, duplicate and missing names") {
    Rng rng(41);
    nn::ParamStore<float> store;
    store.add("b.w", 2, 3);
    store.add("a.w", 1, 4);
    nn::init_kaiming(store.at("a.w"), rng, 4);
    CHECK(store.count() == 2 * 3 + 1 * 4);
    CHECK(store.has("a.w"));
    CHECK_FALSE(store.has("c.w"));
    CHECK_THROWS_AS(store.add("a.w", 1, 1), ConfigError);
    CHECK_THROWS_AS(store.at("missing"), ConfigError);

    // iteration is name-ordered, so flatten/unflatten round-trips
    std::vector<std::string> names;
    for (const auto& [name, t] : store.tensors) names.push_back(name);
    REQUIRE(names.size() == 2);
    CHECK(names[0] == "a.w");
    CHECK(names[1] == "b.w");

    store.at("b.w")->ensure_grad();
    store.at("b.w")->grad[0] = 5.f;
    store.zero_grads();
    CHECK(store.at("b.w")->grad[0] == 0.f);
}

TEST_CASE("adam_step_params matches the optimizer kernel") {
    Rng rng(42);
    nn::ParamStore<float> store;
    store.add("w", 3, 4);
    nn::init_kaiming(store.at("w"), rng, 4);
    auto w = store.at("w");
    w->ensure_grad();
    for (auto& g : w->grad) g = (float)rng.normal();

    Matrix<float> ref = w->matrix();
    Matrix<float> grads(3, 4);
    grads.data.assign(w->grad.begin(), w->grad.end());

    nn::ParamAdamState<float> opt_state;
    nn::adam_step_params(store, opt_state, 1e-3f);

    opt::AdamStateT<float> st(3, 4);
    Matrix<float> n;
    opt::adam_advance(grads, st, 0.9f, 0.999f, 1e-8f, n);
    for (std::size_t i = 0; i < ref.data.size(); ++i) {
        ref.data[i] -= 1e-3f * n.data[i];
        CHECK(w->val[i] == ref.data[i]);  // bitwise: same kernel underneath
    }
}
