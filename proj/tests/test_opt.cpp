#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <deque>

#include "l2s/loss/image_loss.hpp"
#include "l2s/loss/meta_loss.hpp"
#include "l2s/opt/adam.hpp"
#include "l2s/opt/schedule.hpp"
#include "testutil.hpp"

using namespace l2s;

namespace {

template <typename T>
ImageT<T> const_image(int w, int h, T v) {
    ImageT<T> img(w, h);
    for (auto& x : img.rgb) x = v;
    return img;
}

template <typename T>
ImageT<T> rand_image(int w, int h, Rng& rng, double lo = 0.05, double hi = 0.95) {
    ImageT<T> img(w, h);
    for (auto& x : img.rgb) x = (T)rng.uniform(lo, hi);
    return img;
}

}  // namespace

TEST_CASE("adam first step normalizes to ~1 for unit gradient") {
    Matrix<double> g(1, 1);
    g.data[0] = 1.0;
    opt::AdamStateT<double> st(1, 1);
    Matrix<double> n;
    opt::adam_advance(g, st, 0.9, 0.999, 1e-8, n);
    // m_hat = v_hat = 1 after bias correction, so n = 1 / (1 + eps).
    CHECK(n.data[0] == doctest::Approx(1.0 / (1.0 + 1e-8)).epsilon(1e-12));
    CHECK(st.step == 1);
    CHECK(st.m.data[0] == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(st.v.data[0] == doctest::Approx(0.001).epsilon(1e-12));
}

TEST_CASE("adam three-step recurrence, constant and alternating gradients") {
    // Hand recurrence in double, checked at 1e-7 per the acceptance gate.
    auto run = [](const std::array<double, 3>& gs, std::array<double, 3>& out) {
        Matrix<double> g(1, 1);
        opt::AdamStateT<double> st(1, 1);
        Matrix<double> n;
        for (int t = 0; t < 3; ++t) {
            g.data[0] = gs[(std::size_t)t];
            opt::adam_advance(g, st, 0.9, 0.999, 1e-8, n);
            out[(std::size_t)t] = n.data[0];
        }
    };
    std::array<double, 3> n{};
    run({1.0, 1.0, 1.0}, n);
    for (int t = 0; t < 3; ++t)  // constant gradient: m_hat = v_hat = 1 at every step
        CHECK(std::abs(n[(std::size_t)t] - 1.0 / (1.0 + 1e-8)) < 1e-7);

    run({1.0, -1.0, 1.0}, n);
    // m_t = 0.9 m + 0.1 g, v_t = 0.999 v + 0.001 g^2, then bias-correct.
    double m = 0, v = 0;
    const double gs[3] = {1.0, -1.0, 1.0};
    for (int t = 1; t <= 3; ++t) {
        m = 0.9 * m + 0.1 * gs[t - 1];
        v = 0.999 * v + 0.001 * gs[t - 1] * gs[t - 1];
        const double expect = (m / (1.0 - std::pow(0.9, t))) /
                              (std::sqrt(v / (1.0 - std::pow(0.999, t))) + 1e-8);
        CHECK(std::abs(n[(std::size_t)(t - 1)] - expect) < 1e-7);
    }
    CHECK(n[1] == doctest::Approx(-0.05263157842105228).epsilon(1e-9));
    CHECK(n[2] == doctest::Approx(0.33579335457564596).epsilon(1e-9));
}

TEST_CASE("adam_normalize times column lr reproduces adam_step exactly") {
    Rng rng(5);
    Matrix<float> params = testutil::random_cloud<float>(7, rng);
    Matrix<float> grads(7, kParamDim);
    for (auto& g : grads.data) g = (float)rng.normal();

    const auto cfg = opt::param_groups_3dgs(1000);
    Matrix<float> stepped = params;
    opt::AdamState st_a(7, kParamDim);
    opt::AdamState st_b(7, kParamDim);
    for (int iter = 0; iter < 3; ++iter) {
        const std::int64_t t = st_b.step;
        opt::adam_step(stepped, grads, st_a, cfg);
        const Matrix<float> n = opt::adam_normalize(grads, st_b, (float)cfg.beta1,
                                                    (float)cfg.beta2, (float)cfg.eps);
        for (std::size_t r = 0; r < params.rows; ++r)
            for (std::size_t c = 0; c < kParamDim; ++c)
                params.at(r, c) -= (float)opt::column_lr(cfg, c, t) * n.at(r, c);
        for (std::size_t i = 0; i < params.data.size(); ++i)
            CHECK(params.data[i] == stepped.data[i]);  // bitwise: shared kernel
    }
}

TEST_CASE("adam_advance rejects mismatched shapes") {
    Matrix<float> g(2, 3);
    opt::AdamState st(2, 4);
    Matrix<float> n;
    CHECK_THROWS_AS(opt::adam_advance(g, st, 0.9f, 0.999f, 1e-8f, n), ShapeError);
}

TEST_CASE("3dgs param groups and the star variant") {
    const auto c = opt::param_groups_3dgs();
    CHECK(c.lr[0] == doctest::Approx(1.6e-4));
    CHECK(c.lr[1] == doctest::Approx(1e-3));
    CHECK(c.lr[2] == doctest::Approx(5e-3));
    CHECK(c.lr[3] == doctest::Approx(5e-2));
    CHECK(c.lr[4] == doctest::Approx(2.5e-3));
    CHECK(c.lr[5] == doctest::Approx(1.25e-4));
    CHECK(c.beta1 == doctest::Approx(0.9));
    CHECK(c.means_decay);

    const auto s = opt::param_groups_3dgs_star();
    for (int g = 0; g < kNumParamGroups; ++g) CHECK(s.lr[g] == doctest::Approx(5.0 * c.lr[g]));
    CHECK(s.beta1 == doctest::Approx(0.99));
    CHECK_FALSE(s.means_decay);
}

TEST_CASE("means lr decays log-linearly") {
    const auto c = opt::param_groups_3dgs(1000);
    CHECK(opt::means_lr(c, 0) == doctest::Approx(1.6e-4).epsilon(1e-12));
    CHECK(opt::means_lr(c, 1000) == doctest::Approx(1e-5).epsilon(1e-12));
    CHECK(opt::means_lr(c, 500) ==
          doctest::Approx(std::sqrt(1.6e-4 * 1e-5)).epsilon(1e-12));  // log midpoint
    CHECK(opt::means_lr(c, 2000) == doctest::Approx(1e-5).epsilon(1e-12));  // clamped

    auto s = opt::param_groups_3dgs_star(1000);
    CHECK(opt::means_lr(s, 500) == doctest::Approx(5 * 1.6e-4).epsilon(1e-12));  // no decay
}

TEST_CASE("column lr follows the parameter grouping") {
    const auto c = opt::param_groups_3dgs(100);
    CHECK(opt::column_lr(c, 0, 0) == doctest::Approx(1.6e-4));
    CHECK(opt::column_lr(c, 2, 0) == doctest::Approx(1.6e-4));
    CHECK(opt::column_lr(c, kQuatOff, 7) == doctest::Approx(1e-3));
    CHECK(opt::column_lr(c, kScaleOff, 7) == doctest::Approx(5e-3));
    CHECK(opt::column_lr(c, kOpacityOff, 7) == doctest::Approx(5e-2));
    CHECK(opt::column_lr(c, kShOff, 7) == doctest::Approx(2.5e-3));
    CHECK(opt::column_lr(c, kShOff + 3, 7) == doctest::Approx(1.25e-4));
    CHECK(opt::column_lr(c, kParamDim - 1, 7) == doctest::Approx(1.25e-4));
}

TEST_CASE("sgd step subtracts lr times gradient") {
    Matrix<float> p(1, 2), g(1, 2);
    p.data = {1.f, -2.f};
    g.data = {0.5f, 0.25f};
    opt::sgd_step(p, g, 0.1f);
    CHECK(p.data[0] == doctest::Approx(0.95f));
    CHECK(p.data[1] == doctest::Approx(-2.025f));
    Matrix<float> bad(2, 2);
    CHECK_THROWS_AS(opt::sgd_step(p, bad, 0.1f), ShapeError);
}

TEST_CASE("g3r normalization divides each column by its max abs") {
    Matrix<float> g(2, 1);
    g.data = {2.f, -4.f};
    const auto n = opt::g3r_normalize(g);
    CHECK(n.data[0] == doctest::Approx(0.5f));
    CHECK(n.data[1] == doctest::Approx(-1.f));

    Matrix<float> z(3, 2);
    z.data = {1.f, 0.f, -3.f, 0.f, 2.f, 0.f};
    const auto nz = opt::g3r_normalize(z);
    CHECK(nz.at(1, 0) == doctest::Approx(-1.f));
    for (std::size_t r = 0; r < 3; ++r) CHECK(nz.at(r, 1) == 0.f);  // zero column stays zero

    Rng rng(3);
    Matrix<float> rnd(17, 5);
    for (auto& v : rnd.data) v = (float)rng.normal();
    const auto nr = opt::g3r_normalize(rnd);
    for (std::size_t i = 0; i < nr.data.size(); ++i) {
        CHECK(std::fabs(nr.data[i]) <= 1.f + 1e-6f);
        CHECK(nr.data[i] * rnd.data[i] >= 0.f);  // sign preserved
    }
}

TEST_CASE("cosine schedule endpoints and shape") {
    CHECK(opt::cosine_lr(0, 100) == doctest::Approx(0.9998445910004082).epsilon(1e-12));
    CHECK(opt::cosine_lr(100, 100) == doctest::Approx(0.0).epsilon(1e-30));
    CHECK(opt::cosine_lr(100, 100) < 1e-30);
    CHECK(opt::cosine_lr(150, 100) == opt::cosine_lr(100, 100));  // clamps above
    CHECK(opt::cosine_lr(-5, 100) == opt::cosine_lr(0, 100));     // clamps below
    double prev = 2.0;
    for (int t = 0; t <= 100; ++t) {
        const double v = opt::cosine_lr(t, 100);
        CHECK(v <= prev);
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        prev = v;
    }
    CHECK_THROWS_AS(opt::cosine_lr(1, 0), ConfigError);
    CHECK_THROWS_AS(opt::cosine_lr(1, -3), ConfigError);
}

TEST_CASE("time encoding layout and values") {
    const auto enc = opt::time_encoding(50, 100);
    REQUIRE(enc.size() == 12);  // L = 6 -> interleaved sin/cos pairs
    // p = 0.5: sin(pi p) = 1, cos(2 pi p) = -1.
    CHECK(enc[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(enc[1]) < 1e-12);
    CHECK(std::abs(enc[2]) < 1e-12);
    CHECK(enc[3] == doctest::Approx(-1.0).epsilon(1e-12));

    const auto raw = opt::time_encoding(0.25, 100, 6, false);  // unnormalized: p = t
    CHECK(raw[0] == doctest::Approx(std::sin(M_PI * 0.25)).epsilon(1e-12));

    const auto z = opt::time_encoding(3, 0);  // T = 0 with normalize -> p = 0
    CHECK(z[0] == 0.0);
    CHECK(z[1] == 1.0);

    const auto L2 = opt::time_encoding(1, 4, 2);
    REQUIRE(L2.size() == 4);
    CHECK_THROWS_AS(opt::time_encoding(1, 4, 0), ConfigError);
}

TEST_CASE("l1 loss and its subgradient") {
    const auto a = const_image<float>(4, 4, 0.f);
    const auto b = const_image<float>(4, 4, 0.25f);
    CHECK(l1_loss(a, a) == doctest::Approx(0.0));
    CHECK(l1_loss(a, b) == doctest::Approx(0.25).epsilon(1e-7));

    // d l1(a, b) / d b = sign(b - a) / N; ties give exactly zero.
    ImageT<float> grad(4, 4);
    l1_backward(a, b, 2.f, grad);
    for (auto v : grad.rgb) CHECK(v == doctest::Approx(2.0 / (4 * 4 * 3)).epsilon(1e-6));
    ImageT<float> gz(4, 4);
    l1_backward(a, a, 1.f, gz);
    for (auto v : gz.rgb) CHECK(v == 0.f);

    Rng rng(11);
    const auto x = rand_image<double>(6, 5, rng);
    auto y = rand_image<double>(6, 5, rng);
    ImageT<double> g(6, 5);
    l1_backward(x, y, 1.0, g);
    const double h = 1e-6;
    for (std::size_t i = 0; i < 8; ++i) {
        const std::size_t idx = (std::size_t)rng.uniform_int(0, (std::int64_t)y.rgb.size() - 1);
        const double keep = y.rgb[idx];
        y.rgb[idx] = keep + h;
        const double lp = l1_loss(x, y);
        y.rgb[idx] = keep - h;
        const double lm = l1_loss(x, y);
        y.rgb[idx] = keep;
        CHECK(testutil::fd_close(g.rgb[idx], (lp - lm) / (2 * h), 1e-5, 1e-10));
    }
    ImageT<double> wrong(3, 3);
    CHECK_THROWS_AS(l1_loss(x, wrong), ShapeError);
}

TEST_CASE("ssim on constant images matches the closed form") {
    const auto a = const_image<double>(16, 16, 0.0);
    const auto b = const_image<double>(16, 16, 0.5);
    CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(d_ssim(a, a) == doctest::Approx(0.0).epsilon(1e-12));
    // zero variance everywhere: ssim = C1 / (mu2^2 + C1) = 1e-4 / 0.2501
    CHECK(ssim(a, b) == doctest::Approx(0.0003998400639744103).epsilon(1e-9));
    CHECK(d_ssim(a, b) == doctest::Approx(0.4998000799680128).epsilon(1e-9));

    Rng rng(7);
    const auto x = rand_image<double>(16, 16, rng);
    const auto y = rand_image<double>(16, 16, rng);
    CHECK(ssim(x, y) == doctest::Approx(ssim(y, x)).epsilon(1e-12));  // symmetric
    CHECK(ssim(x, y) < 1.0);
}

TEST_CASE("ssim window shrinks to fit small images") {
    // 8x8 uses a 7-tap window, 4x4 a 3-tap, 1x1 degenerates to the means.
    CHECK(detail::ssim_window(11, 11) == 11);
    CHECK(detail::ssim_window(8, 8) == 7);
    CHECK(detail::ssim_window(4, 4) == 3);
    CHECK(detail::ssim_window(1, 1) == 1);
    CHECK(detail::ssim_window(16, 4) == 3);  // limited by the smaller side

    const auto a = const_image<double>(1, 1, 0.2);
    const auto b = const_image<double>(1, 1, 0.6);
    const double c1 = 1e-4, c2 = 9e-4;
    const double expect = (2 * 0.2 * 0.6 + c1) * c2 / ((0.04 + 0.36 + c1) * c2);
    CHECK(ssim(a, b) == doctest::Approx(expect).epsilon(1e-12));

    Rng rng(9);
    const auto x = rand_image<double>(4, 4, rng);
    const auto y = rand_image<double>(4, 4, rng);
    CHECK(std::isfinite(ssim(x, y)));
}

TEST_CASE("d_ssim gradient matches finite differences") {
    Rng rng(13);
    const auto x = rand_image<double>(8, 8, rng);
    auto y = rand_image<double>(8, 8, rng);
    ImageT<double> g(8, 8);
    d_ssim_backward(x, y, 1.0, g);
    const double h = 1e-6;
    for (int i = 0; i < 12; ++i) {
        const std::size_t idx = (std::size_t)rng.uniform_int(0, (std::int64_t)y.rgb.size() - 1);
        const double keep = y.rgb[idx];
        y.rgb[idx] = keep + h;
        const double lp = d_ssim(x, y);
        y.rgb[idx] = keep - h;
        const double lm = d_ssim(x, y);
        y.rgb[idx] = keep;
        CHECK(testutil::fd_close(g.rgb[idx], (lp - lm) / (2 * h), 1e-4, 1e-9));
    }
}

TEST_CASE("inner loss is 0.8 l1 + 0.2 d_ssim") {
    Rng rng(17);
    const auto x = rand_image<double>(12, 12, rng);
    auto y = rand_image<double>(12, 12, rng);
    const auto rep = inner_loss(x, y);
    CHECK(rep.value ==
          doctest::Approx(0.8 * l1_loss(x, y) + 0.2 * d_ssim(x, y)).epsilon(1e-12));
    CHECK(rep.term("l1") == doctest::Approx(l1_loss(x, y)).epsilon(1e-12));
    CHECK(rep.term("d_ssim") == doctest::Approx(d_ssim(x, y)).epsilon(1e-12));
    CHECK_THROWS_AS(rep.term("nope"), ConfigError);

    ImageT<double> g(12, 12);
    inner_loss_backward(x, y, 1.0, g);
    const double h = 1e-6;
    for (int i = 0; i < 10; ++i) {
        const std::size_t idx = (std::size_t)rng.uniform_int(0, (std::int64_t)y.rgb.size() - 1);
        const double keep = y.rgb[idx];
        y.rgb[idx] = keep + h;
        const double lp = inner_loss(x, y).value;
        y.rgb[idx] = keep - h;
        const double lm = inner_loss(x, y).value;
        y.rgb[idx] = keep;
        CHECK(testutil::fd_close(g.rgb[idx], (lp - lm) / (2 * h), 1e-4, 1e-9));
    }
}

TEST_CASE("psnr examples and cap") {
    const auto a = const_image<float>(8, 8, 0.f);
    const auto b = const_image<float>(8, 8, 0.5f);
    CHECK(psnr(a, b) == doctest::Approx(6.020599913279624).epsilon(1e-9));
    CHECK(psnr(a, a) == doctest::Approx(99.0));  // zero mse hits the cap
    CHECK(psnr(a, a, 50.0) == doctest::Approx(50.0));
}

TEST_CASE("render loss discounts earlier steps by gamma") {
    std::deque<ImageT<float>> store;
    auto mk = [&](float v) -> const ImageT<float>* {
        store.push_back(const_image<float>(6, 6, v));
        return &store.back();
    };
    const auto* ref = mk(0.2f);
    const auto* r0 = mk(0.7f);
    const auto* r1 = mk(0.4f);

    TrajectoryStep<float> s0, s1;
    s0.refs = {ref};
    s0.renders = {r0};
    s1.refs = {ref};
    s1.renders = {r1};
    const double a = render_loss<float>({s0}, 0.9).value;
    const double b = render_loss<float>({s1}, 0.9).value;
    CHECK(render_loss<float>({s0, s1}, 0.9).value == doctest::Approx(0.9 * a + b).epsilon(1e-12));
    CHECK(render_loss<float>({s0, s1}, 1.0).value == doctest::Approx(a + b).epsilon(1e-12));

    // two views average within a step
    TrajectoryStep<float> s2;
    s2.refs = {ref, ref};
    s2.renders = {r0, r1};
    CHECK(render_loss<float>({s2}, 0.9).value == doctest::Approx(0.5 * (a + b)).epsilon(1e-12));
}

TEST_CASE("low-visibility mask and loss branches") {
    Matrix<float> u(1, 1), r(1, 1), ad(1, 1);

    u.data[0] = 0.3f, r.data[0] = 0.f, ad.data[0] = 0.5f;  // vanishing raw grad
    CHECK(low_visibility_loss(u, r, ad, 1e-8f) == doctest::Approx(0.3).epsilon(1e-7));

    u.data[0] = -0.4f, r.data[0] = 1e-3f, ad.data[0] = 0.5f;  // sign disagreement
    CHECK(low_visibility_loss(u, r, ad, 1e-8f) == doctest::Approx(0.4).epsilon(1e-7));

    u.data[0] = 0.4f, r.data[0] = 1e-3f, ad.data[0] = 0.5f;  // agreement: no penalty
    CHECK(low_visibility_loss(u, r, ad, 1e-8f) == doctest::Approx(0.0));

    u.data[0] = 0.4f, r.data[0] = 1e-3f, ad.data[0] = 0.f;  // sign(0) agrees
    CHECK(low_visibility_loss(u, r, ad, 1e-8f) == doctest::Approx(0.0));

    u.data[0] = 0.f, r.data[0] = 0.f, ad.data[0] = 0.f;  // masked but zero update
    CHECK(low_visibility_loss(u, r, ad, 1e-8f) == doctest::Approx(0.0));

    Rng rng(23);
    Matrix<float> uu(9, kParamDim), rr(9, kParamDim), aa(9, kParamDim);
    for (auto& v : uu.data) v = (float)rng.normal();
    for (auto& v : rr.data) v = (float)(rng.normal() * 1e-6);
    for (auto& v : aa.data) v = (float)rng.normal();
    CHECK(low_visibility_loss(uu, rr, aa, 1e-8f) >= 0.0);
    const auto mask = lvs_mask(uu, rr, aa, 1e-8f);
    for (auto v : mask.data) CHECK((v == 0.f || v == 1.f));

    Matrix<float> bad(2, 2);
    CHECK_THROWS_AS(lvs_mask(uu, bad, aa, 1e-8f), ShapeError);
}

TEST_CASE("stability loss hinges on per-step regressions") {
    CHECK(stability_loss({0.5, 0.7, 0.6}) == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(stability_loss({0.9, 0.5, 0.3, 0.1}) == doctest::Approx(0.0));
    CHECK(stability_loss({0.5}) == doctest::Approx(0.0));
    CHECK(stability_loss({}) == doctest::Approx(0.0));
    // invariant to a constant shift of the whole curve
    CHECK(stability_loss({1.5, 1.7, 1.6}) == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("meta loss sums render, lvs and stability terms") {
    std::deque<ImageT<float>> store;
    store.push_back(const_image<float>(6, 6, 0.2f));
    store.push_back(const_image<float>(6, 6, 0.6f));
    TrajectoryStep<float> s0;
    s0.refs = {&store[0]};
    s0.renders = {&store[1]};

    Matrix<float> u(2, 3), r(2, 3), ad(2, 3);
    for (std::size_t i = 0; i < u.data.size(); ++i) {
        u.data[i] = 0.1f * (float)(i + 1);
        r.data[i] = 0.f;  // all masked
        ad.data[i] = 1.f;
    }
    const std::vector<double> tl1 = {0.5, 0.7};
    const auto rep = meta_loss<float>({s0}, 0.9, {u}, {r}, {ad}, 1e-8f, tl1);
    const double render = render_loss<float>({s0}, 0.9).value;
    const double lvs = low_visibility_loss(u, r, ad, 1e-8f);
    CHECK(rep.term("render") == doctest::Approx(render).epsilon(1e-12));
    CHECK(rep.term("lvs") == doctest::Approx(lvs).epsilon(1e-12));
    CHECK(rep.term("stability") == doctest::Approx(0.2).epsilon(1e-9));
    CHECK(rep.value == doctest::Approx(render + lvs + 0.2).epsilon(1e-9));
}
