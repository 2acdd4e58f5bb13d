#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "l2s/render/renderer.hpp"
#include "l2s/scene/scene_gen.hpp"
#include "testutil.hpp"

using namespace l2s;

namespace {

// One gaussian: mean, isotropic log scale, opacity logit, flat DC color.
template <typename T>
void set_gaussian(Matrix<T>& p, std::size_t g, Vec3<T> mean, T log_scale, T opacity_logit,
                  Vec3<T> rgb) {
    for (std::size_t c = 0; c < kParamDim; ++c) p.at(g, c) = T(0);
    p.at(g, 0) = mean.x;
    p.at(g, 1) = mean.y;
    p.at(g, 2) = mean.z;
    p.at(g, kQuatOff) = T(1);  // identity rotation
    for (int c = 0; c < 3; ++c) p.at(g, (std::size_t)(kScaleOff + c)) = log_scale;
    p.at(g, kOpacityOff) = opacity_logit;
    p.at(g, kShOff + 0) = (rgb.x - T(0.5)) / T(kShC0);
    p.at(g, kShOff + 1) = (rgb.y - T(0.5)) / T(kShC0);
    p.at(g, kShOff + 2) = (rgb.z - T(0.5)) / T(kShC0);
}

// Options with every threshold disabled, for clean finite differences.
template <typename T>
RenderOptionsT<T> smooth_options() {
    RenderOptionsT<T> o;
    o.cull_sigmas = T(1e6);
    o.skip_weight = T(0);
    o.term_transmittance = T(0);
    return o;
}

template <typename T>
std::vector<T> render_vec(const Matrix<T>& p, const CameraT<T>& cam, const RenderOptionsT<T>& opts,
                          bool tiled) {
    std::vector<T> rgb((std::size_t)cam.width * cam.height * 3, T(0));
    if (tiled)
        render_tiled(p, cam, opts, rgb.data());
    else
        render_reference(p, cam, opts, rgb.data());
    return rgb;
}

}  // namespace

TEST_CASE("sh basis: band values at canonical directions") {
    double B[kShCoeffs];
    sh_basis<double>({0, 0, 1}, B);
    CHECK(B[0] == doctest::Approx(0.28209479177387814).epsilon(1e-15));
    CHECK(B[1] == 0.0);
    CHECK(B[2] == doctest::Approx(0.4886025119029199).epsilon(1e-15));
    CHECK(B[3] == 0.0);
    CHECK(B[6] == doctest::Approx(2 * 0.31539156525252005).epsilon(1e-15));
    CHECK(B[12] == doctest::Approx(2 * 0.3731763325901154).epsilon(1e-15));

    sh_basis<double>({1, 0, 0}, B);
    CHECK(B[3] == doctest::Approx(-0.4886025119029199).epsilon(1e-15));
    CHECK(B[8] == doctest::Approx(0.5462742152960396).epsilon(1e-15));
    CHECK(B[15] == doctest::Approx(-0.5900435899266435).epsilon(1e-15));
}

TEST_CASE("sh basis gradient matches finite differences") {
    Rng rng(21);
    for (int trial = 0; trial < 10; ++trial) {
        Vec3<double> d{rng.normal(), rng.normal(), rng.normal()};
        const double n = d.norm();
        d = {d.x / n, d.y / n, d.z / n};
        Vec3<double> dB[kShCoeffs];
        sh_basis_grad(d, dB);
        const double h = 1e-6;
        for (int axis = 0; axis < 3; ++axis) {
            Vec3<double> dp = d, dm = d;
            (axis == 0 ? dp.x : axis == 1 ? dp.y : dp.z) += h;
            (axis == 0 ? dm.x : axis == 1 ? dm.y : dm.z) -= h;
            double Bp[kShCoeffs], Bm[kShCoeffs];
            sh_basis<double>(dp, Bp);
            sh_basis<double>(dm, Bm);
            for (int i = 0; i < kShCoeffs; ++i) {
                const double fd = (Bp[i] - Bm[i]) / (2 * h);
                const double an = axis == 0 ? dB[i].x : axis == 1 ? dB[i].y : dB[i].z;
                CHECK(testutil::fd_close(an, fd, 1e-6, 1e-9));
            }
        }
    }
}

TEST_CASE("evaluate_sh: DC-only color and the clamp at zero") {
    float sh[48] = {};
    sh[0] = 0.7f;  // red channel DC
    const auto c = evaluate_sh<float>(sh, {0, 0, 1});
    CHECK(c.x == doctest::Approx(0.28209479177387814 * 0.7 + 0.5).epsilon(1e-6));
    CHECK(c.y == doctest::Approx(0.5).epsilon(1e-7));

    sh[1] = -3.0f;  // green DC pushes the channel negative
    const auto c2 = evaluate_sh<float>(sh, {0, 0, 1});
    CHECK(c2.y == 0.0f);

    // clamped channel passes no gradient back
    float dsh[48];
    const Vec3<float> up{0.3f, 0.4f, 0.5f};
    evaluate_sh_backward<float>(sh, {0, 0, 1}, up, dsh);
    CHECK(dsh[1] == 0.0f);                                 // green DC clamped
    CHECK(dsh[0] == doctest::Approx(0.28209479f * 0.3f));  // red flows
}

TEST_CASE("evaluate_sh_backward matches finite differences") {
    Rng rng(22);
    double sh[48];
    for (auto& v : sh) v = rng.uniform(-0.3, 0.5);
    sh[0] = 1.0;  // keep channels positive so the clamp stays inactive
    sh[1] = 1.0;
    sh[2] = 1.0;
    Vec3<double> dir{0.3, -0.5, 0.81};
    const double n = dir.norm();
    dir = {dir.x / n, dir.y / n, dir.z / n};
    const Vec3<double> up{0.7, -0.4, 0.2};

    double dsh[48];
    const Vec3<double> ddir = evaluate_sh_backward<double>(sh, dir, up, dsh);

    const double h = 1e-6;
    auto loss = [&](const double* s, const Vec3<double>& d) {
        const auto c = evaluate_sh<double>(s, d);
        return up.x * c.x + up.y * c.y + up.z * c.z;
    };
    for (int i = 0; i < 48; ++i) {
        double s2[48];
        std::copy(sh, sh + 48, s2);
        s2[i] = sh[i] + h;
        const double lp = loss(s2, dir);
        s2[i] = sh[i] - h;
        const double lm = loss(s2, dir);
        CHECK(testutil::fd_close(dsh[i], (lp - lm) / (2 * h), 1e-6, 1e-10));
    }
    for (int axis = 0; axis < 3; ++axis) {
        Vec3<double> dp = dir, dm = dir;
        (axis == 0 ? dp.x : axis == 1 ? dp.y : dp.z) += h;
        (axis == 0 ? dm.x : axis == 1 ? dm.y : dm.z) -= h;
        const double fd = (loss(sh, dp) - loss(sh, dm)) / (2 * h);
        const double an = axis == 0 ? ddir.x : axis == 1 ? ddir.y : ddir.z;
        CHECK(testutil::fd_close(an, fd, 1e-6, 1e-10));
    }
}

TEST_CASE("projection: isotropic gaussian lands at the image center") {
    // focal 40, scale 0.1, depth 4: cov2d = (40 * 0.1 / 4)^2 + lowpass on the
    // diagonal, zero off-diagonal.
    Matrix<double> p(1, kParamDim);
    set_gaussian<double>(p, 0, {0, 0, 0}, std::log(0.1), 0.0, {1, 1, 1});
    const auto cam = testutil::axis_camera<double>(16, 16, 40.0, 4.0);
    RenderOptionsT<double> opts;
    ProjectStats stats;
    const auto proj = project_gaussians(p, cam, opts, &stats);
    REQUIRE(proj.size() == 1);
    CHECK(stats.projected == 1);
    CHECK(proj[0].mean2d.x == doctest::Approx(8.0).epsilon(1e-12));
    CHECK(proj[0].mean2d.y == doctest::Approx(8.0).epsilon(1e-12));
    CHECK(proj[0].depth == doctest::Approx(4.0).epsilon(1e-12));

    // conic is the inverse of cov2d = diag(1.3, 1.3)
    const double expect = 1.0 * 1.0 + 0.3;
    CHECK(proj[0].conic[0] == doctest::Approx(1.0 / expect).epsilon(1e-9));
    CHECK(std::abs(proj[0].conic[1]) < 1e-12);
    CHECK(proj[0].conic[2] == doctest::Approx(1.0 / expect).epsilon(1e-9));
    CHECK(proj[0].opacity == doctest::Approx(0.5).epsilon(1e-12));  // sigmoid(0)
}

TEST_CASE("projection culls behind the near plane and outside the guard disc") {
    Matrix<double> p(3, kParamDim);
    set_gaussian<double>(p, 0, {0, 0, 0}, std::log(0.1), 0.0, {1, 1, 1});
    set_gaussian<double>(p, 1, {0, 0, -8.0}, std::log(0.1), 0.0, {1, 1, 1});  // behind camera
    set_gaussian<double>(p, 2, {100.0, 0, 0}, std::log(0.05), 0.0, {1, 1, 1});  // far off-frame
    const auto cam = testutil::axis_camera<double>(16, 16, 40.0, 4.0);
    RenderOptionsT<double> opts;
    ProjectStats stats;
    const auto proj = project_gaussians(p, cam, opts, &stats);
    CHECK(proj.size() == 1);
    CHECK(stats.projected == 1);
    CHECK(stats.culled_near == 1);
    CHECK(stats.culled_guard == 1);
    CHECK(proj[0].source_index == 0);
}

TEST_CASE("projection normalizes the quaternion") {
    Matrix<float> a(1, kParamDim), b(1, kParamDim);
    set_gaussian<float>(a, 0, {0.1f, -0.2f, 0.3f}, -2.f, 0.5f, {0.8f, 0.3f, 0.2f});
    set_gaussian<float>(b, 0, {0.1f, -0.2f, 0.3f}, -2.f, 0.5f, {0.8f, 0.3f, 0.2f});
    // same rotation, non-unit encoding
    a.at(0, kQuatOff) = 0.36f;
    a.at(0, kQuatOff + 1) = 0.48f;
    a.at(0, kQuatOff + 2) = 0.6f;
    a.at(0, kQuatOff + 3) = 0.0f;
    const float s = 2.5f;
    for (int c = 0; c < 4; ++c) b.at(0, (std::size_t)(kQuatOff + c)) = a.at(0, (std::size_t)(kQuatOff + c)) * s;

    const auto cam = testutil::axis_camera<float>(16, 16, 40.f, 4.f);
    const RenderOptions opts;
    const auto ra = render_vec<float>(a, cam, opts, true);
    const auto rb = render_vec<float>(b, cam, opts, true);
    for (std::size_t i = 0; i < ra.size(); ++i)
        CHECK(ra[i] == doctest::Approx(rb[i]).epsilon(1e-5));

    Matrix<float> z = a;
    for (int c = 0; c < 4; ++c) z.at(0, (std::size_t)(kQuatOff + c)) = 0.f;
    std::vector<float> rgb(16 * 16 * 3);
    CHECK_THROWS_AS(render_tiled(z, cam, opts, rgb.data()), NumericError);
}

TEST_CASE("compositing: single gaussian at a pixel center blends its opacity") {
    Matrix<float> p(1, kParamDim);
    set_gaussian<float>(p, 0, {0, 0, 0}, std::log(0.5f), 0.f, {1, 1, 1});
    auto cam = testutil::axis_camera<float>(16, 16, 40.f, 4.f);
    cam.K(0, 2) = 7.5f;  // gaussian projects exactly onto pixel (7, 7)'s center
    cam.K(1, 2) = 7.5f;
    RenderOptions opts;
    Image img(16, 16);
    std::vector<float> alpha(16 * 16, 0.f);
    render_tiled(p, cam, opts, img.rgb.data(), alpha.data());
    // dx = dy = 0 at the center pixel: weight = sigmoid(0) = 0.5 exactly
    CHECK(alpha[7 * 16 + 7] == 0.5f);
    CHECK(img.px(7, 7)[0] == doctest::Approx(0.5f).epsilon(1e-6));
    CHECK(img.px(7, 7)[1] == doctest::Approx(0.5f).epsilon(1e-6));
    // off-center pixels fall off
    CHECK(img.px(0, 0)[0] < 0.5f);
}

TEST_CASE("compositing: two half-opacity gaussians reach 3/4 coverage") {
    Matrix<float> p(2, kParamDim);
    set_gaussian<float>(p, 0, {0, 0, 0}, std::log(0.5f), 0.f, {1, 1, 1});
    set_gaussian<float>(p, 1, {0, 0, 0.5f}, std::log(0.5f), 0.f, {1, 1, 1});
    auto cam = testutil::axis_camera<float>(16, 16, 40.f, 4.f);
    cam.K(0, 2) = 7.5f;
    cam.K(1, 2) = 7.5f;
    Image img(16, 16);
    std::vector<float> alpha(16 * 16, 0.f);
    render_tiled(p, cam, RenderOptions{}, img.rgb.data(), alpha.data());
    // 0.5 + 0.5 * (1 - 0.5): exact in floating point
    CHECK(alpha[7 * 16 + 7] == 0.75f);
    CHECK(img.px(7, 7)[0] == doctest::Approx(0.75f).epsilon(1e-6));
}

TEST_CASE("compositing: depth order puts the near gaussian in front") {
    Matrix<float> p(2, kParamDim);
    const float lg = (float)std::log(0.8 / 0.2);  // logit for alpha = 0.8
    set_gaussian<float>(p, 0, {0, 0, 1.0f}, std::log(0.5f), lg, {0, 0, 1});  // far: blue
    set_gaussian<float>(p, 1, {0, 0, -1.0f}, std::log(0.5f), lg, {1, 0, 0});  // near: red
    auto cam = testutil::axis_camera<float>(16, 16, 40.f, 4.f);
    cam.K(0, 2) = 7.5f;
    cam.K(1, 2) = 7.5f;
    Image img(16, 16);
    render_tiled(p, cam, RenderOptions{}, img.rgb.data());
    const float* px = img.px(7, 7);
    CHECK(px[0] == doctest::Approx(0.8f).epsilon(1e-5));          // red: w = alpha
    CHECK(px[2] == doctest::Approx(0.8f * 0.2f).epsilon(1e-4));   // blue behind: w = alpha (1 - 0.8)
    CHECK(px[0] > px[2]);
}

TEST_CASE("compositing: per-contribution weight clamps at max_weight") {
    Matrix<float> p(1, kParamDim);
    set_gaussian<float>(p, 0, {0, 0, 0}, std::log(0.5f), 20.f, {1, 1, 1});  // sigmoid ~ 1
    auto cam = testutil::axis_camera<float>(16, 16, 40.f, 4.f);
    cam.K(0, 2) = 7.5f;
    cam.K(1, 2) = 7.5f;
    Image img(16, 16);
    std::vector<float> alpha(16 * 16, 0.f);
    render_tiled(p, cam, RenderOptions{}, img.rgb.data(), alpha.data());
    CHECK(alpha[7 * 16 + 7] == 0.999f);
    CHECK(img.px(7, 7)[0] == doctest::Approx(0.999f).epsilon(1e-6));
}

TEST_CASE("compositing: contributions below skip_weight leave the background") {
    Matrix<float> p(1, kParamDim);
    // sigmoid(-6) ~ 0.0025 < 1/255: skipped everywhere
    set_gaussian<float>(p, 0, {0, 0, 0}, std::log(0.5f), -6.f, {1, 1, 1});
    auto cam = testutil::axis_camera<float>(16, 16, 40.f, 4.f);
    RenderOptions opts;
    opts.background = {0.25f, 0.5f, 0.75f};
    Image img(16, 16);
    render_tiled(p, cam, opts, img.rgb.data());
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
            CHECK(img.px(x, y)[0] == 0.25f);
            CHECK(img.px(x, y)[2] == 0.75f);
        }
}

TEST_CASE("empty cloud renders the background") {
    Matrix<float> p(0, kParamDim);
    const auto cam = testutil::axis_camera<float>(8, 8, 20.f, 4.f);
    RenderOptions opts;
    opts.background = {0.1f, 0.2f, 0.3f};
    Image img(8, 8);
    std::vector<float> alpha(8 * 8, 1.f);
    render_reference(p, cam, opts, img.rgb.data(), alpha.data());
    CHECK(img.px(3, 3)[1] == 0.2f);
    CHECK(alpha[0] == 0.f);
}

TEST_CASE("tiled path is bitwise identical to the reference") {
    Rng rng(31);
    for (int scene = 0; scene < 12; ++scene) {
        const std::size_t G = 1 + (std::size_t)rng.uniform_int(0, 63);
        Matrix<float> p = testutil::random_cloud<float>(G, rng, 0.8);
        auto cam = testutil::axis_camera<float>(48, 32, 30.f, 3.5f);
        cam.K(0, 2) += (float)rng.uniform(-2.0, 2.0);  // off-center principal point
        RenderOptions opts;
        opts.tile_size = 1 + (int)rng.uniform_int(0, 15);
        opts.background = {0.1f, 0.1f, 0.1f};

        std::vector<float> ref(48 * 32 * 3), tiled(48 * 32 * 3);
        std::vector<float> ref_a(48 * 32), tiled_a(48 * 32);
        ProjectStats s1, s2;
        render_reference(p, cam, opts, ref.data(), ref_a.data(), &s1);
        render_tiled(p, cam, opts, tiled.data(), tiled_a.data(), &s2);
        for (std::size_t i = 0; i < ref.size(); ++i) CHECK(ref[i] == tiled[i]);
        for (std::size_t i = 0; i < ref_a.size(); ++i) CHECK(ref_a[i] == tiled_a[i]);
        CHECK(s1.projected == s2.projected);
        CHECK(s1.culled_near == s2.culled_near);
        CHECK(s1.culled_guard == s2.culled_guard);
    }
}

TEST_CASE("renders are deterministic and invariant to row permutation at distinct depths") {
    Rng rng(32);
    Matrix<float> p = testutil::random_cloud<float>(8, rng);
    for (std::size_t g = 0; g < 8; ++g) p.at(g, 2) = -0.8f + 0.2f * (float)g;  // distinct depths
    const auto cam = testutil::axis_camera<float>(24, 24, 30.f, 4.f);
    const RenderOptions opts;

    const auto a = render_vec<float>(p, cam, opts, true);
    const auto b = render_vec<float>(p, cam, opts, true);  // rerun: same bytes
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);

    Matrix<float> shuffled(8, kParamDim);
    std::vector<std::size_t> perm{5, 2, 7, 0, 3, 6, 1, 4};
    for (std::size_t g = 0; g < 8; ++g)
        for (std::size_t c = 0; c < kParamDim; ++c) shuffled.at(g, c) = p.at(perm[g], c);
    const auto c = render_vec<float>(shuffled, cam, opts, true);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == c[i]);
}

TEST_CASE("render gradients match finite differences in fp64") {
    Rng rng(33);
    const auto opts = smooth_options<double>();
    for (int scene = 0; scene < 3; ++scene) {
        const std::size_t G = 1 + (std::size_t)rng.uniform_int(0, 2);
        Matrix<double> p = testutil::random_cloud<double>(G, rng);
        const auto cam = testutil::axis_camera<double>(16, 16, 40.0, 4.0);
        Matrix<double> up(16, 16 * 3);
        for (auto& v : up.data) v = rng.uniform(-1.0, 1.0);

        Matrix<double> grad_ref(G, kParamDim), grad_tiled(G, kParamDim);
        render_backward_reference(p, cam, opts, up.data.data(), grad_ref);
        render_backward_tiled(p, cam, opts, up.data.data(), grad_tiled);
        for (std::size_t i = 0; i < grad_ref.data.size(); ++i)
            CHECK(grad_ref.data[i] == grad_tiled.data[i]);  // shared math, bitwise

        auto loss = [&](const Matrix<double>& q) {
            const auto img = render_vec<double>(q, cam, opts, false);
            double s = 0;
            for (std::size_t i = 0; i < img.size(); ++i) s += img[i] * up.data[i];
            return s;
        };
        const double h = 1e-6;
        for (std::size_t g = 0; g < G; ++g)
            for (std::size_t c = 0; c < kParamDim; ++c) {
                Matrix<double> q = p;
                q.at(g, c) = p.at(g, c) + h;
                const double lp = loss(q);
                q.at(g, c) = p.at(g, c) - h;
                const double lm = loss(q);
                const double fd = (lp - lm) / (2 * h);
                INFO("gaussian ", g, " param ", c);
                CHECK(testutil::fd_close(grad_ref.at(g, c), fd, 1e-3, 1e-7));
            }
    }
}

TEST_CASE("gaussians behind the camera get zero gradient rows") {
    Rng rng(34);
    Matrix<double> p = testutil::random_cloud<double>(2, rng);
    p.at(1, 2) = -9.0;  // behind the near plane for a camera at z = -4
    const auto cam = testutil::axis_camera<double>(16, 16, 40.0, 4.0);
    Matrix<double> up(16, 16 * 3);
    for (auto& v : up.data) v = rng.uniform(-1.0, 1.0);
    Matrix<double> grad(2, kParamDim);
    render_backward_reference(p, cam, RenderOptionsT<double>{}, up.data.data(), grad);
    double row0 = 0;
    for (std::size_t c = 0; c < kParamDim; ++c) {
        row0 += std::abs(grad.at(0, c));
        CHECK(grad.at(1, c) == 0.0);
    }
    CHECK(row0 > 0.0);
}

TEST_CASE("cloud-level wrappers: batches and validation") {
    auto ds = scene::generate_scene(77, scene::SceneSpec{});
    const auto& cloud = ds.initial_cloud;
    const View& v0 = ds.views[0];
    const View& v1 = ds.views[1];

    const auto single = render(cloud, v0);
    const auto batch = render_batch(cloud, {v0});
    REQUIRE(batch.size() == 1);
    for (std::size_t i = 0; i < single.rgb.rgb.size(); ++i)
        CHECK(batch[0].rgb.rgb[i] == single.rgb.rgb[i]);

    Image up(v0.image.width, v0.image.height);
    Rng rng(35);
    for (auto& x : up.rgb) x = (float)rng.uniform(-1.0, 1.0);

    // duplicated view: (g + g) / 2 == g bitwise
    const auto g1 = render_backward(cloud, v0, up);
    const auto gdup = render_backward_batch(cloud, {v0, v0}, {up, up});
    for (std::size_t i = 0; i < g1.data.size(); ++i) CHECK(gdup.data[i] == g1.data[i]);

    // two distinct views: accumulate then halve
    const auto g2 = render_backward(cloud, v1, up);
    const auto gavg = render_backward_batch(cloud, {v0, v1}, {up, up});
    for (std::size_t i = 0; i < g1.data.size(); ++i)
        CHECK(gavg.data[i] == (g1.data[i] + g2.data[i]) * 0.5f);

    // shape and finiteness guards
    Image bad(3, 3);
    CHECK_THROWS_AS(render_backward(cloud, v0, bad), ShapeError);
    CHECK_THROWS_AS(render_backward_batch(cloud, {v0}, {up, up}), ShapeError);
    GaussianCloud nan_cloud = cloud;
    nan_cloud.params.at(0, 0) = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(render(nan_cloud, v0), NumericError);
}

TEST_CASE("alpha stays in [0, 1) and respects early termination") {
    Rng rng(36);
    Matrix<float> p = testutil::random_cloud<float>(32, rng);
    for (std::size_t g = 0; g < 32; ++g) p.at(g, kOpacityOff) = 8.f;  // near-opaque stack
    const auto cam = testutil::axis_camera<float>(24, 24, 30.f, 4.f);
    std::vector<float> rgb(24 * 24 * 3), alpha(24 * 24);
    render_tiled(p, cam, RenderOptions{}, rgb.data(), alpha.data());
    for (const float a : alpha) {
        CHECK(a >= 0.f);
        CHECK(a < 1.f);
    }
    // with termination at 1e-4, fully covered pixels stop at alpha >= 1 - 1e-4 * ~1
    const float mx = *std::max_element(alpha.begin(), alpha.end());
    CHECK(mx > 0.999f);
}
