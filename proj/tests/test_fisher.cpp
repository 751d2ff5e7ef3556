#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <ps2f/fisher.hpp>

#include "support.hpp"

using namespace ps2f;
using namespace testsupport;

namespace {

PsfStack delta_stack(int planes, double z_half, const Grid2D& sensor) {
    PsfStack stack;
    stack.channels = {"full"};
    stack.sensor_grid = sensor;
    stack.psfs.assign(1, {});
    for (int k = 0; k < planes; ++k) {
        stack.z_samples.push_back(planes == 1 ? 0.0 : -z_half + 2 * z_half * k / (planes - 1));
        RealImage img(sensor);
        img.at(sensor.cy(), sensor.cx()) = 1.0;
        stack.psfs[0].push_back(img);
    }
    return stack;
}

PsfStack flat_stack(int planes, double z_half, const Grid2D& sensor) {
    PsfStack stack;
    stack.channels = {"full"};
    stack.sensor_grid = sensor;
    stack.psfs.assign(1, {});
    for (int k = 0; k < planes; ++k) {
        stack.z_samples.push_back(-z_half + 2 * z_half * k / (planes - 1));
        RealImage img(sensor, 1.0);
        img.normalize_sum();
        stack.psfs[0].push_back(img);
    }
    return stack;
}

}  // namespace

TEST_CASE("line images are identical for phi and phi + pi") {
    Grid2D sensor(33, 33, 1e-5);
    PsfStack stack = gaussian_stack(7, 3e-4, sensor, 2e-5);
    PhotonModel model{1e5, 5};
    LinePatch a{0.3e-4, 0.7, 64, 1.0};
    LinePatch b = a;
    b.phi = a.phi + kPi;
    RealImage ia = render_line_image(stack, a, model);
    RealImage ib = render_line_image(stack, b, model);
    for (std::size_t i = 0; i < ia.v.size(); ++i)
        CHECK(ia.v[i] == doctest::Approx(ib.v[i]).epsilon(1e-9));
}

TEST_CASE("a delta PSF reproduces the rasterized line plus background") {
    Grid2D sensor(17, 17, 1e-5);
    PsfStack stack = delta_stack(3, 1e-4, sensor);
    PhotonModel model{1000, 2};
    LinePatch patch{0.0, 0.4, 32, 1.0};
    RealImage img = render_line_image(stack, patch, model);
    RealImage line = detail::rasterize_line(32, 1e-5, 0.4, 1.0);
    line.scale(1000.0 / line.sum());
    for (std::size_t i = 0; i < img.v.size(); ++i)
        CHECK(img.v[i] == doctest::Approx(line.v[i] + 2.0).epsilon(1e-9).scale(1.0));
}

TEST_CASE("rendered patch total equals N plus beta per pixel") {
    Grid2D sensor(33, 33, 1e-5);
    PsfStack stack = gaussian_stack(7, 3e-4, sensor, 2e-5);
    PhotonModel model{1e5, 5};
    LinePatch patch{0.5e-4, 1.1, 64, 1.0};
    RealImage img = render_line_image(stack, patch, model);
    CHECK(img.sum() == doctest::Approx(1e5 + 5.0 * 64 * 64).epsilon(0.5 / 1e5));
}

TEST_CASE("patch and model preconditions are enforced") {
    Grid2D sensor(33, 33, 1e-5);
    PsfStack stack = gaussian_stack(7, 3e-4, sensor, 2e-5);
    PhotonModel model{1e5, 5};
    LinePatch tiny{0.0, 0.0, 8, 1.0};
    CHECK_THROWS_AS(render_line_image(stack, tiny, model), config_error);
    PhotonModel bad{0, 5};
    LinePatch patch{0.0, 0.0, 64, 1.0};
    CHECK_THROWS_AS(render_line_image(stack, patch, bad), config_error);
    // z at the boundary leaves no room for finite differences
    LinePatch edge{stack.z_max(), 0.0, 64, 1.0};
    CHECK_THROWS_AS(fisher_line(line_channels_single(stack, model), edge, model.background),
                    config_error);
}

TEST_CASE("a position-independent PSF has zero point Fisher information") {
    Grid2D sensor(25, 25, 1e-5);
    PsfStack stack = flat_stack(5, 2e-4, sensor);
    PhotonModel model{1e4, 1};
    FisherMatrix fi = fisher_point(stack, {0, 0, 0}, model);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) CHECK(std::abs(fi.at(i, j)) < 1e-9);
}

TEST_CASE("point Fisher information is exactly linear in N at zero background") {
    Grid2D sensor(25, 25, 1e-5);
    PsfStack stack = gaussian_stack(5, 2e-4, sensor, 2e-5, 0.3);
    FisherMatrix f1 = fisher_point(stack, {1e-5, -1e-5, 2e-5}, {5e4, 0});
    FisherMatrix f2 = fisher_point(stack, {1e-5, -1e-5, 2e-5}, {1e5, 0});
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            CHECK(f2.at(i, j) == doctest::Approx(2.0 * f1.at(i, j)).epsilon(1e-12));
}

TEST_CASE("gaussian-spot localization matches the analytic bound within 5 percent") {
    // oracle: for a unit-total Gaussian spot of width sigma and N photons at
    // zero background, FI_xx = N / sigma^2, so sqrt CRLB_x = sigma / sqrt(N).
    // Evaluate on a stack plane (no z blending) at a centered position, where
    // the x/y rows decouple from z by symmetry.
    Grid2D sensor(61, 61, 1e-5);
    double sigma0 = 2.5e-5, slope = 0.35, z_eval = 1e-4;
    PsfStack stack = gaussian_stack(9, 4e-4, sensor, sigma0, slope);
    double sigma = sigma0 * std::sqrt(1.0 + sq(slope * z_eval / sigma0));
    double n_photons = 1e5;
    FisherMatrix fi = fisher_point(stack, {0, 0, z_eval}, {n_photons, 0});
    auto crlb = crlb_extract(fi);
    double expect = sigma / std::sqrt(n_photons);
    CHECK(crlb[0] == doctest::Approx(expect).epsilon(0.05));
    CHECK(crlb[1] == doctest::Approx(expect).epsilon(0.05));
}

TEST_CASE("two identical channels double the line Fisher information") {
    Grid2D sensor(33, 33, 1e-5);
    PsfStack stack = gaussian_stack(7, 3e-4, sensor, 2e-5, 0.4);
    PhotonModel model{1e5, 5};
    LinePatch patch{0.2e-4, 0.9, 48, 1.0};
    std::vector<LineChannel> one = {{&stack, 0, 1e4}};
    std::vector<LineChannel> two = {{&stack, 0, 1e4}, {&stack, 0, 1e4}};
    FisherMatrix fa = fisher_line(one, patch, model.background);
    FisherMatrix fb = fisher_line(two, patch, model.background);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
            CHECK(fb.at(i, j) == doctest::Approx(2.0 * fa.at(i, j)).epsilon(1e-12));
}

TEST_CASE("line Fisher matrices are symmetric positive semidefinite") {
    Grid2D sensor(33, 33, 1e-5);
    PsfStack pair = lobe_pair_stack(9, 4e-4, sensor, 3e-5, 1.5e-5);
    PhotonModel model{1e5, 5};
    for (double z : {-2e-4, 0.0, 1.5e-4})
        for (double phi : {0.0, 0.5, 1.2, 2.9}) {
            LinePatch patch{z, phi, 48, 1.0};
            FisherMatrix fi = fisher_line(line_channels_pair(pair, model), patch, model.background);
            CHECK(fi.at(0, 1) == fi.at(1, 0));
            // eigenvalues of a symmetric 2x2
            double tr = fi.at(0, 0) + fi.at(1, 1);
            double det = fi.at(0, 0) * fi.at(1, 1) - sq(fi.at(0, 1));
            double disc = std::sqrt(std::max(0.0, sq(tr) - 4 * det));
            CHECK(0.5 * (tr - disc) >= -1e-9 * std::max(1.0, tr));
        }
}

TEST_CASE("crlb extraction: diagonal, scaling, and hand-inverted cases") {
    FisherMatrix fi;
    fi.dim = 2;
    fi.at(0, 0) = 4.0;
    fi.at(1, 1) = 25.0;
    auto c = crlb_extract(fi);
    CHECK(c[0] == doctest::Approx(0.5));
    CHECK(c[1] == doctest::Approx(0.2));

    FisherMatrix f4 = fi;
    for (auto& v : f4.m) v *= 4.0;
    auto c4 = crlb_extract(f4);
    CHECK(c4[0] == doctest::Approx(0.25));
    CHECK(c4[1] == doctest::Approx(0.1));

    FisherMatrix g;
    g.dim = 2;
    g.at(0, 0) = 2;
    g.at(0, 1) = 1;
    g.at(1, 0) = 1;
    g.at(1, 1) = 2;
    auto cg = crlb_extract(g);
    // inverse of [[2,1],[1,2]] has diagonal 2/3
    CHECK(cg[0] == doctest::Approx(std::sqrt(2.0 / 3.0)));
    CHECK(cg[1] == doctest::Approx(std::sqrt(2.0 / 3.0)));
}

TEST_CASE("singular information matrices yield NaN, not exceptions") {
    FisherMatrix fi;
    fi.dim = 2;
    fi.at(0, 0) = 1.0;  // zero row/column for the second parameter
    auto c = crlb_extract(fi);
    CHECK(std::isnan(c[0]));
    CHECK(std::isnan(c[1]));
}

TEST_CASE("sqrt CRLB scales as one over sqrt N at zero background") {
    Grid2D sensor(33, 33, 1e-5);
    PsfStack stack = gaussian_stack(7, 3e-4, sensor, 2e-5, 0.4);
    LinePatch patch{0.4e-4, 1.0, 48, 1.0};
    auto c1 = crlb_extract(fisher_line({{&stack, 0, 1e4}}, patch, 0.0));
    auto c2 = crlb_extract(fisher_line({{&stack, 0, 4e4}}, patch, 0.0));
    CHECK(c2[0] == doctest::Approx(0.5 * c1[0]).epsilon(1e-6));
    CHECK(c2[1] == doctest::Approx(0.5 * c1[1]).epsilon(1e-6));
}

TEST_CASE("finite-difference steps are converged on smooth stacks") {
    // the z interpolation is piecewise linear, so the patch center sits at a
    // segment midpoint and both step sizes stay inside the segment; the phi
    // renders are smooth in phi, so halving that step is a true refinement
    Grid2D sensor(33, 33, 1e-5);
    PsfStack stack = gaussian_stack(13, 4e-4, sensor, 2e-5, 0.5);
    double seg = stack.z_spacing();
    PhotonModel model{1e5, 5};
    LinePatch patch{seg / 2, 0.8, 48, 1.0};  // between the knots at 0 and seg
    FdSteps h1{seg / 4, deg2rad(0.05), 0};
    FdSteps h2{seg / 8, deg2rad(0.025), 0};
    FisherMatrix a = fisher_line(line_channels_single(stack, model), patch, model.background, h1);
    FisherMatrix b = fisher_line(line_channels_single(stack, model), patch, model.background, h2);
    // entry changes are judged against the matrix scale: a near-cancelled
    // cross term has no meaningful relative error of its own
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
            double scale = std::sqrt(b.at(i, i) * b.at(j, j));
            CHECK(std::abs(a.at(i, j) - b.at(i, j)) < 0.01 * scale);
        }
}

TEST_CASE("depth CRLB spikes when the line runs parallel to the two-lobe axis at focus") {
    // two-lobe rotating stack: at focus the +-dz patterns mirror about the
    // lobe axis, so a line parallel to that axis carries no depth sign
    // information and the depth bound blows up relative to nearby angles
    Grid2D sensor(33, 33, 1e-5);
    PsfStack two_lobe;
    two_lobe.channels = {"full"};
    two_lobe.sensor_grid = sensor;
    two_lobe.psfs.assign(1, {});
    int planes = 9;
    double z_half = 4e-4;
    for (int k = 0; k < planes; ++k) {
        double z = -z_half + 2 * z_half * k / (planes - 1);
        double ang = kPi / 2 * (z / z_half);
        RealImage a = gaussian_image(sensor, 3e-5 * std::cos(ang), 3e-5 * std::sin(ang), 1.2e-5);
        RealImage b = gaussian_image(sensor, -3e-5 * std::cos(ang), -3e-5 * std::sin(ang), 1.2e-5);
        RealImage img(sensor);
        for (std::size_t i = 0; i < img.v.size(); ++i) img.v[i] = 0.5 * (a.v[i] + b.v[i]);
        two_lobe.z_samples.push_back(z);
        two_lobe.psfs[0].push_back(img);
    }
    PhotonModel model{1e5, 5};
    auto crlb_at = [&](double phi) {
        LinePatch patch{0.0, phi, 48, 1.0};
        return crlb_extract(fisher_line(line_channels_single(two_lobe, model), patch,
                                        model.background))[0];
    };
    double on_axis = crlb_at(0.0);  // lobe axis at focus points along +x
    double off_a = crlb_at(0.5), off_b = crlb_at(-0.5);
    bool spike = !std::isfinite(on_axis) || (on_axis > 3 * off_a && on_axis > 3 * off_b);
    CHECK(spike);
    CHECK(std::isfinite(off_a));
    CHECK(std::isfinite(off_b));
}

TEST_CASE("a z-independent stack maps to all-NaN depth CRLB") {
    Grid2D sensor(25, 25, 1e-5);
    PsfStack stack = gaussian_stack(5, 2e-4, sensor, 2e-5, 0.0);  // constant over z
    PhotonModel model{1e4, 2};
    std::vector<double> zg = {-1e-4, 0.0, 1e-4};
    std::vector<double> pg = {0.3, 1.4};
    CrlbMap map = crlb_map(line_channels_single(stack, model), zg, pg, model, 32);
    for (double v : map.sqrt_crlb_z) CHECK(std::isnan(v));
}

TEST_CASE("depth CRLB is periodic in phi with period pi") {
    Grid2D sensor(33, 33, 1e-5);
    PsfStack pair = lobe_pair_stack(9, 4e-4, sensor, 3e-5, 1.5e-5);
    PhotonModel model{1e5, 5};
    LinePatch a{1e-4, 0.7, 48, 1.0};
    LinePatch b = a;
    b.phi = a.phi + kPi;
    auto ca = crlb_extract(fisher_line(line_channels_pair(pair, model), a, model.background));
    auto cb = crlb_extract(fisher_line(line_channels_pair(pair, model), b, model.background));
    CHECK(ca[0] == doctest::Approx(cb[0]).epsilon(1e-9));
}

TEST_CASE("crlb maps carry summary statistics and reject empty grids") {
    Grid2D sensor(25, 25, 1e-5);
    PsfStack stack = gaussian_stack(7, 3e-4, sensor, 2e-5, 0.4);
    PhotonModel model{1e4, 2};
    CHECK_THROWS_AS(crlb_map(line_channels_single(stack, model), {}, {0.1}, model, 32), config_error);
    // z rows avoid 0, where this synthetic stack's width is stationary and
    // the information matrix is legitimately singular
    std::vector<double> zg = {-1e-4, 0.5e-4, 1e-4};
    std::vector<double> pg = {0.1, 0.9, 1.7, 2.5};
    CrlbMap map = crlb_map(line_channels_single(stack, model), zg, pg, model, 32);
    auto stats = map.stats_z();
    CHECK(stats.finite_cells == 12);
    CHECK(stats.mean > 0);
}
