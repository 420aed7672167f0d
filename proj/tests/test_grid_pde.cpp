#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "odorloc/grid_pde.hpp"

using namespace odorloc;

namespace {

// Reference explicit step written directly from face fluxes with ghost cells.
std::vector<double> reference_step(const SimConfig& c, const std::vector<double>& in, bool source_on) {
    const int nx = c.nx, ny = c.ny;
    const double dx = c.dx(), dy = c.dy(), D = c.diffusion;
    auto val = [&](int i, int j) -> double {
        if (i < 0 || j < 0 || i >= nx || j >= ny) return 0.0;  // Dirichlet ghost
        return in[static_cast<std::size_t>(j) * nx + i];
    };
    auto fx = [&](int i, int j) -> double {  // flux through face between i-1 and i
        const bool wall = i == 0 || i == nx;
        if (wall && c.boundary == Boundary::NeumannZeroFlux) return 0.0;
        const double l = val(i - 1, j), r = val(i, j);
        return (c.flow.x > 0 ? c.flow.x * l : c.flow.x * r) - D * (r - l) / dx;
    };
    auto fy = [&](int i, int j) -> double {
        const bool wall = j == 0 || j == ny;
        if (wall && c.boundary == Boundary::NeumannZeroFlux) return 0.0;
        const double b = val(i, j - 1), t = val(i, j);
        return (c.flow.y > 0 ? c.flow.y * b : c.flow.y * t) - D * (t - b) / dy;
    };
    std::vector<double> out(in.size());
    for (int j = 0; j < ny; ++j) {
        for (int i = 0; i < nx; ++i) {
            const double cc = val(i, j);
            double v = cc - c.dt / dx * (fx(i + 1, j) - fx(i, j)) - c.dt / dy * (fy(i, j + 1) - fy(i, j)) -
                       c.degradation * c.dt * cc;
            out[static_cast<std::size_t>(j) * nx + i] = v;
        }
    }
    if (source_on) out[linear_index(c, nearest_cell(c, c.source_pos))] += c.emission * c.dt / c.cell_area();
    for (double& v : out) v = std::max(v, 0.0);
    return out;
}

double centroid_x(const ConcentrationField& f) {
    double m = 0.0, mx = 0.0;
    for (int j = 0; j < f.ny(); ++j)
        for (int i = 0; i < f.nx(); ++i) {
            m += f.at(i, j);
            mx += f.at(i, j) * cell_center(f.config(), {i, j}).x;
        }
    return mx / m;
}

}  // namespace

TEST_CASE("make_config defaults") {
    const SimConfig c = make_config();
    CHECK(c.domain_size.x == doctest::Approx(1e-5).epsilon(1e-15));
    CHECK(c.domain_size.y == doctest::Approx(1e-5).epsilon(1e-15));
    CHECK(c.nx == 50);
    CHECK(c.ny == 50);
    CHECK(c.diffusion == 1e-10);
    CHECK(c.flow.x == 5e-7);
    CHECK(c.flow.y == 0.0);
    CHECK(c.source_pos == Vec2{5e-6, 5e-6});
    CHECK(c.dx() == doctest::Approx(2e-7).epsilon(1e-12));
    // diffusion bound dx^2/(4D) = 1e-4 s, halved
    CHECK(stability_bound(c) == doctest::Approx(1e-4).epsilon(1e-12));
    CHECK(c.dt == doctest::Approx(5e-5).epsilon(1e-12));
    CHECK(c.degradation == 0.01);
    CHECK(c.injection_duration == 10.0);
    CHECK(c.emission == 1.0);
    CHECK(c.boundary == Boundary::DirichletZero);
}

TEST_CASE("make_config accepts pure diffusion and rejects invalid bounds") {
    ConfigOverrides o;
    o.flow = Vec2{0.0, 0.0};
    CHECK_NOTHROW(make_config(o));

    ConfigOverrides bad_dt;
    bad_dt.dt = 2e-4;
    CHECK_THROWS_WITH_AS(make_config(bad_dt), doctest::Contains("stability bound"), ConfigError);

    ConfigOverrides bad_grid;
    bad_grid.nx = 1;
    CHECK_THROWS_WITH_AS(make_config(bad_grid), doctest::Contains("Nx >= 2"), ConfigError);

    ConfigOverrides bad_d;
    bad_d.diffusion = 0.0;
    CHECK_THROWS_WITH_AS(make_config(bad_d), doctest::Contains("D > 0"), ConfigError);

    ConfigOverrides bad_src;
    bad_src.source_pos = Vec2{2e-5, 1e-6};
    CHECK_THROWS_WITH_AS(make_config(bad_src), doctest::Contains("source_pos"), ConfigError);

    ConfigOverrides neg_lambda;
    neg_lambda.degradation = -1.0;
    CHECK_THROWS_AS(make_config(neg_lambda), ConfigError);
}

TEST_CASE("config text round trip") {
    ConfigOverrides o;
    o.flow = Vec2{-2e-7, 3e-7};
    o.boundary = Boundary::NeumannZeroFlux;
    o.nx = 30;
    const SimConfig c = make_config(o);
    const SimConfig back = make_config(parse_config_text(format_config(c)));
    CHECK(back.flow == c.flow);
    CHECK(back.nx == 30);
    CHECK(back.boundary == Boundary::NeumannZeroFlux);
    CHECK(back.dt == c.dt);
    CHECK_THROWS_AS(parse_config_text("bogus=1"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("flow=1"), ConfigError);
}

TEST_CASE("step: trivial fields") {
    ConfigOverrides o;
    o.emission = 0.0;
    const SimConfig c = make_config(o);
    const ConcentrationField zero(c);
    const ConcentrationField out = step(zero, c, 0.0);
    for (double v : out.values()) CHECK(v == 0.0);

    ConfigOverrides u;
    u.emission = 0.0;
    u.flow = Vec2{0.0, 0.0};
    u.degradation = 0.0;
    u.boundary = Boundary::NeumannZeroFlux;
    const SimConfig cu = make_config(u);
    ConcentrationField uni(cu);
    for (double& v : uni.values()) v = 3.5;
    const ConcentrationField after = step(uni, cu, 0.0);
    for (double v : after.values()) CHECK(v == doctest::Approx(3.5).epsilon(1e-14));
}

TEST_CASE("step matches a flux-form reference for all boundary and flow signs") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    for (Boundary b : {Boundary::DirichletZero, Boundary::NeumannZeroFlux}) {
        for (Vec2 u : {Vec2{5e-7, 0.0}, Vec2{-4e-7, 3e-7}, Vec2{2e-7, -6e-7}}) {
            ConfigOverrides o;
            o.nx = 17;
            o.ny = 11;
            o.boundary = b;
            o.flow = u;
            o.source_pos = Vec2{3.3e-6, 6.1e-6};
            const SimConfig c = make_config(o);
            ConcentrationField f(c);
            for (double& v : f.values()) v = U(rng);
            std::vector<double> in(f.values().begin(), f.values().end());
            const ConcentrationField got = step(f, c, 0.0);
            const std::vector<double> want = reference_step(c, in, true);
            for (std::size_t k = 0; k < want.size(); ++k) CHECK(got.values()[k] == doctest::Approx(want[k]).epsilon(1e-12));
        }
    }
}

TEST_CASE("step injects only while t <= T_inj") {
    ConfigOverrides o;
    o.injection_duration = 1e-3;
    const SimConfig c = make_config(o);
    const ConcentrationField z(c);
    CHECK(step(z, c, 1e-3).max_value() > 0.0);
    CHECK(step(z, c, 2e-3).max_value() == 0.0);
}

TEST_CASE("transport operator transpose is consistent") {
    ConfigOverrides o;
    o.nx = 9;
    o.ny = 7;
    o.flow = Vec2{3e-7, -2e-7};
    const SimConfig c = make_config(o);
    const TransportOperator op(c);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    std::vector<double> x(c.cell_count()), y(c.cell_count()), ax(c.cell_count()), aty(c.cell_count());
    for (auto& v : x) v = U(rng);
    for (auto& v : y) v = U(rng);
    op.apply(x, ax);
    op.apply_transpose(y, aty);
    double l = 0.0, r = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        l += y[k] * ax[k];
        r += aty[k] * x[k];
    }
    CHECK(l == doctest::Approx(r).epsilon(1e-13));
}

TEST_CASE("negative values are clamped and counted") {
    ConfigOverrides o;
    o.nx = 10;
    o.ny = 10;
    o.flow = Vec2{0.0, 0.0};
    o.emission = 0.0;
    o.degradation = 0.5;
    o.dt = 2.5e-3;  // dx^2/(4D), exactly the diffusion bound: centre coefficient -lambda dt < 0
    const SimConfig c = make_config(o);
    ConcentrationField f(c);
    for (int j = 0; j < c.ny; ++j)
        for (int i = 0; i < c.nx; ++i) f.at(i, j) = (i + j) % 2 ? 0.0 : 1.0;
    StepStats stats;
    const ConcentrationField out = step(f, c, 0.0, &stats);
    CHECK(stats.clamped > 0);
    for (double v : out.values()) CHECK(v >= 0.0);
}

TEST_CASE("pure diffusion pulse follows the heat kernel") {
    ConfigOverrides o;
    o.flow = Vec2{0.0, 0.0};
    o.degradation = 0.0;
    o.injection_duration = 0.0;
    o.boundary = Boundary::NeumannZeroFlux;
    o.source_pos = Vec2{5.1e-6, 5.1e-6};  // centre of cell (25, 25)
    o.total_time = 0.0;
    SimConfig c = make_config(o);
    const double mass = c.emission * c.dt;
    const Vec2 src = cell_center(c, nearest_cell(c, c.source_pos));
    for (int n : {20, 60}) {
        c.total_time = n * c.dt;
        const RunResult r = run_to_time(c);
        const double t = n * c.dt;
        double num = 0.0, den = 0.0;
        for (int j = 1; j < c.ny - 1; ++j)
            for (int i = 1; i < c.nx - 1; ++i) {
                const Vec2 p = cell_center(c, {i, j});
                const double r2 = std::pow(p.x - src.x, 2) + std::pow(p.y - src.y, 2);
                const double exact = mass / (4.0 * std::numbers::pi * c.diffusion * t) * std::exp(-r2 / (4.0 * c.diffusion * t));
                num += std::pow(r.final_field.at(i, j) - exact, 2);
                den += exact * exact;
            }
        CHECK(std::sqrt(num / den) < 0.05);
    }
}

TEST_CASE("mass conservation with zero-flux walls and advection") {
    ConfigOverrides o;
    o.emission = 0.0;
    o.degradation = 0.0;
    o.boundary = Boundary::NeumannZeroFlux;
    o.flow = Vec2{5e-7, -3e-7};
    o.nx = 20;
    o.ny = 20;
    o.total_time = 0.0;
    const SimConfig c = make_config(o);
    ConcentrationField f(c);
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    for (double& v : f.values()) v = U(rng);
    double m0 = f.total_mass();
    for (int n = 0; n < 200; ++n) {
        f = step(f, c, n * c.dt);
        const double m1 = f.total_mass();
        CHECK(std::abs(m1 - m0) / m0 < 1e-10);
        m0 = m1;
    }
}

TEST_CASE("strong decay bounds total mass by the exponential oracle") {
    ConfigOverrides o;
    o.emission = 0.0;
    o.degradation = 10.0;
    o.total_time = 0.2;
    const SimConfig c = make_config(o);
    ConcentrationField init(c);
    init.at(25, 25) = 1.0;
    init.at(10, 30) = 2.0;
    const double m0 = init.total_mass();
    RunOptions opts;
    opts.initial = init;
    const RunResult r = run_to_time(c, opts);
    CHECK(r.final_field.total_mass() < m0 * std::exp(-c.degradation * c.total_time) * 1.01);
    CHECK(r.final_field.total_mass() > 0.0);
}

TEST_CASE("translation equivariance away from boundaries is exact") {
    ConfigOverrides o;
    o.flow = Vec2{0.0, 0.0};
    o.source_pos = Vec2{4.1e-6, 5.1e-6};
    o.total_time = 0.0;
    SimConfig a = make_config(o);
    a.total_time = 12 * a.dt;
    SimConfig b = a;
    b.source_pos = Vec2{4.1e-6 + 3 * a.dx(), 5.1e-6 - 2 * a.dy()};
    const auto fa = run_to_time(a).final_field;
    const auto fb = run_to_time(b).final_field;
    const CellIndex ca = nearest_cell(a, a.source_pos), cb = nearest_cell(b, b.source_pos);
    REQUIRE(cb.i == ca.i + 3);
    REQUIRE(cb.j == ca.j - 2);
    for (int j = 0; j < a.ny; ++j)
        for (int i = 0; i < a.nx; ++i) {
            const int i2 = i + 3, j2 = j - 2;
            if (i2 < 0 || j2 < 0 || i2 >= a.nx || j2 >= a.ny) continue;
            CHECK(fa.at(i, j) == fb.at(i2, j2));
        }
}

TEST_CASE("identical configs give bit-identical fields") {
    ConfigOverrides o;
    o.total_time = 0.05;
    const SimConfig c = make_config(o);
    const auto a = run_to_time(c).final_field;
    const auto b = run_to_time(c).final_field;
    for (std::size_t k = 0; k < a.values().size(); ++k) CHECK(a.values()[k] == b.values()[k]);
}

TEST_CASE("run_to_time records snapshots and probes") {
    ConfigOverrides o;
    o.total_time = 0.02;
    const SimConfig c = make_config(o);
    RunOptions opts;
    opts.snapshot_times = {0.01, 0.02};
    opts.probe_positions = {Vec2{5.1e-6, 5.1e-6}};
    opts.probe_times = {0.0, 0.01, 0.02};
    const RunResult r = run_to_time(c, opts);
    REQUIRE(r.snapshots.size() == 2);
    CHECK(r.snapshots[0].time() == doctest::Approx(0.01));
    CHECK(r.probe_readings[0][0] == 0.0);
    CHECK(r.probe_readings[0][2] == r.final_field.at(25, 25));
    CHECK(r.probe_readings[0][1] == r.snapshots[0].at(25, 25));
    CHECK(r.peak == doctest::Approx(r.final_field.max_value()));
}

TEST_CASE("forward_concentration") {
    ConfigOverrides o;
    o.nx = 12;
    o.ny = 12;
    o.total_time = 0.3;
    o.injection_duration = 0.3;
    const SimConfig c = make_config(o);
    SUBCASE("true source cell is the best candidate for a sensor on it") {
        const Vec2 sensor = cell_center(c, nearest_cell(c, c.source_pos));
        const std::vector<Vec2> sensors{sensor};
        const double self = forward_concentration(c.source_pos, sensors, c)[0];
        for (int j = 0; j < c.ny; ++j)
            for (int i = 0; i < c.nx; ++i) CHECK(forward_concentration(cell_center(c, {i, j}), sensors, c)[0] <= self);
    }
    SUBCASE("diffusion symmetry") {
        ConfigOverrides s = o;
        s.flow = Vec2{0.0, 0.0};
        s.nx = 13;
        s.ny = 13;
        s.source_pos = Vec2{5e-6, 5e-6};  // centre of cell (6, 6) on a symmetric grid
        const SimConfig cs = make_config(s);
        const Vec2 ctr = cell_center(cs, nearest_cell(cs, cs.source_pos));
        const std::vector<Vec2> sensors{{ctr.x - 2e-6, ctr.y}, {ctr.x + 2e-6, ctr.y}, {ctr.x, ctr.y - 2e-6}};
        const auto r = forward_concentration(cs.source_pos, sensors, cs);
        CHECK(r[0] == doctest::Approx(r[1]).epsilon(1e-12));
        CHECK(r[0] == doctest::Approx(r[2]).epsilon(1e-12));
        CHECK(r[0] > 0.0);
    }
    SUBCASE("downstream exceeds upstream") {
        const std::vector<Vec2> sensors{{8e-6, 5e-6}, {2e-6, 5e-6}};
        const auto r = forward_concentration(Vec2{5e-6, 5e-6}, sensors, c);
        CHECK(r[0] > r[1]);
    }
    SUBCASE("sensor outside the domain") {
        const std::vector<Vec2> sensors{{1.2e-5, 5e-6}};
        CHECK_THROWS_AS(forward_concentration(c.source_pos, sensors, c), ConfigError);
    }
}

TEST_CASE("field CSV and PGM export") {
    ConfigOverrides o;
    o.nx = 4;
    o.ny = 3;
    const SimConfig c = make_config(o);
    ConcentrationField f(c, 1.5);
    f.at(1, 2) = 2.0;
    f.at(3, 0) = 1.0;
    write_field_csv("field_rt.csv", f);
    const auto back = read_field_csv("field_rt.csv");
    CHECK(back.nx() == 4);
    CHECK(back.ny() == 3);
    CHECK(back.time() == 1.5);
    CHECK(back.at(1, 2) == 2.0);
    const auto px = pgm_pixels(f.values(), 4, 3);
    CHECK(px[0 * 4 + 1] == 255);  // row j = 2 is written first
    CHECK(px[2 * 4 + 3] == 128);
    const std::vector<double> zeros(12, 0.0);
    for (auto p : pgm_pixels(zeros, 4, 3)) CHECK(p == 0);
}
