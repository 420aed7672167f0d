#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "odorloc/estimators_nn.hpp"

using namespace odorloc;

namespace {

std::string tmp(const std::string& name) { return (std::filesystem::temp_directory_path() / name).string(); }

// Random 602-wide samples; label from `label_of(features, rng)`.
template <class F>
std::vector<DatasetSample> synthetic(std::size_t n, std::uint64_t seed, F label_of) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<DatasetSample> out(n);
    for (auto& s : out) {
        s.features.resize(kFeatureCount);
        for (std::size_t k = 0; k < kTraceFeatures; ++k) s.features[k] = 1e9 * u(rng);
        s.features[kTraceFeatures] = 1e-6 * u(rng);
        s.features[kTraceFeatures + 1] = 0.0;
        s.sensor_pos = {2e-6, 2e-6};
        s.label = label_of(s.features, rng);
        s.true_source = s.sensor_pos + s.label;
    }
    return out;
}

// Traces are a random level times a fixed decay profile.
template <class F>
std::vector<DatasetSample> profile_data(std::size_t n, std::uint64_t seed, F label_of) {
    auto data = synthetic(n, seed, [](const auto&, auto&) { return Vec2{}; });
    std::mt19937_64 rng(seed + 100);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& s : data) {
        const double v = u(rng);
        for (std::size_t k = 0; k < kTraceFeatures; ++k) s.features[k] = 1e9 * v * std::exp(-0.01 * static_cast<double>(k));
        s.label = label_of(v, s.features[kTraceFeatures]);
        s.true_source = s.sensor_pos + s.label;
    }
    return data;
}

SimConfig tiny_config() {
    ConfigOverrides o;
    o.domain_size = Vec2{2.4e-6, 2.4e-6};
    o.nx = 12;
    o.ny = 12;
    o.flow = Vec2{0.0, 0.0};
    o.source_pos = Vec2{0.9e-6, 1.5e-6};
    o.injection_duration = 0.3;
    o.total_time = 0.5;
    return make_config(o);
}

std::vector<SensorTrace> tiny_traces(const SimConfig& cfg) {
    const std::vector<Vec2> sensors{{0.6e-6, 0.6e-6}, {1.8e-6, 0.9e-6}, {1.2e-6, 1.9e-6}};
    return observe_all(cfg, sensors, uniform_times(cfg.total_time, 40), 3);
}

PinnOptions quick(int epochs) {
    PinnOptions o;
    o.hidden = {12, 12};
    o.collocation = 128;
    o.boundary_points = 32;
    o.epochs = epochs;
    o.seed = 5;
    return o;
}

PinnModel random_model(const SimConfig& cfg, double cs, std::uint64_t seed) {
    PinnModel m;
    m.net = init_net({2, 6, 5, 1}, {Activation::Tanh, Activation::Tanh, Activation::Identity}, seed);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 0.4);
    for (auto& l : m.net.layers) l.b = l.b.unaryExpr([&](double) { return n(rng); });
    m.physics = make_physics(cfg, cs, 1.5);
    m.domain_size = cfg.domain_size;
    m.conc_scale = cs;
    m.source_param = {0.42, 0.57};
    return m;
}

}  // namespace

TEST_CASE("MLP learns a constant offset") {
    const Vec2 c{1e-6, -2e-6};
    const auto data = profile_data(120, 1, [&](double, double) { return c; });
    MlpOptions o;
    o.hidden = {16};
    o.epochs = 200;
    o.batch_size = 16;
    o.lr = 3e-3;
    const MlpTraining t = train_mlp({data.data(), 100}, {data.data() + 100, 20}, o);
    REQUIRE(t.history.size() == 200);
    CHECK(t.history.back().val_loss < 1e-6);
    CHECK(t.history.back().physics_loss == 0.0);
    CHECK(t.seconds > 0.0);
    for (double e : mlp_errors(t.estimator, {data.data() + 100, 20})) CHECK(e < 2e-9);
}

TEST_CASE("MLP on labels unrelated to the features does not beat the label variance") {
    const auto data = synthetic(300, 2, [](const auto&, auto& rng) {
        std::uniform_real_distribution<double> u(-2e-6, 2e-6);
        return Vec2{u(rng), u(rng)};
    });
    MlpOptions o;
    o.hidden = {32, 16};
    o.epochs = 40;
    o.batch_size = 32;
    const MlpTraining t = train_mlp({data.data(), 200}, {data.data() + 200, 100}, o);
    const double var = 16.0 / 12.0;  // U(-2, 2) in um
    CHECK(t.history.back().val_loss >= 0.5 * var);
}

TEST_CASE("MLP fits a learnable offset and validation improves") {
    const auto data = profile_data(400, 3, [](double v, double wind) {
        return Vec2{2e-6 * (v - 0.5), 4e-6 * (wind / 1e-6 - 0.5)};
    });
    MlpOptions o;
    o.hidden = {32};
    o.epochs = 150;
    o.seed = 4;
    const MlpTraining t = train_mlp({data.data(), 320}, {data.data() + 320, 80}, o);
    CHECK(t.history.back().val_loss < 0.2 * t.history.front().val_loss);
}

TEST_CASE("MLP training is deterministic and validates its input") {
    const auto data = synthetic(40, 5, [](const auto&, auto&) { return Vec2{1e-7, 0.0}; });
    MlpOptions o;
    o.hidden = {8};
    o.epochs = 3;
    const auto a = train_mlp(data, {}, o);
    const auto b = train_mlp(data, {}, o);
    CHECK(a.estimator.net.parameters() == b.estimator.net.parameters());
    CHECK(std::isnan(a.history.back().val_loss));
    CHECK_THROWS_AS(train_mlp({}, {}, o), ConfigError);
    auto bad = data;
    bad[3].features.pop_back();
    CHECK_THROWS_AS(train_mlp(bad, {}, o), ConfigError);
    bad = data;
    bad[0].features[0] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(train_mlp(bad, {}, o), NumericalError);
}

TEST_CASE("mlp_predict is the sensor position plus the offset") {
    const auto data = synthetic(50, 6, [](const auto&, auto&) { return Vec2{5e-7, 5e-7}; });
    MlpOptions o;
    o.hidden = {8};
    o.epochs = 5;
    const MlpEstimator est = train_mlp(data, {}, o).estimator;

    SensorTrace tr;
    tr.sensor_pos = {2e-6, 2e-6};
    tr.times = uniform_times(27.5, 600);
    tr.readings.assign(data[0].features.begin(), data[0].features.begin() + kTraceFeatures);
    const Vec2 wind{data[0].features[kTraceFeatures], 0.0};
    const Vec2 off = est.offset(data[0].features);

    const SourceEstimate e = mlp_predict(est, tr, wind, {5e-6, 5e-6});
    CHECK(e.method == "MLP");
    CHECK(localization_error(e.estimate, tr.sensor_pos + off) < 1e-18);
    CHECK(e.inference_s > 0.0);
    CHECK(e.flags.empty());

    tr.sensor_pos = {3e-6, 1e-6};
    const SourceEstimate moved = mlp_predict(est, tr, wind, {5e-6, 5e-6});
    CHECK(localization_error(moved.estimate - e.estimate, Vec2{1e-6, -1e-6}) < 1e-18);
    CHECK(moved.flags.find("sensor") != std::string::npos);
}

TEST_CASE("MLP checkpoint and training curve round trip") {
    const auto data = synthetic(30, 7, [](const auto&, auto&) { return Vec2{1e-7, 2e-7}; });
    MlpOptions o;
    o.hidden = {8, 4};
    o.epochs = 4;
    const MlpTraining t = train_mlp(data, {data.data(), 10}, o);
    const auto path = tmp("odorloc_mlp.json");
    save_mlp(path, t.estimator);
    const MlpEstimator back = load_mlp(path);
    CHECK(back.net.parameters() == t.estimator.net.parameters());
    CHECK(back.scaler.conc_scale == t.estimator.scaler.conc_scale);
    CHECK(back.sensor_pos == t.estimator.sensor_pos);
    CHECK(localization_error(back.offset(data[3].features), t.estimator.offset(data[3].features)) == 0.0);
    CHECK_THROWS_AS(load_pinn(path), ConfigError);
    std::filesystem::remove(path);

    const auto curve = tmp("odorloc_curve.csv");
    write_training_curve(curve, t.history);
    std::ifstream in(curve);
    std::string line;
    std::getline(in, line);
    CHECK(line == "epoch,data_loss,physics_loss,total,val_loss");
    int rows = 0;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 4);
    std::filesystem::remove(curve);
}

TEST_CASE("physics coefficients") {
    ConfigOverrides o;
    o.domain_size = Vec2{1e-5, 5e-6};
    o.ny = 25;
    const SimConfig cfg = make_config(o);
    const PinnPhysics p = make_physics(cfg, 2.0);
    CHECK(p.ax == doctest::Approx(0.5));
    CHECK(p.ay == doctest::Approx(2.0));
    CHECK(p.px == doctest::Approx(5e-7 * 5e-6 / 1e-10));
    CHECK(p.py == 0.0);
    CHECK(p.k == doctest::Approx(0.01 * 5e-11 / 1e-10));
    CHECK(p.amplitude == doctest::Approx(1.0 / (1e-10 * 2.0)));
    CHECK(p.wx == doctest::Approx(1.0 / 50));
    CHECK(p.wy == doctest::Approx(1.0 / 25));
    CHECK_THROWS_AS(make_physics(cfg, 0.0), ConfigError);
}

TEST_CASE("linear field residual is the advection term") {
    SimConfig cfg = make_config();
    cfg.emission = 0.0;
    cfg.degradation = 0.0;
    cfg.flow = {3e-7, -2e-7};
    PinnModel m;
    m.net = init_net({2, 1}, {Activation::Identity}, 1);
    m.net.layers[0].W << 0.7, -1.3;
    m.net.layers[0].b << 0.2;
    m.physics = make_physics(cfg, 1.0);
    const double expect = -m.physics.px * 0.7 - m.physics.py * -1.3;
    for (Vec2 p : {Vec2{0.1, 0.2}, Vec2{0.5, 0.5}, Vec2{0.93, 0.01}}) {
        CHECK(std::abs(pinn_residual(m, p) - expect) < 1e-10 * std::abs(expect));
    }
    m.net.layers[0].W.setZero();
    m.net.layers[0].b.setZero();
    CHECK(pinn_residual(m, {0.3, 0.6}) == 0.0);
}

TEST_CASE("scaled residual equals the dimensional residual") {
    const SimConfig cfg = [] {
        ConfigOverrides o;
        o.domain_size = Vec2{1e-5, 6e-6};
        o.ny = 30;
        o.flow = Vec2{4e-7, 1e-7};
        o.degradation = 0.3;
        return make_config(o);
    }();
    const double cs = 3e9;
    const PinnModel m = random_model(cfg, cs, 11);
    const double lx = cfg.domain_size.x, ly = cfg.domain_size.y;
    auto C = [&](double X, double Y) { return cs * forward(m.net, Eigen::Vector2d(X / lx, Y / ly))[0]; };
    const Vec2 s = m.source_position();
    const double sx = m.physics.wx * lx, sy = m.physics.wy * ly;
    for (Vec2 p : {Vec2{0.3, 0.7}, Vec2{0.45, 0.55}, Vec2{0.8, 0.2}}) {
        const double X = p.x * lx, Y = p.y * ly, hx = 1e-4 * lx, hy = 1e-4 * ly;
        const double c0 = C(X, Y);
        const double cxx = (C(X + hx, Y) - 2 * c0 + C(X - hx, Y)) / (hx * hx);
        const double cyy = (C(X, Y + hy) - 2 * c0 + C(X, Y - hy)) / (hy * hy);
        const double cx = (C(X + hx, Y) - C(X - hx, Y)) / (2 * hx);
        const double cy = (C(X, Y + hy) - C(X, Y - hy)) / (2 * hy);
        const double G = std::exp(-0.5 * (std::pow((X - s.x) / sx, 2) + std::pow((Y - s.y) / sy, 2))) /
                         (2 * std::numbers::pi * sx * sy);
        const double dim = cfg.diffusion * (cxx + cyy) - cfg.flow.x * cx - cfg.flow.y * cy - cfg.degradation * c0 +
                           cfg.emission * G;
        const double scaled = dim * lx * ly / (cfg.diffusion * cs);
        const double r = pinn_residual(m, p);
        CHECK(std::abs(r - scaled) < 1e-4 * std::max(1.0, std::abs(r)));
    }
}

TEST_CASE("source gradient of the residual matches finite differences") {
    const SimConfig cfg = make_config();
    PinnModel m = random_model(cfg, 1e9, 12);
    for (Vec2 p : {Vec2{0.43, 0.58}, Vec2{0.40, 0.55}, Vec2{0.45, 0.6}}) {
        Vec2 g;
        pinn_residual(m, p, &g);
        const double h = 1e-7;
        const Vec2 s0 = m.source_param;
        m.source_param = s0 + Vec2{h, 0};
        const double rxp = pinn_residual(m, p);
        m.source_param = s0 - Vec2{h, 0};
        const double rxm = pinn_residual(m, p);
        m.source_param = s0 + Vec2{0, h};
        const double ryp = pinn_residual(m, p);
        m.source_param = s0 - Vec2{0, h};
        const double rym = pinn_residual(m, p);
        m.source_param = s0;
        const double fx = (rxp - rxm) / (2 * h), fy = (ryp - rym) / (2 * h);
        const double scale = std::max({std::abs(g.x), std::abs(g.y), 1e-6});
        CHECK(std::abs(g.x - fx) < 1e-4 * scale);
        CHECK(std::abs(g.y - fy) < 1e-4 * scale);
    }
    Vec2 g;
    pinn_residual(m, {0.5, 0.5}, &g);
    CHECK(norm(g) > 0.0);
}

TEST_CASE("residual is linear in the last layer") {
    const SimConfig cfg = make_config();
    PinnModel a = random_model(cfg, 1e9, 13);
    a.physics.amplitude = 0.0;
    PinnModel b = a, sum = a;
    b.net.layers.back().W *= -0.3;
    b.net.layers.back().b *= -0.3;
    sum.net.layers.back().W = a.net.layers.back().W + b.net.layers.back().W;
    sum.net.layers.back().b = a.net.layers.back().b + b.net.layers.back().b;
    const Vec2 p{0.2, 0.9};
    const double ra = pinn_residual(a, p), rb = pinn_residual(b, p);
    CHECK(std::abs(pinn_residual(sum, p) - (ra + rb)) < 1e-10 * std::max(1.0, std::abs(ra)));
}

TEST_CASE("PINN training runs, is deterministic and flags nothing on a clean start") {
    const SimConfig cfg = tiny_config();
    const auto tr = tiny_traces(cfg);
    const PinnTraining a = train_pinn(tr, cfg, cfg.source_pos, quick(30));
    const PinnTraining b = train_pinn(tr, cfg, cfg.source_pos, quick(30));
    CHECK(a.estimate.method == "PINN");
    CHECK(a.history.size() == 30);
    CHECK(a.estimate.estimate == b.estimate.estimate);
    CHECK(a.model.net.parameters() == b.model.net.parameters());
    CHECK(a.final_loss == a.history.back().total);
    CHECK(a.model.source_param.x >= 0.0);
    CHECK(a.model.source_param.x <= 1.0);
    CHECK(a.estimate.error_m == doctest::Approx(localization_error(a.estimate.estimate, cfg.source_pos)));
    CHECK(a.estimate.inference_s > 0.0);
    CHECK(!a.boundary_stuck);
    // the source moved off its start
    CHECK(!(a.model.source_param == Vec2{0.5, 0.5}));
}

TEST_CASE("without the physics term the source does not move") {
    const SimConfig cfg = tiny_config();
    const auto tr = tiny_traces(cfg);
    PinnOptions o = quick(20);
    o.lambda_phy = 0.0;
    o.init = {0.3, 0.8};
    const PinnTraining t = train_pinn(tr, cfg, cfg.source_pos, o);
    CHECK(t.model.source_param == Vec2{0.3, 0.8});
    CHECK(t.history.back().total == doctest::Approx(t.history.back().data_loss));

    o.init = {0.0, 0.4};
    CHECK(train_pinn(tr, cfg, cfg.source_pos, o).boundary_stuck);
}

TEST_CASE("doubling both loss weights barely changes the estimate") {
    const SimConfig cfg = tiny_config();
    const auto tr = tiny_traces(cfg);
    PinnOptions o = quick(60);
    const PinnTraining a = train_pinn(tr, cfg, cfg.source_pos, o);
    o.lambda_mse *= 2;
    o.lambda_phy *= 2;
    const PinnTraining b = train_pinn(tr, cfg, cfg.source_pos, o);
    CHECK(localization_error(a.estimate.estimate, b.estimate.estimate) < 0.2e-6);
}

TEST_CASE("PINN multi-start keeps the lowest final loss") {
    const SimConfig cfg = tiny_config();
    const auto tr = tiny_traces(cfg);
    PinnOptions o = quick(15);
    const double single = train_pinn(tr, cfg, cfg.source_pos, o).final_loss;
    o.multi_start = true;
    const PinnTraining m = train_pinn(tr, cfg, cfg.source_pos, o);
    CHECK(m.final_loss <= single);
    CHECK(m.estimate.flags.find("multi-start") != std::string::npos);
}

TEST_CASE("PINN input errors") {
    const SimConfig cfg = tiny_config();
    auto tr = tiny_traces(cfg);
    PinnOptions o = quick(5);
    CHECK_THROWS_AS(train_pinn({}, cfg, cfg.source_pos, o), ConfigError);
    o.t_max = 1e-6;
    CHECK_THROWS_AS(train_pinn(tr, cfg, cfg.source_pos, o), ConfigError);
    o.t_max = -1.0;
    o.lambda_mse = 0.0;
    o.lambda_phy = 0.0;
    CHECK_THROWS_AS(train_pinn(tr, cfg, cfg.source_pos, o), ConfigError);
    o = quick(5);
    tr[1].readings[3] = std::nan("");
    try {
        train_pinn(tr, cfg, cfg.source_pos, o);
        FAIL("expected a numerical failure");
    } catch (const NumericalError& e) {
        CHECK(std::string(e.what()).find("epoch 1") != std::string::npos);
    }
}

TEST_CASE("PINN checkpoint round trip") {
    const SimConfig cfg = make_config();
    const PinnModel m = random_model(cfg, 2e9, 14);
    const auto path = tmp("odorloc_pinn.json");
    save_pinn(path, m);
    const PinnModel back = load_pinn(path);
    CHECK(back.net.parameters() == m.net.parameters());
    CHECK(back.source_param == m.source_param);
    CHECK(back.source_position() == m.source_position());
    CHECK(pinn_residual(back, {0.3, 0.3}) == pinn_residual(m, {0.3, 0.3}));
    CHECK_THROWS_AS(load_mlp(path), ConfigError);
    std::filesystem::remove(path);
}
