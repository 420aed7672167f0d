#include "odorloc/estimators_nn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

namespace odorloc {

void write_training_curve(const std::string& path, std::span<const TrainingRecord> history) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out.precision(12);
    out << "epoch,data_loss,physics_loss,total,val_loss\n";
    for (const auto& r : history) {
        out << r.epoch << "," << r.data_loss << "," << r.physics_loss << "," << r.total << ",";
        if (!std::isnan(r.val_loss)) out << r.val_loss;
        out << "\n";
    }
}

namespace {

void pack(const MlpEstimator& est, std::span<const DatasetSample> samples, Eigen::MatrixXd& X, Eigen::MatrixXd& Y) {
    X.resize(static_cast<Eigen::Index>(kFeatureCount), static_cast<Eigen::Index>(samples.size()));
    Y.resize(2, static_cast<Eigen::Index>(samples.size()));
    for (std::size_t k = 0; k < samples.size(); ++k) {
        const auto f = est.scaler.normalize(samples[k].features);
        X.col(static_cast<Eigen::Index>(k)) = Eigen::Map<const Eigen::VectorXd>(f.data(), static_cast<Eigen::Index>(f.size()));
        const Vec2 l = est.scaler.normalize_offset(samples[k].label);
        Y(0, static_cast<Eigen::Index>(k)) = l.x;
        Y(1, static_cast<Eigen::Index>(k)) = l.y;
    }
}

}  // namespace

Vec2 MlpEstimator::offset(std::span<const double> features) const {
    const auto f = scaler.normalize(features);
    const Eigen::VectorXd y = forward(net, Eigen::Map<const Eigen::VectorXd>(f.data(), static_cast<Eigen::Index>(f.size())));
    return scaler.denormalize_offset({y[0], y[1]});
}

MlpTraining train_mlp(std::span<const DatasetSample> train, std::span<const DatasetSample> val, const MlpOptions& opt) {
    if (train.empty()) throw ConfigError("MLP training set is empty");
    if (opt.epochs < 1) throw ConfigError("epochs must be >= 1");
    for (const auto& s : train) {
        if (s.features.size() != kFeatureCount) throw ConfigError("MLP features must be 602 wide");
    }
    const Stopwatch sw;
    MlpTraining out;
    MlpEstimator& est = out.estimator;
    est.scaler = FeatureScaler::fit(train);
    est.sensor_pos = train.front().sensor_pos;
    std::vector<int> dims{static_cast<int>(kFeatureCount)};
    std::vector<Activation> acts;
    for (int h : opt.hidden) {
        dims.push_back(h);
        acts.push_back(Activation::ReLU);
    }
    dims.push_back(2);
    acts.push_back(Activation::Identity);
    est.net = init_net(dims, acts, opt.seed);

    Eigen::MatrixXd X, Y, Xv, Yv;
    pack(est, train, X, Y);
    if (!val.empty()) pack(est, val, Xv, Yv);

    const std::size_t n = train.size();
    const std::size_t bs = opt.batch_size == 0 ? n : std::min(opt.batch_size, n);
    std::vector<Eigen::Index> order(n);
    for (std::size_t k = 0; k < n; ++k) order[k] = static_cast<Eigen::Index>(k);
    std::mt19937_64 rng(derive_seed(opt.seed, 1));
    AdamState adam;
    adam.lr = opt.lr;
    Eigen::VectorXd params = est.net.parameters();
    Eigen::MatrixXd Xb, Yb, grad;

    for (int epoch = 1; epoch <= opt.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double acc = 0.0;
        for (std::size_t b = 0; b < n; b += bs) {
            const std::size_t m = std::min(bs, n - b);
            Xb.resize(X.rows(), static_cast<Eigen::Index>(m));
            Yb.resize(2, static_cast<Eigen::Index>(m));
            for (std::size_t k = 0; k < m; ++k) {
                Xb.col(static_cast<Eigen::Index>(k)) = X.col(order[b + k]);
                Yb.col(static_cast<Eigen::Index>(k)) = Y.col(order[b + k]);
            }
            Tape tape;
            const Eigen::MatrixXd pred = forward_batch(est.net, Xb, &tape);
            const double loss = mse_loss(pred, Yb, &grad);
            if (!std::isfinite(loss)) throw NumericalError("MLP loss is not finite at epoch " + std::to_string(epoch));
            acc += loss * static_cast<double>(m);
            adam_step(params, backward(est.net, tape, grad).flatten(), adam);
            est.net.set_parameters(params);
        }
        TrainingRecord r;
        r.epoch = epoch;
        r.data_loss = acc / static_cast<double>(n);
        r.total = r.data_loss;
        if (!val.empty()) r.val_loss = mse_loss(forward_batch(est.net, Xv), Yv);
        out.history.push_back(r);
    }
    out.seconds = sw.seconds();
    return out;
}

SourceEstimate mlp_predict(const MlpEstimator& est, const SensorTrace& trace, Vec2 wind, Vec2 truth) {
    const Stopwatch sw;
    const auto f = trace_features(trace, wind);
    SourceEstimate e;
    e.method = "MLP";
    e.estimate = trace.sensor_pos + est.offset(f);
    e.inference_s = sw.seconds();
    if (!(trace.sensor_pos == est.sensor_pos)) add_flag(e.flags, "sensor differs from training sensor");
    return score(e, truth);
}

std::vector<double> mlp_errors(const MlpEstimator& est, std::span<const DatasetSample> samples) {
    std::vector<double> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(localization_error(s.sensor_pos + est.offset(s.features), s.true_source));
    return out;
}

void save_mlp(const std::string& path, const MlpEstimator& est, const nlohmann::json& extra) {
    nlohmann::json meta = extra;
    meta["kind"] = "mlp";
    meta["conc_scale"] = est.scaler.conc_scale;
    meta["length_scale"] = est.scaler.length_scale;
    meta["velocity_scale"] = est.scaler.velocity_scale;
    meta["sensor_pos"] = {est.sensor_pos.x, est.sensor_pos.y};
    meta["trace_features"] = kTraceFeatures;
    save_checkpoint(path, est.net, meta);
}

MlpEstimator load_mlp(const std::string& path) {
    nlohmann::json meta;
    MlpEstimator est;
    est.net = load_checkpoint(path, &meta);
    try {
        if (meta.at("kind") != "mlp") throw ConfigError("'" + path + "' is not an MLP checkpoint");
        est.scaler.conc_scale = meta.at("conc_scale").get<double>();
        est.scaler.length_scale = meta.at("length_scale").get<double>();
        est.scaler.velocity_scale = meta.at("velocity_scale").get<double>();
        est.sensor_pos = {meta.at("sensor_pos")[0].get<double>(), meta.at("sensor_pos")[1].get<double>()};
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("malformed MLP checkpoint '" + path + "': " + e.what());
    }
    if (est.net.input_dim() != static_cast<int>(kFeatureCount) || est.net.output_dim() != 2) {
        throw ConfigError("MLP checkpoint must map 602 features to 2 outputs");
    }
    return est;
}

Vec2 PinnModel::source_position() const { return {source_param.x * domain_size.x, source_param.y * domain_size.y}; }

PinnPhysics make_physics(const SimConfig& cfg, double conc_scale, double width_cells) {
    if (!(conc_scale > 0.0)) throw ConfigError("concentration scale must be > 0");
    if (!(width_cells > 0.0)) throw ConfigError("source width must be > 0");
    const double lx = cfg.domain_size.x, ly = cfg.domain_size.y, D = cfg.diffusion;
    PinnPhysics p;
    p.ax = ly / lx;
    p.ay = lx / ly;
    p.px = cfg.flow.x * ly / D;
    p.py = cfg.flow.y * lx / D;
    p.k = cfg.degradation * lx * ly / D;
    p.amplitude = cfg.emission / (D * conc_scale);
    p.wx = width_cells / cfg.nx;
    p.wy = width_cells / cfg.ny;
    return p;
}

namespace {

// Residual terms for a batch of normalized points (2 x n). r receives the
// residual, dsrc (if given) d r / d source_param (2 x n).
void residual_batch(const PinnModel& m, const Eigen::MatrixXd& P, Eigen::VectorXd& r, Eigen::MatrixXd* dsrc,
                    JetTape* tape) {
    const PinnPhysics& ph = m.physics;
    const Jet j = jet_forward(m.net, P, tape);
    const Eigen::Index n = P.cols();
    r.resize(n);
    if (dsrc) dsrc->resize(2, n);
    const double norm = ph.amplitude / (2.0 * std::numbers::pi * ph.wx * ph.wy);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double dx = P(0, i) - m.source_param.x, dy = P(1, i) - m.source_param.y;
        const double g = norm * std::exp(-0.5 * (dx * dx / (ph.wx * ph.wx) + dy * dy / (ph.wy * ph.wy)));
        r[i] = ph.ax * j.d2[0](0, i) + ph.ay * j.d2[1](0, i) - ph.px * j.d1[0](0, i) - ph.py * j.d1[1](0, i) -
               ph.k * j.value(0, i) + g;
        if (dsrc) {
            (*dsrc)(0, i) = g * dx / (ph.wx * ph.wx);
            (*dsrc)(1, i) = g * dy / (ph.wy * ph.wy);
        }
    }
}

}  // namespace

double pinn_residual(const PinnModel& model, Vec2 point, Vec2* d_source) {
    Eigen::MatrixXd P(2, 1);
    P << point.x, point.y;
    Eigen::VectorXd r;
    Eigen::MatrixXd ds;
    residual_batch(model, P, r, d_source ? &ds : nullptr, nullptr);
    if (d_source) *d_source = {ds(0, 0), ds(1, 0)};
    return r[0];
}

double pinn_residual(const PinnModel& model, Vec2 point) { return pinn_residual(model, point, nullptr); }

namespace {

struct PinnData {
    Eigen::MatrixXd points;  // 2 x n, normalized sensor positions
    Eigen::MatrixXd values;  // 1 x n, normalized readings
};

PinnData collect_data(std::span<const SensorTrace> traces, const SimConfig& cfg, double t_max, double& conc_scale) {
    std::vector<std::pair<Vec2, double>> obs;
    for (const auto& tr : traces) {
        if (!inside_domain(cfg, tr.sensor_pos)) throw ConfigError("sensor lies outside the domain");
        for (std::size_t k = 0; k < tr.times.size(); ++k) {
            if (tr.times[k] > 0.0 && tr.times[k] <= t_max) obs.emplace_back(tr.sensor_pos, tr.readings[k]);
        }
    }
    if (obs.empty()) throw ConfigError("no readings inside the PINN data window (0, t_max]");
    conc_scale = 0.0;
    for (const auto& o : obs) conc_scale = std::max(conc_scale, std::abs(o.second));
    if (!(conc_scale > 0.0)) throw ConfigError("all PINN readings are zero");
    PinnData d;
    d.points.resize(2, static_cast<Eigen::Index>(obs.size()));
    d.values.resize(1, static_cast<Eigen::Index>(obs.size()));
    for (std::size_t k = 0; k < obs.size(); ++k) {
        d.points(0, static_cast<Eigen::Index>(k)) = obs[k].first.x / cfg.domain_size.x;
        d.points(1, static_cast<Eigen::Index>(k)) = obs[k].first.y / cfg.domain_size.y;
        d.values(0, static_cast<Eigen::Index>(k)) = obs[k].second / conc_scale;
    }
    return d;
}

struct RunOutcome {
    PinnModel model;
    std::vector<TrainingRecord> history;
    double final_loss = 0.0;
    bool boundary_stuck = false;
};

RunOutcome train_once(const PinnData& data, PinnModel model, const PinnOptions& opt, Vec2 start, std::uint64_t seed) {
    model.source_param = start;
    std::vector<int> dims{2};
    std::vector<Activation> acts;
    for (int h : opt.hidden) {
        dims.push_back(h);
        acts.push_back(Activation::Tanh);
    }
    dims.push_back(1);
    acts.push_back(Activation::Identity);
    model.net = init_net(dims, acts, seed);

    std::mt19937_64 rng(derive_seed(seed, 7));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int> side(0, 3);
    const std::size_t nc = opt.collocation, nb = opt.boundary_points;
    Eigen::MatrixXd C(2, static_cast<Eigen::Index>(nc)), B(2, static_cast<Eigen::Index>(nb));

    const std::size_t np = model.net.parameter_count();
    Eigen::VectorXd params(static_cast<Eigen::Index>(np + 2));
    AdamState adam;
    adam.lr = opt.lr;
    const int tail_start = opt.epochs - std::max(1, opt.epochs / 4);
    int pinned = 0;

    RunOutcome out;
    for (int epoch = 1; epoch <= opt.epochs; ++epoch) {
        for (Eigen::Index i = 0; i < C.cols(); ++i) {
            C(0, i) = unit(rng);
            C(1, i) = unit(rng);
        }
        for (Eigen::Index i = 0; i < B.cols(); ++i) {
            const double t = unit(rng);
            switch (side(rng)) {
                case 0: B.col(i) << 0.0, t; break;
                case 1: B.col(i) << 1.0, t; break;
                case 2: B.col(i) << t, 0.0; break;
                default: B.col(i) << t, 1.0; break;
            }
        }

        // physics
        JetTape jt;
        Eigen::VectorXd r;
        Eigen::MatrixXd dsrc;
        residual_batch(model, C, r, &dsrc, &jt);
        const double n = static_cast<double>(nc);
        const double l_res = r.squaredNorm() / n;
        const Eigen::RowVectorXd w = (2.0 / n) * r.transpose();
        const PinnPhysics& ph = model.physics;
        Jet up;
        up.value = -ph.k * w;
        up.d1 = {-ph.px * w, -ph.py * w};
        up.d2 = {ph.ax * w, ph.ay * w};
        const Eigen::VectorXd g_res = jet_backward(model.net, jt, up).flatten();
        const Eigen::Vector2d g_src_res = dsrc * w.transpose();

        // boundary
        Tape tb;
        const Eigen::MatrixXd cb = forward_batch(model.net, B, &tb);
        Eigen::MatrixXd gb;
        const double l_bc = mse_loss(cb, Eigen::MatrixXd::Zero(1, cb.cols()), &gb);
        const Eigen::VectorXd g_bc = backward(model.net, tb, gb).flatten();

        // data
        Tape td;
        const Eigen::MatrixXd cd = forward_batch(model.net, data.points, &td);
        Eigen::MatrixXd gd;
        const double l_data = mse_loss(cd, data.values, &gd);
        const Eigen::VectorXd g_data = backward(model.net, td, gd).flatten();

        const double l_phy = l_res + l_bc;
        const double total = opt.lambda_mse * l_data + opt.lambda_phy * l_phy;
        if (!std::isfinite(total)) throw NumericalError("PINN loss diverged at epoch " + std::to_string(epoch));

        Eigen::VectorXd grad(params.size());
        grad.head(static_cast<Eigen::Index>(np)) = opt.lambda_mse * g_data + opt.lambda_phy * (g_res + g_bc);
        grad.tail(2) = opt.lambda_phy * g_src_res;
        params.head(static_cast<Eigen::Index>(np)) = model.net.parameters();
        params.tail(2) << model.source_param.x, model.source_param.y;
        adam_step(params, grad, adam);
        model.net.set_parameters(params.head(static_cast<Eigen::Index>(np)));
        model.source_param = {std::clamp(params[params.size() - 2], 0.0, 1.0), std::clamp(params[params.size() - 1], 0.0, 1.0)};

        const bool at_wall = model.source_param.x == 0.0 || model.source_param.x == 1.0 || model.source_param.y == 0.0 ||
                             model.source_param.y == 1.0;
        if (epoch > tail_start && at_wall) ++pinned;
        out.history.push_back({epoch, l_data, l_phy, total});
        out.final_loss = total;
    }
    const int tail = opt.epochs - tail_start;
    out.boundary_stuck = pinned > tail / 5;
    out.model = std::move(model);
    return out;
}

}  // namespace

PinnTraining train_pinn(std::span<const SensorTrace> traces, const SimConfig& cfg, Vec2 truth, const PinnOptions& opt) {
    if (traces.empty()) throw ConfigError("PINN needs at least one sensor trace");
    if (!(opt.lambda_mse >= 0.0) || !(opt.lambda_phy >= 0.0) || !(opt.lambda_mse + opt.lambda_phy > 0.0)) {
        throw ConfigError("PINN loss weights must be >= 0 and not both zero");
    }
    if (opt.epochs < 1 || opt.collocation < 1) throw ConfigError("PINN needs epochs >= 1 and collocation points");
    const Stopwatch sw;
    double cs = 1.0;
    const PinnData data = collect_data(traces, cfg, opt.t_max < 0.0 ? cfg.injection_duration : opt.t_max, cs);

    PinnModel base;
    base.lambda_mse = opt.lambda_mse;
    base.lambda_phy = opt.lambda_phy;
    base.physics = make_physics(cfg, cs, opt.width_cells);
    base.domain_size = cfg.domain_size;
    base.conc_scale = cs;

    std::vector<Vec2> starts{opt.init};
    if (opt.multi_start) {
        for (Vec2 c : {Vec2{0.25, 0.25}, Vec2{0.75, 0.25}, Vec2{0.25, 0.75}, Vec2{0.75, 0.75}}) starts.push_back(c);
    }
    RunOutcome best;
    bool have = false;
    for (std::size_t k = 0; k < starts.size(); ++k) {
        RunOutcome r = train_once(data, base, opt, starts[k], k == 0 ? opt.seed : derive_seed(opt.seed, k));
        if (!have || r.final_loss < best.final_loss) {
            best = std::move(r);
            have = true;
        }
    }

    PinnTraining out;
    out.model = std::move(best.model);
    out.history = std::move(best.history);
    out.final_loss = best.final_loss;
    out.boundary_stuck = best.boundary_stuck;
    out.estimate.method = "PINN";
    out.estimate.estimate = out.model.source_position();
    // the source is a trained parameter: the fit is the inference
    out.estimate.inference_s = sw.seconds();
    if (out.boundary_stuck) add_flag(out.estimate.flags, "boundary-stuck");
    if (opt.multi_start) add_flag(out.estimate.flags, "multi-start");
    score(out.estimate, truth);
    return out;
}

void save_pinn(const std::string& path, const PinnModel& model) {
    nlohmann::json meta;
    meta["kind"] = "pinn";
    meta["source_param"] = {model.source_param.x, model.source_param.y};
    meta["lambda_mse"] = model.lambda_mse;
    meta["lambda_phy"] = model.lambda_phy;
    meta["domain_size"] = {model.domain_size.x, model.domain_size.y};
    meta["conc_scale"] = model.conc_scale;
    const PinnPhysics& p = model.physics;
    meta["physics"] = {{"ax", p.ax}, {"ay", p.ay}, {"px", p.px}, {"py", p.py}, {"k", p.k},
                       {"amplitude", p.amplitude}, {"wx", p.wx}, {"wy", p.wy}};
    save_checkpoint(path, model.net, meta);
}

PinnModel load_pinn(const std::string& path) {
    nlohmann::json meta;
    PinnModel m;
    m.net = load_checkpoint(path, &meta);
    try {
        if (meta.at("kind") != "pinn") throw ConfigError("'" + path + "' is not a PINN checkpoint");
        m.source_param = {meta.at("source_param")[0].get<double>(), meta.at("source_param")[1].get<double>()};
        m.lambda_mse = meta.at("lambda_mse").get<double>();
        m.lambda_phy = meta.at("lambda_phy").get<double>();
        m.domain_size = {meta.at("domain_size")[0].get<double>(), meta.at("domain_size")[1].get<double>()};
        m.conc_scale = meta.at("conc_scale").get<double>();
        const auto& p = meta.at("physics");
        m.physics = {p.at("ax").get<double>(), p.at("ay").get<double>(), p.at("px").get<double>(), p.at("py").get<double>(),
                     p.at("k").get<double>(), p.at("amplitude").get<double>(), p.at("wx").get<double>(), p.at("wy").get<double>()};
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("malformed PINN checkpoint '" + path + "': " + e.what());
    }
    return m;
}

}  // namespace odorloc
