#pragma once

// Finite-difference checks for the network engine, shared by the unit and
// acceptance tests.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "odorloc/nn_engine.hpp"

namespace gradcheck {

using namespace odorloc;

struct Report {
    double worst_param = 0.0;   // parameter gradients, reverse mode
    double worst_jet = 0.0;     // parameter gradients through input jets
    double worst_d1 = 0.0;      // first input derivatives
    double worst_d2 = 0.0;      // pure second input derivatives
    double worst_dinput = 0.0;  // reverse-mode input gradient
    int checked = 0;
    int architectures = 0;  // of the three estimator networks
};

// Relative mismatch with a floor at the rounding level of a central
// difference of a quantity of size `scale`.
inline double rel_err(double a, double b, double scale) {
    const double denom = std::max({std::abs(a), std::abs(b), 1e-7 * scale});
    return std::abs(a - b) / denom;
}

// True when every pre-activation of a ReLU layer is further than `margin`
// from the kink, so finite differences do not straddle it.
inline bool away_from_kinks(const DenseNet& net, const Eigen::MatrixXd& X, double margin) {
    Tape tape;
    forward_batch(net, X, &tape);
    for (std::size_t k = 0; k < net.layers.size(); ++k) {
        if (net.layers[k].act != Activation::ReLU) continue;
        if ((tape.pre[k].array().abs() < margin).any()) return false;
    }
    return true;
}

inline bool twice_differentiable(const DenseNet& net) {
    return std::none_of(net.layers.begin(), net.layers.end(), [](const DenseLayer& l) { return l.act == Activation::ReLU; });
}

inline DenseNet random_net(std::mt19937_64& rng, std::uint64_t seed) {
    std::uniform_int_distribution<int> depth(1, 4), width(1, 8), act(0, 2);
    const int L = depth(rng);
    std::vector<int> dims{width(rng)};
    std::vector<Activation> acts;
    for (int k = 0; k < L; ++k) {
        dims.push_back(width(rng));
        acts.push_back(k + 1 == L ? Activation::Identity : static_cast<Activation>(act(rng)));
    }
    DenseNet net = init_net(dims, acts, seed);
    std::normal_distribution<double> n(0.0, 0.3);
    for (auto& l : net.layers)
        for (Eigen::Index i = 0; i < l.b.size(); ++i) l.b[i] = n(rng);
    return net;
}

// Fourth-order central difference. The plain two-point one leaves an h^2
// third-derivative term that reaches 1e-5 relative on small tanh gradients.
template <class F>
auto central(F&& f, double h) {
    using T = decltype(f(h));  // evaluated here: Eigen expressions would dangle
    const T r = (8.0 * (f(h) - f(-h)) - (f(2 * h) - f(-2 * h))) / (12.0 * h);
    return r;
}

// Checks up to `max_params` randomly chosen parameters of `net` on a batch X.
inline void check_net(DenseNet net, const Eigen::MatrixXd& X, std::mt19937_64& rng, int max_params, Report& rep) {
    const double h = 1e-4;
    std::normal_distribution<double> n(0.0, 1.0);
    const Eigen::MatrixXd U = Eigen::MatrixXd::NullaryExpr(net.output_dim(), X.cols(), [&] { return n(rng); });

    auto loss = [&](const DenseNet& m) { return (U.array() * forward_batch(m, X).array()).sum(); };

    Tape tape;
    forward_batch(net, X, &tape);
    const Gradients g = backward(net, tape, U);
    const Eigen::VectorXd flat = g.flatten();
    const Eigen::VectorXd p0 = net.parameters();
    const double scale = std::max(1.0, std::abs(loss(net)));

    std::vector<Eigen::Index> idx(static_cast<std::size_t>(p0.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = static_cast<Eigen::Index>(k);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min<std::size_t>(idx.size(), static_cast<std::size_t>(max_params)));

    DenseNet m = net;
    auto shifted = [&](Eigen::Index i, double d) {
        Eigen::VectorXd p = p0;
        p[i] += d;
        m.set_parameters(p);
        return m;
    };
    for (Eigen::Index i : idx) {
        const double fd = central([&](double d) { return loss(shifted(i, d)); }, h);
        rep.worst_param = std::max(rep.worst_param, rel_err(flat[i], fd, scale));
    }
    for (Eigen::Index r = 0; r < X.rows(); ++r) {
        // perturb whole row: sum of per-sample input gradients
        const double fd = central(
            [&](double d) {
                Eigen::MatrixXd Xd = X;
                Xd.row(r).array() += d;
                return (U.array() * forward_batch(net, Xd).array()).sum();
            },
            h);
        rep.worst_dinput = std::max(rep.worst_dinput, rel_err(g.dinput.row(r).sum(), fd, scale));
    }

    if (twice_differentiable(net)) {
        // input derivatives at the first sample
        const Eigen::VectorXd x = X.col(0);
        const InputDerivatives d = input_derivatives(net, x);
        const double dscale = std::max(1.0, d.value.cwiseAbs().maxCoeff());
        for (Eigen::Index k = 0; k < x.size(); ++k) {
            auto at = [&](double d) {
                Eigen::VectorXd xd = x;
                xd[k] += d;
                return xd;
            };
            const Eigen::VectorXd fd1 = central([&](double d) -> Eigen::VectorXd { return forward(net, at(d)); }, h);
            const Eigen::VectorXd fd2 =
                central([&](double d) -> Eigen::VectorXd { return input_derivatives(net, at(d)).gradient.col(k); }, h);
            for (Eigen::Index o = 0; o < fd1.size(); ++o) {
                rep.worst_d1 = std::max(rep.worst_d1, rel_err(d.gradient(o, k), fd1[o], dscale));
                rep.worst_d2 = std::max(rep.worst_d2, rel_err(d.hess_diag(o, k), fd2[o], dscale));
            }
        }

        // parameter gradients through the jet
        Jet G;
        G.value = U;
        for (Eigen::Index k = 0; k < X.rows(); ++k) {
            G.d1.push_back(Eigen::MatrixXd::NullaryExpr(U.rows(), U.cols(), [&] { return n(rng); }));
            G.d2.push_back(Eigen::MatrixXd::NullaryExpr(U.rows(), U.cols(), [&] { return n(rng); }));
        }
        auto jloss = [&](const DenseNet& mm) {
            const Jet j = jet_forward(mm, X);
            double s = (G.value.array() * j.value.array()).sum();
            for (std::size_t k = 0; k < j.d1.size(); ++k)
                s += (G.d1[k].array() * j.d1[k].array()).sum() + (G.d2[k].array() * j.d2[k].array()).sum();
            return s;
        };
        JetTape jt;
        jet_forward(net, X, &jt);
        const Eigen::VectorXd jg = jet_backward(net, jt, G).flatten();
        const double jscale = std::max(1.0, std::abs(jloss(net)));
        for (Eigen::Index i : idx) {
            const double fd = central([&](double d) { return jloss(shifted(i, d)); }, h);
            rep.worst_jet = std::max(rep.worst_jet, rel_err(jg[i], fd, jscale));
        }
    }
    ++rep.checked;
}

// 100 random nets plus the three architectures used by the estimators.
inline Report run_suite(std::uint64_t seed, int nets = 100) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 2.0);
    Report rep;
    auto batch = [&](int rows, int cols) {
        return Eigen::MatrixXd(Eigen::MatrixXd::NullaryExpr(rows, cols, [&] { return n(rng); }));
    };
    int built = 0;
    std::uint64_t s = seed;
    while (built < nets) {
        const DenseNet net = random_net(rng, ++s);
        const Eigen::MatrixXd X = batch(net.input_dim(), 3);
        if (!away_from_kinks(net, X, 2e-3)) continue;
        check_net(net, X, rng, 60, rep);
        ++built;
    }
    using A = Activation;
    // ReLU nets: redraw inputs until no pre-activation sits within 5e-4 of
    // the kink (a 2e-4 step moves pre-activations by well under that)
    auto checked_arch = [&](const DenseNet& net, int cols, double scale, bool positive) {
        for (int attempt = 0; attempt < 50; ++attempt) {
            Eigen::MatrixXd X = batch(net.input_dim(), cols) * scale;
            if (positive) X = X.cwiseAbs();
            if (!away_from_kinks(net, X, 5e-4)) continue;
            check_net(net, X, rng, 80, rep);
            ++rep.architectures;
            return;
        }
    };
    checked_arch(init_net({602, 256, 128, 64, 2}, {A::ReLU, A::ReLU, A::ReLU, A::Identity}, s + 1), 1, 0.2, true);
    checked_arch(init_net({2, 64, 64, 64, 1}, {A::Tanh, A::Tanh, A::Tanh, A::Identity}, s + 2), 4, 0.3, true);
    checked_arch(init_net({2, 64, 64, 4}, {A::ReLU, A::ReLU, A::Identity}, s + 3), 2, 0.5, true);
    return rep;
}

}  // namespace gradcheck
