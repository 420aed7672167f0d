#include "odorloc/nn_engine.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include "odorloc/common.hpp"

namespace odorloc {

std::string to_string(Activation a) {
    switch (a) {
        case Activation::Identity: return "identity";
        case Activation::Tanh: return "tanh";
        case Activation::ReLU: return "relu";
    }
    return "identity";
}

Activation activation_from_string(const std::string& s) {
    if (s == "identity") return Activation::Identity;
    if (s == "tanh") return Activation::Tanh;
    if (s == "relu") return Activation::ReLU;
    throw ConfigError("unknown activation '" + s + "'");
}

int DenseNet::input_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.front().W.cols()); }
int DenseNet::output_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.back().W.rows()); }

std::vector<int> DenseNet::dims() const {
    std::vector<int> d;
    if (layers.empty()) return d;
    d.push_back(input_dim());
    for (const auto& l : layers) d.push_back(static_cast<int>(l.W.rows()));
    return d;
}

std::size_t DenseNet::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.W.size() + l.b.size());
    return n;
}

Eigen::VectorXd DenseNet::parameters() const {
    Eigen::VectorXd p(static_cast<Eigen::Index>(parameter_count()));
    Eigen::Index o = 0;
    for (const auto& l : layers) {
        p.segment(o, l.W.size()) = l.W.reshaped();
        o += l.W.size();
        p.segment(o, l.b.size()) = l.b;
        o += l.b.size();
    }
    return p;
}

void DenseNet::set_parameters(const Eigen::VectorXd& p) {
    if (static_cast<std::size_t>(p.size()) != parameter_count()) throw ConfigError("parameter vector size mismatch");
    Eigen::Index o = 0;
    for (auto& l : layers) {
        l.W.reshaped() = p.segment(o, l.W.size());
        o += l.W.size();
        l.b = p.segment(o, l.b.size());
        o += l.b.size();
    }
}

void DenseNet::check() const {
    if (layers.empty()) throw ConfigError("network has no layers");
    for (std::size_t k = 0; k < layers.size(); ++k) {
        const auto& l = layers[k];
        if (l.b.size() != l.W.rows()) throw ConfigError("layer " + std::to_string(k) + ": bias size mismatch");
        if (k > 0 && l.W.cols() != layers[k - 1].W.rows()) {
            throw ConfigError("layer " + std::to_string(k) + ": input size does not chain");
        }
        if (!l.W.allFinite() || !l.b.allFinite()) throw NumericalError("layer " + std::to_string(k) + ": non-finite parameters");
    }
}

DenseNet init_net(const std::vector<int>& dims, const std::vector<Activation>& activations, std::uint64_t seed) {
    if (dims.size() < 2) throw ConfigError("need at least input and output dims");
    if (activations.size() != dims.size() - 1) throw ConfigError("one activation per layer required");
    for (int d : dims)
        if (d < 1) throw ConfigError("layer dims must be >= 1");
    DenseNet net;
    net.seed = seed;
    std::mt19937_64 rng(seed);
    for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
        DenseLayer l;
        const double s = 1.0 / std::sqrt(static_cast<double>(dims[k]));
        std::uniform_real_distribution<double> u(-s, s);
        l.W.resize(dims[k + 1], dims[k]);
        for (Eigen::Index c = 0; c < l.W.cols(); ++c)
            for (Eigen::Index r = 0; r < l.W.rows(); ++r) l.W(r, c) = u(rng);
        l.b = Eigen::VectorXd::Zero(dims[k + 1]);
        l.act = activations[k];
        net.layers.push_back(std::move(l));
    }
    return net;
}

namespace {

// std::tanh on doubles is scalar; the exp form vectorizes
Eigen::ArrayXXd fast_tanh(const Eigen::MatrixXd& z) { return 1.0 - 2.0 / ((2.0 * z.array()).exp() + 1.0); }

void apply_activation(Activation a, const Eigen::MatrixXd& z, Eigen::MatrixXd& h) {
    switch (a) {
        case Activation::Identity: h = z; break;
        case Activation::Tanh: h = fast_tanh(z).matrix(); break;
        case Activation::ReLU: h = z.cwiseMax(0.0); break;
    }
}

// sigma'(z) given z
Eigen::ArrayXXd derivative(Activation a, const Eigen::MatrixXd& z) {
    switch (a) {
        case Activation::Identity: return Eigen::ArrayXXd::Ones(z.rows(), z.cols());
        case Activation::Tanh: {
            const Eigen::ArrayXXd t = fast_tanh(z);
            return 1.0 - t.square();
        }
        case Activation::ReLU: return (z.array() > 0.0).cast<double>();  // 0 at z == 0
    }
    return {};
}

void check_input(const DenseNet& net, Eigen::Index rows) {
    if (net.layers.empty()) throw ConfigError("network has no layers");
    if (rows != net.input_dim()) {
        throw ConfigError("input has " + std::to_string(rows) + " entries, network expects " + std::to_string(net.input_dim()));
    }
}

}  // namespace

Eigen::MatrixXd forward_batch(const DenseNet& net, const Eigen::MatrixXd& X, Tape* tape) {
    check_input(net, X.rows());
    if (tape) {
        tape->inputs.clear();
        tape->pre.clear();
    }
    Eigen::MatrixXd a = X;
    for (const auto& l : net.layers) {
        Eigen::MatrixXd z = l.W * a;
        z.colwise() += l.b;
        Eigen::MatrixXd h;
        apply_activation(l.act, z, h);
        if (tape) {
            tape->inputs.push_back(std::move(a));
            tape->pre.push_back(std::move(z));
        }
        a = std::move(h);
    }
    return a;
}

Eigen::VectorXd forward(const DenseNet& net, const Eigen::VectorXd& x) { return forward_batch(net, x); }

Eigen::VectorXd Gradients::flatten() const {
    Eigen::Index n = 0;
    for (std::size_t k = 0; k < dW.size(); ++k) n += dW[k].size() + db[k].size();
    Eigen::VectorXd g(n);
    Eigen::Index o = 0;
    for (std::size_t k = 0; k < dW.size(); ++k) {
        g.segment(o, dW[k].size()) = dW[k].reshaped();
        o += dW[k].size();
        g.segment(o, db[k].size()) = db[k];
        o += db[k].size();
    }
    return g;
}

Gradients backward(const DenseNet& net, const Tape& tape, const Eigen::MatrixXd& upstream) {
    const std::size_t L = net.layers.size();
    if (tape.pre.size() != L) throw ConfigError("tape does not match the network");
    if (upstream.rows() != net.output_dim() || upstream.cols() != tape.pre.back().cols()) {
        throw ConfigError("upstream gradient shape mismatch");
    }
    Gradients g;
    g.dW.resize(L);
    g.db.resize(L);
    Eigen::MatrixXd gh = upstream;
    for (std::size_t k = L; k-- > 0;) {
        const auto& l = net.layers[k];
        const Eigen::MatrixXd gz = (gh.array() * derivative(l.act, tape.pre[k])).matrix();
        g.dW[k] = gz * tape.inputs[k].transpose();
        g.db[k] = gz.rowwise().sum();
        gh = l.W.transpose() * gz;
    }
    g.dinput = std::move(gh);
    return g;
}

Gradients backward(const DenseNet& net, const Eigen::VectorXd& x, const Eigen::VectorXd& upstream) {
    Tape tape;
    forward_batch(net, x, &tape);
    return backward(net, tape, upstream);
}

namespace {

// sigma', sigma'', sigma''' at z, elementwise
struct ActDerivs {
    Eigen::ArrayXXd s1, s2, s3;
};

ActDerivs activation_derivs(Activation a, const Eigen::MatrixXd& z) {
    ActDerivs d;
    if (a == Activation::Tanh) {
        const Eigen::ArrayXXd t = fast_tanh(z);
        d.s1 = 1.0 - t.square();
        d.s2 = -2.0 * t * d.s1;
        d.s3 = d.s1 * (6.0 * t.square() - 2.0);
    } else {
        d.s1 = Eigen::ArrayXXd::Ones(z.rows(), z.cols());
        d.s2 = Eigen::ArrayXXd::Zero(z.rows(), z.cols());
        d.s3 = d.s2;
    }
    return d;
}

}  // namespace

Jet jet_forward(const DenseNet& net, const Eigen::MatrixXd& X, JetTape* tape) {
    check_input(net, X.rows());
    for (std::size_t k = 0; k < net.layers.size(); ++k) {
        if (net.layers[k].act == Activation::ReLU) {
            throw ConfigError("input derivatives need twice differentiable activations; layer " + std::to_string(k) +
                              " uses relu");
        }
    }
    const Eigen::Index d = X.rows(), B = X.cols();
    if (tape) {
        tape->inputs.clear();
        tape->pre.clear();
    }
    Jet a;
    a.value = X;
    a.d1.resize(static_cast<std::size_t>(d));
    a.d2.resize(static_cast<std::size_t>(d));
    for (Eigen::Index k = 0; k < d; ++k) {
        a.d1[k] = Eigen::MatrixXd::Zero(d, B);
        a.d1[k].row(k).setOnes();
        a.d2[k] = Eigen::MatrixXd::Zero(d, B);
    }
    for (const auto& l : net.layers) {
        Jet z;
        z.value = l.W * a.value;
        z.value.colwise() += l.b;
        z.d1.resize(a.d1.size());
        z.d2.resize(a.d2.size());
        for (std::size_t k = 0; k < a.d1.size(); ++k) {
            z.d1[k] = l.W * a.d1[k];
            z.d2[k] = l.W * a.d2[k];
        }
        const ActDerivs s = activation_derivs(l.act, z.value);
        Jet h;
        apply_activation(l.act, z.value, h.value);
        h.d1.resize(z.d1.size());
        h.d2.resize(z.d2.size());
        for (std::size_t k = 0; k < z.d1.size(); ++k) {
            h.d1[k] = (s.s1 * z.d1[k].array()).matrix();
            h.d2[k] = (s.s2 * z.d1[k].array().square() + s.s1 * z.d2[k].array()).matrix();
        }
        if (tape) {
            tape->inputs.push_back(std::move(a));
            tape->pre.push_back(std::move(z));
        }
        a = std::move(h);
    }
    return a;
}

Gradients jet_backward(const DenseNet& net, const JetTape& tape, const Jet& upstream) {
    const std::size_t L = net.layers.size();
    if (tape.pre.size() != L) throw ConfigError("jet tape does not match the network");
    const std::size_t nd = upstream.d1.size();
    if (upstream.d2.size() != nd || tape.pre.back().d1.size() != nd) throw ConfigError("jet upstream shape mismatch");
    Gradients g;
    g.dW.resize(L);
    g.db.resize(L);
    Jet gh = upstream;
    for (std::size_t k = L; k-- > 0;) {
        const auto& l = net.layers[k];
        const Jet& z = tape.pre[k];
        const Jet& a = tape.inputs[k];
        const ActDerivs s = activation_derivs(l.act, z.value);

        Eigen::ArrayXXd gz = gh.value.array() * s.s1;
        std::vector<Eigen::MatrixXd> gz1(nd), gz2(nd);
        for (std::size_t j = 0; j < nd; ++j) {
            const auto z1 = z.d1[j].array();
            const auto g1 = gh.d1[j].array();
            const auto g2 = gh.d2[j].array();
            gz += g1 * s.s2 * z1 + g2 * (s.s3 * z1.square() + s.s2 * z.d2[j].array());
            gz1[j] = (g1 * s.s1 + 2.0 * g2 * s.s2 * z1).matrix();
            gz2[j] = (g2 * s.s1).matrix();
        }
        const Eigen::MatrixXd gzm = gz.matrix();
        g.dW[k] = gzm * a.value.transpose();
        for (std::size_t j = 0; j < nd; ++j) g.dW[k] += gz1[j] * a.d1[j].transpose() + gz2[j] * a.d2[j].transpose();
        g.db[k] = gzm.rowwise().sum();

        Jet ga;
        ga.value = l.W.transpose() * gzm;
        ga.d1.resize(nd);
        ga.d2.resize(nd);
        for (std::size_t j = 0; j < nd; ++j) {
            ga.d1[j] = l.W.transpose() * gz1[j];
            ga.d2[j] = l.W.transpose() * gz2[j];
        }
        gh = std::move(ga);
    }
    g.dinput = std::move(gh.value);
    return g;
}

InputDerivatives input_derivatives(const DenseNet& net, const Eigen::VectorXd& x) {
    const Jet j = jet_forward(net, x);
    InputDerivatives out;
    out.value = j.value.col(0);
    const Eigen::Index n = net.output_dim(), d = net.input_dim();
    out.gradient.resize(n, d);
    out.hess_diag.resize(n, d);
    for (Eigen::Index k = 0; k < d; ++k) {
        out.gradient.col(k) = j.d1[k].col(0);
        out.hess_diag.col(k) = j.d2[k].col(0);
    }
    return out;
}

void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grads, AdamState& st) {
    if (grads.size() != params.size()) throw ConfigError("gradient and parameter sizes differ");
    if (!grads.allFinite()) {
        Eigen::Index bad = 0;
        for (; bad < grads.size() && std::isfinite(grads[bad]); ++bad) {
        }
        throw NumericalError("non-finite gradient at parameter " + std::to_string(bad) + " (Adam step " +
                             std::to_string(st.t + 1) + ")");
    }
    if (st.m.size() != params.size()) {
        st.m = Eigen::VectorXd::Zero(params.size());
        st.v = Eigen::VectorXd::Zero(params.size());
    }
    ++st.t;
    st.m = st.beta1 * st.m + (1.0 - st.beta1) * grads;
    st.v = st.beta2 * st.v + (1.0 - st.beta2) * grads.cwiseProduct(grads);
    const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
    const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
    params.array() -= st.lr * (st.m.array() / c1) / ((st.v.array() / c2).sqrt() + st.eps);
}

double mse_loss(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target, Eigen::MatrixXd* grad) {
    if (pred.rows() != target.rows() || pred.cols() != target.cols()) throw ConfigError("prediction/target shape mismatch");
    const double n = static_cast<double>(pred.size());
    const Eigen::MatrixXd r = pred - target;
    if (grad) *grad = (2.0 / n) * r;
    return r.squaredNorm() / n;
}

nlohmann::json net_to_json(const DenseNet& net, const nlohmann::json& metadata) {
    nlohmann::json j;
    j["dims"] = net.dims();
    std::vector<std::string> acts;
    for (const auto& l : net.layers) acts.push_back(to_string(l.act));
    j["activations"] = acts;
    const Eigen::VectorXd p = net.parameters();
    j["parameters"] = std::vector<double>(p.data(), p.data() + p.size());
    j["seed"] = net.seed;
    j["metadata"] = metadata;
    return j;
}

DenseNet net_from_json(const nlohmann::json& j) {
    try {
        const auto dims = j.at("dims").get<std::vector<int>>();
        std::vector<Activation> acts;
        for (const auto& s : j.at("activations").get<std::vector<std::string>>()) acts.push_back(activation_from_string(s));
        DenseNet net = init_net(dims, acts, j.value("seed", std::uint64_t{0}));
        const auto p = j.at("parameters").get<std::vector<double>>();
        net.set_parameters(Eigen::Map<const Eigen::VectorXd>(p.data(), static_cast<Eigen::Index>(p.size())));
        net.check();
        return net;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed network checkpoint: ") + e.what());
    }
}

void save_checkpoint(const std::string& path, const DenseNet& net, const nlohmann::json& metadata) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << net_to_json(net, metadata).dump() << "\n";
}

DenseNet load_checkpoint(const std::string& path, nlohmann::json* metadata) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read checkpoint '" + path + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("checkpoint '" + path + "' is not valid JSON: " + e.what());
    }
    if (metadata) *metadata = j.value("metadata", nlohmann::json::object());
    return net_from_json(j);
}

}  // namespace odorloc
