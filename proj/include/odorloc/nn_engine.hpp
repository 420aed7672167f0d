#pragma once

// Dense feed-forward networks with reverse-mode parameter gradients, forward
// jets of first and pure second input derivatives, and Adam.
//
// Batches are stored column-wise: an input batch is input_dim x batch.

#include <Eigen/Dense>
#include <cstdint>
#include <json.hpp>
#include <string>
#include <vector>

namespace odorloc {

enum class Activation { Identity, Tanh, ReLU };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

struct DenseLayer {
    Eigen::MatrixXd W;  // out x in
    Eigen::VectorXd b;
    Activation act = Activation::Identity;
};

struct DenseNet {
    std::vector<DenseLayer> layers;
    std::uint64_t seed = 0;

    int input_dim() const;
    int output_dim() const;
    std::vector<int> dims() const;
    std::size_t parameter_count() const;
    /// Layer by layer: W in column-major order, then b.
    Eigen::VectorXd parameters() const;
    void set_parameters(const Eigen::VectorXd& p);
    /// Throws ConfigError on broken chaining, NumericalError on non-finite
    /// parameters.
    void check() const;
};

/// Weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], zero biases.
/// activations.size() == dims.size() - 1.
DenseNet init_net(const std::vector<int>& dims, const std::vector<Activation>& activations, std::uint64_t seed);

/// Values kept by a forward pass for the backward pass.
struct Tape {
    std::vector<Eigen::MatrixXd> inputs;  // input to each layer
    std::vector<Eigen::MatrixXd> pre;     // pre-activation of each layer
};

Eigen::VectorXd forward(const DenseNet& net, const Eigen::VectorXd& x);
Eigen::MatrixXd forward_batch(const DenseNet& net, const Eigen::MatrixXd& X, Tape* tape = nullptr);

struct Gradients {
    std::vector<Eigen::MatrixXd> dW;
    std::vector<Eigen::VectorXd> db;
    Eigen::MatrixXd dinput;  // input_dim x batch

    Eigen::VectorXd flatten() const;  // same order as DenseNet::parameters
};

/// Gradients of sum over the batch of <upstream, output>.
Gradients backward(const DenseNet& net, const Tape& tape, const Eigen::MatrixXd& upstream);
Gradients backward(const DenseNet& net, const Eigen::VectorXd& x, const Eigen::VectorXd& upstream);

/// Output value with first derivatives d1[k] = d out / d x_k and pure second
/// derivatives d2[k] = d^2 out / d x_k^2, each output_dim x batch.
struct Jet {
    Eigen::MatrixXd value;
    std::vector<Eigen::MatrixXd> d1, d2;
};

struct JetTape {
    std::vector<Jet> inputs;  // jet entering each layer
    std::vector<Jet> pre;     // pre-activation jet of each layer
};

/// Throws ConfigError if any layer uses ReLU.
Jet jet_forward(const DenseNet& net, const Eigen::MatrixXd& X, JetTape* tape = nullptr);

/// Parameter gradients of sum over the batch of <G.value, value> +
/// sum_k <G.d1[k], d1[k]> + <G.d2[k], d2[k]>. dinput holds the gradient with
/// respect to the input values only.
Gradients jet_backward(const DenseNet& net, const JetTape& tape, const Jet& upstream);

struct InputDerivatives {
    Eigen::VectorXd value;
    Eigen::MatrixXd gradient;   // output_dim x input_dim
    Eigen::MatrixXd hess_diag;  // output_dim x input_dim
};

InputDerivatives input_derivatives(const DenseNet& net, const Eigen::VectorXd& x);

struct AdamState {
    Eigen::VectorXd m, v;
    long long t = 0;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One bias-corrected Adam update of params in place. Throws NumericalError on
/// non-finite gradients, before touching anything.
void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grads, AdamState& state);

/// Mean over all entries of (pred - target)^2; grad receives d loss / d pred.
double mse_loss(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target, Eigen::MatrixXd* grad = nullptr);

/// Checkpoint: dims, activations, flattened parameters, seed, metadata.
nlohmann::json net_to_json(const DenseNet& net, const nlohmann::json& metadata = nlohmann::json::object());
DenseNet net_from_json(const nlohmann::json& j);
void save_checkpoint(const std::string& path, const DenseNet& net, const nlohmann::json& metadata = nlohmann::json::object());
/// Returns the net; metadata (if requested) receives the stored metadata.
DenseNet load_checkpoint(const std::string& path, nlohmann::json* metadata = nullptr);

}  // namespace odorloc
