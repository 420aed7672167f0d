#pragma once

// Learning-based estimators: direct MLP inversion of a single-sensor trace,
// and a physics-informed network with the source position as a trainable
// parameter.

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "odorloc/datagen.hpp"
#include "odorloc/nn_engine.hpp"

namespace odorloc {

/// One row of a training curve. MLP runs leave physics_loss at 0 and fill
/// val_loss; PINN runs leave val_loss NaN.
struct TrainingRecord {
    int epoch = 0;
    double data_loss = 0.0;
    double physics_loss = 0.0;
    double total = 0.0;
    double val_loss = std::numeric_limits<double>::quiet_NaN();
};

/// CSV with header "epoch,data_loss,physics_loss,total,val_loss".
void write_training_curve(const std::string& path, std::span<const TrainingRecord> history);

struct MlpOptions {
    std::vector<int> hidden{256, 128, 64};
    int epochs = 100;
    double lr = 1e-3;
    std::size_t batch_size = 64;  // 0: full batch
    std::uint64_t seed = 0;
};

struct MlpEstimator {
    DenseNet net;
    FeatureScaler scaler;
    Vec2 sensor_pos;  // sensor of the training data

    /// Predicted source - sensor offset in meters for raw 602-wide features.
    Vec2 offset(std::span<const double> features) const;
};

struct MlpTraining {
    MlpEstimator estimator;
    std::vector<TrainingRecord> history;
    double seconds = 0.0;
};

/// Adam on mean squared error of normalized offsets (micrometres). Throws
/// NumericalError naming the epoch if the loss stops being finite.
MlpTraining train_mlp(std::span<const DatasetSample> train, std::span<const DatasetSample> val, const MlpOptions& opt = {});

/// sensor position of the trace plus the predicted offset. Timed from feature
/// extraction to the returned estimate.
SourceEstimate mlp_predict(const MlpEstimator& est, const SensorTrace& trace, Vec2 wind, Vec2 truth);

/// Localization errors on a labelled set, meters.
std::vector<double> mlp_errors(const MlpEstimator& est, std::span<const DatasetSample> samples);

void save_mlp(const std::string& path, const MlpEstimator& est, const nlohmann::json& extra = nlohmann::json::object());
MlpEstimator load_mlp(const std::string& path);

/// Steady transport in coordinates scaled to [0,1]^2 and concentrations
/// divided by conc_scale. The residual is
///
///     ax c_xx + ay c_yy - px c_x - py c_y - k c + A g(x - s)
///
/// with ax = Ly/Lx, ay = Lx/Ly, px = ux Ly / D, py = uy Lx / D,
/// k = lambda Lx Ly / D, A = Q / (D conc_scale), and g a normalized Gaussian
/// bump of widths (wx, wy). It equals the dimensional residual
/// D lap C - u.grad C - lambda C + S times Lx Ly / (D conc_scale).
struct PinnPhysics {
    double ax = 1.0, ay = 1.0;
    double px = 0.0, py = 0.0;
    double k = 0.0;
    double amplitude = 0.0;
    double wx = 0.02, wy = 0.02;
};

struct PinnModel {
    DenseNet net;        // (x', y') -> c'
    Vec2 source_param;   // normalized, in [0,1]^2
    double lambda_mse = 1.0;
    double lambda_phy = 1e-2;
    PinnPhysics physics;
    Vec2 domain_size;
    double conc_scale = 1.0;

    Vec2 source_position() const;  // meters
};

PinnPhysics make_physics(const SimConfig& cfg, double conc_scale, double width_cells = 1.0);

/// Residual at a normalized point.
double pinn_residual(const PinnModel& model, Vec2 point);
/// Residual and its gradient with respect to source_param.
double pinn_residual(const PinnModel& model, Vec2 point, Vec2* d_source);

struct PinnOptions {
    std::vector<int> hidden{64, 64, 64};
    double lambda_mse = 1.0;
    double lambda_phy = 1e-2;
    std::size_t collocation = 1024;
    std::size_t boundary_points = 128;
    int epochs = 1500;
    double lr = 1e-3;
    double width_cells = 1.0;
    std::uint64_t seed = 0;
    bool multi_start = false;
    /// Readings with 0 < t <= t_max enter the data term; t_max < 0 means the
    /// injection duration.
    double t_max = -1.0;
    Vec2 init{0.5, 0.5};  // normalized start for source_param
};

struct PinnTraining {
    PinnModel model;
    SourceEstimate estimate;
    std::vector<TrainingRecord> history;
    double final_loss = 0.0;
    bool boundary_stuck = false;
};

/// Joint Adam optimization of network weights and source_param.
PinnTraining train_pinn(std::span<const SensorTrace> traces, const SimConfig& cfg, Vec2 truth, const PinnOptions& opt = {});

void save_pinn(const std::string& path, const PinnModel& model);
PinnModel load_pinn(const std::string& path);

}  // namespace odorloc
