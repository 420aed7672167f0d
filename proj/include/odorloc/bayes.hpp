#pragma once

// Likelihood-based localization: exhaustive MAP grid search under a uniform
// prior and an extended Kalman filter over the static source position.

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "odorloc/datagen.hpp"
#include "odorloc/response_bank.hpp"

namespace odorloc {

/// Clean readings of every trace for a source at `candidate`, by a direct
/// forward run sampled at the trace times. out[s][k] pairs with
/// traces[s].times[k].
std::vector<std::vector<double>> forward_traces(Vec2 candidate, std::span<const SensorTrace> traces, const SimConfig& cfg);

/// Gaussian log-likelihood sum_t -(z_t - c_t)^2 / (2 sigma^2), constant
/// dropped. sigma defaults to each trace's noise_sigma.
double log_likelihood(Vec2 candidate, std::span<const SensorTrace> traces, const SimConfig& cfg,
                      std::optional<double> sigma = std::nullopt);

/// Same, with the predictions taken from a response bank whose sensors and
/// sample times match the traces.
double log_likelihood(Vec2 candidate, std::span<const SensorTrace> traces, const ResponseBank& bank,
                      std::optional<double> sigma = std::nullopt);

struct Posterior {
    int nc = 0;
    Vec2 domain_size;
    std::vector<Vec2> candidates;       // row-major, row = y index
    std::vector<double> log_likelihood;  // unnormalized
    std::vector<double> log_posterior;   // normalized: sum exp = 1
    double log_normalizer = 0.0;
    std::size_t argmax = 0;
    std::size_t tie_count = 1;  // candidates sharing the maximum; lowest index wins
    bool uninformative = false;

    double probability(std::size_t k) const;
    double total_probability() const;
};

/// Candidate positions: centres of an nc x nc partition of the domain.
std::vector<Vec2> candidate_grid(const SimConfig& cfg, int nc);

/// Normalizes a vector of log-likelihoods under a uniform prior.
Posterior make_posterior(const SimConfig& cfg, int nc, std::vector<double> log_lik);

struct MapOptions {
    int candidate_resolution = 50;
    std::optional<double> sigma;  // overrides trace noise_sigma
};

struct MapResult {
    SourceEstimate estimate;
    Posterior posterior;
};

/// Grid search with direct forward runs per candidate (slow, for small grids).
MapResult map_estimate(std::span<const SensorTrace> traces, const SimConfig& cfg, Vec2 truth, const MapOptions& opt = {});

/// Grid search using a response bank as the forward-solve cache.
MapResult map_estimate(std::span<const SensorTrace> traces, const ResponseBank& bank, Vec2 truth,
                       const MapOptions& opt = {});

/// Writes the posterior probabilities: header "nc,lx,ly,argmax_row,argmax_col",
/// one metadata line, then nc rows (row 0 = lowest y).
void write_posterior_csv(const std::string& path, const Posterior& post);
void write_posterior_pgm(const std::string& path, const Posterior& post);

struct FilterState {
    Vec2 mean;
    Eigen::Matrix2d cov = Eigen::Matrix2d::Identity();
    std::size_t steps = 0;
};

/// Centre of the domain with covariance sigma0^2 I.
FilterState initial_state(const SimConfig& cfg, double sigma0 = 2.5e-6);

/// Scalar measurement h(x) of a source at x.
using Measurement = std::function<double(Vec2)>;

struct UpdateInfo {
    double innovation = 0.0;
    Eigen::RowVector2d jacobian = Eigen::RowVector2d::Zero();
    bool diverged = false;  // non-finite Jacobian or update; state left unchanged
    bool repaired = false;  // an eigenvalue was lifted to the floor
};

struct KalmanOptions {
    double process_noise = 1e-16;  // m^2 added to each diagonal entry per update
    double fd_step = 1e-7;         // central-difference step, m
    double eigen_floor = 1e-18;    // m^2
};

/// One EKF step: identity predict with additive process noise, then a Joseph
/// form correction with a central-difference Jacobian of h at the predicted
/// mean.
FilterState kalman_update(const FilterState& state, double z, const Measurement& h, double R,
                          const KalmanOptions& opt = {}, UpdateInfo* info = nullptr);

struct FilterOptions {
    KalmanOptions kalman;
    std::optional<double> R;  // defaults to each trace's noise_sigma^2
    bool clamp_to_domain = true;
};

struct FilterResult {
    SourceEstimate estimate;
    std::vector<FilterState> trajectory;  // state after each update, init first
    std::size_t repairs = 0;
    bool diverged = false;
    bool all_positive_definite = true;
};

/// Predicted reading of sensor s at sample k for a source at x.
using ObservationModel = std::function<double(std::size_t sensor, std::size_t sample, Vec2 source)>;

/// Bilinear interpolation of the bank over source cell centres.
ObservationModel bank_observation_model(const ResponseBank& bank);

/// Folds kalman_update over the traces in time order (all sensors at sample
/// k before sample k + 1).
FilterResult run_filter(std::span<const SensorTrace> traces, const ObservationModel& h, const SimConfig& cfg,
                        const FilterState& init, Vec2 truth, const FilterOptions& opt = {});

/// CSV: step,x,y,cov_xx,cov_xy,cov_yy
void write_filter_csv(const std::string& path, std::span<const FilterState> trajectory);

}  // namespace odorloc
