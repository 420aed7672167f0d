#pragma once

// Explicit finite-difference solver for the 2D advection-diffusion-reaction
// equation
//
//     dC/dt + u . grad C = D lap C - lambda C + S(x, y, t)
//
// on a cell-centred Nx x Ny grid. Diffusion is FTCS, advection is first-order
// upwind in flux form, decay is explicit, and the point source deposits
// Q*dt/(dx*dy) into its nearest cell while t <= T_inj.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "odorloc/common.hpp"

namespace odorloc {

enum class Boundary { DirichletZero, NeumannZeroFlux };

std::string to_string(Boundary b);
Boundary boundary_from_string(const std::string& s);

struct SimConfig {
    Vec2 domain_size{1e-5, 1e-5};  // m
    int nx = 50;
    int ny = 50;
    double diffusion = 1e-10;       // m^2/s
    Vec2 flow{5e-7, 0.0};           // m/s
    double degradation = 0.01;      // 1/s
    double emission = 1.0;          // units/s
    Vec2 source_pos{5e-6, 5e-6};    // m
    double injection_duration = 10.0;  // s
    double dt = 5e-5;               // s
    double total_time = 27.5;       // s
    Boundary boundary = Boundary::DirichletZero;
    double noise_sigma_frac = 0.1;

    double dx() const { return domain_size.x / nx; }
    double dy() const { return domain_size.y / ny; }
    double cell_area() const { return dx() * dy(); }
    std::size_t cell_count() const { return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny); }
    /// Number of explicit steps needed to reach total_time.
    std::size_t step_count() const;
    /// Step index whose end state is closest to time t.
    std::size_t step_index(double t) const;
    bool source_active(std::size_t step) const { return static_cast<double>(step) * dt <= injection_duration; }
};

/// Partial parameter set; unset fields take the defaults.
struct ConfigOverrides {
    std::optional<Vec2> domain_size;
    std::optional<int> nx, ny;
    std::optional<double> diffusion;
    std::optional<Vec2> flow;
    std::optional<double> degradation;
    std::optional<double> emission;
    std::optional<Vec2> source_pos;
    std::optional<double> injection_duration;
    std::optional<double> dt;
    std::optional<double> total_time;
    std::optional<Boundary> boundary;
    std::optional<double> noise_sigma_frac;
};

/// Largest admissible explicit time step for the diffusion and advection
/// terms.
double stability_bound(const SimConfig& cfg);

/// Throws ConfigError naming the violated bound.
void validate(const SimConfig& cfg);

/// Defaults merged with overrides. When dt is not given it is set to half the
/// stability bound.
SimConfig make_config(const ConfigOverrides& overrides = {});

/// Flat key=value text; keys are the SimConfig field names, pairs are written
/// as "a,b", '#' starts a comment.
ConfigOverrides parse_config_text(const std::string& text);
ConfigOverrides read_config_file(const std::string& path);
std::string format_config(const SimConfig& cfg);

struct CellIndex {
    int i = 0;  // x
    int j = 0;  // y
    friend bool operator==(CellIndex, CellIndex) = default;
};

CellIndex nearest_cell(const SimConfig& cfg, Vec2 pos);
Vec2 cell_center(const SimConfig& cfg, CellIndex c);
inline std::size_t linear_index(const SimConfig& cfg, CellIndex c) {
    return static_cast<std::size_t>(c.j) * static_cast<std::size_t>(cfg.nx) + static_cast<std::size_t>(c.i);
}
bool inside_domain(const SimConfig& cfg, Vec2 pos);

/// Four-cell bilinear interpolation weights between cell centres. Positions
/// within half a cell of a wall use the nearest interior pair.
struct BilinearWeights {
    std::size_t cells[4];
    double weights[4];
};
BilinearWeights bilinear_weights(const SimConfig& cfg, Vec2 pos);

/// Nx x Ny concentration grid, stored row-major with row j = y index.
class ConcentrationField {
public:
    ConcentrationField() = default;
    explicit ConcentrationField(const SimConfig& cfg, double time = 0.0);

    const SimConfig& config() const { return cfg_; }
    double time() const { return time_; }
    void set_time(double t) { time_ = t; }
    int nx() const { return cfg_.nx; }
    int ny() const { return cfg_.ny; }

    double& at(int i, int j) { return values_[static_cast<std::size_t>(j) * cfg_.nx + i]; }
    double at(int i, int j) const { return values_[static_cast<std::size_t>(j) * cfg_.nx + i]; }
    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }

    /// Integral of C over the domain.
    double total_mass() const;
    double max_value() const;
    double sample(Vec2 pos) const;

private:
    SimConfig cfg_;
    double time_ = 0.0;
    std::vector<double> values_;
};

/// Linear part of one explicit step written as a five-point stencil with
/// per-cell coefficients: C_new = A C (before source deposit and clamping).
class TransportOperator {
public:
    explicit TransportOperator(const SimConfig& cfg);

    const SimConfig& config() const { return cfg_; }
    /// out = A in
    void apply(std::span<const double> in, std::span<double> out) const;
    /// out = A^T in
    void apply_transpose(std::span<const double> in, std::span<double> out) const;
    /// Smallest centre coefficient; negative means the scheme can produce
    /// negative values.
    double min_center_coefficient() const;
    /// Entry A(row, col); zero outside the stencil.
    double coefficient(std::size_t row, std::size_t col) const;

private:
    struct Stencil {
        std::vector<double> c, e, w, n, s;
    };
    void apply_stencil(const Stencil& st, std::span<const double> in, std::span<double> out) const;

    SimConfig cfg_;
    Stencil fwd_;
    Stencil adj_;
    std::vector<double> zeros_;
};

struct StepStats {
    std::size_t clamped = 0;  // cells set to zero after going negative
};

/// One explicit step from time t to t + dt.
ConcentrationField step(const ConcentrationField& field, const SimConfig& cfg, double t, StepStats* stats = nullptr);

struct RunOptions {
    std::vector<double> snapshot_times;
    std::optional<ConcentrationField> initial;
    /// Positions sampled (bilinear) at every probe time.
    std::vector<Vec2> probe_positions;
    std::vector<double> probe_times;
};

struct RunResult {
    ConcentrationField final_field;
    std::vector<ConcentrationField> snapshots;
    /// probe_readings[p][k]: probe p at probe_times[k].
    std::vector<std::vector<double>> probe_readings;
    /// Maximum over all cells and all stored states.
    double peak = 0.0;
    std::size_t clamped = 0;
};

RunResult run_to_time(const SimConfig& cfg, const RunOptions& opts = {});

/// Forward model: relocate the source to candidate, run to total_time and
/// sample each sensor.
std::vector<double> forward_concentration(Vec2 candidate, std::span<const Vec2> sensors, const SimConfig& cfg);

/// CSV with header "nx,ny,lx,ly,t", one metadata line, then Ny rows of Nx
/// values (row j = 0 first).
void write_field_csv(const std::string& path, const ConcentrationField& field);
ConcentrationField read_field_csv(const std::string& path);

/// 8-bit binary PGM, linear scaling with max -> 255. Row j = ny-1 is written
/// first so +y points up. An all-zero grid maps to all-zero pixels.
void write_pgm(const std::string& path, std::span<const double> values, int nx, int ny);
std::vector<unsigned char> pgm_pixels(std::span<const double> values, int nx, int ny);

}  // namespace odorloc
