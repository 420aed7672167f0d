#pragma once

// Cached forward model. The explicit scheme is linear in the source, so the
// reading at sensor s after N steps for a source in cell k is
//
//     r_N(k) = q * sum_{m active} (w_s^T A^{N-1-m})_k
//
// One adjoint sweep v_{j+1} = A^T v_j per sensor therefore yields the readings
// for every candidate source cell at every sample time. Values agree with
// direct forward runs up to rounding, relative to the trace maximum.

#include <span>
#include <vector>

#include "odorloc/grid_pde.hpp"

namespace odorloc {

class ResponseBank {
public:
    ResponseBank() = default;

    static ResponseBank build(const SimConfig& cfg, std::span<const Vec2> sensors, std::span<const double> sample_times);

    const SimConfig& config() const { return cfg_; }
    std::size_t sensor_count() const { return sensors_.size(); }
    std::size_t sample_count() const { return times_.size(); }
    std::span<const Vec2> sensors() const { return sensors_; }
    std::span<const double> sample_times() const { return times_; }

    /// Readings at (sensor, sample) for every source cell, row-major grid.
    std::span<const double> responses(std::size_t sensor, std::size_t sample) const;

    /// Reading for a source deposited in the nearest cell to pos; equals the
    /// direct forward model.
    double reading(std::size_t sensor, std::size_t sample, Vec2 source) const;

    /// Reading with the source response interpolated bilinearly between cell
    /// centres; a smooth surrogate used for Jacobians.
    double interpolated(std::size_t sensor, std::size_t sample, Vec2 source) const;

    /// Readings for all samples of one sensor at one source cell.
    std::vector<double> trace(std::size_t sensor, CellIndex source) const;

private:
    SimConfig cfg_;
    std::vector<Vec2> sensors_;
    std::vector<double> times_;
    std::vector<double> data_;  // [sensor][sample][cell]
};

/// Space-time maximum of the clean field for a source in each cell, valid when
/// the injection lasts long enough for the source cell to reach its plateau.
/// Under a non-negative stencil the maximum sits in the source cell at the last
/// injection step, where the field equals the steady solution of
/// (I - A) C = q e_k. Throws ConfigError when the plateau is not reached
/// (spectral radius of A raised to the injection step count above 1e-14).
std::vector<double> plateau_peaks(const SimConfig& cfg);

/// Spectral radius of the (non-negative) transport operator by power iteration.
double transport_spectral_radius(const SimConfig& cfg, int iterations = 4000);

}  // namespace odorloc
