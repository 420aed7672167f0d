#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace odorloc {

/// Position or displacement in the plane, meters unless stated otherwise.
struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
    friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
    friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
    friend bool operator==(Vec2 a, Vec2 b) = default;
};

inline double norm(Vec2 v) { return std::hypot(v.x, v.y); }

/// Euclidean localization error in meters. Every error reported by the
/// toolkit goes through this function.
inline double localization_error(Vec2 estimate, Vec2 truth) { return norm(estimate - truth); }

/// Invalid configuration or parameter set (CLI exit code 2).
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Non-finite values, divergence or other numerical breakdown (CLI exit code 3).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Estimated source location produced by one method.
struct SourceEstimate {
    std::string method;
    Vec2 estimate;
    Vec2 truth;
    double error_m = 0.0;
    double inference_s = 0.0;
    double training_s = 0.0;
    std::string flags;  // comma separated diagnostics, empty when clean
};

/// Fills truth and error_m on an estimate.
inline SourceEstimate& score(SourceEstimate& est, Vec2 truth) {
    est.truth = truth;
    est.error_m = localization_error(est.estimate, truth);
    return est;
}

inline void add_flag(std::string& flags, const std::string& flag) {
    if (!flags.empty()) flags += ",";
    flags += flag;
}

/// splitmix64 mix of a master seed and an index; used to derive per-sample
/// and per-sensor seeds so serial and parallel generation agree.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
    std::uint64_t z = master + 0x9E3779B97F4A7C15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

class Stopwatch {
public:
    Stopwatch() : start_(std::chrono::steady_clock::now()) {}
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

}  // namespace odorloc
