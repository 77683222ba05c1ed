#pragma once

// Complex-state extended Kalman filter tracking harmonics 1..9, the 5/4
// inter-harmonic (75 Hz on a 60 Hz system), a decaying DC term and the
// fundamental rotation of a single voltage channel.
//
// State layout (0-based index):
//   x[0]            rotation e^{jω₁ts}
//   x[2n-1], x[2n]  envelope pair of harmonic n = 1..9:
//                   a_n e^{+j(n k ω₁ ts + φ_n)}, a_n e^{-j(n k ω₁ ts + φ_n)}
//   x[19], x[20]    envelope pair of the 5/4 inter-harmonic
//   x[21]           decaying DC
//
// Transition: pair members rotate by x[0]^m and x[0]^-m (m the order; the
// fractional power uses the principal branch), DC is scaled by a fixed
// per-sample factor. Measurement: h(x) = Σ(-0.5i·x_even + 0.5i·x_odd) + x[21].
//
// Covariance is kept in complex Hermitian form: P⁻ = F P Fᴴ + Q and
// K = P⁻Hᴴ (H P⁻ Hᴴ + R)⁻¹.

#include "islanding/keyvalue.hpp"

#include <Eigen/Core>

#include <array>
#include <complex>
#include <cstdint>
#include <iosfwd>
#include <string>

namespace islanding::ekf {

using Complex = std::complex<double>;

inline constexpr int kStateSize = 22;
inline constexpr int kRotationIndex = 0;
inline constexpr int kDcIndex = 21;
inline constexpr int kTrackedComponents = 10;  // harmonics 1..9 and 5/4

using StateVector = Eigen::Matrix<Complex, kStateSize, 1>;
using Covariance = Eigen::Matrix<Complex, kStateSize, kStateSize>;
using MeasurementRow = Eigen::Matrix<Complex, 1, kStateSize>;

/// Multiple of the fundamental for tracked component i (0..8 → 1..9, 9 → 5/4).
constexpr double component_order(int i) { return i < 9 ? static_cast<double>(i + 1) : 1.25; }
/// Index of the positive-rotation member of component i's pair.
constexpr int even_index(int i) { return 2 * i + 1; }
constexpr int odd_index(int i) { return 2 * i + 2; }
inline constexpr int kInterharmonicComponent = 9;

struct EstimatorConfig {
    double ts = 1.0 / 7680.0;
    double nominal_f1 = 60.0;
    std::array<double, kStateSize> process_noise_q{};
    double measurement_noise_r = 1e-4;
    double initial_covariance_p0 = 10.0;
    // Initial variance of the rotation state alone; P0·I covers the rest.
    double initial_covariance_rotation = 1e-6;
    double dc_decay_alpha = 0.999;
    bool conjugate_enforcement = true;
    double initial_envelope = 1e-3;

    /// Default tuning: Q = 1e-8 on the rotation, 1e-6 elsewhere; R = 1e-4; P0 = 10·I.
    static EstimatorConfig defaults(double ts = 1.0 / 7680.0, double nominal_f1 = 60.0);
    void validate() const;
};

/// Reads `estimator.*` keys over the defaults for the given sampling interval.
/// Keys: nominal_f1, q_rotation, q_envelope, q_fundamental, q_interharmonic,
/// q_dc, r, p0, p0_rotation, dc_decay_alpha, conjugate_enforcement,
/// initial_envelope. q_fundamental and q_interharmonic default to q_envelope.
EstimatorConfig estimator_config_from(const KeyValueDoc& doc, double ts, double nominal_f1);

struct EstimatorState {
    StateVector x = StateVector::Zero();
    Covariance p = Covariance::Zero();
    // Sample index the state describes; -1 before the first sample.
    std::int64_t k = -1;
};

struct HarmonicEstimates {
    std::array<double, kTrackedComponents> amplitudes{};
    std::array<double, kTrackedComponents> phases{};
    double f1_est = 0.0;
    double dc_est = 0.0;

    double harmonic(int n) const { return amplitudes.at(static_cast<std::size_t>(n - 1)); }
    double interharmonic() const { return amplitudes[kInterharmonicComponent]; }
};

struct StepResult {
    EstimatorState state;
    HarmonicEstimates estimates;
};

EstimatorState init(const EstimatorConfig& config);

/// State transition f(x), without covariance.
StateVector transition(const EstimatorConfig& config, const StateVector& x);
/// Analytic Jacobian ∂f/∂x evaluated at x.
Covariance transition_jacobian(const EstimatorConfig& config, const StateVector& x);

MeasurementRow measurement_row();
Complex measure(const StateVector& x);

/// Throws DivergenceError when |x[0]| < 1e-6.
EstimatorState predict(const EstimatorConfig& config, const EstimatorState& state);
/// Throws DivergenceError when the innovation variance is not invertible.
EstimatorState update(const EstimatorConfig& config, const EstimatorState& state, double z);
HarmonicEstimates extract(const EstimatorConfig& config, const EstimatorState& state);
StepResult step(const EstimatorConfig& config, const EstimatorState& state, double z);

/// |x[0]| within (0.5, 2).
bool is_healthy(const EstimatorState& state);

/// Streaming wrapper holding a config and its current state.
class HarmonicTracker {
public:
    explicit HarmonicTracker(EstimatorConfig config);

    const HarmonicEstimates& push(double z);
    const EstimatorState& state() const { return state_; }
    const HarmonicEstimates& estimates() const { return estimates_; }
    const EstimatorConfig& config() const { return config_; }

private:
    EstimatorConfig config_;
    EstimatorState state_;
    HarmonicEstimates estimates_;
};

/// CSV header `time_s,a1,...,a9,a_5_4,f1_hz,dc`.
void write_estimates_header(std::ostream& out);
void write_estimates_row(std::ostream& out, double t, const HarmonicEstimates& est);

}  // namespace islanding::ekf
