#include "islanding/harmonic_ekf.hpp"

#include "islanding/errors.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <ostream>

namespace islanding::ekf {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct RotationPowers {
    // x1^m and x1^-m for every tracked component.
    std::array<Complex, kTrackedComponents> up;
    std::array<Complex, kTrackedComponents> down;
};

RotationPowers rotation_powers(const Complex& x1) {
    RotationPowers r;
    Complex pw = 1.0;
    for (int i = 0; i < 9; ++i) {
        pw *= x1;
        r.up[i] = pw;
        r.down[i] = 1.0 / pw;
    }
    // Fractional power on the principal branch. arg(x1) = ω₁ts is a small
    // positive angle, far from the ±π cut.
    r.up[9] = std::polar(std::pow(std::abs(x1), 1.25), 1.25 * std::arg(x1));
    r.down[9] = 1.0 / r.up[9];
    return r;
}

void check_rotation(const Complex& x1) {
    if (!(std::abs(x1) >= 1e-6)) throw DivergenceError("rotation state collapsed (|x1| < 1e-6)");
}

double wrap_phase(double p) {
    p = std::fmod(p, kTwoPi);
    if (p < 0.0) p += kTwoPi;
    return p >= kTwoPi ? 0.0 : p;
}

}  // namespace

EstimatorConfig EstimatorConfig::defaults(double ts, double nominal_f1) {
    EstimatorConfig c;
    c.ts = ts;
    c.nominal_f1 = nominal_f1;
    c.process_noise_q.fill(1e-6);
    c.process_noise_q[kRotationIndex] = 1e-8;
    return c;
}

void EstimatorConfig::validate() const {
    if (!(ts > 0.0)) throw InvalidArgument("estimator ts must be > 0");
    if (!(nominal_f1 > 0.0)) throw InvalidArgument("estimator nominal_f1 must be > 0");
    for (double q : process_noise_q) {
        if (!(q > 0.0)) throw InvalidArgument("process noise variances must be > 0");
    }
    if (!(measurement_noise_r > 0.0)) throw InvalidArgument("measurement noise variance must be > 0");
    if (!(initial_covariance_p0 > 0.0)) throw InvalidArgument("initial covariance must be > 0");
    if (!(initial_covariance_rotation > 0.0)) throw InvalidArgument("initial rotation covariance must be > 0");
    if (!(dc_decay_alpha > 0.0 && dc_decay_alpha <= 1.0)) throw InvalidArgument("dc_decay_alpha must be in (0, 1]");
    if (!(initial_envelope > 0.0)) throw InvalidArgument("initial envelope must be > 0");
}

EstimatorConfig estimator_config_from(const KeyValueDoc& doc, double ts, double nominal_f1) {
    EstimatorConfig c = EstimatorConfig::defaults(ts, doc.get_double("estimator.nominal_f1", nominal_f1));
    const double q_rot = doc.get_double("estimator.q_rotation", c.process_noise_q[kRotationIndex]);
    const double q_env = doc.get_double("estimator.q_envelope", c.process_noise_q[1]);
    const double q_dc = doc.get_double("estimator.q_dc", c.process_noise_q[kDcIndex]);
    c.process_noise_q.fill(q_env);
    c.process_noise_q[kRotationIndex] = q_rot;
    c.process_noise_q[kDcIndex] = q_dc;
    // Optional per-component envelope variances.
    const double q_fund = doc.get_double("estimator.q_fundamental", q_env);
    const double q_inter = doc.get_double("estimator.q_interharmonic", q_env);
    c.process_noise_q[static_cast<std::size_t>(even_index(0))] = q_fund;
    c.process_noise_q[static_cast<std::size_t>(odd_index(0))] = q_fund;
    c.process_noise_q[static_cast<std::size_t>(even_index(kInterharmonicComponent))] = q_inter;
    c.process_noise_q[static_cast<std::size_t>(odd_index(kInterharmonicComponent))] = q_inter;
    c.measurement_noise_r = doc.get_double("estimator.r", c.measurement_noise_r);
    c.initial_covariance_p0 = doc.get_double("estimator.p0", c.initial_covariance_p0);
    c.initial_covariance_rotation = doc.get_double("estimator.p0_rotation", c.initial_covariance_rotation);
    c.dc_decay_alpha = doc.get_double("estimator.dc_decay_alpha", c.dc_decay_alpha);
    c.conjugate_enforcement = doc.get_bool("estimator.conjugate_enforcement", c.conjugate_enforcement);
    c.initial_envelope = doc.get_double("estimator.initial_envelope", c.initial_envelope);
    try {
        c.validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError(std::string("estimator.*: ") + e.what());
    }
    return c;
}

EstimatorState init(const EstimatorConfig& config) {
    config.validate();
    EstimatorState s;
    s.x.setConstant(Complex(config.initial_envelope, 0.0));
    s.x[kRotationIndex] = std::polar(1.0, kTwoPi * config.nominal_f1 * config.ts);
    s.p = Covariance::Identity() * config.initial_covariance_p0;
    s.p(kRotationIndex, kRotationIndex) = config.initial_covariance_rotation;
    s.k = -1;
    return s;
}

StateVector transition(const EstimatorConfig& config, const StateVector& x) {
    check_rotation(x[kRotationIndex]);
    const auto r = rotation_powers(x[kRotationIndex]);
    StateVector out;
    out[kRotationIndex] = x[kRotationIndex];
    for (int i = 0; i < kTrackedComponents; ++i) {
        out[even_index(i)] = r.up[i] * x[even_index(i)];
        out[odd_index(i)] = r.down[i] * x[odd_index(i)];
    }
    out[kDcIndex] = config.dc_decay_alpha * x[kDcIndex];
    return out;
}

namespace {

// F = diag(d) + u·e0ᵀ, with u[0] = 0.
struct JacobianParts {
    StateVector d;
    StateVector u;
};

JacobianParts jacobian_parts(const EstimatorConfig& config, const StateVector& x) {
    const Complex x1 = x[kRotationIndex];
    check_rotation(x1);
    const auto r = rotation_powers(x1);
    JacobianParts j;
    j.d[kRotationIndex] = 1.0;
    j.u[kRotationIndex] = 0.0;
    for (int i = 0; i < kTrackedComponents; ++i) {
        const double m = component_order(i);
        j.d[even_index(i)] = r.up[i];
        j.d[odd_index(i)] = r.down[i];
        j.u[even_index(i)] = m * r.up[i] / x1 * x[even_index(i)];
        j.u[odd_index(i)] = -m * r.down[i] / x1 * x[odd_index(i)];
    }
    j.d[kDcIndex] = config.dc_decay_alpha;
    j.u[kDcIndex] = 0.0;
    return j;
}

}  // namespace

Covariance transition_jacobian(const EstimatorConfig& config, const StateVector& x) {
    const auto j = jacobian_parts(config, x);
    Covariance f = j.d.asDiagonal();
    f.col(kRotationIndex) += j.u;
    return f;
}

MeasurementRow measurement_row() {
    MeasurementRow h = MeasurementRow::Zero();
    for (int i = 0; i < kTrackedComponents; ++i) {
        h[even_index(i)] = Complex(0.0, -0.5);
        h[odd_index(i)] = Complex(0.0, 0.5);
    }
    h[kDcIndex] = 1.0;
    return h;
}

Complex measure(const StateVector& x) { return (measurement_row() * x)(0, 0); }

EstimatorState predict(const EstimatorConfig& config, const EstimatorState& state) {
    const auto j = jacobian_parts(config, state.x);
    EstimatorState out;
    out.x = transition(config, state.x);

    // F P Fᴴ expanded for F = D + u e0ᵀ:
    //   D P Dᴴ + a uᴴ + u aᴴ + P00 u uᴴ,   a = D P e0.
    const Covariance& p = state.p;
    const StateVector a = j.d.cwiseProduct(p.col(kRotationIndex));
    out.p = j.d.asDiagonal() * p * j.d.conjugate().asDiagonal();
    out.p += a * j.u.adjoint() + j.u * a.adjoint();
    out.p += p(kRotationIndex, kRotationIndex) * (j.u * j.u.adjoint());
    for (int i = 0; i < kStateSize; ++i) out.p(i, i) += config.process_noise_q[static_cast<std::size_t>(i)];
    out.k = state.k + 1;
    return out;
}

EstimatorState update(const EstimatorConfig& config, const EstimatorState& state, double z) {
    const MeasurementRow h = measurement_row();
    const StateVector g = state.p * h.adjoint();
    const double s = (h * g)(0, 0).real() + config.measurement_noise_r;
    if (!(std::abs(s) > 1e-300) || !std::isfinite(s)) throw DivergenceError("innovation variance not invertible");

    EstimatorState out;
    const StateVector gain = g / s;
    const Complex innovation = z - (h * state.x)(0, 0);
    out.x = state.x + gain * innovation;
    // (I - K H) P, written so the result stays Hermitian: K H P = g gᴴ / s.
    out.p = state.p - (g * g.adjoint()) / s;
    out.k = state.k;

    if (config.conjugate_enforcement) {
        for (int i = 0; i < kTrackedComponents; ++i) {
            const Complex e = 0.5 * (out.x[even_index(i)] + std::conj(out.x[odd_index(i)]));
            out.x[even_index(i)] = e;
            out.x[odd_index(i)] = std::conj(e);
        }
        out.x[kDcIndex] = out.x[kDcIndex].real();
    }
    if (!out.x.allFinite()) throw DivergenceError("estimator state became non-finite");
    return out;
}

HarmonicEstimates extract(const EstimatorConfig& config, const EstimatorState& state) {
    HarmonicEstimates e;
    const Complex x1 = state.x[kRotationIndex];
    const double w = std::arg(x1);
    for (int i = 0; i < kTrackedComponents; ++i) {
        const Complex env = state.x[even_index(i)];
        e.amplitudes[static_cast<std::size_t>(i)] = std::abs(env);
        e.phases[static_cast<std::size_t>(i)] =
            wrap_phase(std::arg(env) - component_order(i) * static_cast<double>(state.k) * w);
    }
    e.f1_est = w / (kTwoPi * config.ts);
    e.dc_est = state.x[kDcIndex].real();
    return e;
}

StepResult step(const EstimatorConfig& config, const EstimatorState& state, double z) {
    StepResult r;
    r.state = update(config, predict(config, state), z);
    r.estimates = extract(config, r.state);
    return r;
}

bool is_healthy(const EstimatorState& state) {
    const double m = std::abs(state.x[kRotationIndex]);
    return m > 0.5 && m < 2.0;
}

HarmonicTracker::HarmonicTracker(EstimatorConfig config) : config_(std::move(config)), state_(init(config_)) {
    estimates_ = extract(config_, state_);
}

const HarmonicEstimates& HarmonicTracker::push(double z) {
    state_ = update(config_, predict(config_, state_), z);
    estimates_ = extract(config_, state_);
    return estimates_;
}

void write_estimates_header(std::ostream& out) {
    out << "time_s";
    for (int n = 1; n <= 9; ++n) out << ",a" << n;
    out << ",a_5_4,f1_hz,dc\n";
}

void write_estimates_row(std::ostream& out, double t, const HarmonicEstimates& est) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.9g", t);
    out << buf;
    for (double a : est.amplitudes) {
        std::snprintf(buf, sizeof buf, ",%.9g", a);
        out << buf;
    }
    std::snprintf(buf, sizeof buf, ",%.9g,%.9g\n", est.f1_est, est.dc_est);
    out << buf;
}

}  // namespace islanding::ekf
