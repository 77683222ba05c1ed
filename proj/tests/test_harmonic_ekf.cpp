#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "islanding/errors.hpp"
#include "islanding/harmonic_ekf.hpp"
#include "oracles/least_squares.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

using namespace islanding;
using namespace islanding::ekf;

namespace {

constexpr double kTs = 1.0 / 7680.0;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct Tone {
    double order, amplitude, phase;
};

double tones_at(const std::vector<Tone>& tones, double f1, std::int64_t k) {
    double v = 0.0;
    for (const auto& t : tones) v += t.amplitude * std::sin(t.order * kTwoPi * f1 * static_cast<double>(k) * kTs + t.phase);
    return v;
}

// Exact in-model state describing `tones` at sample k (60 Hz rotation).
EstimatorState exact_state(const std::vector<Tone>& tones, std::int64_t k) {
    EstimatorState s;
    s.x.setZero();
    s.x[kRotationIndex] = std::polar(1.0, kTwoPi * 60.0 * kTs);
    for (const auto& t : tones) {
        int i = t.order == 1.25 ? kInterharmonicComponent : static_cast<int>(t.order) - 1;
        const Complex e = std::polar(t.amplitude, t.order * kTwoPi * 60.0 * static_cast<double>(k) * kTs + t.phase);
        s.x[even_index(i)] = e;
        s.x[odd_index(i)] = std::conj(e);
    }
    s.p = Covariance::Identity();
    s.k = k;
    return s;
}

std::vector<Tone> random_tones(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> amp(0.01, 1.0), ph(0.0, kTwoPi);
    std::vector<Tone> tones;
    for (double m : oracle::tracked_orders()) tones.push_back({m, amp(rng), ph(rng)});
    return tones;
}

}  // namespace

TEST_CASE("init") {
    auto cfg = EstimatorConfig::defaults(kTs, 60.0);
    cfg.initial_covariance_rotation = 10.0;
    auto s = init(cfg);
    CHECK(std::arg(s.x[kRotationIndex]) == doctest::Approx(0.0490874).epsilon(1e-6));
    CHECK(std::abs(s.x[kRotationIndex]) == doctest::Approx(1.0));
    for (int i = 0; i < kStateSize; ++i) {
        for (int j = 0; j < kStateSize; ++j) CHECK(s.p(i, j) == Complex(i == j ? 10.0 : 0.0, 0.0));
    }
    auto e = extract(cfg, s);
    CHECK(e.f1_est == doctest::Approx(60.0));
    for (double a : e.amplitudes) CHECK(a == doctest::Approx(cfg.initial_envelope));
    CHECK(e.dc_est == doctest::Approx(cfg.initial_envelope));

    auto d = init(EstimatorConfig::defaults());
    CHECK(d.p(kRotationIndex, kRotationIndex).real() == doctest::Approx(1e-6));
    CHECK(d.p(1, 1).real() == doctest::Approx(10.0));
}

TEST_CASE("config validation and keys") {
    auto cfg = EstimatorConfig::defaults();
    cfg.measurement_noise_r = 0.0;
    CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
    auto doc = KeyValueDoc::parse_string(
        "estimator.q_envelope = 1e-7\nestimator.q_interharmonic = 1e-5\nestimator.r = 0.01\n");
    auto c = estimator_config_from(doc, kTs, 60.0);
    CHECK(c.process_noise_q[3] == 1e-7);
    CHECK(c.process_noise_q[even_index(kInterharmonicComponent)] == 1e-5);
    CHECK(c.process_noise_q[kRotationIndex] == 1e-8);
    CHECK(c.measurement_noise_r == 0.01);
    CHECK_THROWS_AS(estimator_config_from(KeyValueDoc::parse_string("estimator.p0 = -1\n"), kTs, 60.0), ConfigError);
}

TEST_CASE("prediction of a known sine") {
    const std::vector<Tone> tones{{1, 1.0, 0.7}, {5, 0.1, 0.2}, {1.25, 0.05, 1.9}};
    auto cfg = EstimatorConfig::defaults();
    for (std::int64_t k : {0, 17, 500}) {
        auto next = predict(cfg, exact_state(tones, k));
        CHECK(std::abs(measure(next.x).real() - tones_at(tones, 60.0, k + 1)) < 1e-10);
        CHECK(next.k == k + 1);
    }
}

TEST_CASE("zero process noise propagates F P F^H") {
    auto cfg = EstimatorConfig::defaults();
    auto s = init(cfg);
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n;
    Eigen::Matrix<Complex, kStateSize, kStateSize> a;
    for (int i = 0; i < kStateSize; ++i)
        for (int j = 0; j < kStateSize; ++j) a(i, j) = Complex(n(rng), n(rng));
    s.p = a * a.adjoint();
    for (int i = 0; i < kStateSize; ++i) s.x[i] = s.x[i] + Complex(0.3 * n(rng), 0.3 * n(rng));
    cfg.process_noise_q.fill(0.0);
    auto next = predict(cfg, s);
    const Covariance f = transition_jacobian(cfg, s.x);
    const Covariance expect = f * s.p * f.adjoint();
    CHECK((next.p - expect).norm() <= 1e-12 * expect.norm());
    CHECK((next.p - next.p.adjoint()).norm() <= 1e-12 * expect.norm());
    Eigen::SelfAdjointEigenSolver<Covariance> es(next.p);
    CHECK(es.eigenvalues().minCoeff() >= -1e-9 * expect.norm());
}

TEST_CASE("full-cycle rotation identity") {
    auto cfg = EstimatorConfig::defaults();
    const std::vector<Tone> tones{{1, 0.8, 0.4}, {3, 0.2, 1.0}, {9, 0.05, 2.0}};
    auto s = exact_state(tones, 0);
    Complex p = 1.0;
    for (int k = 0; k < 128; ++k) p *= s.x[kRotationIndex];
    CHECK(std::abs(p - 1.0) < 1e-9);
    auto cur = s;
    for (int k = 0; k < 128; ++k) cur = predict(cfg, cur);
    for (int i = 1; i < kDcIndex; ++i) CHECK(std::abs(cur.x[i] - s.x[i]) < 1e-9);
}

TEST_CASE("divergence guard") {
    auto cfg = EstimatorConfig::defaults();
    auto s = init(cfg);
    s.x[kRotationIndex] = 1e-7;
    CHECK_THROWS_AS(predict(cfg, s), DivergenceError);
    CHECK_FALSE(is_healthy(s));
    CHECK(is_healthy(init(cfg)));
}

TEST_CASE("measurement model") {
    StateVector x = StateVector::Zero();
    const double a = 0.37, th = 1.1;
    x[even_index(4)] = std::polar(a, th);
    x[odd_index(4)] = std::polar(a, -th);
    x[kRotationIndex] = 5.0;  // the rotation slot does not enter h
    CHECK(std::abs(measure(x) - Complex(a * std::sin(th), 0.0)) < 1e-15);
    x[kDcIndex] = 0.25;
    CHECK(measure(x).real() == doctest::Approx(a * std::sin(th) + 0.25));
}

TEST_CASE("zero innovation is a fixed point") {
    auto cfg = EstimatorConfig::defaults();
    const std::vector<Tone> tones{{1, 1.0, 0.3}, {7, 0.02, 0.1}};
    auto s = predict(cfg, exact_state(tones, 10));
    auto u = update(cfg, s, measure(s.x).real());
    CHECK((u.x - s.x).norm() < 1e-12);
}

TEST_CASE("update keeps the conjugate structure and a real reconstruction") {
    auto cfg = EstimatorConfig::defaults();
    HarmonicTracker t(cfg);
    std::mt19937_64 rng(11);
    auto tones = random_tones(rng);
    for (int k = 0; k < 1000; ++k) {
        t.push(tones_at(tones, 60.0, k));
        const auto& x = t.state().x;
        for (int i = 0; i < kTrackedComponents; ++i) REQUIRE(x[odd_index(i)] == std::conj(x[even_index(i)]));
        REQUIRE(std::abs(measure(x).imag()) < 1e-10);
    }
}

TEST_CASE("short-record tracking") {
    auto cfg = EstimatorConfig::defaults();
    SUBCASE("in-model residual after 2 cycles") {
        const std::vector<Tone> tones{{1, 1.0, 0.0}, {5, 0.1, 0.0}, {1.25, 0.05, 0.0}};
        HarmonicTracker t(cfg);
        double s2 = 0.0;
        int n = 0;
        for (int k = 0; k < 384; ++k) {
            const double z = tones_at(tones, 60.0, k);
            const double r = z - measure(predict(cfg, t.state()).x).real();
            if (k >= 256) {
                s2 += r * r;
                ++n;
            }
            t.push(z);
        }
        CHECK(std::sqrt(s2 / n) < 1e-3);
    }
    SUBCASE("zero signal for 5 cycles") {
        HarmonicTracker t(cfg);
        for (int k = 0; k < 640; ++k) t.push(0.0);
        for (double a : t.estimates().amplitudes) CHECK(a < 1e-6);
    }
    SUBCASE("unit sine for 2 cycles") {
        HarmonicTracker t(cfg);
        for (int k = 0; k < 256; ++k) t.push(std::sin(kTwoPi * 60.0 * k * kTs));
        CHECK(t.estimates().harmonic(1) == doctest::Approx(1.0).epsilon(0.02));
    }
    SUBCASE("75 Hz component for 2 cycles") {
        HarmonicTracker t(cfg);
        for (int k = 0; k < 256; ++k) t.push(0.05 * std::sin(kTwoPi * 75.0 * k * kTs));
        CHECK(std::abs(t.estimates().interharmonic() - 0.05) <= 0.005);
    }
}

TEST_CASE("extract") {
    auto cfg = EstimatorConfig::defaults();
    EstimatorState s;
    s.x.setZero();
    s.x[kRotationIndex] = std::polar(1.0, kTwoPi * 60.0 * kTs);
    s.x[even_index(0)] = std::polar(0.5, 0.3);
    s.k = 0;
    auto e = extract(cfg, s);
    CHECK(e.harmonic(1) == doctest::Approx(0.5));
    CHECK(e.phases[0] == doctest::Approx(0.3));
    CHECK(e.f1_est == doctest::Approx(60.0));

    // A saturated 5/4 envelope read back in the detector's reporting scale.
    const double scale = 25.0;
    s.x[even_index(kInterharmonicComponent)] = std::polar(172.64 / scale, 2.0);
    CHECK(extract(cfg, s).interharmonic() * scale == doctest::Approx(172.64));

    std::ostringstream out;
    write_estimates_header(out);
    CHECK(out.str() == "time_s,a1,a2,a3,a4,a5,a6,a7,a8,a9,a_5_4,f1_hz,dc\n");
}

TEST_CASE("analytic Jacobian matches central differences") {
    auto cfg = EstimatorConfig::defaults();
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> u(-1.0, 1.0), mag(0.9, 1.1), ang(0.01, 0.2);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        StateVector x;
        x[kRotationIndex] = std::polar(mag(rng), ang(rng));
        for (int i = 1; i < kStateSize; ++i) x[i] = Complex(u(rng), u(rng));
        const Covariance f = transition_jacobian(cfg, x);
        for (int j = 0; j < kStateSize; ++j) {
            const double h = 1e-6;
            StateVector xp = x, xm = x;
            xp[j] += h;
            xm[j] -= h;
            const StateVector col = (transition(cfg, xp) - transition(cfg, xm)) / (2.0 * h);
            for (int i = 0; i < kStateSize; ++i) {
                const double err = std::abs(col[i] - f(i, j)) / std::max(1.0, std::abs(f(i, j)));
                worst = std::max(worst, err);
            }
        }
    }
    CHECK(worst < 1e-6);
}

TEST_CASE("covariance stays Hermitian positive semidefinite") {
    auto cfg = EstimatorConfig::defaults();
    HarmonicTracker t(cfg);
    std::mt19937_64 rng(5);
    auto tones = random_tones(rng);
    double worst_min_eig = 1.0, worst_asym = 0.0;
    for (int k = 0; k < 10000; ++k) {
        t.push(tones_at(tones, 60.0, k));
        const auto& p = t.state().p;
        worst_asym = std::max(worst_asym, (p - p.adjoint()).norm());
        if (k % 10 == 0) {
            Eigen::SelfAdjointEigenSolver<Covariance> es(p, Eigen::EigenvaluesOnly);
            worst_min_eig = std::min(worst_min_eig, es.eigenvalues().minCoeff());
        }
    }
    CHECK(worst_asym < 1e-9);
    CHECK(worst_min_eig >= -1e-9);
}

TEST_CASE("agreement with the least-squares oracle after 3 cycles") {
    auto cfg = EstimatorConfig::defaults();
    std::mt19937_64 rng(99);
    const auto orders = oracle::tracked_orders();
    int failures = 0;
    for (int trial = 0; trial < 20; ++trial) {
        auto tones = random_tones(rng);
        std::vector<double> z;
        for (int k = 0; k < 384; ++k) z.push_back(tones_at(tones, 60.0, k));
        HarmonicTracker t(cfg);
        for (double v : z) t.push(v);
        auto fit = oracle::fit_harmonics(std::span<const double>(z).subspan(256), 256, kTs, 60.0, orders, false);
        for (int i = 0; i < kTrackedComponents; ++i) {
            const double est = t.estimates().amplitudes[static_cast<std::size_t>(i)];
            if (std::abs(est - fit.amplitudes[static_cast<std::size_t>(i)]) > 0.01 * fit.amplitudes[static_cast<std::size_t>(i)]) ++failures;
            if (std::abs(est - tones[static_cast<std::size_t>(i)].amplitude) > 0.02 * tones[static_cast<std::size_t>(i)].amplitude) ++failures;
        }
    }
    CHECK(failures == 0);
}

TEST_CASE("frequency tracking near nominal") {
    auto cfg = EstimatorConfig::defaults();
    for (double f : {59.5, 59.75, 60.0, 60.25, 60.5}) {
        CAPTURE(f);
        HarmonicTracker t(cfg);
        const std::vector<Tone> tones{{1, 1.0, 0.3}, {5, 0.05, 0.0}};
        const int five_cycles = static_cast<int>(std::ceil(5.0 / (f * kTs)));
        double worst = 0.0;
        for (int k = 0; k < 2 * five_cycles; ++k) {
            t.push(tones_at(tones, f, k));
            if (k >= five_cycles) worst = std::max(worst, std::abs(t.estimates().f1_est - f));
        }
        CHECK(worst < 0.01);
    }
}
