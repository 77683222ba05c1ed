#pragma once

// Single-channel voltage waveform synthesis:
//
//   v(k·ts) = Σ_n A_n sin(n·ω·k·ts + φ_n) + A_dc·exp(-σ·k·ts) + ε_k
//
// with ω = 2π·fundamental_hz and ε_k zero-mean Gaussian noise drawn from a
// seeded NoiseStream (see below for the exact generator).

#include "islanding/keyvalue.hpp"

#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace islanding::signal {

/// Positive rational multiple of the fundamental (1, 2, ..., 5/4, ...).
struct HarmonicOrder {
    int num = 1;
    int den = 1;

    constexpr double value() const { return static_cast<double>(num) / den; }
    std::string to_string() const;
    static HarmonicOrder parse(std::string_view text);

    friend constexpr bool operator==(HarmonicOrder a, HarmonicOrder b) {
        return static_cast<long long>(a.num) * b.den == static_cast<long long>(b.num) * a.den;
    }
};

struct HarmonicComponent {
    HarmonicOrder order;
    double amplitude = 0.0;  // pu
    double phase = 0.0;      // rad, kept in [0, 2π)

    HarmonicComponent() = default;
    HarmonicComponent(HarmonicOrder order, double amplitude, double phase);
};

struct WaveformSpec {
    double fundamental_hz = 60.0;
    std::vector<HarmonicComponent> components;
    double dc_amplitude = 0.0;
    double dc_decay = 0.0;  // σ, 1/s
    double noise_std = 0.0;
    std::uint64_t seed = 0;

    void validate() const;
};

struct SampledSignal {
    double ts = 0.0;
    double t0 = 0.0;
    std::vector<double> samples;

    double time_at(std::size_t k) const { return t0 + static_cast<double>(k) * ts; }
    std::size_t size() const { return samples.size(); }
    void validate() const;
};

/// Gaussian noise source shared by every synthesizer in the project.
///
/// Generator: std::mt19937_64 constructed with `seed`. Each draw consumes two
/// 64-bit outputs a, b, maps them to u1 = ((a >> 11) + 1)·2^-53 ∈ (0, 1] and
/// u2 = (b >> 11)·2^-53 ∈ [0, 1), and returns the Box–Muller cosine branch
/// std·sqrt(-2·ln u1)·cos(2π·u2).
class NoiseStream {
public:
    NoiseStream(std::uint64_t seed, double stddev) : engine_(seed), stddev_(stddev) {}
    double next();

private:
    std::mt19937_64 engine_;
    double stddev_;
};

/// Noiseless value of the waveform at absolute time t.
double evaluate(const WaveformSpec& spec, double t);

/// Number of samples in a record of `duration` at interval `ts` (rounded to nearest).
std::size_t sample_count(double duration, double ts);

SampledSignal synthesize(const WaveformSpec& spec, double duration, double ts);

struct Segment {
    WaveformSpec spec;
    double duration = 0.0;
};

/// Concatenates segments on one continuous time axis: sample k of the result
/// is evaluated at t = k·ts regardless of which segment it falls in. Each
/// segment owns an independent noise stream seeded from its own spec.
SampledSignal splice(std::span<const Segment> segments, double ts);

// Key-value form, under `prefix` (default "waveform."):
//   fundamental_hz, dc_amplitude, dc_decay, noise_std, seed
//   component = <order> <amplitude> <phase>   (repeatable; order like 5 or 5/4)
std::string to_key_value(const WaveformSpec& spec, const std::string& prefix = "waveform.");
WaveformSpec waveform_from_key_value(const KeyValueDoc& doc, const std::string& prefix = "waveform.");

/// Two-column CSV `time_s,value_pu`, 9 significant digits, with header.
void write_csv(std::ostream& out, const SampledSignal& signal);
/// Reads two-column CSV (header optional). Throws ConfigError on
/// malformed rows or non-uniform time spacing.
SampledSignal read_csv(std::istream& in, const std::string& source = "<csv>");

}  // namespace islanding::signal
