#pragma once

// Windowed RMS tracking and the average rate of change of voltage (ARCV):
// the total variation of the per-unit RMS trajectory inside a window divided
// by the window length, in pu/s.

#include "islanding/signal.hpp"

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <vector>

namespace islanding::measures {

struct RmsSeries {
    double stride = 0.0;
    double t0 = 0.0;  // time of values[0]
    std::vector<double> values;

    double time_at(std::size_t i) const { return t0 + static_cast<double>(i) * stride; }
    std::size_t size() const { return values.size(); }
};

struct ArcvValue {
    double value = 0.0;  // pu/s
    double window = 0.0;
    double t_end = 0.0;
};

/// RMS over the trailing `window` (rounded to whole samples), reported every
/// `stride` seconds. The first value lands on the sample that completes the
/// first full window. Throws InvalidArgument when the window exceeds the signal.
RmsSeries rms_track(const signal::SampledSignal& signal, double window, double stride);

/// ARCV over the trailing window ending at the last point of the series.
ArcvValue arcv(const RmsSeries& series, double window);
/// ARCV over the window ending at the point nearest to `t_end`.
ArcvValue arcv_ending_at(const RmsSeries& series, double t_end, double window);
/// ARCV over the raw points [first, last] of a series (no time lookup).
double total_variation_rate(const std::vector<double>& values, std::size_t first, std::size_t last, double window);

/// Streaming RMS over a fixed sample window, emitting every `stride_samples`
/// once the first window is full. Matches rms_track sample for sample.
class RmsTracker {
public:
    RmsTracker(std::size_t window_samples, std::size_t stride_samples);

    /// Returns the new RMS point when one is due at this sample.
    std::optional<double> push(double sample);
    std::size_t window_samples() const { return window_; }
    std::size_t stride_samples() const { return stride_; }

private:
    std::size_t window_;
    std::size_t stride_;
    std::vector<double> ring_;  // squared samples
    std::size_t head_ = 0;
    std::size_t seen_ = 0;
};

/// Converts a time span to a whole, positive number of samples.
std::size_t samples_for(double seconds, double ts);

/// CSV `time_s,value`.
void write_csv(std::ostream& out, const RmsSeries& series);

}  // namespace islanding::measures
