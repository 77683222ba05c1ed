#include "islanding/measures.hpp"

#include "islanding/errors.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>

namespace islanding::measures {

std::size_t samples_for(double seconds, double ts) {
    if (!(ts > 0.0)) throw InvalidArgument("sampling interval must be > 0");
    if (!(seconds > 0.0)) throw InvalidArgument("time span must be > 0");
    const double n = std::round(seconds / ts);
    if (n < 1.0) throw InvalidArgument("time span shorter than one sample");
    return static_cast<std::size_t>(n);
}

RmsTracker::RmsTracker(std::size_t window_samples, std::size_t stride_samples)
    : window_(window_samples), stride_(stride_samples), ring_(window_samples, 0.0) {
    if (window_ == 0 || stride_ == 0) throw InvalidArgument("RMS window and stride must be >= 1 sample");
    if (stride_ > window_) throw InvalidArgument("RMS stride must not exceed the window");
}

std::optional<double> RmsTracker::push(double sample) {
    ring_[head_] = sample * sample;
    head_ = (head_ + 1) % window_;
    ++seen_;
    if (seen_ < window_ || (seen_ - window_) % stride_ != 0) return std::nullopt;
    // Oldest-to-newest summation so offline and streaming results are identical.
    double sum = 0.0;
    for (std::size_t i = 0; i < window_; ++i) sum += ring_[(head_ + i) % window_];
    return std::sqrt(sum / static_cast<double>(window_));
}

RmsSeries rms_track(const signal::SampledSignal& signal, double window, double stride) {
    const std::size_t n = samples_for(window, signal.ts);
    const std::size_t s = samples_for(stride, signal.ts);
    if (n > signal.size()) throw InvalidArgument("RMS window longer than the signal");
    RmsTracker tracker(n, s);
    RmsSeries out;
    out.stride = static_cast<double>(s) * signal.ts;
    out.t0 = signal.time_at(n - 1);
    out.values.reserve((signal.size() - n) / s + 1);
    for (double v : signal.samples) {
        if (auto r = tracker.push(v)) out.values.push_back(*r);
    }
    return out;
}

double total_variation_rate(const std::vector<double>& values, std::size_t first, std::size_t last, double window) {
    if (!(window > 0.0)) throw InvalidArgument("ARCV window must be > 0");
    if (last >= values.size() || first > last) throw InvalidArgument("ARCV point range out of bounds");
    double tv = 0.0;
    for (std::size_t i = first + 1; i <= last; ++i) tv += std::abs(values[i] - values[i - 1]);
    return tv / window;
}

namespace {

std::size_t increments_for(const RmsSeries& series, double window) {
    if (!(window > 0.0)) throw InvalidArgument("ARCV window must be > 0");
    if (!(series.stride > 0.0)) throw InvalidArgument("RMS series stride must be > 0");
    const double m = std::round(window / series.stride);
    if (m < 1.0) throw InvalidArgument("ARCV window shorter than the RMS stride");
    return static_cast<std::size_t>(m);
}

}  // namespace

ArcvValue arcv_ending_at(const RmsSeries& series, double t_end, double window) {
    const std::size_t m = increments_for(series, window);
    if (series.size() < m + 1) throw InvalidArgument("RMS series shorter than the ARCV window");
    const double pos = std::round((t_end - series.t0) / series.stride);
    if (pos < static_cast<double>(m) || pos > static_cast<double>(series.size() - 1)) {
        throw InvalidArgument("ARCV window ending at t_end is not covered by the RMS series");
    }
    const auto last = static_cast<std::size_t>(pos);
    return {total_variation_rate(series.values, last - m, last, window), window, series.time_at(last)};
}

ArcvValue arcv(const RmsSeries& series, double window) {
    if (series.values.empty()) throw InvalidArgument("empty RMS series");
    return arcv_ending_at(series, series.time_at(series.size() - 1), window);
}

void write_csv(std::ostream& out, const RmsSeries& series) {
    out << "time_s,value\n";
    char buf[64];
    for (std::size_t i = 0; i < series.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.9g,%.9g\n", series.time_at(i), series.values[i]);
        out << buf;
    }
}

}  // namespace islanding::measures
