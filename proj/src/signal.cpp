#include "islanding/signal.hpp"

#include "islanding/errors.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <ostream>
#include <sstream>

namespace islanding::signal {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double normalize_phase(double phase) {
    double p = std::fmod(phase, kTwoPi);
    if (p < 0.0) p += kTwoPi;
    if (p >= kTwoPi) p = 0.0;
    return p;
}

}  // namespace

std::string HarmonicOrder::to_string() const {
    if (den == 1) return std::to_string(num);
    return std::to_string(num) + "/" + std::to_string(den);
}

HarmonicOrder HarmonicOrder::parse(std::string_view text) {
    std::string t = trim(text);
    auto slash = t.find('/');
    try {
        std::size_t used = 0;
        HarmonicOrder o;
        if (slash == std::string::npos) {
            o.num = std::stoi(t, &used);
            if (used != t.size()) throw InvalidArgument("");
        } else {
            std::string a = t.substr(0, slash), b = t.substr(slash + 1);
            o.num = std::stoi(a, &used);
            if (used != a.size()) throw InvalidArgument("");
            o.den = std::stoi(b, &used);
            if (used != b.size()) throw InvalidArgument("");
        }
        if (o.num <= 0 || o.den <= 0) throw InvalidArgument("");
        int g = std::gcd(o.num, o.den);
        return {o.num / g, o.den / g};
    } catch (const std::exception&) {
        throw InvalidArgument("invalid harmonic order `" + t + "`");
    }
}

HarmonicComponent::HarmonicComponent(HarmonicOrder o, double a, double ph)
    : order(o), amplitude(a), phase(normalize_phase(ph)) {
    if (o.num <= 0 || o.den <= 0) throw InvalidArgument("harmonic order must be positive");
    if (!(a >= 0.0)) throw InvalidArgument("harmonic amplitude must be >= 0");
}

void WaveformSpec::validate() const {
    if (!(fundamental_hz > 0.0)) throw InvalidArgument("fundamental_hz must be > 0");
    if (!(dc_decay >= 0.0)) throw InvalidArgument("dc_decay must be >= 0");
    if (!(noise_std >= 0.0)) throw InvalidArgument("noise_std must be >= 0");
    for (const auto& c : components) {
        if (c.order.num <= 0 || c.order.den <= 0) throw InvalidArgument("harmonic order must be positive");
        if (!(c.amplitude >= 0.0)) throw InvalidArgument("harmonic amplitude must be >= 0");
    }
}

void SampledSignal::validate() const {
    if (!(ts > 0.0)) throw InvalidArgument("sampling interval must be > 0");
    if (samples.empty()) throw InvalidArgument("signal must contain at least one sample");
    for (double v : samples) {
        if (!std::isfinite(v)) throw InvalidArgument("signal contains a non-finite sample");
    }
}

double NoiseStream::next() {
    constexpr double kScale = 0x1.0p-53;
    const std::uint64_t a = engine_();
    const std::uint64_t b = engine_();
    const double u1 = static_cast<double>((a >> 11) + 1) * kScale;
    const double u2 = static_cast<double>(b >> 11) * kScale;
    return stddev_ * std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
}

double evaluate(const WaveformSpec& spec, double t) {
    const double omega = kTwoPi * spec.fundamental_hz;
    double v = 0.0;
    for (const auto& c : spec.components) {
        v += c.amplitude * std::sin(c.order.value() * omega * t + c.phase);
    }
    if (spec.dc_amplitude != 0.0) v += spec.dc_amplitude * std::exp(-spec.dc_decay * t);
    return v;
}

std::size_t sample_count(double duration, double ts) {
    if (!(ts > 0.0)) throw InvalidArgument("sampling interval must be > 0");
    if (!(duration > 0.0)) throw InvalidArgument("duration must be > 0");
    const double n = std::round(duration / ts);
    if (n < 1.0) throw InvalidArgument("duration must cover at least one sample interval");
    return static_cast<std::size_t>(n);
}

namespace {

void append_segment(std::vector<double>& out, const WaveformSpec& spec, std::size_t first, std::size_t count,
                    double ts) {
    spec.validate();
    NoiseStream noise(spec.seed, spec.noise_std);
    out.reserve(out.size() + count);
    for (std::size_t i = 0; i < count; ++i) {
        const double t = static_cast<double>(first + i) * ts;
        double v = evaluate(spec, t);
        if (spec.noise_std > 0.0) v += noise.next();
        out.push_back(v);
    }
}

}  // namespace

SampledSignal synthesize(const WaveformSpec& spec, double duration, double ts) {
    if (!(ts > 0.0)) throw InvalidArgument("sampling interval must be > 0");
    if (!(duration >= ts)) throw InvalidArgument("duration must be >= ts");
    SampledSignal s{ts, 0.0, {}};
    append_segment(s.samples, spec, 0, sample_count(duration, ts), ts);
    return s;
}

SampledSignal splice(std::span<const Segment> segments, double ts) {
    if (segments.empty()) throw InvalidArgument("splice needs at least one segment");
    if (!(ts > 0.0)) throw InvalidArgument("sampling interval must be > 0");
    SampledSignal s{ts, 0.0, {}};
    for (const auto& seg : segments) {
        if (!(seg.duration >= ts)) throw InvalidArgument("segment duration must be >= ts");
        append_segment(s.samples, seg.spec, s.samples.size(), sample_count(seg.duration, ts), ts);
    }
    return s;
}

std::string to_key_value(const WaveformSpec& spec, const std::string& prefix) {
    std::ostringstream out;
    out.precision(17);
    out << prefix << "fundamental_hz = " << spec.fundamental_hz << '\n';
    for (const auto& c : spec.components) {
        out << prefix << "component = " << c.order.to_string() << ' ' << c.amplitude << ' ' << c.phase << '\n';
    }
    out << prefix << "dc_amplitude = " << spec.dc_amplitude << '\n';
    out << prefix << "dc_decay = " << spec.dc_decay << '\n';
    out << prefix << "noise_std = " << spec.noise_std << '\n';
    out << prefix << "seed = " << spec.seed << '\n';
    return out.str();
}

WaveformSpec waveform_from_key_value(const KeyValueDoc& doc, const std::string& prefix) {
    WaveformSpec spec;
    spec.fundamental_hz = doc.get_double(prefix + "fundamental_hz", spec.fundamental_hz);
    spec.dc_amplitude = doc.get_double(prefix + "dc_amplitude", 0.0);
    spec.dc_decay = doc.get_double(prefix + "dc_decay", 0.0);
    spec.noise_std = doc.get_double(prefix + "noise_std", 0.0);
    const long long seed = doc.get_int(prefix + "seed", 0);
    spec.seed = static_cast<std::uint64_t>(seed);
    for (const auto* e : doc.get_all(prefix + "component")) {
        auto tok = split_whitespace(e->value);
        if (tok.size() < 2 || tok.size() > 3) throw_entry_error(*e, "expected `<order> <amplitude> [phase]`");
        try {
            HarmonicOrder order = HarmonicOrder::parse(tok[0]);
            double amp = parse_double(tok[1]);
            double phase = tok.size() == 3 ? parse_double(tok[2]) : 0.0;
            spec.components.emplace_back(order, amp, phase);
        } catch (const InvalidArgument& ex) {
            throw_entry_error(*e, ex.what());
        }
    }
    try {
        spec.validate();
    } catch (const InvalidArgument& ex) {
        throw ConfigError(prefix + "*: " + ex.what());
    }
    return spec;
}

void write_csv(std::ostream& out, const SampledSignal& signal) {
    out << "time_s,value_pu\n";
    char buf[64];
    for (std::size_t k = 0; k < signal.size(); ++k) {
        std::snprintf(buf, sizeof buf, "%.9g,%.9g\n", signal.time_at(k), signal.samples[k]);
        out << buf;
    }
}

SampledSignal read_csv(std::istream& in, const std::string& source) {
    std::vector<double> times, values;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        auto comma = t.find(',');
        if (comma == std::string::npos) throw ConfigError(source, line_no, "expected two comma-separated columns");
        std::string a = trim(std::string_view(t).substr(0, comma));
        std::string b = trim(std::string_view(t).substr(comma + 1));
        double ta = 0.0, vb = 0.0;
        try {
            ta = parse_double(a);
            vb = parse_double(b);
        } catch (const InvalidArgument&) {
            if (times.empty() && values.empty() && line_no == 1) continue;  // header
            throw ConfigError(source, line_no, "non-numeric value in `" + t + "`");
        }
        if (!std::isfinite(vb)) throw ConfigError(source, line_no, "non-finite sample");
        times.push_back(ta);
        values.push_back(vb);
    }
    if (times.size() < 2) throw ConfigError(source, 0, "need at least two samples");
    const double ts = (times.back() - times.front()) / static_cast<double>(times.size() - 1);
    if (!(ts > 0.0)) throw ConfigError(source, 0, "timestamps must increase");
    for (std::size_t k = 1; k < times.size(); ++k) {
        const double dt = times[k] - times[k - 1];
        if (std::abs(dt - ts) > 0.01 * ts) {
            throw ConfigError(source, 0, "non-uniform time spacing at sample " + std::to_string(k));
        }
    }
    return SampledSignal{ts, times.front(), std::move(values)};
}

}  // namespace islanding::signal
