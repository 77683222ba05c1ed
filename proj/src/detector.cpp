#include "islanding/detector.hpp"

#include "islanding/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

namespace islanding::detector {

void Thresholds::validate() const {
    if (!(a75_min >= 0.0 && arcv_max > 0.0 && arcv_min > 0.0)) {
        throw InvalidArgument("thresholds must be positive (a75_min may be 0)");
    }
}

std::string to_string(Phase p) {
    switch (p) {
        case Phase::Monitoring: return "monitoring";
        case Phase::ArcvMeasurement: return "arcv_measurement";
        case Phase::AwaitingPowerShift: return "awaiting_power_shift";
        case Phase::Confirming: return "confirming";
        case Phase::Final: return "final";
    }
    return "unknown";
}

std::string to_string(Verdict v) {
    switch (v) {
        case Verdict::None: return "none";
        case Verdict::HarmonicRejected: return "harmonic_rejected";
        case Verdict::FaultFiltered: return "fault_filtered";
        case Verdict::NonIslanding: return "non_islanding";
        case Verdict::Islanding: return "islanding";
        case Verdict::Undetermined: return "undetermined";
    }
    return "unknown";
}

bool is_islanding(Verdict v) { return v == Verdict::Islanding; }

bool stage1_harmonic_gate(double a75, const Thresholds& thr) {
    if (!(a75 >= 0.0)) throw InvalidArgument("a75 must be >= 0");
    return a75 >= thr.a75_min;
}

bool stage2_fault_filter(double arcv1, const Thresholds& thr) {
    if (!(arcv1 >= 0.0)) throw InvalidArgument("arcv1 must be >= 0");
    return arcv1 <= thr.arcv_max;
}

Verdict stage3_confirm(double arcv2, const Thresholds& thr) {
    if (!(arcv2 >= 0.0)) throw InvalidArgument("arcv2 must be >= 0");
    return arcv2 >= thr.arcv_min ? Verdict::Islanding : Verdict::NonIslanding;
}

Verdict classify_triple(double a75, double arcv1, double arcv2, const Thresholds& thr) {
    if (!stage1_harmonic_gate(a75, thr)) return Verdict::HarmonicRejected;
    if (!stage2_fault_filter(arcv1, thr)) return Verdict::FaultFiltered;
    return stage3_confirm(arcv2, thr);
}

void Timing::validate() const {
    if (!(ts > 0.0 && f1 > 0.0)) throw InvalidArgument("ts and f1 must be > 0");
    if (!(warmup_cycles >= 0.0 && debounce_cycles >= 0.0 && arcv1_lookback_cycles >= 0.0 && settle_cycles >= 0.0)) {
        throw InvalidArgument("detector cycle counts must be >= 0");
    }
    if (!(arcv_window_cycles > 0.0)) throw InvalidArgument("ARCV window must be > 0 cycles");
    if (!(ack_timeout > 0.0 && deadline > 0.0)) throw InvalidArgument("ack timeout and deadline must be > 0");
    if (!(shift_fraction > 0.0 && shift_fraction <= 1.0)) throw InvalidArgument("shift fraction must be in (0, 1]");
    if (shift_dg < 1) throw InvalidArgument("shift DG id must be >= 1");
    if (!(disturbance_arcv >= 0.0)) throw InvalidArgument("disturbance ARCV must be >= 0");
}

Thresholds thresholds_from(const KeyValueDoc& doc) {
    Thresholds t;
    t.a75_min = doc.get_double("detector.a75_min", t.a75_min);
    t.arcv_max = doc.get_double("detector.arcv_max", t.arcv_max);
    t.arcv_min = doc.get_double("detector.arcv_min", t.arcv_min);
    try {
        t.validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError(std::string("detector thresholds: ") + e.what());
    }
    return t;
}

Timing timing_from(const KeyValueDoc& doc, double ts, double f1) {
    Timing t;
    t.ts = ts;
    t.f1 = f1;
    t.warmup_cycles = doc.get_double("detector.warmup_cycles", t.warmup_cycles);
    t.debounce_cycles = doc.get_double("detector.debounce_cycles", t.debounce_cycles);
    t.arcv_window_cycles = doc.get_double("detector.arcv_window_cycles", t.arcv_window_cycles);
    t.arcv1_lookback_cycles = doc.get_double("detector.arcv1_lookback_cycles", t.arcv1_lookback_cycles);
    t.settle_cycles = doc.get_double("detector.settle_cycles", t.settle_cycles);
    t.ack_timeout = doc.get_double("detector.ack_timeout", t.ack_timeout);
    t.deadline = doc.get_double("detector.deadline", t.deadline);
    t.shift_dg = static_cast<int>(doc.get_int("detector.shift_dg", t.shift_dg));
    t.shift_fraction = doc.get_double("detector.shift_fraction", t.shift_fraction);
    t.disturbance_arcv = doc.get_double("detector.disturbance_arcv", t.disturbance_arcv);
    try {
        t.validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError(std::string("detector timing: ") + e.what());
    }
    return t;
}

Detector::Detector(Thresholds thr, Timing timing, Actuator* actuator)
    : thr_(thr), timing_(timing), actuator_(actuator) {
    thr_.validate();
    timing_.validate();
}

std::optional<double> Detector::arcv_between(double t_start, double t_end) const {
    const double eps = 0.5 * timing_.ts;
    if (rms_t_.empty() || rms_t_.back() < t_end - eps) return std::nullopt;
    // Anchor at the last point at or before t_start so the increment straddling it counts.
    auto first = std::upper_bound(rms_t_.begin(), rms_t_.end(), t_start + eps) - rms_t_.begin() - 1;
    if (first < 0) first = 0;
    auto last = std::upper_bound(rms_t_.begin(), rms_t_.end(), t_end + eps) - rms_t_.begin() - 1;
    if (last <= first) return 0.0;
    double tv = 0.0;
    for (auto i = first + 1; i <= last; ++i) {
        tv += std::abs(rms_v_[static_cast<std::size_t>(i)] - rms_v_[static_cast<std::size_t>(i - 1)]);
    }
    return tv / (t_end - t_start);
}

void Detector::finalize(double t, Verdict v, const std::string& note) {
    tl_.verdict = v;
    tl_.phase = Phase::Final;
    tl_.t_verdict = t;
    if (!note.empty()) tl_.note = note;
    tl_.rows.push_back({"final", t, 0.0, to_string(v)});
}

void Detector::monitor(const StreamSample& s) {
    const double cycle = timing_.cycle();
    if (s.rms) {
        const double window = timing_.arcv_window_cycles * cycle;
        if (s.t - window >= rms_t_.front() - 0.5 * timing_.ts) {
            if (auto a = arcv_between(s.t - window, s.t)) peak_rolling_arcv_ = std::max(peak_rolling_arcv_, *a);
        }
    }
    if (s.t < timing_.warmup_cycles * cycle - 0.5 * timing_.ts) return;
    peak_a75_ = std::max(peak_a75_, s.a75);
    if (!stage1_harmonic_gate(s.a75, thr_)) {
        t_above_.reset();
        return;
    }
    if (!t_above_) t_above_ = s.t;
    if (s.t - *t_above_ < timing_.debounce_cycles * cycle - 0.5 * timing_.ts) return;

    tl_.t_event_flagged = s.t;
    tl_.a75 = s.a75;
    tl_.rows.push_back({"stage1", s.t, s.a75, "pass"});
    arcv1_start_ = s.t - timing_.arcv1_lookback_cycles * cycle;
    arcv1_end_ = arcv1_start_ + timing_.arcv_window_cycles * cycle;
    tl_.phase = Phase::ArcvMeasurement;
}

void Detector::push(const StreamSample& s) {
    if (t_prev_) {
        const double dt = s.t - *t_prev_;
        if (!(dt > 0.5 * timing_.ts && dt < 1.5 * timing_.ts)) {
            char buf[160];
            std::snprintf(buf, sizeof buf, "sample stream gap: t = %.9g s after %.9g s (ts = %.9g s)", s.t, *t_prev_, timing_.ts);
            throw StreamGapError(buf);
        }
    }
    t_prev_ = s.t;
    if (s.rms) {
        rms_t_.push_back(s.t);
        rms_v_.push_back(*s.rms);
    }
    if (done()) return;

    if (tl_.phase == Phase::Monitoring) {
        monitor(s);
        if (tl_.phase == Phase::Monitoring) return;
    }

    if (tl_.phase == Phase::ArcvMeasurement) {
        auto a = arcv_between(arcv1_start_, arcv1_end_);
        if (a) {
            tl_.arcv1 = *a;
            tl_.t_stage2 = s.t;
            const bool pass = stage2_fault_filter(*a, thr_);
            tl_.rows.push_back({"stage2", s.t, *a, pass ? "pass" : "filtered"});
            if (!pass) {
                finalize(s.t, Verdict::FaultFiltered);
                return;
            }
            if (!actuator_) {
                finalize(s.t, Verdict::Undetermined, "no power-shift actuator available");
                return;
            }
            const PowerShiftCommand cmd{timing_.shift_dg, timing_.shift_fraction, s.t};
            tl_.t_command = s.t;
            tl_.rows.push_back({"actuation", s.t, cmd.fraction, "issued"});
            tl_.phase = Phase::AwaitingPowerShift;
            try {
                actuator_->issue(cmd);
            } catch (const std::exception& e) {
                finalize(s.t, Verdict::Undetermined, std::string("power-shift command failed: ") + e.what());
                return;
            }
        }
    }

    if (tl_.phase == Phase::AwaitingPowerShift) {
        std::optional<ActuatorAck> ack;
        try {
            ack = actuator_->poll(s.t);
        } catch (const std::exception& e) {
            ack = ActuatorAck{false, s.t, e.what()};
        }
        if (ack) {
            if (!ack->ok) {
                finalize(s.t, Verdict::Undetermined, "power-shift actuation failed: " + ack->message);
                return;
            }
            tl_.t_ack = ack->t_effective;
            tl_.rows.push_back({"ack", ack->t_effective, timing_.shift_fraction, "acknowledged"});
            arcv2_start_ = ack->t_effective + timing_.settle_cycles * timing_.cycle();
            arcv2_end_ = arcv2_start_ + timing_.arcv_window_cycles * timing_.cycle();
            tl_.phase = Phase::Confirming;
        } else if (s.t - *tl_.t_command > timing_.ack_timeout) {
            finalize(s.t, Verdict::Undetermined, "power-shift acknowledgment timed out");
            return;
        }
    }

    if (tl_.phase == Phase::Confirming) {
        if (auto a = arcv_between(arcv2_start_, arcv2_end_)) {
            tl_.arcv2 = *a;
            const Verdict v = stage3_confirm(*a, thr_);
            tl_.rows.push_back({"stage3", s.t, *a, to_string(v)});
            finalize(s.t, v);
            return;
        }
    }

    if (tl_.t_event_flagged && s.t - *tl_.t_event_flagged > timing_.deadline) {
        finalize(s.t, Verdict::Undetermined, "no verdict within the detection deadline");
    }
}

void Detector::finish() {
    if (done()) return;
    const double t = t_prev_.value_or(0.0);
    if (tl_.phase == Phase::Monitoring) {
        tl_.a75 = peak_a75_;
        tl_.arcv1 = peak_rolling_arcv_;
        tl_.verdict = peak_rolling_arcv_ > timing_.disturbance_arcv ? Verdict::HarmonicRejected : Verdict::None;
        tl_.t_verdict = t;
        tl_.rows.push_back({"final", t, 0.0, to_string(tl_.verdict)});
        finished_ = true;
        return;
    }
    finalize(t, Verdict::Undetermined, "stream ended in phase " + to_string(tl_.phase));
}

DetectionTimeline run(std::span<const StreamSample> stream, const Thresholds& thr, const Timing& timing, Actuator* actuator) {
    Detector d(thr, timing, actuator);
    for (const auto& s : stream) d.push(s);
    d.finish();
    return d.timeline();
}

void write_timeline_csv(std::ostream& out, const DetectionTimeline& tl) {
    out << "stage,t,measured_value,decision\n";
    char buf[160];
    for (const auto& r : tl.rows) {
        std::snprintf(buf, sizeof buf, "%s,%.9g,%.9g,%s\n", r.stage.c_str(), r.t, r.value, r.decision.c_str());
        out << buf;
    }
}

void write_timeline_text(std::ostream& out, const DetectionTimeline& tl) {
    char buf[200];
    auto opt = [](const std::optional<double>& v) {
        char b[32];
        if (!v) return std::string("-");
        std::snprintf(b, sizeof b, "%.6f", *v);
        return std::string(b);
    };
    out << "verdict: " << to_string(tl.verdict) << '\n';
    out << "phase: " << to_string(tl.phase) << '\n';
    std::snprintf(buf, sizeof buf, "a75: %.6g\narcv1: %.6g pu/s\narcv2: %.6g pu/s\n", tl.a75, tl.arcv1, tl.arcv2);
    out << buf;
    out << "t_event_flagged: " << opt(tl.t_event_flagged) << '\n';
    out << "t_stage2: " << opt(tl.t_stage2) << '\n';
    out << "t_command: " << opt(tl.t_command) << '\n';
    out << "t_ack: " << opt(tl.t_ack) << '\n';
    out << "t_verdict: " << opt(tl.t_verdict) << '\n';
    if (!tl.note.empty()) out << "note: " << tl.note << '\n';
}

}  // namespace islanding::detector
