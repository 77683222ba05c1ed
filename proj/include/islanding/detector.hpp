#pragma once

// Three-stage hybrid islanding decision: an inter-harmonic amplitude gate, an
// ARCV ceiling that removes severe faults, and an active confirmation in
// which one DG's output is cut and the voltage response is measured.

#include "islanding/keyvalue.hpp"

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace islanding::detector {

struct Thresholds {
    double a75_min = 1.0;   // estimator scale
    double arcv_max = 14.0; // pu/s
    double arcv_min = 1.0;  // pu/s

    void validate() const;
};

enum class Phase { Monitoring, ArcvMeasurement, AwaitingPowerShift, Confirming, Final };
enum class Verdict { None, HarmonicRejected, FaultFiltered, NonIslanding, Islanding, Undetermined };

std::string to_string(Phase p);
std::string to_string(Verdict v);
bool is_islanding(Verdict v);

bool stage1_harmonic_gate(double a75, const Thresholds& thr);
/// True when the fault filter lets the event through (arcv1 ≤ arcv_max).
bool stage2_fault_filter(double arcv1, const Thresholds& thr);
Verdict stage3_confirm(double arcv2, const Thresholds& thr);
/// All three stages applied to a recorded triple.
Verdict classify_triple(double a75, double arcv1, double arcv2, const Thresholds& thr);

struct Timing {
    double ts = 1.0 / 7680.0;
    double f1 = 60.0;
    double warmup_cycles = 3.0;       // gate disabled while the estimator converges
    double debounce_cycles = 0.25;    // a75 must stay above a75_min this long
    double arcv_window_cycles = 2.0;
    double arcv1_lookback_cycles = 1.0;  // arcv1 window starts this far before the gate fires
    double settle_cycles = 1.0;       // after the shift acknowledgment, before arcv2
    double ack_timeout = 0.1;         // s
    double deadline = 2.0;            // s from the gate firing to the verdict
    int shift_dg = 1;
    double shift_fraction = 0.12;
    double disturbance_arcv = 0.2;    // pu/s; separates HarmonicRejected from None

    double cycle() const { return 1.0 / f1; }
    void validate() const;
};

Thresholds thresholds_from(const KeyValueDoc& doc);
Timing timing_from(const KeyValueDoc& doc, double ts, double f1);

struct PowerShiftCommand {
    int dg_id = 0;
    double fraction = 1.0;
    double t_issued = 0.0;
};

struct ActuatorAck {
    bool ok = true;
    double t_effective = 0.0;
    std::string message;
};

/// Power-shift actuation path. `issue` is called at most once per detection;
/// `poll` is called every sample afterwards until it returns a value.
class Actuator {
public:
    virtual ~Actuator() = default;
    virtual void issue(const PowerShiftCommand& cmd) = 0;
    virtual std::optional<ActuatorAck> poll(double t_now) = 0;
};

struct TimelineRow {
    std::string stage;
    double t = 0.0;
    double value = 0.0;
    std::string decision;
};

struct DetectionTimeline {
    Phase phase = Phase::Monitoring;
    Verdict verdict = Verdict::None;
    std::optional<double> t_event_flagged;
    std::optional<double> t_stage2;   // fault-filter decision
    std::optional<double> t_command;
    std::optional<double> t_ack;
    std::optional<double> t_verdict;
    double a75 = 0.0;    // at the gate, or the peak seen when the gate never fired
    double arcv1 = 0.0;  // at stage 2, or the peak rolling value while monitoring
    double arcv2 = 0.0;
    std::string note;
    std::vector<TimelineRow> rows;
};

/// One sample of the shared time base: the estimator-scale 5/4 amplitude
/// and, when one is due, a new RMS point.
struct StreamSample {
    double t = 0.0;
    double a75 = 0.0;
    std::optional<double> rms;
};

class Detector {
public:
    Detector(Thresholds thr, Timing timing, Actuator* actuator);

    /// Throws StreamGapError when t does not advance by one sampling interval.
    void push(const StreamSample& s);
    /// End of stream: resolves Monitoring into None/HarmonicRejected, and any
    /// unfinished detection into Undetermined.
    void finish();

    bool done() const { return finished_ || tl_.phase == Phase::Final; }
    const DetectionTimeline& timeline() const { return tl_; }

private:
    void monitor(const StreamSample& s);
    void finalize(double t, Verdict v, const std::string& note = {});
    std::optional<double> arcv_between(double t_start, double t_end) const;

    Thresholds thr_;
    Timing timing_;
    Actuator* actuator_;
    DetectionTimeline tl_;
    std::optional<double> t_prev_;
    std::optional<double> t_above_;  // start of the current above-threshold run
    bool finished_ = false;
    double peak_a75_ = 0.0;
    double peak_rolling_arcv_ = 0.0;
    std::vector<double> rms_t_, rms_v_;
    double arcv1_start_ = 0.0, arcv1_end_ = 0.0;
    double arcv2_start_ = 0.0, arcv2_end_ = 0.0;
};

DetectionTimeline run(std::span<const StreamSample> stream, const Thresholds& thr, const Timing& timing, Actuator* actuator);

/// CSV `stage,t,measured_value,decision`.
void write_timeline_csv(std::ostream& out, const DetectionTimeline& tl);
void write_timeline_text(std::ostream& out, const DetectionTimeline& tl);

}  // namespace islanding::detector
