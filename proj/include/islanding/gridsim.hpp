#pragma once

// Quasi-static model of the nine-bus test feeder (buses 3..11) with three
// inverter-based DGs, a grid connection behind a breaker, Newton power flow,
// and a sample-by-sample scenario runner producing the monitored voltage
// waveform.

#include "islanding/keyvalue.hpp"
#include "islanding/signal.hpp"

#include <Eigen/Core>

#include <complex>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace islanding::grid {

using Complex = std::complex<double>;

struct BaseQuantities {
    double v_base = 12.7e3;  // V, line-to-line
    double s_base = 10e6;    // VA
    double f_base = 60.0;    // Hz

    double z_base() const { return v_base * v_base / s_base; }
    void validate() const;
};

struct Bus {
    int id = 0;
    double pg_mw = 0.0;
    double qg_mvar = 0.0;
    double pl_mw = 0.0;
    double ql_mvar = 0.0;
};

struct Line {
    int from = 0;
    int to = 0;
    double r_ohm = 0.0;
    double l_mh = 0.0;  // series inductance
};

struct NetworkModel {
    BaseQuantities base;
    std::vector<Bus> buses;
    std::vector<Line> lines;
    int grid_bus = 3;           // slack while the breaker is closed
    int island_slack_bus = 8;   // angle reference once islanded
    bool breaker_closed = true;

    int slack_bus() const { return breaker_closed ? grid_bus : island_slack_bus; }
    std::size_t index_of(int bus_id) const;  // throws InvalidArgument
    bool has_bus(int bus_id) const;
    Bus& bus(int bus_id) { return buses[index_of(bus_id)]; }
    const Bus& bus(int bus_id) const { return buses[index_of(bus_id)]; }

    /// DG k (1-based) is the k-th bus with nonzero PG, in ascending bus order.
    std::vector<int> dg_buses() const;
    int dg_bus(int dg_id) const;  // throws InvalidArgument

    /// Positive line parameters, known endpoints, unique ids, connected graph.
    void validate() const;
};

/// Line series impedance in per-unit on the network base (X = 2π·f·L).
Complex line_impedance_pu(const Line& line, const BaseQuantities& base);
/// Inverse of line_impedance_pu: physical (R Ω, L mH).
Line line_from_pu(int from, int to, Complex z_pu, const BaseQuantities& base);

/// The built-in feeder: line data and base-case load/generation tables.
NetworkModel network_from_tables();

// Network text format:
//   base <v_kV> <s_MVA> <f_Hz>
//   grid_bus <id>
//   island_slack <id>
//   bus <id> <PG_MW> <QG_Mvar> <PL_MW> <QL_Mvar>
//   line <from> <to> <R_ohm> <L_mH>
// `#` starts a comment. Validation failures raise ConfigError with line info.
NetworkModel read_network(std::istream& in, const std::string& source = "<network>");
NetworkModel load_network(const std::filesystem::path& path);
void write_network(std::ostream& out, const NetworkModel& net);

enum class LoadModel { ConstantPower, ConstantImpedance };

struct PowerFlowOptions {
    std::optional<int> slack_bus;  // defaults to net.slack_bus()
    double slack_voltage = 1.0;
    double slack_angle = 0.0;
    LoadModel load_model = LoadModel::ConstantPower;
    double tolerance = 1e-8;  // max |ΔP|, |ΔQ| in pu
    int max_iterations = 50;
};

struct PowerFlowResult {
    std::vector<int> bus_ids;
    std::vector<Complex> voltages;  // pu phasors, same order as bus_ids
    std::vector<Complex> injections;  // net complex power injected into the network at each bus, pu
    int slack_bus = 0;
    Complex slack_injection{};  // pu, from the slack into the network
    double losses_pu = 0.0;     // active series losses
    double load_pu = 0.0;       // active power consumed by loads at the solved voltages
    double generation_pu = 0.0; // scheduled DG active output (excluding the slack's own balance)
    int iterations = 0;
    bool converged = false;
    double max_mismatch = 0.0;

    Complex voltage(int bus_id) const;
};

/// Bus admittance matrix in pu. With ConstantImpedance, loads enter as shunt
/// admittances sized at 1 pu voltage.
Eigen::MatrixXcd admittance_matrix(const NetworkModel& net, LoadModel load_model);

/// Newton-Raphson in polar coordinates from a flat start. Throws
/// ConvergenceError (with the final mismatch) after max_iterations.
PowerFlowResult solve_power_flow(const NetworkModel& net, const PowerFlowOptions& options = {});

struct OperatingPoint {
    PowerFlowResult flow;
    bool collapsed = false;  // island without generation
};

/// Grid-connected: power flow with the grid bus as slack. Islanded: loads
/// become constant impedances, the island slack bus is the angle reference,
/// and its voltage magnitude is chosen so that its injection equals its own
/// DG setpoint (the island voltage settles where load demand meets
/// generation).
OperatingPoint solve_operating_point(const NetworkModel& net, LoadModel grid_load_model);

// ---------------------------------------------------------------- scenarios

enum class EventKind { Islanding, ThreePhaseFault, SinglePhaseFault, LoadDecrease, DgPowerShift };

std::string to_string(EventKind kind);
EventKind event_kind_from_string(const std::string& s);

struct ScenarioEvent {
    double t = 0.0;
    EventKind kind = EventKind::Islanding;
    int bus = 0;               // fault / load bus
    double depth = 0.0;        // fault dip depth (fraction of pre-fault voltage)
    double fraction = 1.0;     // retained fraction (load decrease, power shift)
    int dg_id = 0;             // power shift target
    double inject_5_4 = 0.0;   // 5/4 inter-harmonic template amplitude, pu peak
    double tau = 0.0;          // template onset time constant, s (0 = settings default)
    double decay = 0.0;        // template decay time constant, s (0 = persistent)
};

struct EventScript {
    std::vector<ScenarioEvent> events;

    /// Time-ordered, within [0, duration], at most one islanding event.
    void validate(double duration) const;
};

/// `event = <t> <kind> key=value...` with keys bus, depth, fraction, dg,
/// inject, tau, decay. Kinds: islanding, three_phase_fault, single_phase_fault,
/// load_decrease, dg_power_shift.
ScenarioEvent parse_event(const KeyValueEntry& entry);

struct SimulationSettings {
    double ts = 1.0 / 7680.0;
    double duration = 0.3;
    int monitor_bus = 8;
    double relax_tau = 0.05;   // post-event phasor relaxation time constant
    double fault_tau = 0.002;  // default dip onset time constant
    LoadModel load_model = LoadModel::ConstantImpedance;
    std::vector<signal::HarmonicComponent> background;  // always-present spectral content, pu peak
    double noise_std = 0.0;
    std::uint64_t seed = 0;
    std::size_t trajectory_stride = 32;  // samples between stored per-bus RMS points

    void validate() const;
};

struct LogEntry {
    double t = 0.0;
    std::string text;
};

struct PowerShiftAck {
    int dg_id = 0;
    double fraction = 1.0;
    double t_requested = 0.0;
    double t_effective = 0.0;
    double p_before_mw = 0.0;
    double p_after_mw = 0.0;
};

struct FlowSnapshot {
    double t = 0.0;
    std::string label;
    PowerFlowResult flow;
};

struct ScenarioResult {
    signal::SampledSignal waveform;  // monitored bus, pu (peak = √2·|V|)
    int monitor_bus = 0;
    std::vector<int> bus_ids;
    double trajectory_stride = 0.0;           // s
    std::vector<std::vector<double>> bus_rms; // [bus][point], quasi-static RMS in pu
    std::vector<FlowSnapshot> snapshots;
    std::vector<LogEntry> log;
    std::vector<PowerShiftAck> acks;
    bool collapsed = false;
};

/// Sample-by-sample scenario execution. Scripted events fire on the first
/// sample at or after their time; power shifts may also be commanded while
/// running (closed-loop detection).
class ScenarioRunner {
public:
    ScenarioRunner(NetworkModel net, EventScript script, SimulationSettings settings);

    bool done() const { return next_index_ >= total_samples_; }
    std::size_t total_samples() const { return total_samples_; }
    double next_time() const { return static_cast<double>(next_index_) * settings_.ts; }
    /// Generates the monitored sample at next_time() and advances.
    double next_sample();

    /// DG active output becomes `fraction` × current output from the first
    /// sample at or after t. Throws InvalidArgument for an unknown DG, a DG
    /// with zero output, or fraction outside (0, 1].
    PowerShiftAck apply_power_shift(int dg_id, double fraction, double t);

    const NetworkModel& network() const { return net_; }
    /// Present quasi-static phasor at a bus (including any fault dip).
    Complex phasor(int bus_id, double t) const;

    ScenarioResult result() const;

private:
    void fire_due_events(double t);
    void apply_event(const ScenarioEvent& ev, double t);
    void resolve(double t, const std::string& label);
    double dip_factor(double t) const;

    struct Dip {
        double t0, depth, tau;
    };
    struct Template {
        double t0, amplitude, tau, decay;
        signal::HarmonicOrder order;
    };

    NetworkModel net_;
    EventScript script_;
    SimulationSettings settings_;
    std::size_t total_samples_ = 0;
    std::size_t next_index_ = 0;
    std::size_t next_event_ = 0;
    std::vector<Complex> v_from_, v_to_;
    double t_change_ = 0.0;
    std::vector<Dip> dips_;
    std::vector<Template> templates_;
    signal::WaveformSpec background_;
    signal::NoiseStream noise_;
    ScenarioResult result_;
    bool islanded_once_ = false;
};

ScenarioResult run_scenario(const NetworkModel& net, const EventScript& script, const SimulationSettings& settings);

/// Fixed-width table: bus, |V| pu, angle deg, P/Q injection; then losses and iterations.
void write_flow_table(std::ostream& out, const PowerFlowResult& flow);

}  // namespace islanding::grid
