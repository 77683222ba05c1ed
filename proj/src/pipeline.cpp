#include "islanding/pipeline.hpp"

#include "islanding/errors.hpp"

#include <cmath>

namespace islanding::pipeline {

namespace {

std::filesystem::path relative_to_entry(const KeyValueEntry& e) {
    std::filesystem::path p(e.value);
    if (p.is_absolute()) return p;
    std::filesystem::path src(e.source);
    if (e.source.empty() || e.source.front() == '<') return p;
    return src.parent_path() / p;
}

void apply_bus_overrides(const KeyValueDoc& doc, const std::string& key, grid::NetworkModel& net, bool load) {
    for (const auto* e : doc.get_all(key)) {
        auto tok = split_whitespace(e->value);
        if (tok.size() != 3) throw_entry_error(*e, "expected `<bus> <P_MW> <Q_Mvar>`");
        const double id = parse_double(*e, tok[0]);
        if (id != std::floor(id) || !net.has_bus(static_cast<int>(id))) throw_entry_error(*e, "unknown bus `" + tok[0] + "`");
        auto& b = net.bus(static_cast<int>(id));
        const double p = parse_double(*e, tok[1]);
        const double q = parse_double(*e, tok[2]);
        if (load) {
            b.pl_mw = p;
            b.ql_mvar = q;
        } else {
            b.pg_mw = p;
            b.qg_mvar = q;
        }
    }
}

grid::LoadModel load_model_from(const KeyValueDoc& doc) {
    const auto* e = doc.find("sim.load_model");
    if (!e) return grid::LoadModel::ConstantImpedance;
    if (e->value == "constant_impedance") return grid::LoadModel::ConstantImpedance;
    if (e->value == "constant_power") return grid::LoadModel::ConstantPower;
    throw_entry_error(*e, "load model must be constant_impedance or constant_power");
}

class RunnerActuator : public detector::Actuator {
public:
    explicit RunnerActuator(grid::ScenarioRunner& runner) : runner_(runner) {}

    void issue(const detector::PowerShiftCommand& cmd) override {
        if (cmd_) throw InvalidArgument("power-shift command already issued");
        cmd_ = cmd;
    }

    std::optional<detector::ActuatorAck> poll(double) override {
        if (!ack_) return std::nullopt;
        auto a = ack_;
        ack_.reset();
        return a;
    }

    // Applies a pending command before the next sample is generated.
    void service() {
        if (!cmd_ || applied_) return;
        applied_ = true;
        try {
            const auto a = runner_.apply_power_shift(cmd_->dg_id, cmd_->fraction, runner_.next_time());
            ack_ = detector::ActuatorAck{true, a.t_effective, {}};
        } catch (const InvalidArgument& e) {
            ack_ = detector::ActuatorAck{false, runner_.next_time(), e.what()};
        }
    }

private:
    grid::ScenarioRunner& runner_;
    std::optional<detector::PowerShiftCommand> cmd_;
    std::optional<detector::ActuatorAck> ack_;
    bool applied_ = false;
};

}  // namespace

std::optional<double> ScenarioConfig::event_time() const {
    for (const auto& ev : script.events) {
        if (ev.kind != grid::EventKind::DgPowerShift) return ev.t;
    }
    return std::nullopt;
}

ScenarioConfig scenario_from_doc(const KeyValueDoc& doc, const std::string& fallback_id) {
    ScenarioConfig cfg;
    cfg.id = doc.get_string("scenario.id", fallback_id);

    if (const auto* e = doc.find("network.file")) {
        cfg.network = grid::load_network(relative_to_entry(*e));
    } else {
        cfg.network = grid::network_from_tables();
    }
    cfg.network.grid_bus = static_cast<int>(doc.get_int("network.grid_bus", cfg.network.grid_bus));
    cfg.network.island_slack_bus = static_cast<int>(doc.get_int("network.island_slack", cfg.network.island_slack_bus));
    apply_bus_overrides(doc, "load", cfg.network, true);
    apply_bus_overrides(doc, "generation", cfg.network, false);

    auto& sim = cfg.sim;
    sim.ts = doc.get_double("sim.ts", sim.ts);
    sim.duration = doc.get_double("sim.duration", sim.duration);
    sim.monitor_bus = static_cast<int>(doc.get_int("sim.monitor_bus", sim.monitor_bus));
    sim.relax_tau = doc.get_double("sim.relax_tau", sim.relax_tau);
    sim.fault_tau = doc.get_double("sim.fault_tau", sim.fault_tau);
    sim.load_model = load_model_from(doc);
    sim.noise_std = doc.get_double("sim.noise_std", sim.noise_std);
    sim.seed = static_cast<std::uint64_t>(doc.get_int("sim.seed", 0));
    const long long stride = doc.get_int("sim.trajectory_stride", static_cast<long long>(sim.trajectory_stride));
    if (stride < 1) throw_entry_error(*doc.find("sim.trajectory_stride"), "trajectory stride must be >= 1");
    sim.trajectory_stride = static_cast<std::size_t>(stride);
    {
        signal::WaveformSpec bg = signal::waveform_from_key_value(doc, "background.");
        sim.background = bg.components;
    }
    for (const auto* e : doc.get_all("event")) cfg.script.events.push_back(grid::parse_event(*e));

    try {
        cfg.network.validate();
        sim.validate();
        cfg.script.validate(sim.duration);
        if (!cfg.network.has_bus(sim.monitor_bus)) throw InvalidArgument("monitor bus " + std::to_string(sim.monitor_bus) + " not in network");
    } catch (const InvalidArgument& e) {
        throw ConfigError(cfg.id + ": " + e.what());
    }

    const double f1 = cfg.network.base.f_base;
    cfg.estimator = ekf::estimator_config_from(doc, sim.ts, f1);
    cfg.thresholds = detector::thresholds_from(doc);
    cfg.timing = detector::timing_from(doc, sim.ts, f1);
    cfg.amplitude_scale = doc.get_double("detector.amplitude_scale", cfg.amplitude_scale);
    cfg.rms_window_cycles = doc.get_double("rms.window_cycles", cfg.rms_window_cycles);
    const long long rs = doc.get_int("rms.stride_samples", static_cast<long long>(cfg.rms_stride_samples));
    if (!(cfg.amplitude_scale > 0.0)) throw ConfigError(cfg.id + ": detector.amplitude_scale must be > 0");
    if (!(cfg.rms_window_cycles > 0.0) || rs < 1) throw ConfigError(cfg.id + ": RMS window and stride must be positive");
    cfg.rms_stride_samples = static_cast<std::size_t>(rs);
    return cfg;
}

ScenarioConfig load_scenario(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
    KeyValueDoc doc = KeyValueDoc::load(path);
    for (const auto& o : overrides) doc.apply_override(o);
    return scenario_from_doc(doc, path.stem().string());
}

RunOutcome run(const ScenarioConfig& cfg, bool keep_estimates) {
    grid::ScenarioRunner runner(cfg.network, cfg.script, cfg.sim);
    ekf::HarmonicTracker tracker(cfg.estimator);
    const double cycle = 1.0 / cfg.network.base.f_base;
    const std::size_t window = measures::samples_for(cfg.rms_window_cycles * cycle, cfg.sim.ts);
    measures::RmsTracker rms(window, std::min(cfg.rms_stride_samples, window));
    RunnerActuator actuator(runner);
    detector::Detector det(cfg.thresholds, cfg.timing, &actuator);

    RunOutcome out;
    out.rms.stride = static_cast<double>(rms.stride_samples()) * cfg.sim.ts;
    out.rms.t0 = static_cast<double>(window - 1) * cfg.sim.ts;
    out.a75.reserve(runner.total_samples());
    if (keep_estimates) out.estimates.reserve(runner.total_samples());

    while (!runner.done()) {
        actuator.service();
        const double t = runner.next_time();
        const double z = runner.next_sample();
        const auto& est = tracker.push(z);
        const double a75 = est.interharmonic() * cfg.amplitude_scale;
        const auto r = rms.push(z);
        if (r) out.rms.values.push_back(*r);
        out.a75.push_back(a75);
        if (keep_estimates) out.estimates.push_back(est);
        det.push({t, a75, r});
    }
    det.finish();

    out.sim = runner.result();
    out.timeline = det.timeline();
    out.event_time = cfg.event_time();
    if (out.event_time) {
        if (out.timeline.t_stage2) out.latency_cycles = (*out.timeline.t_stage2 - *out.event_time) / cycle;
        if (out.timeline.t_verdict && out.timeline.t_event_flagged) out.verdict_delay = *out.timeline.t_verdict - *out.event_time;
    }
    return out;
}

}  // namespace islanding::pipeline
