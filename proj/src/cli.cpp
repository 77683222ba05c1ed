#include "islanding/cli.hpp"

#include "islanding/errors.hpp"
#include "islanding/harmonic_ekf.hpp"
#include "islanding/measures.hpp"
#include "islanding/signal.hpp"

#include <CLI11.hpp>

#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

namespace islanding::cli {

namespace fs = std::filesystem;

namespace {

std::ofstream open_out(const fs::path& p) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw ConfigError(p.string(), 0, "cannot open for writing");
    return f;
}

std::string fmt(const char* spec, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

std::string opt_fmt(const std::optional<double>& v, const char* spec = "%.4f") { return v ? fmt(spec, *v) : std::string("-"); }

std::vector<std::string> effective_overrides(const RunOptions& opts) {
    auto ov = opts.overrides;
    if (opts.seed) ov.push_back("sim.seed=" + std::to_string(*opts.seed));
    if (opts.monitor_bus) ov.push_back("sim.monitor_bus=" + std::to_string(*opts.monitor_bus));
    return ov;
}

void write_settings(std::ostream& out, const pipeline::ScenarioConfig& cfg) {
    const auto& e = cfg.estimator;
    out << "settings:\n";
    out << "  estimator.q_rotation = " << fmt("%.6g", e.process_noise_q[ekf::kRotationIndex]) << '\n';
    out << "  estimator.q_fundamental = " << fmt("%.6g", e.process_noise_q[ekf::even_index(0)]) << '\n';
    out << "  estimator.q_envelope = " << fmt("%.6g", e.process_noise_q[ekf::even_index(1)]) << '\n';
    out << "  estimator.q_interharmonic = " << fmt("%.6g", e.process_noise_q[ekf::even_index(ekf::kInterharmonicComponent)]) << '\n';
    out << "  estimator.q_dc = " << fmt("%.6g", e.process_noise_q[ekf::kDcIndex]) << '\n';
    out << "  estimator.r = " << fmt("%.6g", e.measurement_noise_r) << '\n';
    out << "  estimator.p0 = " << fmt("%.6g", e.initial_covariance_p0) << '\n';
    out << "  estimator.p0_rotation = " << fmt("%.6g", e.initial_covariance_rotation) << '\n';
    out << "  estimator.dc_decay_alpha = " << fmt("%.6g", e.dc_decay_alpha) << '\n';
    out << "  detector.a75_min = " << fmt("%.6g", cfg.thresholds.a75_min) << '\n';
    out << "  detector.arcv_max = " << fmt("%.6g", cfg.thresholds.arcv_max) << '\n';
    out << "  detector.arcv_min = " << fmt("%.6g", cfg.thresholds.arcv_min) << '\n';
    out << "  detector.amplitude_scale = " << fmt("%.6g", cfg.amplitude_scale) << '\n';
    out << "  sim.seed = " << cfg.sim.seed << '\n';
    out << "  sim.noise_std = " << fmt("%.6g", cfg.sim.noise_std) << '\n';
}

void write_report(std::ostream& out, const RunReport& r, const detector::DetectionTimeline& tl,
                  const pipeline::ScenarioConfig& cfg, Format format) {
    if (format == Format::Csv) {
        out << "scenario,verdict,a75,arcv1,arcv2,latency_cycles,verdict_delay_s\n";
        out << r.scenario_id << ',' << detector::to_string(r.verdict) << ',' << fmt("%.9g", r.a75) << ','
            << fmt("%.9g", r.arcv1) << ',' << fmt("%.9g", r.arcv2) << ',' << opt_fmt(r.latency_cycles, "%.9g") << ','
            << opt_fmt(r.verdict_delay, "%.9g") << '\n';
        return;
    }
    out << "scenario: " << r.scenario_id << '\n';
    detector::write_timeline_text(out, tl);
    out << "latency_cycles: " << opt_fmt(r.latency_cycles) << '\n';
    out << "verdict_delay_s: " << opt_fmt(r.verdict_delay, "%.6f") << '\n';
    write_settings(out, cfg);
    out << "artifacts:\n";
    for (const auto& a : r.artifacts) out << "  " << a.filename().string() << '\n';
}

void write_bus_rms(std::ostream& out, const grid::ScenarioResult& sim) {
    out << "time_s";
    for (int id : sim.bus_ids) out << ",bus" << id;
    out << '\n';
    const std::size_t n = sim.bus_rms.empty() ? 0 : sim.bus_rms.front().size();
    char buf[32];
    for (std::size_t k = 0; k < n; ++k) {
        std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(k) * sim.trajectory_stride);
        out << buf;
        for (const auto& series : sim.bus_rms) {
            std::snprintf(buf, sizeof buf, ",%.9g", series[k]);
            out << buf;
        }
        out << '\n';
    }
}

void write_event_log(std::ostream& out, const grid::ScenarioResult& sim, const detector::DetectionTimeline& tl) {
    char buf[64];
    for (const auto& e : sim.log) {
        std::snprintf(buf, sizeof buf, "%.6f  ", e.t);
        out << buf << e.text << '\n';
    }
    for (const auto& a : sim.acks) {
        std::snprintf(buf, sizeof buf, "%.6f  ", a.t_effective);
        out << buf << "ack: DG " << a.dg_id << " requested at " << fmt("%.6f", a.t_requested) << " s, effective "
            << fmt("%.6f", a.t_effective) << " s\n";
    }
    for (const auto& r : tl.rows) {
        std::snprintf(buf, sizeof buf, "%.6f  ", r.t);
        out << buf << "detector " << r.stage << ": " << r.decision << " (" << fmt("%.6g", r.value) << ")\n";
    }
}

}  // namespace

int verdict_exit_code(detector::Verdict v) { return v == detector::Verdict::Islanding ? kExitIslanding : kExitOk; }

RunReport cmd_run(const fs::path& scenario, const fs::path& output_dir, const RunOptions& opts) {
    if (!fs::exists(scenario)) throw ConfigError(scenario.string(), 0, "scenario file not found");
    const pipeline::ScenarioConfig cfg = pipeline::load_scenario(scenario, effective_overrides(opts));
    const pipeline::RunOutcome res = pipeline::run(cfg, true);

    fs::create_directories(output_dir);
    RunReport r;
    r.scenario_id = cfg.id;
    r.verdict = res.timeline.verdict;
    r.a75 = res.timeline.a75;
    r.arcv1 = res.timeline.arcv1;
    r.arcv2 = res.timeline.arcv2;
    r.latency_cycles = res.latency_cycles;
    r.verdict_delay = res.verdict_delay;
    r.note = res.timeline.note;

    auto artifact = [&](const std::string& suffix) {
        fs::path p = output_dir / (cfg.id + suffix);
        r.artifacts.push_back(p);
        return open_out(p);
    };
    {
        auto f = artifact(".waveform.csv");
        signal::write_csv(f, res.sim.waveform);
    }
    {
        auto f = artifact(".rms.csv");
        measures::write_csv(f, res.rms);
    }
    {
        auto f = artifact(".bus_rms.csv");
        write_bus_rms(f, res.sim);
    }
    {
        auto f = artifact(".estimates.csv");
        ekf::write_estimates_header(f);
        for (std::size_t k = 0; k < res.estimates.size(); ++k) {
            ekf::write_estimates_row(f, res.sim.waveform.time_at(k), res.estimates[k]);
        }
    }
    {
        auto f = artifact(".timeline.csv");
        detector::write_timeline_csv(f, res.timeline);
    }
    {
        auto f = artifact(".events.log");
        write_event_log(f, res.sim, res.timeline);
    }
    {
        auto f = artifact(".powerflow.txt");
        for (const auto& s : res.sim.snapshots) {
            f << "== t = " << fmt("%.6f", s.t) << " s: " << s.label << '\n';
            grid::write_flow_table(f, s.flow);
            f << '\n';
        }
    }
    const std::string report_suffix = opts.format == Format::Csv ? ".report.csv" : ".report.txt";
    r.artifacts.push_back(output_dir / (cfg.id + report_suffix));
    {
        auto f = open_out(r.artifacts.back());
        write_report(f, r, res.timeline, cfg, opts.format);
    }
    return r;
}

std::vector<fs::path> sweep_scenarios(const fs::path& scenario_dir) {
    static const char* kEvents[] = {"islanding", "three_phase_fault", "single_phase_fault", "load_decrease"};
    std::vector<fs::path> out;
    for (int c = 1; c <= 4; ++c) {
        for (const char* e : kEvents) {
            fs::path p = scenario_dir / ("case" + std::to_string(c) + "_" + e + ".scn");
            if (!fs::exists(p)) throw ConfigError(p.string(), 0, "bundled scenario missing");
            out.push_back(p);
        }
    }
    return out;
}

void write_sweep_table(std::ostream& out, const std::vector<std::optional<RunReport>>& rows, Format format) {
    auto split_id = [](const std::string& id) {
        // caseN_<event>
        auto us = id.find('_');
        if (id.rfind("case", 0) == 0 && us != std::string::npos) return std::pair{id.substr(4, us - 4), id.substr(us + 1)};
        return std::pair{std::string("-"), id};
    };
    if (format == Format::Csv) {
        out << "event,case,a75,arcv1,arcv2,verdict,latency_cycles\n";
        for (const auto& r : rows) {
            if (!r) continue;
            auto [c, e] = split_id(r->scenario_id);
            out << e << ',' << c << ',' << fmt("%.6g", r->a75) << ',' << fmt("%.6g", r->arcv1) << ','
                << fmt("%.6g", r->arcv2) << ',' << detector::to_string(r->verdict) << ','
                << opt_fmt(r->latency_cycles, "%.6g") << '\n';
        }
        return;
    }
    char buf[200];
    std::snprintf(buf, sizeof buf, "%-20s %-5s %10s %10s %10s  %-18s %s\n", "event", "case", "A75", "ARCV1", "ARCV2", "verdict",
                  "latency");
    out << buf;
    int islands = 0;
    for (const auto& r : rows) {
        if (!r) continue;
        auto [c, e] = split_id(r->scenario_id);
        islands += r->verdict == detector::Verdict::Islanding;
        std::snprintf(buf, sizeof buf, "%-20s %-5s %10.4f %10.4f %10.4f  %-18s %s\n", e.c_str(), c.c_str(), r->a75, r->arcv1,
                      r->arcv2, detector::to_string(r->verdict).c_str(), opt_fmt(r->latency_cycles, "%.2f").c_str());
        out << buf;
    }
    out << "islanding verdicts: " << islands << " of " << rows.size() << '\n';
}

std::vector<RunReport> cmd_sweep(const fs::path& scenario_dir, const fs::path& output_dir, const RunOptions& opts,
                                 unsigned jobs, std::ostream& out) {
    const auto files = sweep_scenarios(scenario_dir);
    std::vector<std::optional<RunReport>> rows(files.size());
    std::vector<std::exception_ptr> errors(files.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < files.size();) {
            try {
                rows[i] = cmd_run(files[i], output_dir, opts);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(files.size())));
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (unsigned j = 0; j < jobs; ++j) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    fs::create_directories(output_dir);
    {
        auto f = open_out(output_dir / "sweep.txt");
        write_sweep_table(f, rows, Format::Text);
    }
    {
        auto f = open_out(output_dir / "sweep.csv");
        write_sweep_table(f, rows, Format::Csv);
    }
    write_sweep_table(out, rows, opts.format);
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    std::vector<RunReport> done;
    for (auto& r : rows) done.push_back(std::move(*r));
    return done;
}

std::size_t cmd_estimate(const fs::path& waveform_csv, const fs::path& output_csv, const std::optional<fs::path>& config,
                         const std::vector<std::string>& overrides) {
    std::ifstream in(waveform_csv);
    if (!in) throw ConfigError(waveform_csv.string(), 0, "cannot open waveform file");
    const signal::SampledSignal sig = signal::read_csv(in, waveform_csv.string());
    KeyValueDoc doc = config ? KeyValueDoc::load(*config) : KeyValueDoc{};
    for (const auto& o : overrides) doc.apply_override(o);
    const ekf::EstimatorConfig ec = ekf::estimator_config_from(doc, sig.ts, 60.0);
    ekf::HarmonicTracker tracker(ec);
    auto f = open_out(output_csv);
    ekf::write_estimates_header(f);
    for (std::size_t k = 0; k < sig.size(); ++k) {
        ekf::write_estimates_row(f, sig.time_at(k), tracker.push(sig.samples[k]));
    }
    return sig.size();
}

grid::PowerFlowResult cmd_powerflow(const fs::path& network, std::ostream& out, Format format) {
    const grid::NetworkModel net = grid::load_network(network);
    grid::PowerFlowResult r = grid::solve_power_flow(net);
    if (format == Format::Csv) {
        out << "bus,v_pu,angle_deg,p_inj_pu,q_inj_pu\n";
        for (std::size_t i = 0; i < r.bus_ids.size(); ++i) {
            out << r.bus_ids[i] << ',' << fmt("%.9g", std::abs(r.voltages[i])) << ','
                << fmt("%.9g", std::arg(r.voltages[i]) * 180.0 / 3.14159265358979323846) << ','
                << fmt("%.9g", r.injections[i].real()) << ',' << fmt("%.9g", r.injections[i].imag()) << '\n';
        }
        out << "# losses_pu," << fmt("%.9g", r.losses_pu) << "\n# iterations," << r.iterations << '\n';
    } else {
        grid::write_flow_table(out, r);
    }
    return r;
}

std::size_t cmd_synth(const fs::path& config, const std::vector<std::string>& overrides, double duration, double ts,
                      const fs::path& output_csv) {
    KeyValueDoc doc = config.empty() ? KeyValueDoc{} : KeyValueDoc::load(config);
    for (const auto& o : overrides) doc.apply_override(o);
    const signal::WaveformSpec spec = signal::waveform_from_key_value(doc);
    const signal::SampledSignal sig = signal::synthesize(spec, duration, ts);
    auto f = open_out(output_csv);
    signal::write_csv(f, sig);
    return sig.size();
}

int main_entry(int argc, char** argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Hybrid islanding detection: simulation, estimation and decision pipeline"};
    app.require_subcommand(1);

    std::map<std::string, Format> formats{{"text", Format::Text}, {"csv", Format::Csv}};
    RunOptions opts;
    std::string out_dir = "out";
    long long seed = 0;
    int monitor_bus = 0;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--out", out_dir, "Output directory")->capture_default_str();
        sub->add_option("--set", opts.overrides, "Override a configuration key (key=value), repeatable")
            ->take_all()
            ->allow_extra_args(false);
        sub->add_option("--seed", seed, "Override the noise seed");
        sub->add_option("--monitor-bus", monitor_bus, "Monitored bus id");
        sub->add_option("--format", opts.format, "Report format")
            ->transform(CLI::CheckedTransformer(formats, CLI::ignore_case));
    };

    auto* run = app.add_subcommand("run", "Run one scenario through the full pipeline");
    std::string scenario;
    run->add_option("--scenario", scenario, "Scenario file")->required();
    add_common(run);

    auto* sweep = app.add_subcommand("sweep", "Run the bundled 4 cases x 4 events");
    std::string scenario_dir = ISLANDING_SCENARIO_DIR;
    unsigned jobs = 1;
    sweep->add_option("--scenario-dir", scenario_dir, "Directory with the bundled scenarios")->capture_default_str();
    sweep->add_option("--jobs", jobs, "Parallel scenario runs")->capture_default_str();
    add_common(sweep);

    auto* est = app.add_subcommand("estimate", "Run the harmonic estimator over a waveform CSV");
    std::string wave_in, est_out = "estimates.csv", est_cfg;
    est->add_option("--input", wave_in, "Waveform CSV (time_s,value_pu)")->required();
    est->add_option("--output", est_out, "Estimates CSV")->capture_default_str();
    est->add_option("--config", est_cfg, "Key-value file with estimator.* keys");
    est->add_option("--set", opts.overrides, "Override a configuration key (key=value), repeatable");

    auto* pf = app.add_subcommand("powerflow", "Solve the grid-connected power flow of a network file");
    std::string net_path = ISLANDING_DATA_DIR "/nine_bus.net";
    pf->add_option("--network", net_path, "Network file")->capture_default_str();
    pf->add_option("--format", opts.format, "Output format")->transform(CLI::CheckedTransformer(formats, CLI::ignore_case));

    auto* syn = app.add_subcommand("synth", "Synthesize a waveform CSV from waveform.* keys");
    std::string syn_cfg, syn_out = "waveform.csv";
    double duration = 0.3, ts = 1.0 / 7680.0;
    syn->add_option("--config", syn_cfg, "Key-value file with waveform.* keys");
    syn->add_option("--set", opts.overrides, "Override a key (key=value), repeatable");
    syn->add_option("--duration", duration, "Record length, s")->capture_default_str();
    syn->add_option("--ts", ts, "Sampling interval, s")->capture_default_str();
    syn->add_option("--output", syn_out, "Output CSV")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e, out, err);
        return rc == 0 ? kExitOk : kExitError;
    }

    auto finish_opts = [&](CLI::App* sub) {
        if (sub->count("--seed")) opts.seed = seed;
        if (sub->count("--monitor-bus")) opts.monitor_bus = monitor_bus;
    };

    try {
        if (*run) {
            finish_opts(run);
            const RunReport r = cmd_run(scenario, out_dir, opts);
            out << r.scenario_id << ": " << detector::to_string(r.verdict) << " (a75 " << fmt("%.4f", r.a75) << ", arcv1 "
                << fmt("%.4f", r.arcv1) << ", arcv2 " << fmt("%.4f", r.arcv2) << ", latency "
                << opt_fmt(r.latency_cycles, "%.2f") << " cycles)\n";
            if (!r.note.empty()) out << "note: " << r.note << '\n';
            return verdict_exit_code(r.verdict);
        }
        if (*sweep) {
            finish_opts(sweep);
            cmd_sweep(scenario_dir, out_dir, opts, jobs, out);
            return kExitOk;
        }
        if (*est) {
            const auto n = cmd_estimate(wave_in, est_out,
                                        est_cfg.empty() ? std::nullopt : std::optional<fs::path>(est_cfg), opts.overrides);
            out << "estimated " << n << " samples -> " << est_out << '\n';
            return kExitOk;
        }
        if (*pf) {
            cmd_powerflow(net_path, out, opts.format);
            return kExitOk;
        }
        if (*syn) {
            const auto n = cmd_synth(syn_cfg, opts.overrides, duration, ts, syn_out);
            out << "wrote " << n << " samples -> " << syn_out << '\n';
            return kExitOk;
        }
    } catch (const ConvergenceError& e) {
        err << "error: " << e.what() << "\n  final mismatch " << fmt("%.3e", e.final_mismatch()) << " pu after "
            << e.iterations() << " iterations\n";
        return kExitNoConvergence;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitError;
    }
    return kExitError;
}

}  // namespace islanding::cli
