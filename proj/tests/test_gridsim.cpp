#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "islanding/errors.hpp"
#include "islanding/gridsim.hpp"
#include "islanding/measures.hpp"
#include "oracles/gauss_seidel.hpp"

#include <cmath>
#include <random>
#include <sstream>

using namespace islanding;
using namespace islanding::grid;

namespace {

constexpr double kCycle = 1.0 / 60.0;

oracle::GsResult gs_for(const NetworkModel& net) {
    std::vector<oracle::GsBus> buses;
    for (const auto& b : net.buses) buses.push_back({b.id, b.pg_mw - b.pl_mw, b.qg_mvar - b.ql_mvar});
    std::vector<oracle::GsLine> lines;
    for (const auto& l : net.lines) lines.push_back({l.from, l.to, l.r_ohm, l.l_mh});
    return oracle::gauss_seidel(buses, lines, net.grid_bus, net.base.v_base / 1e3, net.base.s_base / 1e6, net.base.f_base);
}

double max_deviation(const PowerFlowResult& flow, const oracle::GsResult& gs) {
    double worst = 0.0;
    for (std::size_t i = 0; i < flow.bus_ids.size(); ++i) {
        worst = std::max(worst, std::abs(flow.voltages[i] - gs.v.at(flow.bus_ids[i])));
    }
    return worst;
}

ScenarioEvent make_event(double t, EventKind kind) {
    ScenarioEvent e;
    e.t = t;
    e.kind = kind;
    return e;
}

ScenarioEvent shift_event(double t, double fraction) {
    auto e = make_event(t, EventKind::DgPowerShift);
    e.dg_id = 1;
    e.fraction = fraction;
    return e;
}

// ARCV of the monitored bus RMS over the 2-cycle window starting one cycle after t.
double arcv_after(const ScenarioResult& r, double t) {
    auto rms = measures::rms_track(r.waveform, kCycle, 32 * r.waveform.ts);
    return measures::arcv_ending_at(rms, t + 3 * kCycle, 2 * kCycle).value;
}

}  // namespace

TEST_CASE("built-in tables") {
    auto net = network_from_tables();
    net.validate();
    REQUIRE(net.lines.size() == 8);
    CHECK(net.lines[0].from == 3);
    CHECK(net.lines[0].to == 4);
    CHECK(net.lines[0].r_ohm == 1.3825);
    CHECK(net.lines[0].l_mh == 2.62);
    double load = 0.0, gen = 0.0;
    for (const auto& b : net.buses) {
        load += b.pl_mw;
        gen += b.pg_mw;
    }
    CHECK(load == doctest::Approx(15.5));
    CHECK(gen == doctest::Approx(12.5));
    CHECK(net.dg_buses() == std::vector<int>{8, 10, 11});
    CHECK(net.dg_bus(1) == 8);
    CHECK_THROWS_AS(net.dg_bus(4), InvalidArgument);
}

TEST_CASE("per-unit conversion") {
    auto net = network_from_tables();
    CHECK(net.base.z_base() == doctest::Approx(16.129).epsilon(1e-12));
    const Complex z = line_impedance_pu(net.lines[0], net.base);
    CHECK(z.real() == doctest::Approx(1.3825 / 16.129).epsilon(1e-12));
    CHECK(std::abs(z.real() - 0.0857) < 5e-5);
    CHECK(z.imag() == doctest::Approx(2.0 * 3.14159265358979323846 * 60.0 * 2.62e-3 / 16.129).epsilon(1e-12));
    for (const auto& l : net.lines) {
        const Line back = line_from_pu(l.from, l.to, line_impedance_pu(l, net.base), net.base);
        CHECK(std::abs(back.r_ohm - l.r_ohm) <= 1e-12 * l.r_ohm);
        CHECK(std::abs(back.l_mh - l.l_mh) <= 1e-12 * l.l_mh);
    }
}

TEST_CASE("network file format") {
    auto net = network_from_tables();
    std::stringstream ss;
    write_network(ss, net);
    auto back = read_network(ss);
    REQUIRE(back.buses.size() == net.buses.size());
    REQUIRE(back.lines.size() == net.lines.size());
    for (std::size_t i = 0; i < net.lines.size(); ++i) {
        CHECK(back.lines[i].r_ohm == net.lines[i].r_ohm);
        CHECK(back.lines[i].l_mh == net.lines[i].l_mh);
    }
    for (std::size_t i = 0; i < net.buses.size(); ++i) CHECK(back.buses[i].ql_mvar == net.buses[i].ql_mvar);
    CHECK(back.grid_bus == 3);
    CHECK(back.island_slack_bus == 8);
    CHECK(back.breaker_closed);

    auto bundled = load_network(ISLANDING_DATA_DIR "/nine_bus.net");
    CHECK(bundled.buses.size() == 9);

    std::istringstream bad_record("base 12.7 10 60\nbus 3 0 0 1 0\nwire 3 4\n");
    try {
        read_network(bad_record, "bad.net");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(e.line() == 3);
    }
    std::istringstream disconnected("grid_bus 3\nisland_slack 4\nbus 3 0 0 1 0\nbus 4 1 0 0 0\nbus 5 0 0 1 0\nline 3 4 1 1\n");
    CHECK_THROWS_AS(read_network(disconnected), ConfigError);
    std::istringstream negative("grid_bus 3\nisland_slack 4\nbus 3 0 0 1 0\nbus 4 1 0 0 0\nline 3 4 -1 1\n");
    CHECK_THROWS_AS(read_network(negative), ConfigError);
}

TEST_CASE("unloaded network sits at the slack voltage") {
    auto net = network_from_tables();
    for (auto& b : net.buses) b = Bus{b.id, 0, 0, 0, 0};
    auto flow = solve_power_flow(net);
    for (const auto& v : flow.voltages) CHECK(std::abs(v - Complex(1.0, 0.0)) < 1e-12);
}

TEST_CASE("Newton solution of the base case") {
    auto net = network_from_tables();
    auto flow = solve_power_flow(net);
    CHECK(flow.converged);
    CHECK(flow.iterations <= 20);
    CHECK(flow.max_mismatch < 1e-8);
    CHECK(flow.slack_bus == 3);
    CHECK(max_deviation(flow, gs_for(net)) < 1e-6);
    const double balance = flow.slack_injection.real() + flow.generation_pu - flow.load_pu - flow.losses_pu;
    CHECK(std::abs(balance) < 1e-8);
    CHECK(flow.losses_pu > 0.0);
    CHECK(flow.generation_pu == doctest::Approx(1.25));
}

TEST_CASE("Newton agrees with Gauss-Seidel under load perturbations") {
    std::mt19937_64 rng(2718);
    std::uniform_real_distribution<double> scale(0.5, 1.5);
    double worst = 0.0, worst_balance = 0.0;
    int worst_iter = 0;
    for (int trial = 0; trial < 50; ++trial) {
        auto net = network_from_tables();
        for (auto& b : net.buses) {
            b.pl_mw *= scale(rng);
            b.ql_mvar *= scale(rng);
        }
        auto flow = solve_power_flow(net);
        worst = std::max(worst, max_deviation(flow, gs_for(net)));
        worst_balance = std::max(worst_balance, std::abs(flow.slack_injection.real() + flow.generation_pu - flow.load_pu - flow.losses_pu));
        worst_iter = std::max(worst_iter, flow.iterations);
    }
    CHECK(worst < 1e-6);
    CHECK(worst_balance < 1e-8);
    CHECK(worst_iter <= 20);
}

TEST_CASE("non-convergence is reported with the final mismatch") {
    auto net = network_from_tables();
    for (auto& b : net.buses) b.pl_mw *= 200.0;
    PowerFlowOptions opt;
    opt.max_iterations = 15;
    try {
        solve_power_flow(net, opt);
        FAIL("expected ConvergenceError");
    } catch (const ConvergenceError& e) {
        CHECK(e.iterations() == 15);
        CHECK(e.final_mismatch() > 1e-8);
        CHECK(std::string(e.what()).find("did not converge") != std::string::npos);
    }
}

TEST_CASE("constant-impedance loads enter the admittance matrix") {
    auto net = network_from_tables();
    auto y_p = admittance_matrix(net, LoadModel::ConstantPower);
    auto y_z = admittance_matrix(net, LoadModel::ConstantImpedance);
    const auto i7 = static_cast<Eigen::Index>(net.index_of(7));
    const Complex shunt = y_z(i7, i7) - y_p(i7, i7);
    CHECK(std::abs(shunt - Complex(0.5, -0.4)) < 1e-12);
    CHECK((y_z - y_z.transpose()).norm() < 1e-12);
}

TEST_CASE("island operating point balances the reference DG") {
    auto net = network_from_tables();
    net.breaker_closed = false;
    auto op = solve_operating_point(net, LoadModel::ConstantImpedance);
    REQUIRE_FALSE(op.collapsed);
    CHECK(op.flow.slack_bus == 8);
    const auto i8 = net.index_of(8);
    CHECK(op.flow.injections[i8].real() == doctest::Approx(0.6).epsilon(1e-6));
    const double v8 = std::abs(op.flow.voltages[i8]);
    CHECK(v8 < 1.0);  // generation short of demand pulls the island voltage down
    double load_at_nominal = 0.0;
    for (const auto& b : net.buses) load_at_nominal += b.pl_mw;
    CHECK(op.flow.load_pu == doctest::Approx(op.flow.generation_pu + 0.6 - op.flow.losses_pu).epsilon(1e-6));
    CHECK(op.flow.load_pu < load_at_nominal / 10.0);

    for (auto& b : net.buses) b.pg_mw = 0.0;
    CHECK(solve_operating_point(net, LoadModel::ConstantImpedance).collapsed);
}

TEST_CASE("event script parsing and validation") {
    KeyValueEntry e{"event", "0.1 three_phase_fault bus=9 depth=0.4 inject=0.03 decay=0.03", "s.scn", 4};
    auto ev = parse_event(e);
    CHECK(ev.kind == EventKind::ThreePhaseFault);
    CHECK(ev.bus == 9);
    CHECK(ev.depth == 0.4);
    CHECK(ev.inject_5_4 == 0.03);
    CHECK(ev.decay == 0.03);
    CHECK(event_kind_from_string(to_string(EventKind::DgPowerShift)) == EventKind::DgPowerShift);
    CHECK_THROWS_AS(parse_event({"event", "0.1 meteor bus=9", "s.scn", 5}), ConfigError);
    CHECK_THROWS_AS(parse_event({"event", "0.1 load_decrease what=1", "s.scn", 6}), ConfigError);

    EventScript two_islands{{make_event(0.1, EventKind::Islanding), make_event(0.2, EventKind::Islanding)}};
    CHECK_THROWS_AS(two_islands.validate(0.3), InvalidArgument);
    EventScript unordered{{shift_event(0.2, 0.5), shift_event(0.1, 0.5)}};
    CHECK_THROWS_AS(unordered.validate(0.3), InvalidArgument);
    EventScript late{{shift_event(0.5, 0.5)}};
    CHECK_THROWS_AS(late.validate(0.3), InvalidArgument);
}

TEST_CASE("steady state without events") {
    auto r = run_scenario(network_from_tables(), {}, SimulationSettings{});
    CHECK(r.waveform.size() == 2304);
    auto rms = measures::rms_track(r.waveform, kCycle, 32 * r.waveform.ts);
    const std::size_t m = 8;
    double worst = 0.0;
    for (std::size_t last = m; last < rms.size(); ++last) worst = std::max(worst, measures::total_variation_rate(rms.values, last - m, last, 2 * kCycle));
    CHECK(worst < 0.05);
    CHECK_FALSE(r.collapsed);
}

TEST_CASE("unit power shift is the identity") {
    SimulationSettings s;
    auto base = run_scenario(network_from_tables(), {}, s);
    auto shifted = run_scenario(network_from_tables(), EventScript{{shift_event(0.2, 1.0)}}, s);
    REQUIRE(shifted.waveform.size() == base.waveform.size());
    double worst = 0.0;
    for (std::size_t k = 0; k < base.waveform.size(); ++k) worst = std::max(worst, std::abs(shifted.waveform.samples[k] - base.waveform.samples[k]));
    CHECK(worst < 1e-12);
    REQUIRE(shifted.acks.size() == 1);
    CHECK(shifted.acks[0].p_after_mw == shifted.acks[0].p_before_mw);
}

TEST_CASE("grid-connected network is stiffer than the island") {
    SimulationSettings s;
    auto grid_run = run_scenario(network_from_tables(), EventScript{{shift_event(0.2, 0.12)}}, s);
    auto island_run = run_scenario(network_from_tables(),
                                   EventScript{{make_event(0.1, EventKind::Islanding), shift_event(0.2, 0.12)}}, s);
    REQUIRE(grid_run.acks.size() == 1);
    CHECK(grid_run.acks[0].p_after_mw == doctest::Approx(0.72));
    const double grid_arcv = arcv_after(grid_run, 0.2);
    const double island_arcv = arcv_after(island_run, 0.2);
    CHECK(grid_arcv < 1.0);
    CHECK(island_arcv >= 1.0);

    const auto i8 = static_cast<std::size_t>(std::find(grid_run.bus_ids.begin(), grid_run.bus_ids.end(), 8) - grid_run.bus_ids.begin());
    const auto before = static_cast<std::size_t>(0.2 / grid_run.trajectory_stride) - 1;
    const double d_grid = std::abs(grid_run.bus_rms[i8].back() - grid_run.bus_rms[i8][before]);
    const double d_island = std::abs(island_run.bus_rms[i8].back() - island_run.bus_rms[i8][before]);
    CHECK(d_grid < d_island);
}

TEST_CASE("closed-loop power shift commands") {
    SimulationSettings s;
    ScenarioRunner runner(network_from_tables(), {}, s);
    while (runner.next_time() < 0.15) runner.next_sample();
    CHECK_THROWS_AS(runner.apply_power_shift(7, 0.5, runner.next_time()), InvalidArgument);
    CHECK_THROWS_AS(runner.apply_power_shift(1, 0.0, runner.next_time()), InvalidArgument);
    CHECK_THROWS_AS(runner.apply_power_shift(1, 1.5, runner.next_time()), InvalidArgument);
    auto queued = runner.apply_power_shift(2, 0.5, 0.2);
    CHECK(queued.t_effective == doctest::Approx(0.2));
    CHECK(runner.network().bus(10).pg_mw == 1.5);
    while (!runner.done()) runner.next_sample();
    CHECK(runner.network().bus(10).pg_mw == doctest::Approx(0.75));
    CHECK(runner.result().acks.size() == 1);

    CHECK_THROWS_AS(ScenarioRunner(network_from_tables(), EventScript{{[] {
                                       auto e = shift_event(0.2, 0.5);
                                       e.dg_id = 9;
                                       return e;
                                   }()}},
                                   s),
                    InvalidArgument);
}

TEST_CASE("determinism") {
    SimulationSettings s;
    s.noise_std = 0.01;
    s.seed = 77;
    EventScript script{{make_event(0.1, EventKind::Islanding), shift_event(0.2, 0.12)}};
    script.events[0].inject_5_4 = 0.2;
    auto a = run_scenario(network_from_tables(), script, s);
    auto b = run_scenario(network_from_tables(), script, s);
    CHECK(a.waveform.samples == b.waveform.samples);
    CHECK(a.bus_rms == b.bus_rms);
    REQUIRE(a.log.size() == b.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i) CHECK(a.log[i].text == b.log[i].text);
}

TEST_CASE("island without generation collapses") {
    auto net = network_from_tables();
    for (auto& b : net.buses) b.pg_mw = 0.0;
    auto r = run_scenario(net, EventScript{{make_event(0.1, EventKind::Islanding)}}, SimulationSettings{});
    CHECK(r.collapsed);
    double tail = 0.0;
    for (std::size_t k = r.waveform.size() - 128; k < r.waveform.size(); ++k) tail = std::max(tail, std::abs(r.waveform.samples[k]));
    CHECK(tail < 0.1);
}

TEST_CASE("fault dips and load decreases") {
    SimulationSettings s;
    auto fault = make_event(0.1, EventKind::ThreePhaseFault);
    fault.bus = 9;
    fault.depth = 0.5;
    auto r = run_scenario(network_from_tables(), EventScript{{fault}}, s);
    const auto i8 = static_cast<std::size_t>(std::find(r.bus_ids.begin(), r.bus_ids.end(), 8) - r.bus_ids.begin());
    CHECK(r.bus_rms[i8].back() == doctest::Approx(0.5 * r.bus_rms[i8].front()).epsilon(1e-6));

    auto dec = make_event(0.1, EventKind::LoadDecrease);
    dec.bus = 7;
    dec.fraction = 0.5;
    ScenarioRunner runner(network_from_tables(), EventScript{{dec}}, s);
    while (!runner.done()) runner.next_sample();
    CHECK(runner.network().bus(7).pl_mw == doctest::Approx(2.5));
    CHECK(runner.network().bus(7).ql_mvar == doctest::Approx(2.0));
    CHECK(runner.result().bus_rms[i8].back() > runner.result().bus_rms[i8].front());
}
