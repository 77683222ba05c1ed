#include "islanding/gridsim.hpp"

#include "islanding/errors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <optional>
#include <ostream>
#include <queue>
#include <set>
#include <sstream>

namespace islanding::grid {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double mw_to_pu(double mw, const BaseQuantities& b) { return mw * 1e6 / b.s_base; }

}  // namespace

void BaseQuantities::validate() const {
    if (!(v_base > 0.0 && s_base > 0.0 && f_base > 0.0)) throw InvalidArgument("base quantities must be > 0");
}

std::size_t NetworkModel::index_of(int bus_id) const {
    for (std::size_t i = 0; i < buses.size(); ++i) {
        if (buses[i].id == bus_id) return i;
    }
    throw InvalidArgument("unknown bus " + std::to_string(bus_id));
}

bool NetworkModel::has_bus(int bus_id) const {
    return std::any_of(buses.begin(), buses.end(), [&](const Bus& b) { return b.id == bus_id; });
}

std::vector<int> NetworkModel::dg_buses() const {
    std::vector<int> out;
    for (const auto& b : buses) {
        if (b.pg_mw != 0.0) out.push_back(b.id);
    }
    std::sort(out.begin(), out.end());
    return out;
}

int NetworkModel::dg_bus(int dg_id) const {
    const auto dgs = dg_buses();
    if (dg_id < 1 || dg_id > static_cast<int>(dgs.size())) throw InvalidArgument("unknown DG " + std::to_string(dg_id));
    return dgs[static_cast<std::size_t>(dg_id - 1)];
}

void NetworkModel::validate() const {
    base.validate();
    if (buses.empty()) throw InvalidArgument("network has no buses");
    std::set<int> ids;
    for (const auto& b : buses) {
        if (!ids.insert(b.id).second) throw InvalidArgument("duplicate bus " + std::to_string(b.id));
    }
    for (const auto& l : lines) {
        if (!ids.count(l.from) || !ids.count(l.to)) {
            throw InvalidArgument("line " + std::to_string(l.from) + "-" + std::to_string(l.to) + " references an unknown bus");
        }
        if (l.from == l.to) throw InvalidArgument("line with identical endpoints");
        if (!(l.r_ohm > 0.0 && l.l_mh > 0.0)) {
            throw InvalidArgument("line " + std::to_string(l.from) + "-" + std::to_string(l.to) + " must have positive R and L");
        }
    }
    if (!ids.count(grid_bus)) throw InvalidArgument("grid bus " + std::to_string(grid_bus) + " not in network");
    if (!ids.count(island_slack_bus)) throw InvalidArgument("island slack bus " + std::to_string(island_slack_bus) + " not in network");

    // Connectivity from the first bus.
    std::set<int> seen{buses.front().id};
    std::queue<int> todo;
    todo.push(buses.front().id);
    while (!todo.empty()) {
        const int b = todo.front();
        todo.pop();
        for (const auto& l : lines) {
            int other = l.from == b ? l.to : (l.to == b ? l.from : -1);
            if (other >= 0 && seen.insert(other).second) todo.push(other);
        }
    }
    if (seen.size() != buses.size()) throw InvalidArgument("network is not connected");
}

Complex line_impedance_pu(const Line& line, const BaseQuantities& base) {
    const double x_ohm = kTwoPi * base.f_base * line.l_mh * 1e-3;
    return Complex(line.r_ohm, x_ohm) / base.z_base();
}

Line line_from_pu(int from, int to, Complex z_pu, const BaseQuantities& base) {
    const Complex z_ohm = z_pu * base.z_base();
    return Line{from, to, z_ohm.real(), z_ohm.imag() / (kTwoPi * base.f_base) * 1e3};
}

NetworkModel network_from_tables() {
    NetworkModel net;
    net.lines = {
        {3, 4, 1.3825, 2.62},     {4, 5, 0.18825, 0.262},  {5, 6, 0.11295, 0.1572},
        {6, 7, 0.26355, 0.3668},  {7, 8, 0.09036, 0.12576}, {7, 9, 1.09185, 1.5196},
        {9, 10, 0.33885, 0.4716}, {10, 11, 0.3765, 0.524},
    };
    net.buses = {
        {3, 0.0, 0.0, 1.5, 0.0}, {4, 0.0, 0.0, 5.3, 0.0}, {5, 0.0, 0.0, 1.0, 0.0},
        {6, 0.0, 5.0, 0.7, 0.0}, {7, 0.0, 0.0, 5.0, 4.0}, {8, 6.0, 0.0, 0.0, 0.0},
        {9, 0.0, 0.0, 2.0, 0.0}, {10, 1.5, 0.0, 0.0, 0.0}, {11, 5.0, 0.0, 0.0, 0.0},
    };
    return net;
}

NetworkModel read_network(std::istream& in, const std::string& source) {
    NetworkModel net;
    net.buses.clear();
    net.lines.clear();
    std::string raw;
    int line_no = 0;
    auto num = [&](const std::string& tok) {
        try {
            return parse_double(tok);
        } catch (const InvalidArgument& e) {
            throw ConfigError(source, line_no, e.what());
        }
    };
    auto integer = [&](const std::string& tok) {
        const double v = num(tok);
        if (v != std::floor(v)) throw ConfigError(source, line_no, "expected an integer bus id, got `" + tok + "`");
        return static_cast<int>(v);
    };
    while (std::getline(in, raw)) {
        ++line_no;
        auto hash = raw.find('#');
        auto tok = split_whitespace(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (tok.empty()) continue;
        const std::string& kw = tok[0];
        auto expect = [&](std::size_t n) {
            if (tok.size() != n) {
                throw ConfigError(source, line_no,
                                  "`" + kw + "` expects " + std::to_string(n - 1) + " values, got " + std::to_string(tok.size() - 1));
            }
        };
        if (kw == "base") {
            expect(4);
            net.base = {num(tok[1]) * 1e3, num(tok[2]) * 1e6, num(tok[3])};
        } else if (kw == "grid_bus") {
            expect(2);
            net.grid_bus = integer(tok[1]);
        } else if (kw == "island_slack") {
            expect(2);
            net.island_slack_bus = integer(tok[1]);
        } else if (kw == "breaker") {
            expect(2);
            if (tok[1] != "open" && tok[1] != "closed") throw ConfigError(source, line_no, "breaker must be open or closed");
            net.breaker_closed = tok[1] == "closed";
        } else if (kw == "bus") {
            expect(6);
            net.buses.push_back({integer(tok[1]), num(tok[2]), num(tok[3]), num(tok[4]), num(tok[5])});
        } else if (kw == "line") {
            expect(5);
            const Line l{integer(tok[1]), integer(tok[2]), num(tok[3]), num(tok[4])};
            if (!(l.r_ohm > 0.0 && l.l_mh > 0.0)) throw ConfigError(source, line_no, "line R and L must be positive");
            net.lines.push_back(l);
        } else {
            throw ConfigError(source, line_no, "unknown record `" + kw + "`");
        }
    }
    try {
        net.validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError(source, 0, e.what());
    }
    return net;
}

NetworkModel load_network(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError(path.string(), 0, "cannot open network file");
    return read_network(f, path.string());
}

void write_network(std::ostream& out, const NetworkModel& net) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "base %.17g %.17g %.17g\n", net.base.v_base / 1e3, net.base.s_base / 1e6, net.base.f_base);
    out << buf << "grid_bus " << net.grid_bus << "\nisland_slack " << net.island_slack_bus << '\n';
    out << "breaker " << (net.breaker_closed ? "closed" : "open") << '\n';
    out << "# bus  PG_MW  QG_Mvar  PL_MW  QL_Mvar\n";
    for (const auto& b : net.buses) {
        std::snprintf(buf, sizeof buf, "bus %d %.17g %.17g %.17g %.17g\n", b.id, b.pg_mw, b.qg_mvar, b.pl_mw, b.ql_mvar);
        out << buf;
    }
    out << "# from  to  R_ohm  L_mH\n";
    for (const auto& l : net.lines) {
        std::snprintf(buf, sizeof buf, "line %d %d %.17g %.17g\n", l.from, l.to, l.r_ohm, l.l_mh);
        out << buf;
    }
}

Complex PowerFlowResult::voltage(int bus_id) const {
    for (std::size_t i = 0; i < bus_ids.size(); ++i) {
        if (bus_ids[i] == bus_id) return voltages[i];
    }
    throw InvalidArgument("unknown bus " + std::to_string(bus_id));
}

Eigen::MatrixXcd admittance_matrix(const NetworkModel& net, LoadModel load_model) {
    const auto n = static_cast<Eigen::Index>(net.buses.size());
    Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(n, n);
    for (const auto& l : net.lines) {
        const auto i = static_cast<Eigen::Index>(net.index_of(l.from));
        const auto j = static_cast<Eigen::Index>(net.index_of(l.to));
        const Complex ys = 1.0 / line_impedance_pu(l, net.base);
        y(i, i) += ys;
        y(j, j) += ys;
        y(i, j) -= ys;
        y(j, i) -= ys;
    }
    if (load_model == LoadModel::ConstantImpedance) {
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto& b = net.buses[static_cast<std::size_t>(i)];
            y(i, i) += Complex(mw_to_pu(b.pl_mw, net.base), -mw_to_pu(b.ql_mvar, net.base));
        }
    }
    return y;
}

PowerFlowResult solve_power_flow(const NetworkModel& net, const PowerFlowOptions& options) {
    net.validate();
    const int slack_id = options.slack_bus.value_or(net.slack_bus());
    const auto n = static_cast<Eigen::Index>(net.buses.size());
    const auto s = static_cast<Eigen::Index>(net.index_of(slack_id));
    const Eigen::MatrixXcd y = admittance_matrix(net, options.load_model);
    const bool z_loads = options.load_model == LoadModel::ConstantImpedance;

    Eigen::VectorXcd s_sched(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& b = net.buses[static_cast<std::size_t>(i)];
        Complex gen(mw_to_pu(b.pg_mw, net.base), mw_to_pu(b.qg_mvar, net.base));
        Complex load(mw_to_pu(b.pl_mw, net.base), mw_to_pu(b.ql_mvar, net.base));
        s_sched(i) = z_loads ? gen : gen - load;
    }

    std::vector<Eigen::Index> pq;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (i != s) pq.push_back(i);
    }
    const auto m = static_cast<Eigen::Index>(pq.size());

    Eigen::VectorXd va = Eigen::VectorXd::Constant(n, options.slack_angle);
    Eigen::VectorXd vm = Eigen::VectorXd::Constant(n, options.slack_voltage > 0.0 ? options.slack_voltage : 1.0);
    vm(s) = options.slack_voltage;

    auto phasors = [&] {
        Eigen::VectorXcd v(n);
        for (Eigen::Index i = 0; i < n; ++i) v(i) = std::polar(vm(i), va(i));
        return v;
    };

    PowerFlowResult res;
    Eigen::VectorXcd v = phasors();
    Eigen::VectorXd f(2 * m);
    auto mismatch = [&]() {
        const Eigen::VectorXcd s_calc = v.cwiseProduct((y * v).conjugate());
        for (Eigen::Index k = 0; k < m; ++k) {
            const Complex d = s_calc(pq[static_cast<std::size_t>(k)]) - s_sched(pq[static_cast<std::size_t>(k)]);
            f(k) = d.real();
            f(m + k) = d.imag();
        }
        return m == 0 ? 0.0 : f.cwiseAbs().maxCoeff();
    };

    double worst = mismatch();
    int it = 0;
    while (!(worst < options.tolerance)) {
        if (it >= options.max_iterations || !std::isfinite(worst)) {
            throw ConvergenceError("power flow did not converge after " + std::to_string(it) +
                                       " iterations (max mismatch " + std::to_string(worst) + " pu)",
                                   worst, it);
        }
        const Eigen::VectorXcd ibus = y * v;
        Eigen::VectorXcd vnorm(n);
        for (Eigen::Index i = 0; i < n; ++i) vnorm(i) = v(i) / std::abs(v(i));
        // dS/dθ = j·diag(V)·conj(diag(I) − Y·diag(V));  dS/d|V| = diag(V)·conj(Y·diag(V/|V|)) + conj(diag(I))·diag(V/|V|)
        Eigen::MatrixXcd ds_dva = -(y * v.asDiagonal()).conjugate();
        ds_dva.diagonal() += ibus.conjugate();
        ds_dva = Complex(0.0, 1.0) * (v.asDiagonal() * ds_dva);
        Eigen::MatrixXcd ds_dvm = v.asDiagonal() * (y * vnorm.asDiagonal()).conjugate();
        ds_dvm.diagonal() += ibus.conjugate().cwiseProduct(vnorm);

        Eigen::MatrixXd jac(2 * m, 2 * m);
        for (Eigen::Index r = 0; r < m; ++r) {
            for (Eigen::Index c = 0; c < m; ++c) {
                const auto ir = pq[static_cast<std::size_t>(r)], ic = pq[static_cast<std::size_t>(c)];
                jac(r, c) = ds_dva(ir, ic).real();
                jac(r, m + c) = ds_dvm(ir, ic).real();
                jac(m + r, c) = ds_dva(ir, ic).imag();
                jac(m + r, m + c) = ds_dvm(ir, ic).imag();
            }
        }
        const Eigen::VectorXd dx = jac.partialPivLu().solve(-f);
        for (Eigen::Index k = 0; k < m; ++k) {
            va(pq[static_cast<std::size_t>(k)]) += dx(k);
            vm(pq[static_cast<std::size_t>(k)]) += dx(m + k);
        }
        v = phasors();
        worst = mismatch();
        ++it;
    }

    res.converged = true;
    res.iterations = it;
    res.max_mismatch = worst;
    res.slack_bus = slack_id;
    const Eigen::VectorXcd s_calc = v.cwiseProduct((y * v).conjugate());
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& b = net.buses[static_cast<std::size_t>(i)];
        res.bus_ids.push_back(b.id);
        res.voltages.push_back(v(i));
        const double v2 = std::norm(v(i));
        const Complex load(mw_to_pu(b.pl_mw, net.base), mw_to_pu(b.ql_mvar, net.base));
        const Complex load_now = z_loads ? load * v2 : load;
        const Complex gen(mw_to_pu(b.pg_mw, net.base), mw_to_pu(b.qg_mvar, net.base));
        // Net injection into the series network at this bus.
        res.injections.push_back(z_loads ? s_calc(i) - load_now : s_calc(i));
        res.load_pu += load_now.real();
        if (i == s) {
            res.slack_injection = res.injections.back() + load_now;
        } else {
            res.generation_pu += gen.real();
        }
    }
    for (const auto& l : net.lines) {
        const Complex i_line = (v(static_cast<Eigen::Index>(net.index_of(l.from))) -
                                v(static_cast<Eigen::Index>(net.index_of(l.to)))) /
                               line_impedance_pu(l, net.base);
        res.losses_pu += std::norm(i_line) * line_impedance_pu(l, net.base).real();
    }
    return res;
}

OperatingPoint solve_operating_point(const NetworkModel& net, LoadModel grid_load_model) {
    OperatingPoint op;
    if (net.breaker_closed) {
        PowerFlowOptions o;
        o.load_model = grid_load_model;
        op.flow = solve_power_flow(net, o);
        return op;
    }

    double total_gen = 0.0;
    for (const auto& b : net.buses) total_gen += b.pg_mw;
    if (!(total_gen > 0.0)) {
        op.collapsed = true;
        op.flow.slack_bus = net.island_slack_bus;
        op.flow.converged = true;
        for (const auto& b : net.buses) {
            op.flow.bus_ids.push_back(b.id);
            op.flow.voltages.emplace_back(0.0, 0.0);
            op.flow.injections.emplace_back(0.0, 0.0);
        }
        return op;
    }

    const double p_set = mw_to_pu(net.bus(net.island_slack_bus).pg_mw, net.base);
    PowerFlowOptions o;
    o.load_model = LoadModel::ConstantImpedance;
    o.slack_bus = net.island_slack_bus;
    // Returns nullopt where no power-flow solution exists (voltage too low
    // for the constant-power DGs to inject their setpoints).
    auto residual = [&](double magnitude, PowerFlowResult* keep) -> std::optional<double> {
        o.slack_voltage = magnitude;
        try {
            PowerFlowResult r = solve_power_flow(net, o);
            const double g = r.slack_injection.real() - p_set;
            if (keep) *keep = std::move(r);
            return g;
        } catch (const ConvergenceError&) {
            return std::nullopt;
        }
    };

    // The slack injection grows with the island voltage level: bracket, then bisect.
    double lo = 1.0, hi = 1.0;
    auto g1 = residual(1.0, nullptr);
    if (g1 && *g1 < 0.0) {
        for (;;) {
            hi *= 1.1;
            auto g = residual(hi, nullptr);
            if (g && *g >= 0.0) break;
            if (!g || hi > 3.0) throw ConvergenceError("island operating point not found below 3 pu", g1 ? std::abs(*g1) : 0.0, 0);
            lo = hi;
        }
    } else {
        for (;;) {
            lo *= 0.9;
            auto g = residual(lo, nullptr);
            if (!g || *g <= 0.0) break;
            if (lo < 1e-3) throw ConvergenceError("island operating point not found above 1e-3 pu", std::abs(*g), 0);
            hi = lo;
        }
    }
    PowerFlowResult best;
    bool have = false;
    for (int i = 0; i < 200 && hi - lo > 1e-14; ++i) {
        const double mid = 0.5 * (lo + hi);
        auto g = residual(mid, &best);
        if (!g || *g < 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
        have = have || g.has_value();
        if (g && std::abs(*g) < 1e-11) break;
    }
    if (std::abs(best.slack_injection.real() - p_set) > 1e-8 || !have) {
        auto g = residual(hi, &best);
        if (!g) throw ConvergenceError("island operating point bisection failed", 0.0, 0);
    }
    op.flow = std::move(best);
    return op;
}

// ---------------------------------------------------------------- scenarios

std::string to_string(EventKind kind) {
    switch (kind) {
        case EventKind::Islanding: return "islanding";
        case EventKind::ThreePhaseFault: return "three_phase_fault";
        case EventKind::SinglePhaseFault: return "single_phase_fault";
        case EventKind::LoadDecrease: return "load_decrease";
        case EventKind::DgPowerShift: return "dg_power_shift";
    }
    return "unknown";
}

EventKind event_kind_from_string(const std::string& s) {
    for (auto k : {EventKind::Islanding, EventKind::ThreePhaseFault, EventKind::SinglePhaseFault, EventKind::LoadDecrease,
                   EventKind::DgPowerShift}) {
        if (to_string(k) == s) return k;
    }
    throw InvalidArgument("unknown event kind `" + s + "`");
}

ScenarioEvent parse_event(const KeyValueEntry& entry) {
    auto tok = split_whitespace(entry.value);
    if (tok.size() < 2) throw_entry_error(entry, "expected `<t> <kind> [key=value ...]`");
    ScenarioEvent ev;
    try {
        ev.t = parse_double(tok[0]);
        ev.kind = event_kind_from_string(tok[1]);
        for (std::size_t i = 2; i < tok.size(); ++i) {
            auto eq = tok[i].find('=');
            if (eq == std::string::npos) throw InvalidArgument("expected key=value, got `" + tok[i] + "`");
            const std::string key = tok[i].substr(0, eq);
            const double val = parse_double(tok[i].substr(eq + 1));
            if (key == "bus") ev.bus = static_cast<int>(val);
            else if (key == "depth") ev.depth = val;
            else if (key == "fraction") ev.fraction = val;
            else if (key == "dg") ev.dg_id = static_cast<int>(val);
            else if (key == "inject") ev.inject_5_4 = val;
            else if (key == "tau") ev.tau = val;
            else if (key == "decay") ev.decay = val;
            else throw InvalidArgument("unknown event parameter `" + key + "`");
        }
    } catch (const InvalidArgument& e) {
        throw_entry_error(entry, e.what());
    }
    return ev;
}

void EventScript::validate(double duration) const {
    double last = -1.0;
    int islands = 0;
    for (const auto& ev : events) {
        if (!(ev.t >= 0.0 && ev.t <= duration)) throw InvalidArgument("event time outside the record");
        if (ev.t < last) throw InvalidArgument("events must be time-ordered");
        last = ev.t;
        if (ev.kind == EventKind::Islanding && ++islands > 1) throw InvalidArgument("at most one islanding event");
        if (!(ev.inject_5_4 >= 0.0 && ev.tau >= 0.0 && ev.decay >= 0.0)) throw InvalidArgument("event template parameters must be >= 0");
        switch (ev.kind) {
            case EventKind::ThreePhaseFault:
            case EventKind::SinglePhaseFault:
                if (!(ev.depth >= 0.0 && ev.depth < 1.0)) throw InvalidArgument("fault depth must be in [0, 1)");
                break;
            case EventKind::LoadDecrease:
                if (!(ev.fraction >= 0.0 && ev.fraction <= 1.0)) throw InvalidArgument("load fraction must be in [0, 1]");
                break;
            case EventKind::DgPowerShift:
                if (!(ev.fraction > 0.0 && ev.fraction <= 1.0)) throw InvalidArgument("power-shift fraction must be in (0, 1]");
                break;
            case EventKind::Islanding: break;
        }
    }
}

void SimulationSettings::validate() const {
    if (!(ts > 0.0)) throw InvalidArgument("ts must be > 0");
    if (!(duration >= ts)) throw InvalidArgument("duration must be >= ts");
    if (!(relax_tau > 0.0 && fault_tau > 0.0)) throw InvalidArgument("time constants must be > 0");
    if (!(noise_std >= 0.0)) throw InvalidArgument("noise_std must be >= 0");
    if (trajectory_stride == 0) throw InvalidArgument("trajectory stride must be >= 1 sample");
}

ScenarioRunner::ScenarioRunner(NetworkModel net, EventScript script, SimulationSettings settings)
    : net_(std::move(net)),
      script_(std::move(script)),
      settings_(std::move(settings)),
      noise_(settings_.seed, settings_.noise_std) {
    settings_.validate();
    net_.validate();
    if (!net_.has_bus(settings_.monitor_bus)) throw InvalidArgument("monitor bus " + std::to_string(settings_.monitor_bus) + " not in network");
    script_.validate(settings_.duration);
    for (const auto& ev : script_.events) {
        if ((ev.kind == EventKind::LoadDecrease || ev.kind == EventKind::ThreePhaseFault ||
             ev.kind == EventKind::SinglePhaseFault) && ev.bus != 0 && !net_.has_bus(ev.bus)) {
            throw InvalidArgument("event references unknown bus " + std::to_string(ev.bus));
        }
        if (ev.kind == EventKind::DgPowerShift) (void)net_.dg_bus(ev.dg_id);
    }
    total_samples_ = signal::sample_count(settings_.duration, settings_.ts);
    background_.fundamental_hz = net_.base.f_base;
    background_.components = settings_.background;

    result_.monitor_bus = settings_.monitor_bus;
    result_.waveform.ts = settings_.ts;
    result_.waveform.t0 = 0.0;
    result_.waveform.samples.reserve(total_samples_);
    result_.trajectory_stride = static_cast<double>(settings_.trajectory_stride) * settings_.ts;
    for (const auto& b : net_.buses) result_.bus_ids.push_back(b.id);
    result_.bus_rms.resize(net_.buses.size());

    v_from_.assign(net_.buses.size(), Complex{});
    v_to_.assign(net_.buses.size(), Complex{});
    resolve(0.0, "initial");
    v_from_ = v_to_;
}

double ScenarioRunner::dip_factor(double t) const {
    double f = 1.0;
    for (const auto& d : dips_) {
        if (t >= d.t0) f *= 1.0 - d.depth * (1.0 - std::exp(-(t - d.t0) / d.tau));
    }
    return f;
}

Complex ScenarioRunner::phasor(int bus_id, double t) const {
    const auto i = net_.index_of(bus_id);
    const double w = std::exp(-(t - t_change_) / settings_.relax_tau);
    return (v_to_[i] + (v_from_[i] - v_to_[i]) * w) * dip_factor(t);
}

void ScenarioRunner::resolve(double t, const std::string& label) {
    std::vector<Complex> now(net_.buses.size());
    const double w = std::exp(-(t - t_change_) / settings_.relax_tau);
    for (std::size_t i = 0; i < now.size(); ++i) now[i] = v_to_[i] + (v_from_[i] - v_to_[i]) * w;

    OperatingPoint op = solve_operating_point(net_, settings_.load_model);
    if (op.collapsed) {
        result_.collapsed = true;
        result_.log.push_back({t, "island has no generation: voltage collapses to zero"});
    }
    if (!net_.breaker_closed && !op.collapsed) {
        // The island's angle reference is arbitrary; keep the reference bus continuous.
        const auto ref = net_.index_of(net_.island_slack_bus);
        const Complex rot = std::polar(1.0, std::arg(now[ref]) - std::arg(op.flow.voltages[ref]));
        for (auto& v : op.flow.voltages) v *= rot;
    }
    v_from_ = std::move(now);
    v_to_ = op.flow.voltages;
    t_change_ = t;
    result_.snapshots.push_back({t, label, std::move(op.flow)});
}

void ScenarioRunner::fire_due_events(double t) {
    const double eps = 1e-9 * settings_.ts;
    while (next_event_ < script_.events.size() && script_.events[next_event_].t <= t + eps) {
        const ScenarioEvent ev = script_.events[next_event_++];
        apply_event(ev, t);
    }
}

void ScenarioRunner::apply_event(const ScenarioEvent& ev, double t) {
    char buf[200];
    switch (ev.kind) {
        case EventKind::Islanding:
            net_.breaker_closed = false;
            islanded_once_ = true;
            std::snprintf(buf, sizeof buf, "islanding: grid breaker at bus %d opened", net_.grid_bus);
            result_.log.push_back({t, buf});
            resolve(t, "islanded");
            if (ev.inject_5_4 > 0.0) templates_.push_back({t, ev.inject_5_4, ev.tau, ev.decay, {5, 4}});
            break;
        case EventKind::ThreePhaseFault:
        case EventKind::SinglePhaseFault: {
            const double tau = ev.tau > 0.0 ? ev.tau : settings_.fault_tau;
            dips_.push_back({t, ev.depth, tau});
            if (ev.inject_5_4 > 0.0) templates_.push_back({t, ev.inject_5_4, tau, ev.decay, {5, 4}});
            std::snprintf(buf, sizeof buf, "%s at bus %d: dip depth %.4g", to_string(ev.kind).c_str(), ev.bus, ev.depth);
            result_.log.push_back({t, buf});
            break;
        }
        case EventKind::LoadDecrease: {
            auto& b = net_.bus(ev.bus);
            b.pl_mw *= ev.fraction;
            b.ql_mvar *= ev.fraction;
            std::snprintf(buf, sizeof buf, "load at bus %d reduced to %.4g of its value", ev.bus, ev.fraction);
            result_.log.push_back({t, buf});
            resolve(t, "load decrease");
            break;
        }
        case EventKind::DgPowerShift:
            apply_power_shift(ev.dg_id, ev.fraction, t);
            break;
    }
}

PowerShiftAck ScenarioRunner::apply_power_shift(int dg_id, double fraction, double t) {
    const int bus_id = net_.dg_bus(dg_id);
    if (!(fraction > 0.0 && fraction <= 1.0)) throw InvalidArgument("power-shift fraction must be in (0, 1]");
    auto& b = net_.bus(bus_id);
    if (b.pg_mw == 0.0) throw InvalidArgument("DG " + std::to_string(dg_id) + " has no output to shift");

    const double t_eff = std::max(t, next_time());
    if (t_eff > next_time() + 1e-9 * settings_.ts) {
        // Future command: queue it as a scripted shift.
        ScenarioEvent ev;
        ev.t = t_eff;
        ev.kind = EventKind::DgPowerShift;
        ev.dg_id = dg_id;
        ev.fraction = fraction;
        auto pos = std::upper_bound(script_.events.begin() + static_cast<std::ptrdiff_t>(next_event_), script_.events.end(), ev,
                                    [](const ScenarioEvent& a, const ScenarioEvent& e) { return a.t < e.t; });
        script_.events.insert(pos, ev);
        return {dg_id, fraction, t, t_eff, b.pg_mw, b.pg_mw * fraction};
    }

    PowerShiftAck ack{dg_id, fraction, t, t_eff, b.pg_mw, b.pg_mw * fraction};
    b.pg_mw *= fraction;
    char buf[200];
    std::snprintf(buf, sizeof buf, "power shift: DG %d (bus %d) %.4g MW -> %.4g MW", dg_id, bus_id, ack.p_before_mw, ack.p_after_mw);
    result_.log.push_back({t_eff, buf});
    resolve(t_eff, "power shift");
    result_.acks.push_back(ack);
    return ack;
}

double ScenarioRunner::next_sample() {
    if (done()) throw InvalidArgument("scenario already finished");
    const double t = next_time();
    fire_due_events(t);

    if (next_index_ % settings_.trajectory_stride == 0) {
        for (std::size_t i = 0; i < net_.buses.size(); ++i) {
            result_.bus_rms[i].push_back(std::abs(phasor(net_.buses[i].id, t)));
        }
    }

    const double omega = kTwoPi * net_.base.f_base;
    const Complex v = phasor(settings_.monitor_bus, t);
    // √2·|V|·sin(ωt + ∠V)
    double sample = std::sqrt(2.0) * (v * std::polar(1.0, omega * t)).imag();
    sample += signal::evaluate(background_, t);
    for (const auto& tpl : templates_) {
        const double ramp = tpl.tau > 0.0 ? 1.0 - std::exp(-(t - tpl.t0) / tpl.tau) : 1.0;
        const double fade = tpl.decay > 0.0 ? std::exp(-(t - tpl.t0) / tpl.decay) : 1.0;
        sample += tpl.amplitude * ramp * fade * std::sin(tpl.order.value() * omega * t);
    }
    if (settings_.noise_std > 0.0) sample += noise_.next();

    result_.waveform.samples.push_back(sample);
    ++next_index_;
    return sample;
}

ScenarioResult ScenarioRunner::result() const { return result_; }

ScenarioResult run_scenario(const NetworkModel& net, const EventScript& script, const SimulationSettings& settings) {
    ScenarioRunner runner(net, script, settings);
    while (!runner.done()) runner.next_sample();
    return runner.result();
}

void write_flow_table(std::ostream& out, const PowerFlowResult& flow) {
    char buf[160];
    out << "bus   |V| pu      angle deg    P inj pu     Q inj pu\n";
    for (std::size_t i = 0; i < flow.bus_ids.size(); ++i) {
        const Complex v = flow.voltages[i];
        const Complex s = flow.injections.empty() ? Complex{} : flow.injections[i];
        std::snprintf(buf, sizeof buf, "%-5d %-11.6f %-12.6f %-12.6f %-12.6f\n", flow.bus_ids[i], std::abs(v),
                      std::arg(v) * 180.0 / std::numbers::pi, s.real(), s.imag());
        out << buf;
    }
    std::snprintf(buf, sizeof buf,
                  "slack bus %d injection: %.6f + j%.6f pu\nlosses: %.9f pu\niterations: %d\nmax mismatch: %.3e pu\n",
                  flow.slack_bus, flow.slack_injection.real(), flow.slack_injection.imag(), flow.losses_pu, flow.iterations,
                  flow.max_mismatch);
    out << buf;
}

}  // namespace islanding::grid
