#pragma once

// Test-only oracle: Gauss-Seidel power flow on raw line data. Builds its own
// per-unit admittances and shares nothing with the Newton solver.

#include <cmath>
#include <complex>
#include <map>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace oracle {

using cd = std::complex<double>;

struct GsBus {
    int id;
    double p_inj_mw;   // generation minus load
    double q_inj_mvar;
};

struct GsLine {
    int from, to;
    double r_ohm, l_mh;
};

struct GsResult {
    std::map<int, cd> v;
    int sweeps = 0;
};

inline GsResult gauss_seidel(const std::vector<GsBus>& buses, const std::vector<GsLine>& lines, int slack, double v_kv,
                             double s_mva, double f_hz, double tol = 1e-13, int max_sweeps = 200000) {
    const double zb = v_kv * v_kv / s_mva;
    std::map<int, std::map<int, cd>> y;
    for (const auto& l : lines) {
        const cd z = cd(l.r_ohm, 2.0 * std::numbers::pi * f_hz * l.l_mh / 1000.0) / zb;
        const cd a = 1.0 / z;
        y[l.from][l.from] += a;
        y[l.to][l.to] += a;
        y[l.from][l.to] -= a;
        y[l.to][l.from] -= a;
    }
    GsResult res;
    std::map<int, cd> s;
    for (const auto& b : buses) {
        res.v[b.id] = 1.0;
        s[b.id] = cd(b.p_inj_mw, b.q_inj_mvar) / s_mva;
    }
    for (int it = 0; it < max_sweeps; ++it) {
        double change = 0.0;
        for (const auto& b : buses) {
            if (b.id == slack) continue;
            cd sum = 0.0;
            for (const auto& [j, yij] : y[b.id]) {
                if (j != b.id) sum += yij * res.v[j];
            }
            const cd vn = (std::conj(s[b.id] / res.v[b.id]) - sum) / y[b.id][b.id];
            change = std::max(change, std::abs(vn - res.v[b.id]));
            res.v[b.id] = vn;
        }
        res.sweeps = it + 1;
        if (change < tol) return res;
    }
    throw std::runtime_error("Gauss-Seidel oracle did not converge");
}

}  // namespace oracle
