#pragma once

// Straight re-implementation of the key-rate formulas in 50-digit binary
// floating point, used as a reference for the double-precision engine.

#include <boost/multiprecision/cpp_bin_float.hpp>

namespace oracle {

using Real = boost::multiprecision::cpp_bin_float_50;

struct Inputs {
    Real mu, nu, q_mu, e_mu, q_nu, e_nu, y0, e0, q, f;
};

struct Outputs {
    Real y1, e1, delta1, rate;
};

inline Real h2(const Real& x) {
    if (x == 0 || x == 1) return 0;
    const Real ln2 = log(Real(2));
    return -(x * log(x) + (1 - x) * log(1 - x)) / ln2;
}

inline Real clamp(const Real& x, const Real& lo, const Real& hi) { return x < lo ? lo : (x > hi ? hi : x); }

inline Outputs evaluate(const Inputs& in) {
    Outputs out;
    const Real bracket = in.q_nu * exp(in.nu) - in.q_mu * exp(in.mu) * (in.nu * in.nu) / (in.mu * in.mu) -
                         (in.mu * in.mu - in.nu * in.nu) / (in.mu * in.mu) * in.y0;
    out.y1 = in.mu / (in.mu * in.nu - in.nu * in.nu) * bracket;
    if (out.y1 < 0) out.y1 = 0;
    if (out.y1 > 0) {
        out.e1 = clamp((in.e_nu * in.q_nu * exp(in.nu) - in.e0 * in.y0) / (out.y1 * in.nu), 0, Real(1) / 2);
        out.delta1 = clamp(out.y1 * in.mu * exp(-in.mu) / in.q_mu, 0, 1);
    } else {
        out.e1 = Real(1) / 2;
        out.delta1 = 0;
    }
    const Real r = in.q * in.q_mu * (-in.f * h2(in.e_mu) + out.delta1 * (1 - h2(out.e1)));
    out.rate = r > 0 ? r : Real(0);
    return out;
}

} // namespace oracle
