#pragma once

// Vacuum + weak decoy-state bounds and the GLLP secure key rate for BB84.

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace wfqkd::keyrate {

struct DecoyObservation {
    double mu = 0.6;
    double nu = 0.2;
    double q_mu = 0.0;
    double e_mu = 0.0;
    double q_nu = 0.0;
    double e_nu = 0.0;
    double y0 = 2e-7;
    double e0 = 0.5;

    void validate() const {
        if (!(nu > 0.0 && nu < mu)) throw std::invalid_argument("DecoyObservation: need 0 < nu < mu");
        auto unit = [](double x) { return x >= 0.0 && x <= 1.0; };
        if (!unit(q_mu) || !unit(q_nu)) throw std::invalid_argument("DecoyObservation: gains outside [0, 1]");
        if (!unit(e_mu) || !unit(e_nu)) throw std::invalid_argument("DecoyObservation: QBERs outside [0, 1]");
        if (!(y0 >= 0.0)) throw std::invalid_argument("DecoyObservation: Y0 must be >= 0");
        if (!(e0 >= 0.0 && e0 <= 0.5)) throw std::invalid_argument("DecoyObservation: e0 outside [0, 1/2]");
    }
};

struct KeyRateParams {
    double q = 0.5;   // protocol (sifting) factor
    double f = 1.15;  // error-correction efficiency

    void validate() const {
        if (!(q > 0.0 && q <= 1.0)) throw std::invalid_argument("KeyRateParams: q outside (0, 1]");
        if (!(f >= 1.0)) throw std::invalid_argument("KeyRateParams: f must be >= 1");
    }
};

struct KeyRateResult {
    double y1_lower = 0.0;
    double e1_upper = 0.5;
    double delta1 = 0.0;
    double rate = 0.0;
    bool y1_clamped = false;
    bool e1_clamped = false;
    /// Y1 bound was zero, so e1 is undefined and the single-photon term drops.
    bool e1_undefined = false;
    bool delta1_clamped = false;
    bool rate_clamped = false;
};

namespace detail {

// The rate is a difference of two terms that nearly cancel close to the
// zero-key boundary, so the chain is evaluated in extended precision and
// rounded once at the end.
using Wide = long double;

inline Wide h2_wide(Wide x) {
    if (x == 0 || x == 1) return 0;
    return -(x * std::log2(x) + (1 - x) * std::log2(1 - x));
}

inline Wide y1_bracket(const DecoyObservation& o) {
    const Wide mu = o.mu, nu = o.nu;
    const Wide mu2 = mu * mu;
    const Wide nu2 = nu * nu;
    return mu / (mu * nu - nu2) *
           (Wide(o.q_nu) * std::exp(nu) - Wide(o.q_mu) * std::exp(mu) * nu2 / mu2 - (mu2 - nu2) / mu2 * Wide(o.y0));
}

inline Wide e1_wide(const DecoyObservation& o, Wide y1) {
    return (Wide(o.e_nu) * Wide(o.q_nu) * std::exp(Wide(o.nu)) - Wide(o.e0) * Wide(o.y0)) / (y1 * Wide(o.nu));
}

inline Wide delta1_wide(const DecoyObservation& o, Wide y1) {
    return y1 * Wide(o.mu) * std::exp(-Wide(o.mu)) / Wide(o.q_mu);
}

} // namespace detail

/// Binary Shannon entropy in bits, h2(0) = h2(1) = 0.
inline double h2(double x) {
    if (!(x >= 0.0 && x <= 1.0)) throw std::domain_error("h2: argument outside [0, 1]");
    return static_cast<double>(detail::h2_wide(x));
}

/// Lower bound on the single-photon yield, clamped at zero.
inline double y1_lower(const DecoyObservation& o, bool* clamped = nullptr) {
    if (!(o.mu * o.nu - o.nu * o.nu > 0.0)) throw std::invalid_argument("y1_lower: requires nu < mu");
    const auto y = detail::y1_bracket(o);
    if (clamped) *clamped = !(y > 0);
    return y > 0 ? static_cast<double>(y) : 0.0;
}

/// Upper bound on the single-photon error rate, clamped to [0, 1/2].
inline double e1_upper(const DecoyObservation& o, double y1, bool* clamped = nullptr) {
    if (!(y1 > 0.0)) throw std::domain_error("e1_upper: requires Y1 > 0");
    const auto e = detail::e1_wide(o, y1);
    const auto c = std::clamp(e, detail::Wide(0), detail::Wide(0.5));
    if (clamped) *clamped = c != e;
    return static_cast<double>(c);
}

/// Single-photon fraction of the signal gain, clamped to [0, 1].
inline double delta1(const DecoyObservation& o, double y1, bool* clamped = nullptr) {
    if (!(o.q_mu > 0.0)) throw std::domain_error("delta1: requires Q_mu > 0");
    const auto d = detail::delta1_wide(o, y1);
    const auto c = std::clamp(d, detail::Wide(0), detail::Wide(1));
    if (clamped) *clamped = c != d;
    return static_cast<double>(c);
}

/// R = max{ q Q_mu [ -f h2(E_mu) + Delta1 (1 - h2(e1)) ], 0 }
inline KeyRateResult gllp_rate(const DecoyObservation& o, const KeyRateParams& p = {}) {
    using detail::Wide;
    o.validate();
    p.validate();
    KeyRateResult r;
    const Wide y1 = std::max(detail::y1_bracket(o), Wide(0));
    r.y1_clamped = !(detail::y1_bracket(o) > 0);
    r.y1_lower = static_cast<double>(y1);
    if (o.q_mu == 0.0) {
        // No signal clicks: nothing to distill.
        r.e1_undefined = y1 == 0;
        r.rate_clamped = true;
        return r;
    }
    Wide e1 = 0.5, d1 = 0;
    if (y1 > 0) {
        const Wide e = detail::e1_wide(o, y1);
        e1 = std::clamp(e, Wide(0), Wide(0.5));
        r.e1_clamped = e1 != e;
        const Wide d = detail::delta1_wide(o, y1);
        d1 = std::clamp(d, Wide(0), Wide(1));
        r.delta1_clamped = d1 != d;
    } else {
        r.e1_undefined = true;
    }
    r.e1_upper = static_cast<double>(e1);
    r.delta1 = static_cast<double>(d1);
    const Wide raw = Wide(p.q) * Wide(o.q_mu) * (-Wide(p.f) * detail::h2_wide(o.e_mu) + d1 * (1 - detail::h2_wide(e1)));
    r.rate_clamped = !(raw > 0);
    r.rate = raw > 0 ? static_cast<double>(raw) : 0.0;
    return r;
}

struct BatchRow {
    std::string label;
    DecoyObservation obs;
    /// Reference rate; 0 stands for a row reported as having no key.
    std::optional<double> reference;
};

struct BatchRowResult {
    std::string label;
    KeyRateResult result;
    std::optional<double> reference;
    /// |R - R_ref| / R_ref; absent without a reference or when R_ref is 0.
    std::optional<double> relative_deviation;

    /// Within tolerance of the reference. Zero references require R == 0.
    bool within(double tolerance) const {
        if (!reference) return true;
        if (*reference == 0.0) return result.rate == 0.0;
        return relative_deviation && *relative_deviation <= tolerance;
    }
};

struct BatchReport {
    std::vector<BatchRowResult> rows;

    bool all_within(double tolerance) const {
        return std::all_of(rows.begin(), rows.end(), [&](const auto& r) { return r.within(tolerance); });
    }

    double max_relative_deviation() const {
        double m = 0.0;
        for (const auto& r : rows)
            if (r.relative_deviation) m = std::max(m, *r.relative_deviation);
        return m;
    }
};

inline BatchReport table_batch(const std::vector<BatchRow>& rows, const KeyRateParams& params = {}) {
    BatchReport report;
    report.rows.reserve(rows.size());
    for (const auto& row : rows) {
        BatchRowResult out{row.label, gllp_rate(row.obs, params), row.reference, std::nullopt};
        if (row.reference && *row.reference > 0.0)
            out.relative_deviation = std::abs(out.result.rate - *row.reference) / *row.reference;
        report.rows.push_back(std::move(out));
    }
    return report;
}

} // namespace wfqkd::keyrate
