#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "errors.hpp"
#include "phase_mask.hpp"
#include "rng.hpp"
#include "speckle_channel.hpp"

namespace wfqkd::photon {

/// BB84 polarization states. Z = {H, V}, X = {+, -}.
enum class PolarizationState : std::uint8_t { H = 0, V = 1, Plus = 2, Minus = 3 };

enum class Basis : std::uint8_t { Z = 0, X = 1 };

inline constexpr std::size_t num_states = 4;
inline constexpr std::size_t num_detectors = 4;

constexpr Basis basis_of(PolarizationState s) noexcept {
    return static_cast<std::uint8_t>(s) < 2 ? Basis::Z : Basis::X;
}

/// Receiver detectors D1..D4 are indexed 0..3 and fire for H, V, +, -.
constexpr Basis detector_basis(std::size_t detector) noexcept {
    return detector < 2 ? Basis::Z : Basis::X;
}

constexpr std::size_t correct_detector(PolarizationState s) noexcept {
    return static_cast<std::size_t>(s);
}

constexpr const char* state_name(PolarizationState s) noexcept {
    switch (s) {
    case PolarizationState::H: return "H";
    case PolarizationState::V: return "V";
    case PolarizationState::Plus: return "+";
    case PolarizationState::Minus: return "-";
    }
    return "?";
}

struct SourceConfig {
    double mu = 0.6;
    double nu = 0.2;
    std::uint64_t pulses_per_evaluation = 1'000'000'000;
    double monitor_transmittance = 0.01;

    void validate() const {
        if (!(nu > 0.0 && nu < mu)) throw std::invalid_argument("SourceConfig: need 0 < nu < mu");
        if (pulses_per_evaluation < 1)
            throw std::invalid_argument("SourceConfig: pulses_per_evaluation must be >= 1");
        if (!(monitor_transmittance >= 0.0 && monitor_transmittance <= 1.0))
            throw std::invalid_argument("SourceConfig: monitor_transmittance outside [0, 1]");
    }
};

struct DetectorConfig {
    double efficiency = 0.55;
    double dark_rate_hz = 8.4;
    /// 4 x 8.4 Hz / 168 MHz gives a background yield of 2e-7.
    double pulse_rate_hz = 168e6;
    double misalignment_error = 0.008;

    void validate() const {
        if (!(efficiency > 0.0 && efficiency <= 1.0))
            throw std::invalid_argument("DetectorConfig: efficiency must be in (0, 1]");
        if (!(dark_rate_hz >= 0.0)) throw std::invalid_argument("DetectorConfig: dark_rate_hz < 0");
        if (!(pulse_rate_hz > 0.0)) throw std::invalid_argument("DetectorConfig: pulse_rate_hz <= 0");
        if (!(misalignment_error >= 0.0 && misalignment_error <= 0.5))
            throw std::invalid_argument("DetectorConfig: misalignment_error outside [0, 1/2]");
        if (dark_probability() > 1.0)
            throw std::invalid_argument("DetectorConfig: dark rate exceeds pulse rate");
    }

    double dark_probability() const noexcept { return dark_rate_hz / pulse_rate_hz; }
    /// Y0 = 4 x per-detector dark probability.
    double background_yield() const noexcept { return 4.0 * dark_probability(); }
};

using StateCounts = std::array<std::uint64_t, num_states>;

struct CountRecord {
    std::uint64_t pulses = 0;
    std::uint64_t d0 = 0;
    /// Raw clicks of D1..D4 (a double click counts on both detectors).
    std::array<std::uint64_t, num_detectors> clicks{};
    StateCounts sent{};
    /// tally[state][detector]: clicked pulses of a sent state, attributed to
    /// one detector (double clicks resolved uniformly at random).
    std::array<std::array<std::uint64_t, num_detectors>, num_states> tally{};

    std::uint64_t receiver_clicks() const noexcept {
        return clicks[0] + clicks[1] + clicks[2] + clicks[3];
    }
    std::uint64_t clicked_pulses() const noexcept {
        std::uint64_t n = 0;
        for (const auto& row : tally)
            for (auto c : row) n += c;
        return n;
    }
};

/// Q = Y0 + 1 - exp(-eta_total * intensity)
inline double expected_gain(double intensity, double eta_total, double y0) {
    if (intensity < 0.0 || eta_total < 0.0 || y0 < 0.0)
        throw std::invalid_argument("expected_gain: inputs must be >= 0");
    return y0 - std::expm1(-eta_total * intensity);
}

/// E = [e0 Y0 + e_d (1 - exp(-eta_total * intensity))] / Q
inline double expected_qber(double intensity, double eta_total, double y0, double e_d,
                            double e0 = 0.5) {
    if (!(e_d >= 0.0 && e_d <= 0.5) || !(e0 >= 0.0 && e0 <= 0.5))
        throw std::invalid_argument("expected_qber: error rates must be in [0, 1/2]");
    const double q = expected_gain(intensity, eta_total, y0);
    if (q == 0.0) throw std::domain_error("expected_qber: zero gain");
    return (e0 * y0 - e_d * std::expm1(-eta_total * intensity)) / q;
}

namespace detail {

/// Probability that a signal detection lands on each receiver detector for a
/// sent state: passive 50/50 basis choice, misalignment e_d in the matched
/// basis, 50/50 in the other basis.
inline std::array<double, num_detectors> signal_routing(PolarizationState s, double e_d) {
    std::array<double, num_detectors> w{};
    const std::size_t right = correct_detector(s);
    const std::size_t wrong = right ^ 1U;
    const std::size_t other = basis_of(s) == Basis::Z ? 2 : 0;
    w[right] = 0.5 * (1.0 - e_d);
    w[wrong] = 0.5 * e_d;
    w[other] = 0.25;
    w[other + 1] = 0.25;
    return w;
}

/// Probability of each click subset (bit k = detector k fired) for one pulse.
inline std::array<double, 16> click_subset_probabilities(double p_signal,
                                                         const std::array<double, num_detectors>& route,
                                                         double p_dark) {
    std::array<double, 16> p{};
    for (unsigned set = 0; set < 16; ++set) {
        auto dark_only = [&](unsigned dark_set) {
            double v = 1.0;
            for (unsigned k = 0; k < num_detectors; ++k)
                v *= (dark_set >> k & 1U) ? p_dark : (1.0 - p_dark);
            return v;
        };
        double v = (1.0 - p_signal) * dark_only(set);
        // Signal on detector k, darks elsewhere either way: detector k is in the
        // set regardless of whether it also dark-counted.
        for (unsigned k = 0; k < num_detectors; ++k) {
            if (!(set >> k & 1U)) continue;
            double d = 1.0;
            for (unsigned m = 0; m < num_detectors; ++m) {
                if (m == k) continue;
                d *= (set >> m & 1U) ? p_dark : (1.0 - p_dark);
            }
            v += p_signal * route[k] * d;
        }
        p[set] = v;
    }
    return p;
}

inline std::uint64_t binomial(std::uint64_t n, double p, Rng& rng) {
    if (n == 0 || p <= 0.0) return 0;
    if (p >= 1.0) return n;
    std::binomial_distribution<std::int64_t> dist(static_cast<std::int64_t>(n), p);
    return static_cast<std::uint64_t>(dist(rng));
}

/// Multinomial draw by sequential conditional binomials. Conditional
/// probabilities use suffix sums so tiny categories keep full precision.
template <std::size_t K>
std::array<std::uint64_t, K> multinomial(std::uint64_t n, const std::array<double, K>& p, Rng& rng) {
    std::array<std::uint64_t, K> out{};
    std::array<double, K + 1> tail{};
    for (std::size_t k = K; k-- > 0;) tail[k] = tail[k + 1] + p[k];
    std::uint64_t remaining = n;
    for (std::size_t k = 0; k + 1 < K && remaining > 0; ++k) {
        const double q = tail[k] > 0.0 ? std::min(1.0, p[k] / tail[k]) : 0.0;
        out[k] = binomial(remaining, q, rng);
        remaining -= out[k];
    }
    out[K - 1] += remaining;
    return out;
}

inline void check_inputs(double transmittance, double intensity, const SourceConfig& source,
                         const DetectorConfig& det) {
    if (!(transmittance >= 0.0 && transmittance <= 1.0))
        throw std::invalid_argument("simulate_counts: channel transmittance outside [0, 1]");
    if (!(intensity >= 0.0)) throw std::invalid_argument("simulate_counts: negative intensity");
    source.validate();
    det.validate();
}

inline double monitor_click_probability(double intensity, const SourceConfig& source,
                                        const DetectorConfig& det) {
    return -std::expm1(-intensity * source.monitor_transmittance * det.efficiency) *
               (1.0 - det.dark_probability()) +
           det.dark_probability();
}

} // namespace detail

/// Samples the counts of a session with `sent[s]` pulses of each state. Exact
/// in distribution: per-state click subsets are multinomial, double clicks are
/// split uniformly among the clicked detectors.
inline CountRecord simulate_counts(double channel_transmittance, const StateCounts& sent,
                                   double intensity, const SourceConfig& source,
                                   const DetectorConfig& det, Rng& rng) {
    detail::check_inputs(channel_transmittance, intensity, source, det);
    CountRecord rec;
    rec.sent = sent;
    for (auto n : sent) rec.pulses += n;
    if (rec.pulses == 0) throw std::invalid_argument("simulate_counts: empty state sequence");

    rec.d0 = detail::binomial(rec.pulses, detail::monitor_click_probability(intensity, source, det), rng);

    const double p_signal = -std::expm1(-intensity * channel_transmittance * det.efficiency);
    const double p_dark = det.dark_probability();
    for (std::size_t s = 0; s < num_states; ++s) {
        if (sent[s] == 0) continue;
        const auto state = static_cast<PolarizationState>(s);
        const auto probs = detail::click_subset_probabilities(
            p_signal, detail::signal_routing(state, det.misalignment_error), p_dark);
        // Draw the number of clicked pulses first: the no-click probability is
        // ~1 and would swamp the click categories.
        std::array<double, 15> click_probs{};
        double p_any = 0.0;
        for (unsigned set = 1; set < 16; ++set) {
            click_probs[set - 1] = probs[set];
            p_any += probs[set];
        }
        const std::uint64_t clicked = detail::binomial(sent[s], p_any, rng);
        const auto subsets = detail::multinomial(clicked, click_probs, rng);
        for (unsigned set = 1; set < 16; ++set) {
            const std::uint64_t c = subsets[set - 1];
            if (c == 0) continue;
            std::array<double, num_detectors> share{};
            double members = 0.0;
            for (unsigned k = 0; k < num_detectors; ++k) {
                if (set >> k & 1U) {
                    rec.clicks[k] += c;
                    share[k] = 1.0;
                    members += 1.0;
                }
            }
            for (auto& x : share) x /= members;
            const auto resolved = detail::multinomial(c, share, rng);
            for (unsigned k = 0; k < num_detectors; ++k) rec.tally[s][k] += resolved[k];
        }
    }
    return rec;
}

inline StateCounts tally_states(std::span<const PolarizationState> sequence) {
    StateCounts sent{};
    for (auto s : sequence) ++sent[static_cast<std::size_t>(s)];
    return sent;
}

inline CountRecord simulate_counts(double channel_transmittance,
                                   std::span<const PolarizationState> sequence, double intensity,
                                   const SourceConfig& source, const DetectorConfig& det, Rng& rng) {
    if (sequence.empty()) throw std::invalid_argument("simulate_counts: empty state sequence");
    return simulate_counts(channel_transmittance, tally_states(sequence), intensity, source, det, rng);
}

/// Pulse-by-pulse Bernoulli simulation of the same model. Slow; used to
/// cross-check the aggregated sampler.
inline CountRecord simulate_counts_per_pulse(double channel_transmittance,
                                             std::span<const PolarizationState> sequence,
                                             double intensity, const SourceConfig& source,
                                             const DetectorConfig& det, Rng& rng) {
    detail::check_inputs(channel_transmittance, intensity, source, det);
    if (sequence.empty()) throw std::invalid_argument("simulate_counts: empty state sequence");
    CountRecord rec;
    rec.pulses = sequence.size();
    rec.sent = tally_states(sequence);

    const double p_signal = -std::expm1(-intensity * channel_transmittance * det.efficiency);
    std::bernoulli_distribution monitor(detail::monitor_click_probability(intensity, source, det));
    std::bernoulli_distribution signal(p_signal);
    std::bernoulli_distribution dark(det.dark_probability());
    std::bernoulli_distribution coin(0.5);
    std::bernoulli_distribution misaligned(det.misalignment_error);

    for (auto state : sequence) {
        if (monitor(rng)) ++rec.d0;
        unsigned set = 0;
        if (signal(rng)) {
            const Basis bob = coin(rng) ? Basis::Z : Basis::X;
            std::size_t k;
            if (bob == basis_of(state)) {
                k = correct_detector(state) ^ (misaligned(rng) ? 1U : 0U);
            } else {
                k = (bob == Basis::Z ? 0U : 2U) + (coin(rng) ? 1U : 0U);
            }
            set |= 1U << k;
        }
        for (unsigned k = 0; k < num_detectors; ++k)
            if (dark(rng)) set |= 1U << k;
        if (set == 0) continue;

        std::array<unsigned, num_detectors> members{};
        unsigned count = 0;
        for (unsigned k = 0; k < num_detectors; ++k) {
            if (set >> k & 1U) {
                ++rec.clicks[k];
                members[count++] = k;
            }
        }
        std::uniform_int_distribution<unsigned> pick(0, count - 1);
        ++rec.tally[static_cast<std::size_t>(state)][members[pick(rng)]];
    }
    return rec;
}

/// eta = (D1 + D2 + D3 + D4) / D0
inline double fitness_from_counts(const CountRecord& record) {
    if (record.d0 == 0) throw EvaluationError("fitness_from_counts: monitor detector D0 registered no counts");
    return static_cast<double>(record.receiver_clicks()) / static_cast<double>(record.d0);
}

struct SiftedStats {
    double gain = 0.0;
    std::uint64_t matched_clicks = 0;
    std::uint64_t errors = 0;
    std::optional<double> qber;
    std::array<std::optional<double>, 2> basis_qber;  // Z, X
    std::array<std::optional<double>, num_states> state_qber;
};

/// Gain = clicked pulses / sent pulses; QBER = wrong-detector clicks over
/// clicks whose detector basis matches the sent state's basis.
inline SiftedStats sift_and_tally(const CountRecord& record) {
    if (record.pulses == 0) throw std::invalid_argument("sift_and_tally: record has no pulses");
    SiftedStats out;
    out.gain = static_cast<double>(record.clicked_pulses()) / static_cast<double>(record.pulses);
    std::array<std::uint64_t, 2> basis_matched{}, basis_errors{};
    for (std::size_t s = 0; s < num_states; ++s) {
        const auto state = static_cast<PolarizationState>(s);
        const std::size_t right = correct_detector(state);
        const std::uint64_t matched = record.tally[s][right] + record.tally[s][right ^ 1U];
        const std::uint64_t wrong = record.tally[s][right ^ 1U];
        if (matched > 0)
            out.state_qber[s] = static_cast<double>(wrong) / static_cast<double>(matched);
        const auto b = static_cast<std::size_t>(basis_of(state));
        basis_matched[b] += matched;
        basis_errors[b] += wrong;
        out.matched_clicks += matched;
        out.errors += wrong;
    }
    for (std::size_t b = 0; b < 2; ++b)
        if (basis_matched[b] > 0)
            out.basis_qber[b] = static_cast<double>(basis_errors[b]) / static_cast<double>(basis_matched[b]);
    if (out.matched_clicks > 0)
        out.qber = static_cast<double>(out.errors) / static_cast<double>(out.matched_clicks);
    return out;
}

/// Splits a pulse budget evenly over the four states (remainder to the first).
inline StateCounts uniform_states(std::uint64_t pulses) {
    StateCounts sent;
    sent.fill(pulses / num_states);
    for (std::uint64_t r = 0; r < pulses % num_states; ++r) ++sent[r];
    return sent;
}

/// Fitness oracle: coupled channel transmittance through the photon-count
/// model at the signal intensity, fitness = receiver clicks / monitor clicks.
class PhotonCountOracle {
public:
    PhotonCountOracle(const ScatteringChannel& channel, SourceConfig source, DetectorConfig det,
                      double extra_transmittance = 1.0)
        : channel_(&channel), source_(source), det_(det), extra_(extra_transmittance) {
        source_.validate();
        det_.validate();
        if (!(extra_ >= 0.0 && extra_ <= 1.0))
            throw std::invalid_argument("PhotonCountOracle: extra transmittance outside [0, 1]");
    }

    double evaluate(const PhaseMask& mask, Rng& rng) const {
        const double t = coupled_efficiency(*channel_, mask) * extra_;
        const auto rec = simulate_counts(std::min(t, 1.0), uniform_states(source_.pulses_per_evaluation),
                                         source_.mu, source_, det_, rng);
        return fitness_from_counts(rec);
    }

private:
    const ScatteringChannel* channel_;
    SourceConfig source_;
    DetectorConfig det_;
    double extra_;
};

/// Noiseless oracle returning the coupled transmittance itself.
class ExactOracle {
public:
    explicit ExactOracle(const ScatteringChannel& channel) : channel_(&channel) {}
    double evaluate(const PhaseMask& mask, Rng&) const { return coupled_efficiency(*channel_, mask); }

private:
    const ScatteringChannel* channel_;
};

} // namespace wfqkd::photon
