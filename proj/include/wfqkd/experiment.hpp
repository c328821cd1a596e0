#pragma once

/// @file experiment.hpp
/// @brief End-to-end pipeline: channel generation, GA optimization against
/// the photon-count oracle, beam profiles, QKD sessions and key-rate batches.
/// Each command writes its artifacts and returns a summary; the CLI in
/// tools/ is a thin wrapper over these functions.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numbers>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "ga_optimizer.hpp"
#include "io.hpp"
#include "keyrate.hpp"
#include "keyrate_io.hpp"
#include "photon_sim.hpp"
#include "speckle_channel.hpp"

namespace wfqkd::experiment {

namespace fs = std::filesystem;
using json = nlohmann::json;

/// Invalid user input (config, flags). Maps to exit code 1.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ChannelBlock {
    double blank_loss_db = 62.1;
    std::size_t num_blocks = 3600;
    double scattering_fraction = 1.0;
    std::uint64_t seed = 1;
    std::size_t output_width = 64;
    std::size_t output_height = 64;
    io::ChannelStorage storage = io::ChannelStorage::exact;
};

struct QkdBlock {
    std::uint64_t pulses_per_intensity = 100'000'000'000ULL;
    std::uint64_t vacuum_pulses = 100'000'000'000ULL;
    /// Background yield for the key-rate bounds; measured from the vacuum
    /// session when absent.
    std::optional<double> y0;
    double e0 = 0.5;
    double q = 0.5;
    double f = 1.15;
    std::uint64_t seed = 3;
};

struct RunBlock {
    std::string output_dir = "out";
    bool emit_profile = true;
    /// Oracle samples per candidate when choosing between the GA's best mask
    /// and the blank mask at the end of a run.
    std::size_t validation_repeats = 10;
};

struct ExperimentConfig {
    std::string preset = "grit120";
    ChannelBlock channel;
    ga::GAConfig ga;
    photon::SourceConfig source;
    photon::DetectorConfig detector;
    QkdBlock qkd;
    RunBlock run;

    void validate() const {
        try {
            if (!(channel.blank_loss_db >= 0.0)) throw std::invalid_argument("channel.blank_loss_db must be >= 0");
            if (channel.num_blocks == 0) throw std::invalid_argument("channel.num_blocks must be >= 1");
            if (!(channel.scattering_fraction >= 0.0 && channel.scattering_fraction <= 1.0))
                throw std::invalid_argument("channel.scattering_fraction must be in [0, 1]");
            if (channel.output_width == 0 || channel.output_height == 0)
                throw std::invalid_argument("channel output grid must be non-empty");
            auto g = ga;
            g.mask_width = g.mask_height = 1;
            g.validate();
            source.validate();
            detector.validate();
            if (qkd.pulses_per_intensity == 0) throw std::invalid_argument("qkd.pulses_per_intensity must be >= 1");
            if (!qkd.y0 && qkd.vacuum_pulses == 0)
                throw std::invalid_argument("qkd.vacuum_pulses must be >= 1 when qkd.y0 is not given");
            if (qkd.y0 && !(*qkd.y0 >= 0.0)) throw std::invalid_argument("qkd.y0 must be >= 0");
            keyrate::KeyRateParams{qkd.q, qkd.f}.validate();
            if (!(qkd.e0 >= 0.0 && qkd.e0 <= 0.5)) throw std::invalid_argument("qkd.e0 must be in [0, 1/2]");
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
    }
};

inline double grit600_scattering_fraction();

/// grit120: fully developed speckle, 62.1 dB blank loss.
/// grit600: partial ballistic transmission, 16.8 dB blank loss.
inline ExperimentConfig preset(const std::string& name) {
    ExperimentConfig c;
    c.preset = name;
    c.ga.generations = 3000;
    if (name == "grit120") {
        c.channel.blank_loss_db = 62.1;
        c.channel.scattering_fraction = 1.0;
        // First seed whose blank loss lands within 1.5 dB of the calibration
        // (61.0 dB); seed 1 draws a 94.5 dB outlier.
        c.channel.seed = 5;
        // ~200 signal and ~200 dark counts per blank evaluation: SNR ~ 10.
        c.source.pulses_per_evaluation = 1'000'000'000ULL;
        c.detector.misalignment_error = 0.01;
    } else if (name == "grit600") {
        c.channel.blank_loss_db = 16.8;
        c.channel.scattering_fraction = grit600_scattering_fraction();
        c.ga.generations = 7000;
        // The coherent ballistic term dominates, so only small mutation rates
        // improve on the blank mask; the gain is ~2 dB and needs a quieter
        // fitness (more pulses, a brighter monitor arm).
        c.ga.initial_rate = 0.002;
        c.ga.final_rate = 0.0003;
        c.source.pulses_per_evaluation = 10'000'000'000ULL;
        c.source.monitor_transmittance = 0.1;
        c.detector.misalignment_error = 0.008;
    } else {
        throw ConfigError("unknown preset '" + name + "' (expected grit120 or grit600)");
    }
    return c;
}

/// E[(sum|t|)^2] / E[|sum t|^2] for t = sqrt(1-s) + sqrt(s) g, g ~ CN(0,1).
inline double expected_optimum_gain(double s, std::size_t num_blocks) {
    const double n = static_cast<double>(num_blocks);
    // Mean Rician amplitude: sigma^2 = s/2 per quadrature, line-of-sight a = sqrt(1-s).
    const double a2 = 1.0 - s;
    double mean_abs;
    double mean_sq = a2 + s;
    if (s == 0.0) {
        mean_abs = 1.0;
    } else if (a2 / (2.0 * s) > 500.0) {
        // Strong line of sight: the Bessel form overflows; Rician mean ~ a (1 + sigma^2 / 2a^2).
        mean_abs = std::sqrt(a2) * (1.0 + s / (4.0 * a2));
    } else {
        const double sigma2 = s / 2.0;
        const double x = a2 / (4.0 * sigma2);
        // sqrt(pi sigma^2 / 2) L_{1/2}(-a^2 / 2sigma^2) with the Laguerre
        // function written via scaled Bessel functions.
        const double l = std::exp(-x) * ((1.0 + 2.0 * x) * std::cyl_bessel_i(0.0, x) + 2.0 * x * std::cyl_bessel_i(1.0, x));
        mean_abs = std::sqrt(std::numbers::pi * sigma2 / 2.0) * l;
    }
    const double optimum = n * n * mean_abs * mean_abs + n * (mean_sq - mean_abs * mean_abs);
    const double blank = (1.0 - s) * n * n + s * n;
    return optimum / blank;
}

/// Scattering fraction of the weak-diffuser preset: the value at which the
/// expected phase-conjugation optimum over the blank mask is 10^0.22 (a
/// 2.2 dB gain) for 3600 blocks.
inline double grit600_scattering_fraction() {
    const double target = std::pow(10.0, 0.22);
    double lo = 0.0, hi = 1.0;
    for (int i = 0; i < 100; ++i) {
        const double mid = 0.5 * (lo + hi);
        (expected_optimum_gain(mid, 3600) < target ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

// ---------------------------------------------------------------- config file

namespace detail {

inline void reject_unknown(const json& j, const std::string& block, const std::set<std::string>& allowed) {
    if (!j.is_object()) throw ConfigError("config block '" + block + "' must be an object");
    for (const auto& item : j.items())
        if (!allowed.count(item.key()))
            throw ConfigError("unknown config key '" + block + (block.empty() ? "" : ".") + item.key() + "'");
}

template <typename T>
void read(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

} // namespace detail

/// Applies a JSON config on top of `base`. Unknown keys are rejected.
inline ExperimentConfig apply_config(ExperimentConfig c, const json& j) {
    using detail::read;
    try {
        detail::reject_unknown(j, "", {"preset", "channel", "ga", "source", "detector", "qkd", "run"});
        if (j.contains("preset")) c = preset(j.at("preset").get<std::string>());

        if (j.contains("channel")) {
            const auto& b = j.at("channel");
            detail::reject_unknown(b, "channel", {"blank_loss_db", "num_blocks", "scattering_fraction", "seed",
                                                  "output_width", "output_height", "storage"});
            read(b, "blank_loss_db", c.channel.blank_loss_db);
            read(b, "num_blocks", c.channel.num_blocks);
            read(b, "scattering_fraction", c.channel.scattering_fraction);
            read(b, "seed", c.channel.seed);
            read(b, "output_width", c.channel.output_width);
            read(b, "output_height", c.channel.output_height);
            if (b.contains("storage")) {
                const auto s = b.at("storage").get<std::string>();
                if (s == "exact") c.channel.storage = io::ChannelStorage::exact;
                else if (s == "seed") c.channel.storage = io::ChannelStorage::seed;
                else throw ConfigError("channel.storage must be 'exact' or 'seed'");
            }
        }
        if (j.contains("ga")) {
            const auto& b = j.at("ga");
            detail::reject_unknown(b, "ga", {"population_size", "generations", "initial_rate", "final_rate", "decay",
                                             "quant_step", "quant_levels", "seed", "reevaluate_survivors",
                                             "threads"});
            read(b, "population_size", c.ga.population_size);
            read(b, "generations", c.ga.generations);
            read(b, "initial_rate", c.ga.initial_rate);
            read(b, "final_rate", c.ga.final_rate);
            read(b, "decay", c.ga.decay);
            if (b.contains("quant_step") && b.contains("quant_levels"))
                throw ConfigError("give ga.quant_step or ga.quant_levels, not both");
            read(b, "quant_step", c.ga.quant_step);
            if (b.contains("quant_levels")) {
                const auto levels = b.at("quant_levels").get<std::size_t>();
                if (levels == 0) throw ConfigError("ga.quant_levels must be >= 1");
                c.ga.quant_step = two_pi / static_cast<double>(levels);
            }
            read(b, "seed", c.ga.seed);
            read(b, "reevaluate_survivors", c.ga.reevaluate_survivors);
            read(b, "threads", c.ga.threads);
        }
        if (j.contains("source")) {
            const auto& b = j.at("source");
            detail::reject_unknown(b, "source", {"mu", "nu", "pulses_per_evaluation", "monitor_transmittance"});
            read(b, "mu", c.source.mu);
            read(b, "nu", c.source.nu);
            read(b, "pulses_per_evaluation", c.source.pulses_per_evaluation);
            read(b, "monitor_transmittance", c.source.monitor_transmittance);
        }
        if (j.contains("detector")) {
            const auto& b = j.at("detector");
            detail::reject_unknown(b, "detector", {"efficiency", "dark_rate_hz", "pulse_rate_hz", "misalignment_error"});
            read(b, "efficiency", c.detector.efficiency);
            read(b, "dark_rate_hz", c.detector.dark_rate_hz);
            read(b, "pulse_rate_hz", c.detector.pulse_rate_hz);
            read(b, "misalignment_error", c.detector.misalignment_error);
        }
        if (j.contains("qkd")) {
            const auto& b = j.at("qkd");
            detail::reject_unknown(b, "qkd", {"pulses_per_intensity", "vacuum_pulses", "y0", "e0", "q", "f", "seed"});
            read(b, "pulses_per_intensity", c.qkd.pulses_per_intensity);
            read(b, "vacuum_pulses", c.qkd.vacuum_pulses);
            if (b.contains("y0")) {
                if (b.at("y0").is_null()) c.qkd.y0.reset();
                else c.qkd.y0 = b.at("y0").get<double>();
            }
            read(b, "e0", c.qkd.e0);
            read(b, "q", c.qkd.q);
            read(b, "f", c.qkd.f);
            read(b, "seed", c.qkd.seed);
        }
        if (j.contains("run")) {
            const auto& b = j.at("run");
            detail::reject_unknown(b, "run", {"output_dir", "emit_profile", "validation_repeats"});
            read(b, "output_dir", c.run.output_dir);
            read(b, "emit_profile", c.run.emit_profile);
            read(b, "validation_repeats", c.run.validation_repeats);
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return c;
}

inline ExperimentConfig load_config(const fs::path& path, ExperimentConfig base) {
    json j;
    try {
        j = json::parse(io::read_text(path), nullptr, true, /*ignore_comments=*/true);
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return apply_config(std::move(base), j);
}

/// Replaces every sub-seed by one derived from a master seed.
inline void override_seeds(ExperimentConfig& c, std::uint64_t master) {
    c.channel.seed = derive_seed(master, {1});
    c.ga.seed = derive_seed(master, {2});
    c.qkd.seed = derive_seed(master, {3});
}

inline json config_to_json(const ExperimentConfig& c) {
    return {{"preset", c.preset},
            {"channel",
             {{"blank_loss_db", c.channel.blank_loss_db},
              {"num_blocks", c.channel.num_blocks},
              {"scattering_fraction", c.channel.scattering_fraction},
              {"seed", c.channel.seed},
              {"output_width", c.channel.output_width},
              {"output_height", c.channel.output_height},
              {"storage", c.channel.storage == io::ChannelStorage::exact ? "exact" : "seed"}}},
            {"ga",
             {{"population_size", c.ga.population_size},
              {"generations", c.ga.generations},
              {"initial_rate", c.ga.initial_rate},
              {"final_rate", c.ga.final_rate},
              {"decay", c.ga.decay},
              {"quant_step", c.ga.quant_step},
              {"seed", c.ga.seed},
              {"reevaluate_survivors", c.ga.reevaluate_survivors}}},
            {"source",
             {{"mu", c.source.mu},
              {"nu", c.source.nu},
              {"pulses_per_evaluation", c.source.pulses_per_evaluation},
              {"monitor_transmittance", c.source.monitor_transmittance}}},
            {"detector",
             {{"efficiency", c.detector.efficiency},
              {"dark_rate_hz", c.detector.dark_rate_hz},
              {"pulse_rate_hz", c.detector.pulse_rate_hz},
              {"misalignment_error", c.detector.misalignment_error}}},
            {"qkd",
             {{"pulses_per_intensity", c.qkd.pulses_per_intensity},
              {"vacuum_pulses", c.qkd.vacuum_pulses},
              {"y0", c.qkd.y0 ? json(*c.qkd.y0) : json(nullptr)},
              {"e0", c.qkd.e0},
              {"q", c.qkd.q},
              {"f", c.qkd.f},
              {"seed", c.qkd.seed}}},
            {"run", {{"emit_profile", c.run.emit_profile}, {"validation_repeats", c.run.validation_repeats}}}};
}

inline std::uint64_t file_hash(const fs::path& p) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : io::read_text(p)) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline json input_ref(const fs::path& p) {
    return {{"file", p.filename().string()}, {"fnv1a64", io::hex64(file_hash(p))}};
}

// ---------------------------------------------------------------- channel

struct ChannelSummary {
    double blank_transmittance;
    double blank_loss_db;
    double optimum_transmittance;
    double optimum_loss_db;
    double optimum_enhancement;
    bool rescaled;
};

inline ScatteringChannel make_channel(const ExperimentConfig& c) {
    ChannelCalibration cal{c.channel.blank_loss_db, c.channel.num_blocks};
    auto g = ChannelGeometry::for_blocks(c.channel.num_blocks);
    g.output_width = c.channel.output_width;
    g.output_height = c.channel.output_height;
    return generate_channel(cal, c.channel.scattering_fraction, c.channel.seed, g);
}

inline ChannelSummary summarize_channel(const ScatteringChannel& ch) {
    const auto& g = ch.geometry();
    const double blank = coupled_efficiency(ch, PhaseMask::blank(g.mask_width, g.mask_height));
    const double opt = ch.optimum_transmittance();
    return {blank, blank > 0 ? loss_db(blank) : std::numeric_limits<double>::infinity(), opt,
            opt > 0 ? loss_db(opt) : std::numeric_limits<double>::infinity(), blank > 0 ? opt / blank : 0.0,
            ch.rescaled()};
}

inline ChannelSummary cmd_channel(const ExperimentConfig& c, const fs::path& out) {
    c.validate();
    const auto ch = make_channel(c);
    io::save_channel(out, ch, c.channel.storage);
    return summarize_channel(ch);
}

// ---------------------------------------------------------------- optimize

struct OptimizeSummary {
    std::size_t generations_completed = 0;
    double blank_transmittance = 0.0;
    double optimized_transmittance = 0.0;
    double blank_loss_db = 0.0;
    double optimized_loss_db = 0.0;
    double enhancement = 0.0;
    /// Best recorded fitness over the blank-mask fitness of generation 0.
    double measured_enhancement = 0.0;
    bool blank_kept = false;
    std::optional<std::string> error;
    ga::OptimizationHistory history;
};

inline ga::GAConfig ga_for_channel(const ExperimentConfig& c, const ScatteringChannel& ch) {
    auto g = c.ga;
    g.mask_width = ch.geometry().mask_width;
    g.mask_height = ch.geometry().mask_height;
    return g;
}

inline OptimizeSummary cmd_optimize(const ExperimentConfig& c, const fs::path& channel_path, const fs::path& out_dir) {
    c.validate();
    const auto ch = io::load_channel(channel_path);
    const auto gcfg = ga_for_channel(c, ch);
    gcfg.validate();
    const photon::PhotonCountOracle oracle(ch, c.source, c.detector);

    OptimizeSummary s;
    s.history = ga::run(gcfg, oracle);
    s.generations_completed = s.history.records.empty() ? 0 : s.history.records.size() - 1;
    s.error = s.history.error;

    const auto blank = PhaseMask::blank(gcfg.mask_width, gcfg.mask_height);
    PhaseMask final_mask = s.history.best_mask.size() ? s.history.best_mask : blank;

    // Final pick between the GA winner and the blank mask on a longer measurement.
    if (!s.error && final_mask != blank && c.run.validation_repeats > 0) {
        auto rng = make_rng(gcfg.seed, {stream::ga_eval, ~0ULL});
        double best = 0.0, base = 0.0;
        try {
            for (std::size_t k = 0; k < c.run.validation_repeats; ++k) {
                best += oracle.evaluate(final_mask, rng);
                base += oracle.evaluate(blank, rng);
            }
        } catch (const std::exception& e) {
            s.error = std::string("validation: ") + e.what();
        }
        if (!s.error && base > best) {
            final_mask = blank;
            s.blank_kept = true;
        }
    }

    s.blank_transmittance = coupled_efficiency(ch, blank);
    s.optimized_transmittance = coupled_efficiency(ch, final_mask);
    s.blank_loss_db = loss_db(s.blank_transmittance);
    s.optimized_loss_db = loss_db(s.optimized_transmittance);
    s.enhancement = enhancement(s.optimized_transmittance, s.blank_transmittance);
    if (!s.history.records.empty()) {
        // The blank mask is the last member of generation 0; its sample is
        // not kept separately, so compare against the generation-0 mean.
        const double ref = s.history.records.front().mean_fitness;
        s.measured_enhancement = ref > 0.0 ? s.history.best_fitness / ref : 0.0;
    }

    fs::create_directories(out_dir);
    io::write_text(out_dir / "history.csv", io::history_to_csv(s.history));
    io::save_mask(out_dir / "best_mask.txt", final_mask, gcfg.quant_step);
    json manifest = {{"command", "optimize"},
                     {"config", config_to_json(c)},
                     {"seeds", {{"channel", ch.seed()}, {"ga", gcfg.seed}}},
                     {"inputs", {{"channel", input_ref(channel_path)}}},
                     {"artifacts", {"history.csv", "best_mask.txt"}},
                     {"summary",
                      {{"generations_completed", s.generations_completed},
                       {"blank_transmittance", s.blank_transmittance},
                       {"optimized_transmittance", s.optimized_transmittance},
                       {"blank_loss_db", s.blank_loss_db},
                       {"optimized_loss_db", s.optimized_loss_db},
                       {"enhancement", s.enhancement},
                       {"best_fitness", s.history.best_fitness},
                       {"blank_kept", s.blank_kept},
                       {"mask_hash", io::hex64(mask_hash(final_mask, quant_levels(gcfg.quant_step)))}}},
                     {"error", s.error ? json(*s.error) : json(nullptr)}};
    io::write_json(out_dir / "optimize_manifest.json", manifest);
    return s;
}

// ---------------------------------------------------------------- profile

struct ProfileSummary {
    double blank_contrast;
    double mask_contrast;
    double blank_fiber;
    double mask_fiber;
};

inline ProfileSummary cmd_profile(const fs::path& channel_path, const std::optional<fs::path>& mask_path,
                                  const fs::path& out_dir, double quant_step = default_quant_step) {
    const auto ch = io::load_channel(channel_path);
    const auto& g = ch.geometry();
    const auto blank = PhaseMask::blank(g.mask_width, g.mask_height);
    const auto mask = mask_path ? io::load_mask(*mask_path) : conjugate_mask(ch);
    if (!ch.matches(mask))
        throw std::invalid_argument(fmt::format("mask is {}x{} but channel expects {}x{}", mask.width(),
                                                mask.height(), g.mask_width, g.mask_height));
    const auto before = output_intensity(ch, blank);
    const auto after = output_intensity(ch, mask);

    fs::create_directories(out_dir);
    io::write_text(out_dir / "profile_before.pgm", io::intensity_to_pgm(before));
    io::write_json(out_dir / "profile_before.json", io::intensity_sidecar(ch, blank, before, quant_step));
    io::write_text(out_dir / "profile_after.pgm", io::intensity_to_pgm(after));
    auto side = io::intensity_sidecar(ch, mask, after, quant_step);
    side["mask_source"] = mask_path ? "file" : "conjugate";
    io::write_json(out_dir / "profile_after.json", side);
    return {before.contrast(), after.contrast(), before.fiber_value(), after.fiber_value()};
}

// ---------------------------------------------------------------- qkd

struct QkdSummary {
    double transmittance = 0.0;
    double total_loss_db = 0.0;
    photon::SiftedStats signal;
    photon::SiftedStats decoy;
    std::optional<photon::SiftedStats> vacuum;
    keyrate::DecoyObservation observation;
    keyrate::KeyRateResult result;
    std::vector<std::string> notes;
};

inline QkdSummary cmd_qkd(const ExperimentConfig& c, const fs::path& channel_path,
                          const std::optional<fs::path>& mask_path, double extra_loss_db, const fs::path& out) {
    c.validate();
    if (!(extra_loss_db >= 0.0)) throw ConfigError("extra loss must be >= 0 dB");
    const auto ch = io::load_channel(channel_path);
    const auto& g = ch.geometry();
    const auto mask = mask_path ? io::load_mask(*mask_path) : PhaseMask::blank(g.mask_width, g.mask_height);
    if (!ch.matches(mask)) throw std::invalid_argument("mask dimensions do not match channel");

    QkdSummary s;
    s.transmittance = std::min(1.0, coupled_efficiency(ch, mask) * transmittance_from_db(extra_loss_db));
    s.total_loss_db = s.transmittance > 0.0 ? loss_db(s.transmittance) : std::numeric_limits<double>::infinity();

    // Sessions alternate deterministically by intensity; each has its own substream.
    auto rng_signal = make_rng(c.qkd.seed, {stream::qkd, 0});
    auto rng_decoy = make_rng(c.qkd.seed, {stream::qkd, 1});
    auto rng_vacuum = make_rng(c.qkd.seed, {stream::qkd, 2});
    const auto sig = photon::simulate_counts(s.transmittance, photon::uniform_states(c.qkd.pulses_per_intensity),
                                             c.source.mu, c.source, c.detector, rng_signal);
    const auto dec = photon::simulate_counts(s.transmittance, photon::uniform_states(c.qkd.pulses_per_intensity),
                                             c.source.nu, c.source, c.detector, rng_decoy);
    s.signal = photon::sift_and_tally(sig);
    s.decoy = photon::sift_and_tally(dec);

    s.observation.mu = c.source.mu;
    s.observation.nu = c.source.nu;
    s.observation.q_mu = s.signal.gain;
    s.observation.q_nu = s.decoy.gain;
    s.observation.e0 = c.qkd.e0;
    if (c.qkd.y0) {
        s.observation.y0 = *c.qkd.y0;
    } else {
        const auto vac = photon::simulate_counts(s.transmittance, photon::uniform_states(c.qkd.vacuum_pulses), 0.0,
                                                 c.source, c.detector, rng_vacuum);
        s.vacuum = photon::sift_and_tally(vac);
        s.observation.y0 = s.vacuum->gain;
    }
    auto qber_or_half = [&](const std::optional<double>& q, const char* which) {
        if (q) return *q;
        s.notes.push_back(fmt::format("no matched-basis clicks in the {} session; QBER set to 1/2", which));
        return 0.5;
    };
    s.observation.e_mu = qber_or_half(s.signal.qber, "signal");
    s.observation.e_nu = qber_or_half(s.decoy.qber, "decoy");
    if (s.signal.gain == 0.0) s.notes.push_back("signal session registered no clicks; key rate is 0");

    s.result = keyrate::gllp_rate(s.observation, {c.qkd.q, c.qkd.f});
    if (s.result.rate == 0.0) s.notes.push_back("no positive secure key rate");

    json report = {{"command", "qkd"},
                   {"config", config_to_json(c)},
                   {"seeds", {{"channel", ch.seed()}, {"qkd", c.qkd.seed}}},
                   {"inputs", {{"channel", input_ref(channel_path)},
                               {"mask", mask_path ? input_ref(*mask_path) : json("blank")}}},
                   {"extra_loss_db", extra_loss_db},
                   {"transmittance", s.transmittance},
                   {"total_loss_db", s.total_loss_db},
                   {"signal", io::to_json(s.signal)},
                   {"signal_counts", io::to_json(sig)},
                   {"decoy", io::to_json(s.decoy)},
                   {"decoy_counts", io::to_json(dec)},
                   {"vacuum", s.vacuum ? io::to_json(*s.vacuum) : json(nullptr)},
                   {"observation", io::to_json(s.observation)},
                   {"key_rate", io::to_json(s.result)},
                   {"notes", s.notes}};
    io::write_json(out, report);
    return s;
}

// ---------------------------------------------------------------- keyrate

struct KeyrateSummary {
    keyrate::BatchReport report;
    bool all_within = true;
};

inline KeyrateSummary cmd_keyrate(const fs::path& batch, const keyrate::KeyRateParams& params, double tolerance,
                                  const std::optional<fs::path>& json_out) {
    const auto rows = io::load_batch(batch);
    KeyrateSummary s{keyrate::table_batch(rows, params), true};
    s.all_within = s.report.all_within(tolerance);
    if (json_out) io::write_json(*json_out, io::report_to_json(s.report, params, tolerance));
    return s;
}

} // namespace wfqkd::experiment
