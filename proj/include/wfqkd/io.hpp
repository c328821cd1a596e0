#pragma once

/// @file io.hpp
/// @brief File formats: channel files (JSON), mask files (text lattice
/// indices), intensity maps (PGM P2 + JSON sidecar), convergence CSV, and
/// JSON views of count records and key-rate results.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "ga_optimizer.hpp"
#include "keyrate.hpp"
#include "phase_mask.hpp"
#include "photon_sim.hpp"
#include "speckle_channel.hpp"

namespace wfqkd::io {

using json = nlohmann::json;

inline constexpr int channel_format_version = 1;
inline constexpr const char* channel_format_tag = "wfqkd-channel";
inline constexpr const char* mask_format_tag = "wfqkd-mask";

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
    out << text;
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

inline std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open for reading: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_json(const std::filesystem::path& path, const json& j) {
    write_text(path, j.dump(2) + "\n");
}

inline json read_json(const std::filesystem::path& path) {
    try {
        return json::parse(read_text(path));
    } catch (const json::parse_error& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

inline std::string hex64(std::uint64_t v) { return fmt::format("{:016x}", v); }

// ---------------------------------------------------------------- channel

enum class ChannelStorage { seed, exact };

inline json channel_to_json(const ScatteringChannel& ch, ChannelStorage storage = ChannelStorage::exact) {
    const auto& g = ch.geometry();
    json j;
    j["format"] = channel_format_tag;
    j["version"] = channel_format_version;
    j["mode"] = storage == ChannelStorage::exact ? "exact" : "seed";
    j["calibration"] = {{"blank_loss_db", ch.calibration().blank_loss_db},
                        {"num_blocks", ch.calibration().num_blocks}};
    j["geometry"] = {{"mask_width", g.mask_width},
                     {"mask_height", g.mask_height},
                     {"output_width", g.output_width},
                     {"output_height", g.output_height}};
    j["scattering_fraction"] = ch.scattering_fraction();
    j["seed"] = ch.seed();
    j["rescaled"] = ch.rescaled();
    if (storage == ChannelStorage::exact) {
        j["background_scale"] = ch.background_scale();
        json row = json::array();
        for (const auto& t : ch.fiber_row()) row.push_back({t.real(), t.imag()});
        j["fiber_row"] = std::move(row);
    }
    return j;
}

inline ScatteringChannel channel_from_json(const json& j) {
    try {
        if (j.at("format").get<std::string>() != channel_format_tag)
            throw FormatError("not a channel file");
        const int version = j.at("version").get<int>();
        if (version != channel_format_version)
            throw FormatError("unsupported channel file version " + std::to_string(version));
        ChannelCalibration cal{j.at("calibration").at("blank_loss_db").get<double>(),
                               j.at("calibration").at("num_blocks").get<std::size_t>()};
        const auto& jg = j.at("geometry");
        ChannelGeometry g{jg.at("mask_width").get<std::size_t>(), jg.at("mask_height").get<std::size_t>(),
                          jg.at("output_width").get<std::size_t>(), jg.at("output_height").get<std::size_t>()};
        const double s = j.at("scattering_fraction").get<double>();
        const auto seed = j.at("seed").get<std::uint64_t>();
        const auto mode = j.at("mode").get<std::string>();
        if (mode == "seed") return generate_channel(cal, s, seed, g);
        if (mode != "exact") throw FormatError("unknown channel mode '" + mode + "'");
        std::vector<Complex> row;
        for (const auto& c : j.at("fiber_row")) {
            if (!c.is_array() || c.size() != 2) throw FormatError("fiber_row entries must be [re, im]");
            row.emplace_back(c[0].get<double>(), c[1].get<double>());
        }
        if (cal.num_blocks != g.num_blocks()) throw FormatError("num_blocks does not match geometry");
        return {cal, g, s, seed, std::move(row), j.at("background_scale").get<double>(),
                j.at("rescaled").get<bool>()};
    } catch (const json::exception& e) {
        throw FormatError(std::string("channel file: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw FormatError(std::string("channel file: ") + e.what());
    }
}

inline void save_channel(const std::filesystem::path& path, const ScatteringChannel& ch,
                         ChannelStorage storage = ChannelStorage::exact) {
    write_json(path, channel_to_json(ch, storage));
}

inline ScatteringChannel load_channel(const std::filesystem::path& path) {
    return channel_from_json(read_json(path));
}

// ---------------------------------------------------------------- mask

/// "wfqkd-mask 1", then "width height levels", then one row of lattice
/// indices per mask row.
inline std::string mask_to_text(const PhaseMask& mask, double quant_step) {
    const std::size_t levels = quant_levels(quant_step);
    const auto idx = level_indices(mask, levels);
    std::string out = fmt::format("{} 1\n{} {} {}\n", mask_format_tag, mask.width(), mask.height(), levels);
    for (std::size_t r = 0; r < mask.height(); ++r) {
        for (std::size_t c = 0; c < mask.width(); ++c) {
            if (c) out += ' ';
            out += std::to_string(idx[r * mask.width() + c]);
        }
        out += '\n';
    }
    return out;
}

inline PhaseMask mask_from_text(const std::string& text) {
    std::istringstream in(text);
    std::string tag;
    int version = 0;
    std::size_t width = 0, height = 0, levels = 0;
    if (!(in >> tag >> version) || tag != mask_format_tag) throw FormatError("not a mask file");
    if (version != 1) throw FormatError("unsupported mask file version " + std::to_string(version));
    if (!(in >> width >> height >> levels) || width == 0 || height == 0 || levels == 0)
        throw FormatError("mask file: bad header");
    std::vector<double> phases(width * height);
    for (std::size_t j = 0; j < phases.size(); ++j) {
        long long k = -1;
        if (!(in >> k)) throw FormatError("mask file: expected " + std::to_string(phases.size()) + " indices");
        if (k < 0 || static_cast<std::size_t>(k) >= levels)
            throw FormatError("mask file: level index out of range at block " + std::to_string(j));
        phases[j] = level_phase(static_cast<std::size_t>(k), levels);
    }
    std::string extra;
    if (in >> extra) throw FormatError("mask file: trailing data");
    return {width, height, std::move(phases)};
}

inline void save_mask(const std::filesystem::path& path, const PhaseMask& mask, double quant_step) {
    write_text(path, mask_to_text(mask, quant_step));
}

inline PhaseMask load_mask(const std::filesystem::path& path) { return mask_from_text(read_text(path)); }

// ---------------------------------------------------------------- intensity

/// Plain PGM (P2), linearly scaled so the brightest pixel maps to maxval.
inline std::string intensity_to_pgm(const IntensityMap& map, unsigned maxval = 65535) {
    double peak = 0.0;
    for (double v : map.values) peak = std::max(peak, v);
    std::string out = fmt::format("P2\n{} {}\n{}\n", map.width, map.height, maxval);
    for (std::size_t r = 0; r < map.height; ++r) {
        for (std::size_t c = 0; c < map.width; ++c) {
            const double v = map.values[r * map.width + c];
            const auto level = peak > 0.0 ? static_cast<unsigned>(std::lround(v / peak * maxval)) : 0U;
            // Keep lines under 70 characters.
            out += (c == 0) ? "" : ((c % 10 == 0) ? "\n" : " ");
            out += std::to_string(level);
        }
        out += '\n';
    }
    return out;
}

struct Pgm {
    std::size_t width = 0;
    std::size_t height = 0;
    unsigned maxval = 0;
    std::vector<unsigned> pixels;
};

inline Pgm parse_pgm(const std::string& text) {
    std::istringstream in(text);
    std::string magic;
    Pgm p;
    if (!(in >> magic) || magic != "P2") throw FormatError("not a plain PGM");
    if (!(in >> p.width >> p.height >> p.maxval)) throw FormatError("PGM: bad header");
    p.pixels.resize(p.width * p.height);
    for (auto& v : p.pixels) {
        if (!(in >> v) || v > p.maxval) throw FormatError("PGM: bad pixel");
    }
    return p;
}

inline json intensity_sidecar(const ScatteringChannel& ch, const PhaseMask& mask, const IntensityMap& map,
                              double quant_step) {
    double peak = 0.0;
    for (double v : map.values) peak = std::max(peak, v);
    return {{"calibration",
             {{"blank_loss_db", ch.calibration().blank_loss_db}, {"num_blocks", ch.calibration().num_blocks}}},
            {"scattering_fraction", ch.scattering_fraction()},
            {"seed", ch.seed()},
            {"mask_hash", hex64(mask_hash(mask, quant_levels(quant_step)))},
            {"width", map.width},
            {"height", map.height},
            {"fiber_pixel", map.fiber_pixel},
            {"peak_intensity", peak},
            {"fiber_intensity", map.fiber_value()},
            {"mean_background", map.mean_background()},
            {"contrast", map.contrast()},
            {"scaling", "linear, peak = maxval"}};
}

// ---------------------------------------------------------------- history

inline std::string history_to_csv(const ga::OptimizationHistory& h) {
    std::string out = "generation,best_fitness,mean_fitness,mutation_rate\n";
    for (const auto& r : h.records)
        out += fmt::format("{},{:.17g},{:.17g},{:.17g}\n", r.generation, r.best_fitness, r.mean_fitness,
                           r.mutation_rate);
    return out;
}

// ---------------------------------------------------------------- photon / keyrate

inline json to_json(const photon::CountRecord& r) {
    json tally = json::array();
    for (const auto& row : r.tally) tally.push_back(row);
    return {{"pulses", r.pulses}, {"d0", r.d0}, {"d1_d4", r.clicks}, {"sent", r.sent}, {"tally", tally}};
}

inline json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline json to_json(const photon::SiftedStats& s) {
    json states = json::object();
    for (std::size_t i = 0; i < photon::num_states; ++i)
        states[photon::state_name(static_cast<photon::PolarizationState>(i))] = optional_json(s.state_qber[i]);
    return {{"gain", s.gain},
            {"qber", optional_json(s.qber)},
            {"qber_z", optional_json(s.basis_qber[0])},
            {"qber_x", optional_json(s.basis_qber[1])},
            {"qber_per_state", states},
            {"matched_clicks", s.matched_clicks},
            {"errors", s.errors}};
}

inline json to_json(const keyrate::DecoyObservation& o) {
    return {{"mu", o.mu},     {"nu", o.nu},     {"Q_mu", o.q_mu}, {"E_mu", o.e_mu},
            {"Q_nu", o.q_nu}, {"E_nu", o.e_nu}, {"Y0", o.y0},     {"e0", o.e0}};
}

inline json to_json(const keyrate::KeyRateResult& r) {
    return {{"Y1_lower", r.y1_lower},
            {"e1_upper", r.e1_upper},
            {"Delta1", r.delta1},
            {"R", r.rate},
            {"clamped",
             {{"Y1", r.y1_clamped},
              {"e1", r.e1_clamped},
              {"e1_undefined", r.e1_undefined},
              {"Delta1", r.delta1_clamped},
              {"R", r.rate_clamped}}}};
}

} // namespace wfqkd::io
