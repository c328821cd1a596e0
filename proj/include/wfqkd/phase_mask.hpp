#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace wfqkd {

inline constexpr double two_pi = 2.0 * std::numbers::pi;
inline constexpr double default_quant_step = 0.2 * std::numbers::pi;
inline constexpr std::size_t default_mask_side = 60;

/// Wraps an angle into [0, 2pi).
inline double wrap_phase(double phi) noexcept {
    double r = std::fmod(phi, two_pi);
    if (r < 0.0) r += two_pi;
    // fmod can return exactly two_pi after the correction for tiny negatives
    if (r >= two_pi) r = 0.0;
    return r;
}

/// Grid of per-block phases (radians) driving the modulator. Row-major.
class PhaseMask {
public:
    PhaseMask() = default;

    PhaseMask(std::size_t width, std::size_t height, double fill = 0.0)
        : width_(width), height_(height), phases_(width * height, wrap_phase(fill)) {
        if (width == 0 || height == 0) throw std::invalid_argument("PhaseMask: zero dimension");
    }

    PhaseMask(std::size_t width, std::size_t height, std::vector<double> phases)
        : width_(width), height_(height), phases_(std::move(phases)) {
        if (width == 0 || height == 0) throw std::invalid_argument("PhaseMask: zero dimension");
        if (phases_.size() != width * height)
            throw std::invalid_argument("PhaseMask: phase count does not match dimensions");
        for (auto& p : phases_) p = wrap_phase(p);
    }

    static PhaseMask blank(std::size_t width, std::size_t height) { return {width, height, 0.0}; }

    std::size_t width() const noexcept { return width_; }
    std::size_t height() const noexcept { return height_; }
    std::size_t size() const noexcept { return phases_.size(); }

    double operator[](std::size_t j) const noexcept { return phases_[j]; }
    double at(std::size_t row, std::size_t col) const { return phases_.at(row * width_ + col); }

    /// Sets a block phase, wrapping into [0, 2pi).
    void set(std::size_t j, double phi) { phases_.at(j) = wrap_phase(phi); }

    std::span<const double> phases() const noexcept { return phases_; }

    bool same_shape(const PhaseMask& o) const noexcept {
        return width_ == o.width_ && height_ == o.height_;
    }

    friend bool operator==(const PhaseMask&, const PhaseMask&) = default;

private:
    std::size_t width_ = 0;
    std::size_t height_ = 0;
    std::vector<double> phases_;
};

/// Number of lattice levels for a quantization step. The step must divide
/// 2pi into an integer number of levels.
inline std::size_t quant_levels(double step) {
    if (!(step > 0.0) || step > two_pi + 1e-12)
        throw std::invalid_argument("quantization step must be in (0, 2pi]");
    const double n = two_pi / step;
    const double rounded = std::round(n);
    if (std::abs(n - rounded) > 1e-9 * rounded)
        throw std::invalid_argument("quantization step does not divide 2pi: " + std::to_string(step));
    return static_cast<std::size_t>(rounded);
}

/// Phase of lattice level k for the given level count.
inline double level_phase(std::size_t level, std::size_t levels) noexcept {
    return two_pi * static_cast<double>(level) / static_cast<double>(levels);
}

/// Nearest lattice level of a phase (2pi wraps to level 0).
inline std::size_t nearest_level(double phi, std::size_t levels) noexcept {
    const double x = wrap_phase(phi) * static_cast<double>(levels) / two_pi;
    auto k = static_cast<std::size_t>(std::llround(x));
    return k % levels;
}

inline PhaseMask quantize(const PhaseMask& mask, double step) {
    const std::size_t levels = quant_levels(step);
    std::vector<double> out(mask.size());
    for (std::size_t j = 0; j < mask.size(); ++j)
        out[j] = level_phase(nearest_level(mask[j], levels), levels);
    return {mask.width(), mask.height(), std::move(out)};
}

/// True when every phase sits on the lattice (within a tight tolerance).
inline bool on_lattice(const PhaseMask& mask, double step, double tol = 1e-9) {
    const std::size_t levels = quant_levels(step);
    for (double p : mask.phases()) {
        if (std::abs(p - level_phase(nearest_level(p, levels), levels)) > tol &&
            std::abs(p - two_pi) > tol)
            return false;
    }
    return true;
}

/// Lattice level index of every block.
inline std::vector<std::uint32_t> level_indices(const PhaseMask& mask, std::size_t levels) {
    std::vector<std::uint32_t> out(mask.size());
    for (std::size_t j = 0; j < mask.size(); ++j)
        out[j] = static_cast<std::uint32_t>(nearest_level(mask[j], levels));
    return out;
}

/// FNV-1a over dimensions and lattice indices; identifies a mask in metadata.
inline std::uint64_t mask_hash(const PhaseMask& mask, std::size_t levels) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](std::uint64_t v) {
        for (int b = 0; b < 8; ++b) {
            h ^= (v >> (8 * b)) & 0xffU;
            h *= 0x100000001b3ULL;
        }
    };
    mix(mask.width());
    mix(mask.height());
    for (auto k : level_indices(mask, levels)) mix(k);
    return h;
}

} // namespace wfqkd
