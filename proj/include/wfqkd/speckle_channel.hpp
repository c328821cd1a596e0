#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "phase_mask.hpp"
#include "rng.hpp"

namespace wfqkd {

using Complex = std::complex<double>;

struct ChannelCalibration {
    double blank_loss_db = 0.0;
    std::size_t num_blocks = default_mask_side * default_mask_side;
};

/// Shape of the modulator grid and the output-plane camera grid.
struct ChannelGeometry {
    std::size_t mask_width = default_mask_side;
    std::size_t mask_height = default_mask_side;
    std::size_t output_width = 64;
    std::size_t output_height = 64;

    /// Square mask when num_blocks is a perfect square, otherwise a single row.
    static ChannelGeometry for_blocks(std::size_t num_blocks) {
        ChannelGeometry g;
        auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(num_blocks))));
        if (side * side == num_blocks) {
            g.mask_width = g.mask_height = side;
        } else {
            g.mask_width = num_blocks;
            g.mask_height = 1;
        }
        return g;
    }

    std::size_t num_blocks() const noexcept { return mask_width * mask_height; }
    std::size_t num_pixels() const noexcept { return output_width * output_height; }
    std::size_t fiber_pixel() const noexcept {
        return (output_height / 2) * output_width + output_width / 2;
    }
};

inline double transmittance_from_db(double loss_db) { return std::pow(10.0, -loss_db / 10.0); }

inline double loss_db(double transmittance) {
    if (!(transmittance > 0.0)) throw std::domain_error("loss_db: transmittance must be positive");
    return -10.0 * std::log10(transmittance);
}

inline double enhancement(double eta_after, double eta_before) {
    if (!(eta_before > 0.0)) throw std::domain_error("enhancement: eta_before must be positive");
    return eta_after / eta_before;
}

/// Random linear map from mask blocks to the receiver fiber mode and to an
/// output-plane pixel grid. The fiber row is stored; background rows of the
/// output plane are regenerated on demand from the seed, one substream per
/// pixel, so a 60x60 mask against a 64x64 camera does not need 200+ MB.
class ScatteringChannel {
public:
    ScatteringChannel(ChannelCalibration calibration, ChannelGeometry geometry,
                      double scattering_fraction, std::uint64_t seed,
                      std::vector<Complex> fiber_row, double background_scale, bool rescaled)
        : calibration_(calibration), geometry_(geometry), scattering_fraction_(scattering_fraction),
          seed_(seed), fiber_row_(std::move(fiber_row)), background_scale_(background_scale),
          rescaled_(rescaled) {
        if (fiber_row_.size() != geometry_.num_blocks())
            throw std::invalid_argument("ScatteringChannel: fiber row length does not match geometry");
        if (geometry_.num_pixels() == 0)
            throw std::invalid_argument("ScatteringChannel: empty output plane");
    }

    const ChannelCalibration& calibration() const noexcept { return calibration_; }
    const ChannelGeometry& geometry() const noexcept { return geometry_; }
    double scattering_fraction() const noexcept { return scattering_fraction_; }
    std::uint64_t seed() const noexcept { return seed_; }
    std::span<const Complex> fiber_row() const noexcept { return fiber_row_; }
    std::size_t num_blocks() const noexcept { return fiber_row_.size(); }
    /// Standard deviation scale of background (non-fiber) output coefficients.
    double background_scale() const noexcept { return background_scale_; }
    /// Set when the drawn row violated (sum|t|)^2 <= 1 and was rescaled.
    bool rescaled() const noexcept { return rescaled_; }

    /// (sum_j |t_j|)^2, the largest transmittance any phase mask can reach.
    double optimum_transmittance() const noexcept {
        double s = 0.0;
        for (const auto& t : fiber_row_) s += std::abs(t);
        return s * s;
    }

    /// Coefficients from every block to output pixel p.
    std::vector<Complex> output_row(std::size_t pixel) const {
        if (pixel >= geometry_.num_pixels()) throw std::out_of_range("output_row: pixel index");
        if (pixel == geometry_.fiber_pixel()) return fiber_row_;
        std::vector<Complex> row(num_blocks(), Complex{});
        if (background_scale_ == 0.0) return row;
        auto rng = make_rng(seed_, {stream::output_plane, pixel});
        std::normal_distribution<double> normal(0.0, std::sqrt(0.5));
        for (auto& c : row) {
            const double re = normal(rng);
            const double im = normal(rng);
            c = background_scale_ * Complex{re, im};
        }
        return row;
    }

    bool matches(const PhaseMask& mask) const noexcept {
        return mask.width() == geometry_.mask_width && mask.height() == geometry_.mask_height;
    }

private:
    ChannelCalibration calibration_;
    ChannelGeometry geometry_;
    double scattering_fraction_;
    std::uint64_t seed_;
    std::vector<Complex> fiber_row_;
    double background_scale_;
    bool rescaled_;
};

/// Draws t_j = c (sqrt(1-s) + sqrt(s) g_j), g_j ~ CN(0,1), with c chosen so
/// that E|sum_j t_j|^2 equals the calibrated blank transmittance.
inline ScatteringChannel generate_channel(const ChannelCalibration& calibration,
                                          double scattering_fraction, std::uint64_t seed,
                                          ChannelGeometry geometry) {
    const std::size_t n = calibration.num_blocks;
    if (n == 0) throw std::invalid_argument("generate_channel: num_blocks must be >= 1");
    if (!(calibration.blank_loss_db >= 0.0))
        throw std::invalid_argument("generate_channel: blank_loss_db must be >= 0");
    if (!(scattering_fraction >= 0.0 && scattering_fraction <= 1.0))
        throw std::invalid_argument("generate_channel: scattering_fraction must be in [0, 1]");
    if (geometry.num_blocks() != n)
        throw std::invalid_argument("generate_channel: geometry does not match num_blocks");

    const double s = scattering_fraction;
    const double nd = static_cast<double>(n);
    const double target = transmittance_from_db(calibration.blank_loss_db);
    const double c = std::sqrt(target / ((1.0 - s) * nd * nd + s * nd));
    const double ballistic = c * std::sqrt(1.0 - s);
    const double diffuse = c * std::sqrt(s);

    std::vector<Complex> row(n);
    auto rng = make_rng(seed, {stream::fiber_row});
    std::normal_distribution<double> normal(0.0, std::sqrt(0.5));
    for (auto& t : row) {
        const double re = normal(rng);
        const double im = normal(rng);
        t = Complex{ballistic, 0.0} + diffuse * Complex{re, im};
    }

    double sum_abs = 0.0;
    for (const auto& t : row) sum_abs += std::abs(t);
    bool rescaled = false;
    double factor = 1.0;
    if (sum_abs * sum_abs > 1.0) {
        factor = 1.0 / sum_abs;
        for (auto& t : row) t *= factor;
        rescaled = true;
    }
    return {calibration, geometry, s, seed, std::move(row), diffuse * factor, rescaled};
}

inline ScatteringChannel generate_channel(const ChannelCalibration& calibration,
                                          double scattering_fraction, std::uint64_t seed) {
    return generate_channel(calibration, scattering_fraction, seed,
                            ChannelGeometry::for_blocks(calibration.num_blocks));
}

namespace detail {
inline double field_power(std::span<const Complex> row, const PhaseMask& mask) {
    Complex field{};
    for (std::size_t j = 0; j < row.size(); ++j) field += row[j] * std::polar(1.0, mask[j]);
    return std::norm(field);
}
} // namespace detail

/// |sum_j t_j exp(i phi_j)|^2 for the fiber mode.
inline double coupled_efficiency(const ScatteringChannel& channel, const PhaseMask& mask) {
    if (!channel.matches(mask))
        throw std::invalid_argument("coupled_efficiency: mask dimensions do not match channel");
    return detail::field_power(channel.fiber_row(), mask);
}

/// phi_j = -arg(t_j) mod 2pi. Reaches optimum_transmittance().
inline PhaseMask conjugate_mask(const ScatteringChannel& channel) {
    const auto row = channel.fiber_row();
    std::vector<double> phases(row.size());
    for (std::size_t j = 0; j < row.size(); ++j) phases[j] = -std::arg(row[j]);
    const auto& g = channel.geometry();
    return {g.mask_width, g.mask_height, std::move(phases)};
}

struct IntensityMap {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t fiber_pixel = 0;
    std::vector<double> values;

    double fiber_value() const { return values.at(fiber_pixel); }

    double mean_background() const {
        if (values.size() < 2) return 0.0;
        double sum = std::accumulate(values.begin(), values.end(), 0.0) - values[fiber_pixel];
        return sum / static_cast<double>(values.size() - 1);
    }

    /// Fiber pixel over mean background. Infinite when the background is dark.
    double contrast() const {
        const double bg = mean_background();
        if (bg <= 0.0) return fiber_value() > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
        return fiber_value() / bg;
    }
};

inline IntensityMap output_intensity(const ScatteringChannel& channel, const PhaseMask& mask) {
    if (!channel.matches(mask))
        throw std::invalid_argument("output_intensity: mask dimensions do not match channel");
    const auto& g = channel.geometry();
    IntensityMap map{g.output_width, g.output_height, g.fiber_pixel(),
                     std::vector<double>(g.num_pixels(), 0.0)};
    for (std::size_t p = 0; p < g.num_pixels(); ++p) {
        if (p == map.fiber_pixel) {
            map.values[p] = detail::field_power(channel.fiber_row(), mask);
        } else {
            const auto row = channel.output_row(p);
            map.values[p] = detail::field_power(row, mask);
        }
    }
    return map;
}

} // namespace wfqkd
