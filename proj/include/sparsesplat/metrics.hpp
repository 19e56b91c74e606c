#pragma once

#include <cmath>

#include "image.hpp"
#include "losses.hpp"

namespace sparsesplat {

// Reported for exact matches instead of +inf.
inline constexpr double kPsnrCap = 99.0;

inline double psnr_from_mse(double mse) {
    if (!(mse >= 0.0)) throw InvalidInputError("psnr: negative or NaN mean squared error");
    if (mse == 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

// Peak signal-to-noise ratio in dB for images with unit dynamic range.
inline double psnr(const Image& rendered, const Image& reference) {
    require_same_shape(rendered, reference, "psnr");
    if (rendered.empty()) throw InvalidInputError("psnr: empty image");
    double se = 0.0;
    for (std::size_t i = 0; i < rendered.size(); ++i) {
        const double d = rendered.data[i] - reference.data[i];
        se += d * d;
    }
    return psnr_from_mse(se / static_cast<double>(rendered.size()));
}

// Mean SSIM with the same window and constants as d_ssim.
inline double ssim(const Image& rendered, const Image& reference) { return ssim_mean(rendered, reference); }

} // namespace sparsesplat
