#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "tcm/codec.hpp"
#include "tcm/model.hpp"

namespace tcm {

/// PSNR reported for identical images.
inline constexpr double kPsnrCap = 100.0;

/// Both inputs (N, 3, H, W) in [0, 1]; computed on the 0..255 scale.
/// Throws ConfigError on a shape mismatch.
double psnr(const Tensor<float>& x, const Tensor<float>& x_hat);

/// Five-scale MS-SSIM with an 11-tap Gaussian window (sigma 1.5), weights
/// (0.0448, 0.2856, 0.3001, 0.2363, 0.1333), K = (0.01, 0.03), valid
/// filtering and 2x2 average pooling that zero-pads odd extents. The
/// result is the per-channel value averaged over channels and batch.
/// Needs a shorter side above 160 pixels.
double ms_ssim(const Tensor<float>& x, const Tensor<float>& x_hat);

/// -10 log10(1 - msssim), capped at kPsnrCap.
double msssim_db(double msssim);

struct RDPoint {
    double bpp = 0;
    double psnr = 0;
    double msssim = 0;
};

/// Points sorted by strictly increasing bpp. Throws ConfigError otherwise.
struct RDCurve {
    std::string label;
    std::vector<RDPoint> points;

    void validate() const;
    /// Reads a CSV with at least `bpp` and `psnr` columns (and optionally
    /// `msssim`); rows are sorted by bpp.
    static RDCurve from_csv(const std::string& path);
};

/// Piecewise-cubic (monotone Hermite) interpolation of log(bpp) against
/// PSNR, integrated exactly over the common PSNR interval. Percent rate
/// change of `test` against `anchor` at equal quality; negative is better.
/// Each curve needs at least 4 points; no overlap is a ConfigError.
double bd_rate(const RDCurve& test, const RDCurve& anchor);

/// Monotone cubic Hermite interpolant with Fritsch-Carlson style slopes
/// (the construction used by common PCHIP implementations).
class Pchip {
public:
    Pchip(std::vector<double> x, std::vector<double> y);
    double operator()(double x) const;
    /// Exact integral over [a, b] within the data range.
    double integral(double a, double b) const;
    double x_min() const { return x_.front(); }
    double x_max() const { return x_.back(); }

private:
    std::size_t segment(double x) const;
    double simpson(double a, double b) const;
    std::vector<double> x_, y_, d_;
};

/// |d x_hat[p] / d x| summed over colour channels, for an (1, 3, H, W)
/// image whose size is a multiple of 64. The output pixel's colour
/// channels are summed to a scalar before differentiation. Rounding uses
/// straight-through gradients.
Tensor<float> erf_map(const TCMModel<float>& model, const Tensor<float>& image, int py, int px);
/// Values above `threshold` are reduced to it.
Tensor<float> clip_map(const Tensor<float>& map, float threshold);

/// Thresholds of the two-row comparison layout.
inline constexpr float kErfThresholdCoarse = 0.01f;
inline constexpr float kErfThresholdFine = 0.0001f;

struct ImageResult {
    std::string image;
    double bpp = 0;
    double psnr = 0;
    double msssim = 0;  // NaN when the image is too small for five scales
    double enc_ms = 0;
    double dec_ms = 0;
    std::optional<std::string> error;
};

/// Encodes and decodes every file, measuring rate from the real bitstream
/// (header included) at the original resolution. A failing image is
/// recorded with its error and the run continues.
std::vector<ImageResult> eval_codec(const Codec& codec, const std::vector<std::string>& files);
/// Mean over the successful images (msssim over those where it is defined).
RDPoint summarize(const std::vector<ImageResult>& results);

void write_results_csv(std::ostream& out, const std::vector<ImageResult>& results);

/// PSNR-vs-bpp and MS-SSIM(dB)-vs-bpp panels side by side.
std::string plot_rd_svg(const std::vector<RDCurve>& curves, const std::string& title);

}  // namespace tcm
