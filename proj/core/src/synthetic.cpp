#include "tcm/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <vector>

#include "tcm/errors.hpp"

namespace tcm {

namespace {

struct Shape2 {
    bool circle;
    double cx, cy, a, b;  // centre and radius (circle) or half extents (box)
    double angle;
    std::array<double, 3> color;
    double softness;
};

}  // namespace

Image synthetic_image(int width, int height, std::uint64_t seed) {
    if (width <= 0 || height <= 0) throw ConfigError("synthetic_image: size must be positive");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double scale = std::min(width, height);

    // Background: bilinear blend of four corner colours plus a low-frequency wave.
    std::array<std::array<double, 3>, 4> corner;
    for (auto& c : corner)
        for (auto& v : c) v = 0.15 + 0.7 * u(rng);
    const double wave_f = (1 + 3 * u(rng)) * 2 * M_PI / scale;
    const double wave_phase = 2 * M_PI * u(rng);
    const double wave_amp = 0.08 * u(rng);

    std::vector<Shape2> shapes(6 + static_cast<int>(u(rng) * 10));
    for (auto& s : shapes) {
        s.circle = u(rng) < 0.5;
        s.cx = u(rng) * width;
        s.cy = u(rng) * height;
        s.a = (0.04 + 0.2 * u(rng)) * scale;
        s.b = (0.04 + 0.2 * u(rng)) * scale;
        s.angle = M_PI * u(rng);
        for (auto& v : s.color) v = u(rng);
        s.softness = 0.5 + 3 * u(rng);
    }

    // Texture patch: oriented stripes inside one box.
    const double tx = u(rng) * width, ty = u(rng) * height, tr = (0.1 + 0.2 * u(rng)) * scale;
    const double t_angle = M_PI * u(rng), t_period = 3 + 9 * u(rng);
    std::normal_distribution<double> noise(0.0, 0.01);

    Image img;
    img.width = width;
    img.height = height;
    img.rgb.resize(static_cast<std::size_t>(width) * height * 3);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const double fx = width > 1 ? static_cast<double>(x) / (width - 1) : 0.0;
            const double fy = height > 1 ? static_cast<double>(y) / (height - 1) : 0.0;
            std::array<double, 3> px;
            const double wave = wave_amp * std::sin(wave_f * (x + 0.5 * y) + wave_phase);
            for (int c = 0; c < 3; ++c)
                px[c] = (1 - fx) * (1 - fy) * corner[0][c] + fx * (1 - fy) * corner[1][c] +
                        (1 - fx) * fy * corner[2][c] + fx * fy * corner[3][c] + wave;
            for (const auto& s : shapes) {
                const double dx = x - s.cx, dy = y - s.cy;
                const double rx = dx * std::cos(s.angle) + dy * std::sin(s.angle);
                const double ry = -dx * std::sin(s.angle) + dy * std::cos(s.angle);
                // Signed distance (pixels, negative inside).
                const double d = s.circle ? std::hypot(rx, ry) - s.a
                                          : std::max(std::abs(rx) - s.a, std::abs(ry) - s.b);
                const double alpha = 1.0 / (1.0 + std::exp(d / s.softness));
                for (int c = 0; c < 3; ++c) px[c] = (1 - alpha) * px[c] + alpha * s.color[c];
            }
            if (std::abs(x - tx) < tr && std::abs(y - ty) < tr) {
                const double t = std::sin(2 * M_PI * (x * std::cos(t_angle) + y * std::sin(t_angle)) / t_period);
                for (int c = 0; c < 3; ++c) px[c] += 0.12 * t;
            }
            for (int c = 0; c < 3; ++c) {
                const double v = std::clamp(px[c] + noise(rng), 0.0, 1.0);
                img.rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255));
            }
        }
    }
    return img;
}

}  // namespace tcm
