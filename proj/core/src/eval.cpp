#include "tcm/eval.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "tcm/errors.hpp"
#include "tcm/image.hpp"
#include "tcm/ops.hpp"

namespace tcm {

namespace {

void require_same_shape(const Tensor<float>& a, const Tensor<float>& b, const char* what) {
    if (a.shape() != b.shape())
        throw ConfigError(std::string(what) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
    if (a.empty()) throw ConfigError(std::string(what) + ": empty input");
}

}  // namespace

// ---------------------------------------------------------------- PSNR

double psnr(const Tensor<float>& x, const Tensor<float>& x_hat) {
    require_same_shape(x, x_hat, "psnr");
    double sum = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = (static_cast<double>(x.data()[i]) - x_hat.data()[i]) * 255.0;
        sum += d * d;
    }
    const double mse = sum / static_cast<double>(x.size());
    if (mse == 0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(255.0 * 255.0 / mse));
}

double msssim_db(double msssim) {
    if (msssim >= 1) return kPsnrCap;
    return std::min(kPsnrCap, -10.0 * std::log10(1.0 - msssim));
}

// ---------------------------------------------------------------- MS-SSIM

namespace {

constexpr int kWin = 11;
constexpr double kWinSigma = 1.5;
constexpr std::array<double, 5> kMsssimWeights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

struct Plane {
    int h = 0, w = 0;
    std::vector<double> v;
    double& at(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
    double at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
};

std::array<double, kWin> gaussian_window() {
    std::array<double, kWin> g;
    double total = 0;
    for (int i = 0; i < kWin; ++i) {
        const double c = i - kWin / 2;
        g[i] = std::exp(-(c * c) / (2 * kWinSigma * kWinSigma));
        total += g[i];
    }
    for (auto& v : g) v /= total;
    return g;
}

// Separable valid filtering: first along the height, then along the width.
Plane gaussian_filter(const Plane& p) {
    static const std::array<double, kWin> g = gaussian_window();
    Plane t{p.h - kWin + 1, p.w, {}};
    t.v.assign(static_cast<std::size_t>(t.h) * t.w, 0.0);
    for (int y = 0; y < t.h; ++y)
        for (int x = 0; x < t.w; ++x) {
            double s = 0;
            for (int k = 0; k < kWin; ++k) s += g[k] * p.at(y + k, x);
            t.at(y, x) = s;
        }
    Plane out{t.h, t.w - kWin + 1, {}};
    out.v.assign(static_cast<std::size_t>(out.h) * out.w, 0.0);
    for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w; ++x) {
            double s = 0;
            for (int k = 0; k < kWin; ++k) s += g[k] * t.at(y, x + k);
            out.at(y, x) = s;
        }
    return out;
}

// 2x2 mean with stride 2; odd extents get one zero row/column on each side,
// and padded zeros count towards the mean.
Plane average_pool(const Plane& p) {
    const int ph = p.h % 2, pw = p.w % 2;
    Plane out{(p.h + 2 * ph - 2) / 2 + 1, (p.w + 2 * pw - 2) / 2 + 1, {}};
    out.v.assign(static_cast<std::size_t>(out.h) * out.w, 0.0);
    for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w; ++x) {
            double s = 0;
            for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx) {
                    const int sy = 2 * y + dy - ph, sx = 2 * x + dx - pw;
                    if (sy >= 0 && sy < p.h && sx >= 0 && sx < p.w) s += p.at(sy, sx);
                }
            out.at(y, x) = s / 4;
        }
    return out;
}

Plane product(const Plane& a, const Plane& b) {
    Plane out{a.h, a.w, std::vector<double>(a.v.size())};
    for (std::size_t i = 0; i < a.v.size(); ++i) out.v[i] = a.v[i] * b.v[i];
    return out;
}

// Mean SSIM and mean contrast-structure term of one channel at one scale,
// for data range 255.
std::pair<double, double> ssim_terms(const Plane& x, const Plane& y) {
    const double c1 = std::pow(0.01 * 255, 2), c2 = std::pow(0.03 * 255, 2);
    const Plane mu1 = gaussian_filter(x), mu2 = gaussian_filter(y);
    const Plane xx = gaussian_filter(product(x, x)), yy = gaussian_filter(product(y, y));
    const Plane xy = gaussian_filter(product(x, y));
    double ssim = 0, cs = 0;
    for (std::size_t i = 0; i < mu1.v.size(); ++i) {
        const double m1 = mu1.v[i], m2 = mu2.v[i];
        const double s11 = xx.v[i] - m1 * m1, s22 = yy.v[i] - m2 * m2, s12 = xy.v[i] - m1 * m2;
        const double cs_i = (2 * s12 + c2) / (s11 + s22 + c2);
        cs += cs_i;
        ssim += (2 * m1 * m2 + c1) / (m1 * m1 + m2 * m2 + c1) * cs_i;
    }
    const double n = static_cast<double>(mu1.v.size());
    return {ssim / n, cs / n};
}

}  // namespace

double ms_ssim(const Tensor<float>& x, const Tensor<float>& x_hat) {
    require_same_shape(x, x_hat, "ms_ssim");
    const Shape& s = x.shape();
    const int smaller = std::min(s.h, s.w);
    if (smaller <= (kWin - 1) * 16)
        throw ConfigError("ms_ssim: the shorter side must exceed 160 pixels, got " + std::to_string(smaller));
    double total = 0;
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            Plane a{s.h, s.w, std::vector<double>(s.plane())}, b = a;
            for (std::size_t i = 0; i < s.plane(); ++i) {
                a.v[i] = 255.0 * x.plane(n, c)[i];
                b.v[i] = 255.0 * x_hat.plane(n, c)[i];
            }
            double value = 1;
            for (std::size_t level = 0; level < kMsssimWeights.size(); ++level) {
                const auto [ssim, cs] = ssim_terms(a, b);
                const bool last = level + 1 == kMsssimWeights.size();
                value *= std::pow(std::max(0.0, last ? ssim : cs), kMsssimWeights[level]);
                if (!last) {
                    a = average_pool(a);
                    b = average_pool(b);
                }
            }
            total += value;
        }
    return total / (static_cast<double>(s.n) * s.c);
}

// ---------------------------------------------------------------- RD curves

void RDCurve::validate() const {
    for (std::size_t i = 0; i < points.size(); ++i) {
        const RDPoint& p = points[i];
        if (!(p.bpp > 0) || !std::isfinite(p.bpp) || !std::isfinite(p.psnr))
            throw ConfigError("curve '" + label + "': point " + std::to_string(i) + " needs finite bpp > 0 and psnr");
        if (i > 0 && !(p.bpp > points[i - 1].bpp))
            throw ConfigError("curve '" + label + "': bpp must be strictly increasing");
    }
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        const auto b = cell.find_first_not_of(" \t\r");
        const auto e = cell.find_last_not_of(" \t\r");
        out.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
    }
    return out;
}

}  // namespace

RDCurve RDCurve::from_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw FormatError("'" + path + "' is empty");
    const auto header = split_csv(line);
    auto column = [&](const std::string& name) -> int {
        const auto it = std::find(header.begin(), header.end(), name);
        return it == header.end() ? -1 : static_cast<int>(it - header.begin());
    };
    const int ib = column("bpp"), ip = column("psnr"), im = column("msssim");
    if (ib < 0 || ip < 0) throw FormatError("'" + path + "' needs bpp and psnr columns");
    RDCurve curve;
    curve.label = std::filesystem::path(path).stem().string();
    int row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto cells = split_csv(line);
        auto number = [&](int col) {
            if (col >= static_cast<int>(cells.size())) throw FormatError(path + ":" + std::to_string(row) + ": missing column");
            try {
                std::size_t used = 0;
                const double v = std::stod(cells[col], &used);
                if (used != cells[col].size()) throw std::invalid_argument("trailing characters");
                return v;
            } catch (const std::exception&) {
                throw FormatError(path + ":" + std::to_string(row) + ": '" + cells[col] + "' is not a number");
            }
        };
        RDPoint p;
        p.bpp = number(ib);
        p.psnr = number(ip);
        p.msssim = im >= 0 ? number(im) : std::numeric_limits<double>::quiet_NaN();
        curve.points.push_back(p);
    }
    std::sort(curve.points.begin(), curve.points.end(), [](const RDPoint& a, const RDPoint& b) { return a.bpp < b.bpp; });
    curve.validate();
    return curve;
}

// ---------------------------------------------------------------- PCHIP

namespace {

double sign(double v) { return (v > 0) - (v < 0); }

// Three-point one-sided slope, kept shape preserving.
double edge_slope(double h0, double h1, double m0, double m1) {
    double d = ((2 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
    if (sign(d) != sign(m0))
        d = 0;
    else if (sign(m0) != sign(m1) && std::abs(d) > 3 * std::abs(m0))
        d = 3 * m0;
    return d;
}

}  // namespace

Pchip::Pchip(std::vector<double> x, std::vector<double> y) : x_(std::move(x)), y_(std::move(y)) {
    const std::size_t n = x_.size();
    if (n < 2 || y_.size() != n) throw ConfigError("pchip: needs at least two (x, y) pairs");
    for (std::size_t i = 1; i < n; ++i)
        if (!(x_[i] > x_[i - 1])) throw ConfigError("pchip: x must be strictly increasing");
    std::vector<double> h(n - 1), m(n - 1);
    for (std::size_t k = 0; k + 1 < n; ++k) {
        h[k] = x_[k + 1] - x_[k];
        m[k] = (y_[k + 1] - y_[k]) / h[k];
    }
    d_.assign(n, 0.0);
    if (n == 2) {
        d_[0] = d_[1] = m[0];
        return;
    }
    for (std::size_t k = 1; k + 1 < n; ++k) {
        if (m[k - 1] * m[k] <= 0) continue;
        const double w1 = 2 * h[k] + h[k - 1], w2 = h[k] + 2 * h[k - 1];
        d_[k] = (w1 + w2) / (w1 / m[k - 1] + w2 / m[k]);
    }
    d_[0] = edge_slope(h[0], h[1], m[0], m[1]);
    d_[n - 1] = edge_slope(h[n - 2], h[n - 3], m[n - 2], m[n - 3]);
}

std::size_t Pchip::segment(double x) const {
    const auto it = std::upper_bound(x_.begin(), x_.end(), x);
    const std::size_t k = it == x_.begin() ? 0 : static_cast<std::size_t>(it - x_.begin()) - 1;
    return std::min(k, x_.size() - 2);
}

double Pchip::operator()(double x) const {
    const std::size_t k = segment(x);
    const double h = x_[k + 1] - x_[k];
    const double t = (x - x_[k]) / h;
    const double t2 = t * t, t3 = t2 * t;
    return (2 * t3 - 3 * t2 + 1) * y_[k] + (t3 - 2 * t2 + t) * h * d_[k] + (-2 * t3 + 3 * t2) * y_[k + 1] +
           (t3 - t2) * h * d_[k + 1];
}

// Simpson's rule is exact for the cubic on one segment.
double Pchip::simpson(double a, double b) const {
    return (b - a) / 6 * ((*this)(a) + 4 * (*this)((a + b) / 2) + (*this)(b));
}

double Pchip::integral(double a, double b) const {
    if (a < x_.front() || b > x_.back() || a > b) throw ConfigError("pchip: integration bounds outside the data");
    double total = 0;
    for (std::size_t k = 0; k + 1 < x_.size(); ++k) {
        const double lo = std::max(a, x_[k]), hi = std::min(b, x_[k + 1]);
        if (hi > lo) total += simpson(lo, hi);
    }
    return total;
}

double bd_rate(const RDCurve& test, const RDCurve& anchor) {
    auto interpolant = [](const RDCurve& c) {
        if (c.points.size() < 4)
            throw ConfigError("bd_rate: curve '" + c.label + "' has " + std::to_string(c.points.size()) +
                              " points, at least 4 are needed");
        c.validate();
        std::vector<RDPoint> pts = c.points;
        std::sort(pts.begin(), pts.end(), [](const RDPoint& a, const RDPoint& b) { return a.psnr < b.psnr; });
        std::vector<double> q, r;
        for (const auto& p : pts) {
            if (!q.empty() && !(p.psnr > q.back()))
                throw ConfigError("bd_rate: curve '" + c.label + "' repeats a PSNR value");
            q.push_back(p.psnr);
            r.push_back(std::log(p.bpp));
        }
        return Pchip(std::move(q), std::move(r));
    };
    const Pchip t = interpolant(test), a = interpolant(anchor);
    const double lo = std::max(t.x_min(), a.x_min()), hi = std::min(t.x_max(), a.x_max());
    if (!(hi > lo)) throw ConfigError("bd_rate: the curves have no overlapping PSNR range");
    const double mean_diff = (t.integral(lo, hi) - a.integral(lo, hi)) / (hi - lo);
    return std::expm1(mean_diff) * 100.0;
}

// ---------------------------------------------------------------- ERF

Tensor<float> erf_map(const TCMModel<float>& model, const Tensor<float>& image, int py, int px) {
    const Shape& s = image.shape();
    if (s.n != 1 || s.c != 3) throw ConfigError("erf_map: expects a (1, 3, H, W) image, got " + s.str());
    if (py < 0 || py >= s.h || px < 0 || px >= s.w)
        throw ConfigError("erf_map: point (" + std::to_string(py) + "," + std::to_string(px) + ") lies outside the image");
    const Var<float> x(image, true);
    ForwardOptions<float> opts;
    opts.quant = QuantMode::kRound;
    opts.bound = BoundGradient::kPassThrough;
    const ForwardResult<float> r = model.forward(x, opts);
    Tensor<float> select(r.x_hat.shape());
    for (int c = 0; c < 3; ++c) select.at(0, c, py, px) = 1.0f;
    backward(ops::sum(ops::mul(r.x_hat, ops::constant(std::move(select)))));
    Tensor<float> map(Shape{1, 1, s.h, s.w});
    const Tensor<float>& g = x.grad();
    if (g.empty()) return map;
    for (int c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < s.plane(); ++i) map.data()[i] += std::abs(g.plane(0, c)[i]);
    return map;
}

Tensor<float> clip_map(const Tensor<float>& map, float threshold) {
    Tensor<float> out = map;
    for (auto& v : out.storage()) v = std::min(v, threshold);
    return out;
}

// ---------------------------------------------------------------- codec evaluation

std::vector<ImageResult> eval_codec(const Codec& codec, const std::vector<std::string>& files) {
    using clock = std::chrono::steady_clock;
    std::vector<ImageResult> out;
    for (const auto& file : files) {
        ImageResult r;
        r.image = std::filesystem::path(file).filename().string();
        try {
            const Image img = read_image(file);
            const Tensor<float> x = to_tensor(img);
            const auto t0 = clock::now();
            const std::vector<std::uint8_t> bytes = codec.encode(x);
            const auto t1 = clock::now();
            const Tensor<float> x_hat = codec.decode(bytes);
            const auto t2 = clock::now();
            r.enc_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
            r.dec_ms = std::chrono::duration<double, std::milli>(t2 - t1).count();
            r.bpp = 8.0 * static_cast<double>(bytes.size()) / (static_cast<double>(img.width) * img.height);
            r.psnr = psnr(x, x_hat);
            r.msssim = std::min(img.width, img.height) > (kWin - 1) * 16 ? ms_ssim(x, x_hat)
                                                                          : std::numeric_limits<double>::quiet_NaN();
        } catch (const std::exception& e) {
            r.error = e.what();
        }
        out.push_back(std::move(r));
    }
    return out;
}

RDPoint summarize(const std::vector<ImageResult>& results) {
    RDPoint p;
    int n = 0, n_ms = 0;
    for (const auto& r : results) {
        if (r.error) continue;
        p.bpp += r.bpp;
        p.psnr += r.psnr;
        ++n;
        if (std::isfinite(r.msssim)) {
            p.msssim += r.msssim;
            ++n_ms;
        }
    }
    if (n == 0) throw ConfigError("no image was evaluated successfully");
    p.bpp /= n;
    p.psnr /= n;
    p.msssim = n_ms > 0 ? p.msssim / n_ms : std::numeric_limits<double>::quiet_NaN();
    return p;
}

void write_results_csv(std::ostream& out, const std::vector<ImageResult>& results) {
    out << "image,bpp,psnr,msssim,enc_ms,dec_ms\n";
    out << std::setprecision(10);
    for (const auto& r : results) {
        if (r.error) continue;
        out << r.image << ',' << r.bpp << ',' << r.psnr << ',' << r.msssim << ',' << r.enc_ms << ',' << r.dec_ms
            << '\n';
    }
}

// ---------------------------------------------------------------- plots

namespace {

struct Axis {
    double lo, hi;
    double map(double v, double a, double b) const { return a + (v - lo) / (hi - lo) * (b - a); }
};

Axis nice_axis(double lo, double hi) {
    if (!(hi > lo)) {
        lo -= 0.5;
        hi += 0.5;
    }
    const double pad = 0.05 * (hi - lo);
    return {lo - pad, hi + pad};
}

std::vector<double> ticks(const Axis& a) {
    const double raw = (a.hi - a.lo) / 5;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    double step = mag;
    for (double m : {1.0, 2.0, 5.0, 10.0})
        if (m * mag >= raw) {
            step = m * mag;
            break;
        }
    std::vector<double> t;
    for (double v = std::ceil(a.lo / step) * step; v <= a.hi + 1e-12; v += step) t.push_back(v);
    return t;
}

std::string fmt(double v) {
    std::ostringstream s;
    s << std::setprecision(4) << v;
    return s.str();
}

std::string escape_xml(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '&': out += "&amp;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

void panel(std::ostringstream& svg, const std::vector<RDCurve>& curves, double x0, const std::string& ylabel,
           bool msssim) {
    static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};
    const double left = x0 + 60, right = x0 + 440, top = 40, bottom = 320;
    double bmin = 1e300, bmax = -1e300, qmin = 1e300, qmax = -1e300;
    auto quality = [&](const RDPoint& p) { return msssim ? msssim_db(p.msssim) : p.psnr; };
    for (const auto& c : curves)
        for (const auto& p : c.points) {
            if (!std::isfinite(quality(p))) continue;
            bmin = std::min(bmin, p.bpp);
            bmax = std::max(bmax, p.bpp);
            qmin = std::min(qmin, quality(p));
            qmax = std::max(qmax, quality(p));
        }
    if (bmin > bmax) {
        bmin = 0, bmax = 1, qmin = 0, qmax = 1;
    }
    const Axis ax = nice_axis(bmin, bmax), ay = nice_axis(qmin, qmax);
    svg << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << right - left << "\" height=\"" << bottom - top
        << "\" fill=\"none\" stroke=\"#333\"/>\n";
    for (double t : ticks(ax)) {
        const double x = ax.map(t, left, right);
        svg << "<line x1=\"" << x << "\" y1=\"" << top << "\" x2=\"" << x << "\" y2=\"" << bottom
            << "\" stroke=\"#ddd\"/>\n<text x=\"" << x << "\" y=\"" << bottom + 16
            << "\" font-size=\"11\" text-anchor=\"middle\">" << fmt(t) << "</text>\n";
    }
    for (double t : ticks(ay)) {
        const double y = ay.map(t, bottom, top);
        svg << "<line x1=\"" << left << "\" y1=\"" << y << "\" x2=\"" << right << "\" y2=\"" << y
            << "\" stroke=\"#ddd\"/>\n<text x=\"" << left - 6 << "\" y=\"" << y + 4
            << "\" font-size=\"11\" text-anchor=\"end\">" << fmt(t) << "</text>\n";
    }
    svg << "<text x=\"" << (left + right) / 2 << "\" y=\"" << bottom + 36
        << "\" font-size=\"12\" text-anchor=\"middle\">bpp</text>\n";
    svg << "<text x=\"" << x0 + 16 << "\" y=\"" << (top + bottom) / 2 << "\" font-size=\"12\" text-anchor=\"middle\""
        << " transform=\"rotate(-90 " << x0 + 16 << ' ' << (top + bottom) / 2 << ")\">" << ylabel << "</text>\n";
    for (std::size_t k = 0; k < curves.size(); ++k) {
        const char* color = kColors[k % 7];
        std::ostringstream path;
        for (const auto& p : curves[k].points) {
            if (!std::isfinite(quality(p))) continue;
            path << (path.tellp() == 0 ? "M" : " L") << ax.map(p.bpp, left, right) << ','
                 << ay.map(quality(p), bottom, top);
        }
        svg << "<path d=\"" << path.str() << "\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        for (const auto& p : curves[k].points) {
            if (!std::isfinite(quality(p))) continue;
            svg << "<circle cx=\"" << ax.map(p.bpp, left, right) << "\" cy=\"" << ay.map(quality(p), bottom, top)
                << "\" r=\"3\" fill=\"" << color << "\"/>\n";
        }
        svg << "<text x=\"" << right - 8 << "\" y=\"" << bottom - 12 - 16.0 * (curves.size() - 1 - k)
            << "\" font-size=\"12\" text-anchor=\"end\" fill=\"" << color << "\">" << escape_xml(curves[k].label)
            << "</text>\n";
    }
}

}  // namespace

std::string plot_rd_svg(const std::vector<RDCurve>& curves, const std::string& title) {
    std::ostringstream svg;
    svg << std::setprecision(6);
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"900\" height=\"370\" font-family=\"sans-serif\">\n";
    svg << "<rect width=\"900\" height=\"370\" fill=\"white\"/>\n";
    svg << "<text x=\"450\" y=\"22\" font-size=\"14\" text-anchor=\"middle\">" << escape_xml(title) << "</text>\n";
    panel(svg, curves, 0, "PSNR (dB)", false);
    panel(svg, curves, 450, "MS-SSIM (dB)", true);
    svg << "</svg>\n";
    return svg.str();
}

}  // namespace tcm
