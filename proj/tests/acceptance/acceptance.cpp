// Acceptance checks for the codec. Each check prints one PASS/FAIL line with
// the measured value and its tolerance. Run with a check name to run only
// that check; with no argument, all of them run.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "support/bdrate_cases.hpp"
#include "support/msssim_cases.hpp"
#include "tcm/bitstream.hpp"
#include "tcm/checkpoint.hpp"
#include "tcm/codec.hpp"
#include "tcm/coder.hpp"
#include "tcm/entropy.hpp"
#include "tcm/errors.hpp"
#include "tcm/eval.hpp"
#include "tcm/image.hpp"
#include "tcm/model.hpp"
#include "tcm/synthetic.hpp"
#include "tcm/train.hpp"

namespace {

using namespace tcm;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

struct Outcome {
    bool pass;
    std::string detail;
};

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

class ScratchDir {
public:
    explicit ScratchDir(const std::string& tag) {
        path_ = fs::temp_directory_path() / ("tcm_accept_" + tag + "_" + std::to_string(::getpid()));
        fs::create_directories(path_);
    }
    ~ScratchDir() { fs::remove_all(path_); }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

// ------------------------------------------------------------------ coder

// Random table: a Gaussian of random scale or an arbitrary pmf with a
// random offset, some entries tiny enough to hit the minimum count.
coder::QuantizedCDF random_table(std::mt19937_64& rng) {
    if (rng() % 3 == 0) return coder::gaussian_cdf(std::exp(std::uniform_real_distribution<double>(-2.3, 5.5)(rng)));
    const int n = 1 + static_cast<int>(rng() % 48);
    std::vector<double> pmf(n);
    for (auto& p : pmf) p = rng() % 5 == 0 ? 1e-9 : std::uniform_real_distribution<double>(0, 1)(rng);
    return coder::quantize_pmf(pmf, static_cast<int>(rng() % 201) - 100);
}

std::size_t random_length(std::mt19937_64& rng) {
    const auto r = rng() % 1000;
    if (r < 10) return 0;
    if (r < 12) return 100000;
    // Mostly short messages, with a log-uniform tail up to 10^5.
    const double hi = r < 112 ? std::log(100001.0) : std::log(1001.0);
    return static_cast<std::size_t>(std::exp(std::uniform_real_distribution<double>(0, hi)(rng))) - 1;
}

Outcome coder_fuzz() {
    constexpr long kCases = 1000000;
    constexpr double kLimit = 600;
    const auto start = Clock::now();
    std::mt19937_64 rng(0x5eed);
    std::vector<coder::QuantizedCDF> pool;
    for (int i = 0; i < 4096; ++i) pool.push_back(random_table(rng));

    long failures = 0, symbols = 0, escapes = 0;
    std::vector<std::int32_t> values;
    std::vector<std::uint32_t> indices;
    for (long c = 0; c < kCases; ++c) {
        coder::CdfTables tables;
        const int count = 1 + static_cast<int>(rng() % 4);
        std::vector<coder::QuantizedCDF> chosen;
        for (int t = 0; t < count; ++t) {
            chosen.push_back(rng() % 16 == 0 ? random_table(rng) : pool[rng() % pool.size()]);
            tables.add(chosen.back());
        }
        const std::size_t n = random_length(rng);
        values.resize(n);
        indices.resize(n);
        for (std::size_t k = 0; k < n; ++k) {
            const auto t = static_cast<std::uint32_t>(rng() % count);
            const auto& q = chosen[t];
            indices[k] = t;
            const auto r = rng() % 64;
            if (r == 0) {
                values[k] = coder::kEscapeMin + static_cast<int>(rng() % 65536);
            } else if (r == 1) {
                values[k] = rng() & 1 ? coder::kEscapeMin : coder::kEscapeMax;
            } else {
                values[k] = q.min_value() + static_cast<int>(rng() % q.regular_symbols());
            }
            escapes += values[k] < q.min_value() || values[k] > q.max_value();
        }
        symbols += static_cast<long>(n);
        try {
            const auto bytes = coder::encode_symbols(values, indices, tables);
            if (coder::decode_symbols(bytes, indices, tables) != values) ++failures;
        } catch (const std::exception&) {
            ++failures;
        }
    }
    const double elapsed = seconds_since(start);
    return {failures == 0 && elapsed <= kLimit,
            fmt("%ld cases, %ld symbols (%ld escapes), %ld failures; %.1f s (limit %.0f s)", kCases, symbols, escapes,
                failures, elapsed, kLimit)};
}

// The ideal length is the information content under the tables the coder
// is given, -sum log2 p with p = count / 2^16 and the 16-bit escape payload.
// The gap to the unquantized Gaussian is reported alongside; it is dominated
// by the escape mass reserved in every table.
Outcome rate_fidelity() {
    std::mt19937_64 rng(0xfade);
    int bad = 0;
    double worst_margin = -1e30, ideal_total = 0, real_total = 0, gaussian_total = 0;
    for (int field = 0; field < 100; ++field) {
        // Each field has its own scale range, from nearly deterministic to wide.
        const double lo = std::uniform_real_distribution<double>(std::log(kScaleFloor), std::log(8.0))(rng);
        const double hi = lo + std::uniform_real_distribution<double>(0, 2.5)(rng);
        const double mu_spread = std::uniform_real_distribution<double>(0, 20)(rng);
        std::vector<std::int32_t> values;
        std::vector<std::uint32_t> indices;
        coder::CdfTables tables;
        std::map<float, std::uint32_t> by_sigma;
        std::vector<coder::QuantizedCDF> cdfs;
        double ideal_bits = 0;
        for (int k = 0; k < 10000; ++k) {
            const auto sigma = static_cast<float>(std::exp(std::uniform_real_distribution<double>(lo, hi)(rng)));
            const auto mu = static_cast<float>(std::uniform_real_distribution<double>(-mu_spread, mu_spread)(rng));
            const auto y = static_cast<float>(std::normal_distribution<double>(mu, sigma)(rng));
            const int v = coder::quantize_symbol(y, mu);
            auto [it, inserted] = by_sigma.try_emplace(sigma, 0u);
            if (inserted) {
                cdfs.push_back(coder::gaussian_cdf(sigma));
                it->second = tables.add(cdfs.back());
            }
            values.push_back(v);
            indices.push_back(it->second);
            ideal_bits += coder::symbol_cost_bits(cdfs[it->second], v);
            gaussian_total -= std::log2(std::max(gaussian_interval(v, sigma), 1e-300)) / 8;
        }
        const double bytes = static_cast<double>(coder::encode_symbols(values, indices, tables).size());
        const double ideal = ideal_bits / 8, slack = 0.01 * ideal + 8;
        worst_margin = std::max(worst_margin, std::abs(bytes - ideal) - slack);
        bad += std::abs(bytes - ideal) > slack;
        ideal_total += ideal;
        real_total += bytes;
    }
    return {bad == 0, fmt("100 fields x 10^4 symbols, %d outside |bytes - ideal/8| <= 1%% + 8; worst margin %.2f bytes; "
                          "overall %.3f%% over the table ideal, %.3f%% over the unquantized Gaussian",
                          bad, worst_margin, 100 * (real_total / ideal_total - 1),
                          100 * (real_total / gaussian_total - 1))};
}

// ------------------------------------------------------------------ codec

Outcome codec_determinism() {
    ScratchDir dir("determinism");
    const auto backend = coder::reference_backend();
    std::mt19937_64 rng(0xd00d);
    int ybar_mismatch = 0, file_mismatch = 0, errors = 0, runs = 0;
    for (int m = 0; m < 20; ++m) {
        ModelConfig cfg = ModelConfig::preset("test");
        const TCMModel<float> model(cfg, 1000 + static_cast<std::uint64_t>(m));
        const Codec codec(model, *backend);
        for (int i = 0; i < 10; ++i) {
            ++runs;
            const Image img = synthetic_image(128, 128, rng());
            try {
                CodecTrace enc, dec;
                const auto bytes = codec.encode(to_tensor(img), &enc);
                const Tensor<float> first = codec.decode(bytes, &dec);
                bool same = enc.y_bar.size() == dec.y_bar.size();
                for (std::size_t s = 0; same && s < enc.y_bar.size(); ++s)
                    same = enc.y_bar[s].storage() == dec.y_bar[s].storage();
                ybar_mismatch += !same;
                write_image((dir / "a.png").string(), to_image(first));
                write_image((dir / "b.png").string(), to_image(codec.decode(bytes)));
                file_mismatch += read_file((dir / "a.png").string()) != read_file((dir / "b.png").string());
            } catch (const std::exception& e) {
                std::cerr << "model " << m << " image " << i << ": " << e.what() << "\n";
                ++errors;
            }
        }
    }
    return {ybar_mismatch == 0 && file_mismatch == 0 && errors == 0,
            fmt("%d encode/decode runs (20 models x 10 images, 128x128): %d y-bar mismatches, %d differing repeat "
                "decodes, %d errors",
                runs, ybar_mismatch, file_mismatch, errors)};
}

Outcome channel_accounting() {
    int checked = 0, wrong = 0;
    for (const int slices : {1, 2, 4, 5, 8, 10}) {
        ModelConfig cfg = ModelConfig::preset("medium");
        cfg.slices = slices;
        cfg.validate();
        nn::InitContext init(1);
        for (int i = 0; i < slices; ++i) {
            const SliceNetwork<float> net(init, cfg, i);
            wrong += net.support_channels() != cfg.M + i * (cfg.M / slices);
            ++checked;
        }
    }
    ModelConfig ten = ModelConfig::preset("medium");
    ten.slices = 10;
    nn::InitContext init(2);
    const int last = SliceNetwork<float>(init, ten, 9).support_channels();
    bool rejects = false;
    try {
        SliceNetwork<float>(init, ten, 10);
    } catch (const ConfigError&) {
        rejects = true;
    }
    // The same widths inside a full model.
    const TCMModel<float> model(ModelConfig::preset("toy"), 1);
    for (int i = 0; i < model.config().slices; ++i) {
        wrong += model.slice(i).support_channels() != model.config().support_channels(i);
        ++checked;
    }
    return {wrong == 0 && last == 608 && rejects,
            fmt("%d slice networks checked, %d wrong widths; s=10, M=320, i=9 -> %d (expected 608); out-of-range index "
                "%s",
                checked, wrong, last, rejects ? "rejected" : "accepted")};
}

// ------------------------------------------------------------------ gradients

Outcome gradient_check() {
    const auto start = Clock::now();
    TCMModel<double> model(ModelConfig::preset("micro"), 5);
    std::mt19937_64 data_rng(6);
    Tensor<double> image({1, 3, 64, 64});
    for (auto& v : image.storage()) v = std::uniform_real_distribution<double>(0, 1)(data_rng);
    const double lambda = 0.013;

    // Fixed noise draw for every evaluation, so the loss is a smooth function
    // of the parameters.
    auto loss = [&] {
        std::mt19937_64 noise(99);
        ForwardOptions<double> opts;
        opts.quant = QuantMode::kNoise;
        opts.bound = BoundGradient::kExact;
        opts.rng = &noise;
        const Var<double> x(image);
        const ForwardResult<double> r = model.forward(x, opts);
        return rd_loss(x, r.x_hat, r.bits_y, r.bits_z, lambda, 64.0 * 64.0).loss;
    };

    model.zero_grad();
    backward(loss());
    auto params = model.parameters();
    std::vector<std::pair<Var<double>*, std::size_t>> sample;
    std::size_t total = 0;
    for (auto& p : params) total += p.var->value().size();
    const std::size_t stride = total / 100;
    std::size_t flat = 0;
    for (auto& p : params)
        for (std::size_t k = 0; k < p.var->value().size(); ++k, ++flat)
            if (flat % stride == stride / 2 && sample.size() < 100) sample.emplace_back(p.var, k);

    const double h = 1e-6;
    double num2 = 0, diff2 = 0, worst = 0;
    for (auto [var, k] : sample) {
        const double analytic = var->grad().data()[k];
        double& w = var->mutable_value().data()[k];
        const double saved = w;
        double plus, minus;
        {
            NoGradGuard guard;
            w = saved + h;
            plus = loss().value().data()[0];
            w = saved - h;
            minus = loss().value().data()[0];
        }
        w = saved;
        const double numeric = (plus - minus) / (2 * h);
        num2 += numeric * numeric;
        diff2 += (analytic - numeric) * (analytic - numeric);
        worst = std::max(worst, std::abs(analytic - numeric) / std::max(std::abs(numeric), 1e-3));
    }
    const double rel = std::sqrt(diff2) / std::max(std::sqrt(num2), 1e-30);
    const double elapsed = seconds_since(start);
    return {sample.size() == 100 && rel <= 1e-3 && elapsed <= 60,
            fmt("%zu of %zu parameters, relative error %.3e (limit 1e-3), worst element %.3e; %.1f s (limit 60 s)",
                sample.size(), total, rel, worst, elapsed)};
}

// ------------------------------------------------------------------ training

double holdout_bpp(const TCMModel<float>& model, const std::vector<std::string>& files) {
    const auto backend = coder::reference_backend();
    const Codec codec(model, *backend);
    const auto results = eval_codec(codec, files);
    for (const auto& r : results)
        if (r.error) throw Error("holdout evaluation failed on " + r.image + ": " + *r.error);
    return summarize(results).bpp;
}

Outcome toy_training() {
    constexpr double kLimitHours = 4.0;
    const auto start = Clock::now();
    ScratchDir dir("train");
    std::vector<std::string> train_files, holdout_files;
    for (int i = 0; i < 20; ++i) {
        const std::string p = (dir / fmt("train_%02d.png", i)).string();
        write_image(p, synthetic_image(256, 256, 5000 + i));
        train_files.push_back(p);
    }
    for (int i = 0; i < 5; ++i) {
        const std::string p = (dir / fmt("holdout_%d.png", i)).string();
        write_image(p, synthetic_image(256, 256, 9000 + i));
        holdout_files.push_back(p);
    }

    TrainConfig tc = TrainConfig::toy();
    tc.lambda = 0.013;
    tc.steps = 2000;
    tc.log_every = 100;
    ModelConfig mc = ModelConfig::preset("toy");
    mc.lambda = tc.lambda;
    TCMModel<float> model(mc, tc.seed);
    const double untrained_bpp = holdout_bpp(model, holdout_files);

    const ImageFolder data(train_files, tc.crop);
    Trainer trainer(model, data, tc);
    std::vector<double> losses;
    TrainOptions opts;
    opts.out_dir = (dir / "run").string();
    opts.on_step = [&](const StepStats& s) {
        losses.push_back(s.loss);
        if (s.step % 100 == 0)
            std::cerr << "  step " << s.step << " loss " << s.loss << " bpp " << s.bpp << " mse " << s.mse << " ("
                      << static_cast<int>(seconds_since(start)) << " s)\n";
    };
    train_loop(trainer, opts);
    const double trained_bpp = holdout_bpp(model, holdout_files);

    const auto mean = [](auto first, auto last) { return std::accumulate(first, last, 0.0) / (last - first); };
    const double initial = mean(losses.begin(), losses.begin() + 10);
    const double smoothed = mean(losses.end() - 100, losses.end());
    const double hours = seconds_since(start) / 3600;
    return {smoothed < 0.8 * initial && trained_bpp < untrained_bpp && hours <= kLimitHours,
            fmt("loss: first-10 mean %.3f, last-100 mean %.3f (ratio %.3f, limit 0.8); holdout bpp %.4f trained vs "
                "%.4f untrained; %.2f h (limit %.0f h CPU)",
                initial, smoothed, smoothed / initial, trained_bpp, untrained_bpp, hours, kLimitHours)};
}

// ------------------------------------------------------------------ evaluation

RDCurve make_curve(const std::vector<double>& bpp, const std::vector<double>& psnr) {
    RDCurve c;
    for (std::size_t i = 0; i < bpp.size(); ++i) c.points.push_back({bpp[i], psnr[i], 0});
    return c;
}

Outcome bd_rate_oracle() {
    double worst = 0;
    int bad = 0;
    for (const auto& c : testing::kBdRateCases) {
        const double got = bd_rate(make_curve(c.test_bpp, c.test_psnr), make_curve(c.anchor_bpp, c.anchor_psnr));
        const double err = std::abs(got - c.expected_percent);
        worst = std::max(worst, err);
        bad += err > 0.05;
    }
    // A constant bpp ratio shifts log-rate uniformly, so the result is exact.
    double ratio_err = 0;
    std::mt19937_64 rng(4);
    for (double ratio : {0.5, 0.8, 0.9, 1.1, 1.37}) {
        RDCurve anchor;
        double q = std::uniform_real_distribution<double>(26, 30)(rng), b = 0.1;
        for (int i = 0; i < 6; ++i) {
            q += std::uniform_real_distribution<double>(0.8, 2.5)(rng);
            b *= std::uniform_real_distribution<double>(1.3, 1.9)(rng);
            anchor.points.push_back({b, q, 0});
        }
        RDCurve test = anchor;
        for (auto& p : test.points) p.bpp *= ratio;
        ratio_err = std::max(ratio_err, std::abs(bd_rate(test, anchor) - (ratio - 1) * 100));
    }
    return {bad == 0 && ratio_err <= 1e-9,
            fmt("%zu curve pairs, worst |delta| vs dense-grid oracle %.2e %% (limit 0.05 %%); constant-ratio error "
                "%.1e (limit 1e-9)",
                testing::kBdRateCases.size(), worst, ratio_err)};
}

template <typename T>
void zero_conv(nn::Conv2d<T>& conv) {
    conv.weight().mutable_value().fill(T(0));
    conv.bias().mutable_value().fill(T(0));
}

Outcome tcm_identity() {
    std::mt19937_64 rng(8);
    float worst = 0;
    int blocks = 0;
    const nn::TCMConfig configs[] = {{192, 8, 32}, {128, 8, 32}, {64, 8, 16}, {32, 4, 16}};
    for (const auto& cfg : configs) {
        nn::InitContext init(static_cast<std::uint64_t>(cfg.channels));
        nn::TCMBlock<float> block(init, cfg);
        zero_conv(block.stage(0).fuse_conv());
        zero_conv(block.stage(1).fuse_conv());
        for (const int side : {16, 32}) {
            Tensor<float> x({1, cfg.channels, side, side});
            for (auto& v : x.storage()) v = std::normal_distribution<float>(0, 3)(rng);
            worst = std::max(worst, max_abs_diff(block.forward(Var<float>(x)).value(), x));
            ++blocks;
        }
    }
    return {worst == 0.0f, fmt("%d block/input combinations, max |tcm(x) - x| = %g (required 0)", blocks, worst)};
}

Outcome metric_sanity() {
    std::mt19937_64 rng(1);
    Tensor<float> x({1, 3, 64, 64}), y({1, 3, 64, 64});
    for (std::size_t i = 0; i < x.size(); ++i) {
        const int k = static_cast<int>(rng() % 254) + 1;
        x.data()[i] = k / 255.0f;
        y.data()[i] = (k + ((i % 2) ? 1 : -1)) / 255.0f;
    }
    const double p = psnr(x, y);
    double self_err = 0, ref_err = 0;
    for (const auto& c : testing::kMsssimCases) {
        const auto [a, b] = testing::msssim_pair(c);
        self_err = std::max(self_err, std::abs(ms_ssim(a, a) - 1.0));
        ref_err = std::max(ref_err, std::abs(ms_ssim(a, b) - c.expected));
    }
    return {std::abs(p - 48.1308) <= 1e-3 && self_err == 0 && ref_err <= 1e-4,
            fmt("PSNR %.5f dB (48.1308 +- 1e-3); |MS-SSIM(x,x) - 1| = %g; max deviation from reference on %zu images "
                "%.2e (limit 1e-4)",
                p, self_err, testing::kMsssimCases.size(), ref_err)};
}

Outcome scaled_deviation_check() {
    std::mt19937_64 rng(3);
    Tensor<float> y({1, 40, 8, 8});
    for (auto& v : y.storage()) v = (rng() & 1) ? 2.0f : -2.0f;
    Tensor<float> y_hat = y;
    for (auto& v : y_hat.storage()) v += v > 0 ? 0.5f : -0.5f;
    const double closed = scaled_deviation(y, y_hat).scaled;
    Tensor<float> z({1, 40, 8, 8});
    for (auto& v : z.storage()) v = std::normal_distribution<float>(0, 4)(rng);
    const double self = scaled_deviation(z, z).scaled;
    return {closed == 0.25 && self == 0.0, fmt("closed-form case %.17g (required 0.25); eps_s(y, y) = %g", closed, self)};
}

const std::vector<std::pair<std::string, std::function<Outcome()>>>& checks() {
    static const std::vector<std::pair<std::string, std::function<Outcome()>>> all{
        {"coder_fuzz", coder_fuzz},
        {"rate_fidelity", rate_fidelity},
        {"codec_determinism", codec_determinism},
        {"channel_accounting", channel_accounting},
        {"gradient_check", gradient_check},
        {"toy_training", toy_training},
        {"bd_rate_oracle", bd_rate_oracle},
        {"tcm_identity", tcm_identity},
        {"metric_sanity", metric_sanity},
        {"scaled_deviation", scaled_deviation_check},
    };
    return all;
}

}  // namespace

int main(int argc, char** argv) {
    std::vector<std::string> wanted(argv + 1, argv + argc);
    if (wanted.size() == 1 && wanted[0] == "--list") {
        for (const auto& [name, fn] : checks()) std::cout << name << "\n";
        return 0;
    }
    for (const auto& w : wanted) {
        bool known = false;
        for (const auto& [name, fn] : checks()) known |= name == w;
        if (!known) {
            std::cerr << "unknown check '" << w << "' (use --list)\n";
            return 2;
        }
    }
    int failed = 0;
    for (const auto& [name, fn] : checks()) {
        if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), name) == wanted.end()) continue;
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
        failed += !o.pass;
    }
    return failed == 0 ? 0 : 1;
}
