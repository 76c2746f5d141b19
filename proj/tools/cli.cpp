#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>

#include "tcm/bitstream.hpp"
#include "tcm/checkpoint.hpp"
#include "tcm/codec.hpp"
#include "tcm/entropy.hpp"
#include "tcm/errors.hpp"
#include "tcm/eval.hpp"
#include "tcm/image.hpp"
#include "tcm/train.hpp"

namespace tcm::cli {

namespace {

namespace fs = std::filesystem;

/// Input that could not be read at all (as opposed to a readable but
/// malformed container).
class UnreadableInput : public Error {
public:
    using Error::Error;
};

Image read_input_image(const std::string& path) {
    try {
        return read_image(path);
    } catch (const Error& e) {
        throw UnreadableInput(e.what());
    }
}

std::vector<std::uint8_t> read_input_bytes(const std::string& path) {
    try {
        return read_file(path);
    } catch (const IoError& e) {
        throw UnreadableInput(e.what());
    }
}

LoadedCheckpoint read_model(const std::string& path) {
    if (!fs::exists(path)) throw UnreadableInput("checkpoint '" + path + "' does not exist");
    return load_checkpoint(path);
}

struct CoderChoice {
    std::string kind = "reference";
    std::string kernel_lib;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--coder", kind, "Entropy coder backend")->check(CLI::IsMember({"reference", "kernel"}));
        cmd->add_option("--kernel-lib", kernel_lib,
                        "Shared library for --coder kernel (default: libtcm_coder_kernel.so on the loader path)");
    }
    std::unique_ptr<coder::CoderBackend> make() const { return coder::make_backend(kind, kernel_lib); }
};

// CLI11 only reads config files for the top-level app, so subcommands load
// theirs here. Keys may sit at the top level or under a [<subcommand>]
// section; anything given on the command line wins.
void apply_config(CLI::App* cmd, const std::string& path) {
    if (path.empty()) return;
    if (!fs::exists(path)) throw UnreadableInput("config file '" + path + "' does not exist");
    std::vector<CLI::ConfigItem> items;
    try {
        items = CLI::ConfigTOML().from_file(path);
    } catch (const CLI::Error& e) {
        throw ConfigError("config file '" + path + "': " + e.what());
    }
    for (const auto& item : items) {
        if (item.name == "++" || item.name == "--") continue;
        if (!item.parents.empty() && !(item.parents.size() == 1 && item.parents[0] == cmd->get_name())) continue;
        CLI::Option* opt = cmd->get_option_no_throw("--" + item.name);
        if (opt == nullptr || item.name == "config")
            throw ConfigError("config file '" + path + "': unknown key '" + item.name + "'");
        if (opt->count() > 0) continue;
        opt->add_result(item.inputs);
        opt->run_callback();
    }
}

void require(const std::string& value, const char* flag) {
    if (value.empty()) throw ConfigError(std::string(flag) + " is required");
}

std::string hex_id(std::uint64_t id) {
    std::ostringstream s;
    s << std::hex << std::setw(16) << std::setfill('0') << id;
    return s.str();
}

// Keeps tiny negative values from printing as "-0.00".
std::string percent(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f%%", std::abs(v) < 0.005 ? 0.0 : v);
    return buf;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
    std::string config_file;
    std::string data, out, resume;
    std::string preset = "toy";
    std::optional<int> C, M, Z, slices, window_main, window_hyper, squeeze_channels;
    std::optional<int> head_dim_hyper, attention_head_dim, attention_window, slice_hidden1, slice_hidden2;
    std::vector<int> head_dims_main;
    std::optional<bool> attention, residual_prediction;
    std::optional<std::string> init;
    std::optional<double> lambda, lr, lr_final, decay_at, clip_norm;
    std::optional<int> batch, crop, log_every, checkpoint_every, min_size;
    std::optional<long> steps;
    std::optional<std::uint64_t> seed;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--config", config_file, "TOML config file; command-line flags take precedence");
        cmd->add_option("--data", data, "Folder of training images (PNG/PPM), required");
        cmd->add_option("--out", out, "Output folder for last.ckpt and train_log.csv, required");
        cmd->add_option("--resume", resume, "Continue from a checkpoint with optimizer state");
        cmd->add_option("--preset", preset, "Model preset")->check(CLI::IsMember(ModelConfig::preset_names()));
        cmd->add_option("--C", C);
        cmd->add_option("--M", M);
        cmd->add_option("--Z", Z);
        cmd->add_option("--slices", slices);
        cmd->add_option("--window_main", window_main);
        cmd->add_option("--window_hyper", window_hyper);
        cmd->add_option("--squeeze_channels", squeeze_channels);
        cmd->add_option("--head_dims_main", head_dims_main)->expected(6);
        cmd->add_option("--head_dim_hyper", head_dim_hyper);
        cmd->add_option("--attention_head_dim", attention_head_dim);
        cmd->add_option("--attention_window", attention_window);
        cmd->add_option("--slice_hidden1", slice_hidden1);
        cmd->add_option("--slice_hidden2", slice_hidden2);
        cmd->add_option("--attention", attention);
        cmd->add_option("--residual_prediction", residual_prediction);
        cmd->add_option("--init", init)->check(CLI::IsMember({"uniform_fan_in", "he_normal"}));
        cmd->add_option("--lambda", lambda);
        cmd->add_option("--batch", batch);
        cmd->add_option("--crop", crop);
        cmd->add_option("--lr", lr);
        cmd->add_option("--lr_final", lr_final);
        cmd->add_option("--decay_at", decay_at);
        cmd->add_option("--steps", steps);
        cmd->add_option("--clip_norm", clip_norm);
        cmd->add_option("--log_every", log_every);
        cmd->add_option("--checkpoint_every", checkpoint_every);
        cmd->add_option("--min_size", min_size);
        cmd->add_option("--seed", seed, "Seed for initialization, crops and noise");
    }

    ModelConfig model_config() const {
        ModelConfig m = ModelConfig::preset(preset);
        if (C) m.C = *C;
        if (M) m.M = *M;
        if (Z) m.Z = *Z;
        if (slices) m.slices = *slices;
        if (window_main) m.window_main = *window_main;
        if (window_hyper) m.window_hyper = *window_hyper;
        if (squeeze_channels) m.squeeze_channels = *squeeze_channels;
        if (!head_dims_main.empty()) std::copy(head_dims_main.begin(), head_dims_main.end(), m.head_dims_main.begin());
        if (head_dim_hyper) m.head_dim_hyper = *head_dim_hyper;
        if (attention_head_dim) m.attention_head_dim = *attention_head_dim;
        if (attention_window) m.attention_window = *attention_window;
        if (slice_hidden1) m.slice_hidden1 = *slice_hidden1;
        if (slice_hidden2) m.slice_hidden2 = *slice_hidden2;
        if (attention) m.attention = *attention;
        if (residual_prediction) m.residual_prediction = *residual_prediction;
        if (init) m.init = *init == "he_normal" ? nn::InitScheme::kHeNormal : nn::InitScheme::kUniformFanIn;
        if (lambda) m.lambda = *lambda;
        m.validate();
        return m;
    }

    TrainConfig train_config() const {
        const bool desk = preset == "toy" || preset == "test" || preset == "micro";
        TrainConfig t = desk ? TrainConfig::toy() : TrainConfig();
        if (lambda) t.lambda = *lambda;
        if (batch) t.batch = *batch;
        if (crop) t.crop = *crop;
        if (lr) t.lr = *lr;
        if (lr_final) t.lr_final = *lr_final;
        if (decay_at) t.decay_at = *decay_at;
        if (steps) t.steps = *steps;
        if (clip_norm) t.clip_norm = *clip_norm;
        if (log_every) t.log_every = *log_every;
        if (checkpoint_every) t.checkpoint_every = *checkpoint_every;
        if (min_size) t.min_size = *min_size;
        if (seed) t.seed = *seed;
        t.validate();
        return t;
    }
};

int run_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
    std::unique_ptr<TCMModel<float>> owned;
    TCMModel<float>* model = nullptr;
    TrainState resume_state;
    TrainConfig tc;
    if (!a.resume.empty()) {
        LoadedCheckpoint ck = read_model(a.resume);
        if (!ck.has_train_state) throw FormatError("'" + a.resume + "' carries no optimizer state to resume from");
        resume_state = std::move(ck.state);
        if (a.steps) resume_state.config.steps = *a.steps;
        tc = resume_state.config;
        owned = std::move(ck.model);
    } else {
        tc = a.train_config();
        owned = std::make_unique<TCMModel<float>>(a.model_config(), tc.seed);
    }
    model = owned.get();

    ImageFolder data = [&] {
        try {
            return ImageFolder(a.data, tc.min_size > 0 ? tc.min_size : tc.crop);
        } catch (const IoError& e) {
            throw UnreadableInput(e.what());
        }
    }();
    err << "dataset: " << data.size() << " images";
    if (data.skipped() > 0) err << " (" << data.skipped() << " smaller than the minimum size skipped)";
    err << "\n";

    std::unique_ptr<Trainer> trainer = a.resume.empty() ? std::make_unique<Trainer>(*model, data, tc)
                                                        : std::make_unique<Trainer>(*model, data, resume_state);
    TrainOptions opts;
    opts.out_dir = a.out;
    opts.on_step = [&](const StepStats& s) {
        if (s.step == 1 || s.step % tc.log_every == 0)
            err << "step " << s.step << "/" << tc.steps << "  loss " << s.loss << "  bpp " << s.bpp << "  mse "
                << s.mse << "  |g| " << s.grad_norm << "\n";
    };
    try {
        train_loop(*trainer, opts);
    } catch (const NumericalError& e) {
        const fs::path ckpt = fs::path(a.out) / "last.ckpt";
        err << "training aborted: " << e.what() << "\n";
        if (fs::exists(ckpt)) err << "last good checkpoint kept at " << ckpt.string() << "\n";
        return kNumerical;
    }
    out << "trained " << trainer->steps_taken() << " steps; checkpoint " << (fs::path(a.out) / "last.ckpt").string()
        << "\n";
    return kOk;
}

// ---------------------------------------------------------------- encode / decode

int run_encode(const std::string& model_path, const std::string& input, const std::string& output,
               const CoderChoice& coder, std::ostream& out) {
    const LoadedCheckpoint ck = read_model(model_path);
    const auto backend = coder.make();
    const Image img = read_input_image(input);
    const Codec codec(*ck.model, *backend);
    const std::vector<std::uint8_t> bytes = codec.encode(to_tensor(img));
    write_file(output, bytes);
    out << output << ": " << bytes.size() << " bytes, " << std::setprecision(5)
        << 8.0 * static_cast<double>(bytes.size()) / (static_cast<double>(img.width) * img.height) << " bpp\n";
    return kOk;
}

int run_decode(const std::string& model_path, const std::string& input, const std::string& output,
               const CoderChoice& coder, std::ostream& out) {
    const LoadedCheckpoint ck = read_model(model_path);
    const auto backend = coder.make();
    const std::vector<std::uint8_t> bytes = read_input_bytes(input);
    const Codec codec(*ck.model, *backend);
    const Image img = to_image(codec.decode(bytes));
    write_image(output, img);
    out << output << ": " << img.width << "x" << img.height << "\n";
    return kOk;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
    std::vector<std::string> models;
    std::string dataset, out, curve, plot;
    std::vector<std::string> compare;
    CoderChoice coder;
};

int run_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
    std::vector<std::string> files;
    try {
        files = list_images(a.dataset);
    } catch (const IoError& e) {
        throw UnreadableInput(e.what());
    }
    if (files.empty()) throw UnreadableInput("no PNG/PPM images in '" + a.dataset + "'");
    const auto backend = a.coder.make();

    struct Row {
        std::string checkpoint;
        double lambda;
        RDPoint point;
        double enc_ms, dec_ms;
    };
    std::vector<Row> rows;
    std::vector<ImageResult> all;
    int failures = 0;
    for (const auto& model_path : a.models) {
        const LoadedCheckpoint ck = read_model(model_path);
        const Codec codec(*ck.model, *backend);
        std::vector<ImageResult> results = eval_codec(codec, files);
        const std::string stem = fs::path(model_path).stem().string();
        double enc = 0, dec = 0;
        int ok = 0;
        for (auto& r : results) {
            if (r.error) {
                err << model_path << ": " << r.image << ": " << *r.error << "\n";
                ++failures;
                continue;
            }
            enc += r.enc_ms;
            dec += r.dec_ms;
            ++ok;
            if (a.models.size() > 1) r.image = stem + "/" + r.image;
        }
        if (ok == 0) {
            err << model_path << ": no image could be evaluated\n";
            continue;
        }
        const double lambda = ck.has_train_state ? ck.state.config.lambda : ck.model->config().lambda;
        rows.push_back({model_path, lambda, summarize(results), enc / ok, dec / ok});
        all.insert(all.end(), results.begin(), results.end());
        const RDPoint& p = rows.back().point;
        out << stem << ": bpp " << p.bpp << "  psnr " << p.psnr << "  ms-ssim " << p.msssim << " over " << ok
            << " images\n";
    }
    if (rows.empty()) return kFormat;

    {
        std::ofstream f(a.out);
        if (!f) throw UnreadableInput("cannot write '" + a.out + "'");
        write_results_csv(f, all);
    }
    std::sort(rows.begin(), rows.end(), [](const Row& x, const Row& y) { return x.point.bpp < y.point.bpp; });
    std::string curve_path = a.curve;
    if (curve_path.empty()) {
        fs::path p(a.out);
        curve_path = (p.parent_path() / (p.stem().string() + "_curve.csv")).string();
    }
    {
        std::ofstream f(curve_path);
        if (!f) throw UnreadableInput("cannot write '" + curve_path + "'");
        f << "checkpoint,lambda,bpp,psnr,msssim,msssim_db,enc_ms,dec_ms\n" << std::setprecision(10);
        for (const auto& r : rows)
            f << r.checkpoint << ',' << r.lambda << ',' << r.point.bpp << ',' << r.point.psnr << ',' << r.point.msssim
              << ',' << msssim_db(r.point.msssim) << ',' << r.enc_ms << ',' << r.dec_ms << '\n';
    }
    out << "per-image results: " << a.out << "\ncurve (" << rows.size() << " points): " << curve_path << "\n";
    if (!a.plot.empty()) {
        std::vector<RDCurve> curves;
        RDCurve ours;
        ours.label = "TCM";
        for (const auto& r : rows) ours.points.push_back(r.point);
        curves.push_back(ours);
        for (const auto& c : a.compare) curves.push_back(RDCurve::from_csv(c));
        std::ofstream f(a.plot);
        if (!f) throw UnreadableInput("cannot write '" + a.plot + "'");
        f << plot_rd_svg(curves, fs::path(a.dataset).filename().string());
        out << "plot: " << a.plot << "\n";
    }
    if (failures > 0) err << failures << " image evaluations failed\n";
    return kOk;
}

// ---------------------------------------------------------------- erf

struct ErfArgs {
    std::string model, image, output;
    std::string point;
    bool paper_point = false;
    std::vector<float> thresholds;
};

std::pair<int, int> parse_point(const std::string& s) {
    const auto comma = s.find(',');
    try {
        if (comma == std::string::npos) throw std::invalid_argument(s);
        std::size_t u1 = 0, u2 = 0;
        const int y = std::stoi(s.substr(0, comma), &u1);
        const int x = std::stoi(s.substr(comma + 1), &u2);
        if (u1 != comma || u2 != s.size() - comma - 1) throw std::invalid_argument(s);
        return {y, x};
    } catch (const std::exception&) {
        throw ConfigError("--point expects 'y,x', got '" + s + "'");
    }
}

int run_erf(const ErfArgs& a, std::ostream& out) {
    const LoadedCheckpoint ck = read_model(a.model);
    const Image img = read_input_image(a.image);
    auto [py, px] = a.paper_point ? std::pair{70, 700}
                    : a.point.empty() ? std::pair{img.height / 2, img.width / 2}
                                      : parse_point(a.point);
    if (py < 0 || py >= img.height || px < 0 || px >= img.width)
        throw ConfigError("point (" + std::to_string(py) + "," + std::to_string(px) + ") lies outside the " +
                          std::to_string(img.width) + "x" + std::to_string(img.height) + " image");
    const std::vector<float> thresholds =
        a.thresholds.empty() ? std::vector<float>{kErfThresholdCoarse, kErfThresholdFine} : a.thresholds;
    const Tensor<float> map = crop_image(erf_map(*ck.model, pad_image(to_tensor(img)), py, px), img.height, img.width);

    // One grey row per threshold, stacked top to bottom.
    Image fig;
    fig.width = img.width;
    fig.height = img.height * static_cast<int>(thresholds.size());
    fig.rgb.resize(static_cast<std::size_t>(fig.width) * fig.height * 3);
    for (std::size_t r = 0; r < thresholds.size(); ++r) {
        const float t = thresholds[r];
        if (!(t > 0)) throw ConfigError("thresholds must be positive");
        const Tensor<float> clipped = clip_map(map, t);
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) {
                const auto v = static_cast<std::uint8_t>(std::lround(255.0f * clipped.at(0, 0, y, x) / t));
                const std::size_t o = ((r * img.height + y) * static_cast<std::size_t>(img.width) + x) * 3;
                fig.rgb[o] = fig.rgb[o + 1] = fig.rgb[o + 2] = v;
            }
    }
    write_image(a.output, fig);
    float peak = 0;
    for (float v : map.storage()) peak = std::max(peak, v);
    out << a.output << ": ERF at (" << py << "," << px << "), peak |grad| " << peak << ", " << thresholds.size()
        << " threshold rows\n";
    return kOk;
}

// ---------------------------------------------------------------- inspect

struct InspectArgs {
    bool schema = false;
    std::string model, bitstream, image, deviation;
};

int run_inspect(const InspectArgs& a, std::ostream& out) {
    if (a.schema) {
        out << config_schema();
        return kOk;
    }
    if (!a.bitstream.empty()) {
        const auto bytes = read_input_bytes(a.bitstream);
        const Bitstream b = deserialize(bytes);
        const BitstreamHeader& h = b.header;
        out << "model id     " << hex_id(h.model_id) << "\nimage        " << h.width << "x" << h.height
            << "\npadded       " << h.padded_width << "x" << h.padded_height << "\nslices       " << h.num_slices
            << "\nhyper bytes  " << b.z_stream.size() << "\n";
        for (std::size_t i = 0; i < b.slice_streams.size(); ++i)
            out << "slice " << i << " bytes " << b.slice_streams[i].size() << "\n";
        out << "total bytes  " << bytes.size() << "\n";
    }
    if (!a.model.empty()) {
        const LoadedCheckpoint ck = read_model(a.model);
        const std::size_t count = ck.model->parameter_count();
        out << "model id     " << hex_id(model_id(*ck.model)) << "\nparameters   " << count << "\nconfig       "
            << ck.model->config().to_json() << "\n";
        if (ck.has_train_state)
            out << "train step   " << ck.state.step << "\ntrain config " << ck.state.config.to_json() << "\n";
        if (!a.image.empty()) {
            const auto backend = coder::reference_backend();
            const Codec codec(*ck.model, *backend);
            CodecTrace trace;
            codec.encode(to_tensor(read_input_image(a.image)), &trace);
            std::vector<Var<float>> parts;
            for (const auto& t : trace.y_bar) parts.emplace_back(t);
            const DeviationReport d = scaled_deviation(trace.y, ops::concat_channels(parts).value());
            out << "epsilon      " << d.epsilon << "\ngamma        " << d.gamma << "\nepsilon_s    " << d.scaled
                << "\n";
            if (!a.deviation.empty()) {
                float peak = 0;
                for (float v : d.map.storage()) peak = std::max(peak, v);
                Image m;
                m.width = d.map.shape().w;
                m.height = d.map.shape().h;
                for (float v : d.map.storage()) {
                    const auto g = static_cast<std::uint8_t>(std::lround(peak > 0 ? 255.0f * v / peak : 0.0f));
                    m.rgb.insert(m.rgb.end(), {g, g, g});
                }
                write_image(a.deviation, m);
                out << "deviation map " << a.deviation << " (white = " << peak << ")\n";
            }
        }
    }
    if (!a.schema && a.model.empty() && a.bitstream.empty()) throw ConfigError("inspect: give --schema, --model or --bitstream");
    return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Learned image codec with Transformer-CNN mixture blocks"};
    app.name("tcm");
    app.require_subcommand(1);

    TrainArgs train_args;
    CLI::App* train = app.add_subcommand("train", "Train a model on a folder of images");
    train_args.add_to(train);

    std::string model, input, output;
    std::uint64_t seed = 1;
    CoderChoice enc_coder, dec_coder;
    CLI::App* encode = app.add_subcommand("encode", "Compress an image to a bitstream");
    encode->add_option("--model", model, "Checkpoint")->required();
    encode->add_option("--input", input, "PNG or PPM image")->required();
    encode->add_option("--output", output, "Bitstream file")->required();
    encode->add_option("--seed", seed, "Unused by coding, accepted for uniformity");
    enc_coder.add_to(encode);

    CLI::App* decode = app.add_subcommand("decode", "Reconstruct an image from a bitstream");
    decode->add_option("--model", model, "Checkpoint")->required();
    decode->add_option("--input", input, "Bitstream file")->required();
    decode->add_option("--output", output, "Image file (.png or .ppm)")->required();
    decode->add_option("--seed", seed, "Unused by coding, accepted for uniformity");
    dec_coder.add_to(decode);

    EvalArgs eval_args;
    CLI::App* eval = app.add_subcommand("eval", "Rate-distortion evaluation of one or more checkpoints");
    std::string eval_config;
    eval->add_option("--config", eval_config, "TOML config file; command-line flags take precedence");
    eval->add_option("--model", eval_args.models, "Checkpoint, repeat once per lambda (required)");
    eval->add_option("--dataset", eval_args.dataset, "Folder of PNG/PPM images (required)");
    eval->add_option("--out", eval_args.out, "Per-image CSV (required)");
    eval->add_option("--curve", eval_args.curve, "RD curve CSV (default: <out>_curve.csv)");
    eval->add_option("--plot", eval_args.plot, "SVG with PSNR and MS-SSIM curves");
    eval->add_option("--compare", eval_args.compare, "Extra curve CSVs to draw in the plot");
    eval->add_option("--seed", seed, "Unused by evaluation, accepted for uniformity");
    eval_args.coder.add_to(eval);

    std::string test_csv, anchor_csv;
    CLI::App* bdrate = app.add_subcommand("bdrate", "BD-rate of a test curve against an anchor curve");
    bdrate->add_option("--test", test_csv, "Curve CSV with bpp and psnr columns")->required();
    bdrate->add_option("--anchor", anchor_csv, "Curve CSV with bpp and psnr columns")->required();
    bdrate->add_option("--seed", seed, "Unused, accepted for uniformity");

    ErfArgs erf_args;
    CLI::App* erf = app.add_subcommand("erf", "Effective receptive field map of one output pixel");
    erf->add_option("--model", erf_args.model, "Checkpoint")->required();
    erf->add_option("--image", erf_args.image, "PNG or PPM image")->required();
    erf->add_option("--output", erf_args.output, "Figure path (PNG or PPM)")->required();
    auto* point_opt = erf->add_option("--point", erf_args.point, "Output pixel 'y,x' (default: image centre)");
    erf->add_flag("--paper-point", erf_args.paper_point, "Use the analysis point (70,700)")->excludes(point_opt);
    erf->add_option("--threshold", erf_args.thresholds, "Clip threshold, one figure row each (default 0.01 0.0001)");
    erf->add_option("--seed", seed, "Unused, accepted for uniformity");

    InspectArgs inspect_args;
    CLI::App* inspect = app.add_subcommand("inspect", "Show config schema, checkpoint or bitstream details");
    inspect->add_flag("--schema", inspect_args.schema, "Print the config schema");
    inspect->add_option("--model", inspect_args.model, "Checkpoint to describe");
    inspect->add_option("--bitstream", inspect_args.bitstream, "Bitstream to describe");
    inspect->add_option("--image", inspect_args.image, "With --model: report the latent deviation for this image");
    inspect->add_option("--deviation", inspect_args.deviation, "With --image: write the deviation map here");
    inspect->add_option("--seed", seed, "Unused, accepted for uniformity");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*train) {
            apply_config(train, train_args.config_file);
            require(train_args.data, "--data");
            require(train_args.out, "--out");
            return run_train(train_args, out, err);
        }
        if (*encode) return run_encode(model, input, output, enc_coder, out);
        if (*decode) return run_decode(model, input, output, dec_coder, out);
        if (*eval) {
            apply_config(eval, eval_config);
            if (eval_args.models.empty()) throw ConfigError("--model is required");
            require(eval_args.dataset, "--dataset");
            require(eval_args.out, "--out");
            return run_eval(eval_args, out, err);
        }
        if (*bdrate) {
            const double v = bd_rate(RDCurve::from_csv(test_csv), RDCurve::from_csv(anchor_csv));
            out << "BD-rate: " << percent(v) << "\n";
            return kOk;
        }
        if (*erf) return run_erf(erf_args, out);
        if (*inspect) return run_inspect(inspect_args, out);
    } catch (const UnreadableInput& e) {
        err << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const IoError& e) {
        err << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const FormatError& e) {
        err << "error: " << e.what() << "\n";
        return kFormat;
    } catch (const DecodeError& e) {
        err << "error: " << e.what() << "\n";
        return kCorrupt;
    } catch (const NumericalError& e) {
        err << "error: " << e.what() << "\n";
        return kNumerical;
    } catch (const CLI::Error& e) {
        err << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << "\n";
        return kInternal;
    }
    return kUsage;
}

}  // namespace tcm::cli
