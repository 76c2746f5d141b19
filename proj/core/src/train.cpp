#include "tcm/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "tcm/errors.hpp"
#include "tcm/ops.hpp"

namespace tcm {

namespace fs = std::filesystem;

template <typename T>
RdTerms<T> rd_loss(const Var<T>& x, const Var<T>& x_hat, const Var<T>& bits_y, const Var<T>& bits_z, double lambda,
                   double num_pixels) {
    if (!(num_pixels > 0)) throw ConfigError("rd_loss: num_pixels must be positive");
    RdTerms<T> r;
    r.bpp = ops::scale(ops::add(bits_y, bits_z), static_cast<T>(1.0 / num_pixels));
    r.mse = ops::mse(x, x_hat, T(255));
    r.loss = ops::add(r.bpp, ops::scale(r.mse, static_cast<T>(lambda)));
    return r;
}

template RdTerms<float> rd_loss(const Var<float>&, const Var<float>&, const Var<float>&, const Var<float>&, double,
                                double);
template RdTerms<double> rd_loss(const Var<double>&, const Var<double>&, const Var<double>&, const Var<double>&,
                                 double, double);

// ---------------------------------------------------------------- data

std::vector<std::string> list_images(const std::string& dir) {
    std::error_code ec;
    if (!fs::is_directory(dir, ec)) throw IoError("'" + dir + "' is not a readable directory");
    std::vector<std::string> out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (ext == ".png" || ext == ".ppm") out.push_back(entry.path().string());
    }
    std::sort(out.begin(), out.end());
    return out;
}

ImageFolder::ImageFolder(const std::string& dir, int min_size) { scan(list_images(dir), min_size); }

ImageFolder::ImageFolder(std::vector<std::string> files, int min_size) { scan(std::move(files), min_size); }

void ImageFolder::scan(std::vector<std::string> candidates, int min_size) {
    for (auto& f : candidates) {
        const Image img = read_image(f);
        if (img.width < min_size || img.height < min_size) {
            ++skipped_;
            continue;
        }
        files_.push_back(std::move(f));
    }
}

Image ImageFolder::load(std::size_t i) const { return read_image(files_.at(i)); }

Tensor<float> random_crops(const ImageFolder& data, int batch, int crop, std::mt19937_64& rng) {
    if (data.size() == 0) throw ConfigError("training dataset is empty");
    Tensor<float> out(Shape{batch, 3, crop, crop});
    std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
    for (int b = 0; b < batch; ++b) {
        const std::size_t index = pick(rng);
        const Image img = data.load(index);
        if (img.width < crop || img.height < crop)
            throw ConfigError("'" + data.path(index) + "' is smaller than the crop size");
        const int x0 = std::uniform_int_distribution<int>(0, img.width - crop)(rng);
        const int y0 = std::uniform_int_distribution<int>(0, img.height - crop)(rng);
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < crop; ++y)
                for (int x = 0; x < crop; ++x)
                    out.at(b, c, y, x) =
                        img.rgb[(static_cast<std::size_t>(y0 + y) * img.width + x0 + x) * 3 + c] / 255.0f;
    }
    return out;
}

// ---------------------------------------------------------------- Adam

namespace {
constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
}

Adam::Adam(const std::vector<nn::NamedParameter<float>>& params) : params_(params) {
    for (const auto& p : params_) {
        m_.emplace_back(p.var->shape());
        v_.emplace_back(p.var->shape());
    }
}

double Adam::step(double lr, double clip) {
    double norm2 = 0;
    for (const auto& p : params_)
        for (float g : p.var->grad().values()) norm2 += static_cast<double>(g) * g;
    const double norm = std::sqrt(norm2);
    if (!std::isfinite(norm)) throw NumericalError("gradient norm is not finite");
    const double factor = clip > 0 && norm > clip ? clip / (norm + 1e-6) : 1.0;

    ++t_;
    const double c1 = 1 - std::pow(kBeta1, static_cast<double>(t_));
    const double c2 = 1 - std::pow(kBeta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        const Tensor<float>& grad = params_[k].var->grad();
        if (grad.empty()) continue;
        float* w = params_[k].var->mutable_value().data();
        float* m = m_[k].data();
        float* v = v_[k].data();
        for (std::size_t i = 0; i < grad.size(); ++i) {
            const double g = grad.data()[i] * factor;
            m[i] = static_cast<float>(kBeta1 * m[i] + (1 - kBeta1) * g);
            v[i] = static_cast<float>(kBeta2 * v[i] + (1 - kBeta2) * g * g);
            w[i] -= static_cast<float>(lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + kEps));
        }
    }
    return norm;
}

void Adam::export_state(TrainState& state) const {
    state.step = t_;
    state.adam_m = m_;
    state.adam_v = v_;
}

void Adam::import_state(const TrainState& state) {
    if (state.adam_m.size() != params_.size() || state.adam_v.size() != params_.size())
        throw FormatError("optimizer state does not match the model parameters");
    for (std::size_t k = 0; k < params_.size(); ++k)
        if (state.adam_m[k].shape() != params_[k].var->shape() || state.adam_v[k].shape() != params_[k].var->shape())
            throw FormatError("optimizer state shape mismatch for '" + params_[k].name + "'");
    m_ = state.adam_m;
    v_ = state.adam_v;
    t_ = state.step;
}

// ---------------------------------------------------------------- trainer

namespace {

void check_trainable(const TCMModel<float>& model, const ImageFolder& data, const TrainConfig& cfg) {
    cfg.validate();
    if (cfg.crop % 64 != 0) throw ConfigError("crop must be a multiple of 64, got " + std::to_string(cfg.crop));
    if (data.size() == 0) throw ConfigError("no training images of at least " + std::to_string(cfg.crop) + " pixels");
    model.config().validate();
}

}  // namespace

Trainer::Trainer(TCMModel<float>& model, const ImageFolder& data, const TrainConfig& config)
    : model_(model), data_(data), config_(config), rng_(config.seed), adam_(model.parameters()) {
    check_trainable(model, data, config);
}

Trainer::Trainer(TCMModel<float>& model, const ImageFolder& data, const TrainState& resume)
    : model_(model), data_(data), config_(resume.config), adam_(model.parameters()) {
    check_trainable(model, data, config_);
    std::istringstream in(resume.rng_state);
    in >> rng_;
    if (!in) throw FormatError("checkpoint RNG state is unreadable");
    adam_.import_state(resume);
}

StepStats Trainer::step() {
    const Tensor<float> batch = random_crops(data_, config_.batch, config_.crop, rng_);
    auto params = model_.parameters();
    for (auto& p : params) p.var->zero_grad();

    ForwardOptions<float> opts;
    opts.quant = QuantMode::kTrain;
    opts.bound = BoundGradient::kPassThrough;
    opts.rng = &rng_;
    const Var<float> x(batch);
    const ForwardResult<float> r = model_.forward(x, opts);
    const double num_pixels = static_cast<double>(config_.batch) * config_.crop * config_.crop;
    const RdTerms<float> terms = rd_loss(x, r.x_hat, r.bits_y, r.bits_z, config_.lambda, num_pixels);

    StepStats s;
    s.loss = terms.loss.value().data()[0];
    s.bpp = terms.bpp.value().data()[0];
    s.mse = terms.mse.value().data()[0];
    if (!std::isfinite(s.loss))
        throw NumericalError("loss is not finite at step " + std::to_string(adam_.steps() + 1));
    backward(terms.loss);
    s.lr = config_.lr_at(adam_.steps());
    s.grad_norm = adam_.step(s.lr, config_.clip_norm);
    s.step = adam_.steps();
    for (auto& p : params) p.var->zero_grad();
    return s;
}

TrainState Trainer::state() const {
    TrainState st;
    st.config = config_;
    std::ostringstream out;
    out << rng_;
    st.rng_state = out.str();
    adam_.export_state(st);
    return st;
}

void Trainer::save(const std::string& path) const {
    const TrainState st = state();
    save_checkpoint(path, model_, &st);
}

std::vector<StepStats> train_loop(Trainer& trainer, const TrainOptions& options) {
    const TrainConfig& cfg = trainer.config();
    std::ofstream log;
    std::string ckpt;
    if (!options.out_dir.empty()) {
        fs::create_directories(options.out_dir);
        ckpt = (fs::path(options.out_dir) / "last.ckpt").string();
        const std::string log_path = (fs::path(options.out_dir) / "train_log.csv").string();
        const bool append = trainer.steps_taken() > 0 && fs::exists(log_path);
        log.open(log_path, append ? std::ios::app : std::ios::trunc);
        if (!log) throw IoError("cannot open '" + log_path + "' for writing");
        if (!append) log << "step,loss,bpp,mse\n";
        log << std::setprecision(9);
    }
    std::vector<StepStats> history;
    long taken = 0;
    while (trainer.steps_taken() < cfg.steps && (options.max_steps < 0 || taken < options.max_steps)) {
        const StepStats s = trainer.step();
        ++taken;
        history.push_back(s);
        if (log.is_open() && (s.step == 1 || s.step % cfg.log_every == 0)) {
            log << s.step << ',' << s.loss << ',' << s.bpp << ',' << s.mse << '\n';
            log.flush();
        }
        if (!ckpt.empty() && s.step % cfg.checkpoint_every == 0) trainer.save(ckpt);
        if (options.on_step) options.on_step(s);
    }
    if (!ckpt.empty() && taken > 0) trainer.save(ckpt);
    return history;
}

}  // namespace tcm
