#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "tcm/checkpoint.hpp"
#include "tcm/config.hpp"
#include "tcm/image.hpp"
#include "tcm/model.hpp"

namespace tcm {

/// Rate, distortion and their weighted sum for one batch.
template <typename T>
struct RdTerms {
    Var<T> loss;  // bpp + lambda * mse
    Var<T> bpp;   // (bits_y + bits_z) / num_pixels
    Var<T> mse;   // on 0..255 values
};

/// num_pixels counts pixels over the whole batch (N * H * W).
template <typename T>
RdTerms<T> rd_loss(const Var<T>& x, const Var<T>& x_hat, const Var<T>& bits_y, const Var<T>& bits_z, double lambda,
                   double num_pixels);

/// Images from a folder (PNG or PPM, non-recursive, sorted by file name).
/// Images smaller than `min_size` on either side are skipped. Pixel data
/// is decoded on demand.
class ImageFolder {
public:
    ImageFolder(const std::string& dir, int min_size);
    /// Explicit list of files, same filter.
    ImageFolder(std::vector<std::string> files, int min_size);

    std::size_t size() const { return files_.size(); }
    const std::string& path(std::size_t i) const { return files_[i]; }
    Image load(std::size_t i) const;
    std::size_t skipped() const { return skipped_; }

private:
    void scan(std::vector<std::string> candidates, int min_size);
    std::vector<std::string> files_;
    std::size_t skipped_ = 0;
};

/// Image files directly inside `dir`, sorted. Throws IoError if it is not a directory.
std::vector<std::string> list_images(const std::string& dir);

/// `batch` random square crops of side `crop` from randomly chosen images.
Tensor<float> random_crops(const ImageFolder& data, int batch, int crop, std::mt19937_64& rng);

/// Adam with bias correction (beta1 0.9, beta2 0.999, eps 1e-8).
class Adam {
public:
    explicit Adam(const std::vector<nn::NamedParameter<float>>& params);
    /// Scales gradients to global norm `clip` when it is exceeded (0 disables),
    /// then updates every parameter. Returns the norm before clipping.
    double step(double lr, double clip);
    long steps() const { return t_; }

    void export_state(TrainState& state) const;
    void import_state(const TrainState& state);

private:
    std::vector<nn::NamedParameter<float>> params_;
    std::vector<Tensor<float>> m_, v_;
    long t_ = 0;
};

struct StepStats {
    long step = 0;  // 1-based index of the step just taken
    double loss = 0, bpp = 0, mse = 0;
    double grad_norm = 0;
    double lr = 0;
};

/// One optimizer stream over a model. Owns the RNG that drives crops and
/// quantization noise, so stepping a resumed trainer reproduces an
/// uninterrupted run.
class Trainer {
public:
    /// Fresh run; the RNG is seeded from config.seed.
    Trainer(TCMModel<float>& model, const ImageFolder& data, const TrainConfig& config);
    /// Continues the optimizer and RNG state from a checkpoint.
    Trainer(TCMModel<float>& model, const ImageFolder& data, const TrainState& resume);

    /// Throws NumericalError (leaving the model untouched) when the loss or
    /// gradient is not finite.
    StepStats step();
    long steps_taken() const { return adam_.steps(); }
    const TrainConfig& config() const { return config_; }

    TrainState state() const;
    void save(const std::string& path) const;

private:
    TCMModel<float>& model_;
    const ImageFolder& data_;
    TrainConfig config_;
    std::mt19937_64 rng_;
    Adam adam_;
};

struct TrainOptions {
    std::string out_dir;         // checkpoint and log directory; empty keeps everything in memory
    long max_steps = -1;         // stop early after this many steps in this call (-1: run to config.steps)
    std::function<void(const StepStats&)> on_step;
};

/// Runs to config.steps, appending `step,loss,bpp,mse` rows to
/// out_dir/train_log.csv every log_every steps and writing out_dir/last.ckpt
/// every checkpoint_every steps and at the end. On a numerical failure the
/// last written checkpoint is left in place and NumericalError propagates.
std::vector<StepStats> train_loop(Trainer& trainer, const TrainOptions& options);

}  // namespace tcm
