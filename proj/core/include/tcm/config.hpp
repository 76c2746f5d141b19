#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "tcm/nn.hpp"

namespace tcm {

/// Every architectural hyperparameter of the codec.
struct ModelConfig {
    std::string name = "medium";
    int C = 192;  // TCM width in the main transforms
    int M = 320;  // latent channels
    int Z = 192;  // hyper-latent channels
    int slices = 5;
    int window_main = 8;
    int window_hyper = 4;
    std::array<int, 6> head_dims_main{8, 16, 32, 32, 16, 8};
    int head_dim_hyper = 32;
    int squeeze_channels = 128;  // SWAtten internal width; 0 keeps the input width
    bool attention = true;       // SWAtten in the slice networks
    bool residual_prediction = true;
    int attention_head_dim = 16;
    int attention_window = 8;
    int slice_hidden1 = 224;  // hidden widths of the mean/scale/residual transforms
    int slice_hidden2 = 128;
    nn::InitScheme init = nn::InitScheme::kUniformFanIn;
    double lambda = 0.013;

    int slice_width() const { return M / slices; }
    /// Width of the conditioning input of slice network i: M + i * M/s.
    int support_channels(int i) const { return M + i * slice_width(); }
    int rbs_mid() const { return C / 2; }

    /// Throws ConfigError with the first violated constraint.
    void validate() const;

    std::string to_json() const;
    static ModelConfig from_json(const std::string& text);
    /// small | medium | large | toy | test | micro
    static ModelConfig preset(const std::string& name);
    static std::vector<std::string> preset_names();
};

struct TrainConfig {
    double lambda = 0.013;
    int batch = 8;
    int crop = 256;
    double lr = 1e-4;
    double lr_final = 1e-5;
    double decay_at = 0.9;  // fraction of total steps after which lr_final applies
    long steps = 2000000;
    std::uint64_t seed = 1;
    double clip_norm = 1.0;
    int log_every = 10;
    int checkpoint_every = 1000;
    int min_size = 0;  // drop dataset images smaller than this on either side; 0 = crop

    void validate() const;
    double lr_at(long step) const { return step >= static_cast<long>(decay_at * steps) ? lr_final : lr; }

    std::string to_json() const;
    static TrainConfig from_json(const std::string& text);
    static TrainConfig toy();
};

/// Rate-distortion tradeoff grids for the MSE and MS-SSIM objectives.
inline constexpr std::array<double, 6> kLambdaGridMse{0.0025, 0.0035, 0.0067, 0.0130, 0.0250, 0.0500};
inline constexpr std::array<double, 6> kLambdaGridMsssim{3, 5, 8, 16, 36, 64};

/// Canonical, human-readable description of every config field.
std::string config_schema();

}  // namespace tcm
