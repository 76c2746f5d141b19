#include "tcm/config.hpp"

#include <json.hpp>
#include <sstream>

#include "tcm/errors.hpp"

namespace tcm {

using nlohmann::json;

namespace {

std::string init_name(nn::InitScheme s) { return s == nn::InitScheme::kHeNormal ? "he_normal" : "uniform_fan_in"; }

nn::InitScheme init_from_name(const std::string& s) {
    if (s == "he_normal") return nn::InitScheme::kHeNormal;
    if (s == "uniform_fan_in") return nn::InitScheme::kUniformFanIn;
    throw ConfigError("unknown init scheme '" + s + "'");
}

void require(bool ok, const std::string& message) {
    if (!ok) throw ConfigError(message);
}

template <typename V>
void read(const json& j, const char* key, V& out) {
    if (j.contains(key)) out = j.at(key).get<V>();
}

json parse(const std::string& text) {
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
}

}  // namespace

void ModelConfig::validate() const {
    const std::string n = std::to_string(C);
    require(C > 0 && C % 2 == 0, "C must be positive and even, got " + n);
    require(M > 0 && Z > 0, "M and Z must be positive");
    require(slices >= 1 && M % slices == 0,
            "M = " + std::to_string(M) + " is not divisible by s = " + std::to_string(slices));
    require(window_main > 0 && window_hyper > 0 && attention_window > 0, "window sizes must be positive");
    for (int h : head_dims_main)
        require(h > 0 && (C / 2) % h == 0, "head dim " + std::to_string(h) + " does not divide C/2 = " +
                                               std::to_string(C / 2));
    require(head_dim_hyper > 0 && (C / 2) % head_dim_hyper == 0,
            "hyper head dim " + std::to_string(head_dim_hyper) + " does not divide C/2");
    require(slice_hidden1 > 0 && slice_hidden2 > 0, "slice transform widths must be positive");
    require(squeeze_channels >= 0, "squeeze_channels must be nonnegative");
    if (attention) {
        require(attention_head_dim > 0, "attention head dim must be positive");
        for (int i = 0; i < slices; ++i) {
            const int width = squeeze_channels > 0 ? squeeze_channels : support_channels(i);
            require(width % 2 == 0 && width % attention_head_dim == 0,
                    "SWAtten width " + std::to_string(width) + " of slice " + std::to_string(i) +
                        " must be even and divisible by the attention head dim");
        }
    }
    require(lambda > 0, "lambda must be positive");
}

std::string ModelConfig::to_json() const {
    json j{{"name", name},
           {"C", C},
           {"M", M},
           {"Z", Z},
           {"slices", slices},
           {"window_main", window_main},
           {"window_hyper", window_hyper},
           {"head_dims_main", head_dims_main},
           {"head_dim_hyper", head_dim_hyper},
           {"squeeze_channels", squeeze_channels},
           {"attention", attention},
           {"residual_prediction", residual_prediction},
           {"attention_head_dim", attention_head_dim},
           {"attention_window", attention_window},
           {"slice_hidden1", slice_hidden1},
           {"slice_hidden2", slice_hidden2},
           {"init", init_name(init)},
           {"lambda", lambda}};
    return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
    const json j = parse(text);
    ModelConfig c;
    if (j.contains("preset")) c = preset(j.at("preset").get<std::string>());
    try {
        read(j, "name", c.name);
        read(j, "C", c.C);
        read(j, "M", c.M);
        read(j, "Z", c.Z);
        read(j, "slices", c.slices);
        read(j, "window_main", c.window_main);
        read(j, "window_hyper", c.window_hyper);
        read(j, "head_dims_main", c.head_dims_main);
        read(j, "head_dim_hyper", c.head_dim_hyper);
        read(j, "squeeze_channels", c.squeeze_channels);
        read(j, "attention", c.attention);
        read(j, "residual_prediction", c.residual_prediction);
        read(j, "attention_head_dim", c.attention_head_dim);
        read(j, "attention_window", c.attention_window);
        read(j, "slice_hidden1", c.slice_hidden1);
        read(j, "slice_hidden2", c.slice_hidden2);
        read(j, "lambda", c.lambda);
        if (j.contains("init")) c.init = init_from_name(j.at("init").get<std::string>());
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad model config field: ") + e.what());
    }
    c.validate();
    return c;
}

std::vector<std::string> ModelConfig::preset_names() { return {"small", "medium", "large", "toy", "test", "micro"}; }

ModelConfig ModelConfig::preset(const std::string& name) {
    ModelConfig c;
    c.name = name;
    if (name == "small") {
        c.C = 128;
    } else if (name == "medium") {
        c.C = 192;
    } else if (name == "large") {
        c.C = 256;
    } else if (name == "toy") {
        c.C = 64;
        c.M = 80;
        c.Z = 64;
        c.squeeze_channels = 64;
        c.slice_hidden1 = 96;
        c.slice_hidden2 = 64;
    } else if (name == "test") {
        c.C = 32;
        c.M = 40;
        c.Z = 32;
        c.head_dims_main = {8, 16, 16, 16, 16, 8};
        c.head_dim_hyper = 16;
        c.squeeze_channels = 32;
        c.slice_hidden1 = 48;
        c.slice_hidden2 = 32;
    } else if (name == "micro") {
        c.C = 8;
        c.M = 16;
        c.Z = 8;
        c.slices = 2;
        c.head_dims_main = {4, 4, 4, 4, 4, 4};
        c.head_dim_hyper = 4;
        c.squeeze_channels = 8;
        c.attention_head_dim = 4;
        c.attention_window = 4;
        c.slice_hidden1 = 16;
        c.slice_hidden2 = 8;
    } else {
        throw ConfigError("unknown model preset '" + name + "'");
    }
    c.validate();
    return c;
}

void TrainConfig::validate() const {
    require(lambda > 0, "lambda must be positive");
    require(batch > 0 && crop > 0 && steps > 0, "batch, crop and steps must be positive");
    require(lr > 0 && lr_final > 0, "learning rates must be positive");
    require(decay_at >= 0 && decay_at <= 1, "decay_at must lie in [0, 1]");
    require(clip_norm >= 0, "clip_norm must be nonnegative");
    require(log_every > 0 && checkpoint_every > 0, "log/checkpoint intervals must be positive");
}

std::string TrainConfig::to_json() const {
    json j{{"lambda", lambda},       {"batch", batch},         {"crop", crop},
           {"lr", lr},               {"lr_final", lr_final},   {"decay_at", decay_at},
           {"steps", steps},         {"seed", seed},           {"clip_norm", clip_norm},
           {"log_every", log_every}, {"checkpoint_every", checkpoint_every}, {"min_size", min_size}};
    return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& text) {
    const json j = parse(text);
    TrainConfig c;
    try {
        read(j, "lambda", c.lambda);
        read(j, "batch", c.batch);
        read(j, "crop", c.crop);
        read(j, "lr", c.lr);
        read(j, "lr_final", c.lr_final);
        read(j, "decay_at", c.decay_at);
        read(j, "steps", c.steps);
        read(j, "seed", c.seed);
        read(j, "clip_norm", c.clip_norm);
        read(j, "log_every", c.log_every);
        read(j, "checkpoint_every", c.checkpoint_every);
        read(j, "min_size", c.min_size);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad train config field: ") + e.what());
    }
    c.validate();
    return c;
}

TrainConfig TrainConfig::toy() {
    TrainConfig c;
    c.batch = 8;
    c.crop = 128;
    c.steps = 2000;
    c.checkpoint_every = 500;
    return c;
}

std::string config_schema() {
    std::ostringstream out;
    out << "# Model (ModelConfig); --preset selects a base, fields override it\n"
        << "preset              string  small|medium|large|toy|test|micro (default medium)\n"
        << "C                   int     TCM width, even; small 128, medium 192, large 256\n"
        << "M                   int     latent channels (320), divisible by slices\n"
        << "Z                   int     hyper-latent channels (192)\n"
        << "slices              int     channel slices s (5)\n"
        << "window_main         int     attention window in g_a/g_s (8)\n"
        << "window_hyper        int     attention window in h_a/h_s (4)\n"
        << "head_dims_main      6 ints  per-TCM head dims, each dividing C/2 (8,16,32,32,16,8)\n"
        << "head_dim_hyper      int     hyper TCM head dim (32)\n"
        << "squeeze_channels    int     SWAtten internal width, 0 disables the squeeze (128)\n"
        << "attention           bool    SWAtten in slice networks (true)\n"
        << "residual_prediction bool    latent residual prediction (true)\n"
        << "attention_head_dim  int     SWAtten head dim (16)\n"
        << "attention_window    int     SWAtten window (8)\n"
        << "slice_hidden1       int     first hidden width of slice transforms (224)\n"
        << "slice_hidden2       int     second hidden width of slice transforms (128)\n"
        << "init                string  uniform_fan_in|he_normal (uniform_fan_in)\n"
        << "lambda              float   rate-distortion weight (0.013)\n"
        << "\n# Training (TrainConfig)\n"
        << "batch               int     images per step (8)\n"
        << "crop                int     square random crop side (256)\n"
        << "lr                  float   Adam step size (1e-4)\n"
        << "lr_final            float   step size after decay_at (1e-5)\n"
        << "decay_at            float   fraction of steps before the drop (0.9)\n"
        << "steps               int     total optimizer steps (2000000)\n"
        << "seed                int     RNG seed for init, crops and noise (1)\n"
        << "clip_norm           float   global gradient norm clip, 0 disables (1.0)\n"
        << "log_every           int     CSV log interval in steps (10)\n"
        << "checkpoint_every    int     checkpoint interval in steps (1000)\n"
        << "min_size            int     minimum image side accepted from the dataset (crop)\n";
    return out.str();
}

}  // namespace tcm
