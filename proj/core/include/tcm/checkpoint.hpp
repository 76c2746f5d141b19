#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "tcm/config.hpp"
#include "tcm/model.hpp"

namespace tcm {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Optimizer progress stored next to the weights so training can resume
/// exactly where it stopped.
struct TrainState {
    TrainConfig config;
    long step = 0;            // optimizer steps already taken
    std::string rng_state;    // textual std::mt19937_64 state
    std::vector<Tensor<float>> adam_m;  // first and second moments, in parameter order
    std::vector<Tensor<float>> adam_v;
};

/// 64-bit FNV-1a over the canonical config JSON, every parameter name and
/// the raw little-endian bytes of every parameter value.
std::uint64_t model_id(const TCMModel<float>& model);

/// Layout: "TCMCKPT\0", u32 version, u64 header length, JSON header
/// (config, tensor index, optional train state), then raw float32 arrays.
/// Written to a temporary file and renamed into place.
void save_checkpoint(const std::string& path, const TCMModel<float>& model, const TrainState* state = nullptr);

struct LoadedCheckpoint {
    std::unique_ptr<TCMModel<float>> model;
    bool has_train_state = false;
    TrainState state;
};

/// Throws FormatError on a malformed file, IoError when unreadable.
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace tcm
