#include "tcm/checkpoint.hpp"

#include <json.hpp>

#include <cstring>
#include <sstream>

#include "tcm/bitstream.hpp"
#include "tcm/errors.hpp"

namespace tcm {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'T', 'C', 'M', 'C', 'K', 'P', 'T', '\0'};

// Parameters are only read here; the module API hands out mutable handles.
std::vector<nn::NamedParameter<float>> params_of(const TCMModel<float>& model) {
    return const_cast<TCMModel<float>&>(model).parameters();
}

struct Fnv {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    void feed(const void* data, std::size_t n) {
        const auto* p = static_cast<const std::uint8_t*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 0x100000001b3ULL;
        }
    }
};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
std::uint64_t get_le(const std::uint8_t* p, int n) {
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

void append_floats(std::vector<std::uint8_t>& blob, const Tensor<float>& t) {
    const std::size_t at = blob.size();
    blob.resize(at + t.size() * 4);
    std::memcpy(blob.data() + at, t.data(), t.size() * 4);  // little-endian hosts only
}

json shape_json(const Shape& s) { return json::array({s.n, s.c, s.h, s.w}); }

}  // namespace

std::uint64_t model_id(const TCMModel<float>& model) {
    Fnv f;
    const std::string cfg = model.config().to_json();
    f.feed(cfg.data(), cfg.size());
    for (const auto& p : params_of(model)) {
        f.feed(p.name.data(), p.name.size());
        const Tensor<float>& v = p.var->value();
        f.feed(v.data(), v.size() * sizeof(float));
    }
    return f.h;
}

void save_checkpoint(const std::string& path, const TCMModel<float>& model, const TrainState* state) {
    json header;
    header["model"] = json::parse(model.config().to_json());
    std::vector<std::uint8_t> blob;
    json index = json::array();
    const auto params = params_of(model);
    for (const auto& p : params) {
        index.push_back({{"name", p.name}, {"shape", shape_json(p.var->shape())}, {"offset", blob.size()}});
        append_floats(blob, p.var->value());
    }
    header["tensors"] = index;
    if (state) {
        if (state->adam_m.size() != params.size() || state->adam_v.size() != params.size())
            throw ConfigError("save_checkpoint: optimizer state does not match the parameters");
        json moments = json::array();
        for (std::size_t i = 0; i < params.size(); ++i) {
            moments.push_back({{"m", blob.size()}});
            append_floats(blob, state->adam_m[i]);
            moments.back()["v"] = blob.size();
            append_floats(blob, state->adam_v[i]);
        }
        header["train"] = {{"config", json::parse(state->config.to_json())},
                           {"step", state->step},
                           {"rng", state->rng_state},
                           {"moments", moments}};
    }
    const std::string text = header.dump();
    std::vector<std::uint8_t> out(kMagic, kMagic + 8);
    put_u32(out, kCheckpointVersion);
    put_u64(out, text.size());
    out.insert(out.end(), text.begin(), text.end());
    out.insert(out.end(), blob.begin(), blob.end());
    write_file(path, out);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    const std::vector<std::uint8_t> data = read_file(path);
    if (data.size() < 20 || std::memcmp(data.data(), kMagic, 8) != 0)
        throw FormatError("'" + path + "' is not a TCM checkpoint");
    const auto version = static_cast<std::uint32_t>(get_le(data.data() + 8, 4));
    if (version != kCheckpointVersion)
        throw FormatError("checkpoint version " + std::to_string(version) + " is not supported");
    const std::uint64_t header_len = get_le(data.data() + 12, 8);
    if (header_len > data.size() - 20) throw FormatError("checkpoint header is truncated");
    const std::uint8_t* blob = data.data() + 20 + header_len;
    const std::size_t blob_size = data.size() - 20 - header_len;

    LoadedCheckpoint out;
    try {
        const json header = json::parse(data.begin() + 20, data.begin() + 20 + static_cast<std::ptrdiff_t>(header_len));
        const ModelConfig cfg = ModelConfig::from_json(header.at("model").dump());
        out.model = std::make_unique<TCMModel<float>>(cfg, 0);
        auto params = out.model->parameters();
        const json& index = header.at("tensors");
        if (index.size() != params.size())
            throw FormatError("checkpoint holds " + std::to_string(index.size()) + " tensors, the model has " +
                              std::to_string(params.size()));
        auto read_tensor = [&](std::uint64_t offset, Tensor<float>& dst) {
            const std::size_t bytes = dst.size() * 4;
            if (offset > blob_size || bytes > blob_size - offset) throw FormatError("checkpoint tensor data truncated");
            std::memcpy(dst.data(), blob + offset, bytes);
        };
        for (std::size_t i = 0; i < params.size(); ++i) {
            const json& e = index[i];
            const auto& s = params[i].var->shape();
            if (e.at("name").get<std::string>() != params[i].name || e.at("shape") != shape_json(s))
                throw FormatError("checkpoint tensor '" + e.at("name").get<std::string>() +
                                  "' does not match parameter '" + params[i].name + "'");
            read_tensor(e.at("offset").get<std::uint64_t>(), params[i].var->mutable_value());
        }
        if (header.contains("train")) {
            const json& t = header.at("train");
            out.has_train_state = true;
            out.state.config = TrainConfig::from_json(t.at("config").dump());
            out.state.step = t.at("step").get<long>();
            out.state.rng_state = t.at("rng").get<std::string>();
            const json& moments = t.at("moments");
            if (moments.size() != params.size()) throw FormatError("checkpoint optimizer state is incomplete");
            for (std::size_t i = 0; i < params.size(); ++i) {
                out.state.adam_m.emplace_back(params[i].var->shape());
                out.state.adam_v.emplace_back(params[i].var->shape());
                read_tensor(moments[i].at("m").get<std::uint64_t>(), out.state.adam_m.back());
                read_tensor(moments[i].at("v").get<std::uint64_t>(), out.state.adam_v.back());
            }
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("checkpoint header is malformed: ") + e.what());
    } catch (const ConfigError& e) {
        throw FormatError(std::string("checkpoint config is invalid: ") + e.what());
    }
    return out;
}

}  // namespace tcm
