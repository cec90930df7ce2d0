#include <bit>
#include <cstring>
#include <fstream>

#include "knotforge/error.hpp"
#include "knotforge/io.hpp"

namespace knotforge::io {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path with_ext(const fs::path& stem, const char* ext) {
    fs::path p = stem;
    p += ext;
    return p;
}

std::uint32_t to_le(std::uint32_t v) {
    if constexpr (std::endian::native == std::endian::little) {
        return v;
    } else {
        return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
    }
}

}  // namespace

void write_blob(const fs::path& stem, const std::vector<std::pair<std::string, const Tensor*>>& tensors,
                const json& extra) {
    std::ofstream bin(with_ext(stem, ".bin"), std::ios::binary);
    if (!bin) {
        throw Error("cannot open " + with_ext(stem, ".bin").string() + " for writing");
    }
    json side = extra;
    side["format"] = "knotforge-f32le";
    side["version"] = 1;
    side["dtype"] = "float32";
    side["endianness"] = "little";
    side["tensors"] = json::array();
    std::size_t offset = 0;
    for (const auto& [name, t] : tensors) {
        for (float v : t->values()) {
            const std::uint32_t le = to_le(std::bit_cast<std::uint32_t>(v));
            bin.write(reinterpret_cast<const char*>(&le), sizeof(le));
        }
        side["tensors"].push_back(
            {{"name", name}, {"shape", t->shape()}, {"offset", offset}, {"count", t->size()}});
        offset += t->size();
    }
    if (!bin) {
        throw Error("write failed: " + with_ext(stem, ".bin").string());
    }
    std::ofstream js(with_ext(stem, ".json"));
    js << side.dump(2) << '\n';
}

Blob read_blob(const fs::path& stem) {
    std::ifstream js(with_ext(stem, ".json"));
    if (!js) {
        throw Error("cannot open " + with_ext(stem, ".json").string());
    }
    Blob blob;
    blob.sidecar = json::parse(js);
    if (blob.sidecar.value("format", "") != "knotforge-f32le") {
        throw Error("unrecognized blob format in " + with_ext(stem, ".json").string());
    }
    std::ifstream bin(with_ext(stem, ".bin"), std::ios::binary);
    if (!bin) {
        throw Error("cannot open " + with_ext(stem, ".bin").string());
    }
    std::vector<char> bytes((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
    const std::size_t total = bytes.size() / sizeof(float);
    for (const auto& entry : blob.sidecar.at("tensors")) {
        const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
        const auto offset = entry.at("offset").get<std::size_t>();
        const auto count = entry.at("count").get<std::size_t>();
        if (shape_product(shape) != count || offset + count > total) {
            throw DimensionError("blob entry " + entry.at("name").get<std::string>() +
                                 " inconsistent with data");
        }
        std::vector<float> data(count);
        for (std::size_t i = 0; i < count; ++i) {
            std::uint32_t le;
            std::memcpy(&le, bytes.data() + (offset + i) * sizeof(float), sizeof(le));
            data[i] = std::bit_cast<float>(to_le(le));
        }
        blob.tensors.emplace_back(entry.at("name").get<std::string>(), Tensor(shape, std::move(data)));
    }
    return blob;
}

json to_json(const model::ModelConfig& cfg) {
    return {{"layers", cfg.layers},
            {"heads", cfg.heads},
            {"head_dim", cfg.head_dim},
            {"tokens_per_frame", cfg.tokens_per_frame},
            {"latent_channels", cfg.latent_channels},
            {"mask_channels", cfg.mask_channels},
            {"d_drive", cfg.d_drive},
            {"drive_tokens", cfg.drive_tokens},
            {"rope_base", cfg.rope_base},
            {"zero_init_cross_out", cfg.zero_init_cross_out},
            {"tied_qk", cfg.tied_qk},
            {"model_seed", cfg.seed}};
}

model::ModelConfig model_config_from_json(const json& j) {
    model::ModelConfig cfg;
    cfg.layers = j.value("layers", cfg.layers);
    cfg.heads = j.value("heads", cfg.heads);
    cfg.head_dim = j.value("head_dim", cfg.head_dim);
    cfg.tokens_per_frame = j.value("tokens_per_frame", cfg.tokens_per_frame);
    cfg.latent_channels = j.value("latent_channels", cfg.latent_channels);
    cfg.mask_channels = j.value("mask_channels", cfg.mask_channels);
    cfg.d_drive = j.value("d_drive", cfg.d_drive);
    cfg.drive_tokens = j.value("drive_tokens", cfg.drive_tokens);
    cfg.rope_base = j.value("rope_base", cfg.rope_base);
    cfg.zero_init_cross_out = j.value("zero_init_cross_out", cfg.zero_init_cross_out);
    cfg.tied_qk = j.value("tied_qk", cfg.tied_qk);
    cfg.seed = j.value("model_seed", cfg.seed);
    return cfg;
}

void save_weights(const model::ToyDiT& m, const fs::path& stem) {
    write_blob(stem, m.weights().named(), {{"model_config", to_json(m.config())}});
}

model::ToyDiT load_weights(const fs::path& stem) {
    Blob blob = read_blob(stem);
    const model::ModelConfig cfg = model_config_from_json(blob.sidecar.at("model_config"));
    cfg.validate();
    model::Weights w = model::Weights::init(cfg);
    auto slots = w.named();
    if (slots.size() != blob.tensors.size()) {
        throw DimensionError("weights: expected " + std::to_string(slots.size()) + " tensors, found " +
                             std::to_string(blob.tensors.size()));
    }
    for (std::size_t i = 0; i < slots.size(); ++i) {
        if (slots[i].first != blob.tensors[i].first) {
            throw DimensionError("weights: expected tensor " + slots[i].first + ", found " +
                                 blob.tensors[i].first);
        }
        *slots[i].second = std::move(blob.tensors[i].second);
    }
    return model::ToyDiT(cfg, std::move(w));
}

void write_frames(const fs::path& stem, const std::vector<Tensor>& frames, const json& extra) {
    if (frames.empty()) {
        throw DimensionError("write_frames: no frames");
    }
    const Tensor joined = concat_rows(frames);
    const Tensor stacked({frames.size(), frames.front().rows(), frames.front().cols()},
                         std::vector<float>(joined.values().begin(), joined.values().end()));
    write_blob(stem, {{"frames", &stacked}}, extra);
}

std::vector<Tensor> read_frames(const fs::path& stem) {
    const Blob blob = read_blob(stem);
    if (blob.tensors.size() != 1 || blob.tensors.front().second.rank() != 3) {
        throw DimensionError("read_frames: expected one rank-3 tensor");
    }
    const Tensor& all = blob.tensors.front().second;
    const std::size_t t = all.shape()[1];
    const std::size_t c = all.shape()[2];
    std::vector<Tensor> frames;
    for (std::size_t f = 0; f < all.shape()[0]; ++f) {
        const float* begin = all.data() + f * t * c;
        frames.emplace_back(std::vector<std::size_t>{t, c}, std::vector<float>(begin, begin + t * c));
    }
    return frames;
}

}  // namespace knotforge::io
