#include "ipens/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

namespace ipens {

const char* CheckpointError::kind() const noexcept {
    switch (reason_) {
        case Reason::Io: return "checkpoint_io";
        case Reason::BadMagic: return "checkpoint_magic";
        case Reason::VersionMismatch: return "checkpoint_version";
        case Reason::LengthMismatch: return "checkpoint_length";
        case Reason::Malformed: return "checkpoint_header";
    }
    return "checkpoint";
}

CheckpointLengthError::CheckpointLengthError(std::size_t expected, std::size_t actual)
    : CheckpointError(Reason::LengthMismatch, "checkpoint payload holds " + std::to_string(actual) +
                                                  " values but the header expects " + std::to_string(expected)),
      expected_(expected),
      actual_(actual) {}

}  // namespace ipens

namespace ipens::nn {

using nlohmann::json;

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
}

json layer_to_json(const LayerSpec& s) {
    json j{{"kind", to_string(s.kind)}};
    switch (s.kind) {
        case LayerKind::Input: j["shape"] = s.input_shape; break;
        case LayerKind::ZeroPad: j["pad"] = s.pad; break;
        case LayerKind::SeparableConv:
            j["filters"] = s.filters;
            j["original_filters"] = s.original_filters;
            j["kernel"] = s.kernel;
            j["stride"] = s.stride;
            j["padding"] = ops::to_string(s.padding);
            j["activation"] = to_string(s.activation);
            break;
        case LayerKind::Gap: break;
        case LayerKind::Dropout: j["rate"] = s.rate; break;
        case LayerKind::Dense:
            j["units"] = s.units;
            j["activation"] = to_string(s.activation);
            break;
    }
    return j;
}

LayerSpec layer_from_json(const json& j) {
    LayerSpec s;
    s.kind = layer_kind_from_string(j.at("kind").get<std::string>());
    switch (s.kind) {
        case LayerKind::Input: s.input_shape = j.at("shape").get<Shape>(); break;
        case LayerKind::ZeroPad: s.pad = j.at("pad").get<std::size_t>(); break;
        case LayerKind::SeparableConv:
            s.filters = j.at("filters").get<std::size_t>();
            s.original_filters = j.at("original_filters").get<std::size_t>();
            s.kernel = j.at("kernel").get<std::size_t>();
            s.stride = j.at("stride").get<std::size_t>();
            s.padding = ops::padding_from_string(j.at("padding").get<std::string>());
            s.activation = activation_from_string(j.at("activation").get<std::string>());
            break;
        case LayerKind::Gap: break;
        case LayerKind::Dropout: s.rate = j.at("rate").get<double>(); break;
        case LayerKind::Dense:
            s.units = j.at("units").get<std::size_t>();
            s.activation = activation_from_string(j.at("activation").get<std::string>());
            break;
    }
    return s;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint) {
    const auto& model = checkpoint.model;
    json header;
    header["name"] = model.meta().name;
    header["stage"] = model.meta().stage;
    header["seed"] = model.meta().seed;
    header["labels"] = model.meta().labels;
    json layers = json::array();
    for (std::size_t i = 0; i < model.size(); ++i) {
        auto j = layer_to_json(model.layer(i));
        json shapes = json::array();
        for (const auto& t : model.weights(i)) shapes.push_back(t.shape());
        j["weights"] = shapes;
        layers.push_back(std::move(j));
    }
    header["layers"] = std::move(layers);
    header["state"] = {{"epoch", checkpoint.state.epoch},
                       {"best_metric", checkpoint.state.best_metric},
                       {"metric", checkpoint.state.metric},
                       {"prune_step", checkpoint.state.prune_step}};
    header["payload_values"] = model.parameter_count();
    const auto text = header.dump();

    std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
    put_u32(out, kCheckpointVersion);
    put_u32(out, static_cast<std::uint32_t>(text.size()));
    out.insert(out.end(), text.begin(), text.end());
    out.reserve(out.size() + 4 * model.parameter_count());
    for (const auto& lw : model.weights())
        for (const auto& t : lw)
            for (float v : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
    return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
    using Reason = CheckpointError::Reason;
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
        throw CheckpointError(Reason::BadMagic, "not a checkpoint: bad magic bytes");
    if (bytes.size() < 12) throw CheckpointError(Reason::Malformed, "checkpoint truncated inside the preamble");
    const auto version = get_u32(bytes.data() + 4);
    if (version != kCheckpointVersion)
        throw CheckpointError(Reason::VersionMismatch, "checkpoint version " + std::to_string(version) +
                                                           " is not supported (expected " +
                                                           std::to_string(kCheckpointVersion) + ")");
    const auto header_bytes = get_u32(bytes.data() + 8);
    if (bytes.size() < 12 + static_cast<std::size_t>(header_bytes))
        throw CheckpointError(Reason::Malformed, "checkpoint truncated inside the header");

    json header;
    std::vector<LayerSpec> layers;
    std::vector<std::vector<Shape>> shapes;
    ModelMeta meta;
    TrainState state;
    try {
        header = json::parse(bytes.begin() + 12, bytes.begin() + 12 + header_bytes);
        meta.name = header.at("name").get<std::string>();
        meta.stage = header.at("stage").get<std::string>();
        meta.seed = header.at("seed").get<std::uint64_t>();
        meta.labels = header.at("labels").get<std::vector<std::string>>();
        for (const auto& j : header.at("layers")) {
            layers.push_back(layer_from_json(j));
            shapes.push_back(j.at("weights").get<std::vector<Shape>>());
        }
        const auto& s = header.at("state");
        state.epoch = s.at("epoch").get<std::int64_t>();
        state.best_metric = s.at("best_metric").get<double>();
        state.metric = s.at("metric").get<std::string>();
        state.prune_step = s.at("prune_step").get<std::int64_t>();
    } catch (const json::exception& e) {
        throw CheckpointError(Reason::Malformed, std::string("malformed checkpoint header: ") + e.what());
    }

    std::size_t expected = 0;
    for (const auto& layer : shapes)
        for (const auto& s : layer) expected += shape_size(s);
    const auto payload = bytes.size() - 12 - header_bytes;
    if (payload % 4 != 0 || payload / 4 != expected) throw CheckpointLengthError(expected, payload / 4);

    const std::uint8_t* p = bytes.data() + 12 + header_bytes;
    std::vector<LayerWeights> weights(layers.size());
    for (std::size_t i = 0; i < layers.size(); ++i)
        for (const auto& s : shapes[i]) {
            Tensor t(s);
            for (auto& v : t.data()) {
                v = std::bit_cast<float>(get_u32(p));
                p += 4;
            }
            weights[i].push_back(std::move(t));
        }
    try {
        return Checkpoint{ModelGraph(std::move(layers), std::move(weights), std::move(meta)), state};
    } catch (const GraphError& e) {
        throw CheckpointError(Reason::Malformed, std::string("checkpoint describes an invalid model: ") + e.what());
    }
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
    const auto bytes = encode_checkpoint(checkpoint);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(CheckpointError::Reason::Io, "cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError(CheckpointError::Reason::Io, "failed writing " + path.string());
}

void save_checkpoint(const ModelGraph& model, const std::filesystem::path& path) {
    save_checkpoint(Checkpoint{model, {}}, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError(CheckpointError::Reason::Io, "cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

}  // namespace ipens::nn
