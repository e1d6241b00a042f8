#include "mmret/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <unordered_map>

#include <json.hpp>

namespace mmret {

using nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;

uint64_t fnv1a64(const std::vector<unsigned char>& bytes) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char b : bytes) {
        h ^= b;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string hex64(uint64_t v) {
    char buf[19];
    std::snprintf(buf, sizeof buf, "0x%016llx", static_cast<unsigned long long>(v));
    return buf;
}

void append_f64_le(std::vector<unsigned char>& out, double v) {
    uint64_t bits = std::bit_cast<uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>((bits >> (8 * i)) & 0xff));
}

double read_f64_le(const unsigned char* p) {
    uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(p[i]) << (8 * i);
    return std::bit_cast<double>(bits);
}

json config_to_json(const ModelConfig& c) {
    return json{{"preset", c.dims.name},
                {"d_tok", c.dims.d_tok},
                {"d_h", c.dims.d_h},
                {"d_joint", c.dims.d_joint},
                {"d_vis", c.dims.d_vis},
                {"d_lab", c.dims.d_lab},
                {"vocab_size", c.vocab_size},
                {"max_len", c.max_len},
                {"img_h", c.img_h},
                {"img_w", c.img_w},
                {"img_c", c.img_c},
                {"patch", c.patch},
                {"tau", c.tau},
                {"dropout", c.dropout}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.dims.name = j.at("preset").get<std::string>();
    c.dims.d_tok = j.at("d_tok").get<int>();
    c.dims.d_h = j.at("d_h").get<int>();
    c.dims.d_joint = j.at("d_joint").get<int>();
    c.dims.d_vis = j.at("d_vis").get<int>();
    c.dims.d_lab = j.at("d_lab").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.max_len = j.at("max_len").get<int>();
    c.img_h = j.at("img_h").get<int>();
    c.img_w = j.at("img_w").get<int>();
    c.img_c = j.at("img_c").get<int>();
    c.patch = j.at("patch").get<int>();
    c.tau = j.at("tau").get<double>();
    c.dropout = j.at("dropout").get<double>();
    return c;
}

void write_file(const std::string& path, const ModelBundle& bundle, const CheckpointMeta& meta,
                const std::vector<NamedParam>& params) {
    json manifest;
    manifest["format_version"] = kFormatVersion;
    manifest["regime"] = regime_name(bundle.regime);
    manifest["model_config"] = config_to_json(bundle.config);
    manifest["seed"] = meta.seed;
    manifest["step"] = meta.step;
    if (!meta.subtask.empty()) manifest["subtask"] = meta.subtask;
    if (meta.dev_metrics) manifest["dev_metrics"] = json::parse(meta.dev_metrics->to_json());

    std::vector<unsigned char> payload;
    json table = json::array();
    for (const auto& p : params) {
        json entry;
        entry["name"] = p.name;
        entry["shape"] = p.tensor.shape;
        entry["offset"] = payload.size();
        entry["bytes"] = p.tensor.numel() * 8;
        table.push_back(std::move(entry));
        for (size_t i = 0; i < p.tensor.numel(); ++i) append_f64_le(payload, p.tensor[i]);
    }
    manifest["params"] = std::move(table);
    manifest["payload_bytes"] = payload.size();
    manifest["checksum_fnv1a64"] = hex64(fnv1a64(payload));

    const std::string mtext = manifest.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open checkpoint '" + path + "' for writing");
    uint64_t mlen = mtext.size();
    unsigned char head[8];
    for (int i = 0; i < 8; ++i) head[i] = static_cast<unsigned char>((mlen >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(head), 8);
    out.write(mtext.data(), static_cast<std::streamsize>(mtext.size()));
    out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
    if (!out) throw DataError("write failure on checkpoint '" + path + "'");
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelBundle& bundle, const CheckpointMeta& meta) {
    write_file(path, bundle, meta, named_parameters(bundle));
}

void save_checkpoint_subset(const std::string& path, const ModelBundle& bundle,
                            const CheckpointMeta& meta, const std::vector<NamedParam>& subset) {
    write_file(path, bundle, meta, subset);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint '" + path + "'");
    unsigned char head[8];
    in.read(reinterpret_cast<char*>(head), 8);
    if (!in) throw DataError("checkpoint '" + path + "' truncated (no manifest length)");
    uint64_t mlen = 0;
    for (int i = 0; i < 8; ++i) mlen |= static_cast<uint64_t>(head[i]) << (8 * i);
    if (mlen == 0 || mlen > (1ULL << 31)) throw DataError("checkpoint '" + path + "' has an implausible manifest");

    std::string mtext(mlen, '\0');
    in.read(mtext.data(), static_cast<std::streamsize>(mlen));
    if (!in) throw DataError("checkpoint '" + path + "' truncated inside the manifest");
    json manifest = json::parse(mtext, nullptr, false);
    if (manifest.is_discarded()) throw DataError("checkpoint '" + path + "' has a malformed manifest");
    if (manifest.value("format_version", -1) != kFormatVersion)
        throw DataError("unsupported checkpoint format version");

    const size_t payload_bytes = manifest.at("payload_bytes").get<size_t>();
    std::vector<unsigned char> payload(payload_bytes);
    in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload_bytes));
    if (!in || in.gcount() != static_cast<std::streamsize>(payload_bytes))
        throw DataError("checkpoint '" + path + "' truncated inside the payload");

    const std::string expect = manifest.at("checksum_fnv1a64").get<std::string>();
    if (hex64(fnv1a64(payload)) != expect)
        throw DataError("checkpoint '" + path + "' failed its checksum (corrupt payload)");

    LoadedCheckpoint out;
    out.meta.step = manifest.value("step", int64_t{0});
    out.meta.seed = manifest.value("seed", uint64_t{0});
    out.meta.subtask = manifest.value("subtask", std::string{});
    if (manifest.contains("dev_metrics"))
        out.meta.dev_metrics = EvalReport::from_json(manifest.at("dev_metrics").dump());

    const Regime regime = regime_from_name(manifest.at("regime").get<std::string>());
    const ModelConfig config = config_from_json(manifest.at("model_config"));
    out.bundle = build_model(regime, config, out.meta.seed);

    std::unordered_map<std::string, Tensor> by_name;
    for (const auto& p : named_parameters(out.bundle)) by_name.emplace(p.name, p.tensor);

    for (const auto& entry : manifest.at("params")) {
        const std::string name = entry.at("name").get<std::string>();
        auto it = by_name.find(name);
        if (it == by_name.end()) throw DataError("checkpoint parameter '" + name + "' unknown for this regime");
        const Shape shape = entry.at("shape").get<Shape>();
        if (shape != it->second.shape)
            throw DataError("checkpoint parameter '" + name + "' shape " + shape_str(shape) +
                            " does not match model shape " + shape_str(it->second.shape));
        const size_t offset = entry.at("offset").get<size_t>();
        const size_t bytes = entry.at("bytes").get<size_t>();
        if (bytes != it->second.numel() * 8 || offset + bytes > payload.size())
            throw DataError("checkpoint parameter '" + name + "' has a bad payload range");
        for (size_t i = 0; i < it->second.numel(); ++i)
            it->second[i] = read_f64_le(payload.data() + offset + i * 8);
    }
    return out;
}

}  // namespace mmret
