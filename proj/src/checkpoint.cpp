#include "tdlm/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace tdlm {

namespace {

constexpr std::array<char, 4> kMagic{'T', 'D', 'L', 'M'};

std::string attention_name(AttentionMode mode) { return mode == AttentionMode::windowed ? "windowed" : "full"; }

void write_u32(std::ostream& out, std::uint32_t v)
{
    const char bytes[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                           static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    out.write(bytes, 4);
}

void write_f32(std::ostream& out, double value)
{
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(value));
    write_u32(out, bits);
}

std::uint32_t read_u32(const unsigned char* p)
{
    return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
           static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

std::vector<std::pair<std::string, Tensor>> all_tensors(const Checkpoint& c)
{
    auto named = c.model.params.named();
    for (const auto& [name, t] : c.extras) named.emplace_back("extra." + name, t);
    return named;
}

} // namespace

nlohmann::json to_json(const ModelConfig& c)
{
    return {{"layers", c.layers},
            {"hidden", c.hidden},
            {"heads", c.heads},
            {"ff", c.ff},
            {"vocab_size", c.vocab_size},
            {"max_seq", c.max_seq},
            {"dropout", c.dropout},
            {"attention", attention_name(c.attention)},
            {"window", c.window},
            {"global_positions", c.global_positions},
            {"init_std", c.init_std}};
}

ModelConfig model_config_from_json(const nlohmann::json& j)
{
    if (!j.is_object()) throw ConfigError("model config must be a JSON object");
    ModelConfig c;
    try {
        for (const auto& [key, value] : j.items()) {
            if (key == "layers") c.layers = value.get<std::size_t>();
            else if (key == "hidden") c.hidden = value.get<std::size_t>();
            else if (key == "heads") c.heads = value.get<std::size_t>();
            else if (key == "ff") c.ff = value.get<std::size_t>();
            else if (key == "vocab_size") c.vocab_size = value.get<std::size_t>();
            else if (key == "max_seq") c.max_seq = value.get<std::size_t>();
            else if (key == "dropout") c.dropout = value.get<double>();
            else if (key == "window") c.window = value.get<std::size_t>();
            else if (key == "global_positions") c.global_positions = value.get<std::vector<std::size_t>>();
            else if (key == "init_std") c.init_std = value.get<double>();
            else if (key == "attention") {
                const auto name = value.get<std::string>();
                if (name == "full") c.attention = AttentionMode::full;
                else if (name == "windowed") c.attention = AttentionMode::windowed;
                else throw ConfigError("model config: unknown attention mode '" + name + "'");
            } else {
                throw ConfigError("model config: unknown key '" + key + "'");
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("model config: ") + e.what());
    }
    return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint)
{
    const auto tensors = all_tensors(checkpoint);
    nlohmann::json header;
    header["dtype"] = "f32";
    header["config"] = to_json(checkpoint.model.config);
    header["vocab_hash"] = std::to_string(checkpoint.model.vocab_hash);
    header["step"] = checkpoint.step;
    nlohmann::json entries = nlohmann::json::array();
    std::size_t offset = 0;
    for (const auto& [name, t] : tensors) {
        entries.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
        offset += t.size();
    }
    header["tensors"] = std::move(entries);
    header["count"] = offset;
    const std::string text = header.dump();

    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write checkpoint " + path.string());
        out.write(kMagic.data(), kMagic.size());
        out.put(static_cast<char>(kCheckpointVersion));
        write_u32(out, static_cast<std::uint32_t>(text.size()));
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        for (const auto& [name, t] : tensors)
            for (double v : t.values()) write_f32(out, v);
        if (!out) throw IoError("failed writing checkpoint " + path.string());
    }
    std::filesystem::rename(tmp, path);
}

void save_checkpoint(const std::filesystem::path& path, const Model& model, std::uint64_t step)
{
    save_checkpoint(path, Checkpoint{model, step, {}});
}

Checkpoint load_checkpoint(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    const std::string data = buffer.str();
    const auto* bytes = reinterpret_cast<const unsigned char*>(data.data());
    if (data.size() < 9 || std::memcmp(data.data(), kMagic.data(), 4) != 0) {
        throw FormatError(path.string() + ": not a checkpoint file");
    }
    if (bytes[4] != kCheckpointVersion) {
        throw VersionError(path.string() + ": unsupported checkpoint version " + std::to_string(bytes[4]));
    }
    const std::size_t header_len = read_u32(bytes + 5);
    if (data.size() < 9 + header_len) throw FormatError(path.string() + ": truncated header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(data.substr(9, header_len));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": bad header: " + e.what());
    }
    if (header.value("dtype", "") != "f32") throw FormatError(path.string() + ": unsupported dtype");

    const std::size_t count = header.at("count").get<std::size_t>();
    const std::size_t payload = 9 + header_len;
    if (data.size() != payload + 4 * count) {
        throw FormatError(path.string() + ": payload holds " + std::to_string((data.size() - payload) / 4) +
                          " values, header declares " + std::to_string(count));
    }
    std::map<std::string, Tensor> stored;
    for (const auto& entry : header.at("tensors")) {
        const auto shape = entry.at("shape").get<Shape>();
        const std::size_t offset = entry.at("offset").get<std::size_t>();
        const std::size_t n = shape_size(shape);
        if (offset + n > count) throw FormatError(path.string() + ": tensor extends past payload");
        std::vector<double> values(n);
        for (std::size_t i = 0; i < n; ++i)
            values[i] = std::bit_cast<float>(read_u32(bytes + payload + 4 * (offset + i)));
        stored.emplace(entry.at("name").get<std::string>(), Tensor(shape, std::move(values), true));
    }

    Checkpoint c;
    c.model.config = model_config_from_json(header.at("config"));
    c.model.vocab_hash = std::stoull(header.at("vocab_hash").get<std::string>());
    c.step = header.value("step", std::uint64_t{0});
    c.model.params = init_params(c.model.config, 0);
    if (stored.contains("head.weight")) {
        const Tensor& w = stored.at("head.weight");
        c.model.params.head = HeadParams{Tensor::zeros(w.shape(), true), Tensor::zeros({w.dim(0)}, true)};
    }
    for (auto& [name, t] : c.model.params.named()) {
        const auto it = stored.find(name);
        if (it == stored.end()) throw FormatError(path.string() + ": missing tensor " + name);
        if (it->second.shape() != t.shape()) {
            throw FormatError(path.string() + ": tensor " + name + " has shape " + shape_string(it->second.shape()) +
                              ", config implies " + shape_string(t.shape()));
        }
        Tensor target = t;
        std::copy(it->second.values().begin(), it->second.values().end(), target.mutable_values().begin());
        stored.erase(it);
    }
    for (auto& [name, t] : stored) {
        if (!name.starts_with("extra.")) throw FormatError(path.string() + ": unexpected tensor " + name);
        c.extras.emplace(name.substr(6), t);
    }
    return c;
}

void round_to_stored_precision(Model& model)
{
    for (auto& [name, t] : model.params.named()) {
        Tensor handle = t;
        for (double& v : handle.mutable_values()) v = static_cast<double>(static_cast<float>(v));
    }
}

} // namespace tdlm
