#include "orthoct/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace orthoct {

namespace {

constexpr const char* kMagic = "CTCKPT 1";

void write_f32le(std::ostream& os, std::span<const float> data)
{
    for (float f : data) {
        const uint32_t u = std::bit_cast<uint32_t>(f);
        const unsigned char b[4] = {static_cast<unsigned char>(u & 0xff),
            static_cast<unsigned char>((u >> 8) & 0xff),
            static_cast<unsigned char>((u >> 16) & 0xff),
            static_cast<unsigned char>((u >> 24) & 0xff)};
        os.write(reinterpret_cast<const char*>(b), 4);
    }
}

void read_f32le(const unsigned char* src, size_t count, float* dst)
{
    for (size_t i = 0; i < count; ++i) {
        const unsigned char* b = src + 4 * i;
        const uint32_t u = uint32_t(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16)
            | (uint32_t(b[3]) << 24);
        dst[i] = std::bit_cast<float>(u);
    }
}

} // namespace

void Checkpoint::add(std::string name, Shape shape, std::span<const float> data)
{
    if (static_cast<int64_t>(data.size()) != numel(shape))
        throw std::invalid_argument("checkpoint entry " + name + ": data does not match shape");
    if (find(name))
        throw std::invalid_argument("checkpoint entry " + name + " already present");
    entries.push_back({std::move(name), std::move(shape), {data.begin(), data.end()}});
}

const Checkpoint::Entry* Checkpoint::find(std::string_view name) const
{
    for (const auto& e : entries)
        if (e.name == name)
            return &e;
    return nullptr;
}

const Checkpoint::Entry& Checkpoint::require(std::string_view name) const
{
    const Entry* e = find(name);
    if (!e)
        throw std::runtime_error("checkpoint is missing entry " + std::string(name));
    return *e;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path)
{
    nlohmann::json manifest;
    manifest["meta"] = ckpt.meta;
    auto& tensors = manifest["tensors"] = nlohmann::json::array();
    int64_t offset = 0;
    for (const auto& e : ckpt.entries) {
        tensors.push_back({{"name", e.name}, {"shape", e.shape}, {"dtype", "f32le"},
            {"offset", offset}});
        offset += static_cast<int64_t>(e.data.size()) * 4;
    }

    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os)
            throw std::runtime_error("cannot open " + tmp + " for writing");
        os << kMagic << "\n" << manifest.dump() << "\n";
        for (const auto& e : ckpt.entries)
            write_f32le(os, e.data);
        if (!os)
            throw std::runtime_error("write failed for " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw std::runtime_error("cannot open checkpoint " + path);
    std::string magic, manifest_line;
    if (!std::getline(is, magic) || magic != kMagic)
        throw std::runtime_error(path + ": bad checkpoint magic");
    if (!std::getline(is, manifest_line))
        throw std::runtime_error(path + ": missing manifest");
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(manifest_line);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(path + ": manifest parse error: " + e.what());
    }

    std::vector<unsigned char> blob{std::istreambuf_iterator<char>(is),
        std::istreambuf_iterator<char>()};

    Checkpoint ckpt;
    ckpt.meta = manifest.value("meta", nlohmann::json::object());
    int64_t expected = 0;
    for (const auto& t : manifest.at("tensors")) {
        Checkpoint::Entry e;
        e.name = t.at("name").get<std::string>();
        e.shape = t.at("shape").get<Shape>();
        if (t.at("dtype").get<std::string>() != "f32le")
            throw std::runtime_error(path + ": unsupported dtype for " + e.name);
        const int64_t offset = t.at("offset").get<int64_t>();
        const int64_t count = numel(e.shape);
        if (offset != expected)
            throw std::runtime_error(path + ": non-contiguous blob offset for " + e.name);
        if (offset + count * 4 > static_cast<int64_t>(blob.size()))
            throw std::runtime_error(path + ": blob truncated at " + e.name);
        e.data.resize(static_cast<size_t>(count));
        read_f32le(blob.data() + offset, static_cast<size_t>(count), e.data.data());
        expected = offset + count * 4;
        ckpt.entries.push_back(std::move(e));
    }
    if (expected != static_cast<int64_t>(blob.size()))
        throw std::runtime_error(path + ": blob size does not match manifest");
    return ckpt;
}

void pack_params(Checkpoint& ckpt, const std::string& prefix, const NetworkParams& params)
{
    for (const auto& [name, t] : params.entries())
        ckpt.add(prefix + name, t.shape(), t.values());
}

NetworkParams unpack_params(const Checkpoint& ckpt, const std::string& prefix, bool requires_grad)
{
    NetworkParams p;
    for (const auto& e : ckpt.entries) {
        if (e.name.rfind(prefix, 0) != 0)
            continue;
        std::vector<float> data(e.data);
        p.add(e.name.substr(prefix.size()),
            Tensor<float>::from_data(e.shape, std::move(data), requires_grad));
    }
    if (p.count() == 0)
        throw std::runtime_error("checkpoint has no parameters under prefix '" + prefix + "'");
    return p;
}

void pack_opt_state(Checkpoint& ckpt, const std::string& prefix, const NetworkParams& params,
    const OptimizerState<float>& state)
{
    if (state.m.size() != params.count())
        throw std::invalid_argument("pack_opt_state: state does not match params");
    const auto& entries = params.entries();
    for (size_t i = 0; i < entries.size(); ++i) {
        ckpt.add(prefix + "m." + entries[i].first, entries[i].second.shape(), state.m[i]);
        ckpt.add(prefix + "v." + entries[i].first, entries[i].second.shape(), state.v[i]);
    }
    ckpt.meta[prefix + "step"] = state.step;
}

OptimizerState<float> unpack_opt_state(const Checkpoint& ckpt, const std::string& prefix,
    const NetworkParams& params)
{
    OptimizerState<float> state;
    for (const auto& [name, t] : params.entries()) {
        state.m.push_back(ckpt.require(prefix + "m." + name).data);
        state.v.push_back(ckpt.require(prefix + "v." + name).data);
    }
    state.step = ckpt.meta.at(prefix + "step").get<int64_t>();
    return state;
}

nlohmann::json unet_config_to_json(const UNetConfig& cfg)
{
    return {{"dims", cfg.dims}, {"levels", cfg.levels}, {"base_channels", cfg.base_channels},
        {"channel_schedule", cfg.resolved_schedule()}, {"in_channels", cfg.in_channels},
        {"out_channels", cfg.out_channels}, {"final_adapt_conv", cfg.final_adapt_conv},
        {"upsample_mode",
            cfg.upsample_mode == UpsampleMode::transposed_conv ? "transposed_conv" : "linear_interp"}};
}

UNetConfig unet_config_from_json(const nlohmann::json& j)
{
    UNetConfig cfg;
    cfg.dims = j.at("dims").get<int>();
    cfg.levels = j.at("levels").get<int>();
    cfg.base_channels = j.at("base_channels").get<int>();
    cfg.channel_schedule = j.at("channel_schedule").get<std::vector<int>>();
    cfg.in_channels = j.at("in_channels").get<int>();
    cfg.out_channels = j.at("out_channels").get<int>();
    cfg.final_adapt_conv = j.at("final_adapt_conv").get<bool>();
    const std::string mode = j.at("upsample_mode").get<std::string>();
    if (mode == "transposed_conv")
        cfg.upsample_mode = UpsampleMode::transposed_conv;
    else if (mode == "linear_interp")
        cfg.upsample_mode = UpsampleMode::linear_interp;
    else
        throw std::runtime_error("unknown upsample_mode '" + mode + "'");
    cfg.validate();
    return cfg;
}

} // namespace orthoct
