#pragma once

#include "orthoct/network.hpp"
#include "orthoct/optim.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace orthoct {

/// On-disk checkpoint: a magic line, a one-line JSON manifest listing
/// tensor names/shapes/byte offsets plus free-form metadata, then one
/// little-endian float32 blob. Round trips are bit-exact; writes are
/// atomic (temp file + rename).
struct Checkpoint {
    struct Entry {
        std::string name;
        Shape shape;
        std::vector<float> data;
    };

    nlohmann::json meta = nlohmann::json::object();
    std::vector<Entry> entries;

    void add(std::string name, Shape shape, std::span<const float> data);
    const Entry* find(std::string_view name) const;
    const Entry& require(std::string_view name) const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// Store every parameter of `params` under `prefix` + name.
void pack_params(Checkpoint& ckpt, const std::string& prefix, const NetworkParams& params);

/// Rebuild a parameter set from all entries under `prefix`, in
/// manifest order.
NetworkParams unpack_params(const Checkpoint& ckpt, const std::string& prefix, bool requires_grad);

/// Optimizer moments stored alongside the parameters they mirror.
void pack_opt_state(Checkpoint& ckpt, const std::string& prefix, const NetworkParams& params,
    const OptimizerState<float>& state);
OptimizerState<float> unpack_opt_state(const Checkpoint& ckpt, const std::string& prefix,
    const NetworkParams& params);

nlohmann::json unet_config_to_json(const UNetConfig& cfg);
UNetConfig unet_config_from_json(const nlohmann::json& j);

} // namespace orthoct
