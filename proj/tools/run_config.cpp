#include "run_config.hpp"

#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace orthoct {

RunConfig RunConfig::defaults()
{
    RunConfig c;
    c.values_ = {
        {"data.dims", 32},
        {"data.spacing", 2.8},
        {"data.train_fraction", 0.8},
        {"normalize.hu_lo", -1000},
        {"normalize.hu_hi", 1000},
        {"net.levels", 4},
        {"net.base_channels", 8},
        {"train.seed", 42},
        {"train.batch_size", 1},
        {"train.weight_decay", 0.01},
        {"train.beta1", 0.9},
        {"train.beta2", 0.999},
        {"train.eps", 1e-8},
        {"train.checkpoint_every", 5},
        {"train.stage1.epochs", 20},
        {"train.stage1.lr_init", 2e-4},
        {"train.stage1.lr_min", 1e-6},
        {"train.stage2.epochs", 5},
        {"train.stage2.lr_init", 1e-4},
        {"train.stage2.lr_min", 1e-6},
        {"loss.w_l1", 1.0},
        {"loss.w_perc", 0.1},
        {"loss.w_adv", 0.01},
        {"loss.w_contrast", 0.1},
        {"loss.semantic_split", 0.5},
        {"contrastive.n_pos_s", 4},
        {"contrastive.n_neg_a", 8},
        {"contrastive.tau", 0.07},
        {"contrastive.window_radius", 2},
        {"contrastive.anchors_per_image", 256},
        {"contrastive.ema_momentum", 0.99},
        {"perceptual.seed", 7777},
    };
    return c;
}

void RunConfig::set_checked(const std::string& key, double value)
{
    auto it = values_.find(key);
    if (it == values_.end())
        throw std::runtime_error("unknown config key '" + key + "'");
    it->second = value;
}

void RunConfig::apply_file(const std::string& path)
{
    std::ifstream is(path);
    if (!is)
        throw std::runtime_error("cannot open config file " + path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(path + ": config parse error: " + e.what());
    }
    if (!j.is_object())
        throw std::runtime_error(path + ": config must be a JSON object of dotted keys");
    for (const auto& [key, value] : j.items()) {
        if (!value.is_number())
            throw std::runtime_error(path + ": config value for '" + key + "' must be a number");
        set_checked(key, value.get<double>());
    }
}

void RunConfig::apply_set(const std::string& kv)
{
    const size_t eq = kv.find('=');
    if (eq == std::string::npos)
        throw std::runtime_error("--set expects key=value, got '" + kv + "'");
    const std::string key = kv.substr(0, eq);
    double value = 0;
    try {
        size_t used = 0;
        value = std::stod(kv.substr(eq + 1), &used);
        if (used != kv.size() - eq - 1)
            throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
        throw std::runtime_error("--set " + key + ": value '" + kv.substr(eq + 1)
            + "' is not a number");
    }
    set_checked(key, value);
}

double RunConfig::get(const std::string& key) const
{
    auto it = values_.find(key);
    if (it == values_.end())
        throw std::runtime_error("unknown config key '" + key + "'");
    return it->second;
}

int RunConfig::get_int(const std::string& key) const
{
    return static_cast<int>(get(key));
}

uint64_t RunConfig::get_seed(const std::string& key) const
{
    return static_cast<uint64_t>(get(key));
}

TrainConfig RunConfig::to_train_config() const
{
    TrainConfig c;
    c.stage1 = {get_int("train.stage1.epochs"), get("train.stage1.lr_init"),
        get("train.stage1.lr_min")};
    c.stage2 = {get_int("train.stage2.epochs"), get("train.stage2.lr_init"),
        get("train.stage2.lr_min")};
    c.batch_size = get_int("train.batch_size");
    c.seed = get_seed("train.seed");
    c.adamw = {get("train.beta1"), get("train.beta2"), get("train.eps"),
        get("train.weight_decay")};
    c.weights = {get("loss.w_l1"), get("loss.w_perc"), get("loss.w_adv"), get("loss.w_contrast"),
        get("loss.semantic_split")};
    c.contrastive = {get_int("contrastive.n_pos_s"), get_int("contrastive.n_neg_a"),
        get("contrastive.tau"), get_int("contrastive.window_radius"),
        get_int("contrastive.anchors_per_image"), get("contrastive.ema_momentum")};
    c.checkpoint_every = get_int("train.checkpoint_every");
    c.coarse = UNetConfig::desk(3);
    c.coarse.levels = get_int("net.levels");
    c.coarse.base_channels = get_int("net.base_channels");
    c.refiner = UNetConfig::desk(2);
    c.refiner.levels = get_int("net.levels");
    c.refiner.base_channels = get_int("net.base_channels");
    c.perceptual_seed = get_seed("perceptual.seed");
    c.hu_lo = static_cast<float>(get("normalize.hu_lo"));
    c.hu_hi = static_cast<float>(get("normalize.hu_hi"));
    c.validate();
    return c;
}

nlohmann::json RunConfig::to_json() const
{
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [key, value] : values_)
        j[key] = value;
    return j;
}

void RunConfig::echo(const std::string& dir) const
{
    std::filesystem::create_directories(dir);
    const std::string path = (std::filesystem::path(dir) / "config.json").string();
    std::ofstream os(path, std::ios::trunc);
    if (!os)
        throw std::runtime_error("cannot write effective config to " + path);
    os << to_json().dump(2) << "\n";
}

} // namespace orthoct
