#pragma once

#include "orthoct/pipeline.hpp"

#include <json.hpp>

#include <map>
#include <string>

namespace orthoct {

/// Flat dotted-key configuration: built-in defaults, overridden by a
/// JSON config file and then by --set key=value flags. Unknown keys
/// are rejected; the effective config is echoed to the run directory.
class RunConfig {
public:
    static RunConfig defaults();

    void apply_file(const std::string& path);
    void apply_set(const std::string& key_equals_value);

    double get(const std::string& key) const;
    int get_int(const std::string& key) const;
    uint64_t get_seed(const std::string& key) const;

    TrainConfig to_train_config() const;
    nlohmann::json to_json() const;
    void echo(const std::string& dir) const;

private:
    void set_checked(const std::string& key, double value);
    std::map<std::string, double> values_;
};

} // namespace orthoct
