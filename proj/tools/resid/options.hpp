#pragma once

#include <functional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

namespace resid::cli {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

/// Subcommand parameters settable by flag or by a JSON config file.
///
/// Config keys are the long flag names with '-' replaced by '_'. A flag given
/// on the command line wins over the same key in the config file; a config key
/// that names no parameter is an error.
class Options {
public:
    explicit Options(CLI::App* app);

    template <class T>
    CLI::Option* add(const std::string& name, T& var, const std::string& help) {
        CLI::Option* opt = app_->add_option("--" + name, var, help);
        entries_.push_back({key_of(name), opt, [&var](const json& j) { var = j.get<T>(); },
                            [&var] { return ojson(var); }});
        return opt;
    }

    CLI::Option* add_flag(const std::string& name, bool& var, const std::string& help);

    /// Loads --config (if given) into every parameter not set by a flag.
    void apply_config();

    /// Effective parameter values in registration order.
    ojson echo() const;

private:
    struct Entry {
        std::string key;
        CLI::Option* opt;
        std::function<void(const json&)> set;
        std::function<ojson()> get;
    };
    static std::string key_of(const std::string& name);

    CLI::App* app_;
    std::string config_path_;
    std::vector<Entry> entries_;
};

}  // namespace resid::cli
