#include "options.hpp"

#include <fstream>

#include "resid/error.hpp"

namespace resid::cli {

Options::Options(CLI::App* app) : app_(app) {
    app_->add_option("--config", config_path_, "JSON file with parameter values (flags take precedence)");
}

CLI::Option* Options::add_flag(const std::string& name, bool& var, const std::string& help) {
    CLI::Option* opt = app_->add_flag("--" + name, var, help);
    entries_.push_back({key_of(name), opt, [&var](const json& j) { var = j.get<bool>(); }, [&var] { return ojson(var); }});
    return opt;
}

std::string Options::key_of(const std::string& name) {
    std::string k = name;
    for (auto& c : k) {
        if (c == '-') c = '_';
    }
    return k;
}

void Options::apply_config() {
    if (config_path_.empty()) return;
    std::ifstream in(config_path_);
    if (!in) throw IoError("cannot open config " + config_path_);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ValidationError("config " + config_path_ + ": " + e.what());
    }
    if (!j.is_object()) throw ValidationError("config " + config_path_ + " must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        auto it = std::find_if(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.key == key; });
        if (it == entries_.end()) throw ValidationError("config: unknown key '" + key + "'");
        if (it->opt->count() > 0) continue;
        try {
            it->set(value);
        } catch (const json::exception& e) {
            throw ValidationError("config: bad value for '" + key + "': " + e.what());
        }
    }
}

ojson Options::echo() const {
    ojson j = ojson::object();
    for (const auto& e : entries_) j[e.key] = e.get();
    return j;
}

}  // namespace resid::cli
