#pragma once

#include <functional>

#include <CLI11.hpp>

namespace resid::cli {

/// Adds every subcommand to `app`. After parsing, `action` holds the selected
/// command's body.
void register_commands(CLI::App& app, std::function<void()>& action);

}  // namespace resid::cli
