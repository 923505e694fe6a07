#include <cstdio>
#include <functional>

#include <CLI11.hpp>

#include "commands.hpp"
#include "resid/error.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Spectral analysis and alignment of residual-stream units"};
    app.require_subcommand(1);
    std::function<void()> action;
    resid::cli::register_commands(app, action);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (action) action();
    } catch (const resid::ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const CLI::ParseError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
