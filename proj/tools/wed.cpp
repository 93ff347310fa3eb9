#include "wed/errors.hpp"
#include "wed/experiments/check.hpp"
#include "wed/experiments/commands.hpp"
#include "wed/experiments/config.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <map>
#include <string>
#include <vector>

namespace {

using namespace wed::experiments;

int run(Command command, const std::string& config_file, const std::vector<std::string>& overrides,
        const std::string& output_dir)
{
    std::map<std::string, std::string> kv;
    if (!config_file.empty()) {
        read_config_file(kv, config_file);
    }
    for (const auto& item : overrides) {
        add_assignment(kv, item, "command line");
    }
    if (!output_dir.empty()) {
        kv["output_dir"] = output_dir;
    }
    const RunConfig cfg = parse_config(kv, command);
    switch (command) {
    case Command::solve: return cmd_solve(cfg);
    case Command::fb_solve: return cmd_fb_solve(cfg);
    case Command::reference: return cmd_reference(cfg);
    case Command::sweep_eps: return cmd_sweep_eps(cfg);
    case Command::sweep_lambda: return cmd_sweep_lambda(cfg);
    case Command::check: return cmd_check(cfg);
    }
    return exit_config;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Weighted energy-dissipation solver for stochastic parabolic problems on a scenario tree"};
    app.require_subcommand(1);

    std::string config_file;
    std::vector<std::string> overrides;
    std::string output_dir;
    Command command = Command::check;

    const std::vector<std::pair<const char*, Command>> commands{
        {"solve", Command::solve},         {"fb-solve", Command::fb_solve},        {"reference", Command::reference},
        {"sweep-eps", Command::sweep_eps}, {"sweep-lambda", Command::sweep_lambda}, {"check", Command::check}};
    const std::map<std::string, const char*> help{
        {"solve", "minimize the WED functional and verify the Euler-Lagrange system"},
        {"fb-solve", "solve the forward-backward system directly"},
        {"reference", "implicit Euler-Maruyama reference solution"},
        {"sweep-eps", "epsilon sweep against the reference"},
        {"sweep-lambda", "lambda continuation sweep at fixed epsilon"},
        {"check", "run the property suite"}};
    for (const auto& [name, cmd] : commands) {
        CLI::App* sub = app.add_subcommand(name, help.at(name));
        sub->add_option("--config", config_file, "key=value config file");
        sub->add_option("--output-dir", output_dir, "directory for CSV outputs");
        sub->add_option("assignments", overrides, "key=value overrides");
        sub->callback([&command, cmd = cmd] { command = cmd; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : exit_config;
    }

    try {
        return run(command, config_file, overrides, output_dir);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return exit_config;
    } catch (const wed::CapacityError& e) {
        std::cerr << "capacity error: " << e.what() << '\n';
        return exit_config;
    } catch (const wed::DomainError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return exit_config;
    } catch (const wed::SizeMismatch& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return exit_config;
    } catch (const wed::ConvergenceError& e) {
        std::cerr << "solver failure: " << e.what() << '\n';
        return exit_solver;
    } catch (const wed::LineSearchError& e) {
        std::cerr << "solver failure: " << e.what() << '\n';
        return exit_solver;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_solver;
    }
}
