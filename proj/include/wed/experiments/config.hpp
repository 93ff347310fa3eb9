#pragma once

#include "wed/energy.hpp"
#include "wed/errors.hpp"
#include "wed/scenario_tree.hpp"
#include "wed/spatial.hpp"
#include "wed/wed.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace wed::experiments {

/// Malformed or missing configuration; maps to exit code 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Schedule {
    double start = 1.0;
    double factor = 0.5;
    int count = 1;

    std::vector<double> values() const { return geometric_schedule(start, factor, count); }
};

struct RunConfig {
    std::string energy;
    double p = 2.0;
    double time_coeff_slope = 0.0;
    int n_steps = 0;
    int n_interior = 0;
    int n_channels = 1;
    double horizon = 1.0;
    double epsilon = 0.0;
    Schedule lambda_schedule{1e-1, 0.5, 10};
    Schedule eps_schedule{1.0, 0.5, 1};
    bool has_epsilon = false;
    bool has_eps_schedule = false;
    double outer_tol = 1e-8;
    int max_iter = 20000;
    double inner_tol = 1e-10;
    std::string noise = "zero";
    std::string u0 = "hat";
    std::string output_dir = ".";
    std::uint64_t seed = 0;
    double picard_tol = 1e-10;
    int picard_max = 50;
    std::size_t node_cap = ScenarioTree::default_node_cap;
    bool inject_gradient_bug = false;
};

inline const std::set<std::string>& known_keys()
{
    static const std::set<std::string> keys{
        "energy",     "p",           "time_slope", "n_steps",    "n_interior", "n_channels", "horizon",
        "epsilon",    "lambda_schedule", "eps_schedule", "outer_tol", "max_iter", "inner_tol", "noise",
        "u0",         "output_dir",  "seed",       "picard_tol", "picard_max", "node_cap",   "inject_gradient_bug"};
    return keys;
}

inline std::string trim(std::string s)
{
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

/// Adds one key=value assignment; later assignments override earlier ones.
inline void add_assignment(std::map<std::string, std::string>& kv, const std::string& text, const std::string& where)
{
    const auto eq = text.find('=');
    if (eq == std::string::npos) {
        throw ConfigError(where + ": expected key=value, got '" + text + "'");
    }
    const std::string key = trim(text.substr(0, eq));
    const std::string value = trim(text.substr(eq + 1));
    if (!known_keys().count(key)) {
        throw ConfigError(where + ": unknown key '" + key + "'");
    }
    kv[key] = value;
}

inline void read_config_file(std::map<std::string, std::string>& kv, const std::string& path)
{
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file '" + path + "'");
    }
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) {
            line.erase(hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        add_assignment(kv, line, path + ":" + std::to_string(lineno));
    }
}

inline double parse_real(const std::string& key, const std::string& text)
{
    try {
        std::size_t used = 0;
        const double value = std::stod(text, &used);
        if (used != text.size() || !std::isfinite(value)) {
            throw std::invalid_argument(text);
        }
        return value;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': not a real number: '" + text + "'");
    }
}

inline long long parse_integer(const std::string& key, const std::string& text)
{
    long long value = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || ptr != text.data() + text.size()) {
        throw ConfigError("key '" + key + "': not an integer: '" + text + "'");
    }
    return value;
}

/// start:factor:count with start > 0, 0 < factor < 1, count >= 1.
inline Schedule parse_schedule(const std::string& key, const std::string& text)
{
    std::vector<std::string> parts;
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, ':')) {
        parts.push_back(trim(part));
    }
    if (parts.size() != 3) {
        throw ConfigError("key '" + key + "': expected start:factor:count, got '" + text + "'");
    }
    Schedule s{parse_real(key, parts[0]), parse_real(key, parts[1]), static_cast<int>(parse_integer(key, parts[2]))};
    if (!(s.start > 0.0) || !(s.factor > 0.0 && s.factor < 1.0) || s.count < 1) {
        throw ConfigError("key '" + key + "': schedule needs start > 0, 0 < factor < 1, count >= 1");
    }
    return s;
}

enum class Command { solve, fb_solve, reference, sweep_eps, sweep_lambda, check };

inline RunConfig parse_config(const std::map<std::string, std::string>& kv, Command command)
{
    RunConfig cfg;
    auto get = [&](const char* key) -> const std::string* {
        const auto it = kv.find(key);
        return it == kv.end() ? nullptr : &it->second;
    };
    auto require = [&](const char* key) -> const std::string& {
        const std::string* value = get(key);
        if (!value) {
            throw ConfigError("missing required key '" + std::string(key) + "'");
        }
        return *value;
    };
    auto positive_int = [&](const char* key, const std::string& text) {
        const long long v = parse_integer(key, text);
        if (v < 1 || v > 1'000'000'000) {
            throw ConfigError("key '" + std::string(key) + "': must be a positive integer");
        }
        return static_cast<int>(v);
    };
    auto positive_real = [&](const char* key, const std::string& text) {
        const double v = parse_real(key, text);
        if (!(v > 0.0)) {
            throw ConfigError("key '" + std::string(key) + "': must be positive");
        }
        return v;
    };

    const bool defaults = command == Command::check;
    if (defaults) {
        cfg.energy = "quadratic_heat";
        cfg.n_steps = 3;
        cfg.n_interior = 4;
        cfg.epsilon = 0.5;
        cfg.has_epsilon = true;
        cfg.noise = "sine:0.5";
        cfg.u0 = "sine";
        cfg.lambda_schedule = {1e-1, 0.5, 3};
    }
    if (const auto* v = defaults ? get("energy") : &require("energy")) {
        cfg.energy = *v;
    }
    if (const auto* v = defaults ? get("n_steps") : &require("n_steps")) {
        cfg.n_steps = positive_int("n_steps", *v);
    }
    if (const auto* v = defaults ? get("n_interior") : &require("n_interior")) {
        cfg.n_interior = positive_int("n_interior", *v);
    }
    if (command == Command::sweep_eps) {
        (void)require("eps_schedule");
    } else if (command != Command::reference && !defaults) {
        (void)require("epsilon");
    }
    if (const auto* v = get("epsilon")) {
        cfg.epsilon = positive_real("epsilon", *v);
        cfg.has_epsilon = true;
    }
    if (const auto* v = get("eps_schedule")) {
        cfg.eps_schedule = parse_schedule("eps_schedule", *v);
        cfg.has_eps_schedule = true;
    }
    if (const auto* v = get("p")) {
        cfg.p = parse_real("p", *v);
    }
    if (const auto* v = get("time_slope")) {
        cfg.time_coeff_slope = parse_real("time_slope", *v);
    }
    if (const auto* v = get("n_channels")) {
        cfg.n_channels = positive_int("n_channels", *v);
    }
    if (const auto* v = get("horizon")) {
        cfg.horizon = positive_real("horizon", *v);
    }
    if (const auto* v = get("lambda_schedule")) {
        cfg.lambda_schedule = parse_schedule("lambda_schedule", *v);
    }
    if (const auto* v = get("outer_tol")) {
        cfg.outer_tol = positive_real("outer_tol", *v);
    }
    if (const auto* v = get("max_iter")) {
        cfg.max_iter = positive_int("max_iter", *v);
    }
    if (const auto* v = get("inner_tol")) {
        cfg.inner_tol = positive_real("inner_tol", *v);
    }
    if (const auto* v = get("noise")) {
        cfg.noise = *v;
    }
    if (const auto* v = get("u0")) {
        cfg.u0 = *v;
    }
    if (const auto* v = get("output_dir")) {
        cfg.output_dir = *v;
    }
    if (const auto* v = get("seed")) {
        const long long s = parse_integer("seed", *v);
        if (s < 0) {
            throw ConfigError("key 'seed': must be nonnegative");
        }
        cfg.seed = static_cast<std::uint64_t>(s);
    }
    if (const auto* v = get("picard_tol")) {
        cfg.picard_tol = positive_real("picard_tol", *v);
    }
    if (const auto* v = get("picard_max")) {
        cfg.picard_max = positive_int("picard_max", *v);
    }
    if (const auto* v = get("node_cap")) {
        cfg.node_cap = static_cast<std::size_t>(positive_int("node_cap", *v));
    }
    if (const auto* v = get("inject_gradient_bug")) {
        cfg.inject_gradient_bug = parse_integer("inject_gradient_bug", *v) != 0;
    }
    try {
        (void)parse_energy_kind(cfg.energy);
    } catch (const DomainError& e) {
        throw ConfigError(std::string("key 'energy': ") + e.what());
    }
    return cfg;
}

inline EnergyModel make_model(const RunConfig& cfg)
{
    try {
        return EnergyModel::make(parse_energy_kind(cfg.energy), cfg.p, {1.0, cfg.time_coeff_slope});
    } catch (const DomainError& e) {
        throw ConfigError(e.what());
    }
}

inline std::vector<double> read_csv_values(const std::string& key, const std::string& path)
{
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("key '" + key + "': cannot open '" + path + "'");
    }
    std::vector<double> values;
    std::string line;
    while (std::getline(in, line)) {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            cell = trim(cell);
            if (!cell.empty()) {
                values.push_back(parse_real(key, cell));
            }
        }
    }
    return values;
}

/// hat | sine | csv:<path> with M values.
inline Field make_initial_datum(const RunConfig& cfg, const Grid1D& grid)
{
    const std::string& spec = cfg.u0;
    if (spec == "hat") {
        return sample_field(grid, [](double x) { return 1.0 - std::abs(2.0 * x - 1.0); });
    }
    if (spec == "sine") {
        return sample_field(grid, [](double x) { return std::sin(std::numbers::pi * x); });
    }
    if (spec == "zero") {
        return Field(grid.n_interior, 0.0);
    }
    if (spec.rfind("csv:", 0) == 0) {
        Field u = read_csv_values("u0", spec.substr(4));
        if (u.size() != grid.n_interior) {
            throw ConfigError("key 'u0': expected " + std::to_string(grid.n_interior) + " values, got " +
                              std::to_string(u.size()));
        }
        return u;
    }
    throw ConfigError("key 'u0': expected hat | sine | zero | csv:<path>, got '" + spec + "'");
}

/// zero | const:<c> | sine:<c> | field:<path>, constant in time and node.
inline AdaptedProcess make_noise(const RunConfig& cfg, const TreePtr& tree, const Grid1D& grid)
{
    const std::string& spec = cfg.noise;
    Field profile(grid.n_interior, 0.0);
    if (spec == "zero") {
    } else if (spec.rfind("const:", 0) == 0) {
        const double c = parse_real("noise", spec.substr(6));
        profile.assign(grid.n_interior, c);
    } else if (spec.rfind("sine:", 0) == 0) {
        const double c = parse_real("noise", spec.substr(5));
        profile = sample_field(grid, [c](double x) { return c * std::sin(std::numbers::pi * x); });
    } else if (spec.rfind("field:", 0) == 0) {
        profile = read_csv_values("noise", spec.substr(6));
        if (profile.size() != grid.n_interior) {
            throw ConfigError("key 'noise': expected " + std::to_string(grid.n_interior) + " values, got " +
                              std::to_string(profile.size()));
        }
    } else {
        throw ConfigError("key 'noise': expected zero | const:<c> | sine:<c> | field:<path>, got '" + spec + "'");
    }
    return constant_noise(tree, grid, profile);
}

} // namespace wed::experiments
