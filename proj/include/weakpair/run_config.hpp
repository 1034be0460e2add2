#pragma once

// Experiment configuration shared by every command.
//
// File format: `[section]` headers followed by `key = value` lines; `#` starts
// a comment. Overrides use `section.key=value`. Unknown sections and keys are
// errors.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "weakpair/datagen.hpp"
#include "weakpair/gradcheck_suite.hpp"
#include "weakpair/trainer.hpp"

namespace weakpair::cli {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Grid { Table5, Mappings, All };

const char* grid_name(Grid g);
Grid parse_grid(std::string_view name);

struct RunConfig {
    data::GenConfig gen;
    double train_fraction = 0.8;
    std::uint64_t split_seed = 0;
    train::TrainConfig train;
    std::uint64_t margin_seed = 0;
    Grid grid = Grid::Table5;
    std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
    grad::SuiteOptions gradcheck;

    // `key` is "section.key". Throws ConfigError.
    void set(const std::string& key, const std::string& value);
    void validate() const;
    // Fully resolved config in the file format.
    void write(std::ostream& os) const;
};

// Applies a config file on top of `base`.
RunConfig parse_config(std::istream& is, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});

// "section.key=value"
void apply_override(RunConfig& cfg, const std::string& assignment);

}  // namespace weakpair::cli
