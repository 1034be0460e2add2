#pragma once

// Ablation grids: every cell of a grid is trained and evaluated on the same
// data split for each seed.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "weakpair/datagen.hpp"
#include "weakpair/run_config.hpp"
#include "weakpair/trainer.hpp"

namespace weakpair::cli {

struct Cell {
    std::string id;
    train::AblationMode mode = train::AblationMode::UitcGitm;
    mining::MiningConfig mining;
    loss::LossWeights weights;
    loss::UncertaintyMapping mapping = loss::UncertaintyMapping::Exponential;

    train::TrainConfig apply(train::TrainConfig base) const;
};

// table5: baseline, uitc, gitm_neg3v4, gitm_neg3v6
// mappings: map_exponential, map_linear, map_power
// all: both
std::vector<Cell> grid_cells(Grid grid, const loss::LossWeights& weights);

struct CellResult {
    std::string cell;
    std::string seed;  // a seed, or "median"
    bool ok = true;
    std::string error;
    double r1 = 0.0, r5 = 0.0, r10 = 0.0, map = 0.0;
};

struct AblationResult {
    std::vector<CellResult> rows;     // cell-major within each seed
    std::vector<CellResult> medians;  // one per cell over successful seeds

    const CellResult* find(const std::string& cell, const std::string& seed) const;
};

struct SeedData {
    data::DatasetManifest train;
    data::DatasetManifest test;
};

// Fixed data for every seed, or data generated per seed from cfg.gen and
// cfg.split with gen.seed + s and split.seed + s.
SeedData seed_data(const RunConfig& cfg, std::uint64_t seed);

using Progress = std::function<void(const CellResult&)>;

// Each seed trains every cell with train.seed + s. A failing cell is recorded
// and the rest still run.
AblationResult run_ablation(const RunConfig& cfg,
                            const std::optional<SeedData>& fixed_data = std::nullopt,
                            const Progress& progress = {});

// cell,seed,status,r1,r5,r10,map
void write_ablation(const AblationResult& r, std::ostream& os);

}  // namespace weakpair::cli
