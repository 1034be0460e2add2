#include "weakpair/ablation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "weakpair/evaluation.hpp"
#include "weakpair/text_io.hpp"

namespace weakpair::cli {

train::TrainConfig Cell::apply(train::TrainConfig base) const {
    base.ablation_mode = mode;
    base.mining = mining;
    base.weights = weights;
    base.mapping = mapping;
    return base;
}

std::vector<Cell> grid_cells(Grid grid, const loss::LossWeights& weights) {
    using mining::MiningConfig;
    using mining::MiningMode;
    const auto neg3v6 = MiningConfig::from_mode(MiningMode::Neg3v6);
    std::vector<Cell> cells;
    if (grid == Grid::Table5 || grid == Grid::All) {
        cells.push_back({"baseline", train::AblationMode::Baseline, neg3v6, weights,
                         loss::UncertaintyMapping::Exponential});
        cells.push_back({"uitc", train::AblationMode::Uitc, neg3v6, weights,
                         loss::UncertaintyMapping::Exponential});
        cells.push_back({"gitm_neg3v4", train::AblationMode::UitcGitm,
                         MiningConfig::from_mode(MiningMode::Neg3v4), weights,
                         loss::UncertaintyMapping::Exponential});
        cells.push_back({"gitm_neg3v6", train::AblationMode::UitcGitm, neg3v6, weights,
                         loss::UncertaintyMapping::Exponential});
    }
    if (grid == Grid::Mappings || grid == Grid::All) {
        for (auto m : {loss::UncertaintyMapping::Exponential, loss::UncertaintyMapping::Linear,
                       loss::UncertaintyMapping::Power}) {
            cells.push_back({std::string("map_") + loss::mapping_name(m),
                             train::AblationMode::UitcGitm, neg3v6, weights, m});
        }
    }
    return cells;
}

const CellResult* AblationResult::find(const std::string& cell, const std::string& seed) const {
    const auto& pool = seed == "median" ? medians : rows;
    for (const auto& r : pool) {
        if (r.cell == cell && r.seed == seed) return &r;
    }
    return nullptr;
}

SeedData seed_data(const RunConfig& cfg, std::uint64_t seed) {
    data::GenConfig gen = cfg.gen;
    gen.seed += seed;
    auto [train_set, test_set] =
        data::split(data::generate(gen), cfg.train_fraction, cfg.split_seed + seed);
    return {std::move(train_set), std::move(test_set)};
}

namespace {

double median(std::vector<double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

AblationResult run_ablation(const RunConfig& cfg, const std::optional<SeedData>& fixed_data,
                            const Progress& progress) {
    const auto cells = grid_cells(cfg.grid, cfg.train.weights);
    AblationResult result;
    for (std::uint64_t s : cfg.seeds) {
        std::optional<SeedData> generated;
        if (!fixed_data) generated = seed_data(cfg, s);
        const SeedData& d = fixed_data ? *fixed_data : *generated;
        for (const Cell& cell : cells) {
            CellResult row;
            row.cell = cell.id;
            row.seed = std::to_string(s);
            try {
                train::TrainConfig tc = cell.apply(cfg.train);
                tc.seed = cfg.train.seed + s;
                train::Trainer trainer(tc, d.train);
                trainer.run();
                metrics::EvalOptions opts;
                opts.mapping = tc.mapping;
                opts.margin_seed = cfg.margin_seed;
                const auto ev = metrics::evaluate(trainer.model(), d.test, opts);
                row.r1 = ev.recall1.value;
                row.r5 = ev.recall5.value;
                row.r10 = ev.recall10.value;
                row.map = ev.map.value;
            } catch (const std::exception& e) {
                row.ok = false;
                row.error = e.what();
                row.r1 = row.r5 = row.r10 = row.map = std::numeric_limits<double>::quiet_NaN();
            }
            if (progress) progress(row);
            result.rows.push_back(std::move(row));
        }
    }
    for (const Cell& cell : cells) {
        std::vector<double> r1, r5, r10, map;
        for (const auto& row : result.rows) {
            if (row.cell != cell.id || !row.ok) continue;
            r1.push_back(row.r1);
            r5.push_back(row.r5);
            r10.push_back(row.r10);
            map.push_back(row.map);
        }
        CellResult m;
        m.cell = cell.id;
        m.seed = "median";
        m.ok = !map.empty();
        if (!m.ok) m.error = "no successful seed";
        m.r1 = median(r1);
        m.r5 = median(r5);
        m.r10 = median(r10);
        m.map = median(map);
        result.medians.push_back(std::move(m));
    }
    return result;
}

void write_ablation(const AblationResult& r, std::ostream& os) {
    os << "cell,seed,status,r1,r5,r10,map\n";
    auto line = [&os](const CellResult& row) {
        std::string status = row.ok ? "ok" : "error: " + row.error;
        std::replace(status.begin(), status.end(), ',', ';');
        std::replace(status.begin(), status.end(), '\n', ' ');
        os << row.cell << ',' << row.seed << ',' << status << ',' << format_double(row.r1) << ','
           << format_double(row.r5) << ',' << format_double(row.r10) << ','
           << format_double(row.map) << '\n';
    };
    for (const auto& row : r.rows) line(row);
    for (const auto& row : r.medians) line(row);
}

}  // namespace weakpair::cli
