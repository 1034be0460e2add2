#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "weakpair/datagen.hpp"
#include "weakpair/encoders.hpp"
#include "weakpair/losses.hpp"
#include "weakpair/metrics.hpp"

namespace weakpair::metrics {

struct EvalOptions {
    loss::UncertaintyMapping mapping = loss::UncertaintyMapping::Exponential;
    std::uint64_t margin_seed = 0;  // picks the negative image of each margin tuple
};

struct Evaluation {
    RankingResult ranking;
    MeanMetric recall1, recall5, recall10;
    MeanMetric map;
    PRCurve pr;
    RiskCoverage risk;
    ReliabilityStats reliability;
    MarginStats margins;
};

// Every test text queries every test image by cosine similarity.
//
// A query's uncertainty comes from its record and the next record of the same
// identity (cyclic over the identity's records, itself for a single record),
// the same consistency score used in training. The margin tuple of record r is
// (T_r, I_r, I_weak(r), I_neg) with I_neg a seeded draw from another identity.
Evaluation evaluate(const model::Model& m, const data::DatasetManifest& test,
                    const EvalOptions& opts = {});

// Only the margin diagnostics, used to compare a model before and after training.
MarginStats evaluate_margins(const model::Model& m, const data::DatasetManifest& test,
                             std::uint64_t margin_seed = 0);

// metrics.csv, pr_curve.csv, risk_coverage.csv, margins_weak.csv, margins_positive.csv
void write_evaluation(const Evaluation& e, const std::filesystem::path& dir);

}  // namespace weakpair::metrics
