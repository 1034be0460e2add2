#pragma once

// Ranking metrics and retrieval diagnostics. Queries are texts, the gallery is
// images, and a gallery item is relevant when it shares the query's identity.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "weakpair/datagen.hpp"
#include "weakpair/tensor.hpp"

namespace weakpair::metrics {

using data::IdentityId;

struct QueryRanking {
    std::vector<std::size_t> order;  // gallery indices, best first
    std::vector<bool> relevant;      // relevance in ranked order
    double u = 0.0;                  // query uncertainty
    std::size_t relevant_count() const;
    bool top1_correct() const { return !relevant.empty() && relevant.front(); }
};

struct RankingResult {
    std::vector<QueryRanking> queries;
};

// scores: queries x gallery. Sorted by descending score, ties to the lower
// gallery index. `u` may be empty (all zeros).
RankingResult rank(const Tensor& scores, std::span<const IdentityId> query_ids,
                   std::span<const IdentityId> gallery_ids, std::span<const double> u = {});

// Builds one query straight from a ranked relevance pattern.
QueryRanking ranked_query(const std::vector<bool>& relevant, double u = 0.0);

struct MeanMetric {
    double value = 0.0;
    std::size_t evaluated = 0;
    std::size_t excluded = 0;  // queries without any relevant gallery item
};

MeanMetric recall_at_k(const RankingResult& r, std::size_t k);

// Mean precision at the relevant ranks; empty when nothing is relevant.
std::optional<double> average_precision(const QueryRanking& q);
MeanMetric mean_average_precision(const RankingResult& r);

// 0.01, 0.02, ..., 0.99, 1.0
std::vector<double> default_recall_grid();

struct PRCurve {
    std::vector<double> recall;
    std::vector<double> precision;
    double auc = 0.0;
    std::size_t unreachable = 0;  // (query, level) cells that fell back to the full gallery
    std::size_t excluded = 0;
};

// Per query, precision at the shortest prefix reaching each recall level,
// averaged over queries. AUC is the trapezoid rule over the grid with the
// first precision held flat from recall 0.
PRCurve pr_curve(const RankingResult& r, std::span<const double> recall_grid);

// k / 20 for k = 1..20
std::vector<double> default_coverage_grid();

struct RiskCoverage {
    std::vector<double> coverage;
    std::vector<double> risk;
};

// Top-1 error among the ceil(c * N) lowest-u queries, ties to the lower query
// index. Queries without relevant items are left out.
RiskCoverage risk_coverage(const RankingResult& r, std::span<const double> coverage_grid);

struct ReliabilityStats {
    std::optional<double> mean_u_correct;
    std::optional<double> mean_u_incorrect;
    std::size_t correct = 0;
    std::size_t incorrect = 0;
};

ReliabilityStats reliability_stats(const RankingResult& r);

struct MarginTuple {
    std::size_t text = 0;      // row of the text embeddings
    std::size_t positive = 0;  // rows of the image embeddings
    std::size_t weak = 0;
    std::size_t negative = 0;
};

struct Histogram {
    double lo = -2.0;
    double hi = 2.0;
    std::vector<std::size_t> counts;
};

Histogram histogram(std::span<const double> values, std::size_t bins, double lo = -2.0,
                    double hi = 2.0);

struct MarginStats {
    std::vector<double> weak;      // s(T, I_w) - s(T, I-)
    std::vector<double> positive;  // s(T, I+) - s(T, I-)
    double mean_weak = 0.0;
    double mean_positive = 0.0;
    Histogram weak_hist;
    Histogram positive_hist;
};

inline constexpr std::size_t kMarginBins = 40;

// Embeddings are unit rows, so every margin lies in [-2, 2].
MarginStats margin_stats(const Tensor& text_embeddings, const Tensor& image_embeddings,
                         std::span<const MarginTuple> tuples, std::size_t bins = kMarginBins);

// CSV writers. Metric rows are (metric,param,value); curves are two columns.
void write_metric_row(std::ostream& os, const std::string& metric, const std::string& param,
                      double value);
void write_curve(std::ostream& os, const char* x_name, const char* y_name,
                 std::span<const double> x, std::span<const double> y);
void write_histogram(std::ostream& os, const Histogram& h);

}  // namespace weakpair::metrics
