#include "weakpair/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "weakpair/text_io.hpp"

namespace weakpair::metrics {

std::size_t QueryRanking::relevant_count() const {
    return static_cast<std::size_t>(std::count(relevant.begin(), relevant.end(), true));
}

RankingResult rank(const Tensor& scores, std::span<const IdentityId> query_ids,
                   std::span<const IdentityId> gallery_ids, std::span<const double> u) {
    if (scores.rows() != query_ids.size() || scores.cols() != gallery_ids.size()) {
        throw ShapeError("scores " + scores.shape_string() + " vs " +
                         std::to_string(query_ids.size()) + " queries and " +
                         std::to_string(gallery_ids.size()) + " gallery items");
    }
    if (!u.empty() && u.size() != query_ids.size()) {
        throw ShapeError("uncertainty count does not match query count");
    }
    if (gallery_ids.empty()) throw std::invalid_argument("empty gallery");
    RankingResult r;
    r.queries.reserve(query_ids.size());
    for (std::size_t q = 0; q < query_ids.size(); ++q) {
        QueryRanking qr;
        qr.order.resize(gallery_ids.size());
        std::iota(qr.order.begin(), qr.order.end(), std::size_t{0});
        std::stable_sort(qr.order.begin(), qr.order.end(),
                         [&](std::size_t a, std::size_t b) { return scores(q, a) > scores(q, b); });
        qr.relevant.reserve(gallery_ids.size());
        for (std::size_t g : qr.order) qr.relevant.push_back(gallery_ids[g] == query_ids[q]);
        qr.u = u.empty() ? 0.0 : u[q];
        r.queries.push_back(std::move(qr));
    }
    return r;
}

QueryRanking ranked_query(const std::vector<bool>& relevant, double u) {
    QueryRanking q;
    q.order.resize(relevant.size());
    std::iota(q.order.begin(), q.order.end(), std::size_t{0});
    q.relevant = relevant;
    q.u = u;
    return q;
}

MeanMetric recall_at_k(const RankingResult& r, std::size_t k) {
    if (k < 1) throw std::invalid_argument("recall@K needs K >= 1");
    MeanMetric m;
    double hits = 0.0;
    for (const auto& q : r.queries) {
        if (q.relevant_count() == 0) {
            ++m.excluded;
            continue;
        }
        ++m.evaluated;
        const std::size_t top = std::min(k, q.relevant.size());
        if (std::find(q.relevant.begin(), q.relevant.begin() + static_cast<long>(top), true) !=
            q.relevant.begin() + static_cast<long>(top)) {
            hits += 1.0;
        }
    }
    m.value = m.evaluated ? hits / static_cast<double>(m.evaluated) : 0.0;
    return m;
}

std::optional<double> average_precision(const QueryRanking& q) {
    double sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < q.relevant.size(); ++i) {
        if (!q.relevant[i]) continue;
        ++hits;
        sum += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
    if (hits == 0) return std::nullopt;
    return sum / static_cast<double>(hits);
}

MeanMetric mean_average_precision(const RankingResult& r) {
    MeanMetric m;
    double sum = 0.0;
    for (const auto& q : r.queries) {
        const auto ap = average_precision(q);
        if (!ap) {
            ++m.excluded;
            continue;
        }
        ++m.evaluated;
        sum += *ap;
    }
    m.value = m.evaluated ? sum / static_cast<double>(m.evaluated) : 0.0;
    return m;
}

std::vector<double> default_recall_grid() {
    std::vector<double> grid;
    for (int i = 1; i <= 99; ++i) grid.push_back(i / 100.0);
    grid.push_back(1.0);
    return grid;
}

PRCurve pr_curve(const RankingResult& r, std::span<const double> recall_grid) {
    if (recall_grid.empty()) throw std::invalid_argument("empty recall grid");
    for (std::size_t i = 0; i < recall_grid.size(); ++i) {
        if (!(recall_grid[i] > 0.0 && recall_grid[i] <= 1.0) ||
            (i > 0 && !(recall_grid[i] > recall_grid[i - 1]))) {
            throw std::invalid_argument("recall grid must increase strictly within (0, 1]");
        }
    }
    PRCurve c;
    c.recall.assign(recall_grid.begin(), recall_grid.end());
    c.precision.assign(recall_grid.size(), 0.0);
    std::size_t evaluated = 0;
    for (const auto& q : r.queries) {
        const std::size_t total = q.relevant_count();
        if (total == 0) {
            ++c.excluded;
            continue;
        }
        ++evaluated;
        std::size_t level = 0;
        std::size_t hits = 0;
        for (std::size_t i = 0; i < q.relevant.size() && level < recall_grid.size(); ++i) {
            hits += q.relevant[i];
            const double recall = static_cast<double>(hits) / static_cast<double>(total);
            const double precision = static_cast<double>(hits) / static_cast<double>(i + 1);
            while (level < recall_grid.size() && recall >= recall_grid[level]) {
                c.precision[level++] += precision;
            }
        }
        for (; level < recall_grid.size(); ++level) {
            ++c.unreachable;
            c.precision[level] += static_cast<double>(total) /
                                  static_cast<double>(q.relevant.size());
        }
    }
    if (evaluated == 0) throw std::invalid_argument("pr curve: no query has a relevant item");
    for (double& p : c.precision) p /= static_cast<double>(evaluated);

    c.auc = c.recall[0] * c.precision[0];
    for (std::size_t i = 1; i < c.recall.size(); ++i) {
        c.auc += 0.5 * (c.recall[i] - c.recall[i - 1]) * (c.precision[i] + c.precision[i - 1]);
    }
    return c;
}

std::vector<double> default_coverage_grid() {
    std::vector<double> grid;
    for (int i = 1; i <= 20; ++i) grid.push_back(i / 20.0);
    return grid;
}

RiskCoverage risk_coverage(const RankingResult& r, std::span<const double> coverage_grid) {
    std::vector<std::size_t> order;
    for (std::size_t q = 0; q < r.queries.size(); ++q) {
        if (r.queries[q].relevant_count() > 0) order.push_back(q);
    }
    if (order.empty()) throw std::invalid_argument("risk-coverage: no evaluable query");
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return r.queries[a].u < r.queries[b].u;
    });
    const std::size_t n = order.size();
    RiskCoverage rc;
    for (double c : coverage_grid) {
        if (!(c > 0.0 && c <= 1.0)) throw std::invalid_argument("coverage must lie in (0, 1]");
        // 0.55 * 100 evaluates to 55.00000000000001; that must still keep 55 queries.
        const double want = c * static_cast<double>(n);
        const auto keep = std::clamp<std::size_t>(
            static_cast<std::size_t>(std::ceil(want - 1e-9 * want)), 1, n);
        std::size_t errors = 0;
        for (std::size_t i = 0; i < keep; ++i) errors += !r.queries[order[i]].top1_correct();
        rc.coverage.push_back(c);
        rc.risk.push_back(static_cast<double>(errors) / static_cast<double>(keep));
    }
    return rc;
}

ReliabilityStats reliability_stats(const RankingResult& r) {
    ReliabilityStats s;
    double correct = 0.0, incorrect = 0.0;
    for (const auto& q : r.queries) {
        if (q.relevant_count() == 0) continue;
        if (q.top1_correct()) {
            ++s.correct;
            correct += q.u;
        } else {
            ++s.incorrect;
            incorrect += q.u;
        }
    }
    if (s.correct) s.mean_u_correct = correct / static_cast<double>(s.correct);
    if (s.incorrect) s.mean_u_incorrect = incorrect / static_cast<double>(s.incorrect);
    return s;
}

Histogram histogram(std::span<const double> values, std::size_t bins, double lo, double hi) {
    if (bins == 0 || !(hi > lo)) throw std::invalid_argument("histogram needs bins and hi > lo");
    Histogram h{lo, hi, std::vector<std::size_t>(bins, 0)};
    const double width = (hi - lo) / static_cast<double>(bins);
    for (double v : values) {
        auto b = static_cast<long>(std::floor((v - lo) / width));
        b = std::clamp<long>(b, 0, static_cast<long>(bins) - 1);
        ++h.counts[static_cast<std::size_t>(b)];
    }
    return h;
}

MarginStats margin_stats(const Tensor& text_embeddings, const Tensor& image_embeddings,
                         std::span<const MarginTuple> tuples, std::size_t bins) {
    MarginStats s;
    auto cos = [&](std::size_t t, std::size_t i) {
        return dot(text_embeddings.row_span(t), image_embeddings.row_span(i));
    };
    for (const auto& m : tuples) {
        if (m.text >= text_embeddings.rows() || m.positive >= image_embeddings.rows() ||
            m.weak >= image_embeddings.rows() || m.negative >= image_embeddings.rows()) {
            throw std::out_of_range("margin tuple outside the embeddings");
        }
        const double neg = cos(m.text, m.negative);
        s.weak.push_back(cos(m.text, m.weak) - neg);
        s.positive.push_back(cos(m.text, m.positive) - neg);
    }
    if (!tuples.empty()) {
        const double n = static_cast<double>(tuples.size());
        s.mean_weak = std::accumulate(s.weak.begin(), s.weak.end(), 0.0) / n;
        s.mean_positive = std::accumulate(s.positive.begin(), s.positive.end(), 0.0) / n;
    }
    s.weak_hist = histogram(s.weak, bins);
    s.positive_hist = histogram(s.positive, bins);
    return s;
}

void write_metric_row(std::ostream& os, const std::string& metric, const std::string& param,
                      double value) {
    os << metric << ',' << param << ',' << format_double(value) << '\n';
}

void write_curve(std::ostream& os, const char* x_name, const char* y_name,
                 std::span<const double> x, std::span<const double> y) {
    os << x_name << ',' << y_name << '\n';
    for (std::size_t i = 0; i < x.size() && i < y.size(); ++i) {
        os << format_double(x[i]) << ',' << format_double(y[i]) << '\n';
    }
}

void write_histogram(std::ostream& os, const Histogram& h) {
    os << "bin_lo,bin_hi,count\n";
    const double width = (h.hi - h.lo) / static_cast<double>(h.counts.size());
    for (std::size_t b = 0; b < h.counts.size(); ++b) {
        os << format_double(h.lo + width * static_cast<double>(b)) << ','
           << format_double(h.lo + width * static_cast<double>(b + 1)) << ',' << h.counts[b]
           << '\n';
    }
}

}  // namespace weakpair::metrics
