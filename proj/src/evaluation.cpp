#include "weakpair/evaluation.hpp"

#include <fstream>

#include "weakpair/graph.hpp"
#include "weakpair/random.hpp"
#include "weakpair/text_io.hpp"

namespace weakpair::metrics {

namespace {

struct Encoded {
    Tensor image;
    Tensor text;
    std::vector<IdentityId> ids;
    std::vector<std::size_t> weak;  // record index of each record's weak partner
};

Encoded encode_all(const model::Model& m, const data::DatasetManifest& test) {
    const auto& recs = test.records;
    if (recs.empty()) throw std::invalid_argument("evaluation set is empty");
    Tensor raw_i(recs.size(), recs[0].image_raw.size());
    Tensor raw_t(recs.size(), recs[0].text_raw.size());
    Encoded e;
    for (std::size_t r = 0; r < recs.size(); ++r) {
        std::copy(recs[r].image_raw.begin(), recs[r].image_raw.end(), raw_i.row_span(r).begin());
        std::copy(recs[r].text_raw.begin(), recs[r].text_raw.end(), raw_t.row_span(r).begin());
        e.ids.push_back(recs[r].identity);
    }
    e.image = model::encode(m, model::Modality::Image, raw_i).embeddings;
    e.text = model::encode(m, model::Modality::Text, raw_t).embeddings;

    e.weak.resize(recs.size());
    for (const auto& [id, rows] : data::group_by_identity(recs)) {
        for (std::size_t k = 0; k < rows.size(); ++k) e.weak[rows[k]] = rows[(k + 1) % rows.size()];
    }
    return e;
}

std::vector<MarginTuple> margin_tuples(const Encoded& e, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<MarginTuple> tuples;
    const std::size_t n = e.ids.size();
    for (std::size_t r = 0; r < n; ++r) {
        std::size_t neg = r;
        // Rejection draw; an evaluation set with a single identity has no negatives.
        for (std::size_t tries = 0; e.ids[neg] == e.ids[r]; ++tries) {
            if (tries > 64 * n) throw std::invalid_argument("margins need two identities");
            neg = uniform_index(rng, n);
        }
        tuples.push_back({r, r, e.weak[r], neg});
    }
    return tuples;
}

}  // namespace

Evaluation evaluate(const model::Model& m, const data::DatasetManifest& test,
                    const EvalOptions& opts) {
    const Encoded e = encode_all(m, test);
    std::vector<double> u(e.ids.size());
    for (std::size_t r = 0; r < u.size(); ++r) {
        const std::size_t w = e.weak[r];
        u[r] = loss::consistency_uncertainty(e.image.row_span(r), e.text.row_span(r),
                                             e.image.row_span(w), e.text.row_span(w), opts.mapping)
                   .u_w;
    }
    Evaluation ev;
    ev.ranking = rank(grad::cosine_matrix(e.text, e.image), e.ids, e.ids, u);
    ev.recall1 = recall_at_k(ev.ranking, 1);
    ev.recall5 = recall_at_k(ev.ranking, 5);
    ev.recall10 = recall_at_k(ev.ranking, 10);
    ev.map = mean_average_precision(ev.ranking);
    ev.pr = pr_curve(ev.ranking, default_recall_grid());
    ev.risk = risk_coverage(ev.ranking, default_coverage_grid());
    ev.reliability = reliability_stats(ev.ranking);
    ev.margins = margin_stats(e.text, e.image, margin_tuples(e, opts.margin_seed));
    return ev;
}

MarginStats evaluate_margins(const model::Model& m, const data::DatasetManifest& test,
                             std::uint64_t margin_seed) {
    const Encoded e = encode_all(m, test);
    return margin_stats(e.text, e.image, margin_tuples(e, margin_seed));
}

namespace {

std::ofstream open_csv(const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
    return os;
}

}  // namespace

void write_evaluation(const Evaluation& e, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    {
        auto os = open_csv(dir / "metrics.csv");
        os << "metric,param,value\n";
        write_metric_row(os, "recall", "1", e.recall1.value);
        write_metric_row(os, "recall", "5", e.recall5.value);
        write_metric_row(os, "recall", "10", e.recall10.value);
        write_metric_row(os, "map", "", e.map.value);
        write_metric_row(os, "excluded_queries", "", static_cast<double>(e.map.excluded));
        write_metric_row(os, "pr_auc", "", e.pr.auc);
        write_metric_row(os, "pr_unreachable", "", static_cast<double>(e.pr.unreachable));
        for (std::size_t i = 0; i < e.risk.coverage.size(); ++i) {
            write_metric_row(os, "risk", format_double(e.risk.coverage[i]), e.risk.risk[i]);
        }
        if (e.reliability.mean_u_correct) {
            write_metric_row(os, "mean_u_correct", "", *e.reliability.mean_u_correct);
        }
        if (e.reliability.mean_u_incorrect) {
            write_metric_row(os, "mean_u_incorrect", "", *e.reliability.mean_u_incorrect);
        }
        write_metric_row(os, "count_correct", "", static_cast<double>(e.reliability.correct));
        write_metric_row(os, "count_incorrect", "", static_cast<double>(e.reliability.incorrect));
        write_metric_row(os, "mean_margin_positive", "", e.margins.mean_positive);
        write_metric_row(os, "mean_margin_weak", "", e.margins.mean_weak);
        if (!os) throw std::runtime_error("write failed: metrics.csv");
    }
    {
        auto os = open_csv(dir / "pr_curve.csv");
        write_curve(os, "recall", "precision", e.pr.recall, e.pr.precision);
    }
    {
        auto os = open_csv(dir / "risk_coverage.csv");
        write_curve(os, "coverage", "risk", e.risk.coverage, e.risk.risk);
    }
    {
        auto os = open_csv(dir / "margins_weak.csv");
        write_histogram(os, e.margins.weak_hist);
    }
    {
        auto os = open_csv(dir / "margins_positive.csv");
        write_histogram(os, e.margins.positive_hist);
    }
    {
        auto os = open_csv(dir / "uncertainty.csv");
        os << "query,u,top1_correct\n";
        for (std::size_t q = 0; q < e.ranking.queries.size(); ++q) {
            os << q << ',' << format_double(e.ranking.queries[q].u) << ','
               << (e.ranking.queries[q].top1_correct() ? 1 : 0) << '\n';
        }
    }
}

}  // namespace weakpair::metrics
