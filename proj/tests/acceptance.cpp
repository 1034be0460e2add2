// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "metric_oracles.hpp"
#include "support.hpp"
#include "weakpair/ablation.hpp"
#include "weakpair/evaluation.hpp"
#include "weakpair/gradcheck.hpp"
#include "weakpair/gradcheck_suite.hpp"
#include "weakpair/losses.hpp"
#include "weakpair/metrics.hpp"
#include "weakpair/mining.hpp"
#include "weakpair/run_config.hpp"
#include "weakpair/trainer.hpp"

#ifndef ACCEPTANCE_CONFIG
#define ACCEPTANCE_CONFIG "tools/configs/table5.ini"
#endif

using namespace weakpair;
namespace oracle = weakpair::test::oracle;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

int failures = 0;

void report(int id, const char* name, const std::function<Outcome()>& body) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
        o = body();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    std::printf("%s %2d %-28s %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str(), secs);
    std::fflush(stdout);
    if (!o.pass) ++failures;
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c, d);
    return buf;
}

// The experiment config for criteria 7 to 9.
cli::RunConfig experiment() { return cli::load_config(ACCEPTANCE_CONFIG); }

// Full-method models, one per seed, trained exactly as the ablation cell does.
struct SeedRun {
    std::uint64_t seed = 0;
    cli::SeedData data;
    train::TrainConfig config;
    model::Model initial;
    model::Model trained;
    train::TrainLog log;
};

std::vector<SeedRun>& full_runs() {
    static std::vector<SeedRun> runs;
    if (!runs.empty()) return runs;
    const cli::RunConfig cfg = experiment();
    cli::Cell full;
    for (const auto& c : cli::grid_cells(cli::Grid::Table5, cfg.train.weights)) {
        if (c.id == "gitm_neg3v6") full = c;
    }
    for (std::uint64_t s : cfg.seeds) {
        SeedRun r;
        r.seed = s;
        r.data = cli::seed_data(cfg, s);
        r.config = full.apply(cfg.train);
        r.config.seed = cfg.train.seed + s;
        train::Trainer t(r.config, r.data.train);
        r.initial = t.model();
        t.run();
        r.trained = t.model();
        r.log = t.log();
        runs.push_back(std::move(r));
    }
    return runs;
}

metrics::EvalOptions eval_options(const SeedRun& r) {
    metrics::EvalOptions o;
    o.mapping = r.config.mapping;
    o.margin_seed = experiment().margin_seed;
    return o;
}

Outcome gradients() {
    const auto rep = grad::run_gradcheck_suite(grad::SuiteOptions{});
    std::size_t losses = 0;
    bool ok = true;
    std::string worst;
    double worst_err = 0.0;
    for (const auto& e : rep.entries) {
        if (e.name.rfind("loss:", 0) == 0) {
            ++losses;
            ok = ok && e.passed && e.points >= 100 && e.max_rel_error < 1e-4;
        }
        ok = ok && e.passed;
        if (e.max_rel_error >= worst_err) {
            worst_err = e.max_rel_error;
            worst = e.name;
        }
    }
    ok = ok && losses == 5 && rep.seconds < 120.0;
    return {ok, std::to_string(losses) + " objectives, worst " + worst + fmt(" %.2e", worst_err)};
}

Outcome detached_uncertainty() {
    Rng rng(2024);
    const model::ModelDims dims{6, 5, 7, 4, 3};
    std::size_t same = 0;
    const std::size_t trials = 100;
    for (std::size_t trial = 0; trial < trials; ++trial) {
        const model::Model m = model::init_params(500 + trial, dims, 0.05 + 0.5 * uniform01(rng));
        std::vector<Tensor> params;
        for (const Tensor* p : m.parameters()) params.push_back(*p);
        params.back() = Tensor::scalar(2.0 * uniform01(rng) - 1.0);
        const std::size_t n = 2 + uniform_index(rng, 5);
        const Tensor ri = test::random_tensor(n, 6, rng), rt = test::random_tensor(n, 5, rng);
        const Tensor riw = test::random_tensor(n, 6, rng), rtw = test::random_tensor(n, 5, rng);
        Tensor frozen;
        auto build = [&](grad::Graph& g, std::span<const grad::NodeId> ids, bool live) {
            auto nodes = model::bind_nodes(ids);
            auto fi = model::encode(g, nodes.image, g.constant(ri));
            auto ft = model::encode(g, nodes.text, g.constant(rt));
            auto fiw = model::encode(g, nodes.image, g.constant(riw));
            auto ftw = model::encode(g, nodes.text, g.constant(rtw));
            auto weak = loss::weak_itc_per_anchor(g, fi, ft, fiw, ftw, nodes.log_tau);
            grad::NodeId u;
            if (live) {
                u = loss::consistency_uncertainty(g, fi, ft, fiw, ftw, loss::UncertaintyMapping::Exponential).u_w;
                frozen = g.value(u);
            } else {
                u = g.constant(frozen);
            }
            return loss::uitc_loss(g, weak, u, nodes.log_gamma);
        };
        const auto a = grad::analytic_gradients(
            [&](grad::Graph& g, std::span<const grad::NodeId> ids) { return build(g, ids, true); }, params);
        const auto b = grad::analytic_gradients(
            [&](grad::Graph& g, std::span<const grad::NodeId> ids) { return build(g, ids, false); }, params);
        same += a == b ? 1 : 0;
    }
    return {same == trials, std::to_string(same) + "/" + std::to_string(trials) + " bit-identical"};
}

Outcome closed_forms() {
    const double ln2 = std::log(2.0);
    // Two anchors with identical image and text embeddings: every score is 1/2.
    const Tensor e = Tensor::from_rows({{1.0, 0.0}, {1.0, 0.0}});
    const double itc = loss::itc_loss(e, e, 0.07);
    const double uitc = loss::uitc_loss(1.0, loss::UncertaintyScore{0.0, 1.0}, 1.0);
    double worst_itm = 0.0;
    Rng rng(3);
    for (int i = 0; i < 1000; ++i) {
        const int p = uniform01(rng) < 0.5 ? 1 : 0;
        worst_itm = std::max(worst_itm, std::abs(loss::itm_term(0.5, p) - ln2));
    }
    const bool ok = std::abs(itc - 2.0 * ln2) <= 1e-9 && uitc == 2.0 && worst_itm <= 1e-12;
    return {ok, fmt("itc-2ln2 %.1e uitc %.17g itm-ln2 %.1e", itc - 2.0 * ln2, uitc, worst_itm)};
}

Outcome uncertainty_range() {
    const double lo = std::exp(-1.0), hi = std::exp(1.0);
    double min_u = std::numeric_limits<double>::infinity(), max_u = -min_u;
    std::size_t steps = 0;
    for (const auto& r : full_runs()) {
        for (const auto& s : r.log.steps) {
            min_u = std::min(min_u, s.losses.min_u_w);
            max_u = std::max(max_u, s.losses.max_u_w);
            ++steps;
        }
    }
    const std::vector<double> x{0.6, 0.8}, y{-0.8, 0.6};
    const double same = loss::consistency_uncertainty(x, y, x, y, loss::UncertaintyMapping::Exponential).u_w;
    const bool ok = steps > 0 && min_u >= lo - 1e-12 && max_u <= hi + 1e-12 && std::abs(same - lo) <= 1e-12;
    return {ok, std::to_string(steps) + " steps, u in " + fmt("[%.4f, %.4f], identical %.1e", min_u, max_u, same - lo)};
}

Outcome group_cardinality() {
    if (mining::MiningConfig::from_mode(mining::MiningMode::Neg3v4).k != 1 ||
        mining::MiningConfig::from_mode(mining::MiningMode::Neg3v6).k != 2) {
        return {false, "mode to K mapping"};
    }
    Rng rng(5);
    std::size_t groups = 0, bad = 0;
    for (int batch = 0; batch < 300; ++batch) {
        const std::size_t n = 3 + uniform_index(rng, 14);
        std::vector<data::IdentityId> ids(n);
        std::iota(ids.begin(), ids.end(), data::IdentityId{1000});
        shuffle(ids, rng);
        const Tensor sim = grad::cosine_matrix(test::unit_rows(n, 5, rng), test::unit_rows(n, 5, rng));
        for (auto mode : {mining::MiningMode::Neg3v4, mining::MiningMode::Neg3v6}) {
            const auto cfg = mining::MiningConfig::from_mode(mode);
            for (const auto& g : mining::build_groups(sim, ids, cfg)) {
                ++groups;
                try {
                    mining::validate_group(g, ids);
                } catch (const std::exception&) {
                    ++bad;
                    continue;
                }
                if (g.matched_count() != 3 || g.negative_count() != 2 + 2 * cfg.k) ++bad;
            }
        }
    }
    return {groups >= 1000 && bad == 0, std::to_string(groups) + " groups, " + std::to_string(bad) + " bad"};
}

Outcome ranking_oracles() {
    Rng rng(6);
    const auto rgrid = metrics::default_recall_grid();
    const auto cgrid = metrics::default_coverage_grid();
    std::size_t mismatches = 0;
    const int patterns = 10000;
    for (int trial = 0; trial < patterns; ++trial) {
        const std::size_t ng = 1 + uniform_index(rng, 12);
        const std::size_t nq = 1 + uniform_index(rng, 6);
        const std::size_t alphabet = 1 + uniform_index(rng, 4);
        std::vector<data::IdentityId> gids(ng), qids(nq);
        for (auto& id : gids) id = static_cast<data::IdentityId>(uniform_index(rng, alphabet));
        for (auto& id : qids) id = static_cast<data::IdentityId>(uniform_index(rng, alphabet + 1));
        Tensor scores(nq, ng);
        // Coarse values so ties are common.
        for (double& v : scores.data()) v = static_cast<double>(uniform_index(rng, 5)) / 4.0 - 0.5;
        std::vector<double> u(nq);
        for (double& x : u) x = static_cast<double>(uniform_index(rng, 4)) / 3.0;

        const auto r = metrics::rank(scores, qids, gids, u);
        std::vector<std::vector<bool>> rels;
        std::vector<double> eu;
        std::vector<bool> correct;
        double ap_sum = 0.0;
        std::vector<double> hits(11, 0.0);
        for (std::size_t q = 0; q < nq; ++q) {
            std::vector<double> row(ng);
            for (std::size_t j = 0; j < ng; ++j) row[j] = scores(q, j);
            const auto order = oracle::order_by_score(row);
            std::vector<bool> rel(ng);
            for (std::size_t i = 0; i < ng; ++i) rel[i] = gids[order[i]] == qids[q];
            if (r.queries[q].order != order || r.queries[q].relevant != rel) ++mismatches;
            const auto ap = oracle::average_precision(rel);
            if (!ap) continue;
            rels.push_back(rel);
            eu.push_back(u[q]);
            correct.push_back(rel[0]);
            ap_sum += *ap;
            for (std::size_t k = 1; k <= 10; ++k) hits[k] += oracle::hit_within(rel, k) ? 1.0 : 0.0;
        }
        const std::size_t ne = rels.size();
        const auto map = metrics::mean_average_precision(r);
        if (map.excluded != nq - ne) ++mismatches;
        if (ne == 0) continue;
        if (map.value != ap_sum / static_cast<double>(ne)) ++mismatches;
        for (std::size_t k : {1u, 5u, 10u}) {
            if (metrics::recall_at_k(r, k).value != hits[k] / static_cast<double>(ne)) ++mismatches;
        }
        const auto pr = metrics::pr_curve(r, rgrid);
        std::vector<double> want(rgrid.size(), 0.0);
        for (std::size_t l = 0; l < rgrid.size(); ++l) {
            for (const auto& rel : rels) want[l] += oracle::precision_at_recall(rel, rgrid[l]);
            want[l] /= static_cast<double>(ne);
            if (pr.precision[l] != want[l]) ++mismatches;
        }
        double auc = rgrid[0] * want[0];
        for (std::size_t l = 1; l < rgrid.size(); ++l) {
            auc += (rgrid[l] - rgrid[l - 1]) * (want[l] + want[l - 1]) / 2.0;
        }
        if (std::abs(pr.auc - auc) > 1e-12) ++mismatches;
        const auto rc = metrics::risk_coverage(r, cgrid);
        for (std::size_t k = 1; k <= 20; ++k) {
            if (rc.risk[k - 1] != oracle::risk_at(eu, correct, k, 20)) ++mismatches;
        }
    }
    return {mismatches == 0, std::to_string(patterns) + " patterns, " + std::to_string(mismatches) + " mismatches"};
}

Outcome ablation_ordering() {
    const cli::RunConfig cfg = experiment();
    const auto first = cli::seed_data(cfg, cfg.seeds.front());
    const std::size_t train_ids = data::group_by_identity(first.train.records).size();
    if (train_ids < 200 || cfg.seeds.size() < 5) return {false, "experiment too small"};
    const auto t0 = Clock::now();
    const auto res = cli::run_ablation(cfg);
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    auto med = [&](const char* cell) {
        const auto* m = res.find(cell, "median");
        return m && m->ok ? m->map : std::numeric_limits<double>::quiet_NaN();
    };
    const double base = med("baseline"), uitc = med("uitc"), v4 = med("gitm_neg3v4"), v6 = med("gitm_neg3v6");
    std::size_t wins = 0;
    for (std::uint64_t s : cfg.seeds) {
        const auto* b = res.find("baseline", std::to_string(s));
        const auto* f = res.find("gitm_neg3v6", std::to_string(s));
        if (b && f && b->ok && f->ok && f->map > b->map) ++wins;
    }
    // The per-seed full-method models used below must be the ablation's own.
    bool same_models = true;
    for (const auto& r : full_runs()) {
        const auto* f = res.find("gitm_neg3v6", std::to_string(r.seed));
        same_models = same_models && f && metrics::evaluate(r.trained, r.data.test, eval_options(r)).map.value == f->map;
    }
    const bool ok = base < uitc && uitc <= v6 && wins >= 4 && secs < 600.0 && same_models;
    return {ok, fmt("median mAP base %.5f uitc %.5f neg3v4 %.5f neg3v6 %.5f", base, uitc, v4, v6) + ", full>base " +
                    std::to_string(wins) + "/" + std::to_string(cfg.seeds.size()) + fmt(", %.0fs", secs) +
                    (same_models ? "" : ", model mismatch")};
}

Outcome reliability() {
    std::size_t ordered = 0, monotone = 0;
    std::string detail;
    for (const auto& r : full_runs()) {
        const auto ev = metrics::evaluate(r.trained, r.data.test, eval_options(r));
        const auto& rel = ev.reliability;
        if (rel.mean_u_correct && rel.mean_u_incorrect && *rel.mean_u_incorrect > *rel.mean_u_correct) ++ordered;
        double half = std::numeric_limits<double>::quiet_NaN(), full = half;
        for (std::size_t i = 0; i < ev.risk.coverage.size(); ++i) {
            if (ev.risk.coverage[i] == 0.5) half = ev.risk.risk[i];
            if (ev.risk.coverage[i] == 1.0) full = ev.risk.risk[i];
        }
        if (half <= full) ++monotone;
        detail += fmt(" [%.3f/%.3f %.3f<=%.3f]", rel.mean_u_correct.value_or(NAN), rel.mean_u_incorrect.value_or(NAN),
                      half, full);
    }
    const std::size_t n = full_runs().size();
    return {ordered >= 4 && monotone == n,
            "u_incorrect>u_correct " + std::to_string(ordered) + "/" + std::to_string(n) + ", risk(0.5)<=risk(1) " +
                std::to_string(monotone) + "/" + std::to_string(n) + detail};
}

Outcome margins() {
    std::size_t grown = 0;
    std::string detail;
    const std::uint64_t seed = experiment().margin_seed;
    for (const auto& r : full_runs()) {
        const auto before = metrics::evaluate_margins(r.initial, r.data.test, seed);
        const auto after = metrics::evaluate_margins(r.trained, r.data.test, seed);
        if (after.mean_positive > before.mean_positive && after.mean_weak > before.mean_weak) ++grown;
        detail += fmt(" [pos %.3f->%.3f weak %.3f->%.3f]", before.mean_positive, after.mean_positive,
                      before.mean_weak, after.mean_weak);
    }
    const std::size_t n = full_runs().size();
    return {grown == n, std::to_string(grown) + "/" + std::to_string(n) + detail};
}

Outcome reproducibility() {
    data::GenConfig g;
    g.num_identities = 40;
    g.seed = 11;
    const auto d = data::generate(g);
    train::TrainConfig c;
    c.epochs = 6;
    c.seed = 12;
    auto text = [](const train::Checkpoint& ck) {
        std::ostringstream os;
        train::save(ck, os);
        return os.str();
    };
    const std::string a = text(train::train(c, d).first);
    const std::string b = text(train::train(c, d).first);
    std::size_t resumed = 0;
    const std::vector<std::uint64_t> stops{1, 5, 9};
    for (std::uint64_t k : stops) {
        train::Trainer first(c, d);
        first.run(k);
        std::istringstream is(text(first.checkpoint()));
        train::Trainer second(train::load(is), d);
        second.run();
        resumed += text(second.checkpoint()) == a ? 1 : 0;
    }
    return {a == b && resumed == stops.size(),
            std::string(a == b ? "identical" : "different") + " checkpoints, " + std::to_string(resumed) + "/" +
                std::to_string(stops.size()) + " resumes identical"};
}

Outcome mapping_grid() {
    cli::RunConfig cfg;
    cfg.gen.num_identities = 60;
    cfg.gen.seed = 21;
    cfg.train.epochs = 10;
    cfg.grid = cli::Grid::Mappings;
    cfg.seeds = {0};
    const auto res = cli::run_ablation(cfg);
    std::size_t finite = 0;
    std::string detail;
    for (const auto& m : res.medians) {
        const bool ok = m.ok && std::isfinite(m.r1) && std::isfinite(m.r5) && std::isfinite(m.r10) &&
                        std::isfinite(m.map);
        finite += ok ? 1 : 0;
        detail += " " + m.cell + fmt(" %.4f", m.map);
    }
    return {res.medians.size() == 3 && res.rows.size() == 3 && finite == 3,
            std::to_string(finite) + "/" + std::to_string(res.medians.size()) + " finite:" + detail};
}

}  // namespace

int main() {
    report(1, "gradient check", gradients);
    report(2, "detached uncertainty", detached_uncertainty);
    report(3, "closed-form losses", closed_forms);
    report(4, "uncertainty range", uncertainty_range);
    report(5, "group cardinality", group_cardinality);
    report(6, "ranking metric oracles", ranking_oracles);
    report(7, "ablation ordering", ablation_ordering);
    report(8, "uncertainty reliability", reliability);
    report(9, "margins grow", margins);
    report(10, "reproducibility", reproducibility);
    report(11, "mapping grid", mapping_grid);
    std::printf("%d failed\n", failures);
    return failures == 0 ? 0 : 1;
}
