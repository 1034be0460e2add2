// weakpair: data generation, training, evaluation, ablations, gradient audit
// and diagnostic export.
//
// Exit codes: 0 success, 1 config error, 2 runtime or numeric error, 3 I/O error.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>

#include "weakpair/ablation.hpp"
#include "weakpair/evaluation.hpp"
#include "weakpair/gradcheck_suite.hpp"
#include "weakpair/run_config.hpp"
#include "weakpair/text_io.hpp"
#include "weakpair/trainer.hpp"

namespace fs = std::filesystem;
using namespace weakpair;

namespace {

enum Exit { kOk = 0, kConfig = 1, kRuntime = 2, kIo = 3 };

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out = ".";
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config, "config file ([section] key = value)");
    cmd->add_option("--seed", c.seed, "seed override for this command");
    cmd->add_option("--out", c.out, "output directory");
    cmd->add_option("--set", c.overrides, "override, section.key=value (repeatable)");
}

cli::RunConfig resolve(const Common& c) {
    cli::RunConfig cfg;
    if (!c.config.empty()) {
        if (!fs::exists(c.config)) throw IoError("config file not found: " + c.config);
        cfg = cli::load_config(c.config);
    }
    for (const auto& o : c.overrides) cli::apply_override(cfg, o);
    return cfg;
}

fs::path prepare_out(const Common& c) {
    std::error_code ec;
    fs::create_directories(c.out, ec);
    if (ec) throw IoError("cannot create output directory " + c.out + ": " + ec.message());
    return c.out;
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    return os;
}

void write_config(const cli::RunConfig& cfg, const fs::path& dir) {
    auto os = open_out(dir / "config.ini");
    cfg.write(os);
}

data::DatasetManifest read_dataset(const std::string& path) {
    if (path.empty()) throw cli::ConfigError("a dataset path is required");
    if (!fs::exists(path)) throw IoError("dataset not found: " + path);
    return data::read(fs::path(path));
}

train::Checkpoint read_checkpoint(const std::string& path) {
    if (!fs::exists(path)) throw IoError("checkpoint not found: " + path);
    return train::load(fs::path(path));
}

void write_losses(const train::TrainLog& log, const fs::path& path) {
    auto os = open_out(path);
    os << "step,lr,itc,uitc,itm,gitm_txt,gitm_img,total,mean_s_w,mean_u_w,min_u_w,max_u_w,"
          "clamped\n";
    for (const auto& s : log.steps) {
        const auto& r = s.losses;
        os << s.step << ',' << format_double(s.lr);
        for (double v : {r.itc, r.uitc, r.itm, r.gitm_txt, r.gitm_img, r.total, r.mean_s_w,
                         r.mean_u_w, r.min_u_w, r.max_u_w}) {
            os << ',' << format_double(v);
        }
        os << ',' << s.clamped << '\n';
    }
}

// --- commands ----------------------------------------------------------------

int cmd_gen(const Common& c) {
    cli::RunConfig cfg = resolve(c);
    if (c.seed) cfg.gen.seed = *c.seed;
    cfg.validate();
    const fs::path dir = prepare_out(c);
    auto [train_set, test_set] =
        data::split(data::generate(cfg.gen), cfg.train_fraction, cfg.split_seed);
    data::write(train_set, dir / "train.tsv");
    data::write(test_set, dir / "test.tsv");
    write_config(cfg, dir);
    std::cout << "wrote " << train_set.records.size() << " train and " << test_set.records.size()
              << " test records to " << dir.string() << '\n';
    return kOk;
}

struct TrainArgs {
    std::string data;
    std::string resume;
    std::optional<std::uint64_t> max_steps;
};

int cmd_train(const Common& c, const TrainArgs& a) {
    cli::RunConfig cfg = resolve(c);
    if (c.seed) cfg.train.seed = *c.seed;
    cfg.validate();
    const auto data = read_dataset(a.data);
    const fs::path dir = prepare_out(c);

    std::optional<train::Trainer> trainer;
    if (a.resume.empty()) {
        trainer.emplace(cfg.train, data);
    } else {
        trainer.emplace(read_checkpoint(a.resume), data);
        cfg.train = trainer->config();
    }
    write_config(cfg, dir);
    try {
        trainer->run(a.max_steps.value_or(UINT64_MAX));
    } catch (...) {
        write_losses(trainer->log(), dir / "losses.csv");
        throw;
    }
    train::save(trainer->checkpoint(), dir / "checkpoint.txt");
    write_losses(trainer->log(), dir / "losses.csv");
    const auto& log = trainer->log();
    std::cout << "trained to step " << trainer->step() << " of " << trainer->total_steps()
              << " in " << log.wall_seconds << " s";
    if (!log.steps.empty()) std::cout << ", final total loss " << log.steps.back().losses.total;
    std::cout << ", clamped probabilities " << log.clamped_total << '\n';
    return kOk;
}

struct EvalArgs {
    std::string checkpoint;
    std::string data;
    std::string train_data;
};

void warn_identity_overlap(const data::DatasetManifest& test, const std::string& train_path) {
    const auto train_set = read_dataset(train_path);
    std::set<data::IdentityId> train_ids;
    for (const auto& r : train_set.records) train_ids.insert(r.identity);
    std::set<data::IdentityId> shared;
    for (const auto& r : test.records) {
        if (train_ids.count(r.identity)) shared.insert(r.identity);
    }
    if (!shared.empty()) {
        std::cerr << "warning: " << shared.size()
                  << " identities appear in both the train and the test set\n";
    }
}

int cmd_eval(const Common& c, const EvalArgs& a, bool diag) {
    cli::RunConfig cfg = resolve(c);
    if (c.seed) cfg.margin_seed = *c.seed;
    cfg.validate();
    const auto ckpt = read_checkpoint(a.checkpoint);
    const auto test = read_dataset(a.data);
    if (!a.train_data.empty()) warn_identity_overlap(test, a.train_data);
    cfg.train = ckpt.config;
    const fs::path dir = prepare_out(c);
    write_config(cfg, dir);

    metrics::EvalOptions opts;
    opts.mapping = ckpt.config.mapping;
    opts.margin_seed = cfg.margin_seed;
    const auto ev = metrics::evaluate(ckpt.model, test, opts);
    metrics::write_evaluation(ev, dir);
    if (diag) {
        // Margins of the untrained model with the same seed, for the before/after comparison.
        const auto init = model::init_params(ckpt.config.seed, train::model_dims(ckpt.config, test),
                                             ckpt.config.initial_tau);
        const auto m0 = metrics::evaluate_margins(init, test, cfg.margin_seed);
        {
            auto os = open_out(dir / "margins_weak_init.csv");
            metrics::write_histogram(os, m0.weak_hist);
        }
        {
            auto os = open_out(dir / "margins_positive_init.csv");
            metrics::write_histogram(os, m0.positive_hist);
        }
        auto os = open_out(dir / "margin_means.csv");
        os << "metric,param,value\n";
        metrics::write_metric_row(os, "mean_margin_positive", "init", m0.mean_positive);
        metrics::write_metric_row(os, "mean_margin_positive", "trained", ev.margins.mean_positive);
        metrics::write_metric_row(os, "mean_margin_weak", "init", m0.mean_weak);
        metrics::write_metric_row(os, "mean_margin_weak", "trained", ev.margins.mean_weak);
    }
    std::cout << "R@1 " << ev.recall1.value << "  R@5 " << ev.recall5.value << "  R@10 "
              << ev.recall10.value << "  mAP " << ev.map.value << "  PR-AUC " << ev.pr.auc << '\n';
    return kOk;
}

struct AblateArgs {
    std::string data;
    std::string test_data;
};

int cmd_ablate(const Common& c, const AblateArgs& a) {
    cli::RunConfig cfg = resolve(c);
    if (c.seed) cfg.train.seed = *c.seed;
    cfg.validate();
    std::optional<cli::SeedData> fixed;
    if (!a.data.empty() || !a.test_data.empty()) {
        if (a.data.empty() || a.test_data.empty()) {
            throw cli::ConfigError("--data and --test-data must be given together");
        }
        fixed = cli::SeedData{read_dataset(a.data), read_dataset(a.test_data)};
    }
    const fs::path dir = prepare_out(c);
    write_config(cfg, dir);
    const auto result = cli::run_ablation(cfg, fixed, [](const cli::CellResult& r) {
        std::cout << r.cell << " seed " << r.seed << ": ";
        if (r.ok) std::cout << "mAP " << r.map << " R@1 " << r.r1 << '\n';
        else std::cout << "failed: " << r.error << '\n';
    });
    auto os = open_out(dir / "ablation.csv");
    cli::write_ablation(result, os);
    for (const auto& m : result.medians) {
        std::cout << "median " << m.cell << ": mAP " << m.map << " R@1 " << m.r1 << '\n';
    }
    return kOk;
}

int cmd_gradcheck(const Common& c) {
    cli::RunConfig cfg = resolve(c);
    if (c.seed) cfg.gradcheck.seed = *c.seed;
    cfg.validate();
    const auto report = grad::run_gradcheck_suite(cfg.gradcheck);
    grad::write_report(report, std::cout);
    if (c.out != ".") {
        const fs::path dir = prepare_out(c);
        write_config(cfg, dir);
        auto os = open_out(dir / "gradcheck.csv");
        grad::write_report(report, os);
    }
    std::cout << (report.passed() ? "PASS" : "FAIL") << " in " << report.seconds << " s\n";
    return report.passed() ? kOk : kRuntime;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"weak-pair metric learning on synthetic cross-modal data"};
    app.require_subcommand(1);

    Common gen_c, train_c, eval_c, diag_c, ablate_c, gc_c;
    TrainArgs train_a;
    EvalArgs eval_a, diag_a;
    AblateArgs ablate_a;

    auto* gen = app.add_subcommand("gen", "generate train/test datasets");
    add_common(gen, gen_c);

    auto* trn = app.add_subcommand("train", "train a model");
    add_common(trn, train_c);
    trn->add_option("--data", train_a.data, "training dataset")->required();
    trn->add_option("--checkpoint", train_a.resume, "resume from this checkpoint");
    trn->add_option("--max-steps", train_a.max_steps, "stop before this global step");

    auto* evl = app.add_subcommand("eval", "evaluate a checkpoint on a test set");
    add_common(evl, eval_c);
    evl->add_option("--checkpoint", eval_a.checkpoint, "checkpoint file")->required();
    evl->add_option("--data", eval_a.data, "test dataset")->required();
    evl->add_option("--train-data", eval_a.train_data, "train dataset, to check identity overlap");

    auto* dg = app.add_subcommand("diag", "export PR, risk-coverage, uncertainty and margin data");
    add_common(dg, diag_c);
    dg->add_option("--checkpoint", diag_a.checkpoint, "checkpoint file")->required();
    dg->add_option("--data", diag_a.data, "test dataset")->required();

    auto* abl = app.add_subcommand("ablate", "run an ablation grid");
    add_common(abl, ablate_c);
    abl->add_option("--data", ablate_a.data, "fixed training dataset");
    abl->add_option("--test-data", ablate_a.test_data, "fixed test dataset");

    auto* gc = app.add_subcommand("gradcheck", "check every gradient against finite differences");
    add_common(gc, gc_c);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfig;
    }

    try {
        if (*gen) return cmd_gen(gen_c);
        if (*trn) return cmd_train(train_c, train_a);
        if (*evl) return cmd_eval(eval_c, eval_a, false);
        if (*dg) return cmd_eval(diag_c, diag_a, true);
        if (*abl) return cmd_ablate(ablate_c, ablate_a);
        if (*gc) return cmd_gradcheck(gc_c);
    } catch (const cli::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfig;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << '\n';
        return kIo;
    } catch (const data::FormatError& e) {
        std::cerr << "dataset format error: " << e.what() << '\n';
        return kIo;
    } catch (const train::CheckpointFormatError& e) {
        std::cerr << "checkpoint format error: " << e.what() << '\n';
        return kIo;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kRuntime;
    }
    return kRuntime;
}
