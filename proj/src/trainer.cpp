#include "weakpair/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "weakpair/text_io.hpp"

namespace weakpair::train {

using grad::Graph;
using grad::NodeId;

namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

// Keeps the batch/weak-pair stream apart from the parameter initialization,
// which is seeded with the plain seed.
constexpr std::uint64_t kStreamSalt = 0x9e3779b97f4a7c15ULL;

// log_tau and log_gamma are not decayed.
constexpr std::size_t kFirstUndecayedParam = 12;

std::size_t to_count(const std::string& v, const std::string& key) {
    const long long n = parse_int(v, key);
    if (n < 0) throw std::invalid_argument(key + " must be nonnegative");
    return static_cast<std::size_t>(n);
}

}  // namespace

const char* ablation_name(AblationMode mode) {
    switch (mode) {
        case AblationMode::Baseline: return "baseline";
        case AblationMode::Uitc: return "uitc";
        case AblationMode::UitcGitm: return "uitc_gitm";
    }
    return "uitc_gitm";
}

AblationMode parse_ablation(std::string_view name) {
    if (name == "baseline") return AblationMode::Baseline;
    if (name == "uitc") return AblationMode::Uitc;
    if (name == "uitc_gitm") return AblationMode::UitcGitm;
    throw std::invalid_argument("unknown ablation mode '" + std::string(name) + "'");
}

void TrainConfig::validate() const {
    if (batch_size < 2) throw std::invalid_argument("batch_size must be >= 2");
    if (!(base_lr > 0.0) || !std::isfinite(base_lr)) {
        throw std::invalid_argument("base_lr must be positive");
    }
    if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be nonnegative");
    if (!(weights.alpha >= 0.0) || !std::isfinite(weights.alpha) || !(weights.beta >= 0.0) ||
        !std::isfinite(weights.beta)) {
        throw std::invalid_argument("loss weights must be finite and nonnegative");
    }
    if (embed_dim == 0 || hidden_dim == 0 || head_hidden_dim == 0) {
        throw std::invalid_argument("model dimensions must be positive");
    }
    if (!(initial_tau > 0.0)) throw std::invalid_argument("initial_tau must be positive");
    mining.validate();
}

std::vector<std::pair<std::string, std::string>> TrainConfig::to_pairs() const {
    return {
        {"epochs", std::to_string(epochs)},
        {"batch_size", std::to_string(batch_size)},
        {"base_lr", format_shortest(base_lr)},
        {"warmup_steps", std::to_string(warmup_steps)},
        {"weight_decay", format_shortest(weight_decay)},
        {"seed", std::to_string(seed)},
        {"alpha", format_shortest(weights.alpha)},
        {"beta", format_shortest(weights.beta)},
        {"mining_mode", mining::mode_name(mining.mode)},
        {"k", std::to_string(mining.k)},
        {"mapping", loss::mapping_name(mapping)},
        {"embed_dim", std::to_string(embed_dim)},
        {"hidden_dim", std::to_string(hidden_dim)},
        {"head_hidden_dim", std::to_string(head_hidden_dim)},
        {"initial_tau", format_shortest(initial_tau)},
        {"ablation_mode", ablation_name(ablation_mode)},
    };
}

void TrainConfig::set(const std::string& key, const std::string& value) {
    if (key == "epochs") epochs = to_count(value, key);
    else if (key == "batch_size") batch_size = to_count(value, key);
    else if (key == "base_lr") base_lr = parse_double(value, key);
    else if (key == "warmup_steps") warmup_steps = to_count(value, key);
    else if (key == "weight_decay") weight_decay = parse_double(value, key);
    else if (key == "seed") seed = std::stoull(value);
    else if (key == "alpha") weights.alpha = parse_double(value, key);
    else if (key == "beta") weights.beta = parse_double(value, key);
    else if (key == "mining_mode") {
        mining.mode = mining::parse_mode(value);
        if (mining.mode == mining::MiningMode::Neg3v4) mining.k = 1;
        if (mining.mode == mining::MiningMode::Neg3v6) mining.k = 2;
    } else if (key == "k") mining.k = to_count(value, key);
    else if (key == "mapping") mapping = loss::parse_mapping(value);
    else if (key == "embed_dim") embed_dim = to_count(value, key);
    else if (key == "hidden_dim") hidden_dim = to_count(value, key);
    else if (key == "head_hidden_dim") head_hidden_dim = to_count(value, key);
    else if (key == "initial_tau") initial_tau = parse_double(value, key);
    else if (key == "ablation_mode") ablation_mode = parse_ablation(value);
    else throw std::invalid_argument("unknown train key '" + key + "'");
}

double step_lr(std::uint64_t step, const TrainConfig& cfg, std::uint64_t total_steps) {
    const double base = cfg.base_lr;
    if (step < cfg.warmup_steps) {
        return base * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
    }
    const std::uint64_t last = total_steps == 0 ? 0 : total_steps - 1;
    if (last <= cfg.warmup_steps) return base;
    const double frac = static_cast<double>(std::min(step, last) - cfg.warmup_steps) /
                        static_cast<double>(last - cfg.warmup_steps);
    return base + (base / 10.0 - base) * frac;
}

model::ModelDims model_dims(const TrainConfig& cfg, const data::DatasetManifest& data) {
    model::ModelDims d;
    if (!data.records.empty()) {
        d.image_input = data.records.front().image_raw.size();
        d.text_input = data.records.front().text_raw.size();
    } else {
        d.image_input = data.gen_config.raw_dim_image;
        d.text_input = data.gen_config.raw_dim_text;
    }
    d.hidden = cfg.hidden_dim;
    d.embed = cfg.embed_dim;
    d.head_hidden = cfg.head_hidden_dim;
    return d;
}

// ---------------------------------------------------------------------------

Trainer::Trainer(const TrainConfig& cfg, const data::DatasetManifest& train_data)
    : cfg_(cfg), data_(&train_data), rng_(cfg.seed ^ kStreamSalt) {
    cfg_.validate();
    index_data();
    model_ = model::init_params(cfg_.seed, model_dims(cfg_, train_data), cfg_.initial_tau);
    for (const Tensor* p : model_.parameters()) {
        adam_.m.emplace_back(p->rows(), p->cols());
        adam_.v.emplace_back(p->rows(), p->cols());
    }
}

Trainer::Trainer(Checkpoint c, const data::DatasetManifest& train_data)
    : cfg_(c.config), data_(&train_data), model_(std::move(c.model)), adam_(std::move(c.adam)),
      rng_(deserialize_rng(c.rng_state)), step_(c.step), epoch_order_(std::move(c.epoch_order)) {
    cfg_.validate();
    index_data();
    if (c.total_steps != total_steps_) {
        throw std::invalid_argument("checkpoint was trained on a dataset with a different step count");
    }
}

void Trainer::index_data() {
    if (data_->records.empty()) throw std::invalid_argument("training data is empty");
    by_identity_ = data::group_by_identity(data_->records);
    if (by_identity_.size() < 2) throw std::invalid_argument("training needs >= 2 identities");
    identities_.clear();
    for (const auto& [id, _] : by_identity_) identities_.push_back(id);
    const std::size_t batch = std::min(cfg_.batch_size, identities_.size());
    steps_per_epoch_ = (identities_.size() + batch - 1) / batch;
    total_steps_ = static_cast<std::uint64_t>(cfg_.epochs) * steps_per_epoch_;
}

std::vector<std::size_t> Trainer::next_batch() {
    const std::size_t within = static_cast<std::size_t>(step_ % steps_per_epoch_);
    if (within == 0) {
        epoch_order_ = identities_;
        shuffle(epoch_order_, rng_);
    }
    const std::size_t batch = std::min(cfg_.batch_size, identities_.size());
    const std::size_t begin = within * batch;
    std::vector<data::IdentityId> ids(
        epoch_order_.begin() + static_cast<long>(begin),
        epoch_order_.begin() + static_cast<long>(std::min(begin + batch, epoch_order_.size())));
    for (std::size_t i = 0; ids.size() < batch; ++i) ids.push_back(epoch_order_[i]);

    std::vector<std::size_t> records;
    records.reserve(ids.size());
    for (data::IdentityId id : ids) {
        const auto& recs = by_identity_.at(id);
        records.push_back(recs[uniform_index(rng_, recs.size())]);
    }
    return records;
}

namespace {

Tensor gather_raw(const std::vector<data::PairRecord>& records, std::span<const std::size_t> rows,
                  bool image) {
    const auto& first = image ? records[rows[0]].image_raw : records[rows[0]].text_raw;
    Tensor out(rows.size(), first.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const auto& v = image ? records[rows[k]].image_raw : records[rows[k]].text_raw;
        std::copy(v.begin(), v.end(), out.row_span(k).begin());
    }
    return out;
}

std::string describe(const loss::LossReport& r) {
    std::ostringstream os;
    os << "itc=" << r.itc << " uitc=" << r.uitc << " itm=" << r.itm << " gitm_txt=" << r.gitm_txt
       << " gitm_img=" << r.gitm_img << " total=" << r.total << " mean_u_w=" << r.mean_u_w;
    return os.str();
}

}  // namespace

const StepRecord& Trainer::step_once() {
    if (done()) throw std::logic_error("training already finished");
    const auto& records = data_->records;

    const std::vector<std::size_t> anchors = next_batch();
    std::vector<std::size_t> weak;
    weak.reserve(anchors.size());
    for (std::size_t a : anchors) weak.push_back(mining::sample_weak(a, records, by_identity_, rng_).weak);
    std::vector<data::IdentityId> ids;
    for (std::size_t a : anchors) ids.push_back(records[a].identity);

    Graph g;
    const model::ModelNodes params = model::bind(g, model_);
    loss::BatchNodes batch{
        model::encode(g, params.image, g.constant(gather_raw(records, anchors, true))),
        model::encode(g, params.text, g.constant(gather_raw(records, anchors, false))),
        model::encode(g, params.image, g.constant(gather_raw(records, weak, true))),
        model::encode(g, params.text, g.constant(gather_raw(records, weak, false))),
    };
    if (g.degenerate_rows() > 0) {
        throw NumericError("step " + std::to_string(step_) + ": " +
                           std::to_string(g.degenerate_rows()) + " zero-norm embedding rows");
    }

    const bool use_uitc = cfg_.ablation_mode != AblationMode::Baseline;
    const bool use_gitm = cfg_.ablation_mode == AblationMode::UitcGitm;
    const mining::MiningConfig mining_cfg =
        use_gitm ? cfg_.mining : mining::MiningConfig::from_mode(mining::MiningMode::Custom, 1);

    std::vector<mining::PairGroup> groups;
    try {
        groups = mining::build_groups(grad::cosine_matrix(g.value(batch.image), g.value(batch.text)),
                                      ids, mining_cfg);
    } catch (const mining::MiningStarvation& e) {
        ++log_.starvation_events;
        throw StepError("step " + std::to_string(step_) + ": " + e.what());
    }

    const NodeId zero = g.constant(Tensor::scalar(0.0));
    loss::LossParts parts{zero, zero, zero, zero, zero};
    parts.itc = loss::itc_loss(g, batch.image, batch.text, params.log_tau);
    parts.itm = loss::itm_loss(g, params.head, batch, groups);
    const auto uncertainty = loss::consistency_uncertainty(g, batch.image, batch.text, batch.weak_image,
                                                           batch.weak_text, cfg_.mapping);
    if (use_uitc) {
        const NodeId weak_itc = loss::weak_itc_per_anchor(g, batch.image, batch.text, batch.weak_image,
                                                          batch.weak_text, params.log_tau);
        parts.uitc = loss::uitc_loss(g, weak_itc, uncertainty.u_w, params.log_gamma);
    }
    if (use_gitm) {
        const auto gitm = loss::gitm_loss(g, params.head, batch, groups);
        parts.gitm_txt = gitm.txt;
        parts.gitm_img = gitm.img;
    }
    loss::LossWeights weights = cfg_.weights;
    if (!use_uitc) weights.alpha = 0.0;
    if (!use_gitm) weights.beta = 0.0;
    const NodeId total = loss::total_loss(g, parts, weights);

    StepRecord rec;
    rec.step = step_;
    rec.lr = step_lr(step_, cfg_, total_steps_);
    loss::LossReport& r = rec.losses;
    r.itc = g.value(parts.itc).item();
    r.itm = g.value(parts.itm).item();
    r.uitc = g.value(parts.uitc).item();
    r.gitm_txt = g.value(parts.gitm_txt).item();
    r.gitm_img = g.value(parts.gitm_img).item();
    r.total = g.value(total).item();
    {
        const Tensor& s = g.value(uncertainty.s_w);
        const Tensor& u = g.value(uncertainty.u_w);
        double ss = 0.0, us = 0.0;
        for (std::size_t i = 0; i < s.size(); ++i) ss += s[i], us += u[i];
        r.mean_s_w = ss / static_cast<double>(s.size());
        r.mean_u_w = us / static_cast<double>(u.size());
        r.min_u_w = *std::min_element(u.data().begin(), u.data().end());
        r.max_u_w = *std::max_element(u.data().begin(), u.data().end());
    }
    // The s_w clamp only absorbs rounding; only probability clamps are reported.
    rec.clamped = g.clamped_entries() - g.node(uncertainty.s_w).flagged.size();
    if (!std::isfinite(r.total)) {
        throw NumericError("step " + std::to_string(step_) + ": non-finite loss (" + describe(r) + ")");
    }

    const grad::Gradients grads = g.backward(total);
    auto tensors = model_.parameters();
    const auto& names = model::Model::parameter_names();
    const double t = static_cast<double>(step_ + 1);
    const double correction1 = 1.0 - std::pow(kBeta1, t);
    const double correction2 = 1.0 - std::pow(kBeta2, t);
    for (std::size_t p = 0; p < tensors.size(); ++p) {
        Tensor& w = *tensors[p];
        const Tensor& dw = grads.of(g.parameters()[p]);
        Tensor& m = adam_.m[p];
        Tensor& v = adam_.v[p];
        const double decay = p < kFirstUndecayedParam ? cfg_.weight_decay : 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * dw[i];
            v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * dw[i] * dw[i];
            const double m_hat = m[i] / correction1;
            const double v_hat = v[i] / correction2;
            w[i] -= rec.lr * (m_hat / (std::sqrt(v_hat) + kAdamEps) + decay * w[i]);
        }
        if (!w.all_finite()) {
            throw NumericError("step " + std::to_string(step_) + ": parameter " + names[p] +
                               " became non-finite (" + describe(r) + ")");
        }
    }
    if (!(model_.tau() > 0.0) || !(model_.gamma() > 0.0)) {
        throw NumericError("step " + std::to_string(step_) + ": tau or gamma left (0, inf)");
    }

    ++step_;
    log_.clamped_total += rec.clamped;
    log_.steps.push_back(rec);
    return log_.steps.back();
}

void Trainer::run(std::uint64_t stop_step) {
    const auto start = std::chrono::steady_clock::now();
    while (!done() && step_ < stop_step) step_once();
    log_.wall_seconds +=
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

Checkpoint Trainer::checkpoint() const {
    Checkpoint c;
    c.config = cfg_;
    c.model = model_;
    c.adam = adam_;
    c.rng_state = serialize_rng(rng_);
    c.step = step_;
    c.total_steps = total_steps_;
    c.epoch_order = epoch_order_;
    return c;
}

std::pair<Checkpoint, TrainLog> train(const TrainConfig& cfg, const data::DatasetManifest& data) {
    Trainer t(cfg, data);
    t.run();
    return {t.checkpoint(), t.log()};
}

// ---------------------------------------------------------------------------
// Checkpoint text format. Every double is written in its shortest round-trip
// form, so load(save(c)) == c bit for bit.

namespace {

constexpr const char* kMagic = "weakpair-checkpoint";

void write_tensor(std::ostream& os, const std::string& kind, const std::string& name,
                  const Tensor& t) {
    os << kind << ' ' << name << ' ' << t.rows() << ' ' << t.cols();
    for (double v : t.data()) os << ' ' << format_shortest(v);
    os << '\n';
}

struct LineReader {
    std::istream& is;
    std::size_t line_no = 0;

    std::vector<std::string> next(const std::string& expect) {
        std::string line;
        if (!std::getline(is, line)) {
            throw CheckpointFormatError("truncated checkpoint: expected '" + expect +
                                        "' after line " + std::to_string(line_no));
        }
        ++line_no;
        std::vector<std::string> tokens;
        std::istringstream ss(line);
        for (std::string tok; ss >> tok;) tokens.push_back(tok);
        if (tokens.empty() || tokens[0] != expect) {
            throw CheckpointFormatError("line " + std::to_string(line_no) + ": expected '" +
                                        expect + "'");
        }
        return tokens;
    }

    [[noreturn]] void fail(const std::string& msg) const {
        throw CheckpointFormatError("line " + std::to_string(line_no) + ": " + msg);
    }
};

Tensor read_tensor(LineReader& in, const std::string& kind, const std::string& name) {
    const auto tok = in.next(kind);
    if (tok.size() < 4 || tok[1] != name) in.fail("expected " + kind + " " + name);
    try {
        const auto rows = static_cast<std::size_t>(parse_int(tok[2], "rows"));
        const auto cols = static_cast<std::size_t>(parse_int(tok[3], "cols"));
        if (tok.size() != 4 + rows * cols) in.fail(name + ": value count does not match shape");
        std::vector<double> data;
        data.reserve(rows * cols);
        for (std::size_t i = 4; i < tok.size(); ++i) data.push_back(parse_double(tok[i], name));
        return Tensor(rows, cols, std::move(data));
    } catch (const std::invalid_argument& e) {
        in.fail(e.what());
    }
}

}  // namespace

void save(const Checkpoint& c, std::ostream& os) {
    os << kMagic << ' ' << c.version << '\n';
    for (const auto& [k, v] : c.config.to_pairs()) os << "config " << k << ' ' << v << '\n';
    os << "step " << c.step << '\n';
    os << "total_steps " << c.total_steps << '\n';
    os << "rng " << c.rng_state << '\n';
    os << "epoch_order " << c.epoch_order.size();
    for (auto id : c.epoch_order) os << ' ' << id;
    os << '\n';
    const auto& names = model::Model::parameter_names();
    const auto params = c.model.parameters();
    for (std::size_t i = 0; i < names.size(); ++i) write_tensor(os, "param", names[i], *params[i]);
    for (std::size_t i = 0; i < names.size(); ++i) write_tensor(os, "adam_m", names[i], c.adam.m[i]);
    for (std::size_t i = 0; i < names.size(); ++i) write_tensor(os, "adam_v", names[i], c.adam.v[i]);
    os << "end\n";
}

void save(const Checkpoint& c, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
    save(c, os);
    if (!os) throw std::runtime_error("write failed: " + path.string());
}

Checkpoint load(std::istream& is) {
    LineReader in{is};
    Checkpoint c;
    {
        const auto tok = in.next(kMagic);
        if (tok.size() != 2) in.fail("malformed header");
        try {
            c.version = static_cast<int>(parse_int(tok[1], "version"));
        } catch (const std::invalid_argument& e) {
            in.fail(e.what());
        }
        if (c.version != Checkpoint::kVersion) {
            in.fail("version mismatch (file " + tok[1] + ", supported " +
                    std::to_string(Checkpoint::kVersion) + ")");
        }
    }
    const std::size_t n_config = TrainConfig{}.to_pairs().size();
    try {
        for (std::size_t i = 0; i < n_config; ++i) {
            const auto tok = in.next("config");
            if (tok.size() != 3) in.fail("malformed config line");
            c.config.set(tok[1], tok[2]);
        }
        c.config.validate();
        auto tok = in.next("step");
        if (tok.size() != 2) in.fail("malformed step");
        c.step = std::stoull(tok[1]);
        tok = in.next("total_steps");
        if (tok.size() != 2) in.fail("malformed total_steps");
        c.total_steps = std::stoull(tok[1]);
    } catch (const CheckpointFormatError&) {
        throw;
    } catch (const std::exception& e) {
        in.fail(e.what());
    }
    {
        std::string line;
        if (!std::getline(is, line)) throw CheckpointFormatError("truncated checkpoint: missing rng");
        ++in.line_no;
        if (line.rfind("rng ", 0) != 0) in.fail("expected 'rng'");
        c.rng_state = line.substr(4);
        try {
            (void)deserialize_rng(c.rng_state);
        } catch (const std::exception& e) {
            in.fail(e.what());
        }
    }
    {
        const auto tok = in.next("epoch_order");
        try {
            const auto n = static_cast<std::size_t>(parse_int(tok.at(1), "epoch_order"));
            if (tok.size() != 2 + n) in.fail("epoch_order length mismatch");
            for (std::size_t i = 2; i < tok.size(); ++i) c.epoch_order.push_back(parse_int(tok[i], "id"));
        } catch (const std::out_of_range&) {
            in.fail("malformed epoch_order");
        } catch (const std::invalid_argument& e) {
            in.fail(e.what());
        }
    }
    const auto& names = model::Model::parameter_names();
    auto params = c.model.parameters();
    for (std::size_t i = 0; i < names.size(); ++i) *params[i] = read_tensor(in, "param", names[i]);
    for (std::size_t i = 0; i < names.size(); ++i) {
        c.adam.m.push_back(read_tensor(in, "adam_m", names[i]));
        if (!c.adam.m.back().same_shape(*params[i])) in.fail("adam_m shape mismatch for " + names[i]);
    }
    for (std::size_t i = 0; i < names.size(); ++i) {
        c.adam.v.push_back(read_tensor(in, "adam_v", names[i]));
        if (!c.adam.v.back().same_shape(*params[i])) in.fail("adam_v shape mismatch for " + names[i]);
    }
    in.next("end");
    return c;
}

Checkpoint load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    return load(is);
}

}  // namespace weakpair::train
