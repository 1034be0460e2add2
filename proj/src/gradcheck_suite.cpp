#include "weakpair/gradcheck_suite.hpp"

#include <chrono>
#include <cmath>
#include <ostream>

#include "weakpair/encoders.hpp"
#include "weakpair/gradcheck.hpp"
#include "weakpair/losses.hpp"
#include "weakpair/mining.hpp"
#include "weakpair/random.hpp"
#include "weakpair/text_io.hpp"

namespace weakpair::grad {

namespace {

Tensor random_tensor(std::size_t rows, std::size_t cols, Rng& rng, double lo = -1.0,
                     double hi = 1.0) {
    Tensor t(rows, cols);
    for (double& v : t.data()) v = lo + (hi - lo) * uniform01(rng);
    return t;
}

// Weighted sum against fixed random weights, so every output entry matters.
NodeId reduce(Graph& g, NodeId y, std::uint64_t seed) {
    Rng rng(seed);
    const Tensor& v = g.value(y);
    return g.sum(g.multiply(y, g.constant(random_tensor(v.rows(), v.cols(), rng))));
}

struct OpCase {
    std::vector<Tensor> params;
    LossBuilder loss;
    LossBuilder reference;  // empty when `loss` is its own reference
};

OpCase make_op_case(Op op, Rng& rng, std::uint64_t wseed) {
    OpCase c;
    auto unary = [&](std::vector<Tensor> params, NodeId (Graph::*f)(NodeId)) {
        c.params = std::move(params);
        c.loss = [f, wseed](Graph& g, std::span<const NodeId> p) {
            return reduce(g, (g.*f)(p[0]), wseed);
        };
    };
    switch (op) {
        case Op::Affine:
            c.params = {random_tensor(3, 4, rng), random_tensor(4, 2, rng), random_tensor(1, 2, rng)};
            c.loss = [wseed](Graph& g, std::span<const NodeId> p) {
                return reduce(g, g.affine(p[0], p[1], p[2]), wseed);
            };
            break;
        case Op::Add:
            c.params = {random_tensor(3, 2, rng), random_tensor(3, 2, rng), random_tensor(1, 1, rng)};
            c.loss = [wseed](Graph& g, std::span<const NodeId> p) {
                return reduce(g, g.add(g.add(p[0], p[1]), p[2]), wseed);
            };
            break;
        case Op::Multiply:
            c.params = {random_tensor(3, 2, rng), random_tensor(3, 2, rng), random_tensor(1, 1, rng)};
            c.loss = [wseed](Graph& g, std::span<const NodeId> p) {
                return reduce(g, g.multiply(p[2], g.multiply(p[0], p[1])), wseed);
            };
            break;
        case Op::Tanh: unary({random_tensor(3, 2, rng, -2, 2)}, &Graph::tanh); break;
        case Op::Exp: unary({random_tensor(3, 2, rng, -2, 2)}, &Graph::exp); break;
        case Op::Log: unary({random_tensor(3, 2, rng, 0.5, 2)}, &Graph::log); break;
        case Op::Sigmoid: unary({random_tensor(3, 2, rng, -3, 3)}, &Graph::sigmoid); break;
        case Op::L2Normalize: unary({random_tensor(3, 4, rng)}, &Graph::l2_normalize); break;
        case Op::SoftmaxRows: unary({random_tensor(3, 4, rng, -3, 3)}, &Graph::softmax_rows); break;
        case Op::Transpose: unary({random_tensor(3, 2, rng)}, &Graph::transpose); break;
        case Op::Diagonal: unary({random_tensor(3, 3, rng)}, &Graph::diagonal); break;
        case Op::CosineMatrix:
            c.params = {random_tensor(3, 4, rng), random_tensor(2, 4, rng)};
            c.loss = [wseed](Graph& g, std::span<const NodeId> p) {
                return reduce(g, g.cosine_matrix(p[0], p[1]), wseed);
            };
            break;
        case Op::Sum:
            c.params = {random_tensor(3, 2, rng)};
            c.loss = [](Graph& g, std::span<const NodeId> p) {
                const NodeId s = g.sum(p[0]);
                return g.sum(g.multiply(s, s));
            };
            break;
        case Op::Mean:
            c.params = {random_tensor(3, 2, rng)};
            c.loss = [](Graph& g, std::span<const NodeId> p) {
                const NodeId m = g.mean(p[0]);
                return g.sum(g.multiply(m, m));
            };
            break;
        case Op::Detach: {
            c.params = {random_tensor(3, 2, rng)};
            c.loss = [wseed](Graph& g, std::span<const NodeId> p) {
                return reduce(g, g.multiply(g.detach(p[0]), p[0]), wseed);
            };
            c.reference = [wseed, base = c.params[0]](Graph& g, std::span<const NodeId> p) {
                return reduce(g, g.multiply(g.constant(base), p[0]), wseed);
            };
            break;
        }
        case Op::GatherRows:
            c.params = {random_tensor(3, 2, rng)};
            c.loss = [wseed](Graph& g, std::span<const NodeId> p) {
                return reduce(g, g.gather_rows(p[0], {2, 0, 2, 1}), wseed);
            };
            break;
        case Op::ConcatRows:
            c.params = {random_tensor(2, 3, rng), random_tensor(1, 3, rng)};
            c.loss = [wseed](Graph& g, std::span<const NodeId> p) {
                return reduce(g, g.concat_rows({p[0], p[1]}), wseed);
            };
            break;
        case Op::ConcatCols:
            c.params = {random_tensor(3, 2, rng), random_tensor(3, 1, rng)};
            c.loss = [wseed](Graph& g, std::span<const NodeId> p) {
                return reduce(g, g.concat_cols({p[0], p[1]}), wseed);
            };
            break;
        case Op::Clamp: {
            // Keep every entry clear of the bounds so the difference quotient
            // never straddles a kink.
            Tensor x = random_tensor(3, 3, rng, -2, 2);
            for (double& v : x.data()) {
                while (std::abs(std::abs(v) - 1.0) < 0.05) v = -2.0 + 4.0 * uniform01(rng);
            }
            c.params = {std::move(x)};
            c.loss = [wseed](Graph& g, std::span<const NodeId> p) {
                return reduce(g, g.clamp(p[0], -1.0, 1.0), wseed);
            };
            break;
        }
        case Op::Leaf:
        case Op::Count_:
            throw std::invalid_argument("no gradient check for this op");
    }
    return c;
}

constexpr Op kCheckedOps[] = {
    Op::Affine,      Op::Add,          Op::Multiply,    Op::Tanh,       Op::Exp,
    Op::Log,         Op::Sigmoid,      Op::L2Normalize, Op::CosineMatrix, Op::SoftmaxRows,
    Op::Sum,         Op::Mean,         Op::Detach,      Op::GatherRows, Op::ConcatRows,
    Op::ConcatCols,  Op::Transpose,    Op::Diagonal,    Op::Clamp,
};

// A small random model and batch. Discrete choices (mined negatives) and the
// detached uncertainties are fixed at the base point.
struct LossFixture {
    model::Model model;
    Tensor raw_image, raw_text, weak_image, weak_text;
    std::vector<mining::PairGroup> groups;
    Tensor frozen_u;

    std::vector<Tensor> params() const {
        std::vector<Tensor> out;
        for (const Tensor* t : model.parameters()) out.push_back(*t);
        return out;
    }
};

constexpr std::size_t kBatch = 4;

LossFixture make_fixture(std::uint64_t seed) {
    Rng rng(seed);
    model::ModelDims dims;
    dims.image_input = 4;
    dims.text_input = 3;
    dims.hidden = 5;
    dims.embed = 4;
    dims.head_hidden = 3;
    LossFixture f;
    f.model = model::init_params(seed, dims, 0.05 + 0.45 * uniform01(rng));
    for (Tensor* b : {&f.model.image.b1, &f.model.image.b2, &f.model.text.b1, &f.model.text.b2,
                      &f.model.head.b1, &f.model.head.b2}) {
        *b = random_tensor(b->rows(), b->cols(), rng, -0.5, 0.5);
    }
    f.model.log_gamma = Tensor::scalar(-1.0 + 2.0 * uniform01(rng));
    f.raw_image = random_tensor(kBatch, dims.image_input, rng, -2, 2);
    f.raw_text = random_tensor(kBatch, dims.text_input, rng, -2, 2);
    f.weak_image = random_tensor(kBatch, dims.image_input, rng, -2, 2);
    f.weak_text = random_tensor(kBatch, dims.text_input, rng, -2, 2);

    const auto fi = model::encode(f.model, model::Modality::Image, f.raw_image).embeddings;
    const auto ft = model::encode(f.model, model::Modality::Text, f.raw_text).embeddings;
    const std::vector<data::IdentityId> ids = {0, 1, 2, 3};
    f.groups = mining::build_groups(cosine_matrix(fi, ft), ids,
                                    mining::MiningConfig::from_mode(mining::MiningMode::Neg3v6));

    Graph g;
    const auto nodes = model::bind(g, f.model);
    const auto batch = loss::BatchNodes{
        model::encode(g, nodes.image, g.constant(f.raw_image)),
        model::encode(g, nodes.text, g.constant(f.raw_text)),
        model::encode(g, nodes.image, g.constant(f.weak_image)),
        model::encode(g, nodes.text, g.constant(f.weak_text)),
    };
    f.frozen_u = g.value(loss::consistency_uncertainty(g, batch.image, batch.text, batch.weak_image,
                                                       batch.weak_text,
                                                       loss::UncertaintyMapping::Exponential)
                             .u_w);
    return f;
}

struct Bound {
    model::ModelNodes nodes;
    loss::BatchNodes batch;
};

Bound bind_fixture(Graph& g, const LossFixture& f, std::span<const NodeId> p) {
    Bound b{model::bind_nodes(p), {}};
    b.batch = {
        model::encode(g, b.nodes.image, g.constant(f.raw_image)),
        model::encode(g, b.nodes.text, g.constant(f.raw_text)),
        model::encode(g, b.nodes.image, g.constant(f.weak_image)),
        model::encode(g, b.nodes.text, g.constant(f.weak_text)),
    };
    return b;
}

NodeId uitc_node(Graph& g, const LossFixture& f, const Bound& b, bool frozen) {
    const NodeId weak_itc = loss::weak_itc_per_anchor(g, b.batch.image, b.batch.text,
                                                      b.batch.weak_image, b.batch.weak_text,
                                                      b.nodes.log_tau);
    const NodeId u = frozen ? g.constant(f.frozen_u)
                            : loss::consistency_uncertainty(g, b.batch.image, b.batch.text,
                                                            b.batch.weak_image, b.batch.weak_text,
                                                            loss::UncertaintyMapping::Exponential)
                                  .u_w;
    return loss::uitc_loss(g, weak_itc, u, b.nodes.log_gamma);
}

LossBuilder objective(const std::string& name, const LossFixture& f, bool frozen) {
    if (name == "itc") {
        return [&f](Graph& g, std::span<const NodeId> p) {
            const Bound b = bind_fixture(g, f, p);
            return loss::itc_loss(g, b.batch.image, b.batch.text, b.nodes.log_tau);
        };
    }
    if (name == "uitc") {
        return [&f, frozen](Graph& g, std::span<const NodeId> p) {
            return uitc_node(g, f, bind_fixture(g, f, p), frozen);
        };
    }
    if (name == "itm") {
        return [&f](Graph& g, std::span<const NodeId> p) {
            const Bound b = bind_fixture(g, f, p);
            return loss::itm_loss(g, b.nodes.head, b.batch, f.groups);
        };
    }
    if (name == "gitm") {
        return [&f](Graph& g, std::span<const NodeId> p) {
            const Bound b = bind_fixture(g, f, p);
            const auto gitm = loss::gitm_loss(g, b.nodes.head, b.batch, f.groups);
            return g.add(gitm.txt, gitm.img);
        };
    }
    if (name == "total") {
        return [&f, frozen](Graph& g, std::span<const NodeId> p) {
            const Bound b = bind_fixture(g, f, p);
            const auto gitm = loss::gitm_loss(g, b.nodes.head, b.batch, f.groups);
            const loss::LossParts parts{
                loss::itc_loss(g, b.batch.image, b.batch.text, b.nodes.log_tau),
                loss::itm_loss(g, b.nodes.head, b.batch, f.groups),
                uitc_node(g, f, b, frozen),
                gitm.txt,
                gitm.img,
            };
            return loss::total_loss(g, parts, loss::LossWeights{});
        };
    }
    throw std::invalid_argument("unknown objective '" + name + "'");
}

void absorb(SuiteEntry& e, const GradReport& r, double tol,
            const std::vector<std::string>* param_names) {
    ++e.points;
    if (r.max_rel_error >= e.max_rel_error) {
        e.max_rel_error = r.max_rel_error;
        e.detail = "worst " +
                   (param_names ? (*param_names)[r.worst_param]
                                : "param " + std::to_string(r.worst_param)) +
                   "[" + std::to_string(r.worst_entry) + "] a=" +
                   format_double(r.analytic[r.worst_param][r.worst_entry]) + " n=" +
                   format_double(r.numeric[r.worst_param][r.worst_entry]);
    }
    if (!r.passed(tol)) e.passed = false;
}

}  // namespace

bool SuiteReport::passed() const {
    for (const auto& e : entries) {
        if (!e.passed) return false;
    }
    return true;
}

std::vector<std::string> SuiteReport::failing_ops() const {
    std::vector<std::string> out;
    for (const auto& e : entries) {
        if (!e.passed && e.name.rfind("op:", 0) == 0) out.push_back(e.name.substr(3));
    }
    return out;
}

const std::vector<std::string>& suite_objectives() {
    static const std::vector<std::string> names = {"itc", "uitc", "itm", "gitm", "total"};
    return names;
}

SuiteEntry check_op(Op op, std::size_t points, std::uint64_t seed, double eps, double tol,
                    const BackwardTable& rules) {
    SuiteEntry e;
    e.name = "op:" + std::string(op_name(op));
    Rng rng(seed ^ (static_cast<std::uint64_t>(op) << 32));
    for (std::size_t i = 0; i < points; ++i) {
        const OpCase c = make_op_case(op, rng, seed + i);
        absorb(e, grad_check(c.loss, c.reference ? c.reference : c.loss, c.params, eps, rules), tol,
               nullptr);
    }
    return e;
}

SuiteEntry check_objective(const std::string& name, std::size_t points, std::uint64_t seed,
                           double eps, double tol, const BackwardTable& rules) {
    SuiteEntry e;
    e.name = "loss:" + name;
    for (std::size_t i = 0; i < points; ++i) {
        const LossFixture f = make_fixture(seed * 1000003 + i);
        absorb(e,
               grad_check(objective(name, f, false), objective(name, f, true), f.params(), eps,
                          rules),
               tol, &model::Model::parameter_names());
    }
    return e;
}

SuiteReport run_gradcheck_suite(const SuiteOptions& opts, const BackwardTable& rules) {
    const auto start = std::chrono::steady_clock::now();
    SuiteReport r;
    for (Op op : kCheckedOps) {
        r.entries.push_back(check_op(op, opts.op_points, opts.seed, opts.eps, opts.tol, rules));
    }
    const auto failing = r.failing_ops();
    for (const auto& name : suite_objectives()) {
        SuiteEntry e = check_objective(name, opts.points, opts.seed, opts.eps, opts.tol, rules);
        if (!e.passed && !failing.empty()) {
            e.detail += "; failing ops:";
            for (const auto& op : failing) e.detail += " " + op;
        }
        r.entries.push_back(std::move(e));
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return r;
}

void write_report(const SuiteReport& r, std::ostream& os) {
    os << "name,points,max_rel_error,status,detail\n";
    for (const auto& e : r.entries) {
        os << e.name << ',' << e.points << ',' << format_double(e.max_rel_error) << ','
           << (e.passed ? "pass" : "FAIL") << ',' << e.detail << '\n';
    }
}

}  // namespace weakpair::grad
