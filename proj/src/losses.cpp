#include "weakpair/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace weakpair::loss {

const char* mapping_name(UncertaintyMapping m) {
    switch (m) {
        case UncertaintyMapping::Exponential: return "exponential";
        case UncertaintyMapping::Linear: return "linear";
        case UncertaintyMapping::Power: return "power";
    }
    return "exponential";
}

UncertaintyMapping parse_mapping(std::string_view name) {
    if (name == "exponential") return UncertaintyMapping::Exponential;
    if (name == "linear") return UncertaintyMapping::Linear;
    if (name == "power") return UncertaintyMapping::Power;
    throw std::invalid_argument("unknown uncertainty mapping '" + std::string(name) + "'");
}

double map_uncertainty(double s_w, UncertaintyMapping m) {
    switch (m) {
        case UncertaintyMapping::Exponential: return std::exp(-s_w);
        case UncertaintyMapping::Linear: return 1.5 - s_w;
        case UncertaintyMapping::Power: return (1.5 - s_w) * (1.5 - s_w);
    }
    return std::exp(-s_w);
}

NodeId matching_scores(Graph& g, NodeId a, NodeId b, NodeId log_tau) {
    const NodeId inv_tau = g.exp(g.negate(log_tau));
    return g.softmax_rows(g.multiply(g.cosine_matrix(a, b), inv_tau));
}

NodeId itc_per_anchor(Graph& g, NodeId f_i, NodeId f_t, NodeId log_tau) {
    if (g.value(f_i).rows() == 0) throw std::invalid_argument("itc: empty batch");
    if (!g.value(f_i).same_shape(g.value(f_t))) {
        throw ShapeError("itc: image batch " + g.value(f_i).shape_string() + " vs text batch " +
                         g.value(f_t).shape_string());
    }
    const NodeId image_to_text = g.log(g.diagonal(matching_scores(g, f_i, f_t, log_tau)));
    const NodeId text_to_image = g.log(g.diagonal(matching_scores(g, f_t, f_i, log_tau)));
    return g.negate(g.add(image_to_text, text_to_image));
}

NodeId itc_loss(Graph& g, NodeId f_i, NodeId f_t, NodeId log_tau) {
    return g.mean(itc_per_anchor(g, f_i, f_t, log_tau));
}

NodeId weak_itc_per_anchor(Graph& g, NodeId f_i, NodeId f_t, NodeId f_iw, NodeId f_tw,
                           NodeId log_tau) {
    const NodeId with_weak_text = itc_per_anchor(g, f_i, f_tw, log_tau);
    const NodeId with_weak_image = itc_per_anchor(g, f_iw, f_t, log_tau);
    return g.scale(g.add(with_weak_text, with_weak_image), 0.5);
}

UncertaintyNodes consistency_uncertainty(Graph& g, NodeId f_i, NodeId f_t, NodeId f_iw,
                                         NodeId f_tw, UncertaintyMapping mapping) {
    const NodeId image_sim = g.diagonal(g.cosine_matrix(f_i, f_iw));
    const NodeId text_sim = g.diagonal(g.cosine_matrix(f_t, f_tw));
    // Rounding can push a cosine of unit rows a hair past +-1.
    const NodeId s_w = g.clamp(g.scale(g.add(image_sim, text_sim), 0.5), -1.0, 1.0);
    NodeId u_w;
    switch (mapping) {
        case UncertaintyMapping::Exponential: u_w = g.exp(g.negate(s_w)); break;
        case UncertaintyMapping::Linear: u_w = g.add_scalar(g.negate(s_w), 1.5); break;
        case UncertaintyMapping::Power: {
            const NodeId d = g.add_scalar(g.negate(s_w), 1.5);
            u_w = g.multiply(d, d);
            break;
        }
    }
    return {s_w, u_w};
}

NodeId uitc_loss(Graph& g, NodeId itc_weak, NodeId u_w, NodeId log_gamma) {
    const NodeId u = g.detach(u_w);
    const Tensor& uv = g.value(u);
    Tensor inv_u(uv.rows(), uv.cols());
    for (std::size_t i = 0; i < uv.size(); ++i) {
        if (!(uv[i] > 0.0)) {
            throw grad::ContractViolation("uitc: uncertainty must be positive, got " +
                                          std::to_string(uv[i]));
        }
        inv_u[i] = 1.0 / uv[i];
    }
    const NodeId gamma = g.exp(log_gamma);
    const NodeId inv_gamma = g.exp(g.negate(log_gamma));
    const NodeId scaled = g.multiply(g.multiply(itc_weak, inv_gamma), g.constant(std::move(inv_u)));
    return g.mean(g.add(scaled, g.multiply(u, gamma)));
}

NodeId itm_terms(Graph& g, NodeId p_hat, std::span<const int> labels) {
    const Tensor& pv = g.value(p_hat);
    if (pv.size() != labels.size()) {
        throw ShapeError("itm: " + std::to_string(labels.size()) + " labels for " +
                         pv.shape_string() + " probabilities");
    }
    Tensor p(pv.rows(), pv.cols());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1) throw std::invalid_argument("itm label must be 0/1");
        p[i] = labels[i];
    }
    const NodeId clamped = g.clamp(p_hat, kProbabilityClamp, 1.0 - kProbabilityClamp);
    const NodeId label = g.constant(std::move(p));
    const NodeId pos = g.multiply(label, g.log(clamped));
    const NodeId neg = g.multiply(g.add_scalar(g.negate(label), 1.0),
                                  g.log(g.add_scalar(g.negate(clamped), 1.0)));
    return g.negate(g.add(pos, neg));
}

NodeId pair_probabilities(Graph& g, const model::HeadNodes& head, const BatchNodes& batch,
                          std::span<const mining::PairSpec> pairs) {
    const std::size_t n = g.value(batch.image).rows();
    const NodeId images = g.concat_rows({batch.image, batch.weak_image});
    const NodeId texts = g.concat_rows({batch.text, batch.weak_text});
    std::vector<std::size_t> image_rows, text_rows;
    image_rows.reserve(pairs.size());
    text_rows.reserve(pairs.size());
    for (const auto& p : pairs) {
        image_rows.push_back(p.image_side == mining::Side::Weak ? n + p.image_row : p.image_row);
        text_rows.push_back(p.text_side == mining::Side::Weak ? n + p.text_row : p.text_row);
    }
    return model::match_probability(g, head, g.gather_rows(images, std::move(image_rows)),
                                    g.gather_rows(texts, std::move(text_rows)));
}

namespace {

NodeId branch_loss(Graph& g, const model::HeadNodes& head, const BatchNodes& batch,
                   std::span<const mining::PairGroup> groups,
                   std::vector<mining::PairSpec> mining::PairGroup::*branch) {
    std::vector<mining::PairSpec> pairs;
    std::vector<int> labels;
    for (const auto& grp : groups) {
        for (const auto& p : grp.*branch) {
            pairs.push_back(p);
            labels.push_back(p.label);
        }
    }
    if (pairs.empty()) throw grad::ContractViolation("matching loss over no pairs");
    return g.mean(itm_terms(g, pair_probabilities(g, head, batch, pairs), labels));
}

}  // namespace

NodeId itm_loss(Graph& g, const model::HeadNodes& head, const BatchNodes& batch,
                std::span<const mining::PairGroup> groups) {
    return branch_loss(g, head, batch, groups, &mining::PairGroup::strong);
}

GitmNodes gitm_loss(Graph& g, const model::HeadNodes& head, const BatchNodes& batch,
                    std::span<const mining::PairGroup> groups) {
    for (const auto& grp : groups) {
        if (grp.weak_text.size() < 2 || grp.weak_image.size() < 2) {
            throw grad::ContractViolation("gitm: group without mined negatives");
        }
    }
    return {branch_loss(g, head, batch, groups, &mining::PairGroup::weak_text),
            branch_loss(g, head, batch, groups, &mining::PairGroup::weak_image)};
}

NodeId total_loss(Graph& g, const LossParts& parts, const LossWeights& w) {
    NodeId total = g.add(parts.itc, parts.itm);
    total = g.add(total, g.scale(parts.uitc, w.alpha));
    return g.add(total, g.scale(g.add(parts.gitm_txt, parts.gitm_img), w.beta));
}

double total_loss(const LossReport& r, const LossWeights& w) {
    double total = r.itc + r.itm;
    total = total + r.uitc * w.alpha;
    return total + (r.gitm_txt + r.gitm_img) * w.beta;
}

double itm_term(double p_hat, int p, std::size_t* clamp_count) {
    Graph g;
    const int labels[] = {p};
    const NodeId t = itm_terms(g, g.constant(Tensor::scalar(p_hat)), labels);
    if (clamp_count) *clamp_count += g.clamped_entries();
    return g.value(t).item();
}

double uitc_loss(double itc_weak, const UncertaintyScore& u, double gamma) {
    if (!(gamma > 0.0)) throw grad::ContractViolation("uitc: gamma must be positive");
    Graph g;
    const NodeId out = uitc_loss(g, g.constant(Tensor::scalar(itc_weak)),
                                 g.constant(Tensor::scalar(u.u_w)),
                                 g.constant(Tensor::scalar(std::log(gamma))));
    return g.value(out).item();
}

UncertaintyScore consistency_uncertainty(std::span<const double> f_i, std::span<const double> f_t,
                                         std::span<const double> f_iw,
                                         std::span<const double> f_tw,
                                         UncertaintyMapping mapping) {
    Graph g;
    const auto row = [&g](std::span<const double> v) { return g.constant(Tensor::row(v)); };
    const auto nodes = consistency_uncertainty(g, row(f_i), row(f_t), row(f_iw), row(f_tw), mapping);
    return {g.value(nodes.s_w).item(), g.value(nodes.u_w).item()};
}

Tensor matching_scores(const Tensor& a, const Tensor& b, double tau) {
    Graph g;
    return g.value(matching_scores(g, g.constant(a), g.constant(b),
                                   g.constant(Tensor::scalar(std::log(tau)))));
}

double itc_loss(const Tensor& f_i, const Tensor& f_t, double tau) {
    Graph g;
    return g.value(itc_loss(g, g.constant(f_i), g.constant(f_t),
                            g.constant(Tensor::scalar(std::log(tau)))))
        .item();
}

}  // namespace weakpair::loss
