#pragma once

// Training objectives.
//
//   itc      contrastive loss over in-batch cosine similarities at temperature tau
//   uitc     weak-pair contrastive loss regularized by a detached uncertainty u_w:
//              itc_weak / (gamma * u_w) + gamma * u_w
//   itm      binary matching loss on the strong pair and its two mined negatives
//   gitm     the same matching loss on the two weak branches, each averaged over
//            one weak positive and its K mined negatives
//   total    itc + itm + alpha * uitc + beta * (gitm_txt + gitm_img)
//
// Builders take graph nodes and return graph nodes so every objective is
// differentiated by the same kernel. Expectations over the batch are plain
// arithmetic means.

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "weakpair/encoders.hpp"
#include "weakpair/graph.hpp"
#include "weakpair/mining.hpp"

namespace weakpair::loss {

using grad::Graph;
using grad::NodeId;

enum class UncertaintyMapping { Exponential, Linear, Power };

const char* mapping_name(UncertaintyMapping m);
UncertaintyMapping parse_mapping(std::string_view name);

// exp(-s) | 1.5 - s | (1.5 - s)^2
double map_uncertainty(double s_w, UncertaintyMapping m);

struct UncertaintyScore {
    double s_w = 0.0;
    double u_w = 0.0;
};

struct LossWeights {
    double alpha = 0.5;
    double beta = 0.1;
    friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

struct LossReport {
    double itc = 0.0;
    double uitc = 0.0;
    double itm = 0.0;
    double gitm_txt = 0.0;
    double gitm_img = 0.0;
    double total = 0.0;
    double mean_s_w = 0.0;
    double mean_u_w = 0.0;
    double min_u_w = 0.0;
    double max_u_w = 0.0;
    friend bool operator==(const LossReport&, const LossReport&) = default;
};

// p_hat is clamped into [kProbabilityClamp, 1 - kProbabilityClamp] before the log.
inline constexpr double kProbabilityClamp = 1e-12;

// --- graph builders --------------------------------------------------------

// softmax_rows(cos(a, b) / tau); row i scores a_i against every row of b.
NodeId matching_scores(Graph& g, NodeId a, NodeId b, NodeId log_tau);

// n x 1: -(log S(I_i, T_i) + log S(T_i, I_i)).
NodeId itc_per_anchor(Graph& g, NodeId f_i, NodeId f_t, NodeId log_tau);
NodeId itc_loss(Graph& g, NodeId f_i, NodeId f_t, NodeId log_tau);

// n x 1: the contrastive loss with weak texts substituted for the anchors'
// texts, averaged with the one that substitutes weak images for their images.
NodeId weak_itc_per_anchor(Graph& g, NodeId f_i, NodeId f_t, NodeId f_iw, NodeId f_tw,
                           NodeId log_tau);

struct UncertaintyNodes {
    NodeId s_w;  // n x 1
    NodeId u_w;  // n x 1
};

// s_w = (cos(f_I, f_Iw) + cos(f_T, f_Tw)) / 2 per row, u_w = mapping(s_w).
UncertaintyNodes consistency_uncertainty(Graph& g, NodeId f_i, NodeId f_t, NodeId f_iw,
                                         NodeId f_tw, UncertaintyMapping mapping);

// mean_i [ itc_weak_i / (gamma * u_i) + gamma * u_i ] with u detached inside.
// itc_weak and u_w are n x 1 (or 1 x 1).
NodeId uitc_loss(Graph& g, NodeId itc_weak, NodeId u_w, NodeId log_gamma);

// m x 1 of -(p log p_hat + (1 - p) log(1 - p_hat)).
NodeId itm_terms(Graph& g, NodeId p_hat, std::span<const int> labels);

// Embedding nodes of one batch; weak rows align with anchor rows.
struct BatchNodes {
    NodeId image;
    NodeId text;
    NodeId weak_image;
    NodeId weak_text;
};

// Head probabilities for the given pairs, m x 1.
NodeId pair_probabilities(Graph& g, const model::HeadNodes& head, const BatchNodes& batch,
                          std::span<const mining::PairSpec> pairs);

// Mean matching loss over every group's strong pairs (3 per anchor).
NodeId itm_loss(Graph& g, const model::HeadNodes& head, const BatchNodes& batch,
                std::span<const mining::PairGroup> groups);

struct GitmNodes {
    NodeId txt;
    NodeId img;
};
GitmNodes gitm_loss(Graph& g, const model::HeadNodes& head, const BatchNodes& batch,
                    std::span<const mining::PairGroup> groups);

struct LossParts {
    NodeId itc;
    NodeId itm;
    NodeId uitc;
    NodeId gitm_txt;
    NodeId gitm_img;
};
NodeId total_loss(Graph& g, const LossParts& parts, const LossWeights& w);

// --- plain-value forms -----------------------------------------------------

double total_loss(const LossReport& parts, const LossWeights& w);

// Counts a clamp into *clamp_count when p_hat falls outside the clamp window.
double itm_term(double p_hat, int p, std::size_t* clamp_count = nullptr);
double uitc_loss(double itc_weak, const UncertaintyScore& u, double gamma);
UncertaintyScore consistency_uncertainty(std::span<const double> f_i, std::span<const double> f_t,
                                         std::span<const double> f_iw,
                                         std::span<const double> f_tw,
                                         UncertaintyMapping mapping);
Tensor matching_scores(const Tensor& a, const Tensor& b, double tau);
double itc_loss(const Tensor& f_i, const Tensor& f_t, double tau);

}  // namespace weakpair::loss
