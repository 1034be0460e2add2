#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "weakpair/graph.hpp"
#include "weakpair/tensor.hpp"

namespace weakpair::model {

enum class Modality { Image, Text };

// Two affine layers with a tanh in between; output rows are L2-normalized.
struct EncoderParams {
    Tensor w1;  // input_dim x hidden
    Tensor b1;  // 1 x hidden
    Tensor w2;  // hidden x embed
    Tensor b2;  // 1 x embed

    std::size_t input_dim() const { return w1.rows(); }
    std::size_t embed_dim() const { return w2.cols(); }
    friend bool operator==(const EncoderParams&, const EncoderParams&) = default;
};

// Scores a pair from [f_I, f_T, f_I * f_T] through affine -> tanh -> affine -> sigmoid.
struct FusionHeadParams {
    Tensor w1;  // 3*embed x head_hidden
    Tensor b1;  // 1 x head_hidden
    Tensor w2;  // head_hidden x 1
    Tensor b2;  // 1 x 1
    friend bool operator==(const FusionHeadParams&, const FusionHeadParams&) = default;
};

struct ModelDims {
    std::size_t image_input = 0;
    std::size_t text_input = 0;
    std::size_t hidden = 64;
    std::size_t embed = 32;
    std::size_t head_hidden = 32;
};

// Every trainable tensor of a run. log_tau and log_gamma are stored in log
// space so the temperature and the uncertainty scale stay positive.
struct Model {
    EncoderParams image;
    EncoderParams text;
    FusionHeadParams head;
    Tensor log_tau;    // 1 x 1
    Tensor log_gamma;  // 1 x 1

    double tau() const;
    double gamma() const;

    // Fixed order shared by the optimizer, checkpoints and grad checks.
    std::vector<Tensor*> parameters();
    std::vector<const Tensor*> parameters() const;
    static const std::vector<std::string>& parameter_names();
    friend bool operator==(const Model&, const Model&) = default;
};

// Weights ~ N(0, 1) / sqrt(fan_in), biases zero, log_gamma = log(1).
Model init_params(std::uint64_t seed, const ModelDims& dims, double initial_tau = 0.07);

struct EncoderNodes {
    grad::NodeId w1, b1, w2, b2;
};
struct HeadNodes {
    grad::NodeId w1, b1, w2, b2;
};
struct ModelNodes {
    EncoderNodes image;
    EncoderNodes text;
    HeadNodes head;
    grad::NodeId log_tau;
    grad::NodeId log_gamma;
};

// Registers every model tensor as a trainable leaf, in parameters() order.
ModelNodes bind(grad::Graph& g, const Model& m);
// Same layout from already-registered nodes (e.g. those handed out by grad_check).
ModelNodes bind_nodes(std::span<const grad::NodeId> ids);

// raw: n x input_dim -> n x embed with unit rows (zero rows are flagged on the graph).
grad::NodeId encode(grad::Graph& g, const EncoderNodes& enc, grad::NodeId raw);
// f_i, f_t: m x embed -> m x 1 match probabilities.
grad::NodeId match_probability(grad::Graph& g, const HeadNodes& head, grad::NodeId f_i,
                               grad::NodeId f_t);

struct EncodeResult {
    Tensor embeddings;
    std::vector<std::size_t> degenerate_rows;
};

// Graph-free forward passes.
EncodeResult encode(const EncoderParams& enc, const Tensor& raw);
EncodeResult encode(const Model& m, Modality modality, const Tensor& raw);
EncodeResult encode(const Model& m, Modality modality, std::span<const double> raw);
double match_probability(const FusionHeadParams& head, std::span<const double> f_i,
                         std::span<const double> f_t);

}  // namespace weakpair::model
