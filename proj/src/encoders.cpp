#include "weakpair/encoders.hpp"

#include <cmath>

#include "weakpair/random.hpp"

namespace weakpair::model {

using grad::Graph;
using grad::NodeId;

double Model::tau() const { return std::exp(log_tau.item()); }
double Model::gamma() const { return std::exp(log_gamma.item()); }

std::vector<Tensor*> Model::parameters() {
    return {&image.w1, &image.b1, &image.w2, &image.b2, &text.w1,  &text.b1,  &text.w2,
            &text.b2,  &head.w1,  &head.b1,  &head.w2,  &head.b2,  &log_tau, &log_gamma};
}

std::vector<const Tensor*> Model::parameters() const {
    return {&image.w1, &image.b1, &image.w2, &image.b2, &text.w1,  &text.b1,  &text.w2,
            &text.b2,  &head.w1,  &head.b1,  &head.w2,  &head.b2,  &log_tau, &log_gamma};
}

const std::vector<std::string>& Model::parameter_names() {
    static const std::vector<std::string> names = {
        "image.w1", "image.b1", "image.w2", "image.b2", "text.w1", "text.b1",  "text.w2",
        "text.b2",  "head.w1",  "head.b1",  "head.w2",  "head.b2", "log_tau", "log_gamma"};
    return names;
}

namespace {

Tensor scaled_normal(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    Tensor w(fan_in, fan_out);
    const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : w.data()) v = scale * standard_normal(rng);
    return w;
}

EncoderParams init_encoder(std::size_t in, std::size_t hidden, std::size_t embed, Rng& rng) {
    EncoderParams e;
    e.w1 = scaled_normal(in, hidden, rng);
    e.b1 = Tensor(1, hidden);
    e.w2 = scaled_normal(hidden, embed, rng);
    e.b2 = Tensor(1, embed);
    return e;
}

}  // namespace

Model init_params(std::uint64_t seed, const ModelDims& dims, double initial_tau) {
    if (dims.image_input == 0 || dims.text_input == 0 || dims.hidden == 0 || dims.embed == 0 ||
        dims.head_hidden == 0) {
        throw std::invalid_argument("model dimensions must be positive");
    }
    if (!(initial_tau > 0.0)) throw std::invalid_argument("initial temperature must be positive");
    Rng rng(seed);
    Model m;
    m.image = init_encoder(dims.image_input, dims.hidden, dims.embed, rng);
    m.text = init_encoder(dims.text_input, dims.hidden, dims.embed, rng);
    m.head.w1 = scaled_normal(3 * dims.embed, dims.head_hidden, rng);
    m.head.b1 = Tensor(1, dims.head_hidden);
    m.head.w2 = scaled_normal(dims.head_hidden, 1, rng);
    m.head.b2 = Tensor(1, 1);
    m.log_tau = Tensor::scalar(std::log(initial_tau));
    m.log_gamma = Tensor::scalar(std::log(1.0));
    return m;
}

ModelNodes bind(Graph& g, const Model& m) {
    std::vector<NodeId> ids;
    for (const Tensor* t : m.parameters()) ids.push_back(g.parameter(*t));
    return bind_nodes(ids);
}

ModelNodes bind_nodes(std::span<const NodeId> ids) {
    if (ids.size() != Model::parameter_names().size()) {
        throw grad::ContractViolation("bind_nodes: expected " +
                                      std::to_string(Model::parameter_names().size()) + " nodes");
    }
    ModelNodes n;
    n.image = {ids[0], ids[1], ids[2], ids[3]};
    n.text = {ids[4], ids[5], ids[6], ids[7]};
    n.head = {ids[8], ids[9], ids[10], ids[11]};
    n.log_tau = ids[12];
    n.log_gamma = ids[13];
    return n;
}

NodeId encode(Graph& g, const EncoderNodes& enc, NodeId raw) {
    const NodeId hidden = g.tanh(g.affine(raw, enc.w1, enc.b1));
    return g.l2_normalize(g.affine(hidden, enc.w2, enc.b2));
}

NodeId match_probability(Graph& g, const HeadNodes& head, NodeId f_i, NodeId f_t) {
    const NodeId fused = g.concat_cols({f_i, f_t, g.multiply(f_i, f_t)});
    const NodeId hidden = g.tanh(g.affine(fused, head.w1, head.b1));
    return g.sigmoid(g.affine(hidden, head.w2, head.b2));
}

EncodeResult encode(const EncoderParams& enc, const Tensor& raw) {
    if (raw.cols() != enc.input_dim()) {
        throw ShapeError("encode: input has " + std::to_string(raw.cols()) +
                         " features, encoder expects " + std::to_string(enc.input_dim()));
    }
    Graph g;
    const EncoderNodes nodes{g.constant(enc.w1), g.constant(enc.b1), g.constant(enc.w2),
                             g.constant(enc.b2)};
    const NodeId out = encode(g, nodes, g.constant(raw));
    EncodeResult r;
    r.embeddings = g.value(out);
    r.degenerate_rows = g.node(out).flagged;
    return r;
}

EncodeResult encode(const Model& m, Modality modality, const Tensor& raw) {
    return encode(modality == Modality::Image ? m.image : m.text, raw);
}

EncodeResult encode(const Model& m, Modality modality, std::span<const double> raw) {
    return encode(m, modality, Tensor::row(raw));
}

double match_probability(const FusionHeadParams& head, std::span<const double> f_i,
                         std::span<const double> f_t) {
    if (f_i.size() != f_t.size() || 3 * f_i.size() != head.w1.rows()) {
        throw ShapeError("match_probability: embedding dims " + std::to_string(f_i.size()) + "/" +
                         std::to_string(f_t.size()) + " do not fit head input " +
                         std::to_string(head.w1.rows()));
    }
    Graph g;
    const HeadNodes nodes{g.constant(head.w1), g.constant(head.b1), g.constant(head.w2),
                          g.constant(head.b2)};
    const NodeId p = match_probability(g, nodes, g.constant(Tensor::row(f_i)),
                                       g.constant(Tensor::row(f_t)));
    return g.value(p).item();
}

}  // namespace weakpair::model
