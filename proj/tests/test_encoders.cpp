#include "doctest.h"

#include <cmath>

#include "support.hpp"
#include "weakpair/encoders.hpp"
#include "weakpair/gradcheck.hpp"

using namespace weakpair;
using namespace weakpair::model;
using weakpair::test::random_tensor;
using weakpair::test::unit_rows;

namespace {

const ModelDims kDims{10, 7, 12, 6, 5};

}  // namespace

TEST_CASE("embeddings have unit rows") {
    Rng rng(1);
    const Model m = init_params(3, kDims);
    for (int trial = 0; trial < 20; ++trial) {
        const auto out = encode(m, Modality::Image, random_tensor(8, 10, rng, 1.0 + trial));
        CHECK(out.degenerate_rows.empty());
        for (std::size_t r = 0; r < 8; ++r) CHECK(std::abs(test::row_norm(out.embeddings, r) - 1.0) <= 1e-12);
    }
}

TEST_CASE("zero weights and biases flag every row") {
    EncoderParams zero{Tensor(4, 3), Tensor(1, 3), Tensor(3, 2), Tensor(1, 2)};
    Rng rng(2);
    const auto out = encode(zero, random_tensor(3, 4, rng));
    CHECK(out.degenerate_rows == std::vector<std::size_t>{0, 1, 2});
    for (double v : out.embeddings.data()) CHECK(v == 0.0);
}

TEST_CASE("encode is deterministic") {
    Rng rng(3);
    const Model m = init_params(5, kDims);
    const Tensor raw = random_tensor(4, 7, rng);
    CHECK(encode(m, Modality::Text, raw).embeddings == encode(m, Modality::Text, raw).embeddings);

    grad::Graph g;
    auto nodes = bind(g, m);
    auto f = encode(g, nodes.text, g.constant(raw));
    CHECK(g.value(f) == encode(m, Modality::Text, raw).embeddings);
}

TEST_CASE("input dimension mismatch is rejected") {
    const Model m = init_params(0, kDims);
    CHECK_THROWS_AS(encode(m, Modality::Image, Tensor(2, 7)), ShapeError);
}

TEST_CASE("zero head gives exactly one half") {
    const FusionHeadParams zero{Tensor(18, 5), Tensor(1, 5), Tensor(5, 1), Tensor(1, 1)};
    Rng rng(4);
    const Tensor a = unit_rows(1, 6, rng);
    const Tensor b = unit_rows(1, 6, rng);
    CHECK(match_probability(zero, a.row_span(0), b.row_span(0)) == 0.5);
}

TEST_CASE("match probability lies in (0, 1)") {
    Rng rng(5);
    const Model m = init_params(6, kDims);
    for (int i = 0; i < 1000; ++i) {
        const Tensor a = unit_rows(1, 6, rng);
        const Tensor b = unit_rows(1, 6, rng);
        const double p = match_probability(m.head, a.row_span(0), b.row_span(0));
        CHECK(p > 0.0);
        CHECK(p < 1.0);
    }
}

TEST_CASE("head graph and value forms agree") {
    Rng rng(6);
    const Model m = init_params(7, kDims);
    const Tensor a = unit_rows(3, 6, rng);
    const Tensor b = unit_rows(3, 6, rng);
    grad::Graph g;
    auto nodes = bind(g, m);
    const Tensor& p = g.value(match_probability(g, nodes.head, g.constant(a), g.constant(b)));
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(p(i, 0) == doctest::Approx(match_probability(m.head, a.row_span(i), b.row_span(i)))
                             .epsilon(1e-14));
    }
}

TEST_CASE("init is seeded, scaled and has zero biases") {
    const Model a = init_params(9, kDims, 0.07);
    CHECK(a == init_params(9, kDims, 0.07));
    CHECK_FALSE(a == init_params(10, kDims, 0.07));
    for (const Tensor* b : {&a.image.b1, &a.image.b2, &a.text.b1, &a.text.b2, &a.head.b1, &a.head.b2}) {
        for (double v : b->data()) CHECK(v == 0.0);
    }
    CHECK(a.tau() == doctest::Approx(0.07).epsilon(1e-15));
    CHECK(a.gamma() == 1.0);
    CHECK(a.head.w1.rows() == 3 * kDims.embed);
    CHECK(a.image.w2.cols() == kDims.embed);
    CHECK(a.text.w1.rows() == kDims.text_input);

    // Large layer: the sample std of weights * sqrt(fan_in) should be near 1.
    const Model big = init_params(1, ModelDims{400, 4, 200, 4, 4});
    double ss = 0.0;
    for (double v : big.image.w1.data()) ss += v * v;
    const double std_scaled = std::sqrt(ss / static_cast<double>(big.image.w1.size())) * 20.0;
    CHECK(std_scaled == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("forward pass at init is finite") {
    Rng rng(8);
    const Model m = init_params(2, kDims);
    const auto fi = encode(m, Modality::Image, random_tensor(16, 10, rng));
    const auto ft = encode(m, Modality::Text, random_tensor(16, 7, rng));
    CHECK(fi.embeddings.all_finite());
    CHECK(ft.embeddings.all_finite());
    for (std::size_t i = 0; i < 16; ++i) {
        CHECK(std::isfinite(match_probability(m.head, fi.embeddings.row_span(i), ft.embeddings.row_span(i))));
    }
}

TEST_CASE("match probability gradients w.r.t. head parameters") {
    Rng rng(12);
    for (int trial = 0; trial < 5; ++trial) {
        const Tensor a = unit_rows(4, 6, rng);
        const Tensor b = unit_rows(4, 6, rng);
        const Tensor weights = random_tensor(4, 1, rng);
        std::vector<Tensor> params{random_tensor(18, 5, rng, 0.5), random_tensor(1, 5, rng, 0.1),
                                   random_tensor(5, 1, rng, 0.5), random_tensor(1, 1, rng, 0.1)};
        auto loss = [&](grad::Graph& g, std::span<const grad::NodeId> ids) {
            HeadNodes h{ids[0], ids[1], ids[2], ids[3]};
            auto p = match_probability(g, h, g.constant(a), g.constant(b));
            return g.sum(g.multiply(p, g.constant(weights)));
        };
        CHECK(grad::grad_check(loss, params, 1e-5).max_rel_error < 1e-4);
    }
}

TEST_CASE("parameter names follow the parameter order") {
    Model m = init_params(0, kDims);
    const auto& names = Model::parameter_names();
    REQUIRE(names.size() == m.parameters().size());
    CHECK(names.size() == 14);
    CHECK(m.parameters()[12] == &m.log_tau);
    CHECK(m.parameters()[13] == &m.log_gamma);
}
