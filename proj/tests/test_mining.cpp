#include "doctest.h"

#include <algorithm>
#include <numeric>

#include "support.hpp"
#include "weakpair/graph.hpp"
#include "weakpair/mining.hpp"

using namespace weakpair;
using namespace weakpair::mining;
using weakpair::test::unit_rows;

namespace {

std::vector<data::PairRecord> records_for(const std::vector<std::pair<IdentityId, std::size_t>>& keys) {
    std::vector<data::PairRecord> out;
    for (auto [id, view] : keys) out.push_back({id, view, {1.0}, {1.0}});
    return out;
}

// Sort all eligible candidates by (-similarity, index) and take the first k.
std::vector<std::size_t> oracle(const Tensor& sim, std::span<const IdentityId> ids, std::size_t anchor,
                                Direction dir, std::size_t k) {
    std::vector<std::size_t> eligible;
    for (std::size_t j = 0; j < ids.size(); ++j) {
        if (ids[j] != ids[anchor]) eligible.push_back(j);
    }
    auto score = [&](std::size_t j) { return dir == Direction::ImageToText ? sim(anchor, j) : sim(j, anchor); };
    std::sort(eligible.begin(), eligible.end(), [&](std::size_t a, std::size_t b) {
        if (score(a) != score(b)) return score(a) > score(b);
        return a < b;
    });
    eligible.resize(std::min(k, eligible.size()));
    return eligible;
}

}  // namespace

TEST_CASE("two views force the other view") {
    const auto recs = records_for({{7, 0}, {7, 1}, {8, 0}, {8, 1}});
    const auto pool = data::group_by_identity(recs);
    Rng rng(1);
    for (int i = 0; i < 100; ++i) {
        const auto sel = sample_weak(0, recs, pool, rng);
        CHECK(sel.weak == 1);
        CHECK_FALSE(sel.degenerate);
    }
}

TEST_CASE("a single view is degenerate and returns the anchor") {
    const auto recs = records_for({{3, 0}, {4, 0}, {4, 1}});
    const auto pool = data::group_by_identity(recs);
    Rng rng(2);
    const auto sel = sample_weak(0, recs, pool, rng);
    CHECK(sel.degenerate);
    CHECK(sel.weak == 0);
}

TEST_CASE("weak draws are uniform over the other views") {
    const auto recs = records_for({{1, 0}, {1, 1}, {1, 2}, {1, 3}, {1, 4}});
    const auto pool = data::group_by_identity(recs);
    Rng rng(3);
    std::vector<int> counts(5, 0);
    for (int i = 0; i < 10000; ++i) ++counts[sample_weak(2, recs, pool, rng).weak];
    CHECK(counts[2] == 0);
    for (std::size_t v : {0u, 1u, 3u, 4u}) CHECK(std::abs(counts[v] / 10000.0 - 0.25) <= 0.02);
}

TEST_CASE("weak partner always shares the identity") {
    data::GenConfig cfg;
    cfg.num_identities = 20;
    cfg.views_per_identity = 3;
    const auto d = data::generate(cfg);
    const auto pool = data::group_by_identity(d.records);
    Rng rng(4);
    for (std::size_t a = 0; a < d.records.size(); ++a) {
        for (int i = 0; i < 20; ++i) {
            const auto sel = sample_weak(a, d.records, pool, rng);
            CHECK(d.records[sel.weak].identity == d.records[a].identity);
            CHECK(sel.weak != a);
        }
    }
}

TEST_CASE("anchor identity missing from the pool") {
    const auto recs = records_for({{1, 0}, {2, 0}});
    const auto pool = data::group_by_identity(records_for({{2, 0}}));
    Rng rng(5);
    CHECK_THROWS_AS(sample_weak(0, recs, pool, rng), std::out_of_range);
}

TEST_CASE("hardest negative is the most similar eligible candidate") {
    const std::vector<IdentityId> ids{0, 1, 2};
    const Tensor sim = Tensor::from_rows({{1.0, 0.9, 0.1}, {0.2, 1.0, 0.3}, {0.4, 0.5, 1.0}});
    CHECK(mine_hard_negatives(sim, ids, 0, Direction::ImageToText, 1) == std::vector<std::size_t>{1});
    CHECK(oracle(sim, ids, 0, Direction::ImageToText, 1) == std::vector<std::size_t>{1});
    CHECK(mine_hard_negatives(sim, ids, 0, Direction::TextToImage, 1) == std::vector<std::size_t>{2});
    CHECK(mine_hard_negatives(sim, ids, 1, Direction::ImageToText, 2) == std::vector<std::size_t>{2, 0});
}

TEST_CASE("ties go to the lowest index") {
    const std::vector<IdentityId> ids{5, 6, 7, 8, 9};
    const Tensor sim(5, 5, 0.25);
    CHECK(mine_hard_negatives(sim, ids, 2, Direction::ImageToText, 2) == std::vector<std::size_t>{0, 1});
    CHECK(mine_hard_negatives(sim, ids, 0, Direction::TextToImage, 3) == std::vector<std::size_t>{1, 2, 3});
}

TEST_CASE("mining matches a sort oracle and never returns the anchor identity") {
    Rng rng(6);
    for (int batch = 0; batch < 1000; ++batch) {
        const std::size_t n = 3 + uniform_index(rng, 8);
        std::vector<IdentityId> ids(n);
        // Repeated identities are allowed here so exclusion is exercised.
        for (auto& id : ids) id = static_cast<IdentityId>(uniform_index(rng, n));
        Tensor sim(n, n);
        for (double& v : sim.data()) v = std::round((2.0 * uniform01(rng) - 1.0) * 4.0) / 4.0;
        const std::size_t anchor = uniform_index(rng, n);
        const std::size_t eligible = static_cast<std::size_t>(
            std::count_if(ids.begin(), ids.end(), [&](IdentityId x) { return x != ids[anchor]; }));
        for (auto dir : {Direction::ImageToText, Direction::TextToImage}) {
            for (std::size_t k = 1; k <= 3; ++k) {
                if (eligible < k) {
                    CHECK_THROWS_AS(mine_hard_negatives(sim, ids, anchor, dir, k), MiningStarvation);
                    continue;
                }
                const auto got = mine_hard_negatives(sim, ids, anchor, dir, k);
                CHECK(got == oracle(sim, ids, anchor, dir, k));
                for (std::size_t j : got) CHECK(ids[j] != ids[anchor]);
            }
        }
    }
}

TEST_CASE("embedding batch mining uses image-text cosines") {
    Rng rng(7);
    EmbeddingBatch b{unit_rows(4, 3, rng), unit_rows(4, 3, rng), unit_rows(4, 3, rng),
                     unit_rows(4, 3, rng), {0, 1, 2, 3}};
    const Tensor sim = grad::cosine_matrix(b.image, b.text);
    for (std::size_t a = 0; a < 4; ++a) {
        for (auto dir : {Direction::ImageToText, Direction::TextToImage}) {
            CHECK(mine_hard_negatives(b, a, dir, 2) == mine_hard_negatives(sim, b.identities, a, dir, 2));
        }
    }
}

TEST_CASE("mode and K correspond") {
    CHECK(MiningConfig::from_mode(MiningMode::Neg3v4).k == 1);
    CHECK(MiningConfig::from_mode(MiningMode::Neg3v6).k == 2);
    CHECK(MiningConfig::from_mode(MiningMode::Custom, 3).k == 3);
    CHECK_THROWS(MiningConfig{2, MiningMode::Neg3v4}.validate());
    CHECK_THROWS(MiningConfig{1, MiningMode::Neg3v6}.validate());
    CHECK_THROWS(MiningConfig{0, MiningMode::Custom}.validate());
    for (auto m : {MiningMode::Neg3v4, MiningMode::Neg3v6, MiningMode::Custom}) {
        CHECK(parse_mode(mode_name(m)) == m);
    }
}

TEST_CASE("group composition for both modes") {
    Rng rng(8);
    const std::vector<IdentityId> ids{10, 11, 12, 13, 14};
    const Tensor sim = grad::cosine_matrix(unit_rows(5, 3, rng), unit_rows(5, 3, rng));
    const auto g4 = build_group(0, sim, ids, MiningConfig::from_mode(MiningMode::Neg3v4));
    CHECK(g4.matched_count() == 3);
    CHECK(g4.negative_count() == 4);
    const auto g6 = build_group(0, sim, ids, MiningConfig::from_mode(MiningMode::Neg3v6));
    CHECK(g6.matched_count() == 3);
    CHECK(g6.negative_count() == 6);

    CHECK(g6.strong[0] == PairSpec{Side::Anchor, 0, Side::Anchor, 0, 1});
    CHECK(g6.weak_text[0] == PairSpec{Side::Anchor, 0, Side::Weak, 0, 1});
    CHECK(g6.weak_image[0] == PairSpec{Side::Weak, 0, Side::Anchor, 0, 1});
    for (std::size_t i = 1; i < 3; ++i) {
        CHECK(g6.weak_text[i].label == 0);
        CHECK(g6.weak_text[i].image_side == Side::Anchor);
        CHECK(g6.weak_text[i].image_row == 0);
        CHECK(g6.weak_image[i].label == 0);
        CHECK(g6.weak_image[i].text_row == 0);
    }
}

TEST_CASE("two identities support K=1 but starve K=2") {
    const std::vector<IdentityId> ids{0, 1};
    const Tensor sim = Tensor::from_rows({{1.0, 0.2}, {0.3, 1.0}});
    const auto grp = build_group(0, sim, ids, MiningConfig::from_mode(MiningMode::Neg3v4));
    CHECK_NOTHROW(validate_group(grp, ids));
    try {
        build_group(0, sim, ids, MiningConfig::from_mode(MiningMode::Neg3v6));
        FAIL("no starvation");
    } catch (const MiningStarvation& e) {
        const std::string msg = e.what();
        CHECK(msg.find("needs 2 negatives but only 1") != std::string::npos);
        CHECK(msg.find("batch of") != std::string::npos);
    }
}

TEST_CASE("random groups keep their cardinality and identity rules") {
    Rng rng(9);
    std::size_t groups = 0;
    for (int batch = 0; batch < 200; ++batch) {
        const std::size_t n = 4 + uniform_index(rng, 10);
        std::vector<IdentityId> ids(n);
        std::iota(ids.begin(), ids.end(), IdentityId{100});
        shuffle(ids, rng);
        const Tensor sim = grad::cosine_matrix(unit_rows(n, 4, rng), unit_rows(n, 4, rng));
        const std::size_t k = 1 + uniform_index(rng, std::min<std::size_t>(n - 1, 4));
        for (const auto& grp : build_groups(sim, ids, MiningConfig::from_mode(MiningMode::Custom, k))) {
            CHECK_NOTHROW(validate_group(grp, ids));
            CHECK(grp.matched_count() == 3);
            CHECK(grp.negative_count() == 2 + 2 * k);
            ++groups;
        }
    }
    CHECK(groups >= 1000);
}

TEST_CASE("validate_group rejects a same-identity negative") {
    const std::vector<IdentityId> ids{0, 1, 0};
    const Tensor sim = Tensor::from_rows({{1, 0.5, 0.9}, {0.1, 1, 0.2}, {0.3, 0.4, 1}});
    auto grp = build_group(0, sim, ids, MiningConfig::from_mode(MiningMode::Neg3v4));
    CHECK_NOTHROW(validate_group(grp, ids));
    grp.strong[1].text_row = 2;
    CHECK_THROWS_AS(validate_group(grp, ids), std::logic_error);
}
