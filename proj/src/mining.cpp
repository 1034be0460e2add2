#include "weakpair/mining.hpp"

#include <algorithm>
#include <map>
#include <numeric>

#include "weakpair/graph.hpp"

namespace weakpair::mining {

const char* mode_name(MiningMode mode) {
    switch (mode) {
        case MiningMode::Neg3v4: return "neg3v4";
        case MiningMode::Neg3v6: return "neg3v6";
        case MiningMode::Custom: break;
    }
    return "custom";
}

MiningMode parse_mode(std::string_view name) {
    if (name == "neg3v4") return MiningMode::Neg3v4;
    if (name == "neg3v6") return MiningMode::Neg3v6;
    if (name == "custom") return MiningMode::Custom;
    throw std::invalid_argument("unknown mining mode '" + std::string(name) + "'");
}

MiningConfig MiningConfig::from_mode(MiningMode mode, std::size_t custom_k) {
    MiningConfig c;
    c.mode = mode;
    switch (mode) {
        case MiningMode::Neg3v4: c.k = 1; break;
        case MiningMode::Neg3v6: c.k = 2; break;
        case MiningMode::Custom: c.k = custom_k; break;
    }
    c.validate();
    return c;
}

void MiningConfig::validate() const {
    if (k < 1) throw std::invalid_argument("mining K must be >= 1");
    if ((mode == MiningMode::Neg3v4 && k != 1) || (mode == MiningMode::Neg3v6 && k != 2)) {
        throw std::invalid_argument(std::string("mining mode ") + mode_name(mode) +
                                    " is inconsistent with K=" + std::to_string(k));
    }
}

WeakSelection sample_weak(std::size_t anchor, const std::vector<data::PairRecord>& records,
                          const data::IdentityIndex& pool, Rng& rng) {
    const IdentityId id = records.at(anchor).identity;
    const auto it = pool.find(id);
    if (it == pool.end()) {
        throw std::out_of_range("identity " + std::to_string(id) + " absent from weak pool");
    }
    std::vector<std::size_t> candidates;
    for (std::size_t r : it->second) {
        if (r != anchor) candidates.push_back(r);
    }
    if (candidates.empty()) return {anchor, anchor, true};
    return {anchor, candidates[uniform_index(rng, candidates.size())], false};
}

namespace {

std::string describe_batch(std::span<const IdentityId> identities) {
    std::map<IdentityId, std::size_t> counts;
    for (IdentityId id : identities) ++counts[id];
    std::string s = std::to_string(identities.size()) + " samples over " +
                    std::to_string(counts.size()) + " identities {";
    bool first = true;
    for (const auto& [id, n] : counts) {
        if (!first) s += ", ";
        first = false;
        s += std::to_string(id) + ":" + std::to_string(n);
    }
    return s + "}";
}

}  // namespace

std::vector<std::size_t> mine_hard_negatives(const Tensor& similarity,
                                             std::span<const IdentityId> identities,
                                             std::size_t anchor, Direction direction,
                                             std::size_t k) {
    const std::size_t n = identities.size();
    if (similarity.rows() != n || similarity.cols() != n) {
        throw ShapeError("similarity " + similarity.shape_string() + " does not match batch of " +
                         std::to_string(n));
    }
    if (anchor >= n) throw std::out_of_range("anchor outside batch");
    auto score = [&](std::size_t j) {
        return direction == Direction::ImageToText ? similarity(anchor, j) : similarity(j, anchor);
    };
    std::vector<std::size_t> eligible;
    for (std::size_t j = 0; j < n; ++j) {
        if (identities[j] != identities[anchor]) eligible.push_back(j);
    }
    if (eligible.size() < k) {
        throw MiningStarvation("mining starvation: anchor " + std::to_string(anchor) + " needs " +
                               std::to_string(k) + " negatives but only " +
                               std::to_string(eligible.size()) + " are eligible in batch of " +
                               describe_batch(identities));
    }
    std::stable_sort(eligible.begin(), eligible.end(),
                     [&](std::size_t a, std::size_t b) { return score(a) > score(b); });
    eligible.resize(k);
    return eligible;
}

std::vector<std::size_t> mine_hard_negatives(const EmbeddingBatch& batch, std::size_t anchor,
                                             Direction direction, std::size_t k) {
    return mine_hard_negatives(grad::cosine_matrix(batch.image, batch.text), batch.identities,
                               anchor, direction, k);
}

std::size_t PairGroup::matched_count() const {
    std::size_t n = 0;
    for (const auto* branch : {&strong, &weak_text, &weak_image}) {
        for (const auto& p : *branch) n += p.label == 1;
    }
    return n;
}

std::size_t PairGroup::negative_count() const {
    return strong.size() + weak_text.size() + weak_image.size() - matched_count();
}

PairGroup build_group(std::size_t anchor, const Tensor& similarity,
                      std::span<const IdentityId> identities, const MiningConfig& cfg) {
    cfg.validate();
    const auto text_negs =
        mine_hard_negatives(similarity, identities, anchor, Direction::ImageToText, cfg.k);
    const auto image_negs =
        mine_hard_negatives(similarity, identities, anchor, Direction::TextToImage, cfg.k);

    PairGroup g;
    g.anchor = anchor;
    g.k = cfg.k;
    g.strong = {
        {Side::Anchor, anchor, Side::Anchor, anchor, 1},
        {Side::Anchor, anchor, Side::Anchor, text_negs.front(), 0},
        {Side::Anchor, image_negs.front(), Side::Anchor, anchor, 0},
    };
    g.weak_text.push_back({Side::Anchor, anchor, Side::Weak, anchor, 1});
    for (std::size_t j : text_negs) g.weak_text.push_back({Side::Anchor, anchor, Side::Anchor, j, 0});
    g.weak_image.push_back({Side::Weak, anchor, Side::Anchor, anchor, 1});
    for (std::size_t j : image_negs) {
        g.weak_image.push_back({Side::Anchor, j, Side::Anchor, anchor, 0});
    }
    return g;
}

std::vector<PairGroup> build_groups(const Tensor& similarity,
                                    std::span<const IdentityId> identities,
                                    const MiningConfig& cfg) {
    std::vector<PairGroup> groups;
    groups.reserve(identities.size());
    for (std::size_t i = 0; i < identities.size(); ++i) {
        groups.push_back(build_group(i, similarity, identities, cfg));
    }
    return groups;
}

void validate_group(const PairGroup& group, std::span<const IdentityId> identities) {
    if (group.matched_count() != 3) throw std::logic_error("group must hold 3 matched pairs");
    if (group.negative_count() != 2 + 2 * group.k) {
        throw std::logic_error("group must hold 2+2K negatives");
    }
    const IdentityId anchor_id = identities[group.anchor];
    for (const auto* branch : {&group.strong, &group.weak_text, &group.weak_image}) {
        for (const auto& p : *branch) {
            const IdentityId img = identities[p.image_row];
            const IdentityId txt = identities[p.text_row];
            if (p.label == 1 && (img != anchor_id || txt != anchor_id)) {
                throw std::logic_error("matched pair outside the anchor identity");
            }
            if (p.label == 0 && img == anchor_id && txt == anchor_id) {
                throw std::logic_error("negative pair shares the anchor identity");
            }
        }
    }
}

}  // namespace weakpair::mining
