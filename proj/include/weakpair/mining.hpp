#pragma once

// Weak-positive sampling, in-batch hard-negative mining and per-anchor group
// assembly for the group-wise matching loss.
//
// For anchor i the group holds the strong pair (I_i, T_i) with one hardest
// negative text for I_i and one hardest negative image for T_i, plus two weak
// branches: (I_i, T_i^w) with the K hardest negative texts for I_i, and
// (I_i^w, T_i) with the K hardest negative images for T_i. That is three
// matched pairs and 2 + 2K negatives per anchor.

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "weakpair/datagen.hpp"
#include "weakpair/random.hpp"
#include "weakpair/tensor.hpp"

namespace weakpair::mining {

using data::IdentityId;

enum class MiningMode { Neg3v4, Neg3v6, Custom };

const char* mode_name(MiningMode mode);
MiningMode parse_mode(std::string_view name);

struct MiningConfig {
    std::size_t k = 2;
    MiningMode mode = MiningMode::Neg3v6;

    // neg3v4 -> K=1, neg3v6 -> K=2; custom takes the given k.
    static MiningConfig from_mode(MiningMode mode, std::size_t custom_k = 0);
    void validate() const;
    friend bool operator==(const MiningConfig&, const MiningConfig&) = default;
};

struct WeakSelection {
    std::size_t anchor = 0;  // record index
    std::size_t weak = 0;    // record index, same identity
    bool degenerate = false; // the identity has a single record, so weak == anchor
};

// Uniform draw among the anchor identity's other records.
// Throws std::out_of_range when the identity is absent from the pool.
WeakSelection sample_weak(std::size_t anchor, const std::vector<data::PairRecord>& records,
                          const data::IdentityIndex& pool, Rng& rng);

enum class Direction { ImageToText, TextToImage };

class MiningStarvation : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Unit-norm embeddings of one mini-batch; row i of every matrix is anchor i.
struct EmbeddingBatch {
    Tensor image;
    Tensor text;
    Tensor weak_image;
    Tensor weak_text;
    std::vector<IdentityId> identities;
};

// similarity(i, j) = cos(f_I_i, f_T_j). Returns the k most similar candidates
// of the other modality whose identity differs from the anchor's, ordered by
// decreasing similarity with ties going to the lower index.
std::vector<std::size_t> mine_hard_negatives(const Tensor& similarity,
                                             std::span<const IdentityId> identities,
                                             std::size_t anchor, Direction direction,
                                             std::size_t k);
std::vector<std::size_t> mine_hard_negatives(const EmbeddingBatch& batch, std::size_t anchor,
                                             Direction direction, std::size_t k);

enum class Side { Anchor, Weak };

// One image/text pair fed to the matching head, addressed by batch row.
struct PairSpec {
    Side image_side = Side::Anchor;
    std::size_t image_row = 0;
    Side text_side = Side::Anchor;
    std::size_t text_row = 0;
    int label = 0;
    friend bool operator==(const PairSpec&, const PairSpec&) = default;
};

struct PairGroup {
    std::size_t anchor = 0;
    std::size_t k = 0;
    std::vector<PairSpec> strong;       // (I_i,T_i,1), (I_i,T_neg,0), (I_neg,T_i,0)
    std::vector<PairSpec> weak_text;    // (I_i,T_i^w,1) then K x (I_i,T_j,0)
    std::vector<PairSpec> weak_image;   // (I_i^w,T_i,1) then K x (I_j,T_i,0)

    std::size_t matched_count() const;
    std::size_t negative_count() const;
};

PairGroup build_group(std::size_t anchor, const Tensor& similarity,
                      std::span<const IdentityId> identities, const MiningConfig& cfg);
std::vector<PairGroup> build_groups(const Tensor& similarity,
                                    std::span<const IdentityId> identities,
                                    const MiningConfig& cfg);

// Throws std::logic_error if the group breaks its cardinality or identity rules.
void validate_group(const PairGroup& group, std::span<const IdentityId> identities);

}  // namespace weakpair::mining
