#pragma once

// Synthetic multi-view image/text pairs.
//
// Each identity owns a latent attribute vector. Every view of the identity
// renders an image through a view-specific linear map, and a text through a
// shared linear map applied to a randomly masked copy of the attributes: an
// annotator who sees one view describes only what that view shows. Texts of
// the same identity therefore agree only partially across views, which is the
// weak-pair structure the losses exploit.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace weakpair::data {

using IdentityId = std::int64_t;

struct GenConfig {
    std::size_t num_identities = 64;
    std::size_t views_per_identity = 4;
    std::size_t latent_dim = 16;
    std::size_t raw_dim_image = 32;
    std::size_t raw_dim_text = 24;
    double view_noise = 0.1;
    double annotation_mask_rate = 0.3;
    std::uint64_t seed = 0;

    // Throws std::invalid_argument on a violated invariant.
    void validate() const;
    friend bool operator==(const GenConfig&, const GenConfig&) = default;
};

struct PairRecord {
    IdentityId identity = 0;
    std::size_t view = 0;
    std::vector<double> image_raw;
    std::vector<double> text_raw;
    friend bool operator==(const PairRecord&, const PairRecord&) = default;
};

enum class SplitTag { None, Train, Test };

const char* split_tag_name(SplitTag tag);

struct DatasetManifest {
    static constexpr int kVersion = 1;

    int version = kVersion;
    GenConfig gen_config;
    std::vector<PairRecord> records;
    SplitTag split_tag = SplitTag::None;

    std::size_t identity_count() const;
    friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Record indices per identity, in dataset order.
using IdentityIndex = std::map<IdentityId, std::vector<std::size_t>>;
IdentityIndex group_by_identity(const std::vector<PairRecord>& records);

DatasetManifest generate(const GenConfig& cfg);

// Identity-disjoint split. Throws std::invalid_argument for fewer than two
// identities or a fraction outside (0, 1).
std::pair<DatasetManifest, DatasetManifest> split(const DatasetManifest& d, double train_fraction,
                                                  std::uint64_t seed);

void write(const DatasetManifest& d, std::ostream& os);
void write(const DatasetManifest& d, const std::filesystem::path& path);
DatasetManifest read(std::istream& is);
DatasetManifest read(const std::filesystem::path& path);

}  // namespace weakpair::data
