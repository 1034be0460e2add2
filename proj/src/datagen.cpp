#include "weakpair/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "weakpair/random.hpp"
#include "weakpair/text_io.hpp"

namespace weakpair::data {

namespace {

// Spread of the per-view image maps around the shared one.
constexpr double kViewMapSpread = 0.5;

using Matrix = std::vector<std::vector<double>>;

Matrix gaussian_matrix(std::size_t rows, std::size_t cols, double scale, Rng& rng) {
    Matrix m(rows, std::vector<double>(cols));
    for (auto& r : m) {
        for (double& v : r) v = scale * standard_normal(rng);
    }
    return m;
}

std::vector<double> transform(const Matrix& m, const std::vector<double>& x) {
    std::vector<double> out(m.size(), 0.0);
    for (std::size_t r = 0; r < m.size(); ++r) {
        for (std::size_t c = 0; c < x.size(); ++c) out[r] += m[r][c] * x[c];
    }
    return out;
}

}  // namespace

void GenConfig::validate() const {
    if (num_identities < 1 || views_per_identity < 1 || latent_dim < 1 || raw_dim_image < 1 ||
        raw_dim_text < 1) {
        throw std::invalid_argument("generator counts must all be >= 1");
    }
    if (!(view_noise >= 0.0) || !std::isfinite(view_noise)) {
        throw std::invalid_argument("view_noise must be a finite nonnegative number");
    }
    if (!(annotation_mask_rate >= 0.0 && annotation_mask_rate < 1.0)) {
        throw std::invalid_argument("annotation_mask_rate must lie in [0, 1)");
    }
}

const char* split_tag_name(SplitTag tag) {
    switch (tag) {
        case SplitTag::Train: return "train";
        case SplitTag::Test: return "test";
        case SplitTag::None: break;
    }
    return "none";
}

std::size_t DatasetManifest::identity_count() const {
    std::set<IdentityId> ids;
    for (const auto& r : records) ids.insert(r.identity);
    return ids.size();
}

IdentityIndex group_by_identity(const std::vector<PairRecord>& records) {
    IdentityIndex index;
    for (std::size_t i = 0; i < records.size(); ++i) index[records[i].identity].push_back(i);
    return index;
}

DatasetManifest generate(const GenConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    const double map_scale = 1.0 / std::sqrt(static_cast<double>(cfg.latent_dim));

    const Matrix shared_image = gaussian_matrix(cfg.raw_dim_image, cfg.latent_dim, map_scale, rng);
    std::vector<Matrix> view_image;
    for (std::size_t v = 0; v < cfg.views_per_identity; ++v) {
        Matrix m = gaussian_matrix(cfg.raw_dim_image, cfg.latent_dim, map_scale, rng);
        for (std::size_t r = 0; r < m.size(); ++r) {
            for (std::size_t c = 0; c < m[r].size(); ++c) {
                m[r][c] = shared_image[r][c] + kViewMapSpread * m[r][c];
            }
        }
        view_image.push_back(std::move(m));
    }
    const Matrix text_map = gaussian_matrix(cfg.raw_dim_text, cfg.latent_dim, map_scale, rng);

    DatasetManifest d;
    d.gen_config = cfg;
    d.records.reserve(cfg.num_identities * cfg.views_per_identity);
    for (std::size_t id = 0; id < cfg.num_identities; ++id) {
        std::vector<double> z(cfg.latent_dim);
        for (double& v : z) v = standard_normal(rng);
        for (std::size_t view = 0; view < cfg.views_per_identity; ++view) {
            PairRecord rec;
            rec.identity = static_cast<IdentityId>(id);
            rec.view = view;
            rec.image_raw = transform(view_image[view], z);
            for (double& v : rec.image_raw) v += cfg.view_noise * standard_normal(rng);

            std::vector<double> visible = z;
            for (double& v : visible) {
                if (uniform01(rng) < cfg.annotation_mask_rate) v = 0.0;
            }
            rec.text_raw = transform(text_map, visible);
            for (double& v : rec.text_raw) v += cfg.view_noise * standard_normal(rng);
            d.records.push_back(std::move(rec));
        }
    }
    return d;
}

std::pair<DatasetManifest, DatasetManifest> split(const DatasetManifest& d, double train_fraction,
                                                  std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw std::invalid_argument("train_fraction must lie in (0, 1)");
    }
    const IdentityIndex index = group_by_identity(d.records);
    if (index.size() < 2) throw std::invalid_argument("cannot split fewer than 2 identities");

    std::vector<IdentityId> ids;
    for (const auto& [id, _] : index) ids.push_back(id);
    Rng rng(seed);
    shuffle(ids, rng);
    const auto total = static_cast<double>(ids.size());
    const auto n_train = static_cast<std::size_t>(
        std::clamp(std::llround(train_fraction * total), 1LL, static_cast<long long>(ids.size()) - 1));
    const std::set<IdentityId> train_ids(ids.begin(), ids.begin() + static_cast<long>(n_train));

    DatasetManifest train, test;
    train.gen_config = test.gen_config = d.gen_config;
    train.split_tag = SplitTag::Train;
    test.split_tag = SplitTag::Test;
    for (const auto& rec : d.records) {
        (train_ids.count(rec.identity) ? train : test).records.push_back(rec);
    }
    return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// Line-delimited format: one header line, then one TAB-separated record per line.

namespace {

constexpr const char* kMagic = "weakpair-dataset";

void write_vector(std::ostream& os, const std::vector<double>& v) {
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) os << ',';
        os << format_double(v[i]);
    }
}

std::vector<double> read_vector(std::string_view text, std::size_t expected, std::string_view what) {
    std::vector<double> out;
    for (auto piece : weakpair::split(text, ',')) out.push_back(parse_double(piece, what));
    if (out.size() != expected) {
        throw std::invalid_argument(std::string(what) + " has " + std::to_string(out.size()) +
                                    " values, expected " + std::to_string(expected));
    }
    for (double v : out) {
        if (!std::isfinite(v)) throw std::invalid_argument(std::string(what) + " is not finite");
    }
    return out;
}

SplitTag parse_split(std::string_view s) {
    if (s == "train") return SplitTag::Train;
    if (s == "test") return SplitTag::Test;
    if (s == "none") return SplitTag::None;
    throw std::invalid_argument("unknown split tag '" + std::string(s) + "'");
}

}  // namespace

void write(const DatasetManifest& d, std::ostream& os) {
    const GenConfig& c = d.gen_config;
    os << kMagic << " version=" << d.version << " split=" << split_tag_name(d.split_tag)
       << " num_identities=" << c.num_identities << " views_per_identity=" << c.views_per_identity
       << " latent_dim=" << c.latent_dim << " raw_dim_image=" << c.raw_dim_image
       << " raw_dim_text=" << c.raw_dim_text << " view_noise=" << format_double(c.view_noise)
       << " annotation_mask_rate=" << format_double(c.annotation_mask_rate) << " seed=" << c.seed
       << '\n';
    for (const auto& r : d.records) {
        os << r.identity << '\t' << r.view << '\t';
        write_vector(os, r.image_raw);
        os << '\t';
        write_vector(os, r.text_raw);
        os << '\n';
    }
}

void write(const DatasetManifest& d, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
    write(d, os);
    if (!os) throw std::runtime_error("write failed: " + path.string());
}

DatasetManifest read(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw FormatError("empty dataset file: missing header");

    DatasetManifest d;
    {
        auto fields = weakpair::split(trim(line), ' ');
        if (fields.empty() || fields[0] != kMagic) {
            throw FormatError("header: not a weakpair dataset");
        }
        std::set<std::string> seen;
        try {
            for (std::size_t i = 1; i < fields.size(); ++i) {
                const auto eq = fields[i].find('=');
                if (eq == std::string_view::npos) {
                    throw std::invalid_argument("expected key=value, got '" +
                                                std::string(fields[i]) + "'");
                }
                const std::string key(fields[i].substr(0, eq));
                const std::string_view val = fields[i].substr(eq + 1);
                seen.insert(key);
                GenConfig& c = d.gen_config;
                auto count = [&] { return static_cast<std::size_t>(parse_int(val, key)); };
                if (key == "version") d.version = static_cast<int>(parse_int(val, key));
                else if (key == "split") d.split_tag = parse_split(val);
                else if (key == "num_identities") c.num_identities = count();
                else if (key == "views_per_identity") c.views_per_identity = count();
                else if (key == "latent_dim") c.latent_dim = count();
                else if (key == "raw_dim_image") c.raw_dim_image = count();
                else if (key == "raw_dim_text") c.raw_dim_text = count();
                else if (key == "view_noise") c.view_noise = parse_double(val, key);
                else if (key == "annotation_mask_rate") c.annotation_mask_rate = parse_double(val, key);
                else if (key == "seed") c.seed = static_cast<std::uint64_t>(std::stoull(std::string(val)));
                else throw std::invalid_argument("unknown header key '" + key + "'");
            }
        } catch (const std::exception& e) {
            throw FormatError(std::string("header: ") + e.what());
        }
        if (!seen.count("version")) throw FormatError("header: missing version");
        if (d.version != DatasetManifest::kVersion) {
            throw FormatError("header: version mismatch (file " + std::to_string(d.version) +
                              ", supported " + std::to_string(DatasetManifest::kVersion) + ")");
        }
    }

    std::set<std::pair<IdentityId, std::size_t>> keys;
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const std::size_t rec_index = d.records.size();
        try {
            auto fields = weakpair::split(line, '\t');
            if (fields.size() != 4) {
                throw std::invalid_argument("expected 4 TAB-separated fields, got " +
                                            std::to_string(fields.size()));
            }
            PairRecord r;
            r.identity = parse_int(fields[0], "identity");
            const long long view = parse_int(fields[1], "view");
            if (view < 0) throw std::invalid_argument("negative view index");
            r.view = static_cast<std::size_t>(view);
            r.image_raw = read_vector(fields[2], d.gen_config.raw_dim_image, "image_raw");
            r.text_raw = read_vector(fields[3], d.gen_config.raw_dim_text, "text_raw");
            if (!keys.emplace(r.identity, r.view).second) {
                throw std::invalid_argument("duplicate (identity, view) key");
            }
            d.records.push_back(std::move(r));
        } catch (const std::invalid_argument& e) {
            throw FormatError("record " + std::to_string(rec_index) + " (line " +
                              std::to_string(line_no) + "): " + e.what());
        }
    }
    return d;
}

DatasetManifest read(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    return read(is);
}

}  // namespace weakpair::data
