#include "doctest.h"

#include <set>
#include <sstream>

#include "weakpair/datagen.hpp"
#include "weakpair/tensor.hpp"

using namespace weakpair;
using namespace weakpair::data;

namespace {

std::set<IdentityId> identities(const DatasetManifest& d) {
    std::set<IdentityId> out;
    for (const auto& r : d.records) out.insert(r.identity);
    return out;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    return dot(a, b) / (norm(a) * norm(b));
}

}  // namespace

TEST_CASE("record count is identities times views") {
    GenConfig cfg;
    cfg.num_identities = 4;
    cfg.views_per_identity = 2;
    const auto d = generate(cfg);
    CHECK(d.records.size() == 8);
    CHECK(d.identity_count() == 4);
    std::set<std::pair<IdentityId, std::size_t>> keys;
    for (const auto& r : d.records) {
        keys.insert({r.identity, r.view});
        CHECK(r.image_raw.size() == cfg.raw_dim_image);
        CHECK(r.text_raw.size() == cfg.raw_dim_text);
    }
    CHECK(keys.size() == 8);
}

TEST_CASE("generation is a pure function of the config") {
    GenConfig cfg;
    cfg.seed = 42;
    CHECK(generate(cfg) == generate(cfg));
    GenConfig other = cfg;
    other.seed = 43;
    CHECK_FALSE(generate(cfg) == generate(other));
}

TEST_CASE("noiseless unmasked texts agree across views") {
    GenConfig cfg;
    cfg.num_identities = 5;
    cfg.views_per_identity = 3;
    cfg.annotation_mask_rate = 0.0;
    cfg.view_noise = 0.0;
    const auto d = generate(cfg);
    for (const auto& [id, rows] : group_by_identity(d.records)) {
        for (std::size_t r : rows) CHECK(d.records[r].text_raw == d.records[rows[0]].text_raw);
    }
}

TEST_CASE("config validation") {
    GenConfig cfg;
    cfg.annotation_mask_rate = 1.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.annotation_mask_rate = 0.3;
    cfg.views_per_identity = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.views_per_identity = 1;
    CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("split sizes, disjointness and determinism") {
    GenConfig cfg;
    cfg.num_identities = 10;
    cfg.views_per_identity = 3;
    const auto d = generate(cfg);
    const auto [train, test] = split(d, 0.8, 7);
    CHECK(train.identity_count() == 8);
    CHECK(test.identity_count() == 2);
    CHECK(train.split_tag == SplitTag::Train);
    CHECK(test.split_tag == SplitTag::Test);

    const auto a = identities(train);
    for (IdentityId id : identities(test)) CHECK(a.count(id) == 0);

    CHECK(train.records.size() + test.records.size() == d.records.size());
    std::set<std::pair<IdentityId, std::size_t>> all;
    for (const auto* part : {&train, &test}) {
        for (const auto& r : part->records) all.insert({r.identity, r.view});
    }
    CHECK(all.size() == d.records.size());

    const auto again = split(d, 0.8, 7);
    CHECK(again.first == train);
    CHECK(again.second == test);
}

TEST_CASE("split preconditions") {
    GenConfig cfg;
    cfg.num_identities = 1;
    const auto one = generate(cfg);
    CHECK_THROWS_AS(split(one, 0.5, 0), std::invalid_argument);
    cfg.num_identities = 4;
    const auto d = generate(cfg);
    CHECK_THROWS_AS(split(d, 0.0, 0), std::invalid_argument);
    CHECK_THROWS_AS(split(d, 1.0, 0), std::invalid_argument);
}

TEST_CASE("write then read reproduces the manifest") {
    GenConfig cfg;
    cfg.num_identities = 6;
    cfg.seed = 99;
    cfg.view_noise = 0.37;
    const auto d = generate(cfg);
    std::stringstream ss;
    write(d, ss);
    CHECK(read(ss) == d);

    const auto [train, test] = split(d, 0.5, 1);
    std::stringstream st;
    write(test, st);
    CHECK(read(st) == test);
}

TEST_CASE("a corrupted record is reported by index") {
    GenConfig cfg;
    cfg.num_identities = 3;
    cfg.views_per_identity = 1;
    std::stringstream ss;
    write(generate(cfg), ss);
    std::string text = ss.str();
    // Damage the second record's first value.
    std::size_t line2 = text.find('\n');
    line2 = text.find('\n', line2 + 1) + 1;
    const std::size_t tab = text.find('\t', text.find('\t', line2) + 1) + 1;
    text.insert(tab, "x");
    std::istringstream bad(text);
    try {
        read(bad);
        FAIL("no error");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("record 1") != std::string::npos);
    }
}

TEST_CASE("a header-only file is a valid empty manifest") {
    GenConfig cfg;
    cfg.num_identities = 2;
    auto d = generate(cfg);
    d.records.clear();
    std::stringstream ss;
    write(d, ss);
    const auto back = read(ss);
    CHECK(back.records.empty());
    CHECK(back.gen_config == cfg);
}

TEST_CASE("version mismatch and empty input are format errors") {
    GenConfig cfg;
    cfg.num_identities = 2;
    std::stringstream ss;
    write(generate(cfg), ss);
    std::string text = ss.str();
    text.replace(text.find("version=1"), 9, "version=2");
    std::istringstream bumped(text);
    CHECK_THROWS_AS(read(bumped), FormatError);
    std::istringstream empty("");
    CHECK_THROWS_AS(read(empty), FormatError);
}

TEST_CASE("texts of one identity agree partially") {
    GenConfig cfg;
    cfg.num_identities = 200;
    cfg.views_per_identity = 2;
    cfg.annotation_mask_rate = 0.3;
    const auto d = generate(cfg);
    const auto index = group_by_identity(d.records);
    double same = 0.0, cross = 0.0;
    std::size_t n = 0;
    std::vector<std::size_t> firsts;
    for (const auto& [id, rows] : index) {
        same += cosine(d.records[rows[0]].text_raw, d.records[rows[1]].text_raw);
        firsts.push_back(rows[0]);
        ++n;
    }
    for (std::size_t i = 0; i + 1 < firsts.size(); ++i) {
        cross += cosine(d.records[firsts[i]].text_raw, d.records[firsts[i + 1]].text_raw);
    }
    same /= static_cast<double>(n);
    cross /= static_cast<double>(firsts.size() - 1);
    CHECK(same < 1.0);
    CHECK(same > cross);
    CHECK(same > 0.5);
}
