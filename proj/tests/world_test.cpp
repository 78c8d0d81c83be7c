#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "cadapt/embedding_io.hpp"
#include "cadapt/metrics.hpp"
#include "cadapt/world.hpp"

using namespace cadapt;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "cadapt_world_test";
    fs::create_directories(dir);
    return dir / name;
}

WorldConfig single_track() {
    WorldConfig c;
    c.source_cameras = 1;
    c.target_cameras = 1;
    c.identities = 1;
    c.test_identities = 0;
    c.feature_dim = 4;
    c.noise_sigma = 0.0;
    c.track_min = c.track_max = 3;
    c.reappear_prob = 0.0;
    c.min_cameras_per_identity = 1;
    return c;
}

}  // namespace

TEST_SUITE("synthetic-world") {

TEST_CASE("noise-free single track repeats one feature on consecutive frames") {
    const Dataset d = generate_world(single_track(), 1);
    REQUIRE(d.source_train.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(d.source_train[i].feature == d.source_train[0].feature);
        CHECK(d.source_train[i].frame_index == static_cast<long long>(i));
    }
}

TEST_CASE("without styles every camera sees the same mean") {
    WorldConfig c;
    c.domain_matrix_scale = c.domain_offset_scale = c.camera_matrix_scale = c.camera_offset_scale = 0.0;
    c.noise_sigma = 0.0;
    c.identities = 40;
    c.min_cameras_per_identity = c.target_cameras;  // every identity on every camera
    c.track_min = c.track_max = 4;
    c.reappear_prob = 0.0;
    const Dataset d = generate_world(c, 2);
    const Tensor x = feature_matrix(d.target_train);
    std::vector<int> cams;
    for (const auto& s : d.target_train) cams.push_back(s.camera_id);
    CHECK(inter_camera_distance(x, cams, d.target_cameras).distance < 1e-12);
}

TEST_CASE("the same seed regenerates bit-identically") {
    const Dataset a = generate_world(WorldConfig{}, 7);
    const Dataset b = generate_world(WorldConfig{}, 7);
    CHECK(a.source_train == b.source_train);
    CHECK(a.target_train == b.target_train);
    CHECK(a.target_query == b.target_query);
    CHECK(a.target_gallery == b.target_gallery);
    const Dataset c = generate_world(WorldConfig{}, 8);
    CHECK_FALSE(a.source_train == c.source_train);
}

TEST_CASE("target training identities are hidden and counted on read") {
    Dataset d = generate_world(WorldConfig{}, 3);
    for (const auto& s : d.target_train) CHECK(s.person_id == -1);
    CHECK(d.target_train_labels.size() == d.target_train.size());
    CHECK(d.target_train_labels.reads() == 0);
    (void)d.target_train_labels.read(0);
    CHECK(d.target_train_labels.reads() == 1);
}

TEST_CASE("held-out identities never appear in target training") {
    const Dataset d = generate_world(WorldConfig{}, 4);
    std::set<int> train_ids;
    for (std::size_t i = 0; i < d.target_train.size(); ++i) train_ids.insert(d.target_train_labels.read(i));
    for (const auto& s : d.target_query) CHECK(train_ids.count(s.person_id) == 0);
    for (const auto& s : d.target_gallery) CHECK(train_ids.count(s.person_id) == 0);
}

TEST_CASE("camera timelines are sorted with distinct frames") {
    const Dataset d = generate_world(WorldConfig{}, 5);
    for (int c = 0; c < d.target_cameras; ++c) {
        const auto t = camera_timeline(d.target_train, c);
        CHECK_FALSE(t.empty());
        for (std::size_t i = 1; i < t.size(); ++i) {
            CHECK(d.target_train[t[i - 1]].frame_index < d.target_train[t[i]].frame_index);
        }
    }
}

TEST_CASE("small cameras produce a warning") {
    WorldConfig c;
    c.required_camera_samples = 100000;
    const Dataset d = generate_world(c, 1);
    CHECK(d.warnings.size() >= static_cast<std::size_t>(c.target_cameras));
}

TEST_CASE("invalid world configs are rejected") {
    WorldConfig c;
    c.track_min = 5;
    c.track_max = 2;
    CHECK_THROWS_AS(generate_world(c, 0), std::invalid_argument);
    WorldConfig z;
    z.target_cameras = 0;
    CHECK_THROWS_AS(generate_world(z, 0), std::invalid_argument);
}

TEST_CASE("load reads rows and dimension") {
    const auto p = scratch("two.emb");
    std::ofstream(p) << "#dim=4 labels=visible\n"
                        "source,0,0,3,1,2,3,4\n"
                        "target,1,5,7,0.5,0.25,-1,2\n";
    const Dataset d = load_embeddings(p);
    CHECK(d.feature_dim == 4);
    CHECK(d.source_train.size() == 1);
    CHECK(d.target_train.size() == 1);
    CHECK(d.target_train[0].person_id == -1);
    CHECK(d.target_train_labels.read(0) == 7);
}

TEST_CASE("a non-numeric value names its line") {
    const auto p = scratch("bad.emb");
    std::ofstream(p) << "#dim=2 labels=visible\n"
                        "source,0,0,3,1,2\n"
                        "source,0,1,3,1,abc\n";
    try {
        (void)load_embeddings(p);
        FAIL("expected a format error");
    } catch (const FormatError& e) {
        CHECK(e.line() == 3);
        CHECK(std::string(e.what()).find(":3:") != std::string::npos);
    }
}

TEST_CASE("duplicate camera frames and wrong widths are rejected") {
    const auto p = scratch("dup.emb");
    std::ofstream(p) << "#dim=1 labels=visible\nsource,0,0,3,1\nsource,0,0,4,2\n";
    CHECK_THROWS_AS((void)load_embeddings(p), FormatError);
    const auto w = scratch("wide.emb");
    std::ofstream(w) << "#dim=1 labels=visible\nsource,0,0,3,1,2\n";
    CHECK_THROWS_AS((void)load_embeddings(w), FormatError);
}

TEST_CASE("dataset export and load round-trip exactly") {
    const Dataset d = generate_world(WorldConfig{}, 6);
    const auto dir = scratch("rt");
    save_dataset_dir(d, dir, false);
    const Dataset back = load_dataset_dir(dir);
    CHECK(back.source_train == d.source_train);
    CHECK(back.target_train == d.target_train);
    CHECK(back.target_query == d.target_query);
    CHECK(back.target_gallery == d.target_gallery);
    CHECK_FALSE(back.target_train_labels.available());

    save_dataset_dir(d, dir, true);
    const Dataset shown = load_dataset_dir(dir);
    REQUIRE(shown.target_train_labels.available());
    for (std::size_t i = 0; i < d.target_train.size(); ++i) {
        CHECK(shown.target_train_labels.read(i) == d.target_train_labels.read(i));
    }
}

TEST_CASE("two samples split into one query and one gallery") {
    std::vector<Sample> s(2);
    s[0].person_id = s[1].person_id = 5;
    s[1].frame_index = 1;
    const auto split = split_query_gallery(s, 0.25, 0);
    CHECK(split.query.size() == 1);
    CHECK(split.gallery.size() == 1);
}

TEST_CASE("query fraction must lie strictly inside the unit interval") {
    std::vector<Sample> s(2);
    CHECK_THROWS_AS(split_query_gallery(s, 0.0, 0), std::invalid_argument);
    CHECK_THROWS_AS(split_query_gallery(s, 1.0, 0), std::invalid_argument);
}

TEST_CASE("ten identities with four samples give ten queries") {
    std::vector<Sample> s;
    for (int id = 0; id < 10; ++id) {
        for (int k = 0; k < 4; ++k) {
            Sample x;
            x.person_id = id;
            x.frame_index = id * 4 + k;
            s.push_back(x);
        }
    }
    const auto split = split_query_gallery(s, 0.25, 3);
    CHECK(split.query.size() == 10);
    CHECK(split.gallery.size() == 30);
    std::map<int, int> per_id;
    for (const auto& q : split.query) ++per_id[q.person_id];
    for (const auto& [id, n] : per_id) CHECK(n == 1);
}

TEST_CASE("single-sample identities stay in the gallery with a warning") {
    std::vector<Sample> s(1);
    s[0].person_id = 2;
    const auto split = split_query_gallery(s, 0.5, 0);
    CHECK(split.query.empty());
    CHECK(split.gallery.size() == 1);
    CHECK(split.warnings.size() == 1);
}

TEST_CASE("source classes are dense") {
    const Dataset d = generate_world(WorldConfig{}, 2);
    const auto sc = source_classes(d);
    CHECK(sc.person_ids.size() == 32);
    for (int l : sc.label_of_row) CHECK((l >= 0 && l < 32));
}

}
