#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "relsar/data.hpp"

namespace fs = std::filesystem;
using namespace relsar;

namespace {

PoseFrame crafted_frame(int j_raw) {
    // joint k sits at (k, 2k)
    PoseFrame f;
    for (int k = 0; k < j_raw; ++k) f.joints.push_back({static_cast<double>(k), 2.0 * k, 0.9});
    return f;
}

std::string tmp_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("relsar_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

} // namespace

TEST_CASE("select_permute: default map turns a 25-joint frame into 15x2") {
    PoseFrame f = crafted_frame(kRawJointCount);
    const JointMap map = JointMap::default15();
    auto rows = select_permute(f, map);
    REQUIRE(rows.size() == 15);
    for (size_t i = 0; i < rows.size(); ++i) {
        CHECK(rows[i][0] == doctest::Approx(map.entries[i].source));
        CHECK(rows[i][1] == doctest::Approx(2.0 * map.entries[i].source));
    }
}

TEST_CASE("select_permute: identity map over an already-selected frame") {
    PoseFrame f;
    const JointMap def = JointMap::default15();
    PoseFrame raw = crafted_frame(kRawJointCount);
    for (const auto& e : def.entries) f.joints.push_back(raw.joints[static_cast<size_t>(e.source)]);
    JointMap identity;
    for (int i = 0; i < 15; ++i) identity.entries.push_back({i, def.entries[static_cast<size_t>(i)].region, ""});
    auto rows = select_permute(f, identity);
    for (size_t i = 0; i < rows.size(); ++i) {
        CHECK(rows[i][0] == f.joints[i].x);
        CHECK(rows[i][1] == f.joints[i].y);
    }
}

TEST_CASE("select_permute: out-of-range source index raises a manifest error") {
    PoseFrame f = crafted_frame(10);
    CHECK_THROWS_AS(select_permute(f, JointMap::default15()), ManifestError);
}

TEST_CASE("select_permute is invariant to raw storage order when the map is named") {
    std::vector<std::string> names = raw_joint_names();
    std::vector<int> perm(names.size());
    for (size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<int>(i);
    Rng rng(42);
    rng.shuffle(perm);

    PoseFrame original = crafted_frame(kRawJointCount);
    PoseFrame scrambled;
    std::vector<std::string> scrambled_names(names.size());
    scrambled.joints.resize(names.size());
    for (size_t i = 0; i < perm.size(); ++i) {
        scrambled_names[i] = names[static_cast<size_t>(perm[i])];
        scrambled.joints[i] = original.joints[static_cast<size_t>(perm[i])];
    }

    std::vector<std::pair<std::string, Region>> wanted;
    for (const auto& e : JointMap::default15().entries) wanted.emplace_back(e.name, e.region);
    auto rows_orig = select_permute(original, JointMap::from_names(wanted, names));
    auto rows_scrambled = select_permute(scrambled, JointMap::from_names(wanted, scrambled_names));
    CHECK(rows_orig == rows_scrambled);
}

TEST_CASE("default map partitions into five contiguous region blocks of total 15") {
    const JointMap map = JointMap::default15();
    REQUIRE(map.selected() == 15);
    int blocks = 0;
    int block_sizes = 0;
    size_t i = 0;
    while (i < map.entries.size()) {
        const Region r = map.entries[i].region;
        size_t j = i;
        while (j < map.entries.size() && map.entries[j].region == r) ++j;
        ++blocks;
        block_sizes += static_cast<int>(j - i);
        i = j;
    }
    CHECK(blocks == 5);
    CHECK(block_sizes == 15);
    CHECK_NOTHROW(JointMap::raw25().validate(kRawJointCount));
    CHECK(JointMap::raw25().selected() == 25);
}

TEST_CASE("joint map validation rejects repeats and split regions") {
    JointMap m = JointMap::default15();
    m.entries[1].source = m.entries[0].source;
    CHECK_THROWS_AS(m.validate(kRawJointCount), ManifestError);

    JointMap split = JointMap::default15();
    std::swap(split.entries[1], split.entries[4]);
    CHECK_THROWS_AS(split.validate(kRawJointCount), ManifestError);
}

namespace {

SkeletonSequence make_seq(int T, int J, Rng& rng, double scale = 50.0, double dx = 0.0, double dy = 0.0) {
    SkeletonSequence s;
    s.frames = T;
    s.joints = J;
    s.coords.resize(static_cast<size_t>(T) * J * 2);
    for (int t = 0; t < T; ++t)
        for (int j = 0; j < J; ++j) {
            s.x(t, j) = static_cast<float>(rng.uniform(-1.0, 1.0) * scale + dx);
            s.y(t, j) = static_cast<float>(rng.uniform(-1.0, 1.0) * scale + dy);
        }
    return s;
}

double max_abs_diff(const SkeletonSequence& a, const SkeletonSequence& b) {
    double m = 0.0;
    for (size_t i = 0; i < a.coords.size(); ++i) m = std::max(m, std::abs(double(a.coords[i]) - b.coords[i]));
    return m;
}

} // namespace

TEST_CASE("normalize: idempotent, translation- and scale-invariant to 1e-6") {
    Rng rng(7);
    SkeletonSequence s = make_seq(12, 15, rng, 80.0, 320.0, 240.0);
    SkeletonSequence n1 = normalize(s, 2);
    SkeletonSequence n2 = normalize(n1, 2);
    CHECK(max_abs_diff(n1, n2) < 1e-6);

    SkeletonSequence shifted = s;
    for (int t = 0; t < s.frames; ++t)
        for (int j = 0; j < s.joints; ++j) {
            shifted.x(t, j) += 100.0f;
            shifted.y(t, j) += 40.0f;
        }
    CHECK(max_abs_diff(normalize(shifted, 2), n1) < 1e-6);

    SkeletonSequence scaled = s;
    for (auto& v : scaled.coords) v *= 3.0f;
    CHECK(max_abs_diff(normalize(scaled, 2), n1) < 1e-6);

    for (float v : n1.coords) CHECK(std::abs(v) <= 1.0f);
}

TEST_CASE("normalize: coincident joints raise a degenerate-input error") {
    SkeletonSequence s;
    s.frames = 4;
    s.joints = 3;
    s.coords.assign(static_cast<size_t>(4 * 3 * 2), 7.5f);
    CHECK_THROWS_AS(normalize(s, 0), DegenerateInputError);
}

TEST_CASE("sample_windows arithmetic") {
    const JointMap map = JointMap::default15();
    auto frames = [&](int n) {
        std::vector<PoseFrame> v;
        for (int i = 0; i < n; ++i) v.push_back(crafted_frame(kRawJointCount));
        return v;
    };
    CHECK(sample_windows(frames(30), map, 30, 15, "a").size() == 1);
    CHECK(sample_windows(frames(12), map, 12, 6, "b").size() == 1);
    auto w = sample_windows(frames(40), map, 30, 5, "c");
    REQUIRE(w.size() == 3);
    for (const auto& win : w) CHECK(win.frames == 30);
    CHECK_THROWS_AS(sample_windows(frames(10), map, 30, 15, "d"), DimensionError);
}

TEST_CASE("window start offsets follow the stride") {
    std::vector<PoseFrame> frames;
    for (int i = 0; i < 40; ++i) {
        PoseFrame f = crafted_frame(kRawJointCount);
        f.joints[6].x = i; // neck carries the frame index
        frames.push_back(f);
    }
    auto w = sample_windows(frames, JointMap::default15(), 30, 5, "starts");
    REQUIRE(w.size() == 3);
    CHECK(w[0].x(0, 0) == doctest::Approx(0));
    CHECK(w[1].x(0, 0) == doctest::Approx(5));
    CHECK(w[2].x(0, 0) == doctest::Approx(10));
}

TEST_CASE("keypoint JSON-lines files round-trip byte-identically") {
    const std::string dir = tmp_dir("jsonl");
    std::vector<PoseFrame> frames;
    Rng rng(3);
    for (int t = 0; t < 5; ++t) {
        PoseFrame f;
        for (int j = 0; j < kRawJointCount; ++j)
            f.joints.push_back({rng.uniform(0.0, 640.0), rng.uniform(0.0, 480.0), 0.5 + 0.5 * rng.uniform()});
        frames.push_back(std::move(f));
    }
    const std::string p1 = dir + "/a.jsonl";
    const std::string p2 = dir + "/b.jsonl";
    write_keypoint_file(p1, frames);
    KeypointFile read = read_keypoint_file(p1);
    REQUIRE(read.frames.size() == frames.size());
    write_keypoint_file(p2, read.frames);
    CHECK(slurp(p1) == slurp(p2));
}

TEST_CASE("synth: same seed twice gives byte-identical files, different seeds differ") {
    SynthSpec spec;
    spec.classes = 2;
    spec.samples_per_class = 3;
    spec.seq_len = 8;
    spec.noise_std = 1.0;
    spec.seed = 7;
    const std::string d1 = tmp_dir("synth1");
    const std::string d2 = tmp_dir("synth2");
    const std::string d3 = tmp_dir("synth3");
    synth_dataset(spec, d1);
    synth_dataset(spec, d2);
    CHECK(slurp(d1 + "/videos/motif0_000.jsonl") == slurp(d2 + "/videos/motif0_000.jsonl"));
    CHECK(slurp(d1 + "/manifest.json") == slurp(d2 + "/manifest.json"));

    SynthSpec other = spec;
    other.seed = 8;
    ExperimentManifest m3 = synth_dataset(other, d3);
    CHECK(slurp(d1 + "/videos/motif0_000.jsonl") != slurp(d3 + "/videos/motif0_000.jsonl"));
    CHECK(m3.samples.size() == 6); // same manifest shape
}

TEST_CASE("synth at zero noise: nearest-centroid classifier reaches 100% train accuracy") {
    SynthSpec spec;
    spec.classes = 4;
    spec.samples_per_class = 6;
    spec.seq_len = 20;
    spec.noise_std = 0.0;
    spec.seed = 11;
    const std::string dir = tmp_dir("synth_nc");
    ExperimentManifest m = synth_dataset(spec, dir);
    WindowDataset ds = load_dataset(m);
    REQUIRE(!ds.train.empty());
    std::vector<std::vector<float>> flat;
    std::vector<int> labels;
    for (const auto& w : ds.train) {
        flat.emplace_back(w.coords);
        labels.push_back(w.label);
    }
    CHECK(oracles::nearest_centroid_accuracy(flat, labels, spec.classes) == doctest::Approx(1.0));
}

TEST_CASE("dataset loading: manifest validation and warnings") {
    SynthSpec spec;
    spec.classes = 2;
    spec.samples_per_class = 2;
    spec.seq_len = 10;
    spec.seed = 5;
    const std::string dir = tmp_dir("manifest");
    ExperimentManifest m = synth_dataset(spec, dir);

    SUBCASE("load succeeds and splits are populated") {
        WindowDataset ds = load_dataset(m);
        CHECK(ds.selected_joints == 15);
        CHECK(!ds.train.empty());
        for (const auto& w : ds.train) CHECK(w.frames == 10);
    }
    SUBCASE("missing file is rejected") {
        ExperimentManifest bad = m;
        bad.samples[0].path = "videos/nope.jsonl";
        bad.save(dir + "/bad.json");
        CHECK_THROWS_AS(ExperimentManifest::load(dir + "/bad.json"), ManifestError);
    }
    SUBCASE("duplicate sample paths are rejected") {
        ExperimentManifest bad = m;
        bad.samples.push_back(bad.samples[0]);
        CHECK_THROWS_AS(bad.validate(), ManifestError);
    }
    SUBCASE("label outside the class list is rejected") {
        ExperimentManifest bad = m;
        bad.samples[0].label = 9;
        CHECK_THROWS_AS(bad.validate(), ManifestError);
    }
    SUBCASE("too-short clips are skipped with a warning") {
        ExperimentManifest longer = m;
        longer.seq_len = 1000;
        WindowDataset ds = load_dataset(longer);
        CHECK(ds.train.empty());
        CHECK(ds.warnings.size() == m.samples.size());
    }
}

TEST_CASE("low-confidence windows are dropped") {
    const std::string dir = tmp_dir("lowconf");
    fs::create_directories(dir + "/videos");
    std::vector<PoseFrame> frames;
    for (int t = 0; t < 8; ++t) {
        PoseFrame f = crafted_frame(kRawJointCount);
        for (auto& j : f.joints) j.confidence = 0.05;
        frames.push_back(f);
    }
    write_keypoint_file(dir + "/videos/v.jsonl", frames);
    ExperimentManifest m;
    m.name = "lowconf";
    m.seq_len = 8;
    m.classes = {"a", "b"};
    m.samples = {{"videos/v.jsonl", 0, "train"}};
    m.base_dir = dir;
    WindowDataset ds = load_dataset(m);
    CHECK(ds.train.empty());
    CHECK(ds.warnings.size() == 1);
}

TEST_CASE("manifest save/load round-trip preserves fields") {
    SynthSpec spec;
    spec.classes = 2;
    spec.samples_per_class = 2;
    spec.seq_len = 8;
    spec.seed = 13;
    const std::string dir = tmp_dir("mrt");
    ExperimentManifest m = synth_dataset(spec, dir);
    m.labels_per_class = 1;
    m.window_stride = 4;
    m.save(dir + "/manifest2.json");
    ExperimentManifest r = ExperimentManifest::load(dir + "/manifest2.json");
    CHECK(r.seq_len == m.seq_len);
    CHECK(r.window_stride == 4);
    CHECK(r.labels_per_class.value() == 1);
    CHECK(r.classes == m.classes);
    CHECK(r.samples.size() == m.samples.size());
}
