#include "relsar/data.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace relsar {

// ---- keypoint files -----------------------------------------------------

void write_keypoint_file(const std::string& path, const std::vector<PoseFrame>& frames,
                         const std::vector<std::string>* joint_names) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ManifestError("cannot open '" + path + "' for writing");
    if (joint_names) {
        json hdr;
        hdr["joint_names"] = *joint_names;
        out << hdr.dump() << "\n";
    }
    for (size_t i = 0; i < frames.size(); ++i) {
        json rec;
        rec["frame"] = i;
        json joints = json::array();
        for (const auto& k : frames[i].joints) joints.push_back(json::array({k.x, k.y, k.confidence}));
        rec["joints"] = std::move(joints);
        out << rec.dump() << "\n";
    }
}

KeypointFile read_keypoint_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ManifestError("cannot open keypoint file '" + path + "'");
    KeypointFile file;
    file.joint_names = raw_joint_names();
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw ManifestError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        if (rec.contains("joint_names")) {
            file.joint_names = rec.at("joint_names").get<std::vector<std::string>>();
            continue;
        }
        PoseFrame f;
        for (const auto& j : rec.at("joints")) {
            if (!j.is_array() || j.size() != 3)
                throw ManifestError(path + ":" + std::to_string(lineno) + ": joint entry must be [x, y, confidence]");
            Keypoint k{j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
            if (!std::isfinite(k.x) || !std::isfinite(k.y))
                throw ManifestError(path + ":" + std::to_string(lineno) + ": non-finite coordinate");
            if (k.confidence < 0.0 || k.confidence > 1.0)
                throw ManifestError(path + ":" + std::to_string(lineno) + ": confidence outside [0,1]");
            f.joints.push_back(k);
        }
        file.frames.push_back(std::move(f));
    }
    return file;
}

// ---- manifest -------------------------------------------------------------

void ExperimentManifest::validate() const {
    if (classes.size() < 2) throw ManifestError("manifest: need at least two classes");
    if (seq_len <= 0) throw ManifestError("manifest: seq_len must be positive");
    if (min_confidence < 0.0 || min_confidence > 1.0) throw ManifestError("manifest: min_confidence outside [0,1]");
    std::set<std::string> seen;
    for (const auto& s : samples) {
        if (s.label < 0 || s.label >= static_cast<int>(classes.size()))
            throw ManifestError("manifest: sample '" + s.path + "' has label outside class list");
        if (s.split != "train" && s.split != "test")
            throw ManifestError("manifest: sample '" + s.path + "' has unknown split '" + s.split + "'");
        if (!seen.insert(s.path).second)
            throw ManifestError("manifest: sample '" + s.path + "' listed twice (splits must be disjoint)");
    }
    if (labels_per_class && *labels_per_class < 1) throw ManifestError("manifest: labels_per_class must be >= 1");
    if (joint_map_id != "default15" && joint_map_id != "raw25" && joint_map_id != "custom")
        throw ManifestError("manifest: unknown joint_map '" + joint_map_id + "'");
    if (joint_map_id == "custom" && custom_map.empty()) throw ManifestError("manifest: custom joint_map is empty");
}

ExperimentManifest ExperimentManifest::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ManifestError("cannot open manifest '" + path + "'");
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw ManifestError(std::string("manifest parse error: ") + e.what());
    }
    ExperimentManifest m;
    m.name = doc.value("name", "");
    m.seq_len = doc.at("seq_len").get<int>();
    m.window_stride = doc.value("window_stride", 0);
    m.min_confidence = doc.value("min_confidence", 0.3);
    m.classes = doc.at("classes").get<std::vector<std::string>>();
    if (doc.contains("labels_per_class") && !doc["labels_per_class"].is_null())
        m.labels_per_class = doc["labels_per_class"].get<int>();
    const auto& jm = doc.at("joint_map");
    if (jm.is_string()) {
        m.joint_map_id = jm.get<std::string>();
    } else {
        m.joint_map_id = "custom";
        for (const auto& e : jm)
            m.custom_map.emplace_back(e.at("joint").get<std::string>(), region_from_string(e.at("region").get<std::string>()));
    }
    for (const auto& s : doc.at("samples")) {
        SampleRecord r;
        r.path = s.at("path").get<std::string>();
        r.label = s.at("label").get<int>();
        r.split = s.at("split").get<std::string>();
        m.samples.push_back(std::move(r));
    }
    m.base_dir = fs::path(path).parent_path().string();
    m.validate();
    for (const auto& s : m.samples) {
        const fs::path p = fs::path(m.base_dir) / s.path;
        if (!fs::exists(p)) throw ManifestError("manifest references missing file '" + p.string() + "'");
    }
    return m;
}

void ExperimentManifest::save(const std::string& path) const {
    validate();
    json doc;
    doc["name"] = name;
    doc["seq_len"] = seq_len;
    doc["window_stride"] = window_stride;
    doc["min_confidence"] = min_confidence;
    if (joint_map_id == "custom") {
        json jm = json::array();
        for (const auto& [joint, region] : custom_map) jm.push_back({{"joint", joint}, {"region", to_string(region)}});
        doc["joint_map"] = std::move(jm);
    } else {
        doc["joint_map"] = joint_map_id;
    }
    doc["classes"] = classes;
    if (labels_per_class) doc["labels_per_class"] = *labels_per_class;
    else doc["labels_per_class"] = nullptr;
    json samples_json = json::array();
    for (const auto& s : samples) samples_json.push_back({{"path", s.path}, {"label", s.label}, {"split", s.split}});
    doc["samples"] = std::move(samples_json);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ManifestError("cannot write manifest '" + path + "'");
    out << doc.dump(2) << "\n";
}

JointMap resolve_joint_map(const ExperimentManifest& m, const std::vector<std::string>& file_joint_names) {
    if (m.joint_map_id == "raw25") {
        if (file_joint_names == raw_joint_names()) return JointMap::raw25();
        throw ManifestError("raw25 joint map requires the default joint inventory");
    }
    if (m.joint_map_id == "custom") return JointMap::from_names(m.custom_map, file_joint_names);
    static const std::vector<std::pair<std::string, Region>> default_names = [] {
        std::vector<std::pair<std::string, Region>> v;
        for (const auto& e : JointMap::default15().entries) v.emplace_back(e.name, e.region);
        return v;
    }();
    return JointMap::from_names(default_names, file_joint_names);
}

WindowDataset load_dataset(const ExperimentManifest& manifest) {
    manifest.validate();
    WindowDataset ds;
    ds.manifest = manifest;
    const int stride = manifest.resolved_stride();
    for (const auto& rec : manifest.samples) {
        const fs::path p = fs::path(manifest.base_dir) / rec.path;
        KeypointFile file = read_keypoint_file(p.string());
        if (static_cast<int>(file.frames.size()) < manifest.seq_len) {
            ds.warnings.push_back("skipped '" + rec.path + "': " + std::to_string(file.frames.size()) +
                                  " frames < T=" + std::to_string(manifest.seq_len));
            continue;
        }
        const JointMap map = resolve_joint_map(manifest, file.joint_names);
        ds.selected_joints = map.selected();
        const int root = root_joint_index(map);
        auto windows = sample_windows(file.frames, map, manifest.seq_len, stride, rec.path, rec.label);
        for (auto& w : windows) {
            if (w.mean_confidence < manifest.min_confidence) {
                ds.warnings.push_back("dropped low-confidence window of '" + rec.path + "'");
                continue;
            }
            SkeletonSequence n = normalize(w, root);
            n.label = rec.label;
            n.source_id = rec.path;
            (rec.split == "train" ? ds.train : ds.test).push_back(std::move(n));
        }
    }
    return ds;
}

// ---- synthetic data ----------------------------------------------------------

void SynthSpec::validate() const {
    if (classes < 2) throw ManifestError("synth: need at least two classes");
    if (samples_per_class < 1) throw ManifestError("synth: samples_per_class must be >= 1");
    if (seq_len < 4) throw ManifestError("synth: seq_len must be >= 4");
    if (noise_std < 0.0) throw ManifestError("synth: noise_std must be non-negative");
    if (train_fraction <= 0.0 || train_fraction > 1.0) throw ManifestError("synth: train_fraction outside (0,1]");
    if (resolved_video_len() < seq_len) throw ManifestError("synth: video_len shorter than seq_len");
}

namespace {

// Base standing pose in pixels, indexed like raw_joint_names().
const std::array<std::array<double, 2>, kRawJointCount>& base_pose() {
    static const std::array<std::array<double, 2>, kRawJointCount> pose = {{
        {200.0, 40.0},  // head_top
        {200.0, 60.0},  // nose
        {192.0, 55.0},  // l_eye
        {208.0, 55.0},  // r_eye
        {185.0, 60.0},  // l_ear
        {215.0, 60.0},  // r_ear
        {200.0, 85.0},  // neck
        {200.0, 135.0}, // mid_spine
        {200.0, 185.0}, // mid_hip
        {165.0, 90.0},  // l_shoulder
        {150.0, 135.0}, // l_elbow
        {140.0, 180.0}, // l_wrist
        {235.0, 90.0},  // r_shoulder
        {250.0, 135.0}, // r_elbow
        {260.0, 180.0}, // r_wrist
        {180.0, 190.0}, // l_hip
        {175.0, 250.0}, // l_knee
        {172.0, 310.0}, // l_ankle
        {168.0, 325.0}, // l_toe
        {178.0, 322.0}, // l_heel
        {220.0, 190.0}, // r_hip
        {225.0, 250.0}, // r_knee
        {228.0, 310.0}, // r_ankle
        {232.0, 325.0}, // r_toe
        {222.0, 322.0}, // r_heel
    }};
    return pose;
}

int region_of_raw_joint(int j) {
    if (j <= 8) return 0;
    if (j <= 11) return 1;
    if (j <= 14) return 2;
    if (j <= 19) return 3;
    return 4;
}

constexpr double kTau = 6.28318530717958647692;

} // namespace

ExperimentManifest synth_dataset(const SynthSpec& spec, const std::string& out_dir) {
    spec.validate();
    fs::create_directories(fs::path(out_dir) / "videos");
    Rng rng(spec.seed);
    ExperimentManifest m;
    m.name = spec.name;
    m.seq_len = spec.seq_len;
    m.joint_map_id = "default15";
    for (int c = 0; c < spec.classes; ++c) m.classes.push_back("motif" + std::to_string(c));

    const int video_len = spec.resolved_video_len();
    const int train_count = std::max(
        1, static_cast<int>(std::lround(spec.train_fraction * spec.samples_per_class)));
    const auto& pose = base_pose();

    for (int c = 0; c < spec.classes; ++c) {
        // Class motif: even frequency (in cycles per window) so windows taken
        // at stride T/2 see the same phase, distinct amplitude per region.
        const double freq = 2.0 * (c + 1);
        const double phase = c * kTau / 6.0;
        std::array<double, 5> amp;
        for (int r = 0; r < 5; ++r) amp[static_cast<size_t>(r)] = 6.0 + 4.0 * ((c + 2 * r) % 4);

        for (int i = 0; i < spec.samples_per_class; ++i) {
            const double tx = rng.uniform(-40.0, 40.0);
            const double ty = rng.uniform(-40.0, 40.0);
            const double scale = rng.uniform(0.75, 1.3);
            std::vector<PoseFrame> frames;
            frames.reserve(static_cast<size_t>(video_len));
            for (int t = 0; t < video_len; ++t) {
                PoseFrame f;
                f.joints.resize(kRawJointCount);
                for (int j = 0; j < kRawJointCount; ++j) {
                    const int r = region_of_raw_joint(j);
                    const double a = amp[static_cast<size_t>(r)];
                    const double theta = kTau * freq * t / spec.seq_len + phase + 0.35 * (j % 3);
                    const double mx = a * std::sin(theta);
                    const double my = 0.6 * a * std::cos(theta + 0.5 * (j % 2));
                    double x = 200.0 + scale * (pose[static_cast<size_t>(j)][0] + mx - 200.0) + tx;
                    double y = 185.0 + scale * (pose[static_cast<size_t>(j)][1] + my - 185.0) + ty;
                    if (spec.noise_std > 0.0) {
                        x += rng.normal(0.0, spec.noise_std);
                        y += rng.normal(0.0, spec.noise_std);
                    }
                    // Face and foot extremities carry lower confidence, mirroring
                    // the joints the selection step exists to drop.
                    const bool flaky = (j >= 1 && j <= 5) || j == 18 || j == 19 || j == 23 || j == 24;
                    f.joints[static_cast<size_t>(j)] = {x, y, flaky ? 0.55 : 0.92};
                }
                frames.push_back(std::move(f));
            }
            std::ostringstream rel;
            rel << "videos/motif" << c << "_";
            rel.fill('0');
            rel.width(3);
            rel << i;
            rel << ".jsonl";
            write_keypoint_file((fs::path(out_dir) / rel.str()).string(), frames);
            SampleRecord rec;
            rec.path = rel.str();
            rec.label = c;
            rec.split = i < train_count ? "train" : "test";
            m.samples.push_back(std::move(rec));
        }
    }
    m.base_dir = out_dir;
    m.save((fs::path(out_dir) / "manifest.json").string());
    return m;
}

} // namespace relsar
