#include "relsar/skeleton.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

namespace relsar {

Region region_from_string(const std::string& s) {
    if (s == "torso") return Region::Torso;
    if (s == "left_arm") return Region::LeftArm;
    if (s == "right_arm") return Region::RightArm;
    if (s == "left_leg") return Region::LeftLeg;
    if (s == "right_leg") return Region::RightLeg;
    throw ManifestError("unknown region tag '" + s + "'");
}

std::string to_string(Region r) {
    switch (r) {
        case Region::Torso: return "torso";
        case Region::LeftArm: return "left_arm";
        case Region::RightArm: return "right_arm";
        case Region::LeftLeg: return "left_leg";
        case Region::RightLeg: return "right_leg";
    }
    return "torso";
}

const std::vector<std::string>& raw_joint_names() {
    static const std::vector<std::string> names = {
        "head_top", "nose",       "l_eye",      "r_eye",    "l_ear",   "r_ear",
        "neck",     "mid_spine",  "mid_hip",    "l_shoulder", "l_elbow", "l_wrist",
        "r_shoulder", "r_elbow",  "r_wrist",    "l_hip",    "l_knee",  "l_ankle",
        "l_toe",    "l_heel",     "r_hip",      "r_knee",   "r_ankle", "r_toe",
        "r_heel"};
    return names;
}

int raw_joint_index(const std::string& name) {
    const auto& names = raw_joint_names();
    for (size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return static_cast<int>(i);
    throw ManifestError("unknown joint name '" + name + "'");
}

void JointMap::validate(int j_raw) const {
    if (entries.empty()) throw ManifestError("joint map is empty");
    std::set<int> seen;
    for (const auto& e : entries) {
        if (e.source < 0 || e.source >= j_raw)
            throw ManifestError("joint map source index " + std::to_string(e.source) + " out of range for J_raw=" +
                                std::to_string(j_raw));
        if (!seen.insert(e.source).second)
            throw ManifestError("joint map source index " + std::to_string(e.source) + " repeated");
    }
    // Exactly five regions, each forming one contiguous block.
    std::set<Region> regions;
    for (size_t i = 0; i < entries.size(); ++i) {
        const Region r = entries[i].region;
        if (i > 0 && r != entries[i - 1].region && regions.count(r))
            throw ManifestError("joint map region '" + to_string(r) + "' is not contiguous");
        regions.insert(r);
    }
    if (regions.size() != 5) throw ManifestError("joint map must cover exactly five regions");
}

JointMap JointMap::default15() {
    static const std::vector<std::pair<std::string, Region>> wanted = {
        {"neck", Region::Torso},        {"mid_spine", Region::Torso},  {"mid_hip", Region::Torso},
        {"l_shoulder", Region::LeftArm}, {"l_elbow", Region::LeftArm},  {"l_wrist", Region::LeftArm},
        {"r_shoulder", Region::RightArm}, {"r_elbow", Region::RightArm}, {"r_wrist", Region::RightArm},
        {"l_hip", Region::LeftLeg},     {"l_knee", Region::LeftLeg},   {"l_ankle", Region::LeftLeg},
        {"r_hip", Region::RightLeg},    {"r_knee", Region::RightLeg},  {"r_ankle", Region::RightLeg}};
    return from_names(wanted, raw_joint_names());
}

JointMap JointMap::raw25() {
    JointMap m;
    const auto& names = raw_joint_names();
    for (int i = 0; i < kRawJointCount; ++i) {
        Region r;
        if (i <= 8) r = Region::Torso; // head cluster + trunk
        else if (i <= 11) r = Region::LeftArm;
        else if (i <= 14) r = Region::RightArm;
        else if (i <= 19) r = Region::LeftLeg;
        else r = Region::RightLeg;
        m.entries.push_back({i, r, names[static_cast<size_t>(i)]});
    }
    m.validate(kRawJointCount);
    return m;
}

JointMap JointMap::from_names(const std::vector<std::pair<std::string, Region>>& wanted,
                              const std::vector<std::string>& frame_joint_names) {
    JointMap m;
    for (const auto& [name, region] : wanted) {
        int idx = -1;
        for (size_t i = 0; i < frame_joint_names.size(); ++i)
            if (frame_joint_names[i] == name) {
                idx = static_cast<int>(i);
                break;
            }
        if (idx < 0) throw ManifestError("joint '" + name + "' not present in keypoint file");
        m.entries.push_back({idx, region, name});
    }
    m.validate(static_cast<int>(frame_joint_names.size()));
    return m;
}

std::vector<std::array<double, 2>> select_permute(const PoseFrame& frame, const JointMap& map) {
    map.validate(frame.joint_count());
    std::vector<std::array<double, 2>> out;
    out.reserve(map.entries.size());
    for (const auto& e : map.entries) {
        const Keypoint& k = frame.joints[static_cast<size_t>(e.source)];
        out.push_back({k.x, k.y});
    }
    return out;
}

int root_joint_index(const JointMap& map) {
    for (size_t i = 0; i < map.entries.size(); ++i)
        if (map.entries[i].name == "mid_hip") return static_cast<int>(i);
    return 0;
}

SkeletonSequence normalize(const SkeletonSequence& seq, int root_joint, double eps) {
    if (seq.frames <= 0 || seq.joints <= 0) throw DegenerateInputError("normalize: empty sequence");
    if (root_joint < 0 || root_joint >= seq.joints) throw DegenerateInputError("normalize: root joint out of range");
    double cx = 0.0, cy = 0.0;
    for (int t = 0; t < seq.frames; ++t) {
        cx += seq.x(t, root_joint);
        cy += seq.y(t, root_joint);
    }
    cx /= seq.frames;
    cy /= seq.frames;
    double ext = 0.0;
    for (int t = 0; t < seq.frames; ++t)
        for (int j = 0; j < seq.joints; ++j) {
            ext = std::max(ext, std::abs(static_cast<double>(seq.x(t, j)) - cx));
            ext = std::max(ext, std::abs(static_cast<double>(seq.y(t, j)) - cy));
        }
    if (ext < eps)
        throw DegenerateInputError("normalize: zero spatial extent (all joints coincident)");
    SkeletonSequence out = seq;
    for (int t = 0; t < seq.frames; ++t)
        for (int j = 0; j < seq.joints; ++j) {
            out.x(t, j) = static_cast<float>((seq.x(t, j) - cx) / ext);
            out.y(t, j) = static_cast<float>((seq.y(t, j) - cy) / ext);
        }
    return out;
}

std::vector<SkeletonSequence> sample_windows(const std::vector<PoseFrame>& frames, const JointMap& map,
                                             int window_len, int stride, const std::string& source_id,
                                             int label) {
    if (window_len <= 0 || stride <= 0) throw DimensionError("sample_windows: window and stride must be positive");
    const int n = static_cast<int>(frames.size());
    if (n < window_len)
        throw DimensionError("sample_windows: clip of " + std::to_string(n) + " frames shorter than T=" +
                             std::to_string(window_len));
    // Selected coordinates for the whole clip, computed once.
    const int j_sel = map.selected();
    std::vector<double> xs(static_cast<size_t>(n) * j_sel * 2);
    std::vector<double> conf(static_cast<size_t>(n), 0.0);
    for (int t = 0; t < n; ++t) {
        auto rows = select_permute(frames[static_cast<size_t>(t)], map);
        double c = 0.0;
        for (const auto& e : map.entries) c += frames[static_cast<size_t>(t)].joints[static_cast<size_t>(e.source)].confidence;
        conf[static_cast<size_t>(t)] = c / j_sel;
        for (int j = 0; j < j_sel; ++j) {
            xs[static_cast<size_t>((t * j_sel + j) * 2)] = rows[static_cast<size_t>(j)][0];
            xs[static_cast<size_t>((t * j_sel + j) * 2 + 1)] = rows[static_cast<size_t>(j)][1];
        }
    }
    const int count = (n - window_len) / stride + 1;
    std::vector<SkeletonSequence> out;
    out.reserve(static_cast<size_t>(count));
    for (int w = 0; w < count; ++w) {
        const int start = w * stride;
        SkeletonSequence s;
        s.frames = window_len;
        s.joints = j_sel;
        s.coords.resize(static_cast<size_t>(window_len) * j_sel * 2);
        double c = 0.0;
        for (int t = 0; t < window_len; ++t) {
            c += conf[static_cast<size_t>(start + t)];
            for (int j = 0; j < j_sel; ++j) {
                s.x(t, j) = static_cast<float>(xs[static_cast<size_t>(((start + t) * j_sel + j) * 2)]);
                s.y(t, j) = static_cast<float>(xs[static_cast<size_t>(((start + t) * j_sel + j) * 2 + 1)]);
            }
        }
        s.mean_confidence = c / window_len;
        s.label = label;
        s.source_id = source_id;
        out.push_back(std::move(s));
    }
    return out;
}

Tensor batch_tensor(const std::vector<const SkeletonSequence*>& batch) {
    if (batch.empty()) throw DimensionError("batch_tensor: empty batch");
    const int T = batch[0]->frames, J = batch[0]->joints;
    Tensor out(Shape{static_cast<int64_t>(batch.size()), T, 2 * J});
    for (size_t b = 0; b < batch.size(); ++b) {
        const SkeletonSequence& s = *batch[b];
        if (s.frames != T || s.joints != J) throw DimensionError("batch_tensor: inhomogeneous batch");
        std::copy(s.coords.begin(), s.coords.end(), out.data.begin() + static_cast<int64_t>(b) * T * 2 * J);
    }
    return out;
}

} // namespace relsar
