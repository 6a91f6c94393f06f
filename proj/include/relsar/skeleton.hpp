// Skeleton ingestion: raw per-frame keypoints, the selection-permutation
// joint map, per-sequence coordinate normalization and window sampling.
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "relsar/tensor.hpp"

namespace relsar {

struct ManifestError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DegenerateInputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Keypoint {
    double x = 0.0;
    double y = 0.0;
    double confidence = 1.0;
};

// One frame of raw pose-estimator output: J_raw joints of (x, y, confidence).
struct PoseFrame {
    std::vector<Keypoint> joints;
    int joint_count() const { return static_cast<int>(joints.size()); }
};

enum class Region { Torso, LeftArm, RightArm, LeftLeg, RightLeg };

Region region_from_string(const std::string& s);
std::string to_string(Region r);

// The 25-joint inventory written by the keypoint file contract. Ordered so
// that anatomically related joints are adjacent in storage.
const std::vector<std::string>& raw_joint_names();
int raw_joint_index(const std::string& name);
inline constexpr int kRawJointCount = 25;

// Ordered selection of source joints grouped into the five anatomical
// regions. Applying the map both drops unreliable joints and permutes the
// survivors so same-region joints are contiguous.
struct JointMap {
    struct Entry {
        int source = 0;
        Region region = Region::Torso;
        std::string name; // optional, set when built from names
    };
    std::vector<Entry> entries;

    int selected() const { return static_cast<int>(entries.size()); }
    void validate(int j_raw) const;

    // The 15-joint default: five regions x three joints.
    static JointMap default15();
    // All 25 raw joints in storage order (no selection, no permutation).
    static JointMap raw25();
    // Resolve a (name, region) list against the joint names carried by a
    // keypoint file, producing indices into that file's storage order.
    static JointMap from_names(const std::vector<std::pair<std::string, Region>>& wanted,
                               const std::vector<std::string>& frame_joint_names);
};

// A model-ready window: T frames of J selected joints, (x, y) only.
struct SkeletonSequence {
    int frames = 0;
    int joints = 0;
    std::vector<float> coords; // frames * joints * 2, interleaved (x, y)
    int label = -1;
    std::string source_id;
    double mean_confidence = 1.0;

    float& x(int t, int j) { return coords[static_cast<size_t>((t * joints + j) * 2)]; }
    float& y(int t, int j) { return coords[static_cast<size_t>((t * joints + j) * 2 + 1)]; }
    float x(int t, int j) const { return coords[static_cast<size_t>((t * joints + j) * 2)]; }
    float y(int t, int j) const { return coords[static_cast<size_t>((t * joints + j) * 2 + 1)]; }
};

// Apply the joint map to one frame: pick map[i]'s (x, y), drop confidence.
// Returns J_sel rows of (x, y).
std::vector<std::array<double, 2>> select_permute(const PoseFrame& frame, const JointMap& map);

// Per-sequence normalization: translate so the torso root joint's mean
// position over the window is the origin, then divide by the largest
// absolute per-axis extent so all coordinates lie in [-1, 1]. root_joint
// indexes into the selected joint order.
SkeletonSequence normalize(const SkeletonSequence& seq, int root_joint, double eps = 1e-9);

// Index of the torso root (mid hip) inside a joint map, or 0 if the map was
// built without names.
int root_joint_index(const JointMap& map);

// Sliding windows of length T at the given stride over a clip's selected
// coordinates. Throws DimensionError when the clip is shorter than T.
std::vector<SkeletonSequence> sample_windows(const std::vector<PoseFrame>& frames, const JointMap& map,
                                             int window_len, int stride, const std::string& source_id,
                                             int label = -1);

// Flatten a batch of sequences to the model input layout [B, T, 2J].
Tensor batch_tensor(const std::vector<const SkeletonSequence*>& batch);

} // namespace relsar
