// Dataset file contracts: JSON-lines keypoint files, the experiment
// manifest, window-dataset assembly, and the synthetic dataset generator
// used for desk-scale training and verification.
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "relsar/rng.hpp"
#include "relsar/skeleton.hpp"

namespace relsar {

// One keypoint file holds one video clip. An optional header line declares
// the joint storage order; files without a header use the default inventory.
struct KeypointFile {
    std::vector<std::string> joint_names;
    std::vector<PoseFrame> frames;
};

void write_keypoint_file(const std::string& path, const std::vector<PoseFrame>& frames,
                         const std::vector<std::string>* joint_names = nullptr);
KeypointFile read_keypoint_file(const std::string& path);

struct SampleRecord {
    std::string path; // relative to the manifest directory
    int label = -1;
    std::string split; // "train" | "test"
};

struct ExperimentManifest {
    std::string name;
    int seq_len = 30;
    int window_stride = 0; // 0 resolves to seq_len / 2
    double min_confidence = 0.3;
    std::string joint_map_id = "default15"; // "default15" | "raw25" | "custom"
    std::vector<std::pair<std::string, Region>> custom_map;
    std::vector<std::string> classes;
    std::vector<SampleRecord> samples;
    std::optional<int> labels_per_class;
    std::string base_dir; // set on load; not serialized

    int resolved_stride() const { return window_stride > 0 ? window_stride : std::max(1, seq_len / 2); }
    void validate() const;

    static ExperimentManifest load(const std::string& path);
    void save(const std::string& path) const;
};

// Resolve the manifest's joint-map spec against a file's joint order.
JointMap resolve_joint_map(const ExperimentManifest& m, const std::vector<std::string>& file_joint_names);

// All normalized windows of one split plus bookkeeping.
struct WindowDataset {
    ExperimentManifest manifest;
    int selected_joints = 0;
    std::vector<SkeletonSequence> train;
    std::vector<SkeletonSequence> test;
    std::vector<std::string> warnings; // skipped clips, dropped windows

    int num_classes() const { return static_cast<int>(manifest.classes.size()); }
};

WindowDataset load_dataset(const ExperimentManifest& manifest);

// Synthetic labeled skeleton data: classes are distinct kinematic motifs
// (per-region sinusoidal trajectories with class-specific frequency, phase
// and amplitude profile) over a fixed base pose, plus Gaussian pixel noise
// and a per-video global translation/scale that normalization removes.
struct SynthSpec {
    int classes = 4;
    int samples_per_class = 50;
    int seq_len = 30;   // window length T declared in the manifest
    int video_len = 0;  // frames per generated clip; 0 -> 2 * seq_len
    double noise_std = 2.0; // px
    double train_fraction = 0.8;
    uint64_t seed = 7;
    std::string name = "synth";

    int resolved_video_len() const { return video_len > 0 ? video_len : 2 * seq_len; }
    void validate() const;
};

// Writes keypoint files and a manifest under out_dir, returns the manifest.
ExperimentManifest synth_dataset(const SynthSpec& spec, const std::string& out_dir);

} // namespace relsar
