#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fogseg/array.hpp"

namespace fogseg {

inline constexpr int kClassFg = 0;
inline constexpr int kClassFog = 1;

// One motion-capture sequence: marker positions in millimeters plus
// per-sample class labels.
struct Trial {
    std::string trial_id;
    std::string subject_id;
    double sample_rate = 100.0;
    std::vector<std::string> markers;  // [N]
    std::vector<real_t> positions;     // [N x T x 3]
    std::vector<int> labels;           // [T], 0 = FG, 1 = FOG

    int num_markers() const { return static_cast<int>(markers.size()); }
    int num_samples() const { return static_cast<int>(labels.size()); }
    real_t pos(int n, int t, int c) const {
        return positions[(static_cast<std::size_t>(n) * labels.size() + t) * 3 + c];
    }
    real_t& pos(int n, int t, int c) {
        return positions[(static_cast<std::size_t>(n) * labels.size() + t) * 3 + c];
    }
    void validate() const;
};

// CSV with header `sample,<M>_x,<M>_y,<M>_z,...,label` plus a `<stem>.json`
// sidecar carrying trial_id, subject_id, and sample_rate. Round-trips
// positions exactly (shortest round-trip decimal form).
Trial load_trial(const std::string& csv_path);
void save_trial(const Trial& trial, const std::string& csv_path);

// Consecutive-sample displacement, the model's input representation.
// data[n][t][c] = pos(n, t+1, c) - pos(n, t, c); the trailing label is
// dropped so labels align with the T-1 feature samples.
struct FeatureSeq {
    int nodes = 0;
    int time = 0;
    std::vector<real_t> data;  // [N x T x 3]
    std::vector<int> labels;   // [T]
};
FeatureSeq displacement_features(const Trial& trial);

// [C_in x N x T] untracked leaf for the model.
DiffArray to_model_input(const FeatureSeq& f);

struct ManifestEntry {
    std::string subject_id;
    bool enrichment = false;
    std::vector<std::string> trial_paths;  // resolved against the manifest dir
};
struct Manifest {
    std::vector<ManifestEntry> subjects;
};
Manifest load_manifest(const std::string& path);
void save_manifest(const Manifest& m, const std::string& path);  // paths kept as given

struct Dataset {
    std::vector<Trial> trials;
    std::vector<bool> enrichment;  // parallel to trials
};
Dataset load_dataset(const std::string& manifest_path);

// Synthetic gait: sinusoidal limb oscillation during functional gait;
// FOG episodes replace it with high-frequency low-amplitude trembling or
// near-still akinesia. Labels mark the generated episodes exactly.
struct SynthConfig {
    std::uint64_t seed = 7;
    int subjects = 3;
    int trials_per_subject = 4;
    int enrichment_subjects = 0;  // extra training-only subjects
    double sample_rate = 100.0;
    double trial_seconds_min = 8.0;
    double trial_seconds_max = 12.0;
    double stride_hz_min = 0.8;
    double stride_hz_max = 1.2;
    double fog_rate = 0.7;  // probability a trial contains FOG
    int episodes_min = 1;
    int episodes_max = 3;
    double episode_seconds_min = 1.0;
    double episode_seconds_max = 3.0;
    double trembling_fraction = 0.5;  // vs akinesia
    double tremble_hz_min = 3.0;
    double tremble_hz_max = 8.0;
    double tremble_amp_ratio = 0.2;  // of stride amplitude
    double noise_mm = 0.6;
    std::string subject_prefix = "subj";

    void validate() const;
};

Dataset generate_synthetic(const SynthConfig& cfg);

// Writes trials plus manifest.json into dir (created if needed).
void save_dataset(const Dataset& ds, const std::string& dir);

}  // namespace fogseg
