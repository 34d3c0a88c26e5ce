#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "screenseg/image.hpp"
#include "screenseg/rng.hpp"

namespace screenseg {

// --------------------------------------------------------------------------
// Synthetic ultrasound-like phantom dataset: bright-rimmed dark ellipses on a
// speckled background, annotated by three simulated raters. Stands in for
// private clinical data; everything downstream only needs the structure
// (multi-rater masks, negative frames, patient-level splits).
// --------------------------------------------------------------------------

struct PhantomConfig {
    int image_height = 128;
    int image_width = 128;
    int n_patients = 10;
    int frames_per_patient = 20;
    double negative_frame_fraction = 0.2;
    double gland_axis_min = 14.0;  // ellipse semi-axis range, pixels
    double gland_axis_max = 30.0;
    double speckle_strength = 0.25;
    double rater_boundary_jitter = 2.0;  // pixels
    double rater_miss_probability = 0.0;
    uint64_t seed = 0;

    // Throws ValidationError naming the offending field.
    void validate() const;
};

struct FrameRecord {
    std::string patient_id;
    std::string frame_id;
    ImageF image;                    // values in [0,1]
    std::array<Mask, 3> rater_masks;
    std::string split;               // train | val | test
    std::optional<Mask> truth_mask;  // phantom ground truth, when available
};

struct ManifestRow {
    std::string patient_id;
    std::string frame_id;
    std::string image_path;  // relative to the manifest directory
    std::string mask_path_r1;
    std::string mask_path_r2;
    std::string mask_path_r3;
    std::string split;
};

struct DatasetManifest {
    std::filesystem::path root;  // directory containing manifest.csv
    std::vector<ManifestRow> rows;

    std::filesystem::path csv_path() const { return root / "manifest.csv"; }
};

// --------------------------------------------------------------------------
// Operations
// --------------------------------------------------------------------------

// Writes images/, masks/, manifest.csv and phantom_config.json under
// `out_dir`. Frames are split 80:20 train/test at the patient level. Phantom
// ground-truth masks are stored next to the rater masks with a _truth suffix
// (not referenced by the manifest). Fully determined by the config.
DatasetManifest generate_dataset(const PhantomConfig& config,
                                 const std::filesystem::path& out_dir);

// Three simulated rater masks: each is the true mask grown or shrunk by a
// per-rater signed boundary offset (|offset| <= jitter) and warped by a
// smooth elastic displacement whose amplitude scales with jitter. On positive
// frames a rater misses entirely (empty mask) with probability miss_prob.
// An all-zero input always yields three all-zero masks.
std::array<Mask, 3> simulate_raters(const Mask& true_mask, double jitter, double miss_prob,
                                    Rng& rng);

// Reads manifest.csv and every referenced file; validates shapes and mask
// binariness. Errors name the offending frame_id.
std::vector<FrameRecord> load_dataset(const std::filesystem::path& manifest_path);

// Manifest I/O (exact column set: patient_id, frame_id, image_path,
// mask_path_r1, mask_path_r2, mask_path_r3, split).
void write_manifest(const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& manifest_path);

// Single-frame renderer used by generate_dataset; exposed for tests.
struct PhantomFrame {
    ImageF image;
    Mask true_mask;  // empty for negative frames
};
PhantomFrame render_phantom_frame(const PhantomConfig& config, bool positive, Rng& rng);

std::string phantom_config_to_json(const PhantomConfig& config);
PhantomConfig phantom_config_from_json(const std::string& json_text);

}  // namespace screenseg
