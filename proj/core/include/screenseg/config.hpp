#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "screenseg/models.hpp"
#include "screenseg/sampling.hpp"
#include "screenseg/screen_eval.hpp"
#include "screenseg/synthdata.hpp"
#include "screenseg/train.hpp"

namespace screenseg {

// The single JSON document driving every CLI command. Unknown keys are
// rejected (with their path); missing keys take the documented defaults. The
// fully-resolved form is echoed to the output directory before any work.
struct RunConfig {
    uint64_t seed = 0;
    int jobs = 1;
    bool deterministic = true;
    int folds = 3;

    PhantomConfig phantom;

    LabelStrategy strategy;
    bool freeze_sampling = false;
    int min_consensus_pixels = 1;

    std::string loss = "dice";
    Reduction bce_reduction = Reduction::kMean;
    bool swap_wbce_weights = false;

    TrainConfig train;  // strategy/loss/seed mirrored in at resolve time
    AugmentationConfig augment;

    SegNetSpec segmenter;
    std::string classifier_preset = "desk";
    ClassifierSpec classifier;

    std::vector<double> thresholds = {0, 1, 2, 3, 4, 5};
    GroundTruthRule ground_truth = GroundTruthRule::kConsensus;
    int min_area_pixels = 0;

    std::filesystem::path dataset_dir;      // default: <out>/dataset
    std::filesystem::path checkpoints_dir;  // default: $SCREENSEG_CACHE or <out>/checkpoints

    // Filled-in TrainConfig for a given fold seed stream.
    TrainConfig train_for(uint64_t fold_seed) const;
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string run_config_to_json(const RunConfig& config);

// Resolves dataset/checkpoint paths against the output dir and environment
// (SCREENSEG_CACHE overrides the checkpoint cache location).
void resolve_paths(RunConfig& config, const std::filesystem::path& out_dir);

}  // namespace screenseg
