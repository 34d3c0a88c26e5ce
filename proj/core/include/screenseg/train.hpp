#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "screenseg/image.hpp"
#include "screenseg/losses.hpp"
#include "screenseg/models.hpp"
#include "screenseg/sampling.hpp"
#include "screenseg/synthdata.hpp"

namespace screenseg {

// --------------------------------------------------------------------------
// Configs
// --------------------------------------------------------------------------

struct TrainConfig {
    int batch_size = 32;
    double seg_initial_lr = 1e-3;
    double clf_initial_lr = 1e-4;
    double lr_gamma = 0.99;  // per-epoch exponential decay factor
    int epochs = 40;
    std::string loss = "dice";  // dice | dice_bce | w_bce
    Reduction bce_reduction = Reduction::kMean;
    bool swap_wbce_weights = false;
    LabelStrategy label_strategy;
    bool freeze_sampling = false;  // fixed draws instead of per-epoch resampling
    int min_consensus_pixels = 1;
    uint64_t seed = 0;

    void validate() const;
};

// Per-transform firing probability and parameter ranges. The affine draw and
// the vertical-axis flip fire independently with probability `probability`;
// `as_bundle` switches to a single all-or-nothing draw.
struct AugmentationConfig {
    bool enabled = true;
    double probability = 0.3;
    double max_rotate_deg = 2.5;
    double max_translate = 0.05;  // fraction of each dimension
    double scale_min = 0.95;
    double scale_max = 1.0;
    bool as_bundle = false;
};

// One concrete draw: which transforms fire and with what parameters.
struct AugmentDraw {
    bool apply_affine = false;
    bool apply_flip = false;
    AffineParams affine;
};

AugmentDraw draw_augmentation(const AugmentationConfig& config, Rng& rng);

// Applies a draw to an image/label pair with shared geometry. Hard labels are
// resampled nearest-neighbour; soft labels bilinearly.
void apply_augmentation(const AugmentDraw& draw, ImageF& image, ImageF& label, bool hard_label);

// Draw and apply in one step.
void augment(ImageF& image, ImageF& label, bool hard_label, const AugmentationConfig& config,
             Rng& rng);

// --------------------------------------------------------------------------
// Cross-validation folds
// --------------------------------------------------------------------------

struct FoldSplit {
    // fold_patients[i] is the validation patient set of fold i; the training
    // set is the union of all other folds. Sizes differ by at most one.
    std::vector<std::vector<std::string>> fold_patients;

    int k() const { return static_cast<int>(fold_patients.size()); }
    std::vector<std::string> train_patients(int fold) const;
    const std::vector<std::string>& val_patients(int fold) const {
        return fold_patients[static_cast<size_t>(fold)];
    }
};

FoldSplit kfold_split(std::vector<std::string> patients, int k, uint64_t seed);

// --------------------------------------------------------------------------
// Training
// --------------------------------------------------------------------------

struct HistoryRow {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double val_metric = 0.0;  // val_dice for the segmenter, val_acc for the classifier
};

void write_history_csv(const std::filesystem::path& path, const std::vector<HistoryRow>& rows,
                       const std::string& metric_name);

struct SegTrainResult {
    SegNet model;  // parameters of the best-validation-Dice epoch
    std::vector<HistoryRow> history;
    int best_epoch = -1;
    double best_val_dice = 0.0;
};

// Trains on the frames whose patient is in `train_patients`, monitors Dice
// against the majority-vote consensus on `val_patients`. Labels are resampled
// per epoch according to the strategy unless freeze_sampling is set.
// Non-finite loss aborts with a diagnostic.
SegTrainResult train_segmenter(const std::vector<FrameRecord>& frames,
                               const std::vector<std::string>& train_patients,
                               const std::vector<std::string>& val_patients,
                               const SegNetSpec& spec, const TrainConfig& config,
                               const AugmentationConfig& aug);

struct ClfTrainResult {
    FrameClassifier model;  // parameters of the best-validation-accuracy epoch
    std::vector<HistoryRow> history;
    int best_epoch = -1;
    double best_val_acc = 0.0;
};

// Binary frame classifier against the frame-level consensus targets.
ClfTrainResult train_classifier(const std::vector<FrameRecord>& frames,
                                const std::vector<std::string>& train_patients,
                                const std::vector<std::string>& val_patients,
                                const ClassifierSpec& spec, const TrainConfig& config);

// --------------------------------------------------------------------------
// Fold ensemble
// --------------------------------------------------------------------------

struct EnsembleModel {
    std::vector<SegNet> members;  // one per fold, shared spec

    void validate() const;  // throws on spec mismatch or empty ensemble
};

struct EnsemblePrediction {
    ImageF prob;  // arithmetic mean of member probability maps
    Mask mask;    // prob >= 0.5 (ties map to positive)
};

// Frames are normalized per-image on the segmenter path before the forward
// pass; members run in eval mode.
EnsemblePrediction ensemble_predict(EnsembleModel& ensemble, const ImageF& frame);

// Single-model variant used by the ensemble and the validation loop.
ImageF segmenter_predict(SegNet& model, const ImageF& frame);

// Classifier logit for one frame (resize + normalize inside).
double classifier_logit(FrameClassifier& model, const ImageF& frame);

}  // namespace screenseg
