#pragma once

#include <optional>
#include <string>
#include <vector>

#include "screenseg/image.hpp"
#include "screenseg/stats.hpp"
#include "screenseg/synthdata.hpp"
#include "screenseg/train.hpp"

namespace screenseg {

// --------------------------------------------------------------------------
// Pre-screening decisions
// --------------------------------------------------------------------------

// The classifier's raw logit against a decision threshold. The tested range
// is 0..5 (logit 0 is probability 0.5); values outside are allowed but
// flagged.
struct ScreeningDecision {
    double logit = 0.0;
    double threshold = 0.0;
    bool pass = false;                // logit > threshold
    bool threshold_in_range = true;   // threshold within [0,5]
};

ScreeningDecision make_screening_decision(double logit, double threshold);
ScreeningDecision screen_frame(FrameClassifier& classifier, const ImageF& frame,
                               double threshold);

// Full cascade for one frame: if the screen fails the frame is declared
// negative with an empty mask; otherwise the ensemble segments it and the
// frame is positive iff the mask has more than `min_area_pixels` pixels
// (the segmenter can still veto).
struct PipelineResult {
    ScreeningDecision screen;
    bool predicted_positive = false;
    Mask mask;  // all-zero when screened out
};

PipelineResult pipeline_predict(FrameClassifier& classifier, EnsembleModel& ensemble,
                                const ImageF& frame, double threshold, int min_area_pixels = 0);

// --------------------------------------------------------------------------
// Metrics
// --------------------------------------------------------------------------

// 2|A^B| / (|A|+|B|); both-empty is 1 (consistent with the loss module).
double dice_coefficient(const Mask& pred, const Mask& truth);

struct ConfusionCounts {
    long tp = 0, fp = 0, tn = 0, fn = 0;
    bool fpr_undefined = false;  // no truly-negative frames
    bool fnr_undefined = false;  // no truly-positive frames

    long total() const { return tp + fp + tn + fn; }
    double fpr() const { return fp + tn == 0 ? 0.0 : static_cast<double>(fp) / (fp + tn); }
    double fnr() const { return fn + tp == 0 ? 0.0 : static_cast<double>(fn) / (fn + tp); }
};

// Which mask counts as ground truth: the majority-vote consensus of the three
// raters (paper-faithful), or the phantom's true mask (synthetic-only).
enum class GroundTruthRule { kConsensus, kPhantomTruth };
GroundTruthRule ground_truth_rule_from_string(const std::string& s);
std::string to_string(GroundTruthRule rule);

// One frame's inputs to the evaluation reduction.
struct FrameEval {
    std::string frame_id;
    bool truly_positive = false;
    bool predicted_positive = false;
    Mask pred_mask;  // all-zero when predicted negative
    Mask gt_mask;
};

struct FrameOutcome {
    std::string frame_id;
    bool truly_positive = false;
    bool predicted_positive = false;
    bool included = false;   // contributes to the Dice list
    double dice = 0.0;       // valid when included
    double fp_area = 0.0;    // valid when a false-positive frame
};

struct EvalReport {
    // Provenance labels, filled by the caller.
    std::string strategy;
    std::string loss;
    std::string mode;  // "pipeline" or "seg_only"
    double threshold = 0.0;

    std::vector<FrameOutcome> frames;
    // Dice over frames that are truly positive AND predicted positive; the
    // exclusion rule keeps correctly rejected negatives out of the average.
    std::vector<double> dice_values;
    bool dice_defined = false;
    double mean_dice = 0.0;
    double std_dice = 0.0;  // sample std (n-1)
    double median_dice = 0.0;

    ConfusionCounts confusion;

    // Mean fraction of frame pixels segmented on truly-negative frames that
    // were predicted positive; 0 when there are none.
    double fp_area_mean = 0.0;
    long fp_frame_count = 0;

    std::optional<double> p_value;  // vs a baseline report, filled by the caller
};

// The core reduction: exclusion-rule Dice, frame-level confusion, FP area.
EvalReport evaluate(const std::vector<FrameEval>& frames);

// --------------------------------------------------------------------------
// Batch inference + threshold sweeps
// --------------------------------------------------------------------------

// Model outputs for one frame, computed once and reused across thresholds.
struct FrameInference {
    std::string frame_id;
    double logit = 0.0;
    Mask seg_mask;
    Mask gt_mask;
    bool truly_positive = false;
};

// Runs the classifier (optional) and the ensemble over all frames.
// `jobs` > 1 parallelizes over frames with per-thread model copies; outputs
// are position-stable and independent of the thread count.
std::vector<FrameInference> run_inference(FrameClassifier* classifier, EnsembleModel& ensemble,
                                          const std::vector<FrameRecord>& records,
                                          GroundTruthRule rule, int min_consensus_pixels = 1,
                                          int jobs = 1);

EvalReport report_at_threshold(const std::vector<FrameInference>& inferences, double threshold,
                               int min_area_pixels = 0);
EvalReport report_segmentation_only(const std::vector<FrameInference>& inferences,
                                    int min_area_pixels = 0);

// One report per threshold over a shared inference pass.
std::vector<EvalReport> threshold_sweep(const std::vector<FrameInference>& inferences,
                                        const std::vector<double>& thresholds,
                                        int min_area_pixels = 0);

}  // namespace screenseg
