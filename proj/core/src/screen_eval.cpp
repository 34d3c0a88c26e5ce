#include "screenseg/screen_eval.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "screenseg/error.hpp"

namespace screenseg {

// ---------------------------------------------------------------------------
// Screening
// ---------------------------------------------------------------------------

ScreeningDecision make_screening_decision(double logit, double threshold) {
    ScreeningDecision d;
    d.logit = logit;
    d.threshold = threshold;
    d.pass = logit > threshold;
    d.threshold_in_range = threshold >= 0.0 && threshold <= 5.0;
    return d;
}

ScreeningDecision screen_frame(FrameClassifier& classifier, const ImageF& frame,
                               double threshold) {
    return make_screening_decision(classifier_logit(classifier, frame), threshold);
}

PipelineResult pipeline_predict(FrameClassifier& classifier, EnsembleModel& ensemble,
                                const ImageF& frame, double threshold, int min_area_pixels) {
    PipelineResult r;
    r.screen = screen_frame(classifier, frame, threshold);
    if (!r.screen.pass) {
        r.predicted_positive = false;
        r.mask = Mask(frame.height, frame.width);
        return r;
    }
    const EnsemblePrediction pred = ensemble_predict(ensemble, frame);
    r.mask = pred.mask;
    r.predicted_positive = r.mask.count() > static_cast<size_t>(std::max(0, min_area_pixels));
    return r;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

double dice_coefficient(const Mask& pred, const Mask& truth) { return mask_dice(pred, truth); }

GroundTruthRule ground_truth_rule_from_string(const std::string& s) {
    if (s == "consensus") return GroundTruthRule::kConsensus;
    if (s == "phantom_truth") return GroundTruthRule::kPhantomTruth;
    throw ValidationError("unknown ground_truth rule '" + s +
                          "' (expected consensus | phantom_truth)");
}

std::string to_string(GroundTruthRule rule) {
    return rule == GroundTruthRule::kConsensus ? "consensus" : "phantom_truth";
}

EvalReport evaluate(const std::vector<FrameEval>& frames) {
    EvalReport report;
    double fp_area_sum = 0.0;
    for (const auto& f : frames) {
        FrameOutcome outcome;
        outcome.frame_id = f.frame_id;
        outcome.truly_positive = f.truly_positive;
        outcome.predicted_positive = f.predicted_positive;
        if (f.truly_positive && f.predicted_positive) {
            ++report.confusion.tp;
            outcome.included = true;
            outcome.dice = dice_coefficient(f.pred_mask, f.gt_mask);
            report.dice_values.push_back(outcome.dice);
        } else if (f.truly_positive && !f.predicted_positive) {
            ++report.confusion.fn;
        } else if (!f.truly_positive && f.predicted_positive) {
            ++report.confusion.fp;
            outcome.fp_area =
                static_cast<double>(f.pred_mask.count()) / static_cast<double>(f.pred_mask.numel());
            fp_area_sum += outcome.fp_area;
            ++report.fp_frame_count;
        } else {
            ++report.confusion.tn;
        }
        report.frames.push_back(std::move(outcome));
    }
    report.confusion.fpr_undefined = (report.confusion.fp + report.confusion.tn) == 0;
    report.confusion.fnr_undefined = (report.confusion.fn + report.confusion.tp) == 0;
    report.fp_area_mean =
        report.fp_frame_count > 0 ? fp_area_sum / static_cast<double>(report.fp_frame_count) : 0.0;

    report.dice_defined = !report.dice_values.empty();
    if (report.dice_defined) {
        report.mean_dice = mean_of(report.dice_values);
        report.std_dice =
            report.dice_values.size() > 1 ? std::sqrt(sample_variance(report.dice_values)) : 0.0;
        report.median_dice = median_of(report.dice_values);
    }
    return report;
}

// ---------------------------------------------------------------------------
// Batch inference
// ---------------------------------------------------------------------------

namespace {

Mask ground_truth_of(const FrameRecord& rec, GroundTruthRule rule) {
    if (rule == GroundTruthRule::kPhantomTruth) {
        if (!rec.truth_mask)
            throw ValidationError("frame " + rec.frame_id +
                                  ": phantom_truth requested but no truth mask on disk");
        return *rec.truth_mask;
    }
    const auto& rm = rec.rater_masks;
    const Mask masks[3] = {rm[0], rm[1], rm[2]};
    return sample_vote(masks);
}

}  // namespace

std::vector<FrameInference> run_inference(FrameClassifier* classifier, EnsembleModel& ensemble,
                                          const std::vector<FrameRecord>& records,
                                          GroundTruthRule rule, int min_consensus_pixels,
                                          int jobs) {
    ensemble.validate();
    std::vector<FrameInference> out(records.size());

    auto infer_range = [&](FrameClassifier* clf, EnsembleModel* ens, size_t begin, size_t step) {
        for (size_t i = begin; i < records.size(); i += step) {
            const FrameRecord& rec = records[i];
            FrameInference inf;
            inf.frame_id = rec.frame_id;
            inf.gt_mask = ground_truth_of(rec, rule);
            inf.truly_positive =
                inf.gt_mask.count() >=
                static_cast<size_t>(std::max(1, rule == GroundTruthRule::kConsensus
                                                     ? min_consensus_pixels
                                                     : 1));
            inf.logit = clf ? classifier_logit(*clf, rec.image) : 0.0;
            inf.seg_mask = ensemble_predict(*ens, rec.image).mask;
            out[i] = std::move(inf);
        }
    };

    const int n_threads = std::max(1, std::min<int>(jobs, static_cast<int>(records.size())));
    if (n_threads == 1) {
        infer_range(classifier, &ensemble, 0, 1);
    } else {
        // Per-thread model copies: forward passes mutate layer caches, so a
        // shared instance cannot serve concurrent frames.
        std::vector<std::thread> workers;
        std::vector<EnsembleModel> ens_copies(static_cast<size_t>(n_threads), ensemble);
        std::vector<FrameClassifier> clf_copies;
        if (classifier)
            clf_copies.assign(static_cast<size_t>(n_threads), *classifier);
        for (int t = 0; t < n_threads; ++t) {
            FrameClassifier* clf = classifier ? &clf_copies[static_cast<size_t>(t)] : nullptr;
            workers.emplace_back(infer_range, clf, &ens_copies[static_cast<size_t>(t)],
                                 static_cast<size_t>(t), static_cast<size_t>(n_threads));
        }
        for (auto& w : workers) w.join();
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

namespace {

EvalReport assemble(const std::vector<FrameInference>& inferences, bool use_screen,
                    double threshold, int min_area_pixels) {
    std::vector<FrameEval> evals;
    evals.reserve(inferences.size());
    const size_t min_area = static_cast<size_t>(std::max(0, min_area_pixels));
    for (const auto& inf : inferences) {
        FrameEval e;
        e.frame_id = inf.frame_id;
        e.truly_positive = inf.truly_positive;
        e.gt_mask = inf.gt_mask;
        const bool screen_pass = !use_screen || inf.logit > threshold;
        const bool seg_positive = inf.seg_mask.count() > min_area;
        e.predicted_positive = screen_pass && seg_positive;
        e.pred_mask = screen_pass ? inf.seg_mask : Mask(inf.seg_mask.height, inf.seg_mask.width);
        evals.push_back(std::move(e));
    }
    EvalReport report = evaluate(evals);
    report.mode = use_screen ? "pipeline" : "seg_only";
    report.threshold = use_screen ? threshold : -std::numeric_limits<double>::infinity();
    return report;
}

}  // namespace

EvalReport report_at_threshold(const std::vector<FrameInference>& inferences, double threshold,
                               int min_area_pixels) {
    return assemble(inferences, true, threshold, min_area_pixels);
}

EvalReport report_segmentation_only(const std::vector<FrameInference>& inferences,
                                    int min_area_pixels) {
    return assemble(inferences, false, 0.0, min_area_pixels);
}

std::vector<EvalReport> threshold_sweep(const std::vector<FrameInference>& inferences,
                                        const std::vector<double>& thresholds,
                                        int min_area_pixels) {
    std::vector<EvalReport> out;
    out.reserve(thresholds.size());
    for (double t : thresholds) out.push_back(report_at_threshold(inferences, t, min_area_pixels));
    return out;
}

}  // namespace screenseg
