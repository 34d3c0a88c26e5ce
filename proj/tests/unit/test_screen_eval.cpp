#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "screenseg/screen_eval.hpp"

using namespace screenseg;

namespace {

Mask filled_fraction(int h, int w, double fraction) {
    Mask m(h, w);
    const size_t n = static_cast<size_t>(std::llround(fraction * h * w));
    for (size_t i = 0; i < n; ++i) m.v[i] = 1;
    return m;
}

FrameInference make_inf(const std::string& id, double logit, Mask seg, Mask gt) {
    FrameInference inf;
    inf.frame_id = id;
    inf.logit = logit;
    inf.seg_mask = std::move(seg);
    inf.gt_mask = std::move(gt);
    inf.truly_positive = inf.gt_mask.any();
    return inf;
}

}  // namespace

TEST_CASE("screening decision boundary cases") {
    const ScreeningDecision pass = make_screening_decision(3.2, 0.0);
    CHECK(pass.pass);
    const ScreeningDecision fail = make_screening_decision(4.9, 5.0);
    CHECK_FALSE(fail.pass);
    // pass iff strictly greater
    CHECK_FALSE(make_screening_decision(2.0, 2.0).pass);
    CHECK(make_screening_decision(2.0, 2.0).threshold_in_range);
    CHECK_FALSE(make_screening_decision(2.0, 6.0).threshold_in_range);
    CHECK_FALSE(make_screening_decision(2.0, -1.0).threshold_in_range);
}

TEST_CASE("pass sets shrink as the threshold rises") {
    Rng rng(8);
    std::vector<double> logits;
    for (int i = 0; i < 200; ++i) logits.push_back(rng.uniform(-2.0, 7.0));
    std::set<int> previous;
    for (int i = 0; i < 200; ++i) previous.insert(i);
    for (double thr : {0.0, 1.0, 2.0, 3.0, 4.0, 5.0}) {
        std::set<int> current;
        for (int i = 0; i < 200; ++i)
            if (make_screening_decision(logits[static_cast<size_t>(i)], thr).pass) current.insert(i);
        for (int id : current) CHECK(previous.count(id));  // subset of the lower threshold
        previous = current;
    }
}

TEST_CASE("dice coefficient: hand cases") {
    Mask a(2, 2), b(2, 2);
    a.at(0, 0) = 1;
    a.at(0, 1) = 1;
    b.at(0, 0) = 1;
    CHECK(dice_coefficient(a, a) == doctest::Approx(1.0));
    CHECK(dice_coefficient(a, b) == doctest::Approx(2.0 / 3.0));
    Mask c(2, 2), d(2, 2);
    c.at(0, 0) = 1;
    d.at(1, 1) = 1;
    CHECK(dice_coefficient(c, d) == doctest::Approx(0.0));
    CHECK(dice_coefficient(Mask(2, 2), Mask(2, 2)) == doctest::Approx(1.0));
    CHECK_THROWS_AS(dice_coefficient(Mask(2, 2), Mask(3, 2)), ShapeError);
}

TEST_CASE("evaluate: crafted 4-frame exclusion-rule case") {
    // 2 true positives predicted positive (Dice 1.0 and 0.5), 1 true positive
    // predicted negative, 1 true negative predicted positive with 10% area.
    const int hw = 10;  // 100 px frames
    std::vector<FrameEval> frames;

    FrameEval perfect;
    perfect.frame_id = "tp_perfect";
    perfect.truly_positive = true;
    perfect.predicted_positive = true;
    perfect.gt_mask = filled_fraction(hw, hw, 0.2);
    perfect.pred_mask = perfect.gt_mask;
    frames.push_back(perfect);

    FrameEval half;
    half.frame_id = "tp_half";
    half.truly_positive = true;
    half.predicted_positive = true;
    half.gt_mask = filled_fraction(hw, hw, 0.2);  // 20 px
    // prediction covers 10 of the 20 px and nothing else: dice = 2*10/(10+20) ... not 0.5
    // use pred = 20 px with 10 overlapping: dice = 2*10/(20+20) = 0.5
    half.pred_mask = Mask(hw, hw);
    for (int i = 0; i < 20; ++i) half.pred_mask.v[static_cast<size_t>(i + 10)] = 1;
    frames.push_back(half);

    FrameEval missed;
    missed.frame_id = "fn_frame";
    missed.truly_positive = true;
    missed.predicted_positive = false;
    missed.gt_mask = filled_fraction(hw, hw, 0.3);
    missed.pred_mask = Mask(hw, hw);
    frames.push_back(missed);

    FrameEval false_pos;
    false_pos.frame_id = "fp_frame";
    false_pos.truly_positive = false;
    false_pos.predicted_positive = true;
    false_pos.gt_mask = Mask(hw, hw);
    false_pos.pred_mask = filled_fraction(hw, hw, 0.10);
    frames.push_back(false_pos);

    const EvalReport report = evaluate(frames);
    REQUIRE(report.dice_values.size() == 2);  // exclusion rule: exactly 2 included
    CHECK(report.mean_dice == doctest::Approx(0.75));
    CHECK(report.confusion.tp == 2);
    CHECK(report.confusion.fn == 1);
    CHECK(report.confusion.fp == 1);
    CHECK(report.confusion.tn == 0);
    CHECK(report.fp_area_mean == doctest::Approx(0.10));
    CHECK(report.confusion.total() == 4);
}

TEST_CASE("evaluate: all-negative set has empty dice list and zero fp area") {
    std::vector<FrameEval> frames;
    for (int i = 0; i < 5; ++i) {
        FrameEval f;
        f.frame_id = "n" + std::to_string(i);
        f.truly_positive = false;
        f.predicted_positive = false;
        f.gt_mask = Mask(8, 8);
        f.pred_mask = Mask(8, 8);
        frames.push_back(f);
    }
    const EvalReport report = evaluate(frames);
    CHECK(report.confusion.tn == 5);
    CHECK_FALSE(report.dice_defined);
    CHECK(report.dice_values.empty());
    CHECK(report.fp_area_mean == doctest::Approx(0.0));
    CHECK(report.confusion.fnr_undefined);
    CHECK_FALSE(report.confusion.fpr_undefined);
    CHECK(report.confusion.fnr() == doctest::Approx(0.0));  // guarded rate
}

TEST_CASE("report assembly: pipeline vs segmentation-only and monotonicity") {
    // synthetic inference outputs: logits spread over [-1, 6], some frames
    // with empty segmenter masks (segmenter veto)
    Rng rng(71);
    std::vector<FrameInference> infs;
    for (int i = 0; i < 100; ++i) {
        const bool positive = rng.bernoulli(0.7);
        Mask gt = positive ? filled_fraction(6, 6, 0.3) : Mask(6, 6);
        Mask seg = rng.bernoulli(0.8) ? filled_fraction(6, 6, rng.uniform(0.1, 0.4)) : Mask(6, 6);
        infs.push_back(make_inf("f" + std::to_string(i), rng.uniform(-1.0, 6.0), seg, gt));
    }

    const EvalReport seg_only = report_segmentation_only(infs);
    CHECK(seg_only.mode == "seg_only");

    long prev_fp = seg_only.confusion.fp;
    long prev_fn = seg_only.confusion.fn;
    for (double thr : {0.0, 1.0, 2.0, 3.0, 4.0, 5.0}) {
        const EvalReport r = report_at_threshold(infs, thr);
        CHECK(r.confusion.total() == 100);
        CHECK(r.confusion.fp <= prev_fp);
        CHECK(r.confusion.fn >= prev_fn);
        prev_fp = r.confusion.fp;
        prev_fn = r.confusion.fn;
        // predicted-positive set == {pass} ^ {non-empty mask}
        for (const auto& f : r.frames) {
            const auto& inf = infs[static_cast<size_t>(&f - r.frames.data())];
            CHECK(f.predicted_positive == (inf.logit > thr && inf.seg_mask.any()));
        }
    }

    // threshold -inf reduces the pipeline exactly to segmentation-only
    const EvalReport at_neg_inf =
        report_at_threshold(infs, -std::numeric_limits<double>::infinity());
    CHECK(at_neg_inf.confusion.tp == seg_only.confusion.tp);
    CHECK(at_neg_inf.confusion.fp == seg_only.confusion.fp);
    CHECK(at_neg_inf.confusion.tn == seg_only.confusion.tn);
    CHECK(at_neg_inf.confusion.fn == seg_only.confusion.fn);
    REQUIRE(at_neg_inf.dice_values.size() == seg_only.dice_values.size());
    for (size_t i = 0; i < seg_only.dice_values.size(); ++i)
        CHECK(at_neg_inf.dice_values[i] == seg_only.dice_values[i]);

    // threshold 0 pipeline positives are a subset of seg-only positives
    const EvalReport at0 = report_at_threshold(infs, 0.0);
    for (size_t i = 0; i < infs.size(); ++i)
        if (at0.frames[i].predicted_positive) CHECK(seg_only.frames[i].predicted_positive);

    // sweep helper covers all thresholds
    const auto sweep = threshold_sweep(infs, {0, 1, 2, 3, 4, 5});
    CHECK(sweep.size() == 6);
}

TEST_CASE("pipeline per-frame op: screen short-circuit and segmenter veto") {
    SegNetSpec sspec;
    sspec.depth = 3;
    sspec.base_channels = 4;
    EnsembleModel ens;
    for (uint64_t s : {1ULL, 2ULL, 3ULL}) ens.members.push_back(build_segmenter(sspec, s));
    ClassifierSpec cspec = ClassifierSpec::desk();
    cspec.input_size = 64;
    FrameClassifier clf = build_classifier(cspec, 5);
    clf.set_training(false);

    ImageF frame(32, 32, 0.4f);
    Rng rng(2);
    for (auto& v : frame.v) v = static_cast<float>(rng.uniform());

    const double logit = classifier_logit(clf, frame);
    // force a failing screen: threshold above the logit
    const PipelineResult blocked = pipeline_predict(clf, ens, frame, logit + 1.0);
    CHECK_FALSE(blocked.screen.pass);
    CHECK_FALSE(blocked.predicted_positive);
    CHECK_FALSE(blocked.mask.any());

    // force a passing screen: the segmenter output decides
    const PipelineResult open = pipeline_predict(clf, ens, frame, logit - 1.0);
    CHECK(open.screen.pass);
    const EnsemblePrediction direct = ensemble_predict(ens, frame);
    CHECK(open.mask == direct.mask);
    CHECK(open.predicted_positive == direct.mask.any());

    // a large min_area turns any mask into a veto
    const PipelineResult strict =
        pipeline_predict(clf, ens, frame, logit - 1.0, 32 * 32 + 1);
    CHECK_FALSE(strict.predicted_positive);
}

TEST_CASE("welch t test: reference values and symmetry") {
    const std::vector<double> a = {0.1, 0.2, 0.3};
    const std::vector<double> b = {0.4, 0.5, 0.6};
    const TTestResult r = welch_t_test(a, b);
    // reference values from an independent statistical package
    CHECK(r.t == doctest::Approx(-3.674234614174767).epsilon(1e-9));
    CHECK(r.df == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(std::fabs(r.p - 0.021311641128756727) < 1e-6);

    const TTestResult swapped = welch_t_test(b, a);
    CHECK(swapped.t == doctest::Approx(-r.t));
    CHECK(swapped.p == doctest::Approx(r.p).epsilon(1e-12));

    // identical samples: t = 0, p = 1
    const std::vector<double> c = {0.2, 0.4, 0.6};
    std::vector<double> c_shifted = c;
    const TTestResult same = welch_t_test(c, c_shifted);
    CHECK(same.t == doctest::Approx(0.0));
    CHECK(same.p == doctest::Approx(1.0));

    CHECK_THROWS_AS(welch_t_test(std::vector<double>{0.1}, b), ValidationError);
    const std::vector<double> flat = {0.5, 0.5, 0.5};
    CHECK_THROWS_AS(welch_t_test(flat, flat), ValidationError);
}

TEST_CASE("ground truth rule parsing") {
    CHECK(ground_truth_rule_from_string("consensus") == GroundTruthRule::kConsensus);
    CHECK(ground_truth_rule_from_string("phantom_truth") == GroundTruthRule::kPhantomTruth);
    CHECK_THROWS_AS(ground_truth_rule_from_string("oracle"), ValidationError);
}
