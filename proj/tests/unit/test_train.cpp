#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "screenseg/train.hpp"
#include "screenseg/util.hpp"

using namespace screenseg;

namespace {

Mask disk_mask(int h, int w, double cy, double cx, double r) {
    Mask m(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r) m.at(y, x) = 1;
    return m;
}

// Tiny in-memory dataset: bright disks on dark background, three identical
// raters, one patient per `pid`.
std::vector<FrameRecord> toy_frames(int n_patients, int frames_per_patient, int hw,
                                    uint64_t seed, double negative_fraction = 0.25) {
    Rng rng(seed);
    std::vector<FrameRecord> out;
    for (int p = 0; p < n_patients; ++p) {
        for (int f = 0; f < frames_per_patient; ++f) {
            FrameRecord rec;
            rec.patient_id = "P" + std::to_string(p);
            rec.frame_id = rec.patient_id + "_F" + std::to_string(f);
            rec.split = "train";
            rec.image = ImageF(hw, hw, 0.2f);
            const bool positive = rng.uniform() >= negative_fraction;
            Mask mask(hw, hw);
            if (positive) {
                const double cy = rng.uniform(0.3, 0.7) * hw;
                const double cx = rng.uniform(0.3, 0.7) * hw;
                const double r = rng.uniform(0.15, 0.3) * hw;
                mask = disk_mask(hw, hw, cy, cx, r);
                for (int y = 0; y < hw; ++y)
                    for (int x = 0; x < hw; ++x)
                        if (mask.at(y, x)) rec.image.at(y, x) = 0.85f;
            }
            for (auto& v : rec.image.v) v += static_cast<float>(rng.uniform(-0.05, 0.05));
            rec.rater_masks = {mask, mask, mask};
            rec.truth_mask = mask;
            out.push_back(std::move(rec));
        }
    }
    return out;
}

}  // namespace

TEST_CASE("augment: disabled config is the identity") {
    AugmentationConfig cfg;
    cfg.probability = 0.0;
    Rng rng(1);
    ImageF img(16, 16, 0.3f);
    img.at(3, 4) = 0.9f;
    ImageF lab(16, 16, 0.0f);
    lab.at(3, 4) = 1.0f;
    const ImageF img0 = img;
    const ImageF lab0 = lab;
    augment(img, lab, true, cfg, rng);
    CHECK(img.v == img0.v);
    CHECK(lab.v == lab0.v);
}

TEST_CASE("augment: flip-only draw mirrors columns exactly") {
    AugmentDraw draw;
    draw.apply_flip = true;
    Rng rng(2);
    ImageF img(8, 8);
    ImageF lab(8, 8);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
            img.at(y, x) = static_cast<float>(rng.uniform());
            lab.at(y, x) = rng.bernoulli(0.5) ? 1.0f : 0.0f;
        }
    const ImageF img0 = img;
    const ImageF lab0 = lab;
    apply_augmentation(draw, img, lab, true);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
            CHECK(img.at(y, x) == img0.at(y, 7 - x));
            CHECK(lab.at(y, x) == lab0.at(y, 7 - x));
        }
}

TEST_CASE("augment: identity affine parameters leave content in place") {
    AugmentDraw draw;
    draw.apply_affine = true;
    draw.affine = {};  // zero rotation/translation, scale 1
    ImageF img(12, 12, 0.25f);
    img.at(5, 6) = 0.75f;
    ImageF lab(12, 12, 0.0f);
    lab.at(5, 6) = 1.0f;
    apply_augmentation(draw, img, lab, true);
    CHECK(img.at(5, 6) == doctest::Approx(0.75f));
    CHECK(lab.at(5, 6) == 1.0f);
}

TEST_CASE("augment: each transform fires ~p of the time, bundle couples them") {
    AugmentationConfig cfg;
    Rng rng(42);
    int affine_fires = 0, flip_fires = 0;
    for (int i = 0; i < 10000; ++i) {
        const AugmentDraw d = draw_augmentation(cfg, rng);
        affine_fires += d.apply_affine ? 1 : 0;
        flip_fires += d.apply_flip ? 1 : 0;
    }
    CHECK(affine_fires > 2800);
    CHECK(affine_fires < 3200);
    CHECK(flip_fires > 2800);
    CHECK(flip_fires < 3200);

    cfg.as_bundle = true;
    for (int i = 0; i < 1000; ++i) {
        const AugmentDraw d = draw_augmentation(cfg, rng);
        CHECK(d.apply_affine == d.apply_flip);
    }
}

TEST_CASE("augment: shapes preserved and hard labels stay binary") {
    AugmentationConfig cfg;
    cfg.probability = 1.0;
    Rng rng(99);
    for (int trial = 0; trial < 25; ++trial) {
        ImageF img(24, 24);
        ImageF lab(24, 24);
        for (int y = 8; y < 16; ++y)
            for (int x = 8; x < 16; ++x) lab.at(y, x) = 1.0f;
        augment(img, lab, true, cfg, rng);
        CHECK(img.height == 24);
        CHECK(lab.width == 24);
        for (float v : lab.v) CHECK((v == 0.0f || v == 1.0f));
    }
}

TEST_CASE("augment: draw ranges respect the config") {
    AugmentationConfig cfg;
    cfg.probability = 1.0;
    Rng rng(7);
    for (int i = 0; i < 200; ++i) {
        const AugmentDraw d = draw_augmentation(cfg, rng);
        CHECK(std::fabs(d.affine.rotate_deg) <= 2.5);
        CHECK(std::fabs(d.affine.translate_x) <= 0.05);
        CHECK(std::fabs(d.affine.translate_y) <= 0.05);
        CHECK(d.affine.scale >= 0.95);
        CHECK(d.affine.scale <= 1.0);
    }
}

TEST_CASE("kfold: 9 patients in 3 folds enumerates cleanly") {
    std::vector<std::string> patients;
    for (int i = 0; i < 9; ++i) patients.push_back("P" + std::to_string(i));
    const FoldSplit split = kfold_split(patients, 3, 5);
    REQUIRE(split.k() == 3);
    std::set<std::string> seen;
    for (int f = 0; f < 3; ++f) {
        CHECK(split.val_patients(f).size() == 3);
        const auto train_vec = split.train_patients(f);
        CHECK(train_vec.size() == 6);
        for (const auto& p : split.val_patients(f)) CHECK(seen.insert(p).second);
        // train = complement of val
        std::set<std::string> train(train_vec.begin(), train_vec.end());
        for (const auto& p : split.val_patients(f)) CHECK_FALSE(train.count(p));
    }
    CHECK(seen.size() == 9);

    // uneven sizes differ by at most one
    patients.push_back("P9");
    const FoldSplit split10 = kfold_split(patients, 3, 5);
    std::vector<size_t> sizes;
    for (int f = 0; f < 3; ++f) sizes.push_back(split10.val_patients(f).size());
    const auto [mn, mx] = std::minmax_element(sizes.begin(), sizes.end());
    CHECK(*mx - *mn <= 1);
}

TEST_CASE("kfold: deterministic per seed, errors on too few patients") {
    std::vector<std::string> patients = {"a", "b", "c", "d", "e"};
    const FoldSplit s1 = kfold_split(patients, 3, 11);
    const FoldSplit s2 = kfold_split(patients, 3, 11);
    CHECK(s1.fold_patients == s2.fold_patients);
    const FoldSplit s3 = kfold_split(patients, 3, 12);
    CHECK(s1.fold_patients != s3.fold_patients);
    CHECK_THROWS_AS(kfold_split({"a", "b"}, 3, 0), ValidationError);
}

TEST_CASE("lr schedule: exact exponential decay in the history") {
    auto frames = toy_frames(2, 4, 32, 3, 0.0);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 8;
    cfg.seed = 1;
    SegNetSpec spec;
    spec.depth = 3;
    spec.base_channels = 4;
    AugmentationConfig aug;
    aug.enabled = false;
    const SegTrainResult r =
        train_segmenter(frames, {"P0"}, {"P1"}, spec, cfg, aug);
    REQUIRE(r.history.size() == 3);
    for (int e = 0; e < 3; ++e) {
        CHECK(r.history[static_cast<size_t>(e)].lr ==
              doctest::Approx(cfg.seg_initial_lr * std::pow(cfg.lr_gamma, e)).epsilon(1e-12));
    }
}

TEST_CASE("train_segmenter: one epoch yields history and a usable model") {
    auto frames = toy_frames(2, 4, 32, 5, 0.25);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 4;
    cfg.seed = 9;
    SegNetSpec spec;
    spec.depth = 3;
    spec.base_channels = 4;
    AugmentationConfig aug;
    SegTrainResult r = train_segmenter(frames, {"P0"}, {"P1"}, spec, cfg, aug);
    CHECK(r.history.size() == 1);
    CHECK(r.best_epoch == 0);
    const ImageF prob = segmenter_predict(r.model, frames[0].image);
    CHECK(prob.height == 32);
}

TEST_CASE("train_segmenter: loss decreases when overfitting one batch") {
    auto frames = toy_frames(1, 4, 32, 21, 0.0);
    TrainConfig cfg;
    cfg.epochs = 20;
    cfg.batch_size = 4;
    cfg.seed = 2;
    cfg.label_strategy = LabelStrategy::parse("vote");
    SegNetSpec spec;
    spec.depth = 3;
    spec.base_channels = 8;
    AugmentationConfig aug;
    aug.enabled = false;
    const SegTrainResult r = train_segmenter(frames, {"P0"}, {}, spec, cfg, aug);
    REQUIRE(r.history.size() == 20);
    double head = 0.0, tail = 0.0;
    for (int i = 0; i < 5; ++i) {
        head += r.history[static_cast<size_t>(i)].train_loss;
        tail += r.history[r.history.size() - 1 - static_cast<size_t>(i)].train_loss;
    }
    CHECK(tail < head - 0.05);  // clear downward trend
    CHECK(r.history.back().train_loss < r.history.front().train_loss);
}

TEST_CASE("train_segmenter: deterministic given the seed") {
    auto frames = toy_frames(2, 3, 32, 8, 0.3);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 4;
    cfg.seed = 31;
    cfg.label_strategy = LabelStrategy::parse("random");
    SegNetSpec spec;
    spec.depth = 3;
    spec.base_channels = 4;
    AugmentationConfig aug;  // augmentation on, still deterministic
    SegTrainResult a = train_segmenter(frames, {"P0"}, {"P1"}, spec, cfg, aug);
    SegTrainResult b = train_segmenter(frames, {"P0"}, {"P1"}, spec, cfg, aug);
    CHECK(parameter_checksum(a.model.named_tensors()) ==
          parameter_checksum(b.model.named_tensors()));
    REQUIRE(a.history.size() == b.history.size());
    for (size_t i = 0; i < a.history.size(); ++i) {
        CHECK(a.history[i].train_loss == b.history[i].train_loss);
        CHECK(a.history[i].val_metric == b.history[i].val_metric);
    }
}

TEST_CASE("train_classifier: overfits a single batch to accuracy 1") {
    // 6 frames, classifier reduced to a small input so 50 epochs stay fast
    auto frames = toy_frames(1, 6, 32, 13, 0.5);
    TrainConfig cfg;
    cfg.epochs = 50;
    cfg.batch_size = 6;
    cfg.clf_initial_lr = 3e-4;
    cfg.seed = 17;
    ClassifierSpec spec = ClassifierSpec::desk();
    spec.input_size = 64;
    const ClfTrainResult r = train_classifier(frames, {"P0"}, {"P0"}, spec, cfg);
    CHECK(r.best_val_acc == doctest::Approx(1.0));
}

TEST_CASE("train_classifier: identical targets still complete") {
    auto frames = toy_frames(2, 3, 32, 19, 0.0);  // all positive
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 4;
    cfg.seed = 3;
    ClassifierSpec spec = ClassifierSpec::desk();
    spec.input_size = 64;
    const ClfTrainResult r = train_classifier(frames, {"P0"}, {"P1"}, spec, cfg);
    CHECK(r.history.size() == 2);
    CHECK(r.best_val_acc == doctest::Approx(1.0));  // trivially >= base rate
}

TEST_CASE("ensemble: identical members equal the single model") {
    SegNetSpec spec;
    spec.depth = 3;
    spec.base_channels = 4;
    SegNet net = build_segmenter(spec, 77);
    net.set_training(false);
    ImageF frame(32, 32);
    Rng rng(4);
    for (auto& v : frame.v) v = static_cast<float>(rng.uniform());

    EnsembleModel ens;
    ens.members = {net, net, net};
    const EnsemblePrediction pred = ensemble_predict(ens, frame);
    const ImageF single = segmenter_predict(net, frame);
    for (size_t i = 0; i < single.v.size(); ++i)
        CHECK(pred.prob.v[i] == doctest::Approx(single.v[i]).epsilon(1e-6));
}

TEST_CASE("ensemble: mean bounded by member extrema, threshold tie is positive") {
    SegNetSpec spec;
    spec.depth = 3;
    spec.base_channels = 4;
    EnsembleModel ens;
    for (uint64_t s : {1ULL, 2ULL, 3ULL}) ens.members.push_back(build_segmenter(spec, s));
    ImageF frame(32, 32);
    Rng rng(6);
    for (auto& v : frame.v) v = static_cast<float>(rng.uniform());

    std::vector<ImageF> members;
    for (auto& m : ens.members) members.push_back(segmenter_predict(m, frame));
    const EnsemblePrediction pred = ensemble_predict(ens, frame);
    for (size_t i = 0; i < pred.prob.v.size(); ++i) {
        float lo = 1.0f, hi = 0.0f;
        for (const auto& m : members) {
            lo = std::min(lo, m.v[i]);
            hi = std::max(hi, m.v[i]);
        }
        CHECK(pred.prob.v[i] >= lo - 1e-6f);
        CHECK(pred.prob.v[i] <= hi + 1e-6f);
        CHECK(pred.mask.v[i] == (pred.prob.v[i] >= 0.5f ? 1 : 0));
    }
}

TEST_CASE("ensemble: spec mismatch rejected; mask comes from the mean map") {
    SegNetSpec a, b;
    b.base_channels = 8;
    EnsembleModel ens;
    ens.members.push_back(build_segmenter(a, 1));
    ens.members.push_back(build_segmenter(b, 1));
    CHECK_THROWS_AS(ens.validate(), ValidationError);

    // Member maps 0.2 / 0.4 / 0.9 average to 0.5, which thresholds positive
    // even though only one member mask would vote positive.
    const double mean = (0.2 + 0.4 + 0.9) / 3.0;
    CHECK(mean == doctest::Approx(0.5));
    int member_votes = (0.2 >= 0.5) + (0.4 >= 0.5) + (0.9 >= 0.5);
    CHECK(member_votes == 1);  // voting would say negative; the mean says positive
}

TEST_CASE("history csv writer emits the documented columns") {
    const auto dir = std::filesystem::temp_directory_path() / "screenseg_hist";
    std::filesystem::create_directories(dir);
    write_history_csv(dir / "history.csv", {{0, 1e-3, 0.5, 0.8}, {1, 9.9e-4, 0.4, 0.9}},
                      "val_dice");
    const auto text = read_text_file(dir / "history.csv");
    CHECK(text.find("epoch,lr,train_loss,val_dice") == 0);
    std::filesystem::remove_all(dir);
}
