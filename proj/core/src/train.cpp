#include "screenseg/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "screenseg/csv.hpp"
#include "screenseg/error.hpp"
#include "screenseg/nn/adam.hpp"

namespace screenseg {

// ---------------------------------------------------------------------------
// Config validation
// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
    if (batch_size < 1) throw ValidationError("train config: batch_size must be >= 1");
    if (epochs < 1) throw ValidationError("train config: epochs must be >= 1");
    if (lr_gamma <= 0.0 || lr_gamma > 1.0)
        throw ValidationError("train config: lr_gamma must be in (0,1]");
    if (seg_initial_lr <= 0.0 || clf_initial_lr <= 0.0)
        throw ValidationError("train config: learning rates must be positive");
    if (loss != "dice" && loss != "dice_bce" && loss != "w_bce")
        throw ValidationError("train config: loss must be dice | dice_bce | w_bce");
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

AugmentDraw draw_augmentation(const AugmentationConfig& config, Rng& rng) {
    AugmentDraw draw;
    if (!config.enabled) return draw;
    if (config.as_bundle) {
        const bool fire = rng.bernoulli(config.probability);
        draw.apply_affine = fire;
        draw.apply_flip = fire;
    } else {
        draw.apply_affine = rng.bernoulli(config.probability);
        draw.apply_flip = rng.bernoulli(config.probability);
    }
    if (draw.apply_affine) {
        draw.affine.rotate_deg = rng.uniform(-config.max_rotate_deg, config.max_rotate_deg);
        draw.affine.translate_x = rng.uniform(-config.max_translate, config.max_translate);
        draw.affine.translate_y = rng.uniform(-config.max_translate, config.max_translate);
        draw.affine.scale = rng.uniform(config.scale_min, config.scale_max);
    }
    return draw;
}

void apply_augmentation(const AugmentDraw& draw, ImageF& image, ImageF& label, bool hard_label) {
    if (!image.same_shape(label)) throw ShapeError("augment: image/label shape mismatch");
    if (draw.apply_affine) {
        image = warp_affine(image, draw.affine, 0.0f);
        label = hard_label ? warp_affine_nearest(label, draw.affine, 0.0f)
                           : warp_affine(label, draw.affine, 0.0f);
    }
    if (draw.apply_flip) {
        image = flip_horizontal(image);
        label = flip_horizontal(label);
    }
}

void augment(ImageF& image, ImageF& label, bool hard_label, const AugmentationConfig& config,
             Rng& rng) {
    apply_augmentation(draw_augmentation(config, rng), image, label, hard_label);
}

// ---------------------------------------------------------------------------
// Folds
// ---------------------------------------------------------------------------

std::vector<std::string> FoldSplit::train_patients(int fold) const {
    std::vector<std::string> out;
    for (int i = 0; i < k(); ++i) {
        if (i == fold) continue;
        out.insert(out.end(), fold_patients[static_cast<size_t>(i)].begin(),
                   fold_patients[static_cast<size_t>(i)].end());
    }
    return out;
}

FoldSplit kfold_split(std::vector<std::string> patients, int k, uint64_t seed) {
    if (k < 2) throw ValidationError("kfold_split: k must be >= 2");
    if (static_cast<int>(patients.size()) < k)
        throw ValidationError("kfold_split: fewer patients (" + std::to_string(patients.size()) +
                              ") than folds (" + std::to_string(k) + ")");
    std::sort(patients.begin(), patients.end());
    Rng rng(seed);
    rng.shuffle(patients);
    FoldSplit split;
    split.fold_patients.resize(static_cast<size_t>(k));
    for (size_t i = 0; i < patients.size(); ++i)
        split.fold_patients[i % static_cast<size_t>(k)].push_back(patients[i]);
    for (auto& fold : split.fold_patients) std::sort(fold.begin(), fold.end());
    return split;
}

// ---------------------------------------------------------------------------
// Shared training plumbing
// ---------------------------------------------------------------------------

namespace {

std::vector<size_t> frames_of(const std::vector<FrameRecord>& frames,
                              const std::vector<std::string>& patients) {
    const std::set<std::string> wanted(patients.begin(), patients.end());
    std::vector<size_t> out;
    for (size_t i = 0; i < frames.size(); ++i)
        if (wanted.count(frames[i].patient_id)) out.push_back(i);
    return out;
}

Tensor image_to_tensor(const ImageF& img) {
    Tensor t({1, 1, img.height, img.width});
    std::copy(img.v.begin(), img.v.end(), t.data());
    return t;
}

double lr_at(double initial, double gamma, int epoch) {
    return initial * std::pow(gamma, epoch);
}

}  // namespace

void write_history_csv(const std::filesystem::path& path, const std::vector<HistoryRow>& rows,
                       const std::string& metric_name) {
    CsvWriter csv({"epoch", "lr", "train_loss", metric_name});
    char buf[64];
    auto fmt = [&buf](double v) {
        std::snprintf(buf, sizeof(buf), "%.9g", v);
        return std::string(buf);
    };
    for (const auto& r : rows)
        csv.add_row({std::to_string(r.epoch), fmt(r.lr), fmt(r.train_loss), fmt(r.val_metric)});
    csv.save(path);
}

// ---------------------------------------------------------------------------
// Segmenter training
// ---------------------------------------------------------------------------

SegTrainResult train_segmenter(const std::vector<FrameRecord>& frames,
                               const std::vector<std::string>& train_patients,
                               const std::vector<std::string>& val_patients,
                               const SegNetSpec& spec, const TrainConfig& config,
                               const AugmentationConfig& aug) {
    config.validate();
    spec.validate();
    const std::vector<size_t> train_idx = frames_of(frames, train_patients);
    const std::vector<size_t> val_idx = frames_of(frames, val_patients);
    if (train_idx.empty()) throw ValidationError("train_segmenter: no training frames");

    const int h = frames[train_idx[0]].image.height;
    const int w = frames[train_idx[0]].image.width;
    SegNet probe(spec);
    probe.check_input_shape(h, w);

    SegTrainResult result;
    result.model = build_segmenter(spec, config.seed);
    result.model.set_training(true);
    nn::Adam optimizer(result.model.trainable_params());

    Rng master(config.seed);
    Rng shuffle_rng = master.fork(1);
    Rng sampling_rng = master.fork(2);
    Rng augment_rng = master.fork(3);

    // Rater masks of the training frames, in train_idx order.
    std::vector<std::vector<Mask>> train_masks;
    train_masks.reserve(train_idx.size());
    for (size_t i : train_idx) {
        const auto& rm = frames[i].rater_masks;
        train_masks.push_back({rm[0], rm[1], rm[2]});
    }

    // Consensus validation targets are fixed across epochs.
    std::vector<Mask> val_consensus;
    val_consensus.reserve(val_idx.size());
    for (size_t i : val_idx) {
        const auto& rm = frames[i].rater_masks;
        const Mask masks[3] = {rm[0], rm[1], rm[2]};
        val_consensus.push_back(sample_vote(masks));
    }

    std::vector<SampledLabel> frozen_labels;
    if (config.freeze_sampling)
        frozen_labels = sample_labels(train_masks, config.label_strategy, sampling_rng);

    std::vector<Tensor> best_params;
    const size_t pixels = static_cast<size_t>(h) * w;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const double lr = lr_at(config.seg_initial_lr, config.lr_gamma, epoch);

        const std::vector<SampledLabel>& labels =
            config.freeze_sampling
                ? frozen_labels
                : (frozen_labels = sample_labels(train_masks, config.label_strategy, sampling_rng),
                   frozen_labels);

        std::vector<size_t> order(train_idx.size());
        std::iota(order.begin(), order.end(), 0);
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        size_t n_batches = 0;

        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(config.batch_size)) {
            const size_t end = std::min(order.size(), start + static_cast<size_t>(config.batch_size));
            const int n = static_cast<int>(end - start);

            Tensor input({n, 1, h, w});
            Tensor target({n, 1, h, w});
            std::vector<bool> hard_flags(static_cast<size_t>(n));
            for (int b = 0; b < n; ++b) {
                const size_t local = order[start + static_cast<size_t>(b)];
                ImageF img = frames[train_idx[local]].image;
                ImageF lab = labels[local].values;
                augment(img, lab, labels[local].hard, aug, augment_rng);
                img = normalize_for_segmenter(img);
                std::copy(img.v.begin(), img.v.end(),
                          input.data() + static_cast<size_t>(b) * pixels);
                std::copy(lab.v.begin(), lab.v.end(),
                          target.data() + static_cast<size_t>(b) * pixels);
                hard_flags[static_cast<size_t>(b)] = labels[local].hard;
            }

            Tensor prob = result.model.forward(input);

            // Per-sample loss and gradient, averaged over the batch.
            Tensor dprob({n, 1, h, w});
            double batch_loss = 0.0;
            for (int b = 0; b < n; ++b) {
                std::span<const float> p(prob.data() + static_cast<size_t>(b) * pixels, pixels);
                std::span<const float> t(target.data() + static_cast<size_t>(b) * pixels, pixels);
                std::span<float> g(dprob.data() + static_cast<size_t>(b) * pixels, pixels);
                if (config.loss == "dice") {
                    batch_loss += dice_loss(p, t);
                    dice_loss_grad(p, t, g);
                } else if (config.loss == "dice_bce") {
                    batch_loss += dice_bce(p, t, config.bce_reduction);
                    dice_bce_grad(p, t, g, config.bce_reduction);
                } else {
                    ClassWeights cw = class_weights(t);
                    if (config.swap_wbce_weights) cw = cw.swapped();
                    batch_loss += w_bce(p, t, cw, config.bce_reduction);
                    w_bce_grad(p, t, cw, g, config.bce_reduction);
                }
            }
            batch_loss /= n;
            const float scale = 1.0f / static_cast<float>(n);
            for (size_t i = 0; i < dprob.numel(); ++i) dprob[i] *= scale;

            if (!std::isfinite(batch_loss))
                throw std::runtime_error("train_segmenter: non-finite loss at epoch " +
                                         std::to_string(epoch) + " (diverged)");

            result.model.backward(dprob);
            optimizer.step(lr);
            optimizer.zero_grad();
            loss_sum += batch_loss;
            ++n_batches;
        }

        // Validation Dice against the vote consensus (both-empty counts as 1).
        double val_dice = 0.0;
        if (!val_idx.empty()) {
            result.model.set_training(false);
            for (size_t v = 0; v < val_idx.size(); ++v) {
                const ImageF prob = segmenter_predict(result.model, frames[val_idx[v]].image);
                Mask pred(prob.height, prob.width);
                for (size_t i = 0; i < prob.v.size(); ++i) pred.v[i] = prob.v[i] >= 0.5f ? 1 : 0;
                val_dice += mask_dice(pred, val_consensus[v]);
            }
            val_dice /= static_cast<double>(val_idx.size());
            result.model.set_training(true);
        }

        result.history.push_back(
            {epoch, lr, loss_sum / static_cast<double>(std::max<size_t>(1, n_batches)), val_dice});

        if (result.best_epoch < 0 || val_dice > result.best_val_dice) {
            result.best_epoch = epoch;
            result.best_val_dice = val_dice;
            best_params.clear();
            for (const auto& ref : result.model.named_tensors()) best_params.push_back(*ref.value);
        }
    }

    // Restore the best-validation checkpoint.
    auto refs = result.model.named_tensors();
    for (size_t i = 0; i < refs.size(); ++i) *refs[i].value = best_params[i];
    result.model.set_training(false);
    return result;
}

// ---------------------------------------------------------------------------
// Classifier training
// ---------------------------------------------------------------------------

ClfTrainResult train_classifier(const std::vector<FrameRecord>& frames,
                                const std::vector<std::string>& train_patients,
                                const std::vector<std::string>& val_patients,
                                const ClassifierSpec& spec, const TrainConfig& config) {
    config.validate();
    spec.validate();
    const std::vector<size_t> train_idx = frames_of(frames, train_patients);
    const std::vector<size_t> val_idx = frames_of(frames, val_patients);
    if (train_idx.empty()) throw ValidationError("train_classifier: no training frames");

    ClfTrainResult result;
    result.model = build_classifier(spec, config.seed);
    result.model.set_training(true);
    nn::Adam optimizer(result.model.trainable_params());

    Rng master(config.seed);
    Rng shuffle_rng = master.fork(11);

    const int s = spec.input_size;
    const size_t pixels = static_cast<size_t>(s) * s;

    // Inputs are fixed across epochs (no augmentation on the classifier
    // path); precompute the normalized tensors and consensus targets.
    auto prepare = [&](const std::vector<size_t>& idx, std::vector<ImageF>& inputs,
                       std::vector<float>& targets) {
        inputs.reserve(idx.size());
        targets.reserve(idx.size());
        for (size_t i : idx) {
            inputs.push_back(normalize_for_classifier(frames[i].image, spec));
            const auto& rm = frames[i].rater_masks;
            const Mask masks[3] = {rm[0], rm[1], rm[2]};
            targets.push_back(
                frame_consensus_positive(masks, config.min_consensus_pixels) ? 1.0f : 0.0f);
        }
    };
    std::vector<ImageF> train_inputs, val_inputs;
    std::vector<float> train_targets, val_targets;
    prepare(train_idx, train_inputs, train_targets);
    prepare(val_idx, val_inputs, val_targets);

    std::vector<Tensor> best_params;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const double lr = lr_at(config.clf_initial_lr, config.lr_gamma, epoch);

        std::vector<size_t> order(train_idx.size());
        std::iota(order.begin(), order.end(), 0);
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        size_t n_batches = 0;

        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(config.batch_size)) {
            const size_t end = std::min(order.size(), start + static_cast<size_t>(config.batch_size));
            const int n = static_cast<int>(end - start);

            Tensor input({n, 1, s, s});
            std::vector<float> targets(static_cast<size_t>(n));
            for (int b = 0; b < n; ++b) {
                const size_t local = order[start + static_cast<size_t>(b)];
                std::copy(train_inputs[local].v.begin(), train_inputs[local].v.end(),
                          input.data() + static_cast<size_t>(b) * pixels);
                targets[static_cast<size_t>(b)] = train_targets[local];
            }

            Tensor logits = result.model.forward(input);  // [n, 1]
            Tensor dlogit({n, 1});
            double batch_loss = 0.0;
            for (int b = 0; b < n; ++b) {
                const double logit = logits[static_cast<size_t>(b)];
                const double p = 1.0 / (1.0 + std::exp(-logit));
                const double t = targets[static_cast<size_t>(b)];
                batch_loss += bce_scalar(p, t);
                // d(bce)/dlogit = p - t, averaged over the batch
                dlogit[static_cast<size_t>(b)] = static_cast<float>((p - t) / n);
            }
            batch_loss /= n;

            if (!std::isfinite(batch_loss))
                throw std::runtime_error("train_classifier: non-finite loss at epoch " +
                                         std::to_string(epoch) + " (diverged)");

            result.model.backward(dlogit);
            optimizer.step(lr);
            optimizer.zero_grad();
            loss_sum += batch_loss;
            ++n_batches;
        }

        // Validation accuracy at logit threshold 0.
        double val_acc = 0.0;
        if (!val_idx.empty()) {
            result.model.set_training(false);
            size_t correct = 0;
            for (size_t v = 0; v < val_idx.size(); ++v) {
                Tensor in({1, 1, s, s});
                std::copy(val_inputs[v].v.begin(), val_inputs[v].v.end(), in.data());
                const Tensor logit = result.model.forward(in);
                const bool pred = logit[0] > 0.0f;
                if (pred == (val_targets[v] > 0.5f)) ++correct;
            }
            val_acc = static_cast<double>(correct) / static_cast<double>(val_idx.size());
            result.model.set_training(true);
        }

        result.history.push_back(
            {epoch, lr, loss_sum / static_cast<double>(std::max<size_t>(1, n_batches)), val_acc});

        if (result.best_epoch < 0 || val_acc > result.best_val_acc) {
            result.best_epoch = epoch;
            result.best_val_acc = val_acc;
            best_params.clear();
            for (const auto& ref : result.model.named_tensors()) best_params.push_back(*ref.value);
        }
    }

    auto refs = result.model.named_tensors();
    for (size_t i = 0; i < refs.size(); ++i) *refs[i].value = best_params[i];
    result.model.set_training(false);
    return result;
}

// ---------------------------------------------------------------------------
// Inference helpers + ensemble
// ---------------------------------------------------------------------------

ImageF segmenter_predict(SegNet& model, const ImageF& frame) {
    const bool was_training = model.training();
    model.set_training(false);  // inference uses running BN stats, no caches
    const ImageF norm = normalize_for_segmenter(frame);
    const Tensor prob = model.forward(image_to_tensor(norm));
    if (was_training) model.set_training(true);
    ImageF out(frame.height, frame.width);
    std::copy(prob.data(), prob.data() + prob.numel(), out.v.begin());
    return out;
}

double classifier_logit(FrameClassifier& model, const ImageF& frame) {
    const bool was_training = model.training();
    model.set_training(false);
    const ImageF norm = normalize_for_classifier(frame, model.spec());
    Tensor in({1, 1, norm.height, norm.width});
    std::copy(norm.v.begin(), norm.v.end(), in.data());
    const Tensor logit = model.forward(in);
    if (was_training) model.set_training(true);
    return logit[0];
}

void EnsembleModel::validate() const {
    if (members.empty()) throw ValidationError("ensemble: no members");
    const auto& s0 = members[0].spec();
    for (const auto& m : members) {
        const auto& s = m.spec();
        if (s.depth != s0.depth || s.base_channels != s0.base_channels ||
            s.transposed_upsample != s0.transposed_upsample ||
            s.preactivation != s0.preactivation)
            throw ValidationError("ensemble: member spec mismatch");
    }
}

EnsemblePrediction ensemble_predict(EnsembleModel& ensemble, const ImageF& frame) {
    ensemble.validate();
    EnsemblePrediction out;
    out.prob = ImageF(frame.height, frame.width, 0.0f);
    for (auto& member : ensemble.members) {
        member.set_training(false);
        const ImageF p = segmenter_predict(member, frame);
        for (size_t i = 0; i < p.v.size(); ++i) out.prob.v[i] += p.v[i];
    }
    const float inv = 1.0f / static_cast<float>(ensemble.members.size());
    out.mask = Mask(frame.height, frame.width);
    for (size_t i = 0; i < out.prob.v.size(); ++i) {
        out.prob.v[i] *= inv;
        out.mask.v[i] = out.prob.v[i] >= 0.5f ? 1 : 0;
    }
    return out;
}

}  // namespace screenseg
