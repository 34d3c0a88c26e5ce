#include "screenseg/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "screenseg/error.hpp"

namespace screenseg {

namespace {

void check_masks(std::span<const Mask> masks) {
    if (masks.size() < 3) throw ShapeError("sampling: expected at least 3 rater masks");
    for (size_t r = 1; r < masks.size(); ++r) {
        if (!masks[r].same_shape(masks[0]))
            throw ShapeError("sampling: rater mask " + std::to_string(r + 1) +
                             " shape differs from rater 1");
    }
}

}  // namespace

LabelStrategy LabelStrategy::parse(const std::string& text) {
    LabelStrategy s;
    if (text == "vote") {
        s.kind = StrategyKind::kVote;
    } else if (text == "random") {
        s.kind = StrategyKind::kRandom;
    } else if (text == "mean") {
        s.kind = StrategyKind::kMean;
    } else if (text.rfind("combine:", 0) == 0) {
        s.kind = StrategyKind::kCombination;
        const std::string frac = text.substr(8);
        try {
            size_t used = 0;
            s.vote_fraction = std::stod(frac, &used);
            if (used != frac.size()) throw std::invalid_argument(frac);
        } catch (const std::exception&) {
            throw ValidationError("label strategy: cannot parse fraction in '" + text + "'");
        }
        if (s.vote_fraction < 0.0 || s.vote_fraction > 1.0)
            throw ValidationError("label strategy: vote fraction " + frac + " outside [0,1]");
    } else {
        throw ValidationError("unknown label strategy '" + text +
                              "' (expected vote | random | mean | combine:<fraction>)");
    }
    return s;
}

std::string LabelStrategy::to_string() const {
    switch (kind) {
        case StrategyKind::kVote: return "vote";
        case StrategyKind::kRandom: return "random";
        case StrategyKind::kMean: return "mean";
        case StrategyKind::kCombination: {
            std::string f = std::to_string(vote_fraction);
            f.erase(f.find_last_not_of('0') + 1);
            if (!f.empty() && f.back() == '.') f.pop_back();
            return "combine:" + f;
        }
    }
    return "vote";
}

Mask sample_vote(std::span<const Mask> masks) {
    check_masks(masks);
    const size_t n = masks[0].numel();
    const size_t quorum = (masks.size() + 2) / 2;  // ceil((R+1)/2)
    Mask out(masks[0].height, masks[0].width);
    for (size_t i = 0; i < n; ++i) {
        size_t votes = 0;
        for (const auto& m : masks) votes += m.v[i];
        out.v[i] = votes >= quorum ? 1 : 0;
    }
    return out;
}

SampledLabel sample_vote_label(std::span<const Mask> masks) {
    const Mask m = sample_vote(masks);
    SampledLabel label;
    label.hard = true;
    label.values = ImageF(m.height, m.width);
    for (size_t i = 0; i < m.v.size(); ++i) label.values.v[i] = m.v[i] ? 1.0f : 0.0f;
    return label;
}

size_t sample_random_index(size_t n_raters, Rng& rng) {
    return static_cast<size_t>(rng.below(n_raters));
}

SampledLabel sample_random(std::span<const Mask> masks, Rng& rng) {
    check_masks(masks);
    const Mask& m = masks[sample_random_index(masks.size(), rng)];
    SampledLabel label;
    label.hard = true;
    label.values = ImageF(m.height, m.width);
    for (size_t i = 0; i < m.v.size(); ++i) label.values.v[i] = m.v[i] ? 1.0f : 0.0f;
    return label;
}

SampledLabel sample_mean(std::span<const Mask> masks) {
    check_masks(masks);
    SampledLabel label;
    label.hard = false;
    label.values = ImageF(masks[0].height, masks[0].width);
    const float inv = 1.0f / static_cast<float>(masks.size());
    for (size_t i = 0; i < label.values.v.size(); ++i) {
        unsigned votes = 0;
        for (const auto& m : masks) votes += m.v[i];
        label.values.v[i] = static_cast<float>(votes) * inv;
    }
    return label;
}

std::vector<uint8_t> combination_assignment(size_t n_frames, double vote_fraction, Rng& rng) {
    if (n_frames == 0) throw ValidationError("combination_assignment: empty frame collection");
    if (vote_fraction < 0.0 || vote_fraction > 1.0)
        throw ValidationError("combination_assignment: vote_fraction outside [0,1]");
    const size_t n_vote = static_cast<size_t>(std::floor(vote_fraction * static_cast<double>(n_frames)));
    std::vector<size_t> order(n_frames);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    std::vector<uint8_t> use_vote(n_frames, 0);
    for (size_t i = 0; i < n_vote; ++i) use_vote[order[i]] = 1;
    return use_vote;
}

std::vector<SampledLabel> sample_labels(const std::vector<std::vector<Mask>>& frames,
                                        const LabelStrategy& strategy, Rng& rng) {
    if (frames.empty()) throw ValidationError("sample_labels: empty frame collection");
    std::vector<SampledLabel> labels;
    labels.reserve(frames.size());
    switch (strategy.kind) {
        case StrategyKind::kVote:
            for (const auto& masks : frames) labels.push_back(sample_vote_label(masks));
            break;
        case StrategyKind::kRandom:
            for (const auto& masks : frames) labels.push_back(sample_random(masks, rng));
            break;
        case StrategyKind::kMean:
            for (const auto& masks : frames) labels.push_back(sample_mean(masks));
            break;
        case StrategyKind::kCombination: {
            const auto use_vote =
                combination_assignment(frames.size(), strategy.vote_fraction, rng);
            for (size_t i = 0; i < frames.size(); ++i)
                labels.push_back(use_vote[i] ? sample_vote_label(frames[i])
                                             : sample_random(frames[i], rng));
            break;
        }
    }
    return labels;
}

bool frame_consensus_positive(std::span<const Mask> masks, int min_consensus_pixels) {
    const Mask vote = sample_vote(masks);
    return vote.count() >= static_cast<size_t>(std::max(1, min_consensus_pixels));
}

}  // namespace screenseg
