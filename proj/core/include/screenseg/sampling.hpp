#pragma once

#include <span>
#include <string>
#include <vector>

#include "screenseg/image.hpp"
#include "screenseg/rng.hpp"

namespace screenseg {

// How the three rater masks of a frame are turned into one training target.
// `combination` gives a per-epoch mix: a fraction of frames is supervised by
// the majority vote, the remainder by a single randomly drawn rater.
enum class StrategyKind { kVote, kRandom, kMean, kCombination };

struct LabelStrategy {
    StrategyKind kind = StrategyKind::kVote;
    double vote_fraction = 0.0;  // used only by kCombination

    // Parses "vote | random | mean | combine:<fraction>".
    static LabelStrategy parse(const std::string& text);
    std::string to_string() const;
};

// One training target: hard targets hold {0,1}, soft targets (mean sampling)
// hold multiples of 1/3 for three raters.
struct SampledLabel {
    ImageF values;
    bool hard = true;
};

// --------------------------------------------------------------------------
// Per-frame sampling ops. All take R >= 3 equal-shaped binary masks; the
// shipped experiments use exactly 3 raters but the vote rule generalizes to
// ">= ceil((R+1)/2) votes".
// --------------------------------------------------------------------------

// Pixel-level majority vote.
Mask sample_vote(std::span<const Mask> masks);
SampledLabel sample_vote_label(std::span<const Mask> masks);

// One rater's mask drawn uniformly; the draw comes from the caller's rng.
SampledLabel sample_random(std::span<const Mask> masks, Rng& rng);
size_t sample_random_index(size_t n_raters, Rng& rng);

// Non-rounded arithmetic mean, treated downstream as a probability map.
SampledLabel sample_mean(std::span<const Mask> masks);

// Per-epoch assignment for the combination strategy: exactly
// floor(vote_fraction * n) frames (uniformly chosen) get the vote label, the
// rest get a random single-rater label. Returns one flag per frame.
std::vector<uint8_t> combination_assignment(size_t n_frames, double vote_fraction, Rng& rng);

// Materializes labels for a frame collection under the given strategy.
// For kRandom and kCombination the result depends on the rng state; vote and
// mean are deterministic.
std::vector<SampledLabel> sample_labels(const std::vector<std::vector<Mask>>& frames,
                                        const LabelStrategy& strategy, Rng& rng);

// Frame-level consensus: true iff the majority-vote mask has at least
// `min_consensus_pixels` positive pixels. This is the classifier's training
// target and the frame-level ground truth for FPR/FNR.
bool frame_consensus_positive(std::span<const Mask> masks, int min_consensus_pixels = 1);

}  // namespace screenseg
