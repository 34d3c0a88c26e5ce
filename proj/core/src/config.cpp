#include "screenseg/config.hpp"

#include <nlohmann/json.hpp>

#include <cstdlib>
#include <set>

#include "screenseg/error.hpp"
#include "screenseg/util.hpp"

namespace screenseg {

using nlohmann::json;

namespace {

void reject_unknown_keys(const json& j, const std::set<std::string>& known,
                         const std::string& where) {
    if (!j.is_object()) throw ValidationError("config: " + where + " must be an object");
    for (const auto& [key, value] : j.items()) {
        if (!known.count(key))
            throw ValidationError("config: unknown key '" + where + key + "'");
    }
}

Reduction reduction_from_string(const std::string& s) {
    if (s == "mean") return Reduction::kMean;
    if (s == "sum") return Reduction::kSum;
    throw ValidationError("config: loss.reduction must be mean | sum");
}

std::string reduction_to_string(Reduction r) {
    return r == Reduction::kMean ? "mean" : "sum";
}

}  // namespace

TrainConfig RunConfig::train_for(uint64_t fold_seed) const {
    TrainConfig cfg = train;
    cfg.loss = loss;
    cfg.bce_reduction = bce_reduction;
    cfg.swap_wbce_weights = swap_wbce_weights;
    cfg.label_strategy = strategy;
    cfg.freeze_sampling = freeze_sampling;
    cfg.min_consensus_pixels = min_consensus_pixels;
    cfg.seed = fold_seed;
    return cfg;
}

RunConfig parse_run_config(const std::string& json_text) {
    const json j = json::parse(json_text);
    reject_unknown_keys(j, {"seed", "jobs", "deterministic", "folds", "phantom", "sampling",
                            "loss", "train", "augment", "segmenter", "classifier", "eval",
                            "paths"},
                        "");
    RunConfig c;
    c.seed = j.value("seed", c.seed);
    c.jobs = j.value("jobs", c.jobs);
    c.deterministic = j.value("deterministic", c.deterministic);
    c.folds = j.value("folds", c.folds);
    if (c.jobs < 1) throw ValidationError("config: jobs must be >= 1");
    if (c.folds < 2) throw ValidationError("config: folds must be >= 2");

    if (j.contains("phantom")) {
        const json& p = j.at("phantom");
        reject_unknown_keys(p, {"image_height", "image_width", "n_patients", "frames_per_patient",
                                "negative_frame_fraction", "gland_axis_range", "speckle_strength",
                                "rater_boundary_jitter", "rater_miss_probability", "seed"},
                            "phantom.");
        json merged = json::parse(phantom_config_to_json(c.phantom));
        merged.merge_patch(p);
        if (!p.contains("seed")) merged["seed"] = c.seed;  // inherit the top-level seed
        c.phantom = phantom_config_from_json(merged.dump());
    } else {
        c.phantom.seed = c.seed;
    }

    if (j.contains("sampling")) {
        const json& s = j.at("sampling");
        reject_unknown_keys(s, {"strategy", "freeze_sampling", "min_consensus_pixels"},
                            "sampling.");
        c.strategy = LabelStrategy::parse(s.value("strategy", "vote"));
        c.freeze_sampling = s.value("freeze_sampling", c.freeze_sampling);
        c.min_consensus_pixels = s.value("min_consensus_pixels", c.min_consensus_pixels);
        if (c.min_consensus_pixels < 1)
            throw ValidationError("config: sampling.min_consensus_pixels must be >= 1");
    }

    if (j.contains("loss")) {
        const json& l = j.at("loss");
        reject_unknown_keys(l, {"name", "reduction", "swap_wbce_weights"}, "loss.");
        c.loss = l.value("name", c.loss);
        c.bce_reduction = reduction_from_string(l.value("reduction", "mean"));
        c.swap_wbce_weights = l.value("swap_wbce_weights", c.swap_wbce_weights);
        if (c.loss != "dice" && c.loss != "dice_bce" && c.loss != "w_bce")
            throw ValidationError("config: loss.name must be dice | dice_bce | w_bce");
    }

    if (j.contains("train")) {
        const json& t = j.at("train");
        reject_unknown_keys(t, {"batch_size", "epochs", "seg_initial_lr", "clf_initial_lr",
                                "lr_gamma"},
                            "train.");
        c.train.batch_size = t.value("batch_size", c.train.batch_size);
        c.train.epochs = t.value("epochs", c.train.epochs);
        c.train.seg_initial_lr = t.value("seg_initial_lr", c.train.seg_initial_lr);
        c.train.clf_initial_lr = t.value("clf_initial_lr", c.train.clf_initial_lr);
        c.train.lr_gamma = t.value("lr_gamma", c.train.lr_gamma);
    }
    c.train.loss = c.loss;
    c.train.label_strategy = c.strategy;
    c.train.validate();

    if (j.contains("augment")) {
        const json& a = j.at("augment");
        reject_unknown_keys(a, {"enabled", "probability", "max_rotate_deg", "max_translate",
                                "scale_min", "scale_max", "as_bundle"},
                            "augment.");
        c.augment.enabled = a.value("enabled", c.augment.enabled);
        c.augment.probability = a.value("probability", c.augment.probability);
        c.augment.max_rotate_deg = a.value("max_rotate_deg", c.augment.max_rotate_deg);
        c.augment.max_translate = a.value("max_translate", c.augment.max_translate);
        c.augment.scale_min = a.value("scale_min", c.augment.scale_min);
        c.augment.scale_max = a.value("scale_max", c.augment.scale_max);
        c.augment.as_bundle = a.value("as_bundle", c.augment.as_bundle);
        if (c.augment.probability < 0.0 || c.augment.probability > 1.0)
            throw ValidationError("config: augment.probability must be in [0,1]");
        if (c.augment.scale_min > c.augment.scale_max || c.augment.scale_min <= 0.0)
            throw ValidationError("config: augment scale range invalid");
    }

    if (j.contains("segmenter")) {
        const json& s = j.at("segmenter");
        reject_unknown_keys(
            s, {"depth", "base_channels", "transposed_upsample", "preactivation"}, "segmenter.");
        c.segmenter = segnet_spec_from_json(s.dump());
    }

    c.classifier = ClassifierSpec::desk();
    if (j.contains("classifier")) {
        const json& cl = j.at("classifier");
        reject_unknown_keys(cl, {"preset", "stem_channels", "stage_blocks", "stage_width",
                                 "stage_out", "cardinality", "input_size", "norm_mean",
                                 "norm_std"},
                            "classifier.");
        c.classifier_preset = cl.value("preset", c.classifier_preset);
        json merged = json::parse(classifier_spec_to_json(ClassifierSpec::preset(c.classifier_preset)));
        json overrides = cl;
        overrides.erase("preset");
        merged.merge_patch(overrides);
        c.classifier = classifier_spec_from_json(merged.dump());
    }

    if (j.contains("eval")) {
        const json& e = j.at("eval");
        reject_unknown_keys(e, {"thresholds", "ground_truth", "min_area_pixels"}, "eval.");
        if (e.contains("thresholds")) {
            c.thresholds = e.at("thresholds").get<std::vector<double>>();
            if (c.thresholds.empty())
                throw ValidationError("config: eval.thresholds must not be empty");
        }
        c.ground_truth = ground_truth_rule_from_string(e.value("ground_truth", "consensus"));
        c.min_area_pixels = e.value("min_area_pixels", c.min_area_pixels);
        if (c.min_area_pixels < 0)
            throw ValidationError("config: eval.min_area_pixels must be >= 0");
    }

    if (j.contains("paths")) {
        const json& p = j.at("paths");
        reject_unknown_keys(p, {"dataset", "checkpoints"}, "paths.");
        if (p.contains("dataset")) c.dataset_dir = p.at("dataset").get<std::string>();
        if (p.contains("checkpoints")) c.checkpoints_dir = p.at("checkpoints").get<std::string>();
    }
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    return parse_run_config(read_text_file(path));
}

std::string run_config_to_json(const RunConfig& c) {
    json j;
    j["seed"] = c.seed;
    j["jobs"] = c.jobs;
    j["deterministic"] = c.deterministic;
    j["folds"] = c.folds;
    j["phantom"] = json::parse(phantom_config_to_json(c.phantom));
    j["sampling"] = {{"strategy", c.strategy.to_string()},
                     {"freeze_sampling", c.freeze_sampling},
                     {"min_consensus_pixels", c.min_consensus_pixels}};
    j["loss"] = {{"name", c.loss},
                 {"reduction", reduction_to_string(c.bce_reduction)},
                 {"swap_wbce_weights", c.swap_wbce_weights}};
    j["train"] = {{"batch_size", c.train.batch_size},
                  {"epochs", c.train.epochs},
                  {"seg_initial_lr", c.train.seg_initial_lr},
                  {"clf_initial_lr", c.train.clf_initial_lr},
                  {"lr_gamma", c.train.lr_gamma}};
    j["augment"] = {{"enabled", c.augment.enabled},
                    {"probability", c.augment.probability},
                    {"max_rotate_deg", c.augment.max_rotate_deg},
                    {"max_translate", c.augment.max_translate},
                    {"scale_min", c.augment.scale_min},
                    {"scale_max", c.augment.scale_max},
                    {"as_bundle", c.augment.as_bundle}};
    j["segmenter"] = json::parse(segnet_spec_to_json(c.segmenter));
    j["classifier"] = json::parse(classifier_spec_to_json(c.classifier));
    j["classifier"]["preset"] = c.classifier_preset;
    j["eval"] = {{"thresholds", c.thresholds},
                 {"ground_truth", to_string(c.ground_truth)},
                 {"min_area_pixels", c.min_area_pixels}};
    j["paths"] = {{"dataset", c.dataset_dir.generic_string()},
                  {"checkpoints", c.checkpoints_dir.generic_string()}};
    return j.dump(2);
}

void resolve_paths(RunConfig& config, const std::filesystem::path& out_dir) {
    if (config.dataset_dir.empty()) config.dataset_dir = out_dir / "dataset";
    if (config.checkpoints_dir.empty()) {
        if (const char* cache = std::getenv("SCREENSEG_CACHE"); cache && *cache) {
            config.checkpoints_dir = std::filesystem::path(cache);
        } else {
            config.checkpoints_dir = out_dir / "checkpoints";
        }
    }
}

}  // namespace screenseg
