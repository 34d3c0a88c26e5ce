#include "screenseg/synthdata.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "screenseg/csv.hpp"
#include "screenseg/error.hpp"
#include "screenseg/png_io.hpp"
#include "screenseg/util.hpp"

namespace screenseg {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

void PhantomConfig::validate() const {
    auto fail = [](const std::string& field, const std::string& why) {
        throw ValidationError("phantom config: " + field + " " + why);
    };
    if (image_height < 32) fail("image_height", "must be >= 32");
    if (image_width < 32) fail("image_width", "must be >= 32");
    if (n_patients < 1) fail("n_patients", "must be >= 1");
    if (frames_per_patient < 1) fail("frames_per_patient", "must be >= 1");
    if (negative_frame_fraction < 0.0 || negative_frame_fraction > 1.0)
        fail("negative_frame_fraction", "must be in [0,1]");
    if (gland_axis_min <= 0.0 || gland_axis_max < gland_axis_min)
        fail("gland_axis_range", "must satisfy 0 < min <= max");
    if (speckle_strength < 0.0) fail("speckle_strength", "must be >= 0");
    if (rater_boundary_jitter < 0.0) fail("rater_boundary_jitter", "must be >= 0");
    if (rater_miss_probability < 0.0 || rater_miss_probability > 1.0)
        fail("rater_miss_probability", "must be in [0,1]");
}

std::string phantom_config_to_json(const PhantomConfig& c) {
    json j;
    j["image_height"] = c.image_height;
    j["image_width"] = c.image_width;
    j["n_patients"] = c.n_patients;
    j["frames_per_patient"] = c.frames_per_patient;
    j["negative_frame_fraction"] = c.negative_frame_fraction;
    j["gland_axis_range"] = {c.gland_axis_min, c.gland_axis_max};
    j["speckle_strength"] = c.speckle_strength;
    j["rater_boundary_jitter"] = c.rater_boundary_jitter;
    j["rater_miss_probability"] = c.rater_miss_probability;
    j["seed"] = c.seed;
    return j.dump(2);
}

PhantomConfig phantom_config_from_json(const std::string& json_text) {
    const json j = json::parse(json_text);
    PhantomConfig c;
    c.image_height = j.value("image_height", c.image_height);
    c.image_width = j.value("image_width", c.image_width);
    c.n_patients = j.value("n_patients", c.n_patients);
    c.frames_per_patient = j.value("frames_per_patient", c.frames_per_patient);
    c.negative_frame_fraction = j.value("negative_frame_fraction", c.negative_frame_fraction);
    if (j.contains("gland_axis_range")) {
        const auto& r = j.at("gland_axis_range");
        if (!r.is_array() || r.size() != 2)
            throw ValidationError("phantom config: gland_axis_range must be [min, max]");
        c.gland_axis_min = r[0].get<double>();
        c.gland_axis_max = r[1].get<double>();
    }
    c.speckle_strength = j.value("speckle_strength", c.speckle_strength);
    c.rater_boundary_jitter = j.value("rater_boundary_jitter", c.rater_boundary_jitter);
    c.rater_miss_probability = j.value("rater_miss_probability", c.rater_miss_probability);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Frame rendering
// ---------------------------------------------------------------------------

namespace {

Mask ellipse_mask(int h, int w, double cy, double cx, double a, double b, double phi) {
    Mask m(h, w);
    const double cph = std::cos(phi), sph = std::sin(phi);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double dy = y - cy, dx = x - cx;
            const double u = (dx * cph + dy * sph) / a;
            const double v = (-dx * sph + dy * cph) / b;
            if (u * u + v * v <= 1.0) m.at(y, x) = 1;
        }
    }
    return m;
}

// Multiplicative speckle: clean * (1 + strength * smoothed unit-variance
// noise), clipped to [0,1].
void apply_speckle(ImageF& img, double strength, Rng& rng) {
    if (strength <= 0.0) return;
    ImageF noise(img.height, img.width);
    for (auto& v : noise.v) v = static_cast<float>(rng.normal());
    noise = gaussian_blur(noise, 1.2);
    const double mu = mean(noise);
    const double sd = stddev(noise, mu);
    const double inv = sd > 1e-12 ? 1.0 / sd : 0.0;
    for (size_t i = 0; i < img.v.size(); ++i) {
        const double n = (noise.v[i] - mu) * inv;
        const double v = img.v[i] * (1.0 + strength * n);
        img.v[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
}

}  // namespace

PhantomFrame render_phantom_frame(const PhantomConfig& config, bool positive, Rng& rng) {
    const int h = config.image_height, w = config.image_width;
    PhantomFrame frame;
    frame.true_mask = Mask(h, w);

    // Background: dark tissue with a mild depth gradient.
    ImageF clean(h, w);
    for (int y = 0; y < h; ++y) {
        const float level = 0.26f + 0.08f * static_cast<float>(y) / static_cast<float>(h);
        for (int x = 0; x < w; ++x) clean.at(y, x) = level;
    }

    if (positive) {
        const double cy = h * (0.5 + rng.uniform(-0.12, 0.12));
        const double cx = w * (0.5 + rng.uniform(-0.12, 0.12));
        const double a = rng.uniform(config.gland_axis_min, config.gland_axis_max);
        const double b = rng.uniform(config.gland_axis_min, config.gland_axis_max);
        const double phi = rng.uniform(0.0, M_PI);
        frame.true_mask = ellipse_mask(h, w, cy, cx, a, b, phi);

        // Hypoechoic interior, hyperechoic rim.
        const Mask rim = boundary_ring(frame.true_mask, 2, 1);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                if (frame.true_mask.at(y, x)) clean.at(y, x) = 0.12f;
                if (rim.at(y, x)) clean.at(y, x) = 0.62f;
            }
    }

    clean = gaussian_blur(clean, 1.0);
    apply_speckle(clean, config.speckle_strength, rng);
    frame.image = std::move(clean);
    return frame;
}

// ---------------------------------------------------------------------------
// Rater simulation
// ---------------------------------------------------------------------------

namespace {

// Smooth dense displacement field from a coarse normal grid, amplitude in
// pixels, node spacing fixed at 16 px.
void elastic_field(int h, int w, double amplitude, Rng& rng, std::vector<float>& dy,
                   std::vector<float>& dx) {
    const int spacing = 16;
    const int gh = h / spacing + 2, gw = w / spacing + 2;
    std::vector<float> ny(static_cast<size_t>(gh) * gw), nx(static_cast<size_t>(gh) * gw);
    for (size_t i = 0; i < ny.size(); ++i) ny[i] = static_cast<float>(rng.normal(0.0, amplitude));
    for (size_t i = 0; i < nx.size(); ++i) nx[i] = static_cast<float>(rng.normal(0.0, amplitude));

    dy.resize(static_cast<size_t>(h) * w);
    dx.resize(static_cast<size_t>(h) * w);
    size_t i = 0;
    for (int y = 0; y < h; ++y) {
        const double gy = static_cast<double>(y) / spacing;
        const int g0 = static_cast<int>(gy);
        const double fy = gy - g0;
        for (int x = 0; x < w; ++x, ++i) {
            const double gx = static_cast<double>(x) / spacing;
            const int g1 = static_cast<int>(gx);
            const double fx = gx - g1;
            auto lerp = [&](const std::vector<float>& n) {
                const double top = n[static_cast<size_t>(g0) * gw + g1] * (1.0 - fx) +
                                   n[static_cast<size_t>(g0) * gw + g1 + 1] * fx;
                const double bot = n[static_cast<size_t>(g0 + 1) * gw + g1] * (1.0 - fx) +
                                   n[static_cast<size_t>(g0 + 1) * gw + g1 + 1] * fx;
                return top * (1.0 - fy) + bot * fy;
            };
            dy[i] = static_cast<float>(lerp(ny));
            dx[i] = static_cast<float>(lerp(nx));
        }
    }
}

}  // namespace

std::array<Mask, 3> simulate_raters(const Mask& true_mask, double jitter, double miss_prob,
                                    Rng& rng) {
    std::array<Mask, 3> out;
    if (!true_mask.any()) {
        out.fill(Mask(true_mask.height, true_mask.width));
        return out;
    }
    // Both perturbation magnitudes scale with jitter and stay below it; the
    // constants keep per-rater Dice in (0.7, 1.0) for jitter 3 on glands with
    // semi-axes >= 10 px.
    const int max_offset = static_cast<int>(std::floor(jitter * 2.0 / 3.0));
    const double elastic_amp = 0.3 * jitter;
    for (auto& rater_mask : out) {
        if (miss_prob > 0.0 && rng.bernoulli(miss_prob)) {
            rater_mask = Mask(true_mask.height, true_mask.width);
            continue;
        }
        Mask m = true_mask;
        if (max_offset > 0) {
            const int offset = static_cast<int>(rng.range(-max_offset, max_offset));
            if (offset > 0) m = dilate(m, offset);
            else if (offset < 0) m = erode(m, -offset);
        }
        if (elastic_amp > 0.0) {
            std::vector<float> dy, dx;
            elastic_field(m.height, m.width, elastic_amp, rng, dy, dx);
            m = warp_displacement(m, dy, dx);
        }
        rater_mask = std::move(m);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dataset generation
// ---------------------------------------------------------------------------

namespace {

std::string zero_pad(int v, int width) {
    std::string s = std::to_string(v);
    while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
    return s;
}

}  // namespace

DatasetManifest generate_dataset(const PhantomConfig& config, const fs::path& out_dir) {
    config.validate();
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec || !fs::is_directory(out_dir))
        throw IoError("output directory not writable: " + out_dir.string());

    Rng master(config.seed);

    // Patient-level 80:20 train/test split.
    std::vector<int> patient_order(static_cast<size_t>(config.n_patients));
    std::iota(patient_order.begin(), patient_order.end(), 0);
    {
        Rng split_rng = master.fork(0xA11CE);
        split_rng.shuffle(patient_order);
    }
    int n_test = static_cast<int>(std::llround(0.2 * config.n_patients));
    if (n_test >= config.n_patients) n_test = config.n_patients - 1;
    std::set<int> test_patients(patient_order.end() - n_test, patient_order.end());

    DatasetManifest manifest;
    manifest.root = out_dir;

    const int n_neg =
        static_cast<int>(std::llround(config.negative_frame_fraction * config.frames_per_patient));

    for (int p = 0; p < config.n_patients; ++p) {
        const std::string pid = "P" + zero_pad(p, 3);
        const std::string split = test_patients.count(p) ? "test" : "train";
        Rng patient_rng = master.fork(static_cast<uint64_t>(p) + 1);

        // Which frames of this patient are negative.
        std::vector<int> frame_order(static_cast<size_t>(config.frames_per_patient));
        std::iota(frame_order.begin(), frame_order.end(), 0);
        patient_rng.shuffle(frame_order);
        std::set<int> negative_frames(frame_order.begin(), frame_order.begin() + n_neg);

        fs::create_directories(out_dir / "images" / pid);
        fs::create_directories(out_dir / "masks" / pid);

        for (int f = 0; f < config.frames_per_patient; ++f) {
            const std::string fid = pid + "_F" + zero_pad(f, 3);
            const bool positive = !negative_frames.count(f);
            Rng frame_rng = patient_rng.fork(static_cast<uint64_t>(f) + 1);

            PhantomFrame frame = render_phantom_frame(config, positive, frame_rng);
            std::array<Mask, 3> raters =
                simulate_raters(frame.true_mask, config.rater_boundary_jitter,
                                config.rater_miss_probability, frame_rng);

            // A rater can falsely annotate a negative frame, at the same rate
            // at which they miss positive glands.
            if (!positive && config.rater_miss_probability > 0.0) {
                for (auto& m : raters) {
                    if (!frame_rng.bernoulli(config.rater_miss_probability)) continue;
                    const double cy = frame_rng.uniform(0.2, 0.8) * config.image_height;
                    const double cx = frame_rng.uniform(0.2, 0.8) * config.image_width;
                    const double a = frame_rng.uniform(3.0, 6.0);
                    const double b = frame_rng.uniform(3.0, 6.0);
                    m = ellipse_mask(config.image_height, config.image_width, cy, cx, a, b, 0.0);
                }
            }

            const std::string img_rel = "images/" + pid + "/" + fid + ".png";
            const std::string mask_rel_base = "masks/" + pid + "/" + fid;
            write_gray_png(out_dir / img_rel, frame.image);
            write_mask_png(out_dir / (mask_rel_base + "_r1.png"), raters[0]);
            write_mask_png(out_dir / (mask_rel_base + "_r2.png"), raters[1]);
            write_mask_png(out_dir / (mask_rel_base + "_r3.png"), raters[2]);
            write_mask_png(out_dir / (mask_rel_base + "_truth.png"), frame.true_mask);

            manifest.rows.push_back({pid, fid, img_rel, mask_rel_base + "_r1.png",
                                     mask_rel_base + "_r2.png", mask_rel_base + "_r3.png", split});
        }
    }

    write_manifest(manifest);
    write_text_file(out_dir / "phantom_config.json", phantom_config_to_json(config) + "\n");
    return manifest;
}

// ---------------------------------------------------------------------------
// Manifest + loading
// ---------------------------------------------------------------------------

namespace {
const std::vector<std::string> kManifestColumns = {
    "patient_id",   "frame_id",     "image_path", "mask_path_r1",
    "mask_path_r2", "mask_path_r3", "split"};
}

void write_manifest(const DatasetManifest& manifest) {
    CsvWriter csv(kManifestColumns);
    for (const auto& r : manifest.rows)
        csv.add_row({r.patient_id, r.frame_id, r.image_path, r.mask_path_r1, r.mask_path_r2,
                     r.mask_path_r3, r.split});
    csv.save(manifest.csv_path());
}

DatasetManifest read_manifest(const fs::path& manifest_path) {
    if (!fs::exists(manifest_path))
        throw IoError("manifest not found: " + manifest_path.string());
    const CsvTable table = read_csv(manifest_path);
    if (table.header != kManifestColumns)
        throw ValidationError("manifest has unexpected columns in " + manifest_path.string());
    DatasetManifest manifest;
    manifest.root = manifest_path.parent_path();
    for (const auto& row : table.rows)
        manifest.rows.push_back({row[0], row[1], row[2], row[3], row[4], row[5], row[6]});
    return manifest;
}

std::vector<FrameRecord> load_dataset(const fs::path& manifest_path) {
    const DatasetManifest manifest = read_manifest(manifest_path);
    std::vector<FrameRecord> records;
    records.reserve(manifest.rows.size());

    std::set<std::string> seen_frames;
    std::map<std::string, std::string> patient_split;

    for (const auto& row : manifest.rows) {
        if (row.split != "train" && row.split != "val" && row.split != "test")
            throw ValidationError("frame " + row.frame_id + ": unknown split '" + row.split + "'");
        if (!seen_frames.insert(row.frame_id).second)
            throw ValidationError("frame " + row.frame_id + ": duplicate frame_id in manifest");
        auto [it, inserted] = patient_split.emplace(row.patient_id, row.split);
        if (!inserted && it->second != row.split)
            throw ValidationError("patient " + row.patient_id + " spans splits '" + it->second +
                                  "' and '" + row.split + "'");

        FrameRecord rec;
        rec.patient_id = row.patient_id;
        rec.frame_id = row.frame_id;
        rec.split = row.split;
        try {
            rec.image = read_gray_png(manifest.root / row.image_path);
            const std::string* mask_paths[3] = {&row.mask_path_r1, &row.mask_path_r2,
                                                &row.mask_path_r3};
            for (int r = 0; r < 3; ++r)
                rec.rater_masks[static_cast<size_t>(r)] =
                    read_mask_png(manifest.root / *mask_paths[r]);
        } catch (const std::exception& e) {
            throw IoError("frame " + row.frame_id + ": " + e.what());
        }
        for (int r = 0; r < 3; ++r) {
            const auto& m = rec.rater_masks[static_cast<size_t>(r)];
            if (m.height != rec.image.height || m.width != rec.image.width)
                throw ValidationError("frame " + row.frame_id + ": rater " + std::to_string(r + 1) +
                                      " mask shape mismatch");
        }
        // Optional phantom ground truth stored alongside rater masks.
        if (row.mask_path_r1.size() > 7) {
            std::string truth_rel = row.mask_path_r1;
            const auto pos = truth_rel.rfind("_r1.png");
            if (pos != std::string::npos) {
                truth_rel.replace(pos, 7, "_truth.png");
                const fs::path truth_path = manifest.root / truth_rel;
                if (fs::exists(truth_path)) {
                    Mask truth = read_mask_png(truth_path);
                    if (truth.height == rec.image.height && truth.width == rec.image.width)
                        rec.truth_mask = std::move(truth);
                }
            }
        }
        records.push_back(std::move(rec));
    }
    return records;
}

}  // namespace screenseg
