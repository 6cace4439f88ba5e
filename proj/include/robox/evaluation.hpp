#pragma once

#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "robox/pipeline.hpp"
#include "robox/training.hpp"

namespace robox {

/// One severity band of box corruption. `lo == hi == 0` means the clean
/// prompt: a single trial and no self-consistency score. Corruption buckets
/// need at least two trials for the consistency metric to exist.
struct BucketSpec {
    std::string name;
    double lo = 0.0;
    double hi = 0.0;
    std::size_t trials = 1;
};

inline std::vector<BucketSpec> default_buckets() {
    return {{"clean", 0.0, 0.0, 1},
            {"0-10", 0.0, 0.10, 5},
            {"10-20", 0.10, 0.20, 5},
            {"20-30", 0.20, 0.30, 5}};
}

/// The ablation ladder: plain decode, each robustness stage added in turn,
/// and the single-step refinement variant of the full pipeline.
inline const std::map<std::string, PipelineFlags>& named_configs() {
    static const std::map<std::string, PipelineFlags> configs = {
        {"baseline", {false, false, false, false}},
        {"prm", {true, false, false, true}},
        {"prm-pem", {true, true, false, true}},
        {"full", {true, true, true, true}},
        {"full-single", {true, true, true, false}},
    };
    return configs;
}

/// Prompt-consistency score for one image: each trial mask against the
/// pixel-wise union of all trials, averaged, as a percentage. 100 means the
/// output ignored the prompt corruption entirely.
inline double pr_metric(const std::vector<BinaryMask>& masks) {
    if (masks.size() < 2) throw ParamError("pr_metric: need at least two masks");
    BinaryMask u = masks[0];
    for (std::size_t i = 1; i < masks.size(); ++i) {
        if (masks[i].height != u.height || masks[i].width != u.width)
            throw ShapeError("pr_metric: mask dimensions differ");
        for (std::size_t k = 0; k < u.bits.size(); ++k) u.bits[k] |= masks[i].bits[k];
    }
    double s = 0.0;
    for (const auto& m : masks) s += dice(m, u);
    return 100.0 * s / static_cast<double>(masks.size());
}

/// Raw outcome of one image under one bucket. Aggregates in the report are
/// recomputable from these.
struct ImageRecord {
    std::uint64_t id = 0;
    std::vector<double> trial_dice_pct;  // one entry per trial
    double pr_pct = 0.0;
    bool has_pr = false;
    std::size_t fallbacks = 0;  // draws that failed the overlap guard
};

struct BucketResult {
    std::string name;
    double lo = 0.0, hi = 0.0;
    std::size_t trials = 0;
    double dice_pct = 0.0;  // mean over images of the per-image trial mean
    double pr_pct = 0.0;    // mean over images of the per-image consistency
    bool has_pr = false;
    std::size_t fallbacks = 0;
    std::vector<ImageRecord> records;
};

struct EvalResult {
    std::string config_name;
    PipelineFlags flags;
    std::uint64_t seed = 0;
    std::size_t n_images = 0;
    std::vector<BucketResult> buckets;
};

/// Draw the perturbed prompt for (seed, image, bucket, trial). The stream
/// depends on nothing else, so every configuration evaluated under the same
/// seed sees exactly the same corrupted boxes.
inline Box draw_perturbed_box(const Sample& s, std::uint64_t seed, std::size_t bucket_index,
                              std::size_t trial, const BucketSpec& spec, std::size_t image_size,
                              bool* fell_back = nullptr) {
    Rng stream = Rng(seed).child(s.id, bucket_index, trial);
    return perturb_box(s.gt_box, spec.lo, spec.hi, stream, image_size, image_size, 50,
                       fell_back);
}

namespace detail {

inline void validate_buckets(const std::vector<BucketSpec>& buckets) {
    if (buckets.empty()) throw ParamError("evaluate: no buckets");
    for (const auto& b : buckets) {
        if (b.lo < 0.0 || b.hi < b.lo || b.hi > 0.3)
            throw ParamError("evaluate: bucket " + b.name + " outside [0, 0.3]");
        const bool clean = b.lo == 0.0 && b.hi == 0.0;
        if (clean && b.trials != 1)
            throw ParamError("evaluate: clean bucket must have one trial");
        if (!clean && b.trials < 2)
            throw ParamError("evaluate: bucket " + b.name + " needs at least two trials");
    }
}

}  // namespace detail

/// Severity protocol over an arbitrary mask predictor. Per image: the clean
/// bucket scores the reference-box mask once; every corruption bucket draws
/// its paired boxes, scores each mask against the reference mask, and scores
/// prompt consistency across the bucket's trials.
inline EvalResult evaluate_predictor(
    const std::function<BinaryMask(const Sample&, const Box&)>& predict,
    const std::vector<Sample>& test, std::uint64_t seed, const std::string& config_name,
    const std::vector<BucketSpec>& buckets = default_buckets()) {
    if (test.empty()) throw ParamError("evaluate: empty test split");
    detail::validate_buckets(buckets);

    EvalResult res;
    res.config_name = config_name;
    res.seed = seed;
    res.n_images = test.size();
    res.buckets.resize(buckets.size());

    for (std::size_t b = 0; b < buckets.size(); ++b) {
        res.buckets[b].name = buckets[b].name;
        res.buckets[b].lo = buckets[b].lo;
        res.buckets[b].hi = buckets[b].hi;
        res.buckets[b].trials = buckets[b].trials;
        res.buckets[b].has_pr = !(buckets[b].lo == 0.0 && buckets[b].hi == 0.0);
    }

    for (const auto& s : test) {
        const std::size_t I = s.image.width;
        for (std::size_t b = 0; b < buckets.size(); ++b) {
            const BucketSpec& spec = buckets[b];
            BucketResult& out = res.buckets[b];
            ImageRecord rec;
            rec.id = s.id;
            if (!out.has_pr) {
                rec.trial_dice_pct.push_back(100.0 * dice(predict(s, s.gt_box), s.gt));
            } else {
                std::vector<BinaryMask> masks;
                masks.reserve(spec.trials);
                for (std::size_t t = 0; t < spec.trials; ++t) {
                    bool fb = false;
                    const Box pbox = draw_perturbed_box(s, seed, b, t, spec, I, &fb);
                    rec.fallbacks += fb;
                    masks.push_back(predict(s, pbox));
                    rec.trial_dice_pct.push_back(100.0 * dice(masks.back(), s.gt));
                }
                rec.pr_pct = pr_metric(masks);
                rec.has_pr = true;
            }
            out.records.push_back(std::move(rec));
        }
    }

    for (auto& out : res.buckets) {
        double dsum = 0.0, psum = 0.0;
        for (const auto& rec : out.records) {
            double t = 0.0;
            for (double d : rec.trial_dice_pct) t += d;
            dsum += t / static_cast<double>(rec.trial_dice_pct.size());
            psum += rec.pr_pct;
            out.fallbacks += rec.fallbacks;
        }
        out.dice_pct = dsum / static_cast<double>(out.records.size());
        out.pr_pct = out.has_pr ? psum / static_cast<double>(out.records.size()) : 0.0;
    }
    return res;
}

/// Severity protocol for one model configuration. The per-image embedding
/// context is reused across every bucket and trial of that image.
inline EvalResult evaluate(Model& m, const std::vector<Sample>& test, const PipelineFlags& flags,
                           std::uint64_t seed, const std::string& config_name,
                           const std::vector<BucketSpec>& buckets = default_buckets()) {
    std::optional<SegmentContext> ctx;
    std::uint64_t ctx_id = 0;
    bool ctx_valid = false;
    auto predict = [&](const Sample& s, const Box& box) {
        if (!ctx_valid || ctx_id != s.id) {
            ctx.emplace(m, s.image, flags.use_sie);
            ctx_id = s.id;
            ctx_valid = true;
        }
        return segment(*ctx, box, flags).mask;
    };
    EvalResult res = evaluate_predictor(predict, test, seed, config_name, buckets);
    res.flags = flags;
    return res;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline nlohmann::json flags_to_json(const PipelineFlags& f) {
    return {{"use_prm", f.use_prm},
            {"use_pem", f.use_pem},
            {"use_sie", f.use_sie},
            {"iterate", f.iterate}};
}

inline PipelineFlags flags_from_json(const nlohmann::json& j) {
    PipelineFlags f;
    f.use_prm = j.value("use_prm", true);
    f.use_pem = j.value("use_pem", true);
    f.use_sie = j.value("use_sie", true);
    f.iterate = j.value("iterate", true);
    return f;
}

inline nlohmann::json trace_to_json(const InferenceTrace& t) {
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& s : t.refine_steps) steps.push_back({s.dx1, s.dy1, s.dx2, s.dy2});
    nlohmann::json points = nlohmann::json::array();
    for (const auto& p : t.points) points.push_back({{"x", p.x}, {"y", p.y}, {"label", p.label}});
    return {{"flags", flags_to_json(t.flags)},
            {"input_box", {t.input_box.x1, t.input_box.y1, t.input_box.x2, t.input_box.y2}},
            {"refine_steps", steps},
            {"refined_box",
             {t.refined_box.x1, t.refined_box.y1, t.refined_box.x2, t.refined_box.y2}},
            {"points", points},
            {"iou_pred", t.iou_pred},
            {"selected_mask", t.selected_mask}};
}

inline nlohmann::json eval_to_json(const EvalResult& r) {
    nlohmann::json buckets = nlohmann::json::array();
    for (const auto& b : r.buckets) {
        nlohmann::json records = nlohmann::json::array();
        for (const auto& rec : b.records) {
            nlohmann::json jr = {{"id", rec.id},
                                 {"trial_dice_pct", rec.trial_dice_pct},
                                 {"fallbacks", rec.fallbacks}};
            if (rec.has_pr)
                jr["pr_pct"] = rec.pr_pct;
            else
                jr["pr_pct"] = "/";
            records.push_back(jr);
        }
        nlohmann::json jb = {{"name", b.name},
                             {"severity_lo", b.lo},
                             {"severity_hi", b.hi},
                             {"trials", b.trials},
                             {"dice_pct", b.dice_pct},
                             {"fallbacks", b.fallbacks},
                             {"records", records}};
        if (b.has_pr)
            jb["pr_pct"] = b.pr_pct;
        else
            jb["pr_pct"] = "/";
        buckets.push_back(jb);
    }
    return {{"config", r.config_name},
            {"flags", flags_to_json(r.flags)},
            {"seed", r.seed},
            {"n_images", r.n_images},
            {"buckets", buckets}};
}

inline EvalResult eval_from_json(const nlohmann::json& jr) {
    EvalResult r;
    r.config_name = jr.at("config").get<std::string>();
    r.flags = flags_from_json(jr.at("flags"));
    r.seed = jr.at("seed").get<std::uint64_t>();
    r.n_images = jr.at("n_images").get<std::size_t>();
    for (const auto& jb : jr.at("buckets")) {
        BucketResult b;
        b.name = jb.at("name").get<std::string>();
        b.lo = jb.at("severity_lo").get<double>();
        b.hi = jb.at("severity_hi").get<double>();
        b.trials = jb.at("trials").get<std::size_t>();
        b.dice_pct = jb.at("dice_pct").get<double>();
        b.fallbacks = jb.at("fallbacks").get<std::size_t>();
        b.has_pr = jb.at("pr_pct").is_number();
        if (b.has_pr) b.pr_pct = jb.at("pr_pct").get<double>();
        for (const auto& jrec : jb.at("records")) {
            ImageRecord rec;
            rec.id = jrec.at("id").get<std::uint64_t>();
            rec.trial_dice_pct = jrec.at("trial_dice_pct").get<std::vector<double>>();
            rec.fallbacks = jrec.at("fallbacks").get<std::size_t>();
            rec.has_pr = jrec.at("pr_pct").is_number();
            if (rec.has_pr) rec.pr_pct = jrec.at("pr_pct").get<double>();
            b.records.push_back(std::move(rec));
        }
        r.buckets.push_back(std::move(b));
    }
    return r;
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw IoError("cannot open " + path + " for writing");
    const std::size_t n = std::fwrite(text.data(), 1, text.size(), f);
    std::fclose(f);
    if (n != text.size()) throw IoError("short write to " + path);
}

inline std::string read_text_file(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw IoError("cannot open " + path);
    std::fseek(f, 0, SEEK_END);
    const long sz = std::ftell(f);
    std::fseek(f, 0, SEEK_SET);
    std::string text(sz > 0 ? static_cast<std::size_t>(sz) : 0, '\0');
    const std::size_t n = text.empty() ? 0 : std::fread(text.data(), 1, text.size(), f);
    std::fclose(f);
    if (n != text.size()) throw IoError("short read from " + path);
    return text;
}

/// Multi-configuration report with raw per-image records, stable field
/// order, two-space indent. Equal inputs produce byte-identical files.
inline void write_report_json(const std::vector<EvalResult>& results, const std::string& path) {
    nlohmann::json j;
    j["results"] = nlohmann::json::array();
    for (const auto& r : results) j["results"].push_back(eval_to_json(r));
    write_text_file(path, j.dump(2) + "\n");
}

inline std::vector<EvalResult> read_report_json(const std::string& path) {
    const auto j = nlohmann::json::parse(read_text_file(path));
    std::vector<EvalResult> out;
    for (const auto& jr : j.at("results")) out.push_back(eval_from_json(jr));
    return out;
}

/// Flat aggregate table: one row per configuration and bucket.
inline void write_report_csv(const std::vector<EvalResult>& results, const std::string& path) {
    std::string out = "config,seed,bucket,severity_lo,severity_hi,trials,dice_pct,pr_pct,fallbacks\n";
    char buf[256];
    for (const auto& r : results)
        for (const auto& b : r.buckets) {
            if (b.has_pr)
                std::snprintf(buf, sizeof buf, "%s,%llu,%s,%.2f,%.2f,%zu,%.4f,%.4f,%zu\n",
                              r.config_name.c_str(),
                              static_cast<unsigned long long>(r.seed), b.name.c_str(), b.lo,
                              b.hi, b.trials, b.dice_pct, b.pr_pct, b.fallbacks);
            else
                std::snprintf(buf, sizeof buf, "%s,%llu,%s,%.2f,%.2f,%zu,%.4f,/,%zu\n",
                              r.config_name.c_str(),
                              static_cast<unsigned long long>(r.seed), b.name.c_str(), b.lo,
                              b.hi, b.trials, b.dice_pct, b.fallbacks);
            out += buf;
        }
    write_text_file(path, out);
}

/// Degradation-curve chart: mean overlap per bucket, one polyline per
/// configuration, written as a PPM raster.
inline void write_degradation_plot(const std::vector<EvalResult>& results,
                                   const std::string& path) {
    if (results.empty()) throw ParamError("write_degradation_plot: no results");
    const std::size_t W = 640, H = 420;
    const long x0 = 70, y0 = 40, x1 = 600, y1 = 370;  // plot area corners
    RgbImage img(H, W);

    auto hline = [&](long y, long xa, long xb, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
        for (long x = xa; x <= xb; ++x) img.set(y, x, r, g, b);
    };
    auto vline = [&](long x, long ya, long yb, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
        for (long y = ya; y <= yb; ++y) img.set(y, x, r, g, b);
    };
    // Axes with horizontal gridlines every 20 points.
    for (int v = 0; v <= 100; v += 20) {
        const long y = y1 - (y1 - y0) * v / 100;
        hline(y, x0, x1, v == 0 ? 0 : 225, v == 0 ? 0 : 225, v == 0 ? 0 : 225);
    }
    vline(x0, y0, y1, 0, 0, 0);
    hline(y1, x0, x1, 0, 0, 0);

    const std::size_t nb = results[0].buckets.size();
    auto px = [&](std::size_t b) {
        return nb == 1 ? (x0 + x1) / 2
                       : x0 + static_cast<long>((x1 - x0) * b / (nb - 1));
    };
    auto py = [&](double pct) { return y1 - static_cast<long>((y1 - y0) * pct / 100.0); };

    const std::uint8_t palette[6][3] = {{200, 40, 40},  {40, 110, 200}, {30, 150, 60},
                                        {190, 130, 20}, {130, 60, 180}, {60, 60, 60}};
    auto thick_line = [&](long ax, long ay, long bx, long by, const std::uint8_t* c) {
        const long steps = std::max(std::labs(bx - ax), std::labs(by - ay)) + 1;
        for (long s = 0; s <= steps; ++s) {
            const long x = ax + (bx - ax) * s / steps;
            const long y = ay + (by - ay) * s / steps;
            for (long dy = -1; dy <= 1; ++dy)
                for (long dx = -1; dx <= 1; ++dx) img.set(y + dy, x + dx, c[0], c[1], c[2]);
        }
    };

    for (std::size_t r = 0; r < results.size(); ++r) {
        const std::uint8_t* c = palette[r % 6];
        const auto& buckets = results[r].buckets;
        if (buckets.size() != nb)
            throw ParamError("write_degradation_plot: bucket counts differ across results");
        for (std::size_t b = 0; b + 1 < nb; ++b)
            thick_line(px(b), py(buckets[b].dice_pct), px(b + 1), py(buckets[b + 1].dice_pct),
                       c);
        // Legend swatch rows in the top-left corner of the plot area.
        const long ly = y0 + 8 + static_cast<long>(r) * 12;
        for (long dx = 0; dx < 18; ++dx)
            for (long dy = -2; dy <= 2; ++dy) img.set(ly + dy, x0 + 8 + dx, c[0], c[1], c[2]);
    }
    write_ppm(path, img);
}

}  // namespace robox
