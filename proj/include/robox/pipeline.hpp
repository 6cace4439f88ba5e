#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <vector>

#include "robox/geometry.hpp"
#include "robox/model.hpp"

namespace robox {

/// Which robustness stages run during inference. All false reproduces the
/// plain prompted decode.
struct PipelineFlags {
    bool use_prm = true;
    bool use_pem = true;
    bool use_sie = true;
    bool iterate = true;  // false caps box refinement at a single step
};

/// Everything observable about one inference, sufficient to replay and
/// compare runs. Timings live elsewhere so traces stay byte-stable.
struct InferenceTrace {
    PipelineFlags flags;
    Box input_box;
    std::vector<BoxOffsets> refine_steps;  // predicted per iteration, last may be sub-threshold
    Box refined_box;
    std::vector<LabeledPoint> points;
    std::vector<double> iou_pred;
    std::size_t selected_mask = 0;
};

struct SegmentResult {
    BinaryMask mask;
    InferenceTrace trace;
};

/// Iterate an offset predictor until it proposes a move smaller than
/// stop_eps (absolute L1 over the four coordinates) or max_iters is
/// reached. Every prediction is recorded; a sub-threshold prediction is
/// recorded but not applied. Boxes stay clipped to the image.
inline Box refine_box_with(const std::function<BoxOffsets(const Box&)>& predict, const Box& start,
                           int max_iters, double stop_eps, std::size_t img_h, std::size_t img_w,
                           std::vector<BoxOffsets>* steps = nullptr) {
    if (max_iters < 1) throw ParamError("refine_box_with: max_iters must be positive");
    Box cur = start.canonical().clipped(img_h, img_w);
    for (int i = 0; i < max_iters; ++i) {
        const BoxOffsets off = predict(cur);
        if (steps) steps->push_back(off);
        if (off.abs_sum() < stop_eps) break;
        cur = apply_offsets(cur, off).clipped(img_h, img_w);
    }
    return cur;
}

/// Per-image state shared across prompts: the image embedding is computed
/// once and detached (inference and the head-training phase never
/// backpropagate into the encoder through it), and the prior stack is built
/// only when the sketch branch needs it.
class SegmentContext {
public:
    SegmentContext(Model& model, const GrayImage& img, bool need_priors,
                   const PriorConfig& prior_cfg = {})
        : model_(&model) {
        nn::Tensor f = model.encode_image(model.image_to_tensor(img));
        f_img_ = nn::Tensor::from(f.shape(), f.data());  // detached copy
        if (need_priors) stack_ = build_prior_stack(img, prior_cfg);
    }

    Model& model() const { return *model_; }
    const nn::Tensor& f_img() const { return f_img_; }
    const PriorStack& stack() const {
        if (!stack_) throw Error("SegmentContext: prior stack was not requested");
        return *stack_;
    }
    bool has_stack() const { return stack_.has_value(); }

private:
    Model* model_;
    nn::Tensor f_img_;
    std::optional<PriorStack> stack_;
};

namespace detail {

inline nn::Tensor box_tensor(const Box& b) {
    return nn::Tensor::from({4}, {b.x1, b.y1, b.x2, b.y2});
}

inline nn::Tensor points_tensor(const std::vector<LabeledPoint>& pts) {
    std::vector<double> v;
    v.reserve(pts.size() * 2);
    for (const auto& p : pts) {
        v.push_back(p.x);
        v.push_back(p.y);
    }
    return nn::Tensor::from({pts.size(), 2}, v);
}

}  // namespace detail

/// Staged inference for one box prompt.
///
/// Stage 1 conditions the image embedding on the raw box. Stage 2 refines
/// the box iteratively and proposes correction points from the embedding
/// shift the refinement caused. Stage 3 decodes with the refined prompts on
/// an embedding enriched by the conditioning attention and, when enabled,
/// the structural sketch features. The mask with the highest predicted IoU
/// wins.
inline SegmentResult segment(const SegmentContext& ctx, const Box& prompt_box,
                             const PipelineFlags& flags) {
    Model& m = ctx.model();
    const ModelConfig& cfg = m.config();
    const std::size_t I = cfg.image_size;

    InferenceTrace trace;
    trace.flags = flags;
    const Box box0 = prompt_box.canonical().clipped(I, I);
    trace.input_box = box0;

    const nn::Tensor f_img = ctx.f_img();
    nn::Tensor f_box0 = m.encode_box(detail::box_tensor(box0));
    // Stage 1: embedding conditioned on the original box. Needed by both
    // refinement and point proposal; skipped entirely for the plain decode.
    nn::Tensor f_star;
    if (flags.use_prm || flags.use_pem) f_star = m.condition_on_prompts(f_img, f_box0);

    // Stage 2a: box refinement.
    Box box_used = box0;
    if (flags.use_prm) {
        auto predict = [&](const Box& b) {
            nn::Tensor fb = b == box0 ? f_box0 : m.encode_box(detail::box_tensor(b));
            nn::Tensor fs = b == box0 ? f_star : m.condition_on_prompts(f_img, fb);
            nn::Tensor off = m.prm_offsets(fs, fb);
            return BoxOffsets{off[0], off[1], off[2], off[3]};
        };
        const int iters = flags.iterate ? cfg.refine_iters : 1;
        box_used = refine_box_with(predict, box0, iters, cfg.refine_stop_eps, I, I,
                                   &trace.refine_steps);
    }
    trace.refined_box = box_used;

    // Stage 2b: correction points from the embedding disagreement between
    // the refined and original conditioning.
    std::vector<LabeledPoint> points;
    if (flags.use_pem) {
        nn::Tensor f_box_used =
            box_used == box0 ? f_box0 : m.encode_box(detail::box_tensor(box_used));
        nn::Tensor f_ref =
            box_used == box0 ? f_star : m.condition_on_prompts(f_img, f_box_used);
        nn::Tensor pts = m.pem_points(f_ref, f_star);
        for (std::size_t i = 0; i < cfg.n_points; ++i)
            points.push_back(LabeledPoint{pts[i * 2], pts[i * 2 + 1], 0});
    }
    trace.points = points;

    // Stage 3: decode with the final prompts on the enriched embedding.
    std::vector<int> labels(points.size(), 0);
    nn::Tensor f_p = points.empty()
                         ? m.encode_box(detail::box_tensor(box_used))
                         : m.encode_prompts(detail::box_tensor(box_used),
                                            detail::points_tensor(points), labels);
    nn::Tensor e3 = f_img;
    if (flags.use_prm || flags.use_pem) e3 = m.condition_on_prompts(e3, f_p);
    if (flags.use_sie) e3 = nn::add(e3, m.sie_features(ctx.stack()));

    auto out = m.decode(e3, f_p);
    std::size_t best = 0;
    for (std::size_t i = 1; i < cfg.n_mask_tokens; ++i)
        if (out.iou_pred[i] > out.iou_pred[best]) best = i;
    trace.iou_pred = out.iou_pred.data();
    trace.selected_mask = best;

    return SegmentResult{m.logits_to_mask(out.mask_logits, best), trace};
}

/// Convenience wrapper when no context reuse is wanted.
inline SegmentResult segment(Model& model, const GrayImage& img, const Box& prompt_box,
                             const PipelineFlags& flags, const PriorConfig& prior_cfg = {}) {
    SegmentContext ctx(model, img, flags.use_sie, prior_cfg);
    return segment(ctx, prompt_box, flags);
}

}  // namespace robox
