#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "robox/geometry.hpp"
#include "robox/model.hpp"
#include "robox/pipeline.hpp"

namespace robox {

/// One synthetic case: image, reference mask, and its tight box.
struct Sample {
    std::uint64_t id = 0;
    GrayImage image;
    BinaryMask gt;
    Box gt_box;
};

namespace detail {

/// Star-convex blob: a base radius modulated by a few low-order harmonics.
struct BlobShape {
    double cx, cy, r0;
    double amp[3];
    double phase[3];

    double radius_at(double theta) const {
        double r = 1.0;
        for (int k = 0; k < 3; ++k) r += amp[k] * std::sin((k + 1) * theta + phase[k]);
        return r0 * r;
    }

    bool contains(double x, double y) const {
        const double dx = x - cx, dy = y - cy;
        return std::hypot(dx, dy) < radius_at(std::atan2(dy, dx));
    }

    /// Signed distance to the wobbled rim, positive inside. Approximate but
    /// monotone near the boundary, which is all the soft edge needs.
    double rim_margin(double x, double y) const {
        const double dx = x - cx, dy = y - cy;
        return radius_at(std::atan2(dy, dx)) - std::hypot(dx, dy);
    }
};

}  // namespace detail

/// Generate deterministic synthetic cases: one star-convex target blob per
/// image on a sloped, noisy background, alongside one or two look-alike
/// companion blobs that stay out of the mask. Accepted targets cover at
/// least 5% of the frame and their tight box at most 40% of it, so both the
/// target and its box stay inside the [5%, 40%] size band. `id_base` offsets
/// the sample ids so separate splits never collide in seed derivations keyed
/// by id.
inline std::vector<Sample> gen_dataset(std::size_t count, std::uint64_t seed,
                                       std::size_t image_size = 64, std::uint64_t id_base = 0) {
    if (count == 0) throw ParamError("gen_dataset: count must be positive");
    const std::size_t I = image_size;
    const double fi = static_cast<double>(I);
    Rng root(seed);
    std::vector<Sample> out;
    out.reserve(count);

    for (std::size_t i = 0; i < count; ++i) {
        Rng rng = root.child(0x5a17, id_base + i);
        Sample s;
        s.id = id_base + i;
        s.image = GrayImage(I, I);
        s.gt = BinaryMask(I, I);

        const double lo_area = 0.05 * fi * fi, hi_box = 0.40 * fi * fi;
        bool ok = false;
        for (int attempt = 0; attempt < 64 && !ok; ++attempt) {
            detail::BlobShape blob;
            blob.cx = rng.uniform(0.30, 0.70) * fi;
            blob.cy = rng.uniform(0.30, 0.70) * fi;
            blob.r0 = rng.uniform(0.12, 0.30) * fi;
            for (int k = 0; k < 3; ++k) {
                blob.amp[k] = rng.uniform(0.0, 0.22 / (k + 1));
                blob.phase[k] = rng.uniform(0.0, 6.283185307179586);
            }
            std::size_t area = 0;
            for (std::size_t y = 0; y < I; ++y)
                for (std::size_t x = 0; x < I; ++x) {
                    const bool in = blob.contains(x + 0.0, y + 0.0);
                    s.gt.at(y, x) = in ? 1 : 0;
                    area += in;
                }
            if (static_cast<double>(area) < lo_area) continue;
            const Box tb = tight_box(s.gt);
            if (tb.width() * tb.height() > hi_box) continue;
            if (!is_4_connected(s.gt)) continue;

            const double base = rng.uniform(0.25, 0.45);
            const double gx = rng.uniform(-0.15, 0.15) / fi;
            const double gy = rng.uniform(-0.15, 0.15) / fi;
            const double contrast =
                (rng.uniform() < 0.5 ? 1.0 : -1.0) * rng.uniform(0.25, 0.50);
            const double edge_w = blob.r0 * rng.uniform(0.06, 0.30);

            // Look-alike companions: blobs from the same family rendered the
            // same way but never masked. With identical-looking objects in
            // frame, which one is wanted is information only the prompt
            // carries, and a sloppy box can sweep over the near companion.
            detail::BlobShape comp[2];
            double comp_contrast[2], comp_edge[2];
            std::size_t n_comp = 0;
            const std::size_t want = 1 + (rng.uniform() < 0.5 ? 1 : 0);
            for (std::size_t j = 0; j < want; ++j) {
                const double rd = rng.uniform(0.10, 0.22) * fi;
                bool placed = false;
                for (int t = 0; t < 30 && !placed; ++t) {
                    double cx, cy;
                    if (j == 0) {
                        const double theta = rng.uniform(0.0, 6.283185307179586);
                        const double dist = (blob.r0 + rd) * rng.uniform(1.30, 2.20);
                        cx = blob.cx + dist * std::cos(theta);
                        cy = blob.cy + dist * std::sin(theta);
                    } else {
                        cx = rng.uniform(0.08, 0.92) * fi;
                        cy = rng.uniform(0.08, 0.92) * fi;
                    }
                    if (cx < 0.08 * fi || cx > 0.92 * fi || cy < 0.08 * fi ||
                        cy > 0.92 * fi)
                        continue;
                    if (std::hypot(cx - blob.cx, cy - blob.cy) < 1.30 * (blob.r0 + rd))
                        continue;
                    if (n_comp > 0 &&
                        std::hypot(cx - comp[0].cx, cy - comp[0].cy) <
                            1.10 * (comp[0].r0 + rd))
                        continue;
                    comp[n_comp].cx = cx;
                    comp[n_comp].cy = cy;
                    comp[n_comp].r0 = rd;
                    placed = true;
                }
                if (!placed) continue;  // crowded frame; fewer companions
                for (int k = 0; k < 3; ++k) {
                    comp[n_comp].amp[k] = rng.uniform(0.0, 0.22 / (k + 1));
                    comp[n_comp].phase[k] = rng.uniform(0.0, 6.283185307179586);
                }
                comp_contrast[n_comp] =
                    (rng.uniform() < 0.5 ? 1.0 : -1.0) * rng.uniform(0.25, 0.50);
                comp_edge[n_comp] = rd * rng.uniform(0.06, 0.30);
                ++n_comp;
            }

            // Low-frequency background texture: smooth Gaussian knolls, no
            // rim, no mask. They keep plain thresholding unreliable without
            // drowning the objects.
            struct Bump {
                double x, y, inv2s2, amp;
            };
            Bump bumps[4];
            const std::size_t n_bumps = 2 + rng.uniform_index(3);
            for (std::size_t j = 0; j < n_bumps; ++j) {
                const double sigma = rng.uniform(0.10, 0.25) * fi;
                bumps[j] = {rng.uniform(0.0, fi), rng.uniform(0.0, fi),
                            1.0 / (2.0 * sigma * sigma),
                            (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.08, 0.22)};
            }
            for (std::size_t y = 0; y < I; ++y)
                for (std::size_t x = 0; x < I; ++x) {
                    const double m = blob.rim_margin(x + 0.0, y + 0.0);
                    const double fg = 1.0 / (1.0 + std::exp(-m / edge_w));
                    double v = base + gx * x + gy * y + contrast * fg + 0.05 * rng.normal();
                    for (std::size_t j = 0; j < n_comp; ++j) {
                        const double md = comp[j].rim_margin(x + 0.0, y + 0.0);
                        v += comp_contrast[j] / (1.0 + std::exp(-md / comp_edge[j]));
                    }
                    for (std::size_t j = 0; j < n_bumps; ++j) {
                        const double dx = x - bumps[j].x, dy = y - bumps[j].y;
                        v += bumps[j].amp * std::exp(-(dx * dx + dy * dy) * bumps[j].inv2s2);
                    }
                    s.image.at(y, x) = v;
                }
            s.image.clamp01();
            s.gt_box = tb;
            ok = true;
        }
        if (!ok) throw Error("gen_dataset: failed to draw a valid blob");
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Reference mask as a flat [1, H*W] constant target.
inline nn::Tensor mask_target(const BinaryMask& m) {
    const std::size_t n = m.bits.size();
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = m.bits[i];
    return nn::Tensor::from({1, n}, std::move(v));
}

/// Logits of one mask channel as a [1, H*W] row that keeps the graph.
inline nn::Tensor mask_logits_row(const nn::Tensor& logits, std::size_t index) {
    if (logits.rank() != 3 || index >= logits.dim(0))
        throw ShapeError("mask_logits_row: bad logits shape or index");
    const std::size_t hw = logits.dim(1) * logits.dim(2);
    return nn::slice_rows(nn::reshape(logits, {logits.dim(0), hw}), index, index + 1);
}

/// Mean binary cross entropy between one logit row and the target row.
inline nn::Tensor ce_loss(const nn::Tensor& logit_row, const nn::Tensor& target_row) {
    return nn::bce_with_logits_mean(logit_row, target_row);
}

/// Soft overlap loss: 1 - (2*sum(p*t)+eps) / (sum(p)+sum(t)+eps) on the
/// sigmoid probabilities. The +1 smoothing keeps empty targets finite.
inline nn::Tensor dice_loss(const nn::Tensor& logit_row, const nn::Tensor& target_row,
                            double eps = 1.0) {
    nn::Tensor p = nn::sigmoid(logit_row);
    nn::Tensor inter = nn::sum(nn::mul(p, target_row));
    nn::Tensor denom = nn::add(nn::sum(p), nn::sum(target_row));
    nn::Tensor frac = nn::div(nn::add_scalar(nn::mul_scalar(inter, 2.0), eps),
                              nn::add_scalar(denom, eps));
    return nn::add_scalar(nn::mul_scalar(frac, -1.0), 1.0);
}

/// Mean absolute error against a constant target of the same shape.
inline nn::Tensor l1_loss(const nn::Tensor& pred, const nn::Tensor& target) {
    return nn::mean(nn::abs_t(nn::sub(pred, target)));
}

struct MaskLoss {
    nn::Tensor loss;       // weighted ce + dice of the best channel
    std::size_t best = 0;  // channel that achieved it
};

/// Score every mask channel and keep the one with the lowest ce + dice.
/// Gradients flow only through the winner; multi-channel decoders train
/// whichever head currently explains the target best.
inline MaskLoss best_mask_loss(const nn::Tensor& mask_logits, const BinaryMask& gt,
                               double w_ce = 1.0, double w_dice = 1.0) {
    if (mask_logits.rank() != 3) throw ShapeError("best_mask_loss: need [M,H,W] logits");
    nn::Tensor target = mask_target(gt);
    MaskLoss out;
    double best_val = 0.0;
    for (std::size_t mi = 0; mi < mask_logits.dim(0); ++mi) {
        nn::Tensor row = mask_logits_row(mask_logits, mi);
        nn::Tensor li = nn::add(nn::mul_scalar(ce_loss(row, target), w_ce),
                                nn::mul_scalar(dice_loss(row, target), w_dice));
        if (mi == 0 || li.item() < best_val) {
            best_val = li.item();
            out.loss = li;
            out.best = mi;
        }
    }
    return out;
}

/// Mean squared error between the predicted per-mask overlap scores and the
/// overlap each thresholded channel actually achieves against the target.
inline nn::Tensor iou_consistency_loss(const nn::Tensor& iou_pred, const nn::Tensor& mask_logits,
                                       const BinaryMask& gt) {
    const std::size_t M = iou_pred.numel();
    if (mask_logits.rank() != 3 || mask_logits.dim(0) != M)
        throw ShapeError("iou_consistency_loss: logits do not match predictions");
    const std::size_t H = mask_logits.dim(1), W = mask_logits.dim(2);
    std::vector<double> actual(M);
    BinaryMask pred(H, W);
    for (std::size_t mi = 0; mi < M; ++mi) {
        const double* v = mask_logits.data().data() + mi * H * W;
        for (std::size_t i = 0; i < H * W; ++i) pred.bits[i] = v[i] > 0.0 ? 1 : 0;
        actual[mi] = iou(pred, gt);
    }
    nn::Tensor d = nn::sub(iou_pred, nn::Tensor::from({M}, std::move(actual)));
    return nn::mean(nn::mul(d, d));
}

/// Mean absolute error between proposed points and reference points after
/// assigning each proposal to its closest-cost reference (one to one).
inline nn::Tensor point_loss(const nn::Tensor& pred_pts, const std::vector<LabeledPoint>& gt_pts) {
    if (pred_pts.rank() != 2 || pred_pts.dim(1) != 2 || pred_pts.dim(0) != gt_pts.size())
        throw ShapeError("point_loss: prediction and reference sizes differ");
    std::vector<LabeledPoint> pred_list;
    pred_list.reserve(gt_pts.size());
    for (std::size_t i = 0; i < gt_pts.size(); ++i)
        pred_list.push_back(LabeledPoint{pred_pts[i * 2], pred_pts[i * 2 + 1], 0});
    const std::vector<std::size_t> perm = match_points(pred_list, gt_pts);
    std::vector<double> tv(gt_pts.size() * 2);
    for (std::size_t i = 0; i < gt_pts.size(); ++i) {
        tv[i * 2] = gt_pts[perm[i]].x;
        tv[i * 2 + 1] = gt_pts[perm[i]].y;
    }
    return l1_loss(pred_pts, nn::Tensor::from(pred_pts.shape(), std::move(tv)));
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

/// Adam with decoupled weight decay over a fixed set of leaf tensors.
/// Parameters whose gradient buffer is still empty are skipped entirely, so
/// optimizing a subset of a larger graph is safe.
class AdamW {
public:
    AdamW(std::vector<std::pair<std::string, nn::Tensor>> params, double lr,
          double weight_decay = 0.01, double beta1 = 0.9, double beta2 = 0.999,
          double eps = 1e-8)
        : lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {
        if (lr <= 0.0) throw ParamError("AdamW: lr must be positive");
        for (auto& [name, t] : params) {
            if (!t.is_leaf()) throw ParamError("AdamW: " + name + " is not a leaf");
            slots_.push_back(Slot{t, std::vector<double>(t.numel(), 0.0),
                                  std::vector<double>(t.numel(), 0.0)});
        }
    }

    std::size_t size() const { return slots_.size(); }
    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }

    void zero_grad() {
        for (auto& s : slots_) s.p.zero_grad();
    }

    void step() {
        ++t_;
        const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
        for (auto& s : slots_) {
            const std::vector<double>& g = s.p.grad();
            if (g.empty()) continue;
            std::vector<double>& w = s.p.leaf_data();
            for (std::size_t i = 0; i < w.size(); ++i) {
                s.m[i] = b1_ * s.m[i] + (1.0 - b1_) * g[i];
                s.v[i] = b2_ * s.v[i] + (1.0 - b2_) * g[i] * g[i];
                const double mhat = s.m[i] / c1;
                const double vhat = s.v[i] / c2;
                w[i] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + wd_ * w[i]);
            }
        }
    }

private:
    struct Slot {
        nn::Tensor p;
        std::vector<double> m, v;
    };
    std::vector<Slot> slots_;
    double lr_, wd_, b1_, b2_, eps_;
    std::uint64_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Training phases
// ---------------------------------------------------------------------------

struct TrainConfig {
    std::size_t epochs = 20;
    std::size_t batch = 16;  // gradient accumulation window
    double lr = 1e-4;
    double weight_decay = 0.01;
    double w_ce = 1.0;
    double w_dice = 1.0;
    double w_off = 1.0;
    double w_pts = 1.0;
    double w_iou = 1.0;
    std::uint64_t seed = 0;
    double aux_point_prob = 0.5;  // base phase: chance of extra point prompts
    double perturb_lo = 0.0;      // head phase: box corruption range
    double perturb_hi = 0.30;
    double stop_dice = 0.0;  // base phase: stop once val reaches this (0 = off)
};

struct PhaseReport {
    std::vector<double> train_loss;  // mean per epoch
    std::vector<double> val_dice;    // per epoch where measured, else empty
    double final_val_dice = 0.0;
    std::size_t epochs_run = 0;
};

/// Mean overlap on a split when prompting with the reference boxes and
/// decoding the raw embedding, picking the channel the model itself ranks
/// highest. This is the gate metric for the base phase.
inline double mean_dice_clean_boxes(Model& m, const std::vector<Sample>& samples) {
    if (samples.empty()) throw ParamError("mean_dice_clean_boxes: empty split");
    double total = 0.0;
    for (const auto& s : samples) {
        nn::Tensor f_img = m.encode_image(m.image_to_tensor(s.image));
        auto out = m.decode(f_img, m.encode_box(detail::box_tensor(s.gt_box)));
        std::size_t best = 0;
        for (std::size_t i = 1; i < out.iou_pred.numel(); ++i)
            if (out.iou_pred[i] > out.iou_pred[best]) best = i;
        total += dice(m.logits_to_mask(out.mask_logits, best), s.gt);
    }
    return total / static_cast<double>(samples.size());
}

namespace detail {

inline void shuffle_indices(std::vector<std::size_t>& order, Rng& rng) {
    for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[rng.uniform_index(i)]);
}

/// Random pixel from the set region of a mask. Throws when the mask is empty.
inline LabeledPoint random_point_in(const BinaryMask& m, int label, Rng& rng) {
    std::vector<std::size_t> idx;
    idx.reserve(m.bits.size() / 4);
    for (std::size_t i = 0; i < m.bits.size(); ++i)
        if (m.bits[i]) idx.push_back(i);
    if (idx.empty()) throw EmptyTargetError("random_point_in: empty region");
    const std::size_t k = idx[rng.uniform_index(idx.size())];
    return LabeledPoint{static_cast<double>(k % m.width), static_cast<double>(k / m.width),
                        label};
}

/// One pass over the split in shuffled order, backpropagating each sample
/// loss scaled by the accumulation window and stepping every `batch`
/// samples. Returns the mean unscaled loss.
template <typename LossFn>
double run_epoch(Model& m, AdamW& opt, std::vector<std::size_t>& order, Rng& rng,
                 std::size_t batch, LossFn&& sample_loss) {
    if (batch == 0) throw ParamError("run_epoch: batch must be positive");
    shuffle_indices(order, rng);
    double total = 0.0;
    std::size_t pending = 0;
    for (std::size_t idx : order) {
        nn::Tensor loss = sample_loss(idx);
        total += loss.item();
        nn::Tape::from(nn::mul_scalar(loss, 1.0 / static_cast<double>(batch))).backward();
        if (++pending == batch) {
            opt.step();
            m.zero_grads();
            pending = 0;
        }
    }
    if (pending > 0) {
        opt.step();
        m.zero_grads();
    }
    return total / static_cast<double>(order.size());
}

}  // namespace detail

/// Base phase: fit the encoder and decoder on clean prompts. Boxes are the
/// reference boxes; with probability `aux_point_prob` a few labeled points
/// join the prompt so the decoder learns to read them. Stops early once the
/// validation overlap reaches `stop_dice`.
inline PhaseReport pretrain(Model& m, const std::vector<Sample>& train,
                            const std::vector<Sample>& val, const TrainConfig& cfg) {
    if (train.empty() || val.empty()) throw ParamError("pretrain: empty split");
    AdamW opt(m.named_params(), cfg.lr, cfg.weight_decay);
    Rng rng(cfg.seed);
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    // Complements are fixed per sample; build them once for negative points.
    std::vector<BinaryMask> bg(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) {
        bg[i] = BinaryMask(train[i].gt.height, train[i].gt.width);
        for (std::size_t k = 0; k < bg[i].bits.size(); ++k)
            bg[i].bits[k] = train[i].gt.bits[k] ? 0 : 1;
    }

    PhaseReport rep;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng erng = rng.child(0xba5e, epoch);
        auto sample_loss = [&](std::size_t idx) {
            const Sample& s = train[idx];
            Rng srng = erng.child(0x01, s.id);
            nn::Tensor bt = detail::box_tensor(s.gt_box);
            nn::Tensor f_p;
            if (srng.uniform() < cfg.aux_point_prob) {
                const std::size_t k = 1 + srng.uniform_index(3);
                std::vector<LabeledPoint> pts;
                std::vector<int> labels;
                for (std::size_t j = 0; j < k; ++j) {
                    const bool pos = srng.uniform() < 0.5;
                    pts.push_back(detail::random_point_in(pos ? s.gt : bg[idx],
                                                          pos ? 1 : 0, srng));
                    labels.push_back(pts.back().label);
                }
                f_p = m.encode_prompts(bt, detail::points_tensor(pts), labels);
            } else {
                f_p = m.encode_box(bt);
            }
            nn::Tensor f_img = m.encode_image(m.image_to_tensor(s.image));
            auto out = m.decode(f_img, f_p);
            MaskLoss ml = best_mask_loss(out.mask_logits, s.gt, cfg.w_ce, cfg.w_dice);
            return nn::add(ml.loss,
                           nn::mul_scalar(iou_consistency_loss(out.iou_pred, out.mask_logits,
                                                               s.gt),
                                          cfg.w_iou));
        };
        Rng shuffle_rng = rng.child(0x5f, epoch);
        rep.train_loss.push_back(
            detail::run_epoch(m, opt, order, shuffle_rng, cfg.batch, sample_loss));
        rep.val_dice.push_back(mean_dice_clean_boxes(m, val));
        rep.epochs_run = epoch + 1;
        if (cfg.stop_dice > 0.0 && rep.val_dice.back() >= cfg.stop_dice) break;
    }
    rep.final_val_dice = rep.val_dice.empty() ? 0.0 : rep.val_dice.back();
    return rep;
}

/// Head phase: freeze the base and fit the robustness components on
/// corrupted boxes. Image embeddings and prior stacks are computed once per
/// sample, which is valid because the encoder no longer moves. Each sample
/// runs one refinement step, proposes points, and decodes on the enriched
/// embedding; the loss combines mask quality, offset recovery, and point
/// placement.
inline PhaseReport train_heads(Model& m, const std::vector<Sample>& train,
                               const std::vector<Sample>& val, const TrainConfig& cfg) {
    if (train.empty() || val.empty()) throw ParamError("train_heads: empty split");
    AdamW opt(m.head_params(), cfg.lr, cfg.weight_decay);
    Rng rng(cfg.seed);
    const std::size_t I = m.config().image_size;
    const std::size_t n_pts = m.config().n_points;

    std::vector<SegmentContext> ctx;
    ctx.reserve(train.size());
    for (const auto& s : train) ctx.emplace_back(m, s.image, true);

    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    PhaseReport rep;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng erng = rng.child(0x6ead, epoch);
        auto sample_loss = [&](std::size_t idx) {
            const Sample& s = train[idx];
            Rng srng = erng.child(0x02, s.id);
            const Box pbox =
                perturb_box(s.gt_box, cfg.perturb_lo, cfg.perturb_hi, srng, I, I);

            nn::Tensor bt0 = detail::box_tensor(pbox);
            nn::Tensor f_box0 = m.encode_box(bt0);
            nn::Tensor f_star = m.condition_on_prompts(ctx[idx].f_img(), f_box0);
            nn::Tensor off = m.prm_offsets(f_star, f_box0);
            nn::Tensor residual = nn::Tensor::from(
                {4}, {s.gt_box.x1 - pbox.x1, s.gt_box.y1 - pbox.y1, s.gt_box.x2 - pbox.x2,
                      s.gt_box.y2 - pbox.y2});
            nn::Tensor l_off = l1_loss(off, residual);

            nn::Tensor bt1 = nn::add(bt0, off);
            nn::Tensor f_box1 = m.encode_box(bt1);
            nn::Tensor f_ref = m.condition_on_prompts(ctx[idx].f_img(), f_box1);
            nn::Tensor pts = m.pem_points(f_ref, f_star);

            const Box rbox =
                apply_offsets(pbox, BoxOffsets{off[0], off[1], off[2], off[3]}).clipped(I, I);
            const BinaryMask region = negative_region(pbox, rbox, s.gt);
            nn::Tensor l_pts = region.count() == 0
                                   ? nn::Tensor::scalar(0.0)
                                   : point_loss(pts, uniform_sample_points(region, n_pts, 0));

            nn::Tensor f_p =
                m.encode_prompts(bt1, pts, std::vector<int>(n_pts, 0));
            nn::Tensor e3 = nn::add(m.condition_on_prompts(ctx[idx].f_img(), f_p),
                                    m.sie_features(ctx[idx].stack()));
            auto out = m.decode(e3, f_p);
            MaskLoss ml = best_mask_loss(out.mask_logits, s.gt, cfg.w_ce, cfg.w_dice);

            nn::Tensor loss = nn::add(ml.loss, nn::mul_scalar(l_off, cfg.w_off));
            loss = nn::add(loss, nn::mul_scalar(l_pts, cfg.w_pts));
            loss = nn::add(loss,
                           nn::mul_scalar(iou_consistency_loss(out.iou_pred, out.mask_logits,
                                                               s.gt),
                                          cfg.w_iou));
            return loss;
        };
        Rng shuffle_rng = rng.child(0x60, epoch);
        rep.train_loss.push_back(
            detail::run_epoch(m, opt, order, shuffle_rng, cfg.batch, sample_loss));
        rep.epochs_run = epoch + 1;
    }

    // Final check: full pipeline on the validation split with mid-severity
    // corruption, one fixed draw per sample.
    double total = 0.0;
    for (const auto& s : val) {
        Rng vrng = rng.child(0x7a1, s.id);
        const Box pbox = perturb_box(s.gt_box, 0.10, 0.20, vrng, I, I);
        SegmentContext c(m, s.image, true);
        auto res = segment(c, pbox, PipelineFlags{true, true, true, true});
        total += dice(res.mask, s.gt);
    }
    rep.final_val_dice = total / static_cast<double>(val.size());
    return rep;
}

}  // namespace robox
