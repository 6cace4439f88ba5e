#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <vector>

#include "robox/common.hpp"
#include "robox/image.hpp"

namespace robox {

/// Axis-aligned box in pixel coordinates, inclusive corners.
/// x runs along columns, y along rows.
struct Box {
    double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;

    Box canonical() const {
        return Box{std::min(x1, x2), std::min(y1, y2), std::max(x1, x2), std::max(y1, y2)};
    }
    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
    double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
    double cx() const { return 0.5 * (x1 + x2); }
    double cy() const { return 0.5 * (y1 + y2); }

    Box clipped(std::size_t img_h, std::size_t img_w) const {
        const double mx = static_cast<double>(img_w) - 1.0;
        const double my = static_cast<double>(img_h) - 1.0;
        auto cl = [](double v, double hi) { return std::min(hi, std::max(0.0, v)); };
        return Box{cl(x1, mx), cl(y1, my), cl(x2, mx), cl(y2, my)};
    }

    bool operator==(const Box& o) const = default;
};

/// Per-corner adjustment in pixels, same coordinate order as Box.
struct BoxOffsets {
    double dx1 = 0.0, dy1 = 0.0, dx2 = 0.0, dy2 = 0.0;

    double abs_sum() const { return std::fabs(dx1) + std::fabs(dy1) + std::fabs(dx2) + std::fabs(dy2); }
};

inline Box apply_offsets(const Box& b, const BoxOffsets& o) {
    return Box{b.x1 + o.dx1, b.y1 + o.dy1, b.x2 + o.dx2, b.y2 + o.dy2}.canonical();
}

/// Point prompt; label 1 marks foreground, 0 background.
struct LabeledPoint {
    double x = 0.0, y = 0.0;
    int label = 1;

    bool operator==(const LabeledPoint& o) const = default;
};

// ---------------------------------------------------------------------------
// Mask <-> box
// ---------------------------------------------------------------------------

/// Smallest box containing every foreground pixel.
inline Box tight_box(const BinaryMask& m) {
    std::size_t rmin = m.height, rmax = 0, cmin = m.width, cmax = 0;
    bool any = false;
    for (std::size_t r = 0; r < m.height; ++r)
        for (std::size_t c = 0; c < m.width; ++c)
            if (m.bits[r * m.width + c]) {
                any = true;
                rmin = std::min(rmin, r);
                rmax = std::max(rmax, r);
                cmin = std::min(cmin, c);
                cmax = std::max(cmax, c);
            }
    if (!any) throw EmptyTargetError("tight_box: mask has no foreground");
    return Box{static_cast<double>(cmin), static_cast<double>(rmin), static_cast<double>(cmax),
               static_cast<double>(rmax)};
}

/// Filled raster of a box: pixel (r,c) is set when round(x1) <= c <= round(x2)
/// and likewise for rows, after clipping to the image.
inline BinaryMask rasterize_box(const Box& box, std::size_t img_h, std::size_t img_w) {
    const Box b = box.canonical().clipped(img_h, img_w);
    const long c1 = std::lround(b.x1), c2 = std::lround(b.x2);
    const long r1 = std::lround(b.y1), r2 = std::lround(b.y2);
    BinaryMask m(img_h, img_w);
    for (long r = r1; r <= r2; ++r)
        for (long c = c1; c <= c2; ++c) m.bits[static_cast<std::size_t>(r) * img_w + c] = 1;
    return m;
}

/// True when the foreground forms one 4-connected component. An empty mask
/// is not connected.
inline bool is_4_connected(const BinaryMask& m) {
    const std::size_t n = m.bits.size();
    std::size_t start = n;
    for (std::size_t i = 0; i < n; ++i)
        if (m.bits[i]) {
            start = i;
            break;
        }
    if (start == n) return false;
    std::vector<std::uint8_t> seen(n, 0);
    std::vector<std::size_t> stack{start};
    seen[start] = 1;
    std::size_t visited = 0;
    while (!stack.empty()) {
        const std::size_t i = stack.back();
        stack.pop_back();
        ++visited;
        const std::size_t r = i / m.width, c = i % m.width;
        const std::size_t nb[4] = {r > 0 ? i - m.width : n, r + 1 < m.height ? i + m.width : n,
                                   c > 0 ? i - 1 : n, c + 1 < m.width ? i + 1 : n};
        for (std::size_t j : nb)
            if (j < n && m.bits[j] && !seen[j]) {
                seen[j] = 1;
                stack.push_back(j);
            }
    }
    return visited == m.count();
}

// ---------------------------------------------------------------------------
// Overlap metrics
// ---------------------------------------------------------------------------

namespace detail {

inline void check_mask_pair(const BinaryMask& a, const BinaryMask& b, const char* op) {
    if (a.height != b.height || a.width != b.width)
        throw ShapeError(std::string(op) + ": mask size mismatch");
}

struct Overlap {
    std::size_t inter = 0, a = 0, b = 0;
};

inline Overlap overlap_counts(const BinaryMask& a, const BinaryMask& b) {
    Overlap o;
    for (std::size_t i = 0; i < a.bits.size(); ++i) {
        o.inter += static_cast<std::size_t>(a.bits[i] & b.bits[i]);
        o.a += a.bits[i];
        o.b += b.bits[i];
    }
    return o;
}

}  // namespace detail

/// Intersection over union on masks. Two empty masks count as identical (1.0).
inline double iou(const BinaryMask& a, const BinaryMask& b) {
    detail::check_mask_pair(a, b, "iou");
    const auto o = detail::overlap_counts(a, b);
    const std::size_t uni = o.a + o.b - o.inter;
    if (uni == 0) return 1.0;
    return static_cast<double>(o.inter) / static_cast<double>(uni);
}

/// Dice coefficient on masks. Two empty masks count as identical (1.0).
inline double dice(const BinaryMask& a, const BinaryMask& b) {
    detail::check_mask_pair(a, b, "dice");
    const auto o = detail::overlap_counts(a, b);
    if (o.a + o.b == 0) return 1.0;
    return 2.0 * static_cast<double>(o.inter) / static_cast<double>(o.a + o.b);
}

/// Analytic IoU of two boxes (inclusive pixel extents are irrelevant here;
/// this is the continuous-area version used for perturbation acceptance).
inline double box_iou(const Box& a_in, const Box& b_in) {
    const Box a = a_in.canonical(), b = b_in.canonical();
    const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
    const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
    const double inter = ix * iy;
    const double uni = a.area() + b.area() - inter;
    if (uni <= 0.0) return a.area() == 0.0 && b.area() == 0.0 ? 1.0 : 0.0;
    return inter / uni;
}

// ---------------------------------------------------------------------------
// Box perturbation
// ---------------------------------------------------------------------------

/// Randomly displace each box corner by a fraction of the box dimensions.
///
/// Each attempt draws one severity s uniformly from
/// [severity_lo, severity_hi], then shifts every coordinate by an
/// independent uniform draw in [-s, +s] times the box width (x) or height
/// (y). Draw order is fixed (s, then x1, y1, x2, y2) so streams replay
/// exactly. A draw is accepted when the result stays a sane box (>= 2 px
/// per side after clipping) and overlaps the original with IoU > 0.5; after
/// `max_attempts` rejected draws the original box is returned unchanged and
/// `fell_back`, when given, is set.
inline Box perturb_box(const Box& box, double severity_lo, double severity_hi, Rng& rng,
                       std::size_t img_h, std::size_t img_w, int max_attempts = 50,
                       bool* fell_back = nullptr) {
    if (severity_lo < 0.0 || severity_hi < severity_lo)
        throw ParamError("perturb_box: bad severity range");
    if (fell_back) *fell_back = false;
    const Box b = box.canonical();
    if (severity_hi == 0.0) return b.clipped(img_h, img_w);
    const double w = b.width(), h = b.height();
    for (int attempt = 0; attempt < max_attempts; ++attempt) {
        const double s = rng.uniform(severity_lo, severity_hi);
        BoxOffsets o;
        o.dx1 = rng.uniform(-s, s) * w;
        o.dy1 = rng.uniform(-s, s) * h;
        o.dx2 = rng.uniform(-s, s) * w;
        o.dy2 = rng.uniform(-s, s) * h;
        const Box cand = apply_offsets(b, o).clipped(img_h, img_w);
        if (cand.width() < 2.0 || cand.height() < 2.0) continue;
        if (box_iou(b, cand) > 0.5) return cand;
    }
    if (fell_back) *fell_back = true;
    return b.clipped(img_h, img_w);
}

/// Grow a box by the given fractions of its own size, then clip.
inline Box inflate(const Box& b_in, double fx, double fy, std::size_t img_h, std::size_t img_w) {
    const Box b = b_in.canonical();
    const double ex = b.width() * fx, ey = b.height() * fy;
    return Box{b.x1 - ex, b.y1 - ey, b.x2 + ex, b.y2 + ey}.clipped(img_h, img_w);
}

// ---------------------------------------------------------------------------
// Point sampling and matching
// ---------------------------------------------------------------------------

/// Pixels covered by either box but outside the reference mask: the area a
/// sloppy prompt sweeps over background, where negative correction points
/// live. May be empty when the mask fills both boxes.
inline BinaryMask negative_region(const Box& a, const Box& b, const BinaryMask& gt) {
    const BinaryMask ra = rasterize_box(a, gt.height, gt.width);
    const BinaryMask rb = rasterize_box(b, gt.height, gt.width);
    BinaryMask out(gt.height, gt.width);
    for (std::size_t i = 0; i < gt.bits.size(); ++i)
        out.bits[i] = (ra.bits[i] || rb.bits[i]) && !gt.bits[i] ? 1 : 0;
    return out;
}

/// n points spread evenly through the row-major list of foreground pixels:
/// point i sits at foreground index floor((i + 0.5) * L / n). When the
/// region has fewer pixels than points the list is cycled instead; an empty
/// region throws EmptyTargetError. Each point's label is `label`.
inline std::vector<LabeledPoint> uniform_sample_points(const BinaryMask& m, std::size_t n,
                                                       int label) {
    if (n == 0) throw ParamError("uniform_sample_points: n must be positive");
    std::vector<std::size_t> fg;
    for (std::size_t i = 0; i < m.bits.size(); ++i)
        if (m.bits[i]) fg.push_back(i);
    if (fg.empty()) throw EmptyTargetError("uniform_sample_points: empty region");
    std::vector<LabeledPoint> pts;
    pts.reserve(n);
    const std::size_t L = fg.size();
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t idx = L < n ? fg[i % L] : fg[(2 * i + 1) * L / (2 * n)];
        pts.push_back(LabeledPoint{static_cast<double>(idx % m.width),
                                   static_cast<double>(idx / m.width), label});
    }
    return pts;
}

/// Assignment of predicted points to ground truth points minimizing the sum
/// of Euclidean distances. Returns perm with perm[i] = index of the gt point
/// paired with pred[i]. Ties resolve to the lexicographically smallest
/// permutation. Exhaustive by permutation, so n is capped.
inline std::vector<std::size_t> match_points(const std::vector<LabeledPoint>& pred,
                                             const std::vector<LabeledPoint>& gt) {
    if (pred.size() != gt.size()) throw ShapeError("match_points: size mismatch");
    const std::size_t n = pred.size();
    if (n == 0) return {};
    if (n > 8) throw ParamError("match_points: too many points for exhaustive matching");
    std::vector<std::vector<double>> cost(n, std::vector<double>(n));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            cost[i][j] = std::hypot(pred[i].x - gt[j].x, pred[i].y - gt[j].y);
    std::vector<std::size_t> perm(n), best(n);
    std::iota(perm.begin(), perm.end(), 0);
    best = perm;
    double best_cost = std::numeric_limits<double>::infinity();
    do {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += cost[i][perm[i]];
        if (s < best_cost) {  // strict: first (lexicographically smallest) minimum wins
            best_cost = s;
            best = perm;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

/// Total distance realized by a matching.
inline double matching_cost(const std::vector<LabeledPoint>& pred,
                            const std::vector<LabeledPoint>& gt,
                            const std::vector<std::size_t>& perm) {
    double s = 0.0;
    for (std::size_t i = 0; i < perm.size(); ++i)
        s += std::hypot(pred[i].x - gt[perm[i]].x, pred[i].y - gt[perm[i]].y);
    return s;
}

}  // namespace robox
