#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <deque>
#include <limits>
#include <vector>

#include "robox/common.hpp"
#include "robox/image.hpp"

namespace robox {

// ---------------------------------------------------------------------------
// Gaussian smoothing (separable, replicated borders)
// ---------------------------------------------------------------------------

inline GrayImage gaussian_blur(const GrayImage& img, double sigma) {
    if (sigma <= 0.0) throw ParamError("gaussian_blur: sigma must be positive");
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(2 * radius + 1);
    double ksum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
        ksum += kernel[i + radius];
    }
    for (double& k : kernel) k /= ksum;

    const long H = static_cast<long>(img.height), W = static_cast<long>(img.width);
    auto clampc = [](long v, long n) { return std::min(n - 1, std::max(0L, v)); };
    GrayImage tmp(img.height, img.width), out(img.height, img.width);
    for (long r = 0; r < H; ++r)
        for (long c = 0; c < W; ++c) {
            double s = 0.0;
            for (int i = -radius; i <= radius; ++i)
                s += kernel[i + radius] * img.v[r * W + clampc(c + i, W)];
            tmp.v[r * W + c] = s;
        }
    for (long r = 0; r < H; ++r)
        for (long c = 0; c < W; ++c) {
            double s = 0.0;
            for (int i = -radius; i <= radius; ++i)
                s += kernel[i + radius] * tmp.v[clampc(r + i, H) * W + c];
            out.v[r * W + c] = s;
        }
    return out;
}

// ---------------------------------------------------------------------------
// Canny edges
// ---------------------------------------------------------------------------

/// Canny edge detector. Thresholds are fractions of the peak gradient
/// magnitude after non-maximum suppression, so they are invariant to image
/// contrast. A perfectly flat image yields an empty edge map.
inline BinaryMask canny_edges(const GrayImage& img, double sigma = 1.0, double low_frac = 0.1,
                              double high_frac = 0.3) {
    if (!(low_frac >= 0.0 && low_frac < high_frac && high_frac <= 1.0))
        throw ParamError("canny_edges: need 0 <= low < high <= 1");
    const GrayImage sm = gaussian_blur(img, sigma);
    const long H = static_cast<long>(img.height), W = static_cast<long>(img.width);
    auto clampc = [](long v, long n) { return std::min(n - 1, std::max(0L, v)); };
    auto at = [&](long r, long c) { return sm.v[clampc(r, H) * W + clampc(c, W)]; };

    std::vector<double> gx(H * W), gy(H * W), mag(H * W);
    for (long r = 0; r < H; ++r)
        for (long c = 0; c < W; ++c) {
            gx[r * W + c] = (at(r - 1, c + 1) + 2 * at(r, c + 1) + at(r + 1, c + 1)) -
                            (at(r - 1, c - 1) + 2 * at(r, c - 1) + at(r + 1, c - 1));
            gy[r * W + c] = (at(r + 1, c - 1) + 2 * at(r + 1, c) + at(r + 1, c + 1)) -
                            (at(r - 1, c - 1) + 2 * at(r - 1, c) + at(r - 1, c + 1));
            mag[r * W + c] = std::hypot(gx[r * W + c], gy[r * W + c]);
        }

    // Non-maximum suppression along the quantized gradient direction.
    std::vector<double> thin(H * W, 0.0);
    double peak = 0.0;
    for (long r = 0; r < H; ++r)
        for (long c = 0; c < W; ++c) {
            const double m = mag[r * W + c];
            if (m == 0.0) continue;
            double angle = std::atan2(gy[r * W + c], gx[r * W + c]) * 180.0 / M_PI;
            if (angle < 0) angle += 180.0;
            long dr = 0, dc = 0;
            if (angle < 22.5 || angle >= 157.5) {
                dc = 1;  // horizontal gradient, vertical edge
            } else if (angle < 67.5) {
                dr = 1;
                dc = 1;
            } else if (angle < 112.5) {
                dr = 1;
            } else {
                dr = 1;
                dc = -1;
            }
            const double m1 = mag[clampc(r + dr, H) * W + clampc(c + dc, W)];
            const double m2 = mag[clampc(r - dr, H) * W + clampc(c - dc, W)];
            if (m >= m1 && m >= m2) {
                thin[r * W + c] = m;
                peak = std::max(peak, m);
            }
        }

    BinaryMask edges(img.height, img.width);
    if (peak <= 1e-12) return edges;
    const double high = high_frac * peak, low = low_frac * peak;

    // Hysteresis: grow from strong pixels through weak ones, 8-connected.
    std::deque<long> queue;
    for (long i = 0; i < H * W; ++i)
        if (thin[i] >= high) {
            edges.bits[i] = 1;
            queue.push_back(i);
        }
    while (!queue.empty()) {
        const long i = queue.front();
        queue.pop_front();
        const long r = i / W, c = i % W;
        for (long dr = -1; dr <= 1; ++dr)
            for (long dc = -1; dc <= 1; ++dc) {
                const long rr = r + dr, cc = c + dc;
                if (rr < 0 || rr >= H || cc < 0 || cc >= W) continue;
                const long j = rr * W + cc;
                if (!edges.bits[j] && thin[j] >= low) {
                    edges.bits[j] = 1;
                    queue.push_back(j);
                }
            }
    }
    return edges;
}

// ---------------------------------------------------------------------------
// SLIC superpixels
// ---------------------------------------------------------------------------

struct SlicResult {
    std::size_t height = 0, width = 0;
    std::vector<int> labels;  // row-major, in [0, num_labels)
    int num_labels = 0;
};

/// SLIC on a grayscale image. Intensity plays the role of color; the
/// compactness knob follows the usual 0..40 luminance convention (intensity
/// here lives in [0,1], i.e. L/100). After clustering, fragments smaller
/// than a quarter of the nominal cell are absorbed into the neighboring
/// region discovered before them, so every final label is 4-connected.
inline SlicResult slic_superpixels(const GrayImage& img, std::size_t k = 64,
                                   double compactness = 10.0, int iters = 10) {
    if (k < 1) throw ParamError("slic_superpixels: k must be positive");
    if (iters < 1) throw ParamError("slic_superpixels: iters must be positive");
    if (compactness <= 0.0) throw ParamError("slic_superpixels: compactness must be positive");
    const long H = static_cast<long>(img.height), W = static_cast<long>(img.width);
    const double S = std::sqrt(static_cast<double>(H * W) / static_cast<double>(k));
    const double m_norm = compactness / 100.0;

    // Grid seeds, nudged to the lowest local gradient in a 3x3 window so the
    // centers avoid sitting exactly on edges.
    const long ny = std::max(1L, std::lround(H / S));
    const long nx = std::max(1L, std::lround(W / S));
    struct Center {
        double i, y, x;
        double acc_i = 0, acc_y = 0, acc_x = 0;
        long n = 0;
    };
    std::vector<Center> centers;
    auto grad = [&](long r, long c) {
        auto px = [&](long rr, long cc) {
            rr = std::min(H - 1, std::max(0L, rr));
            cc = std::min(W - 1, std::max(0L, cc));
            return img.v[rr * W + cc];
        };
        const double dx = px(r, c + 1) - px(r, c - 1);
        const double dy = px(r + 1, c) - px(r - 1, c);
        return dx * dx + dy * dy;
    };
    for (long gy = 0; gy < ny; ++gy)
        for (long gx = 0; gx < nx; ++gx) {
            long cy = std::min(H - 1, static_cast<long>((gy + 0.5) * H / ny));
            long cx = std::min(W - 1, static_cast<long>((gx + 0.5) * W / nx));
            long by = cy, bx = cx;
            double bg = grad(cy, cx);
            for (long dr = -1; dr <= 1; ++dr)
                for (long dc = -1; dc <= 1; ++dc) {
                    const long r = std::min(H - 1, std::max(0L, cy + dr));
                    const long c = std::min(W - 1, std::max(0L, cx + dc));
                    const double g = grad(r, c);
                    if (g < bg) {
                        bg = g;
                        by = r;
                        bx = c;
                    }
                }
            centers.push_back(
                {img.v[by * W + bx], static_cast<double>(by), static_cast<double>(bx)});
        }

    std::vector<int> labels(H * W, 0);
    std::vector<double> dist(H * W);
    const long win = std::max(1L, std::lround(S));
    for (int it = 0; it < iters; ++it) {
        std::fill(dist.begin(), dist.end(), std::numeric_limits<double>::infinity());
        for (std::size_t ci = 0; ci < centers.size(); ++ci) {
            const Center& cen = centers[ci];
            const long r0 = std::max(0L, static_cast<long>(cen.y) - win);
            const long r1 = std::min(H - 1, static_cast<long>(cen.y) + win);
            const long c0 = std::max(0L, static_cast<long>(cen.x) - win);
            const long c1 = std::min(W - 1, static_cast<long>(cen.x) + win);
            for (long r = r0; r <= r1; ++r)
                for (long c = c0; c <= c1; ++c) {
                    const double di = img.v[r * W + c] - cen.i;
                    const double dy = r - cen.y, dx = c - cen.x;
                    const double d = di * di + (dy * dy + dx * dx) * (m_norm * m_norm) / (S * S);
                    if (d < dist[r * W + c]) {
                        dist[r * W + c] = d;
                        labels[r * W + c] = static_cast<int>(ci);
                    }
                }
        }
        // Pixels outside every search window (possible on extreme aspect
        // ratios) fall back to the nearest center by space alone.
        for (long r = 0; r < H; ++r)
            for (long c = 0; c < W; ++c)
                if (!std::isfinite(dist[r * W + c])) {
                    double bd = std::numeric_limits<double>::infinity();
                    for (std::size_t ci = 0; ci < centers.size(); ++ci) {
                        const double dy = r - centers[ci].y, dx = c - centers[ci].x;
                        const double d = dy * dy + dx * dx;
                        if (d < bd) {
                            bd = d;
                            labels[r * W + c] = static_cast<int>(ci);
                        }
                    }
                }
        for (auto& cen : centers) {
            cen.acc_i = cen.acc_y = cen.acc_x = 0.0;
            cen.n = 0;
        }
        for (long r = 0; r < H; ++r)
            for (long c = 0; c < W; ++c) {
                Center& cen = centers[static_cast<std::size_t>(labels[r * W + c])];
                cen.acc_i += img.v[r * W + c];
                cen.acc_y += r;
                cen.acc_x += c;
                cen.n += 1;
            }
        for (auto& cen : centers)
            if (cen.n > 0) {
                cen.i = cen.acc_i / cen.n;
                cen.y = cen.acc_y / cen.n;
                cen.x = cen.acc_x / cen.n;
            }
    }

    // Connectivity pass: walk components in row-major discovery order; a
    // fragment below min_size takes the label of the component found before
    // it (its left/up neighbor), which keeps every final region connected.
    SlicResult res;
    res.height = img.height;
    res.width = img.width;
    res.labels.assign(H * W, -1);
    const long min_size = std::max(1L, (H * W) / (static_cast<long>(k) * 4));
    int next_label = 0;
    std::vector<long> comp;
    for (long start = 0; start < H * W; ++start) {
        if (res.labels[start] != -1) continue;
        comp.clear();
        comp.push_back(start);
        res.labels[start] = next_label;
        const int old = labels[start];
        for (std::size_t qi = 0; qi < comp.size(); ++qi) {
            const long r = comp[qi] / W, c = comp[qi] % W;
            const long nb[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
            for (const auto& n : nb) {
                if (n[0] < 0 || n[0] >= H || n[1] < 0 || n[1] >= W) continue;
                const long j = n[0] * W + n[1];
                if (res.labels[j] == -1 && labels[j] == old) {
                    res.labels[j] = next_label;
                    comp.push_back(j);
                }
            }
        }
        int adjacent = -1;
        const long r = start / W, c = start % W;
        if (c > 0)
            adjacent = res.labels[start - 1];
        else if (r > 0)
            adjacent = res.labels[start - W];
        if (static_cast<long>(comp.size()) < min_size && adjacent >= 0) {
            for (long p : comp) res.labels[p] = adjacent;
        } else {
            ++next_label;
        }
    }
    res.num_labels = next_label;
    return res;
}

/// Pixels whose right or lower neighbor carries a different label, plus the
/// mirrored side, so boundaries are closed curves between regions.
inline BinaryMask slic_boundaries(const SlicResult& s) {
    const long H = static_cast<long>(s.height), W = static_cast<long>(s.width);
    BinaryMask m(s.height, s.width);
    for (long r = 0; r < H; ++r)
        for (long c = 0; c < W; ++c) {
            const int l = s.labels[r * W + c];
            if ((c + 1 < W && s.labels[r * W + c + 1] != l) ||
                (r + 1 < H && s.labels[(r + 1) * W + c] != l) ||
                (c > 0 && s.labels[r * W + c - 1] != l) || (r > 0 && s.labels[(r - 1) * W + c] != l))
                m.bits[r * W + c] = 1;
        }
    return m;
}

// ---------------------------------------------------------------------------
// FFT and spectral high-pass
// ---------------------------------------------------------------------------

namespace detail {

inline void fft1(std::vector<std::complex<double>>& a, bool invert) {
    const std::size_t n = a.size();
    if (n == 0 || (n & (n - 1)) != 0) throw ParamError("fft1: length must be a power of two");
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = 2.0 * M_PI / static_cast<double>(len) * (invert ? 1.0 : -1.0);
        const std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t j = 0; j < len / 2; ++j) {
                const std::complex<double> u = a[i + j];
                const std::complex<double> v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wl;
            }
        }
    }
    if (invert)
        for (auto& x : a) x /= static_cast<double>(n);
}

inline std::size_t next_pow2(std::size_t n) {
    std::size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

}  // namespace detail

/// 2-D spectrum of a real image. Non-power-of-two inputs are zero padded up
/// to the next power of two; `height`/`width` remember the original size so
/// the inverse can crop back.
struct Spectrum {
    std::size_t height = 0, width = 0;      // original image size
    std::size_t ph = 0, pw = 0;             // padded transform size
    std::vector<std::complex<double>> bins; // row-major ph x pw
};

inline Spectrum fft2(const GrayImage& img) {
    Spectrum s;
    s.height = img.height;
    s.width = img.width;
    s.ph = detail::next_pow2(img.height);
    s.pw = detail::next_pow2(img.width);
    s.bins.assign(s.ph * s.pw, {0.0, 0.0});
    for (std::size_t r = 0; r < img.height; ++r)
        for (std::size_t c = 0; c < img.width; ++c)
            s.bins[r * s.pw + c] = {img.v[r * img.width + c], 0.0};
    std::vector<std::complex<double>> line;
    line.resize(s.pw);
    for (std::size_t r = 0; r < s.ph; ++r) {
        std::copy(s.bins.begin() + static_cast<std::ptrdiff_t>(r * s.pw),
                  s.bins.begin() + static_cast<std::ptrdiff_t>((r + 1) * s.pw), line.begin());
        detail::fft1(line, false);
        std::copy(line.begin(), line.end(), s.bins.begin() + static_cast<std::ptrdiff_t>(r * s.pw));
    }
    line.resize(s.ph);
    for (std::size_t c = 0; c < s.pw; ++c) {
        for (std::size_t r = 0; r < s.ph; ++r) line[r] = s.bins[r * s.pw + c];
        detail::fft1(line, false);
        for (std::size_t r = 0; r < s.ph; ++r) s.bins[r * s.pw + c] = line[r];
    }
    return s;
}

/// Inverse of fft2, cropped to the original size; returns the real part.
inline GrayImage ifft2(const Spectrum& s_in) {
    Spectrum s = s_in;
    std::vector<std::complex<double>> line(s.ph);
    for (std::size_t c = 0; c < s.pw; ++c) {
        for (std::size_t r = 0; r < s.ph; ++r) line[r] = s.bins[r * s.pw + c];
        detail::fft1(line, true);
        for (std::size_t r = 0; r < s.ph; ++r) s.bins[r * s.pw + c] = line[r];
    }
    line.resize(s.pw);
    for (std::size_t r = 0; r < s.ph; ++r) {
        std::copy(s.bins.begin() + static_cast<std::ptrdiff_t>(r * s.pw),
                  s.bins.begin() + static_cast<std::ptrdiff_t>((r + 1) * s.pw), line.begin());
        detail::fft1(line, true);
        std::copy(line.begin(), line.end(), s.bins.begin() + static_cast<std::ptrdiff_t>(r * s.pw));
    }
    GrayImage out(s.height, s.width);
    for (std::size_t r = 0; r < s.height; ++r)
        for (std::size_t c = 0; c < s.width; ++c) out.v[r * s.width + c] = s.bins[r * s.pw + c].real();
    return out;
}

/// Suppress low frequencies: bins within radius_frac * min(transform dims)
/// of DC are zeroed, the rest kept; the spatial result is min-max normalized
/// to [0,1]. A constant image maps to all zeros.
inline GrayImage fft_highpass(const GrayImage& img, double radius_frac = 0.1) {
    if (radius_frac < 0.0 || radius_frac > 0.5) throw ParamError("fft_highpass: radius_frac in [0, 0.5]");
    Spectrum s = fft2(img);
    const double cutoff = radius_frac * static_cast<double>(std::min(s.ph, s.pw));
    for (std::size_t r = 0; r < s.ph; ++r) {
        const double fy = r <= s.ph / 2 ? static_cast<double>(r) : static_cast<double>(r) - s.ph;
        for (std::size_t c = 0; c < s.pw; ++c) {
            const double fx = c <= s.pw / 2 ? static_cast<double>(c) : static_cast<double>(c) - s.pw;
            if (std::hypot(fy, fx) < cutoff) s.bins[r * s.pw + c] = {0.0, 0.0};
        }
    }
    GrayImage out = ifft2(s);
    double lo = out.v[0], hi = out.v[0];
    for (double v : out.v) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (hi - lo < 1e-12) {
        std::fill(out.v.begin(), out.v.end(), 0.0);
        return out;
    }
    for (double& v : out.v) v = (v - lo) / (hi - lo);
    return out;
}

// ---------------------------------------------------------------------------
// Prior stack
// ---------------------------------------------------------------------------

struct PriorConfig {
    double canny_sigma = 1.0;
    double canny_low = 0.1;
    double canny_high = 0.3;
    std::size_t slic_k = 64;
    double slic_compactness = 10.0;
    int slic_iters = 10;
    double fft_radius_frac = 0.1;
};

/// Three aligned structural channels for the sketch branch:
/// 0 = Canny edges, 1 = superpixel boundaries, 2 = spectral high-pass.
struct PriorStack {
    std::size_t height = 0, width = 0;
    std::vector<double> data;  // [3, H, W]
};

inline PriorStack build_prior_stack(const GrayImage& img, const PriorConfig& cfg = {}) {
    PriorStack st;
    st.height = img.height;
    st.width = img.width;
    const std::size_t plane = img.height * img.width;
    st.data.resize(3 * plane);
    const BinaryMask edges = canny_edges(img, cfg.canny_sigma, cfg.canny_low, cfg.canny_high);
    const BinaryMask bounds = slic_boundaries(
        slic_superpixels(img, cfg.slic_k, cfg.slic_compactness, cfg.slic_iters));
    const GrayImage high = fft_highpass(img, cfg.fft_radius_frac);
    for (std::size_t i = 0; i < plane; ++i) {
        st.data[i] = edges.bits[i];
        st.data[plane + i] = bounds.bits[i];
        st.data[2 * plane + i] = high.v[i];
    }
    return st;
}

}  // namespace robox
