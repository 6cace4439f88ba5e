#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <complex>
#include <set>
#include <vector>

#include "robox/common.hpp"
#include "robox/priors.hpp"

using namespace robox;

namespace {

GrayImage noise_image(Rng& rng, std::size_t h, std::size_t w) {
    GrayImage img(h, w);
    for (auto& v : img.v) v = rng.uniform();
    return img;
}

// Smooth random image: soft blobs on a gradient, closer to the synthetic
// training data than white noise.
GrayImage blobby_image(Rng& rng, std::size_t h, std::size_t w) {
    GrayImage img(h, w);
    const double gx = rng.uniform(-0.3, 0.3), gy = rng.uniform(-0.3, 0.3);
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c)
            img.v[r * w + c] = 0.5 + gx * (static_cast<double>(c) / w - 0.5) +
                               gy * (static_cast<double>(r) / h - 0.5);
    const int nblobs = 2 + static_cast<int>(rng.uniform_index(3));
    for (int b = 0; b < nblobs; ++b) {
        const double cy = rng.uniform(0.2 * h, 0.8 * h), cx = rng.uniform(0.2 * w, 0.8 * w);
        const double rad = rng.uniform(3.0, 0.2 * (h + w));
        const double amp = rng.uniform(-0.4, 0.4);
        for (std::size_t r = 0; r < h; ++r)
            for (std::size_t c = 0; c < w; ++c) {
                const double d2 = (r - cy) * (r - cy) + (c - cx) * (c - cx);
                img.v[r * w + c] += amp * std::exp(-d2 / (2.0 * rad * rad));
            }
    }
    img.clamp01();
    return img;
}

// Direct O(n^2) DFT, the textbook sum.
std::vector<std::complex<double>> dft_direct(const std::vector<std::complex<double>>& x) {
    const std::size_t n = x.size();
    std::vector<std::complex<double>> out(n);
    for (std::size_t k = 0; k < n; ++k) {
        std::complex<double> s(0.0, 0.0);
        for (std::size_t j = 0; j < n; ++j)
            s += x[j] * std::polar(1.0, -2.0 * M_PI * static_cast<double>(k * j) / static_cast<double>(n));
        out[k] = s;
    }
    return out;
}

}  // namespace

TEST_CASE("1-D FFT matches the direct DFT") {
    Rng rng(501);
    for (std::size_t n : {2UL, 4UL, 8UL, 16UL, 32UL}) {
        std::vector<std::complex<double>> x(n);
        for (auto& v : x) v = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
        auto fast = x;
        detail::fft1(fast, false);
        const auto ref = dft_direct(x);
        for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(fast[i] - ref[i]) < 1e-9);
        // Inverse undoes it.
        detail::fft1(fast, true);
        for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(fast[i] - x[i]) < 1e-9);
    }
}

TEST_CASE("fft2/ifft2 round-trip is exact to 1e-9") {
    Rng rng(502);
    // Power-of-two and padded (non-power-of-two) sizes.
    const std::pair<std::size_t, std::size_t> sizes[] = {{16, 16}, {32, 8}, {12, 20}, {9, 33}};
    for (const auto& [h, w] : sizes) {
        GrayImage img = noise_image(rng, std::max<std::size_t>(8, h), std::max<std::size_t>(8, w));
        const GrayImage back = ifft2(fft2(img));
        REQUIRE(back.height == img.height);
        REQUIRE(back.width == img.width);
        for (std::size_t i = 0; i < img.v.size(); ++i) CHECK(std::fabs(back.v[i] - img.v[i]) < 1e-9);
    }
}

TEST_CASE("fft2 DC bin is the pixel sum") {
    Rng rng(503);
    GrayImage img = noise_image(rng, 16, 16);
    const Spectrum s = fft2(img);
    double sum = 0.0;
    for (double v : img.v) sum += v;
    CHECK(std::abs(s.bins[0] - std::complex<double>(sum, 0.0)) < 1e-9);
}

TEST_CASE("fft_highpass flattens constants and keeps edge energy local") {
    GrayImage flat(32, 32);
    std::fill(flat.v.begin(), flat.v.end(), 0.7);
    const GrayImage hp = fft_highpass(flat, 0.1);
    for (double v : hp.v) CHECK(v == 0.0);

    // Vertical step: response concentrates at the discontinuities. The
    // transform sees the image as periodic, so both the real step (cols
    // 15/16) and the wrap seam (cols 0/31) count; flat interiors must stay
    // quiet relative to them.
    GrayImage step(32, 32);
    for (std::size_t r = 0; r < 32; ++r)
        for (std::size_t c = 0; c < 32; ++c) step.v[r * 32 + c] = c < 16 ? 0.2 : 0.8;
    const GrayImage hs = fft_highpass(step, 0.1);
    std::vector<double> sorted = hs.v;
    std::sort(sorted.begin(), sorted.end());
    const double med = sorted[sorted.size() / 2];
    auto col_score = [&](std::size_t c) {
        double s = 0.0;
        for (std::size_t r = 0; r < 32; ++r) s += std::fabs(hs.v[r * 32 + c] - med);
        return s;
    };
    const double at_step = col_score(15) + col_score(16);
    const double at_flat = col_score(8) + col_score(24);
    CHECK(at_step > 3.0 * at_flat);
    for (double v : hs.v) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    CHECK_THROWS_AS(fft_highpass(step, 0.9), ParamError);
}

TEST_CASE("canny localizes a step edge within one pixel") {
    GrayImage step(32, 32);
    for (std::size_t r = 0; r < 32; ++r)
        for (std::size_t c = 0; c < 32; ++c) step.v[r * 32 + c] = c < 16 ? 0.2 : 0.8;
    const BinaryMask e = canny_edges(step, 1.0, 0.1, 0.3);
    CHECK(e.count() > 0);
    // True boundary lies between columns 15 and 16.
    for (std::size_t r = 0; r < 32; ++r)
        for (std::size_t c = 0; c < 32; ++c)
            if (e.bits[r * 32 + c]) {
                CHECK(c >= 15);
                CHECK(c <= 16);
            }
    // Every row crosses the edge somewhere.
    for (std::size_t r = 0; r < 32; ++r) {
        bool hit = false;
        for (std::size_t c = 0; c < 32; ++c) hit |= (e.bits[r * 32 + c] != 0);
        CHECK(hit);
    }
}

TEST_CASE("canny on a flat image is empty, and thresholds validate") {
    GrayImage flat(16, 16);
    std::fill(flat.v.begin(), flat.v.end(), 0.42);
    CHECK(canny_edges(flat).count() == 0);
    CHECK_THROWS_AS(canny_edges(flat, 1.0, 0.5, 0.3), ParamError);
    CHECK_THROWS_AS(gaussian_blur(flat, 0.0), ParamError);
}

TEST_CASE("canny detects a circle boundary near the true radius") {
    GrayImage img(48, 48);
    const double cy = 24.0, cx = 24.0, rad = 12.0;
    for (std::size_t r = 0; r < 48; ++r)
        for (std::size_t c = 0; c < 48; ++c)
            img.v[r * 48 + c] = std::hypot(r - cy, c - cx) <= rad ? 0.9 : 0.1;
    const BinaryMask e = canny_edges(img);
    CHECK(e.count() > 40);  // roughly the circumference
    for (std::size_t r = 0; r < 48; ++r)
        for (std::size_t c = 0; c < 48; ++c)
            if (e.bits[r * 48 + c]) {
                const double d = std::hypot(r - cy, c - cx);
                CHECK(d > rad - 2.5);
                CHECK(d < rad + 2.5);
            }
}

TEST_CASE("slic labels form a full partition of connected regions") {
    Rng rng(504);
    for (int trial = 0; trial < 12; ++trial) {
        GrayImage img = trial % 2 == 0 ? blobby_image(rng, 48, 48) : noise_image(rng, 40, 56);
        const SlicResult s = slic_superpixels(img, 64, 10.0, 10);
        REQUIRE(s.num_labels > 0);
        // Partition: every pixel labeled in range.
        for (int l : s.labels) {
            REQUIRE(l >= 0);
            REQUIRE(l < s.num_labels);
        }
        // Every label used at least once.
        std::vector<long> sizes(static_cast<std::size_t>(s.num_labels), 0);
        for (int l : s.labels) ++sizes[static_cast<std::size_t>(l)];
        for (long sz : sizes) CHECK(sz > 0);

        // 4-connectivity: flood fill from the first pixel of each label must
        // reach every pixel of that label.
        const long H = static_cast<long>(s.height), W = static_cast<long>(s.width);
        std::vector<char> seen(static_cast<std::size_t>(H * W), 0);
        std::vector<long> stack;
        std::vector<long> reached(static_cast<std::size_t>(s.num_labels), 0);
        std::vector<char> started(static_cast<std::size_t>(s.num_labels), 0);
        for (long i = 0; i < H * W; ++i) {
            const int l = s.labels[static_cast<std::size_t>(i)];
            if (started[static_cast<std::size_t>(l)]) continue;
            started[static_cast<std::size_t>(l)] = 1;
            stack.assign(1, i);
            seen[static_cast<std::size_t>(i)] = 1;
            long cnt = 0;
            while (!stack.empty()) {
                const long p = stack.back();
                stack.pop_back();
                ++cnt;
                const long r = p / W, c = p % W;
                const long nb[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
                for (const auto& n : nb) {
                    if (n[0] < 0 || n[0] >= H || n[1] < 0 || n[1] >= W) continue;
                    const long j = n[0] * W + n[1];
                    if (!seen[static_cast<std::size_t>(j)] && s.labels[static_cast<std::size_t>(j)] == l) {
                        seen[static_cast<std::size_t>(j)] = 1;
                        stack.push_back(j);
                    }
                }
            }
            reached[static_cast<std::size_t>(l)] = cnt;
        }
        for (int l = 0; l < s.num_labels; ++l)
            CHECK(reached[static_cast<std::size_t>(l)] == sizes[static_cast<std::size_t>(l)]);
    }
}

TEST_CASE("slic is deterministic and sensitive to k") {
    Rng rng(505);
    GrayImage img = blobby_image(rng, 48, 48);
    const SlicResult a = slic_superpixels(img, 64, 10.0, 10);
    const SlicResult b = slic_superpixels(img, 64, 10.0, 10);
    CHECK(a.labels == b.labels);
    CHECK(a.num_labels == b.num_labels);
    // Label count lands near the requested k on a well-behaved image.
    CHECK(a.num_labels >= 32);
    CHECK(a.num_labels <= 128);

    const SlicResult small = slic_superpixels(img, 16, 10.0, 10);
    CHECK(small.num_labels < a.num_labels);
    CHECK_THROWS_AS(slic_superpixels(img, 0, 10.0, 10), ParamError);
}

TEST_CASE("slic boundaries separate regions and only regions") {
    Rng rng(506);
    GrayImage img = blobby_image(rng, 48, 48);
    const SlicResult s = slic_superpixels(img, 64, 10.0, 10);
    const BinaryMask b = slic_boundaries(s);
    CHECK(b.count() > 0);
    const long H = 48, W = 48;
    for (long r = 0; r < H; ++r)
        for (long c = 0; c < W; ++c) {
            const int l = s.labels[r * W + c];
            bool differs = false;
            const long nb[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
            for (const auto& n : nb) {
                if (n[0] < 0 || n[0] >= H || n[1] < 0 || n[1] >= W) continue;
                differs |= (s.labels[n[0] * W + n[1]] != l);
            }
            CHECK(static_cast<int>(b.bits[r * W + c]) == (differs ? 1 : 0));
        }
}

TEST_CASE("prior stack is aligned, bounded, and deterministic") {
    Rng rng(507);
    GrayImage img = blobby_image(rng, 64, 64);
    const PriorStack st = build_prior_stack(img);
    REQUIRE(st.data.size() == 3 * 64 * 64);
    for (std::size_t i = 0; i < 64 * 64; ++i) {
        const double e = st.data[i], s = st.data[64 * 64 + i], h = st.data[2 * 64 * 64 + i];
        CHECK((e == 0.0 || e == 1.0));
        CHECK((s == 0.0 || s == 1.0));
        CHECK(h >= 0.0);
        CHECK(h <= 1.0);
    }
    const PriorStack again = build_prior_stack(img);
    CHECK(st.data == again.data);
}
