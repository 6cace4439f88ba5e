// Segments one synthetic image under every stage configuration and shows
// how the prompt, refinement, and point proposals interact. Runs with fresh
// weights, so scores are noise; the point is the API surface and the trace.

#include <cstdio>

#include "robox/evaluation.hpp"
#include "robox/pipeline.hpp"
#include "robox/training.hpp"

using namespace robox;

namespace {

void ascii_mask(const BinaryMask& m, const BinaryMask& gt) {
    for (std::size_t y = 0; y < m.height; y += 2) {
        for (std::size_t x = 0; x < m.width; x += 2) {
            const bool pred = m.at(y, x) != 0;
            const bool ref = gt.at(y, x) != 0;
            std::putchar(pred && ref ? '#' : pred ? '+' : ref ? '.' : ' ');
        }
        std::putchar('\n');
    }
}

}  // namespace

int main() {
    ModelConfig cfg;
    Model model(cfg, 42);
    auto data = gen_dataset(1, 7, cfg.image_size);
    const Sample& s = data[0];

    // Corrupt the prompt the way a hurried annotator would.
    Rng rng(99);
    const Box noisy = perturb_box(s.gt_box, 0.15, 0.25, rng, cfg.image_size, cfg.image_size);
    std::printf("reference box: [%.1f %.1f %.1f %.1f]\n", s.gt_box.x1, s.gt_box.y1,
                s.gt_box.x2, s.gt_box.y2);
    std::printf("noisy prompt:  [%.1f %.1f %.1f %.1f]\n\n", noisy.x1, noisy.y1, noisy.x2,
                noisy.y2);

    SegmentContext ctx(model, s.image, true);
    const struct {
        const char* name;
        PipelineFlags flags;
    } configs[] = {
        {"baseline", {false, false, false, false}},
        {"refine", {true, false, false, true}},
        {"refine+points", {true, true, false, true}},
        {"all stages", {true, true, true, true}},
    };

    std::printf("%-14s %8s %7s %7s\n", "config", "dice", "steps", "points");
    for (const auto& c : configs) {
        auto res = segment(ctx, noisy, c.flags);
        std::printf("%-14s %8.4f %7zu %7zu\n", c.name, dice(res.mask, s.gt),
                    res.trace.refine_steps.size(), res.trace.points.size());
    }

    auto res = segment(ctx, noisy, PipelineFlags{true, true, true, true});
    std::printf("\nfull-stage trace:\n%s\n", trace_to_json(res.trace).dump(2).c_str());
    std::printf("\nmask overlay (# both, + prediction, . reference):\n");
    ascii_mask(res.mask, s.gt);
    return 0;
}
