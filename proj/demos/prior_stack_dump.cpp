// Renders the structural prior channels for one synthetic image so each can
// be inspected: edge map, superpixel boundaries, and the high-frequency
// residue the sketch branch consumes.

#include <cstdio>
#include <filesystem>

#include "robox/priors.hpp"
#include "robox/training.hpp"

using namespace robox;

int main() {
    auto data = gen_dataset(1, 21, 64);
    const GrayImage& img = data[0].image;

    const PriorConfig cfg;
    const PriorStack stack = build_prior_stack(img, cfg);

    std::filesystem::create_directories("prior_out");
    write_pgm("prior_out/input.pgm", img);
    const char* names[3] = {"edges", "superpixel_boundaries", "highpass"};
    for (int c = 0; c < 3; ++c) {
        GrayImage ch(stack.height, stack.width);
        for (std::size_t i = 0; i < ch.v.size(); ++i)
            ch.v[i] = stack.data[c * ch.v.size() + i];
        write_pgm(std::string("prior_out/") + names[c] + ".pgm", ch);
        std::printf("wrote prior_out/%s.pgm\n", names[c]);
    }

    const SlicResult slic = slic_superpixels(img, cfg.slic_k, cfg.slic_compactness,
                                             cfg.slic_iters);
    std::printf("superpixels: %d regions for k=%zu\n", slic.num_labels, cfg.slic_k);
    std::printf("edge pixels: %zu\n", canny_edges(img, cfg.canny_sigma, cfg.canny_low,
                                                  cfg.canny_high)
                                          .count());
    return 0;
}
