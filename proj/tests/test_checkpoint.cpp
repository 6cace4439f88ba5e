#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <vector>

#include "robox/checkpoint.hpp"
#include "robox/pipeline.hpp"

using namespace robox;

namespace {

/// Rewrite the trailing hash so deliberate mutations test the layer behind
/// the checksum.
void refresh_checksum(std::vector<unsigned char>& bytes) {
    const std::uint64_t h = robox::detail::fnv1a(bytes, bytes.size() - 8);
    for (int i = 0; i < 8; ++i)
        bytes[bytes.size() - 8 + i] = static_cast<unsigned char>((h >> (8 * i)) & 0xff);
}

}  // namespace

TEST_CASE("checkpoint round trip preserves config and weights") {
    ModelConfig cfg = ModelConfig::reduced();
    Model m(cfg, 5);
    const std::vector<unsigned char> bytes = checkpoint_bytes(m);

    SECTION("serialization is deterministic") {
        CHECK(checkpoint_bytes(m) == bytes);
    }

    SECTION("weights survive within f32 quantization") {
        Model back = load_checkpoint_bytes(bytes);
        CHECK(back.config() == cfg);
        const auto& pa = m.named_params();
        const auto& pb = back.named_params();
        REQUIRE(pa.size() == pb.size());
        for (std::size_t i = 0; i < pa.size(); ++i) {
            CHECK(pa[i].first == pb[i].first);
            REQUIRE(pa[i].second.numel() == pb[i].second.numel());
            for (std::size_t k = 0; k < pa[i].second.numel(); ++k) {
                const double a = pa[i].second[k];
                const double b = pb[i].second[k];
                CHECK(std::abs(a - b) <= std::abs(a) * 1e-6 + 1e-30);
                CHECK(b == static_cast<double>(static_cast<float>(a)));
            }
        }
    }

    SECTION("save, load, save is byte-identical") {
        // f32 re-quantization of already-quantized weights is a fixed point.
        Model back = load_checkpoint_bytes(bytes);
        CHECK(checkpoint_bytes(back) == bytes);
    }

    SECTION("file round trip equals byte round trip") {
        const std::string path = "ckpt_roundtrip_test.bin";
        save_checkpoint(m, path);
        Model back = load_checkpoint(path);
        Model from_bytes = load_checkpoint_bytes(bytes);
        const auto& pa = from_bytes.named_params();
        const auto& pb = back.named_params();
        REQUIRE(pa.size() == pb.size());
        for (std::size_t i = 0; i < pa.size(); ++i)
            CHECK(pa[i].second.data() == pb[i].second.data());
        std::remove(path.c_str());
    }
}

TEST_CASE("checkpoint round trip keeps outputs within drift tolerance") {
    ModelConfig cfg;  // full size, the shipping architecture
    Model m(cfg, 17);
    Model back = load_checkpoint_bytes(checkpoint_bytes(m));

    GrayImage img(cfg.image_size, cfg.image_size);
    Rng rng(3);
    for (auto& v : img.v) v = rng.uniform();
    const Box box{12, 10, 50, 48};

    nn::Tensor bt = nn::Tensor::from({4}, {box.x1, box.y1, box.x2, box.y2});
    auto out_a = m.decode(m.encode_image(m.image_to_tensor(img)), m.encode_box(bt));
    auto out_b = back.decode(back.encode_image(back.image_to_tensor(img)), back.encode_box(bt));

    double max_diff = 0.0;
    for (std::size_t i = 0; i < out_a.mask_logits.numel(); ++i)
        max_diff = std::max(max_diff, std::abs(out_a.mask_logits[i] - out_b.mask_logits[i]));
    for (std::size_t i = 0; i < out_a.iou_pred.numel(); ++i)
        max_diff = std::max(max_diff, std::abs(out_a.iou_pred[i] - out_b.iou_pred[i]));
    CHECK(max_diff <= 1e-5);
}

TEST_CASE("corrupt checkpoints are rejected") {
    Model m(ModelConfig::reduced(), 5);
    const std::vector<unsigned char> good = checkpoint_bytes(m);

    SECTION("flipped payload byte") {
        auto bad = good;
        bad[bad.size() / 2] ^= 0x40;
        CHECK_THROWS_AS(load_checkpoint_bytes(bad), IoError);
    }

    SECTION("flipped checksum byte") {
        auto bad = good;
        bad[bad.size() - 1] ^= 0x01;
        CHECK_THROWS_AS(load_checkpoint_bytes(bad), IoError);
    }

    SECTION("truncation at several cut points") {
        for (std::size_t keep : {std::size_t{0}, std::size_t{3}, std::size_t{12},
                                 good.size() / 2, good.size() - 1}) {
            std::vector<unsigned char> bad(good.begin(), good.begin() + keep);
            CHECK_THROWS_AS(load_checkpoint_bytes(bad), IoError);
        }
    }

    SECTION("wrong magic") {
        auto bad = good;
        bad[0] = 'X';
        CHECK_THROWS_AS(load_checkpoint_bytes(bad), IoError);
    }

    SECTION("unsupported version with a valid checksum") {
        auto bad = good;
        bad[4] = 99;
        refresh_checksum(bad);
        CHECK_THROWS_WITH(load_checkpoint_bytes(bad),
                          Catch::Matchers::ContainsSubstring("version"));
    }

    SECTION("missing file") {
        CHECK_THROWS_AS(load_checkpoint("no_such_checkpoint_file.bin"), IoError);
    }
}
