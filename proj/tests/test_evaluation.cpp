#include <catch2/catch_amalgamated.hpp>

#include <cstdio>

#include "robox/evaluation.hpp"

using namespace robox;

namespace {

BinaryMask mask_of(std::size_t h, std::size_t w, std::initializer_list<std::size_t> on) {
    BinaryMask m(h, w);
    for (std::size_t i : on) m.bits[i] = 1;
    return m;
}

}  // namespace

TEST_CASE("prompt consistency metric against pixel-count arithmetic") {
    SECTION("identical masks score 100") {
        BinaryMask m = mask_of(8, 8, {0, 9, 18});
        CHECK(pr_metric({m, m, m}) == 100.0);
    }

    SECTION("subset pair follows the closed form") {
        // M1 = {a}, M2 = {a, b}: union is M2, dice(M1,U) = 2*1/3, dice(M2,U) = 1.
        BinaryMask m1 = mask_of(8, 8, {10});
        BinaryMask m2 = mask_of(8, 8, {10, 11});
        const double expect = 100.0 * (2.0 / 3.0 + 1.0) / 2.0;
        CHECK(pr_metric({m1, m2}) == Catch::Approx(expect).epsilon(1e-12));
    }

    SECTION("all-empty masks score 100 by the empty-overlap convention") {
        BinaryMask e(8, 8);
        CHECK(pr_metric({e, e}) == 100.0);
    }

    SECTION("score is 100 only when every mask equals the union") {
        Rng rng(3);
        for (int trial = 0; trial < 200; ++trial) {
            std::vector<BinaryMask> masks;
            bool all_equal = true;
            for (int i = 0; i < 3; ++i) {
                BinaryMask m(8, 8);
                for (auto& b : m.bits) b = rng.uniform() < 0.3 ? 1 : 0;
                masks.push_back(m);
                if (i > 0 && !(masks[i] == masks[0])) all_equal = false;
            }
            const double pr = pr_metric(masks);
            CHECK(pr <= 100.0);
            if (all_equal)
                CHECK(pr == 100.0);
            else
                CHECK(pr < 100.0);
        }
    }

    SECTION("rejects degenerate input") {
        BinaryMask m(8, 8);
        CHECK_THROWS_AS(pr_metric({m}), ParamError);
        CHECK_THROWS_AS(pr_metric({m, BinaryMask(8, 9)}), ShapeError);
    }
}

TEST_CASE("perturbation draws are paired by their keys alone") {
    auto data = gen_dataset(4, 77, 64);
    const BucketSpec spec{"10-20", 0.10, 0.20, 5};

    SECTION("same key replays the same box") {
        for (const auto& s : data)
            for (std::size_t t = 0; t < 3; ++t) {
                Box a = draw_perturbed_box(s, 123, 2, t, spec, 64);
                Box b = draw_perturbed_box(s, 123, 2, t, spec, 64);
                CHECK(a == b);
            }
    }

    SECTION("changing any key changes the draw") {
        const Sample& s = data[0];
        Box base = draw_perturbed_box(s, 123, 2, 0, spec, 64);
        CHECK(!(draw_perturbed_box(s, 124, 2, 0, spec, 64) == base));
        CHECK(!(draw_perturbed_box(s, 123, 1, 0, spec, 64) == base));
        CHECK(!(draw_perturbed_box(s, 123, 2, 1, spec, 64) == base));
        CHECK(!(draw_perturbed_box(data[1], 123, 2, 0, spec, 64) == base));
    }

    SECTION("fallback flag reports rejected draws") {
        Rng rng(1);
        bool fb = true;
        perturb_box(data[0].gt_box, 0.10, 0.20, rng, 64, 64, 50, &fb);
        CHECK(!fb);
        perturb_box(data[0].gt_box, 0.10, 0.20, rng, 64, 64, 0, &fb);
        CHECK(fb);
    }
}

TEST_CASE("protocol behavior under predictor stubs") {
    auto test = gen_dataset(20, 31, 64);

    SECTION("a perfect oracle scores 100 everywhere") {
        auto oracle = [](const Sample& s, const Box&) { return s.gt; };
        EvalResult r = evaluate_predictor(oracle, test, 5, "oracle");
        for (const auto& b : r.buckets) {
            CHECK(b.dice_pct == 100.0);
            if (b.has_pr) CHECK(b.pr_pct == 100.0);
        }
    }

    SECTION("a box-rasterizing predictor degrades with severity") {
        auto raster = [](const Sample& s, const Box& box) {
            return rasterize_box(box, s.image.height, s.image.width);
        };
        EvalResult r = evaluate_predictor(raster, test, 5, "raster");
        REQUIRE(r.buckets.size() == 4);
        for (std::size_t b = 1; b < 4; ++b) CHECK(r.buckets[b].dice_pct < r.buckets[b - 1].dice_pct);
        for (std::size_t b = 2; b < 4; ++b) CHECK(r.buckets[b].pr_pct < r.buckets[b - 1].pr_pct);
    }

    SECTION("bucket specs are validated") {
        auto oracle = [](const Sample& s, const Box&) { return s.gt; };
        CHECK_THROWS_AS(evaluate_predictor(oracle, test, 5, "x", {{"bad", 0.0, 0.5, 5}}),
                        ParamError);
        CHECK_THROWS_AS(evaluate_predictor(oracle, test, 5, "x", {{"bad", 0.0, 0.1, 1}}),
                        ParamError);
        CHECK_THROWS_AS(evaluate_predictor(oracle, test, 5, "x", {{"bad", 0.0, 0.0, 3}}),
                        ParamError);
        CHECK_THROWS_AS(evaluate_predictor(oracle, test, 5, "x", {}), ParamError);
        CHECK_THROWS_AS(evaluate_predictor(oracle, {}, 5, "x"), ParamError);
    }
}

TEST_CASE("severity protocol shapes, records, and determinism") {
    ModelConfig cfg = ModelConfig::reduced();
    Model m(cfg, 4);
    auto test = gen_dataset(6, 55, cfg.image_size);
    const PipelineFlags full{true, true, true, true};

    EvalResult r = evaluate(m, test, full, 9, "full");

    SECTION("structure follows the bucket specs") {
        CHECK(r.config_name == "full");
        CHECK(r.n_images == 6);
        REQUIRE(r.buckets.size() == 4);
        CHECK(r.buckets[0].name == "clean");
        CHECK(!r.buckets[0].has_pr);
        for (std::size_t b = 1; b < 4; ++b) {
            CHECK(r.buckets[b].has_pr);
            CHECK(r.buckets[b].trials == 5);
        }
        for (const auto& b : r.buckets) {
            CHECK(b.dice_pct >= 0.0);
            CHECK(b.dice_pct <= 100.0);
            CHECK(b.pr_pct >= 0.0);
            CHECK(b.pr_pct <= 100.0);
        }
    }

    SECTION("aggregates equal the mean of the per-image records") {
        for (const auto& b : r.buckets) {
            REQUIRE(b.records.size() == 6);
            double dsum = 0.0, psum = 0.0;
            std::size_t fb = 0;
            for (const auto& rec : b.records) {
                REQUIRE(rec.trial_dice_pct.size() == (b.has_pr ? b.trials : 1));
                double t = 0.0;
                for (double d : rec.trial_dice_pct) t += d;
                dsum += t / static_cast<double>(rec.trial_dice_pct.size());
                psum += rec.pr_pct;
                fb += rec.fallbacks;
            }
            CHECK(b.dice_pct == Catch::Approx(dsum / 6.0).epsilon(1e-12));
            if (b.has_pr) CHECK(b.pr_pct == Catch::Approx(psum / 6.0).epsilon(1e-12));
            CHECK(b.fallbacks == fb);
        }
    }

    SECTION("repeat evaluation is bit-identical") {
        EvalResult r2 = evaluate(m, test, full, 9, "full");
        CHECK(eval_to_json(r) == eval_to_json(r2));
    }

    SECTION("consistency is exactly 100 when prompts cannot move") {
        // A vanishing severity band leaves every box numerically at the
        // reference, so all trials produce the same mask.
        std::vector<BucketSpec> tiny = {{"clean", 0.0, 0.0, 1}, {"frozen", 0.0, 1e-12, 2}};
        EvalResult rt = evaluate(m, test, full, 9, "full", tiny);
        REQUIRE(rt.buckets.size() == 2);
        CHECK(rt.buckets[1].pr_pct == 100.0);
        CHECK(rt.buckets[1].dice_pct == Catch::Approx(rt.buckets[0].dice_pct).margin(1e-9));
    }
}

TEST_CASE("report files are stable and parse back") {
    ModelConfig cfg = ModelConfig::reduced();
    Model m(cfg, 4);
    auto test = gen_dataset(3, 66, cfg.image_size);
    std::vector<EvalResult> results = {
        evaluate(m, test, PipelineFlags{false, false, false, false}, 9, "baseline"),
        evaluate(m, test, PipelineFlags{true, true, true, true}, 9, "full")};

    SECTION("json report round trips through the parser") {
        const std::string path = "report_test.json";
        write_report_json(results, path);
        const std::string first = read_text_file(path);
        write_report_json(results, path);
        CHECK(read_text_file(path) == first);

        auto back = read_report_json(path);
        REQUIRE(back.size() == 2);
        CHECK(eval_to_json(back[0]) == eval_to_json(results[0]));
        CHECK(eval_to_json(back[1]) == eval_to_json(results[1]));

        auto j = nlohmann::json::parse(first);
        CHECK(j["results"][0]["config"] == "baseline");
        CHECK(j["results"][0]["buckets"][0]["pr_pct"] == "/");
        CHECK(j["results"][0]["buckets"][1]["pr_pct"].is_number());
        CHECK(j["results"][0]["buckets"][1]["records"].size() == 3);
        std::remove(path.c_str());
    }

    SECTION("csv report has one row per config and bucket") {
        const std::string path = "report_test.csv";
        write_report_csv(results, path);
        const std::string text = read_text_file(path);
        std::size_t rows = 0;
        for (char c : text) rows += c == '\n';
        CHECK(rows == 1 + 2 * 4);
        CHECK(text.find("config,seed,bucket") == 0);
        CHECK(text.find("clean,0.00,0.00,1,") != std::string::npos);
        CHECK(text.find(",/,") != std::string::npos);
        std::remove(path.c_str());
    }

    SECTION("degradation plot renders a valid raster") {
        const std::string path = "report_plot_test.ppm";
        write_degradation_plot(results, path);
        const std::string text = read_text_file(path);
        CHECK(text.substr(0, 2) == "P6");
        CHECK(text.size() > 640 * 420);
        std::remove(path.c_str());
    }

    SECTION("flag json round trip") {
        PipelineFlags f{true, false, true, false};
        PipelineFlags g = flags_from_json(flags_to_json(f));
        CHECK(g.use_prm == f.use_prm);
        CHECK(g.use_pem == f.use_pem);
        CHECK(g.use_sie == f.use_sie);
        CHECK(g.iterate == f.iterate);
    }
}

TEST_CASE("inference traces serialize with full fidelity") {
    ModelConfig cfg = ModelConfig::reduced();
    Model m(cfg, 4);
    auto data = gen_dataset(1, 88, cfg.image_size);
    SegmentContext ctx(m, data[0].image, true);
    auto res = segment(ctx, data[0].gt_box, PipelineFlags{true, true, true, true});

    nlohmann::json j = trace_to_json(res.trace);
    CHECK(j["refine_steps"].size() == res.trace.refine_steps.size());
    CHECK(j["points"].size() == res.trace.points.size());
    CHECK(j["selected_mask"] == res.trace.selected_mask);
    CHECK(j["input_box"][0] == res.trace.input_box.x1);
    CHECK(j["refined_box"][3] == res.trace.refined_box.y2);
    REQUIRE(j["iou_pred"].size() == cfg.n_mask_tokens);
    for (std::size_t i = 0; i < cfg.n_mask_tokens; ++i)
        CHECK(j["iou_pred"][i] == res.trace.iou_pred[i]);
}
