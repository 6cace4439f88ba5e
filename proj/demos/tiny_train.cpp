// End-to-end miniature run: fit a small base on clean prompts, fit the
// robustness heads on corrupted prompts, then score both phases under the
// severity protocol. Sized to finish in seconds.

#include <cstdio>

#include "robox/evaluation.hpp"
#include "robox/training.hpp"

using namespace robox;

int main() {
    ModelConfig cfg = ModelConfig::reduced();
    auto train = gen_dataset(24, 1, cfg.image_size);
    auto val = gen_dataset(8, 2, cfg.image_size, 5000);
    auto test = gen_dataset(8, 3, cfg.image_size, 9000);

    TrainConfig tc;
    tc.epochs = 6;
    tc.batch = 8;
    tc.lr = 3e-3;
    tc.seed = 0;

    Model model(cfg, 0);
    std::printf("base phase (%zu train / %zu val)\n", train.size(), val.size());
    auto rep = pretrain(model, train, val, tc);
    for (std::size_t e = 0; e < rep.train_loss.size(); ++e)
        std::printf("  epoch %zu  loss %.4f  val dice %.4f\n", e + 1, rep.train_loss[e],
                    rep.val_dice[e]);

    TrainConfig hc = tc;
    hc.epochs = 4;
    std::printf("head phase\n");
    auto hrep = train_heads(model, train, val, hc);
    for (std::size_t e = 0; e < hrep.train_loss.size(); ++e)
        std::printf("  epoch %zu  loss %.4f\n", e + 1, hrep.train_loss[e]);
    std::printf("  corrupted-prompt val dice %.4f\n", hrep.final_val_dice);

    std::vector<EvalResult> results = {
        evaluate(model, test, PipelineFlags{false, false, false, false}, 7, "baseline"),
        evaluate(model, test, PipelineFlags{true, true, true, true}, 7, "full")};
    std::printf("\n%-10s %-8s %8s %8s\n", "config", "bucket", "dice%", "pr%");
    for (const auto& r : results)
        for (const auto& b : r.buckets) {
            if (b.has_pr)
                std::printf("%-10s %-8s %8.2f %8.2f\n", r.config_name.c_str(), b.name.c_str(),
                            b.dice_pct, b.pr_pct);
            else
                std::printf("%-10s %-8s %8.2f %8s\n", r.config_name.c_str(), b.name.c_str(),
                            b.dice_pct, "/");
        }
    return 0;
}
