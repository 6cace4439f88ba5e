#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "robox/checkpoint.hpp"
#include "robox/evaluation.hpp"
#include "robox/image.hpp"
#include "robox/pipeline.hpp"
#include "robox/training.hpp"

using namespace robox;
namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------------------
// Dataset directory format: manifest.json plus one image and mask PGM per
// sample. Boxes live in the manifest at full precision; the 8-bit image
// quantization is far below the synthetic noise floor.
// ---------------------------------------------------------------------------

std::string sample_stem(std::size_t i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%06zu", i);
    return buf;
}

void write_dataset(const std::string& dir, const std::vector<Sample>& samples,
                   std::size_t image_size, std::uint64_t seed, std::uint64_t id_base) {
    fs::create_directories(dir);
    nlohmann::json manifest;
    manifest["image_size"] = image_size;
    manifest["seed"] = seed;
    manifest["id_base"] = id_base;
    manifest["samples"] = nlohmann::json::array();
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const Sample& s = samples[i];
        const std::string stem = sample_stem(i);
        write_pgm(dir + "/img_" + stem + ".pgm", s.image);
        write_pgm(dir + "/msk_" + stem + ".pgm", s.gt);
        manifest["samples"].push_back(
            {{"id", s.id},
             {"image", "img_" + stem + ".pgm"},
             {"mask", "msk_" + stem + ".pgm"},
             {"box", {s.gt_box.x1, s.gt_box.y1, s.gt_box.x2, s.gt_box.y2}}});
    }
    write_text_file(dir + "/manifest.json", manifest.dump(2) + "\n");
}

std::vector<Sample> load_dataset(const std::string& path) {
    // Accept either the manifest file itself or the directory holding it.
    std::string dir = path;
    std::string file = path + "/manifest.json";
    if (path.size() > 5 && path.substr(path.size() - 5) == ".json") {
        file = path;
        const auto slash = path.find_last_of('/');
        dir = slash == std::string::npos ? "." : path.substr(0, slash);
    }
    const auto manifest = nlohmann::json::parse(read_text_file(file));
    std::vector<Sample> out;
    for (const auto& js : manifest.at("samples")) {
        Sample s;
        s.id = js.at("id").get<std::uint64_t>();
        s.image = read_gray_pgm(dir + "/" + js.at("image").get<std::string>());
        s.gt = read_mask_pgm(dir + "/" + js.at("mask").get<std::string>());
        const auto& b = js.at("box");
        s.gt_box = Box{b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
                       b.at(3).get<double>()};
        out.push_back(std::move(s));
    }
    if (out.empty()) throw IoError("load_dataset: " + dir + " holds no samples");
    return out;
}

Box parse_box(const std::string& text) {
    std::vector<double> v;
    std::size_t pos = 0;
    while (pos <= text.size() && v.size() < 5) {
        const std::size_t comma = std::min(text.find(',', pos), text.size());
        try {
            v.push_back(std::stod(text.substr(pos, comma - pos)));
        } catch (const std::exception&) {
            throw ParamError("infer: cannot parse box coordinate in '" + text + "'");
        }
        pos = comma + 1;
        if (comma == text.size()) break;
    }
    if (v.size() != 4) throw ParamError("infer: box must be x1,y1,x2,y2");
    return Box{v[0], v[1], v[2], v[3]};
}

void print_phase_report(const char* label, const PhaseReport& rep) {
    std::printf("%s: %zu epochs\n", label, rep.epochs_run);
    for (std::size_t e = 0; e < rep.train_loss.size(); ++e) {
        std::printf("  epoch %2zu  loss %.4f", e + 1, rep.train_loss[e]);
        if (e < rep.val_dice.size()) std::printf("  val dice %.4f", rep.val_dice[e]);
        std::printf("\n");
    }
    std::printf("  final val dice %.4f\n", rep.final_val_dice);
}

void print_eval_table(const std::vector<EvalResult>& results) {
    std::printf("%-12s %-8s %10s %10s\n", "config", "bucket", "dice%", "pr%");
    for (const auto& r : results)
        for (const auto& b : r.buckets) {
            if (b.has_pr)
                std::printf("%-12s %-8s %10.2f %10.2f\n", r.config_name.c_str(),
                            b.name.c_str(), b.dice_pct, b.pr_pct);
            else
                std::printf("%-12s %-8s %10.2f %10s\n", r.config_name.c_str(), b.name.c_str(),
                            b.dice_pct, "/");
        }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"robust box-prompted segmentation toolkit"};
    app.require_subcommand(1);
    app.set_config("--config", "", "read options from an INI/TOML file");

    // gen-data ---------------------------------------------------------------
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset directory");
    std::string gen_out;
    std::size_t gen_count = 100, gen_size = 64;
    std::uint64_t gen_seed = 0, gen_id_base = 0;
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--count", gen_count, "number of samples");
    gen->add_option("--image-size", gen_size, "square image side");
    gen->add_option("--seed", gen_seed, "generator seed");
    gen->add_option("--id-base", gen_id_base, "first sample id");

    // shared training options --------------------------------------------------
    TrainConfig tc;
    std::string data_dir, val_dir, ckpt_out, base_ckpt;
    auto add_train_opts = [&](CLI::App* cmd) {
        cmd->add_option("--data", data_dir, "training dataset directory")->required();
        cmd->add_option("--val", val_dir, "validation dataset directory")->required();
        cmd->add_option("--out", ckpt_out, "checkpoint to write")->required();
        cmd->add_option("--epochs", tc.epochs, "training epochs");
        cmd->add_option("--batch", tc.batch, "gradient accumulation window");
        cmd->add_option("--lr", tc.lr, "learning rate");
        cmd->add_option("--weight-decay", tc.weight_decay, "decoupled weight decay");
        cmd->add_option("--seed", tc.seed, "training seed");
    };

    auto* pre = app.add_subcommand("pretrain", "fit the base on clean prompts");
    add_train_opts(pre);
    std::size_t pre_d_model = 64, pre_image_size = 64;
    std::uint64_t init_seed = 0;
    pre->add_option("--aux-point-prob", tc.aux_point_prob, "chance of extra point prompts");
    pre->add_option("--stop-dice", tc.stop_dice, "stop once val dice reaches this");
    pre->add_option("--init-seed", init_seed, "weight initialization seed");
    pre->add_option("--d-model", pre_d_model, "embedding width");
    pre->add_option("--image-size", pre_image_size, "expected image side");

    auto* trn = app.add_subcommand("train", "fit the robustness heads on corrupted prompts");
    add_train_opts(trn);
    trn->add_option("--base", base_ckpt, "pretrained checkpoint to start from")->required();
    trn->add_option("--perturb-lo", tc.perturb_lo, "minimum corruption severity");
    trn->add_option("--perturb-hi", tc.perturb_hi, "maximum corruption severity");

    // eval ---------------------------------------------------------------------
    auto* ev = app.add_subcommand("eval", "run the severity protocol and write reports");
    std::string ev_ckpt, ev_data, ev_json, ev_csv, ev_timing;
    std::uint64_t ev_seed = 0;
    std::vector<std::string> ev_configs;
    ev->add_option("--ckpt", ev_ckpt, "checkpoint to evaluate")->required();
    ev->add_option("--data", ev_data, "test dataset directory")->required();
    ev->add_option("--json", ev_json, "report JSON path");
    ev->add_option("--csv", ev_csv, "report CSV path");
    ev->add_option("--timing", ev_timing, "timing sidecar JSON path");
    ev->add_option("--seed", ev_seed, "perturbation seed");
    ev->add_option("--configs", ev_configs,
                   "configurations to run (baseline prm prm-pem full full-single)");

    // infer ----------------------------------------------------------------------
    auto* inf = app.add_subcommand("infer", "segment one image with a box prompt");
    std::string inf_ckpt, inf_image, inf_mask, inf_trace, inf_box, inf_gt;
    bool no_prm = false, no_pem = false, no_sie = false, no_iterate = false;
    inf->add_option("--ckpt", inf_ckpt, "checkpoint to load")->required();
    inf->add_option("--image", inf_image, "input PGM image")->required();
    inf->add_option("--box", inf_box, "prompt box as x1,y1,x2,y2")->required();
    inf->add_option("--gt", inf_gt, "reference mask PGM for scoring");
    inf->add_option("--mask", inf_mask, "output mask PGM path");
    inf->add_option("--trace", inf_trace, "output trace JSON path");
    inf->add_flag("--no-prm", no_prm, "disable box refinement");
    inf->add_flag("--no-pem", no_pem, "disable point proposals");
    inf->add_flag("--no-sie", no_sie, "disable sketch enrichment");
    inf->add_flag("--no-iterate", no_iterate, "single refinement step");

    // report -----------------------------------------------------------------------
    auto* rpt = app.add_subcommand("report", "merge report JSONs into tables and plots");
    std::vector<std::string> rpt_in;
    std::string rpt_csv, rpt_plot;
    rpt->add_option("--in", rpt_in, "report JSON files to read")->required();
    rpt->add_option("--csv", rpt_csv, "merged CSV to write");
    rpt->add_option("--plot", rpt_plot, "degradation-curve PPM to write");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*gen) {
            auto samples = gen_dataset(gen_count, gen_seed, gen_size, gen_id_base);
            write_dataset(gen_out, samples, gen_size, gen_seed, gen_id_base);
            std::printf("wrote %zu samples to %s\n", samples.size(), gen_out.c_str());
        } else if (*pre) {
            auto train = load_dataset(data_dir);
            auto val = load_dataset(val_dir);
            ModelConfig cfg;
            cfg.image_size = pre_image_size;
            cfg.d_model = pre_d_model;
            cfg.validate();
            Model m(cfg, init_seed);
            auto rep = pretrain(m, train, val, tc);
            print_phase_report("pretrain", rep);
            save_checkpoint(m, ckpt_out);
            std::printf("saved %s\n", ckpt_out.c_str());
        } else if (*trn) {
            Model m = load_checkpoint(base_ckpt);
            auto train = load_dataset(data_dir);
            auto val = load_dataset(val_dir);
            auto rep = train_heads(m, train, val, tc);
            print_phase_report("train", rep);
            save_checkpoint(m, ckpt_out);
            std::printf("saved %s\n", ckpt_out.c_str());
        } else if (*ev) {
            Model m = load_checkpoint(ev_ckpt);
            auto test = load_dataset(ev_data);
            if (ev_configs.empty())
                for (const auto& [name, flags] : named_configs()) ev_configs.push_back(name);
            std::vector<EvalResult> results;
            nlohmann::json timing;
            timing["configs"] = nlohmann::json::array();
            double total = 0.0;
            for (const auto& name : ev_configs) {
                auto it = named_configs().find(name);
                if (it == named_configs().end())
                    throw ParamError("eval: unknown config " + name);
                const auto t0 = std::chrono::steady_clock::now();
                results.push_back(evaluate(m, test, it->second, ev_seed, name));
                const double secs =
                    std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                        .count();
                timing["configs"].push_back({{"name", name}, {"seconds", secs}});
                total += secs;
            }
            timing["total_seconds"] = total;
            print_eval_table(results);
            if (!ev_json.empty()) write_report_json(results, ev_json);
            if (!ev_csv.empty()) write_report_csv(results, ev_csv);
            if (!ev_timing.empty()) write_text_file(ev_timing, timing.dump(2) + "\n");
        } else if (*inf) {
            Model m = load_checkpoint(inf_ckpt);
            GrayImage img = read_gray_pgm(inf_image);
            PipelineFlags flags{!no_prm, !no_pem, !no_sie, !no_iterate};
            auto res = segment(m, img, parse_box(inf_box), flags);
            std::printf("%s\n", trace_to_json(res.trace).dump(2).c_str());
            std::printf("selected mask: %zu\n", res.trace.selected_mask);
            if (!inf_gt.empty())
                std::printf("dice vs reference: %.4f\n",
                            dice(res.mask, read_mask_pgm(inf_gt)));
            if (!inf_mask.empty()) write_pgm(inf_mask, res.mask);
            if (!inf_trace.empty())
                write_text_file(inf_trace, trace_to_json(res.trace).dump(2) + "\n");
        } else if (*rpt) {
            std::vector<EvalResult> results;
            for (const auto& path : rpt_in)
                for (auto& r : read_report_json(path)) results.push_back(std::move(r));
            print_eval_table(results);
            if (!rpt_csv.empty()) write_report_csv(results, rpt_csv);
            if (!rpt_plot.empty()) write_degradation_plot(results, rpt_plot);
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
