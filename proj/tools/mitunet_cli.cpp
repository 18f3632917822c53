// Command-line surface for the floor-plan wall-segmentation pipeline:
// dataset synthesis, annotation refinement, training, ablation, evaluation,
// inference, and gradient checking.
#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "mitunet/config.hpp"
#include "mitunet/gradcheck.hpp"
#include "mitunet/morphology.hpp"
#include "mitunet/report.hpp"
#include "mitunet/synthgen.hpp"
#include "mitunet/train.hpp"

namespace fs = std::filesystem;
using namespace mitunet;

namespace {

// exit codes: 0 ok / 1 usage / 2 data / 3 numeric failure
constexpr int kExitOk = 0;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

long thread_budget() {
    const char* env = std::getenv("MITUNET_THREADS");
    if (!env) return 1;
    long n = std::atol(env);
    return n >= 1 ? n : 1;
}

PlanSpec plan_spec_from(const ConfigFile& cfg) {
    PlanSpec s;
    s.canvas_side = cfg.get_long("synth", "canvas_side", s.canvas_side);
    s.rooms_min = cfg.get_long("synth", "rooms_min", s.rooms_min);
    s.rooms_max = cfg.get_long("synth", "rooms_max", s.rooms_max);
    s.thickness_min = cfg.get_long("synth", "thickness_min", s.thickness_min);
    s.thickness_max = cfg.get_long("synth", "thickness_max", s.thickness_max);
    s.partition_fraction = cfg.get_double("synth", "partition_fraction", s.partition_fraction);
    s.hatch = hatch_style_from_string(
        cfg.get_string("synth", "hatch", hatch_style_name(s.hatch)));
    s.hatch_pitch = cfg.get_long("synth", "hatch_pitch", s.hatch_pitch);
    s.solid_fill_fraction = cfg.get_double("synth", "solid_fill_fraction", s.solid_fill_fraction);
    s.openings_min = cfg.get_long("synth", "openings_min", s.openings_min);
    s.openings_max = cfg.get_long("synth", "openings_max", s.openings_max);
    s.clutter_min = cfg.get_long("synth", "clutter_min", s.clutter_min);
    s.clutter_max = cfg.get_long("synth", "clutter_max", s.clutter_max);
    s.non_manhattan_prob = cfg.get_double("synth", "non_manhattan_prob", s.non_manhattan_prob);
    return s;
}

TrainConfig train_config_from(const ConfigFile& cfg) {
    TrainConfig t;
    t.epochs = cfg.get_long("train", "epochs", t.epochs);
    t.batch = cfg.get_long("train", "batch", t.batch);
    t.lr = cfg.get_double("train", "lr", t.lr);
    t.seed = uint64_t(cfg.get_long("train", "seed", long(t.seed)));
    t.split = cfg.get_double("train", "split", t.split);
    t.sched_factor = cfg.get_double("train", "sched_factor", t.sched_factor);
    t.sched_patience = cfg.get_long("train", "sched_patience", t.sched_patience);
    t.repeats = cfg.get_long("train", "repeats", t.repeats);
    t.input_side = cfg.get_long("train", "input_side", t.input_side);
    t.augment = cfg.get_bool("train", "augment", t.augment);
    t.preset = cfg.get_string("model", "preset", t.preset);
    t.loss.variant = loss_variant_from_string(
        cfg.get_string("loss", "variant", loss_variant_name(t.loss.variant)));
    t.loss.alpha = cfg.get_double("loss", "alpha", t.loss.alpha);
    t.loss.beta = cfg.get_double("loss", "beta", t.loss.beta);
    t.loss.gamma = cfg.get_double("loss", "gamma", t.loss.gamma);
    t.aug.p_affine = cfg.get_double("augment", "p_affine", t.aug.p_affine);
    t.aug.p_perspective = cfg.get_double("augment", "p_perspective", t.aug.p_perspective);
    t.aug.p_elastic = cfg.get_double("augment", "p_elastic", t.aug.p_elastic);
    t.aug.p_grid = cfg.get_double("augment", "p_grid", t.aug.p_grid);
    t.aug.p_brightness_contrast =
        cfg.get_double("augment", "p_brightness_contrast", t.aug.p_brightness_contrast);
    t.aug.p_clahe = cfg.get_double("augment", "p_clahe", t.aug.p_clahe);
    t.aug.p_noise = cfg.get_double("augment", "p_noise", t.aug.p_noise);
    return t;
}

ConfigFile load_config(const std::string& path) {
    if (path.empty()) return ConfigFile::parse_string("", "<empty>");
    return ConfigFile::parse_file(path);
}

void print_metrics(const MetricReport& m) {
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "recall %.2f%%  precision %.2f%%  accuracy %.2f%%  mIoU %.2f%%  "
                  "wall IoU %.2f%%\n",
                  m.recall, m.precision, m.accuracy, m.miou, m.iou_wall);
    std::cout << buf;
}

void save_train_outputs(const TrainResult& res, const std::string& out_dir) {
    fs::create_directories(out_dir);
    for (size_t r = 0; r < res.runs.size(); ++r) {
        std::string suffix = res.runs.size() > 1 ? "_run" + std::to_string(r) : "";
        write_history(out_dir + "/history" + suffix + ".txt", res.runs[r]);
    }
    res.runs.front().best_checkpoint.save(out_dir + "/best.ckpt");
    std::ofstream os(out_dir + "/metrics.txt");
    char buf[256];
    const MetricReport& m = res.mean_best;
    std::snprintf(buf, sizeof buf,
                  "recall=%.4f\nprecision=%.4f\naccuracy=%.4f\nmiou=%.4f\niou_wall=%.4f\n",
                  m.recall, m.precision, m.accuracy, m.miou, m.iou_wall);
    os << buf;
}

int run(int argc, char** argv) {
    CLI::App app{"Floor-plan wall segmentation pipeline"};
    app.require_subcommand(1);
    (void)thread_budget();  // library paths are sequential; budget reserved for future use

    std::string config_path, data_dir, out_dir = "out", checkpoint_path, image_path, base_path;
    long n = 10, epochs = -1, repeats = -1;
    uint64_t seed = 0;
    bool seed_set = false, deterministic = false;
    double alpha = -1, beta = -1, lr = -1, tol = 1e-3;
    std::string preset, bits = "64";

    auto add_common = [&](CLI::App* c) {
        c->add_option("--config", config_path, "configuration file ([section] key = value)");
        c->add_option("--seed", seed, "random seed")->each([&](const std::string&) {
            seed_set = true;
        });
        c->add_flag("--deterministic", deterministic,
                    "force sequential deterministic execution (always on in this build)");
    };

    auto* synth = app.add_subcommand("synth", "generate a synthetic plan dataset");
    add_common(synth);
    synth->add_option("--n", n, "number of samples");
    synth->add_option("--out", out_dir, "output directory")->required();

    auto* prep = app.add_subcommand("prep", "refine wall annotations from mask triples");
    add_common(prep);
    prep->add_option("--data", data_dir, "dataset directory with mask triples")->required();
    prep->add_option("--out", out_dir, "output directory")->required();

    auto* traincmd = app.add_subcommand("train", "train a model from scratch");
    auto* finetunecmd = app.add_subcommand("finetune", "fine-tune from a checkpoint");
    auto* ablatecmd = app.add_subcommand("ablate", "Tversky alpha/beta ablation sweep");
    for (CLI::App* c : {traincmd, finetunecmd, ablatecmd}) {
        add_common(c);
        c->add_option("--data", data_dir, "dataset directory")->required();
        c->add_option("--out", out_dir, "output directory");
        c->add_option("--epochs", epochs, "epoch count override");
        c->add_option("--repeats", repeats, "repeat count override");
        c->add_option("--alpha", alpha, "Tversky alpha override");
        c->add_option("--beta", beta, "Tversky beta override");
        c->add_option("--lr", lr, "learning rate override");
        c->add_option("--preset", preset, "model preset (nano|b0|...|b4)");
    }
    finetunecmd->add_option("--base", base_path, "base checkpoint")->required();

    auto* evalcmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    add_common(evalcmd);
    evalcmd->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
    evalcmd->add_option("--data", data_dir, "dataset directory")->required();

    auto* infercmd = app.add_subcommand("infer", "segment one image");
    add_common(infercmd);
    infercmd->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
    infercmd->add_option("--image", image_path, "input image (png/ppm)")->required();
    infercmd->add_option("--out", out_dir, "output directory");

    auto* gradcmd = app.add_subcommand("gradcheck", "finite-difference sweep over all ops");
    add_common(gradcmd);
    gradcmd->add_option("--tol", tol, "relative tolerance (default 1e-3)");
    gradcmd->add_option("--bits", bits, "precision: 32 or 64");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);  // --help prints and exits 0
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;  // usage errors collapse to a single exit code
    }

    ConfigFile cfg = load_config(config_path);

    if (synth->parsed()) {
        PlanSpec spec = plan_spec_from(cfg);
        cfg.reject_unconsumed();
        SynthDataset ds = make_dataset(spec, n, seed_set ? seed : 42);
        save_dataset(ds, out_dir);
        std::cout << "wrote " << ds.samples.size() << " samples to " << out_dir << "\n";
        return kExitOk;
    }

    if (prep->parsed()) {
        cfg.reject_unconsumed();
        SynthDataset ds = load_dataset(data_dir);
        fs::create_directories(out_dir);
        char name[64];
        for (size_t i = 0; i < ds.samples.size(); ++i) {
            const PlanSample& p = ds.samples[i];
            Mask refined = refine_annotation(p.wall, p.doors, p.windows);
            std::snprintf(name, sizeof name, "plan_%04zu_refined.png", i);
            write_mask(out_dir + "/" + std::string(name), refined);
        }
        std::cout << "refined " << ds.samples.size() << " annotations into " << out_dir << "\n";
        return kExitOk;
    }

    if (traincmd->parsed() || finetunecmd->parsed() || ablatecmd->parsed()) {
        TrainConfig tc = train_config_from(cfg);
        cfg.reject_unconsumed();
        if (seed_set) tc.seed = seed;
        if (epochs >= 0) tc.epochs = epochs;
        if (repeats >= 1) tc.repeats = repeats;
        if (alpha > 0) tc.loss.alpha = alpha;
        if (beta > 0) tc.loss.beta = beta;
        if (lr >= 0) tc.lr = lr;
        if (!preset.empty()) tc.preset = preset;
        if (finetunecmd->parsed() && lr < 0 && !cfg.has("train", "lr")) tc.lr = 1e-5;
        SynthDataset ds = load_dataset(data_dir);

        if (ablatecmd->parsed()) {
            AblationResult ab = ablate_tversky({0.5, 0.6, 0.7, 0.8, 0.9}, tc, ds);
            std::string table = format_report_table(ab.rows);
            std::cout << table;
            char buf[160];
            std::snprintf(buf, sizeof buf,
                          "precision rho %.3f (%ld inversions), recall rho %.3f (%ld "
                          "inversions): trend %s\n",
                          ab.precision_rho, ab.precision_inversions, ab.recall_rho,
                          ab.recall_inversions, ab.trend_ok ? "ok" : "VIOLATED");
            std::cout << buf;
            fs::create_directories(out_dir);
            std::ofstream os(out_dir + "/ablation.txt");
            os << table << buf;
            write_image(out_dir + "/ablation_trend.png", render_trend_plot(ab.rows));
            return ab.trend_ok ? kExitOk : kExitNumeric;
        }

        TrainResult res;
        if (finetunecmd->parsed()) {
            Checkpoint base = Checkpoint::load(base_path);
            res = finetune(base, tc, ds);
        } else {
            res = train(tc, ds);
        }
        save_train_outputs(res, out_dir);
        std::cout << tc.loss.display() << ", preset " << tc.preset << ", best epoch "
                  << res.runs.front().best_epoch << "\n";
        print_metrics(res.mean_best);
        return kExitOk;
    }

    if (evalcmd->parsed()) {
        cfg.reject_unconsumed();
        Checkpoint ck = Checkpoint::load(checkpoint_path);
        TrainConfig tc;
        tc.preset = ck.preset;
        SynthDataset ds = load_dataset(data_dir);
        MitUNet<float> model(ModelConfig::preset(ck.preset), 0);
        ck.apply(model);
        std::vector<long> all(ds.samples.size());
        for (size_t i = 0; i < all.size(); ++i) all[i] = long(i);
        print_metrics(evaluate(model, ds, all, tc));
        return kExitOk;
    }

    if (infercmd->parsed()) {
        cfg.reject_unconsumed();
        Checkpoint ck = Checkpoint::load(checkpoint_path);
        MitUNet<float> model(ModelConfig::preset(ck.preset), 0);
        ck.apply(model);
        Image input = read_image(image_path);
        long side = std::max({32L, (input.height + 31) / 32 * 32, (input.width + 31) / 32 * 32});
        Sample s{input, Mask::zeros(input.height, input.width)};
        Sample sized = resize_to_training(s, side);
        AugmentConfig aug;
        NoGradGuard ng;
        Tensor<float> x = reshape(normalize(sized.image, aug), {1, 3, side, side});
        Tensor<float> logits = model.forward(x, false);
        Mask pred = Mask::zeros(side, side);
        for (long i = 0; i < side * side; ++i)
            pred.bits[size_t(i)] =
                logits.data()[size_t(side * side + i)] > logits.data()[size_t(i)] ? 1 : 0;
        fs::create_directories(out_dir);
        write_mask(out_dir + "/mask.png", pred);
        write_image(out_dir + "/overlay.png", overlay_mask(sized.image, pred));
        double frac = double(pred.count()) / double(side * side);
        std::cout << "wall fraction " << frac << ", wrote " << out_dir << "/mask.png\n";
        return kExitOk;
    }

    if (gradcmd->parsed()) {
        cfg.reject_unconsumed();
        check(bits == "32" || bits == "64", "gradcheck: --bits must be 32 or 64");
        uint64_t s0 = seed_set ? seed : 41;
        bool all_pass = true;
        auto sweep = [&](auto tag) {
            using T = decltype(tag);
            for (const auto& op : registered_ops<T>()) {
                double worst = 0;
                bool pass = true;
                for (uint64_t ds = 0; ds < 3; ++ds) {
                    auto rep = grad_check(op, tol, s0 + ds);
                    worst = std::max(worst, rep.max_rel_err);
                    pass = pass && rep.pass;
                }
                char buf[128];
                std::snprintf(buf, sizeof buf, "%-22s max_rel_err %.3e  %s\n", op.name.c_str(),
                              worst, pass ? "pass" : "FAIL");
                std::cout << buf;
                all_pass = all_pass && pass;
            }
        };
        if (bits == "32")
            sweep(float{});
        else
            sweep(double{});
        std::cout << (all_pass ? "all ops pass" : "FAILURES present") << " at tol " << tol
                  << " (" << bits << "-bit)\n";
        return all_pass ? kExitOk : kExitNumeric;
    }

    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumeric;
    }
}
